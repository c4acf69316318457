use pmpcert::catalog::{find_example, run_example};
use pmpcert::pmp::CertificateOptions;
use pmpcert::report::render_run;

fn render(name: &str) -> (String, Vec<u8>) {
    let e = find_example(name).unwrap();
    let g = e.grid(None, None).unwrap();
    let runs = run_example(&e, &[], &g, &CertificateOptions::new(e.mode, e.gamma)).unwrap();
    let mut text = String::new();
    let mut csv = Vec::new();
    for r in &runs {
        text.push_str(&render_run(r, None));
        r.certificate.write_csv(&mut csv).unwrap();
        r.certificate.write_adjoint_csv(&mut csv).unwrap();
    }
    (text, csv)
}

#[test]
fn repeated_runs_are_identical() {
    for name in ["weibull-nash", "log-decay", "halkin-no-discount"] {
        assert_eq!(render(name), render(name), "{name}");
    }
}
