use std::time::Instant;

use pmpcert::catalog::{list_examples, run_example};
use pmpcert::pmp::CertificateOptions;

#[test]
fn every_example_matches_its_expectation() {
    let mut failures = Vec::new();
    for e in list_examples() {
        let start = Instant::now();
        let grid = e.grid(None, None).unwrap();
        let runs = run_example(&e, &[], &grid, &CertificateOptions::new(e.mode, e.gamma)).unwrap();
        for r in &runs {
            println!("{} ({:.2?}): {}", r.certificate.problem, start.elapsed(), r.certificate.status);
            if !r.mismatches.is_empty() && std::env::var("GOLDEN_VERBOSE").is_ok() {
                println!("{}", r.certificate);
            }
            for m in &r.mismatches {
                failures.push(format!("{}: {m}", r.certificate.problem));
            }
        }
    }
    assert!(failures.is_empty(), "{failures:#?}");
}
