//! `pmpcert` command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pmpcert::catalog::{closed_form_run, find_example, gradient_diagnostic, list_examples, run_example, ExampleEntry, Expectation, ProblemRun};
use pmpcert::integrate::{write_series_csv, Grid, OdeOptions};
use pmpcert::needle::{build_family, verify_estimate, EstimateRecord};
use pmpcert::pmp::{
    adjoint_backward, adjoint_representation, verify_certificate, AdjointSolution, CertificateOptions, CertificateReport, CertificateStatus,
};
use pmpcert::problem::{audit_assumptions, parse_problem_with, AssumptionReport, AuditOptions, CandidateProcess, ControlProblem};
use pmpcert::report::{gamma_sensitivity, render_certificate, render_needle, render_run, render_sensitivity, Header};
use pmpcert::{Error, Mode, Tolerances};

/// Horizon and cell count for problem files without overrides.
const FILE_T_MAX: f64 = 50.0;
const FILE_CELLS: usize = 1000;

#[derive(Parser)]
#[command(name = "pmpcert", version, about = "Verify Pontryagin-type optimality conditions for infinite-horizon control problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit the standing assumptions along the candidate.
    Audit(RunArgs),
    /// Audit, compute adjoints and check every necessary condition.
    Verify(RunArgs),
    /// Compute the adjoint by both routes and export the series.
    Solve(RunArgs),
    /// Build a needle-variation family and check its approximation estimate.
    Needle(NeedleArgs),
    /// List the built-in examples, or run all of them with --check.
    Examples(ExamplesArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Built-in example (see `pmpcert examples`).
    #[arg(long, required_unless_present = "problem", conflicts_with = "problem")]
    example: Option<String>,
    /// Problem-definition file with a [candidate] section.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// strong or weak; defaults to the example's mode, strong for files.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// Tube constant; defaults to the example's value, required for files.
    #[arg(long)]
    gamma: Option<f64>,
    /// Tolerance override `name=value`, repeatable (e.g. adjoint_residual=1e-7).
    #[arg(long = "tol", value_parser = parse_assignment)]
    tol: Vec<(String, f64)>,
    /// Truncation horizon T.
    #[arg(long)]
    tmax: Option<f64>,
    /// Number of grid cells on [0, T].
    #[arg(long)]
    grid_cells: Option<usize>,
    /// Fix the cost multiplier and compute the adjoint instead of using a supplied one.
    #[arg(long)]
    lambda0: Option<f64>,
    /// Parameter override `name=value`, repeatable.
    #[arg(long = "param", value_parser = parse_assignment)]
    params: Vec<(String, f64)>,
    /// Shorthand for `--param rho=VALUE`.
    #[arg(long)]
    rho: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "pmpcert-out")]
    out: PathBuf,
}

#[derive(Args)]
struct NeedleArgs {
    /// Interval endpoints t0 t1.
    #[arg(long, num_args = 2, value_names = ["T0", "T1"], allow_hyphen_values = true)]
    interval: Vec<f64>,
    /// Number of families.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Number of subintervals.
    #[arg(short = 'N', long = "N", default_value_t = 64)]
    n: usize,
    /// Family parameter; defaults to 1/(2m).
    #[arg(long)]
    alpha: Option<f64>,
    /// Comparison parameter; defaults to alpha/2.
    #[arg(long)]
    alpha_prime: Option<f64>,
    /// Bound constant of the estimate.
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value = "pmpcert-out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExamplesArgs {
    /// Run every example with its defaults and compare with the stored expectations.
    #[arg(long)]
    check: bool,
    /// Output directory for the report of --check.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=value, got `{s}`"))?;
    let v: f64 = v.trim().parse().map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

fn apply_tolerances(base: Tolerances, overrides: &[(String, f64)]) -> Result<Tolerances, Error> {
    let mut t = base;
    for (k, v) in overrides {
        let slot = match k.as_str() {
            "feasibility" => &mut t.feasibility,
            "limit" => &mut t.limit,
            "adjoint_residual" => &mut t.adjoint_residual,
            "max_gap" => &mut t.max_gap,
            "weak_inequality" => &mut t.weak_inequality,
            "concavity" => &mut t.concavity,
            "route_agreement" => &mut t.route_agreement,
            "divergence_growth" => &mut t.divergence_growth,
            other => return Err(Error::Config(format!("unknown tolerance `{other}`"))),
        };
        if !(*v > 0.0) {
            return Err(Error::Config(format!("tolerance {k} must be positive")));
        }
        *slot = *v;
    }
    Ok(t)
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect()
}

/// A problem ready to run, with the expectation of its catalog entry if any.
struct Target {
    problem: ControlProblem,
    candidate: CandidateProcess,
    adjoint: Option<AdjointSolution>,
    expectation: Option<Expectation>,
}

struct Prepared {
    entry: Option<ExampleEntry>,
    overrides: Vec<(String, f64)>,
    mode: Mode,
    gamma: f64,
    tol: Tolerances,
    grid: Grid,
    targets: Vec<Target>,
}

fn prepare(a: &RunArgs) -> Result<Prepared, Error> {
    let tol = apply_tolerances(Tolerances::default(), &a.tol)?;
    let mut overrides = a.params.clone();
    if let Some(r) = a.rho {
        overrides.retain(|(k, _)| k != "rho");
        overrides.push(("rho".into(), r));
    }
    if let Some(g) = a.gamma {
        if !(g > 0.0) {
            return Err(Error::Config(format!("gamma must be positive, got {g}")));
        }
    }
    if let Some(name) = &a.example {
        let entry = find_example(name)?;
        let grid = entry.grid(a.tmax, a.grid_cells)?;
        let targets = entry
            .load(&overrides, &grid)?
            .into_iter()
            .map(|lp| Target {
                problem: lp.problem,
                candidate: lp.candidate,
                adjoint: lp.adjoint,
                expectation: Some(lp.expectation),
            })
            .collect();
        return Ok(Prepared {
            mode: a.mode.unwrap_or(entry.mode),
            gamma: a.gamma.unwrap_or(entry.gamma),
            entry: Some(entry),
            overrides,
            tol,
            grid,
            targets,
        });
    }
    let path = a.problem.as_ref().expect("clap enforces --example or --problem");
    let src = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let problem = parse_problem_with(&src, &overrides)?;
    let gamma = a
        .gamma
        .ok_or_else(|| Error::Config("--gamma is required for problem files".into()))?;
    let grid = Grid::standard(a.tmax.unwrap_or(FILE_T_MAX), a.grid_cells.unwrap_or(FILE_CELLS))?;
    let run = closed_form_run(&problem, &grid)?;
    Ok(Prepared {
        entry: None,
        overrides,
        mode: a.mode.unwrap_or(Mode::Strong),
        gamma,
        tol,
        grid,
        targets: vec![Target {
            problem,
            candidate: run.candidate,
            adjoint: run.adjoint,
            expectation: None,
        }],
    })
}

fn header(command: &str, a: &RunArgs, p: &Prepared) -> Header {
    let mut config = vec![
        (
            "target".to_string(),
            match (&p.entry, &a.problem) {
                (Some(e), _) => format!("example {}", e.name),
                (None, Some(f)) => format!("file {}", f.display()),
                (None, None) => "none".into(),
            },
        ),
        ("mode".into(), p.mode.to_string()),
        ("gamma".into(), format!("{}", p.gamma)),
        (
            "lambda0".into(),
            a.lambda0.map_or("supplied multiplier, else 1".into(), |l| l.to_string()),
        ),
    ];
    if let Some(e) = &p.entry {
        for (k, v) in e.params() {
            let v = p.overrides.iter().find(|o| o.0 == k).map_or(v, |o| o.1);
            config.push((format!("param {k}"), format!("{v}")));
        }
    } else {
        for (k, v) in &p.overrides {
            config.push((format!("param {k}"), format!("{v}")));
        }
    }
    Header {
        tool: format!("pmpcert {}", env!("CARGO_PKG_VERSION")),
        command: command.into(),
        config,
        grid: Some(p.grid.clone()),
        tol: p.tol,
    }
}

fn write_file(dir: &Path, name: &str, body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<(), Error> {
    let mut buf = Vec::new();
    body(&mut buf).map_err(|e| Error::Config(format!("cannot format {name}: {e}")))?;
    let path = dir.join(name);
    fs::write(&path, buf).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_state(dir: &Path, prob: &ControlProblem, cand: &CandidateProcess) -> Result<(), Error> {
    let rows = (0..cand.grid.len())
        .map(|k| {
            let mut r = cand.x_knot(k).to_vec();
            r.extend(cand.u_knot(k)?);
            Ok(r)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let names: Vec<String> = (1..=prob.n).map(|i| format!("x{i}")).chain((1..=prob.m).map(|i| format!("u{i}"))).collect();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    write_file(dir, &format!("state_{}.csv", slug(&prob.name)), |w| write_series_csv(w, cand.grid.knots(), &rows, &refs))
}

fn certificate_options(a: &RunArgs, p: &Prepared, t: &Target) -> CertificateOptions {
    let mut o = CertificateOptions::new(p.mode, p.gamma);
    o.tol = p.tol;
    o.lambda0 = a.lambda0;
    if a.lambda0.is_none() {
        o.adjoint = t.adjoint.clone();
    }
    o
}

/// `certificate.csv` with a leading problem column.
fn certificate_csv(reports: &[&CertificateReport]) -> std::io::Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "problem,name,premise,verdict,residual,tolerance")?;
    for r in reports {
        let mut buf = Vec::new();
        r.write_csv(&mut buf)?;
        for line in String::from_utf8_lossy(&buf).lines().skip(1) {
            writeln!(out, "{},{line}", r.problem)?;
        }
    }
    Ok(out)
}

fn cmd_verify(a: &RunArgs) -> Result<ExitCode, Error> {
    let p = prepare(a)?;
    create_dir(&a.out)?;
    let mut text = header("verify", a, &p).render();
    let mut reports = Vec::new();
    let mut matched = true;
    for t in &p.targets {
        let opts = certificate_options(a, &p, t);
        let certificate = verify_certificate(&t.problem, &t.candidate, &opts)?;
        let gradient = gradient_diagnostic(&t.problem, &t.candidate)?;
        let sens = gamma_sensitivity(&t.problem, &t.candidate, p.mode, p.gamma, &p.tol)?;
        text.push('\n');
        match &t.expectation {
            Some(e) => {
                let run = ProblemRun {
                    mismatches: e.mismatches(&certificate, &gradient),
                    certificate,
                    gradient,
                    expectation: e.clone(),
                };
                matched &= run.mismatches.is_empty();
                println!(
                    "{}: {} ({})",
                    run.certificate.problem,
                    run.certificate.status,
                    if run.mismatches.is_empty() { "matches expectation" } else { "does not match expectation" }
                );
                text.push_str(&render_run(&run, Some(&sens)));
                reports.push(run.certificate);
            }
            None => {
                println!("{}: {}", certificate.problem, certificate.status);
                text.push_str(&format!("== {} ==\n", certificate.problem));
                text.push_str(&render_certificate(&certificate, &gradient, Some(&sens)));
                reports.push(certificate);
            }
        }
        write_state(&a.out, &t.problem, &t.candidate)?;
    }
    for r in &reports {
        write_file(&a.out, &format!("adjoint_{}.csv", slug(&r.problem)), |w| r.write_adjoint_csv(w))?;
    }
    let refs: Vec<&CertificateReport> = reports.iter().collect();
    write_file(&a.out, "certificate.csv", |w| {
        w.extend(certificate_csv(&refs)?);
        Ok(())
    })?;
    write_file(&a.out, "report.txt", |w| w.write_all(text.as_bytes()))?;
    Ok(if matched { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Differences between an audit and the audit-related part of an expectation.
fn audit_mismatches(audit: &AssumptionReport, e: &Expectation) -> Vec<String> {
    let mut out = Vec::new();
    let expect_pass = e.status != CertificateStatus::AssumptionsViolated;
    if audit.passed() != expect_pass {
        out.push(format!(
            "audit: expected {}, got {}",
            if expect_pass { "pass" } else { "fail" },
            if audit.passed() { "pass" } else { "fail" }
        ));
    }
    for &(name, v) in &e.audit {
        match audit.verdict(name) {
            Some(g) if g == v => {}
            Some(g) => out.push(format!("audit {name}: expected {v}, got {g}")),
            None => out.push(format!("audit {name}: expected {v}, not reported")),
        }
    }
    out
}

fn cmd_audit(a: &RunArgs) -> Result<ExitCode, Error> {
    let p = prepare(a)?;
    create_dir(&a.out)?;
    let mut text = header("audit", a, &p).render();
    let mut csv = String::from("problem,name,verdict,note\n");
    let mut matched = true;
    for t in &p.targets {
        let mut opts = AuditOptions::new(p.mode, p.gamma);
        opts.tol = p.tol;
        let audit = audit_assumptions(&t.problem, &t.candidate, &opts)?;
        let sens = gamma_sensitivity(&t.problem, &t.candidate, p.mode, p.gamma, &p.tol)?;
        let name = &t.problem.name;
        text.push_str(&format!("\n== {name} ==\n"));
        if let Some(e) = &t.expectation {
            let mm = audit_mismatches(&audit, e);
            matched &= mm.is_empty();
            text.push_str(&format!("match     = {}\n", if mm.is_empty() { "yes" } else { "no" }));
            for m in &mm {
                text.push_str(&format!("mismatch  = {m}\n"));
            }
            text.push('\n');
        }
        text.push_str("[audit]\n");
        text.push_str(&format!("c0        = {:e}\n", audit.c0));
        text.push_str(&format!("K         = {:e}\n", audit.k));
        if let Some(i) = &audit.majorant_integral {
            text.push_str(&format!("majorant  = {} partial={:e}\n", i.convergence, i.partial));
        }
        for e in &audit.entries {
            text.push_str(&format!("{e}\n"));
            csv.push_str(&format!("{name},{},{},\"{}\"\n", e.name, e.verdict, e.note.replace('"', "'")));
        }
        text.push('\n');
        text.push_str(&render_sensitivity(&sens, p.mode));
        println!("{name}: audit {}", if audit.passed() { "pass" } else { "fail" });
        let (ts, ls): (Vec<f64>, Vec<Vec<f64>>) = audit.majorant.iter().map(|&(t, l)| (t, vec![l])).unzip();
        write_file(&a.out, &format!("majorant_{}.csv", slug(name)), |w| write_series_csv(w, &ts, &ls, &["L"]))?;
    }
    write_file(&a.out, "audit.csv", |w| w.write_all(csv.as_bytes()))?;
    write_file(&a.out, "report.txt", |w| w.write_all(text.as_bytes()))?;
    Ok(if matched { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

/// Relative sup distance of two adjoints over knots up to `t_end`.
fn deviation(a: &AdjointSolution, b: &AdjointSolution, t_end: f64) -> f64 {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (k, &t) in a.grid.knots().iter().enumerate() {
        if t > t_end {
            break;
        }
        let d = a.p[k].iter().zip(&b.p[k]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff = diff.max(d);
        scale = scale.max(a.p[k].iter().map(|x| x * x).sum::<f64>().sqrt());
    }
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

fn cmd_solve(a: &RunArgs) -> Result<ExitCode, Error> {
    let p = prepare(a)?;
    create_dir(&a.out)?;
    let mut text = header("solve", a, &p).render();
    let ode = OdeOptions::default();
    let mut any = true;
    for t in &p.targets {
        let name = &t.problem.name;
        let lambda0 = a.lambda0.unwrap_or(1.0);
        text.push_str(&format!("\n== {name} ==\n"));
        let backward = adjoint_backward(&t.problem, &t.candidate, lambda0, p.grid.t_max(), &ode);
        let representation = if lambda0 == 1.0 {
            Some(adjoint_representation(&t.problem, &t.candidate, &ode))
        } else {
            None
        };
        let half = 0.5 * p.grid.t_max();
        let mut solved = Vec::new();
        for (label, r) in [("backward", Some(backward)), ("representation", representation)] {
            match r {
                None => text.push_str(&format!("{label:<15} skipped (lambda0 != 1)\n")),
                Some(Err(e)) => text.push_str(&format!("{label:<15} failed: {e}\n")),
                Some(Ok(s)) => {
                    text.push_str(&format!("{label:<15} computed"));
                    if let Some(e) = s.terminal_error {
                        text.push_str(&format!(" terminal_error={e:.3e}"));
                    }
                    if let Some((tc, c)) = s.max_cond {
                        text.push_str(&format!(" max_cond={c:.3e} at t={tc:.3e}"));
                    }
                    if let Some(sup) = &t.adjoint {
                        text.push_str(&format!(" deviation_from_supplied={:.3e}", deviation(sup, &s, half)));
                    }
                    text.push('\n');
                    let names: Vec<String> = (1..=t.problem.n).map(|i| format!("p{i}")).collect();
                    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
                    write_file(&a.out, &format!("adjoint_{label}_{}.csv", slug(name)), |w| {
                        write_series_csv(w, s.grid.knots(), &s.p, &refs)
                    })?;
                    solved.push(s);
                }
            }
        }
        if let [b, r] = solved.as_slice() {
            text.push_str(&format!("route deviation on [0, T/2] = {:.3e}\n", deviation(r, b, half)));
        }
        println!("{name}: {} adjoint route(s) computed", solved.len());
        any &= !solved.is_empty();
        write_state(&a.out, &t.problem, &t.candidate)?;
    }
    write_file(&a.out, "report.txt", |w| w.write_all(text.as_bytes()))?;
    Ok(if any { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_needle(a: &NeedleArgs) -> Result<ExitCode, Error> {
    let (t0, t1) = match a.interval.as_slice() {
        [t0, t1] => (*t0, *t1),
        [] => (0.0, 1.0),
        _ => return Err(Error::Config("--interval takes two values".into())),
    };
    let family = build_family(t0, t1, a.m, a.n)?;
    let alpha = a.alpha.unwrap_or(0.5 / a.m as f64);
    let alpha_prime = a.alpha_prime.unwrap_or(0.5 * alpha);
    let ys: [(&str, fn(f64) -> f64); 3] = [("1", |_| 1.0), ("t", |t| t), ("sin", f64::sin)];
    let mut records: Vec<(usize, String, EstimateRecord)> = Vec::new();
    for i in 1..=a.m {
        for (label, y) in ys {
            let r = verify_estimate(&family, i, |t| Ok(vec![y(t)]), alpha, alpha_prime, a.delta)?;
            records.push((i, label.to_string(), r));
        }
    }
    create_dir(&a.out)?;
    let h = Header {
        tool: format!("pmpcert {}", env!("CARGO_PKG_VERSION")),
        command: "needle".into(),
        config: vec![
            ("interval".into(), format!("[{t0}, {t1}]")),
            ("m".into(), a.m.to_string()),
            ("N".into(), a.n.to_string()),
            ("alpha".into(), alpha.to_string()),
            ("alpha'".into(), alpha_prime.to_string()),
            ("delta".into(), a.delta.to_string()),
        ],
        grid: None,
        tol: Tolerances::default(),
    };
    let mut text = h.render();
    text.push('\n');
    text.push_str(&render_needle(&family, alpha, alpha_prime, &records));
    write_file(&a.out, "family.csv", |w| family.write_csv(w, alpha))?;
    write_file(&a.out, "estimates.csv", |w| {
        writeln!(w, "i,y,lhs,witness,delta_emp,delta,pass")?;
        for (i, y, r) in &records {
            writeln!(w, "{i},{y},{:.16e},{:.16e},{:.16e},{},{}", r.lhs, r.witness, r.delta_emp, r.delta, r.pass)?;
        }
        Ok(())
    })?;
    write_file(&a.out, "report.txt", |w| w.write_all(text.as_bytes()))?;
    let pass = records.iter().all(|r| r.2.pass);
    println!("needle: {} estimate(s), {}", records.len(), if pass { "all pass" } else { "some fail" });
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_examples(a: &ExamplesArgs) -> Result<ExitCode, Error> {
    let mut text = String::new();
    for e in list_examples() {
        text.push_str(&format!("{}\n  {}\n", e.name, e.summary));
        text.push_str(&format!("  mode={} gamma={} tmax={} cells={}\n", e.mode, e.gamma, e.t_max, e.cells));
        let params: Vec<String> = e.params().iter().map(|(k, v)| format!("{k}={v}")).collect();
        if !params.is_empty() {
            text.push_str(&format!("  params: {}\n", params.join(" ")));
        }
        if let Some(c) = e.constraint {
            text.push_str(&format!("  requires: {c}\n"));
        }
    }
    if !a.check {
        print!("{text}");
        if let Some(dir) = &a.out {
            create_dir(dir)?;
            write_file(dir, "report.txt", |w| w.write_all(text.as_bytes()))?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let mut report = format!("tool       = pmpcert {}\ncommand    = examples --check\n", env!("CARGO_PKG_VERSION"));
    let mut ok = true;
    for e in list_examples() {
        let grid = e.grid(None, None)?;
        let opts = CertificateOptions::new(e.mode, e.gamma);
        for run in run_example(&e, &[], &grid, &opts)? {
            let verdict = if run.mismatches.is_empty() { "match" } else { "MISMATCH" };
            ok &= run.mismatches.is_empty();
            println!("{:<24} {:<22} {verdict}", run.certificate.problem, run.certificate.status.to_string());
            report.push('\n');
            report.push_str(&render_run(&run, None));
        }
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_file(dir, "report.txt", |w| w.write_all(report.as_bytes()))?;
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Needle(a) => cmd_needle(a),
        Command::Examples(a) => cmd_examples(a),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}
