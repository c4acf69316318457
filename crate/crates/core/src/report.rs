//! Plain-text run reports.
//!
//! Everything written here is a pure function of the inputs, so two runs with
//! the same configuration produce byte-identical reports.

use std::fmt::Write as _;

use crate::catalog::ProblemRun;
use crate::config::{Mode, Tolerances, Verdict};
use crate::error::Result;
use crate::integrate::grid::Grid;
use crate::needle::{EstimateRecord, NeedleFamily};
use crate::pmp::CertificateReport;
use crate::problem::{audit_assumptions, AuditOptions, GradientDiagnostic};
use crate::problem::{CandidateProcess, ControlProblem};

/// Header lines shared by every report.
#[derive(Debug, Clone)]
pub struct Header {
    pub tool: String,
    pub command: String,
    /// `key = value` pairs echoed verbatim, defaults included.
    pub config: Vec<(String, String)>,
    pub grid: Option<Grid>,
    pub tol: Tolerances,
}

impl Header {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "tool       = {}", self.tool);
        let _ = writeln!(s, "command    = {}", self.command);
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k:<10} = {v}");
        }
        if let Some(g) = &self.grid {
            let _ = writeln!(s, "grid       = {}", grid_summary(g));
        }
        let _ = writeln!(s, "tolerances = {}", self.tol);
        s
    }
}

/// `knots, horizon and smallest/largest cell` of a grid.
pub fn grid_summary(g: &Grid) -> String {
    let k = g.knots();
    let (lo, hi) = k
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold((f64::INFINITY, 0.0f64), |(a, b), h| (a.min(h), b.max(h)));
    format!("knots={} t_max={} h_min={lo:.3e} h_max={hi:.3e}", g.len(), g.t_max())
}

/// Audit outcome at one value of `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityRow {
    pub gamma: f64,
    /// Verdict of the majorant condition (`A2` or `B2`).
    pub majorant: Verdict,
    /// Every audit entry is acceptable.
    pub audit_passed: bool,
}

/// Re-runs the audit at `γ/2`, `γ` and `2γ`.
pub fn gamma_sensitivity(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    mode: Mode,
    gamma: f64,
    tol: &Tolerances,
) -> Result<Vec<SensitivityRow>> {
    [0.5 * gamma, gamma, 2.0 * gamma]
        .into_iter()
        .map(|g| {
            let mut opts = AuditOptions::new(mode, g);
            opts.tol = *tol;
            let a = audit_assumptions(prob, cand, &opts)?;
            Ok(SensitivityRow {
                gamma: g,
                majorant: a.verdict(a.majorant_name()).unwrap_or(Verdict::Undetermined),
                audit_passed: a.passed(),
            })
        })
        .collect()
}

pub fn render_sensitivity(rows: &[SensitivityRow], mode: Mode) -> String {
    let name = match mode {
        Mode::Strong => "A2",
        Mode::Weak => "B2",
    };
    let mut s = String::from("[gamma sensitivity]\n");
    let _ = writeln!(s, "{:<12} {:<18} audit", "gamma", name);
    for r in rows {
        let _ = writeln!(
            s,
            "{:<12} {:<18} {}",
            format!("{:e}", r.gamma),
            r.majorant.to_string(),
            if r.audit_passed { "pass" } else { "fail" }
        );
    }
    s
}

pub fn render_gradient(g: &GradientDiagnostic) -> String {
    let mut s = String::from("[objective gradient]\n");
    let i = &g.integral;
    let _ = writeln!(s, "direction   = xi = 1");
    let _ = writeln!(s, "convergence = {}", g.convergence);
    let _ = writeln!(s, "partial     = {:e}", i.partial);
    let _ = writeln!(s, "growth      = {:e}", i.growth);
    if let Some(w) = i.witness {
        let _ = writeln!(s, "witness     = t={w:e}");
    }
    for (l, q) in &g.quotients {
        let _ = writeln!(s, "quotient    = lambda={l:e} value={q:e}");
    }
    if let Some(gap) = g.quotient_gap {
        let _ = writeln!(s, "quotient gap = {gap:e}");
    }
    s
}

/// Full block of one problem run: expectation match, sensitivity, gradient and certificate.
pub fn render_run(run: &ProblemRun, sensitivity: Option<&[SensitivityRow]>) -> String {
    let c = &run.certificate;
    let mut s = String::new();
    let _ = writeln!(s, "== {} ==", c.problem);
    let _ = writeln!(s, "[expectation]");
    let _ = writeln!(s, "expected  = {}", run.expectation);
    let _ = writeln!(s, "observed  = status={}", c.status);
    let _ = writeln!(s, "match     = {}", if run.mismatches.is_empty() { "yes" } else { "no" });
    for m in &run.mismatches {
        let _ = writeln!(s, "mismatch  = {m}");
    }
    s.push('\n');
    s.push_str(&render_certificate(c, &run.gradient, sensitivity));
    s
}

/// Sensitivity, gradient and certificate blocks without an expectation.
pub fn render_certificate(c: &CertificateReport, gradient: &GradientDiagnostic, sensitivity: Option<&[SensitivityRow]>) -> String {
    let mut s = String::new();
    if let Some(rows) = sensitivity {
        s.push_str(&render_sensitivity(rows, c.mode));
        s.push('\n');
    }
    s.push_str(&render_gradient(gradient));
    s.push('\n');
    let _ = write!(s, "{c}");
    s
}

/// Family layout and estimate records of a needle run.
pub fn render_needle(family: &NeedleFamily, alpha: f64, alpha_prime: f64, records: &[(usize, String, EstimateRecord)]) -> String {
    let mut s = String::from("[needle family]\n");
    let _ = writeln!(s, "interval  = [{}, {}]", family.t0, family.t1);
    let _ = writeln!(s, "m         = {}", family.m);
    let _ = writeln!(s, "N         = {}", family.subintervals);
    let _ = writeln!(s, "h         = {:e}", family.h());
    let _ = writeln!(s, "alpha     = {alpha}");
    let _ = writeln!(s, "alpha'    = {alpha_prime}");
    for i in 1..=family.m {
        if let Ok(m) = family.exact_measure(i, alpha) {
            let _ = writeln!(s, "|M_{i}(alpha)| = {m}");
        }
    }
    s.push_str("\n[estimates]\n");
    let _ = writeln!(s, "{:<4} {:<8} {:<14} {:<14} {:<14} {:<10} verdict", "i", "y", "lhs", "delta_emp", "witness_t", "delta");
    for (i, y, r) in records {
        let _ = writeln!(
            s,
            "{:<4} {:<8} {:<14} {:<14} {:<14} {:<10} {}",
            i,
            y,
            format!("{:.6e}", r.lhs),
            format!("{:.6e}", r.delta_emp),
            format!("{:.6e}", r.witness),
            r.delta,
            if r.pass { "pass" } else { "fail" }
        );
    }
    s
}
