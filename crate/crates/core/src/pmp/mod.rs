//! The Pontryagin function, adjoint computation and the necessary conditions
//! of the maximum principle for strong and weak local minima.
//!
//! Pointwise conditions are evaluated on the trusted part `[0, T/2]` of the
//! grid, where a terminal condition imposed at `T` no longer matters; limits
//! use the three-decade decay test with that trusted horizon.

mod adjoint;
mod conditions;
mod maximum;

use std::fmt;
use std::io::{self, Write};

pub use adjoint::{adjoint_backward, adjoint_representation, AdjointSolution, Atom, Route, SuppliedAdjoint};
pub use conditions::{
    check_adjoint_residual, check_integral_adjoint, check_michel, check_normality, check_transversality, default_battery,
    NormalityFit, TestFunction, TransversalityReport,
};
pub use maximum::{check_maximum_condition, check_weak_inequality, sup_h, MaxOptions, SupResult};

use crate::config::{Mode, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::integrate::path::{dot, write_series_csv};
use crate::integrate::OdeOptions;
use crate::problem::{audit_assumptions, AssumptionReport, AuditOptions, CandidateProcess, ControlProblem};
use crate::sufficiency::{check_arrow, ConcavityReport};

/// Fraction of the horizon on which computed adjoints are trusted.
pub const TRUSTED_FRACTION: f64 = 0.5;

/// `H(t,x,u,p,λ₀) = -λ₀ ω(t) f(t,x,u) + ⟨p, φ(t,x,u)⟩`.
pub fn pontryagin_h(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64], p: &[f64], lambda0: f64) -> Result<f64> {
    let phi = prob.phi_at(t, x, u)?;
    let running = if lambda0 == 0.0 {
        0.0
    } else {
        lambda0 * weighted(prob.omega.eval(t), prob.f_at(t, x, u)?)
    };
    Ok(-running + dot(p, &phi))
}

/// `H_u = -λ₀ ω f_u + φ_uᵀ p`.
pub fn pontryagin_h_u(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64], p: &[f64], lambda0: f64) -> Result<Vec<f64>> {
    let pu = prob.phi_u_at(t, x, u)?;
    let fu = if lambda0 == 0.0 {
        vec![0.0; prob.m]
    } else {
        prob.f_u_at(t, x, u)?
    };
    let w = prob.omega.eval(t);
    Ok((0..prob.m)
        .map(|j| {
            let adj: f64 = (0..prob.n).map(|i| pu[i * prob.m + j] * p[i]).sum();
            adj - lambda0 * weighted(w, fu[j])
        })
        .collect())
}

/// `H_x = -λ₀ ω f_x + φ_xᵀ p`.
pub fn pontryagin_h_x(prob: &ControlProblem, t: f64, x: &[f64], u: &[f64], p: &[f64], lambda0: f64) -> Result<Vec<f64>> {
    let a = prob.phi_x_at(t, x, u)?;
    let fx = if lambda0 == 0.0 {
        vec![0.0; prob.n]
    } else {
        prob.f_x_at(t, x, u)?
    };
    let w = prob.omega.eval(t);
    let n = prob.n;
    Ok((0..n)
        .map(|j| {
            let adj: f64 = (0..n).map(|i| a[i * n + j] * p[i]).sum();
            adj - lambda0 * weighted(w, fx[j])
        })
        .collect())
}

/// `w·v`, with `0` whenever `v = 0` (the weight may be huge near a pole).
pub(crate) fn weighted(w: f64, v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        w * v
    }
}

/// Outcome of one necessary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionRecord {
    pub name: &'static str,
    /// Verdict on the condition's premise; `Pass` when it has none.
    pub premise: Verdict,
    pub verdict: Verdict,
    pub residual: f64,
    pub tolerance: f64,
    /// `(t, value)` pairs where the condition is worst or violated.
    pub witnesses: Vec<(f64, f64)>,
    pub note: String,
}

impl ConditionRecord {
    pub(crate) fn new(name: &'static str, verdict: Verdict, residual: f64, tolerance: f64) -> Self {
        ConditionRecord {
            name,
            premise: Verdict::Pass,
            verdict,
            residual,
            tolerance,
            witnesses: Vec::new(),
            note: String::new(),
        }
    }

    pub(crate) fn not_applicable(name: &'static str, premise: Verdict, note: impl Into<String>) -> Self {
        ConditionRecord {
            name,
            premise,
            verdict: Verdict::NotApplicable,
            residual: f64::NAN,
            tolerance: f64::NAN,
            witnesses: Vec::new(),
            note: note.into(),
        }
    }

    pub(crate) fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub(crate) fn with_witnesses(mut self, w: Vec<(f64, f64)>) -> Self {
        self.witnesses = w;
        self
    }
}

impl fmt::Display for ConditionRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[{}]", self.name)?;
        writeln!(f, "premise   = {}", self.premise)?;
        writeln!(f, "verdict   = {}", self.verdict)?;
        writeln!(f, "residual  = {:e}", self.residual)?;
        writeln!(f, "tolerance = {:e}", self.tolerance)?;
        for (t, v) in &self.witnesses {
            writeln!(f, "witness   = t={t:.6e} value={v:.6e}")?;
        }
        if !self.note.is_empty() {
            writeln!(f, "note      = {}", self.note)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertificateStatus {
    /// The assumptions of the theorem fail, so its conclusions need not hold.
    AssumptionsViolated,
    Certified,
    Refuted,
}

impl fmt::Display for CertificateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertificateStatus::AssumptionsViolated => "assumptions-violated",
            CertificateStatus::Certified => "certified",
            CertificateStatus::Refuted => "refuted",
        })
    }
}

/// Settings for [`verify_certificate`].
#[derive(Debug, Clone)]
pub struct CertificateOptions {
    pub mode: Mode,
    pub gamma: f64,
    /// `None` runs the normal case `λ₀ = 1`.
    pub lambda0: Option<f64>,
    pub tol: Tolerances,
    pub ode: OdeOptions,
    /// Radius of the initial-state ball for condition (S); `None` picks `10⁻² max(1, ‖x₀‖)`.
    pub normality_delta: Option<f64>,
    /// Multiplier to verify instead of a computed adjoint.
    pub adjoint: Option<AdjointSolution>,
    pub sufficiency: bool,
}

impl CertificateOptions {
    pub fn new(mode: Mode, gamma: f64) -> Self {
        CertificateOptions {
            mode,
            gamma,
            lambda0: None,
            tol: Tolerances::default(),
            ode: OdeOptions::default(),
            normality_delta: None,
            adjoint: None,
            sufficiency: true,
        }
    }
}

/// Summary of one adjoint route.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteSummary {
    pub route: Route,
    /// Error message when the route could not be computed.
    pub failure: Option<String>,
    /// Relative sup deviation from the adjoint used for the checks on `[0, T/2]`.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CertificateReport {
    pub problem: String,
    pub mode: Mode,
    pub tol: Tolerances,
    pub audit: AssumptionReport,
    /// The adjoint the conditions were checked with.
    pub adjoint: AdjointSolution,
    pub routes: Vec<RouteSummary>,
    pub normality: ConditionRecord,
    pub conditions: Vec<ConditionRecord>,
    pub transversality: Option<TransversalityReport>,
    pub sufficiency: Option<ConcavityReport>,
    /// `λ₀ = 0` together with `p ≡ 0`.
    pub trivial_multiplier: bool,
    pub status: CertificateStatus,
}

impl CertificateReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionRecord> {
        self.conditions.iter().find(|c| c.name == name)
    }

    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.condition(name).map(|c| c.verdict)
    }

    /// Every applicable necessary condition passes.
    pub fn conditions_pass(&self) -> bool {
        !self.trivial_multiplier && self.conditions.iter().all(|c| c.verdict.is_acceptable())
    }

    /// CSV of `t, p_1..p_n` for the adjoint used.
    pub fn write_adjoint_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let names: Vec<String> = (1..=self.adjoint.p.first().map_or(0, Vec::len)).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        write_series_csv(out, self.adjoint.grid.knots(), &self.adjoint.p, &refs)
    }

    /// One row per condition: `name,premise,verdict,residual,tolerance`.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> io::Result<()> {
        writeln!(out, "name,premise,verdict,residual,tolerance")?;
        writeln!(
            out,
            "{},{},{},{:e},{:e}",
            self.normality.name,
            self.normality.premise,
            self.normality.verdict,
            self.normality.residual,
            self.normality.tolerance
        )?;
        for c in &self.conditions {
            writeln!(out, "{},{},{},{:e},{:e}", c.name, c.premise, c.verdict, c.residual, c.tolerance)?;
        }
        Ok(())
    }
}

impl fmt::Display for CertificateReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem   = {}", self.problem)?;
        writeln!(f, "mode      = {}", self.mode)?;
        writeln!(f, "status    = {}", self.status)?;
        writeln!(f, "lambda0   = {}", self.adjoint.lambda0)?;
        writeln!(f, "adjoint   = {}", self.adjoint.route)?;
        if self.trivial_multiplier {
            writeln!(f, "warning   = trivial multiplier (lambda0 = 0, p = 0)")?;
        }
        for r in &self.routes {
            match (&r.failure, r.deviation) {
                (Some(e), _) => writeln!(f, "route     = {} failed: {e}", r.route)?,
                (None, Some(d)) => writeln!(f, "route     = {} deviation {d:.3e}", r.route)?,
                (None, None) => writeln!(f, "route     = {}", r.route)?,
            }
        }
        writeln!(f)?;
        writeln!(f, "[audit]")?;
        for e in &self.audit.entries {
            writeln!(f, "{e}")?;
        }
        writeln!(f)?;
        write!(f, "{}", self.normality)?;
        for c in &self.conditions {
            writeln!(f)?;
            write!(f, "{c}")?;
        }
        if let Some(s) = &self.sufficiency {
            writeln!(f)?;
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

/// Relative sup deviation `max ‖p - q‖ / max(‖p‖, tiny)` over knots `≤ t_end`.
fn route_deviation(a: &AdjointSolution, b: &AdjointSolution, t_end: f64) -> Result<f64> {
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (k, &t) in a.grid.knots().iter().enumerate() {
        if t > t_end {
            break;
        }
        let pa = &a.p[k];
        let pb = b.at(t)?;
        let d = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        diff = diff.max(d);
        scale = scale.max(crate::integrate::norm(pa));
    }
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Runs the assumption audit, both adjoint routes and every necessary
/// condition of the selected mode along `cand`.
pub fn verify_certificate(prob: &ControlProblem, cand: &CandidateProcess, opts: &CertificateOptions) -> Result<CertificateReport> {
    let tol = opts.tol;
    let mut audit_opts = AuditOptions::new(opts.mode, opts.gamma);
    audit_opts.tol = tol;
    let audit = audit_assumptions(prob, cand, &audit_opts)?;

    let delta = opts
        .normality_delta
        .unwrap_or_else(|| 1e-2 * crate::integrate::norm(&prob.x0).max(1.0));
    let (normality, _) = check_normality(prob, cand, delta, &opts.ode)?;
    let lambda0 = opts.lambda0.unwrap_or(1.0);
    let t_max = cand.grid.t_max();
    let trusted = TRUSTED_FRACTION * t_max;

    let backward = adjoint_backward(prob, cand, lambda0, t_max, &opts.ode);
    let representation = if lambda0 == 1.0 && prob.l() == 0 {
        Some(adjoint_representation(prob, cand, &opts.ode))
    } else {
        None
    };

    let supplied = opts.adjoint.clone();
    let primary = match (&supplied, &representation, &backward) {
        (Some(a), _, _) => a.clone(),
        (None, Some(Ok(r)), _) => r.clone(),
        (None, _, Ok(b)) => b.clone(),
        (None, _, Err(e)) => return Err(e.clone()),
    };

    let mut routes = Vec::new();
    let mut summary = |route: Route, r: &Result<AdjointSolution>| -> Result<()> {
        routes.push(match r {
            Ok(a) => RouteSummary {
                route,
                failure: None,
                deviation: Some(route_deviation(a, &primary, trusted)?),
            },
            Err(e) => RouteSummary {
                route,
                failure: Some(e.to_string()),
                deviation: None,
            },
        });
        Ok(())
    };
    summary(Route::BackwardOde, &backward)?;
    if let Some(r) = &representation {
        summary(Route::Representation, r)?;
    }

    let mut conditions = Vec::new();
    let unconstrained = prob.l() == 0;
    conditions.push(if unconstrained {
        check_adjoint_residual(prob, cand, &primary, &tol)?
    } else {
        ConditionRecord::not_applicable("adjoint_residual", Verdict::Fail, "state constraints present; the integral form applies")
    });
    conditions.push(check_integral_adjoint(prob, cand, &primary, &tol)?);

    let max_opts = MaxOptions::default();
    conditions.push(match opts.mode {
        Mode::Strong => match check_maximum_condition(prob, cand, &primary, &max_opts, &tol) {
            Ok(r) => r,
            Err(e @ Error::UnboundedAbove { t, .. }) => {
                ConditionRecord::new("maximum_condition", Verdict::Fail, f64::INFINITY, tol.max_gap)
                    .with_witnesses(vec![(t, f64::INFINITY)])
                    .with_note(e.to_string())
            }
            Err(e) => return Err(e),
        },
        Mode::Weak => ConditionRecord::not_applicable("maximum_condition", Verdict::NotApplicable, "weak mode: the variational inequality replaces the maximum condition"),
    });
    conditions.push(match opts.mode {
        Mode::Weak => check_weak_inequality(prob, cand, &primary, &tol)?,
        Mode::Strong => ConditionRecord::not_applicable("weak_inequality", Verdict::NotApplicable, "strong mode: implied by the maximum condition"),
    });

    let battery = default_battery(prob, cand)?;
    let trans = check_transversality(prob, &primary, opts.mode, &battery, &tol)?;
    conditions.push(trans.pairing.clone());
    conditions.push(trans.decay.clone());
    conditions.push(check_michel(prob, cand, &primary, opts.mode, &tol)?);

    let normality_representation = if normality.verdict == Verdict::Pass {
        match &representation {
            Some(Ok(r)) => {
                let d = route_deviation(r, &primary, trusted)?;
                let mut rec = ConditionRecord::new(
                    "normality_representation",
                    Verdict::from_bool(d <= tol.route_agreement && primary.lambda0 == 1.0),
                    d,
                    tol.route_agreement,
                );
                if primary.lambda0 != 1.0 {
                    rec.note = format!("(S) holds but the multiplier has lambda0 = {}", primary.lambda0);
                }
                rec
            }
            Some(Err(e)) => ConditionRecord::new("normality_representation", Verdict::Undetermined, f64::NAN, tol.route_agreement)
                .with_note(format!("representation route failed: {e}")),
            None => ConditionRecord::not_applicable("normality_representation", Verdict::Pass, "representation needs lambda0 = 1 and no state constraints"),
        }
    } else {
        ConditionRecord::not_applicable("normality_representation", normality.verdict, "condition (S) not established")
    };
    conditions.push(normality_representation);

    let trivial_multiplier = primary.is_trivial();
    let sufficiency = if opts.sufficiency && primary.lambda0 == 1.0 && unconstrained {
        match check_arrow(prob, cand, &primary, opts.gamma, opts.mode, &tol) {
            Ok(r) => Some(r),
            Err(Error::UnboundedAbove { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let passed = !trivial_multiplier && conditions.iter().all(|c| c.verdict.is_acceptable());
    let status = if !audit.passed() {
        CertificateStatus::AssumptionsViolated
    } else if passed {
        CertificateStatus::Certified
    } else {
        CertificateStatus::Refuted
    };
    Ok(CertificateReport {
        problem: prob.name.clone(),
        mode: opts.mode,
        tol,
        audit,
        adjoint: primary,
        routes,
        normality,
        conditions,
        transversality: Some(trans),
        sufficiency,
        trivial_multiplier,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::problem::{Bound, ControlSet};
    use crate::weights::WeightSpec;

    fn regulator() -> ControlProblem {
        let s = Scope::new(1, 1);
        ControlProblem::new(
            "regulator",
            parse("(x1^2 + u1^2)/2", &s).unwrap(),
            vec![parse("2*x1 + u1", &s).unwrap()],
            ControlSet::new(vec![Bound::real_line()]).unwrap(),
            vec![2.0],
            WeightSpec::exp_decay(2.0),
            WeightSpec::exp_decay(4.5),
        )
        .unwrap()
    }

    #[test]
    fn regulator_h_at_origin() {
        let r2 = 2f64.sqrt();
        let u = -2.0 * (1.0 + r2);
        let h = pontryagin_h(&regulator(), 0.0, &[2.0], &[u], &[u], 1.0).unwrap();
        assert!((h - (-4.0 - 4.0 * r2)).abs() < 1e-12);
    }

    #[test]
    fn abnormal_h_is_the_pairing() {
        let p = regulator();
        assert_eq!(pontryagin_h(&p, 1.3, &[0.7], &[-0.2], &[0.0], 0.0).unwrap(), 0.0);
        let h = pontryagin_h(&p, 1.3, &[0.7], &[-0.2], &[0.5], 0.0).unwrap();
        assert_eq!(h, 0.5 * (1.4 - 0.2));
    }

    #[test]
    fn h_u_matches_central_differences() {
        let p = regulator();
        for k in 0..20 {
            let t = 0.37 * k as f64;
            let (x, u, q) = ([1.0 - 0.1 * k as f64], [0.3 * k as f64 - 2.0], [0.05 * k as f64 - 0.4]);
            let g = pontryagin_h_u(&p, t, &x, &u, &q, 1.0).unwrap()[0];
            let h = 1e-6 * u[0].abs().max(1.0);
            let fd = (pontryagin_h(&p, t, &x, &[u[0] + h], &q, 1.0).unwrap() - pontryagin_h(&p, t, &x, &[u[0] - h], &q, 1.0).unwrap())
                / (2.0 * h);
            assert!((g - fd).abs() <= 1e-6 * g.abs().max(1.0), "t={t}: {g} vs {fd}");
        }
    }
}
