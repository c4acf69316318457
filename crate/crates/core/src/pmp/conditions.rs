use super::{pontryagin_h, pontryagin_h_x, AdjointSolution, ConditionRecord, TRUSTED_FRACTION};
use crate::config::{Mode, Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::integrate::path::{dot, norm};
use crate::integrate::quadrature::{gk15_vec, improper_integral, Convergence, ImproperOptions};
use crate::integrate::{integrate_state, OdeOptions};
use crate::limits::{decay_test, DecayTest};
use crate::problem::{CandidateProcess, ControlProblem};

/// Knots `t_k ≤ T/2`, without `t = 0` when `ω` has a pole there.
fn checked_knots(prob: &ControlProblem, adj: &AdjointSolution) -> Vec<usize> {
    let t_end = TRUSTED_FRACTION * adj.grid.t_max();
    let skip_origin = prob.omega.pole_exponent() < 0.0;
    adj.grid
        .knots()
        .iter()
        .enumerate()
        .filter(|(k, &t)| t <= t_end && !(skip_origin && *k == 0))
        .map(|(k, _)| k)
        .collect()
}

fn scale_of(adj: &AdjointSolution, knots: &[usize]) -> f64 {
    let s = knots.iter().map(|&k| norm(&adj.p[k])).fold(0.0, f64::max);
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// `∫_{a}^{b} H_x(s, x*(s), u*(s), p(s), λ₀) ds` inside grid cell `cell`.
fn h_x_integral(prob: &ControlProblem, cand: &CandidateProcess, adj: &AdjointSolution, cell: usize, a: f64, b: f64) -> Result<Vec<f64>> {
    let mut u = vec![0.0; prob.m];
    let mut f = |s: f64| -> Result<Vec<f64>> {
        let x = cand.x_at(s)?;
        cand.control.in_cell(s, cell, &mut u)?;
        pontryagin_h_x(prob, s, &x, &u, &adj.at(s)?, adj.lambda0)
    };
    Ok(gk15_vec(&mut f, a, b, prob.n)?.0)
}

/// Per-cell residual of `ṗ = -H_x`:
/// `max_k ‖p_c(t_{k+1}) - p_c(t_k) + ∫ H_x‖ / h_k`, relative to `max ‖p‖`.
/// Atom jumps are removed first, so only the absolutely continuous part is compared.
pub fn check_adjoint_residual(prob: &ControlProblem, cand: &CandidateProcess, adj: &AdjointSolution, tol: &Tolerances) -> Result<ConditionRecord> {
    let knots = checked_knots(prob, adj);
    let scale = scale_of(adj, &knots);
    let ts = adj.grid.knots();
    let mut worst = (0.0f64, 0.0);
    for w in knots.windows(2) {
        let (k, k1) = (w[0], w[1]);
        let (a, b) = (ts[k], ts[k1]);
        let integral = h_x_integral(prob, cand, adj, k, a, b)?;
        let mut d = 0.0;
        let mut mag = 0.0;
        // p(b) - p(a) = -∫H_x - (jumps in (a, b]); p at `b` is the left limit.
        let jumps: Vec<f64> = {
            let mut s = vec![0.0; prob.n];
            for (ta, j) in adj.jumps() {
                if *ta > a && *ta < b {
                    for i in 0..prob.n {
                        s[i] += j[i];
                    }
                }
            }
            s
        };
        for i in 0..prob.n {
            let r = adj.p[k1][i] - adj.p[k][i] + integral[i] + jumps[i];
            d += r * r;
            mag += adj.p[k1][i].abs() + adj.p[k][i].abs() + integral[i].abs() + jumps[i].abs();
        }
        // Cancellation error of the difference is not attributable to the adjoint.
        let floor = 8.0 * f64::EPSILON * mag;
        let r = (d.sqrt() - floor).max(0.0) / (b - a) / scale;
        if r > worst.0 || r.is_nan() {
            worst = (r, a);
        }
    }
    let (r, t) = worst;
    Ok(
        ConditionRecord::new("adjoint_residual", Verdict::from_bool(r <= tol.adjoint_residual), r, tol.adjoint_residual)
            .with_witnesses(vec![(t, r)]),
    )
}

/// Integral form `p(t) = ∫_t^∞ H_x ds - Σ_{t_a ≥ t} ν(t_a) g_x μ({t_a})` at every trusted knot.
///
/// The integral beyond `T` is extrapolated geometrically from the last two
/// cells when they decay, and taken as zero otherwise.
pub fn check_integral_adjoint(prob: &ControlProblem, cand: &CandidateProcess, adj: &AdjointSolution, tol: &Tolerances) -> Result<ConditionRecord> {
    let n = prob.n;
    let ts = adj.grid.knots();
    let cells = adj.grid.cells();
    let mut pieces = Vec::with_capacity(cells);
    let skip_origin = prob.omega.pole_exponent() < 0.0;
    for k in 0..cells {
        if k == 0 && skip_origin {
            pieces.push(vec![0.0; n]);
            continue;
        }
        let (a, b) = (ts[k], ts[k + 1]);
        // An atom strictly inside the cell splits it.
        let inner: Vec<f64> = adj.jumps().iter().map(|j| j.0).filter(|&ta| ta > a && ta < b).collect();
        let mut edges = vec![a];
        edges.extend(inner);
        edges.push(b);
        let mut sum = vec![0.0; n];
        for e in edges.windows(2) {
            let v = h_x_integral(prob, cand, adj, k, e[0], e[1])?;
            for i in 0..n {
                sum[i] += v[i];
            }
        }
        pieces.push(sum);
    }
    let mut tail = vec![0.0; n];
    let mut extrapolated = true;
    if cells >= 2 {
        let (last, prev) = (&pieces[cells - 1], &pieces[cells - 2]);
        for i in 0..n {
            if last[i] == 0.0 {
                continue;
            }
            let r = last[i] / prev[i];
            if r > 0.0 && r < 1.0 {
                tail[i] = last[i] * r / (1.0 - r);
            } else {
                extrapolated = false;
            }
        }
    }
    let mut from_t = vec![tail; cells + 1];
    for k in (0..cells).rev() {
        for i in 0..n {
            from_t[k][i] = from_t[k + 1][i] + pieces[k][i];
        }
    }
    let knots = checked_knots(prob, adj);
    let scale = scale_of(adj, &knots);
    let mut worst = (0.0f64, 0.0);
    for &k in &knots {
        let t = ts[k];
        let mut d = 0.0;
        for i in 0..n {
            let atoms: f64 = adj.jumps().iter().filter(|j| j.0 >= t).map(|j| j.1[i]).sum();
            let r = adj.p[k][i] - (from_t[k][i] - atoms);
            d += r * r;
        }
        let r = d.sqrt() / scale;
        if r > worst.0 || r.is_nan() {
            worst = (r, t);
        }
    }
    let (r, t) = worst;
    let mut rec = ConditionRecord::new(
        "integral_adjoint_residual",
        Verdict::from_bool(r <= tol.adjoint_residual),
        r,
        tol.adjoint_residual,
    )
    .with_witnesses(vec![(t, r)]);
    if !extrapolated {
        rec.note = "integrand does not decay geometrically at the horizon; tail taken as zero".into();
    }
    Ok(rec)
}

/// Element of the battery used for the pairing condition `⟨p(t), x(t)⟩ → 0`.
pub struct TestFunction<'a> {
    pub name: String,
    pub f: Box<dyn Fn(f64) -> Result<Vec<f64>> + 'a>,
}

impl std::fmt::Debug for TestFunction<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TestFunction").field("name", &self.name).finish()
    }
}

/// `x*`, the unit vectors when `∫ν < ∞`, and `ν^{-1/p} (1+t)^{-2/p} e_i`.
pub fn default_battery<'a>(prob: &'a ControlProblem, cand: &'a CandidateProcess) -> Result<Vec<TestFunction<'a>>> {
    let n = prob.n;
    let mut out = vec![TestFunction {
        name: "x*".into(),
        f: Box::new(move |t| cand.x_at(t)),
    }];
    let opts = ImproperOptions {
        pole: Some(prob.nu.pole_exponent()),
        ..Default::default()
    };
    let mass = improper_integral(|t| Ok(prob.nu.eval(t)), &cand.grid, opts)?;
    let unit = move |i: usize, v: f64| {
        let mut e = vec![0.0; n];
        e[i] = v;
        e
    };
    if mass.convergence == Convergence::Finite {
        for i in 0..n {
            out.push(TestFunction {
                name: format!("e{}", i + 1),
                f: Box::new(move |_| Ok(unit(i, 1.0))),
            });
        }
    }
    let p = prob.p_exp;
    for i in 0..n {
        out.push(TestFunction {
            name: format!("probe{}", i + 1),
            f: Box::new(move |t| Ok(unit(i, (-(prob.nu.ln_eval(t) + 2.0 * (1.0 + t).ln()) / p).exp()))),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TransversalityReport {
    pub pairing: ConditionRecord,
    pub decay: ConditionRecord,
    /// Decay test of `|⟨p, x⟩|` for each test function.
    pub per_function: Vec<(String, DecayTest)>,
}

fn record_from_decay(name: &'static str, d: &DecayTest) -> ConditionRecord {
    let mut rec = ConditionRecord::new(name, d.verdict, d.last(), d.tol).with_witnesses(d.samples.to_vec());
    if let Some((t, v)) = d.witness() {
        rec.note = format!("does not vanish: {v:.3e} at t={t:.3e}");
    }
    rec
}

/// Pairing `⟨p(t), x(t)⟩ → 0` over `battery` and decay of `p`:
/// `‖p‖²/ν` (strong, `p = 2`, no state constraints), `‖p‖/ν` (strong) or `‖p‖` (weak).
pub fn check_transversality(
    prob: &ControlProblem,
    adj: &AdjointSolution,
    mode: Mode,
    battery: &[TestFunction<'_>],
    tol: &Tolerances,
) -> Result<TransversalityReport> {
    let horizon = TRUSTED_FRACTION * adj.grid.t_max();
    let mut per_function = Vec::with_capacity(battery.len());
    for tf in battery {
        let d = decay_test(|t| Ok(dot(&adj.at(t)?, &(tf.f)(t)?)), horizon, tol.limit)?;
        per_function.push((tf.name.clone(), d));
    }
    let failed: Vec<&(String, DecayTest)> = per_function.iter().filter(|(_, d)| d.verdict == Verdict::Fail).collect();
    let residual = per_function.iter().map(|(_, d)| d.last()).fold(0.0, f64::max);
    let mut pairing = ConditionRecord::new(
        "transversality_pairing",
        Verdict::from_bool(failed.is_empty()),
        residual,
        tol.limit,
    );
    pairing.witnesses = failed.iter().filter_map(|(_, d)| d.witness()).collect();
    pairing.note = if failed.is_empty() {
        format!("{} test functions", per_function.len())
    } else {
        let names: Vec<&str> = failed.iter().map(|(n, _)| n.as_str()).collect();
        format!("fails for {}", names.join(", "))
    };

    let squared = mode == Mode::Strong && prob.l() == 0 && prob.p_exp == 2.0;
    let quantity = |t: f64| -> Result<f64> {
        let np = norm(&adj.at(t)?);
        if np == 0.0 {
            return Ok(0.0);
        }
        Ok(match mode {
            Mode::Weak => np,
            Mode::Strong if squared => (2.0 * np.ln() - prob.nu.ln_eval(t)).exp(),
            Mode::Strong => (np.ln() - prob.nu.ln_eval(t)).exp(),
        })
    };
    let d = decay_test(quantity, horizon, tol.limit)?;
    let mut decay = record_from_decay("transversality_decay", &d);
    let what = match mode {
        Mode::Weak => "|p|",
        Mode::Strong if squared => "|p|^2/nu",
        Mode::Strong => "|p|/nu",
    };
    decay.note = if decay.note.is_empty() {
        what.to_string()
    } else {
        format!("{what} {}", decay.note)
    };
    Ok(TransversalityReport { pairing, decay, per_function })
}

/// Michel condition `H(t, x*, u*, p, λ₀) → 0`, checked only when its premise
/// on the weights holds; otherwise the limit of `H` is reported in the note.
pub fn check_michel(prob: &ControlProblem, cand: &CandidateProcess, adj: &AdjointSolution, mode: Mode, tol: &Tolerances) -> Result<ConditionRecord> {
    let horizon = TRUSTED_FRACTION * adj.grid.t_max();
    let p2 = prob.p_exp == 2.0;
    let ratio = |power: f64| {
        move |t: f64| -> Result<f64> { Ok((power * prob.omega.ln_eval(t) - prob.nu.ln_eval(t)).exp()) }
    };
    let premise = match mode {
        Mode::Strong => {
            let power = if prob.l() == 0 && p2 { 2.0 } else { 1.0 };
            decay_test(ratio(power), horizon, tol.limit)?.verdict
        }
        Mode::Weak if p2 => {
            let w = decay_test(ratio(2.0), horizon, tol.limit)?.verdict;
            let u = decay_test(
                |t| {
                    let u = cand.u_at(t)?;
                    Ok(prob.nu.eval(t) * dot(&u, &u))
                },
                horizon,
                tol.limit,
            )?
            .verdict;
            if w == Verdict::Pass && u == Verdict::Pass {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        Mode::Weak => Verdict::Undetermined,
    };
    let h = decay_test(
        |t| {
            let x = cand.x_at(t)?;
            let u = cand.u_at(t)?;
            pontryagin_h(prob, t, &x, &u, &adj.at(t)?, adj.lambda0)
        },
        horizon,
        tol.limit,
    )?;
    if premise != Verdict::Pass {
        let note = format!(
            "premise on the weights does not hold; |H| = {:.3e} at t={:.3e} ({})",
            h.last(),
            h.samples[2].0,
            if h.verdict == Verdict::Pass { "vanishes" } else { "does not vanish" }
        );
        return Ok(ConditionRecord::not_applicable("michel", premise, note));
    }
    Ok(record_from_decay("michel", &h))
}

/// Fitted stability envelope `‖x(t;ζ) - x(t;x₀)‖ ≤ C_s ‖ζ - x₀‖ e^{-ct}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityFit {
    pub c: f64,
    pub c_s: f64,
    /// `(t, max_ζ ‖x(t;ζ) - x(t;x₀)‖ / ‖ζ - x₀‖)`.
    pub samples: Vec<(f64, f64)>,
}

/// Condition (S): flows from `2n+1` initial states at distance `delta` from
/// `x₀`, driven by `u*`, stay within an exponential envelope `μ` with
/// `μ ∈ L₂(ν)`. Runs on the trusted horizon.
pub fn check_normality(prob: &ControlProblem, cand: &CandidateProcess, delta: f64, opts: &OdeOptions) -> Result<(ConditionRecord, NormalityFit)> {
    const NAME: &str = "normality";
    let empty = NormalityFit {
        c: 0.0,
        c_s: 0.0,
        samples: Vec::new(),
    };
    if delta == 0.0 {
        let rec = ConditionRecord::new(NAME, Verdict::Pass, 0.0, 0.0).with_note("delta = 0: vacuous");
        return Ok((rec, empty));
    }
    let n = prob.n;
    let t_end = TRUSTED_FRACTION * cand.grid.t_max();
    let k_end = cand.grid.knot_at_or_before(t_end);
    let knots = &cand.grid.knots()[..=k_end.max(1)];
    let mut starts = Vec::with_capacity(2 * n + 1);
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut z = prob.x0.clone();
            z[i] += s * delta;
            starts.push(z);
        }
    }
    let diag = delta / (n as f64).sqrt();
    starts.push(prob.x0.iter().map(|v| v + diag).collect());

    let run = |z: &[f64]| integrate_state(prob, |t, cell, u| cand.control.in_cell(t, cell, u), z, knots, opts);
    let fail = |e: Error| -> Result<(ConditionRecord, NormalityFit)> {
        match e {
            Error::BlowUp { t } => Ok((
                ConditionRecord::new(NAME, Verdict::Fail, f64::INFINITY, 0.0)
                    .with_witnesses(vec![(t, f64::INFINITY)])
                    .with_note(format!("perturbed solution blows up near t={t:.3e}")),
                NormalityFit {
                    c: f64::NAN,
                    c_s: f64::INFINITY,
                    samples: Vec::new(),
                },
            )),
            e @ Error::Domain { .. } => Ok((
                ConditionRecord::new(NAME, Verdict::Fail, f64::INFINITY, 0.0).with_note(format!("perturbed solution leaves the domain: {e}")),
                NormalityFit {
                    c: f64::NAN,
                    c_s: f64::INFINITY,
                    samples: Vec::new(),
                },
            )),
            e => Err(e),
        }
    };
    let base = match run(&prob.x0) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    let mut dev = vec![0.0f64; knots.len()];
    for z in &starts {
        let xs = match run(z) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        let dz: f64 = z.iter().zip(&prob.x0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        for (k, (a, b)) in xs.iter().zip(&base).enumerate() {
            let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            dev[k] = dev[k].max(d / dz);
        }
    }
    let samples: Vec<(f64, f64)> = knots.iter().copied().zip(dev.iter().copied()).collect();
    if dev.iter().any(|d| !d.is_finite()) {
        return fail(Error::BlowUp { t: knots[dev.iter().position(|d| !d.is_finite()).unwrap()] });
    }
    let pts: Vec<(f64, f64)> = samples.iter().filter(|(_, d)| *d > 0.0).map(|&(t, d)| (t, d.ln())).collect();
    if pts.is_empty() {
        let rec = ConditionRecord::new(NAME, Verdict::Pass, 0.0, 0.0).with_note("perturbations do not move the state");
        return Ok((rec, NormalityFit { samples, ..empty }));
    }
    // Least-squares fit ln d ≈ a - c t.
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let (mt, my) = (st / m, sy / m);
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + (p.0 - mt).powi(2), acc.1 + (p.0 - mt) * (p.1 - my)));
    let c = if sxx > 0.0 { -sxy / sxx } else { 0.0 };
    let c_s = samples.iter().map(|&(t, d)| d * (c * t).exp()).fold(0.0, f64::max);
    let opts_i = ImproperOptions {
        pole: Some(prob.nu.pole_exponent()),
        ..Default::default()
    };
    let integral = improper_integral(|t| Ok((-2.0 * c * t + prob.nu.ln_eval(t)).exp()), &cand.grid, opts_i)?;
    let verdict = match integral.convergence {
        Convergence::Finite if c_s.is_finite() => Verdict::Pass,
        Convergence::Undetermined => Verdict::Undetermined,
        _ => Verdict::Fail,
    };
    let rec = ConditionRecord::new(NAME, verdict, c_s, f64::INFINITY).with_note(format!(
        "mu(t) = exp(-{c:.6} t), C_s = {c_s:.6e}, int mu^2 nu: {}",
        integral.convergence
    ));
    Ok((rec, NormalityFit { c, c_s, samples }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::integrate::grid::Grid;
    use crate::pmp::{Atom, SuppliedAdjoint};
    use crate::problem::{Bound, ControlSet};
    use crate::weights::WeightSpec;

    const S2: f64 = std::f64::consts::SQRT_2;
    const P_EXACT: &str = "-2*(1 + sqrt(2))*exp(-(1 + sqrt(2))*t)";

    fn regulator(a: f64, t_max: f64, cells: usize) -> (ControlProblem, CandidateProcess) {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "regulator",
            parse("(x1^2 + u1^2)/2", &s).unwrap(),
            vec![parse("2*x1 + u1", &s).unwrap()],
            ControlSet::new(vec![Bound::real_line()]).unwrap(),
            vec![2.0],
            WeightSpec::exp_decay(2.0),
            WeightSpec::exp_decay(a),
        )
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(t_max, cells).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    fn supplied(p: &ControlProblem, c: &CandidateProcess, src: &str, lambda0: f64) -> AdjointSolution {
        let e = parse(src, &Scope::time()).unwrap();
        AdjointSolution::supplied(p, c, SuppliedAdjoint::Exprs(vec![e]), lambda0, None, 1e-8).unwrap()
    }

    #[test]
    fn closed_form_triple_has_small_residuals() {
        let (p, c) = regulator(4.5, 40.0, 400);
        let a = supplied(&p, &c, P_EXACT, 1.0);
        let tol = Tolerances::default();
        let r = check_adjoint_residual(&p, &c, &a, &tol).unwrap();
        assert!(r.residual < 1e-10, "{}", r.residual);
        let i = check_integral_adjoint(&p, &c, &a, &tol).unwrap();
        assert!(i.residual < 1e-8, "{}", i.residual);
        assert!((i.residual - r.residual).abs() < 1e-8);
    }

    #[test]
    fn constant_shift_is_detected() {
        let (p, c) = regulator(4.5, 40.0, 400);
        let a = supplied(&p, &c, &format!("{P_EXACT} + 0.01"), 1.0);
        let r = check_adjoint_residual(&p, &c, &a, &Tolerances::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let scale = 2.0 * (1.0 + S2) - 0.01;
        assert!((r.residual - 0.02 / scale).abs() < 1e-3 * 0.02 / scale, "{}", r.residual);
    }

    #[test]
    fn inactive_constraint_changes_nothing() {
        let (p, c) = regulator(4.5, 40.0, 400);
        let s = Scope::new(1, 1);
        let pc = p.clone().with_constraints(vec![parse("x1 - 5", &s).unwrap()]).unwrap();
        let e = parse(P_EXACT, &Scope::time()).unwrap();
        let a = AdjointSolution::supplied(&pc, &c, SuppliedAdjoint::Exprs(vec![e]), 1.0, Some(vec![vec![]]), 1e-8).unwrap();
        let tol = Tolerances::default();
        let with = check_integral_adjoint(&pc, &c, &a, &tol).unwrap();
        let without = check_integral_adjoint(&p, &c, &supplied(&p, &c, P_EXACT, 1.0), &tol).unwrap();
        assert_eq!(with.residual, without.residual);
    }

    #[test]
    fn atom_at_origin_with_right_mass_passes() {
        // Sampled adjoints are Hermite-interpolated; keep cells short.
        let (p, c) = regulator(4.5, 20.0, 2000);
        let s = Scope::new(1, 1);
        let pc = p.with_constraints(vec![parse("x1 - 2", &s).unwrap()]).unwrap();
        let exact = |t: f64| -2.0 * (1.0 + S2) * (-(1.0 + S2) * t).exp();
        let mass = 0.3;
        // ν(0) g_x μ₀ = 0.3; p is left-continuous, so p(0) carries the jump.
        let samples: Vec<Vec<f64>> = c
            .grid
            .knots()
            .iter()
            .map(|&t| vec![if t == 0.0 { exact(0.0) - mass } else { exact(t) }])
            .collect();
        let tol = Tolerances::default();
        let run = |m: f64| {
            let a = AdjointSolution::supplied(&pc, &c, SuppliedAdjoint::Samples(samples.clone()), 1.0, Some(vec![vec![Atom { t: 0.0, mass: m }]]), 1e-8)
                .unwrap();
            check_integral_adjoint(&pc, &c, &a, &tol).unwrap()
        };
        let good = run(mass);
        assert_eq!(good.verdict, Verdict::Pass, "{}", good.residual);
        let bad = run(0.5);
        assert_eq!(bad.verdict, Verdict::Fail);
        assert_eq!(bad.witnesses[0].0, 0.0);
        // The wrong mass also bends the interpolant inside the first cell.
        let expected = 0.2 / (2.0 * (1.0 + S2) + mass);
        assert!((bad.residual - expected).abs() < 1e-2 * expected, "{}", bad.residual);
    }

    #[test]
    fn regulator_decay_threshold() {
        let tol = Tolerances::default();
        for (a, expected) in [(4.5, Verdict::Pass), (5.0, Verdict::Fail)] {
            let (p, c) = regulator(a, 100.0, 400);
            let adj = supplied(&p, &c, P_EXACT, 1.0);
            let b = default_battery(&p, &c).unwrap();
            let r = check_transversality(&p, &adj, Mode::Strong, &b, &tol).unwrap();
            assert_eq!(r.decay.verdict, expected, "a = {a}");
            let xs = r.per_function.iter().find(|(n, _)| n == "x*").unwrap();
            assert_eq!(xs.1.verdict, Verdict::Pass);
        }
    }

    fn halkin() -> (ControlProblem, CandidateProcess) {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "halkin",
            parse("x1", &s).unwrap(),
            vec![parse("-u1*x1", &s).unwrap()],
            ControlSet::new(vec![Bound::closed(0.5, 1.0)]).unwrap(),
            vec![1.0],
            WeightSpec::exp_decay(0.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(40.0, 400).unwrap(),
            vec![parse("exp(-t)", &ts).unwrap()],
            vec![parse("1", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    #[test]
    fn constant_multiplier_splits_weak_and_pairing() {
        let (p, c) = halkin();
        let adj = supplied(&p, &c, "-1", 1.0);
        let tol = Tolerances::default();
        let b = default_battery(&p, &c).unwrap();
        let r = check_transversality(&p, &adj, Mode::Weak, &b, &tol).unwrap();
        assert_eq!(r.decay.verdict, Verdict::Fail);
        assert_eq!(r.per_function[0].0, "x*");
        assert_eq!(r.per_function[0].1.verdict, Verdict::Pass);
        // H_x = -1 + u p... = -1 + 1 = 0, so p ≡ -1 solves the adjoint equation.
        assert!(check_adjoint_residual(&p, &c, &adj, &tol).unwrap().residual < 1e-12);
    }

    #[test]
    fn zero_multiplier_passes_transversality() {
        let (p, c) = halkin();
        let adj = supplied(&p, &c, "0", 0.0);
        let b = default_battery(&p, &c).unwrap();
        let r = check_transversality(&p, &adj, Mode::Strong, &b, &Tolerances::default()).unwrap();
        assert_eq!(r.pairing.verdict, Verdict::Pass);
        assert_eq!(r.decay.verdict, Verdict::Pass);
    }

    #[test]
    fn michel_premise_and_limit() {
        let tol = Tolerances::default();
        let (p, c) = regulator(4.5, 100.0, 400);
        let adj = supplied(&p, &c, P_EXACT, 1.0);
        let r = check_michel(&p, &c, &adj, Mode::Strong, &tol).unwrap();
        assert_eq!(r.verdict, Verdict::NotApplicable);
        assert_eq!(r.premise, Verdict::Fail);
        assert!(r.note.contains("vanishes"));

        let (p, c) = regulator(3.9, 100.0, 400);
        let adj = supplied(&p, &c, P_EXACT, 1.0);
        let r = check_michel(&p, &c, &adj, Mode::Strong, &tol).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        // H(t) = (-4 - 4√2) e^{-2√2 t} along the closed form.
        let t = r.witnesses[2].0;
        let h = (4.0 + 4.0 * S2) * (-2.0 * S2 * t).exp();
        assert!((r.residual - h).abs() <= 1e-9 * h);
    }

    #[test]
    fn regulator_satisfies_s() {
        let (p, c) = regulator(4.5, 20.0, 200);
        let (r, fit) = check_normality(&p, &c, 0.02, &OdeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        // Open-loop deviation is (ζ - x₀) e^{2t}.
        assert!((fit.c + 2.0).abs() < 1e-6, "{}", fit.c);
        assert!((fit.c_s - 1.0).abs() < 1e-6);
        let (r, _) = check_normality(&p, &c, 0.0, &OdeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn finite_escape_fails_s() {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "escape",
            parse("x1 + u1", &s).unwrap(),
            vec![parse("x1^2 + 0*u1", &s).unwrap()],
            ControlSet::new(vec![Bound::closed(0.0, 1.0)]).unwrap(),
            vec![-1.0],
            WeightSpec::exp_decay(1.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(40.0, 200).unwrap(),
            vec![parse("-1/(1 + t)", &ts).unwrap()],
            vec![parse("0", &ts).unwrap()],
        )
        .unwrap();
        let (r, _) = check_normality(&p, &c, 2.0, &OdeOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.note.contains("blows up"), "{}", r.note);
    }
}
