use nalgebra::{DMatrix, DVector};

use super::{pontryagin_h, pontryagin_h_u, AdjointSolution, ConditionRecord, TRUSTED_FRACTION};
use crate::config::{Tolerances, Verdict};
use crate::error::{Error, Result};
use crate::problem::halton;
use crate::problem::{Bound, CandidateProcess, ControlProblem};

/// Sampler settings for `sup_{u ∈ U} H`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxOptions {
    /// Uniform samples per bounded coordinate range.
    pub grid_points: usize,
    pub golden_iters: usize,
    /// Coordinate sweeps when `m > 1`.
    pub sweeps: usize,
}

impl Default for MaxOptions {
    fn default() -> Self {
        MaxOptions {
            grid_points: 65,
            golden_iters: 120,
            sweeps: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupResult {
    pub u: Vec<f64>,
    pub value: f64,
}

/// Geometric probes towards an infinite end: `c ± (1+|c|)·4^j`.
const GEOMETRIC_PROBES: i32 = 26;

pub(crate) fn is_quadratic_in_u(prob: &ControlProblem) -> bool {
    let deg = |e: &crate::expr::Expr| e.control_degree().is_some_and(|d| d <= 2);
    deg(&prob.f) && prob.phi.iter().all(deg)
}

struct Ctx<'a> {
    prob: &'a ControlProblem,
    t: f64,
    x: &'a [f64],
    p: &'a [f64],
    lambda0: f64,
}

impl Ctx<'_> {
    /// `H(u)`; points where the data are undefined count as `-∞`.
    fn h(&self, u: &[f64]) -> Result<f64> {
        match pontryagin_h(self.prob, self.t, self.x, u, self.p, self.lambda0) {
            Ok(v) if v.is_nan() => Ok(f64::NEG_INFINITY),
            Ok(v) => Ok(v),
            Err(Error::Domain { .. }) => Ok(f64::NEG_INFINITY),
            Err(e) => Err(e),
        }
    }

    fn h_u(&self, u: &[f64]) -> Result<Vec<f64>> {
        pontryagin_h_u(self.prob, self.t, self.x, u, self.p, self.lambda0)
    }

    fn unbounded(&self, coord: usize, up: bool) -> Error {
        Error::UnboundedAbove {
            t: self.t,
            coord: coord + 1,
            direction: if up { "+inf" } else { "-inf" },
        }
    }
}

/// `sup_{u ∈ U} H(t, x, u, p, λ₀)` and a maximizer.
///
/// Quadratic dependence on `u` is solved exactly; otherwise each coordinate
/// is sampled densely (geometrically towards open or infinite ends) and the
/// best sample is refined by golden-section search. `hint` is always among
/// the candidates, so the result dominates `H(hint)`.
pub fn sup_h(prob: &ControlProblem, t: f64, x: &[f64], p: &[f64], lambda0: f64, hint: &[f64], opts: &MaxOptions) -> Result<SupResult> {
    sup_with(prob, is_quadratic_in_u(prob), t, x, p, lambda0, hint, opts)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn sup_with(
    prob: &ControlProblem,
    quadratic: bool,
    t: f64,
    x: &[f64],
    p: &[f64],
    lambda0: f64,
    hint: &[f64],
    opts: &MaxOptions,
) -> Result<SupResult> {
    let ctx = Ctx { prob, t, x, p, lambda0 };
    let bounds = &prob.controls.bounds;
    let start: Vec<f64> = hint.iter().zip(bounds).map(|(v, b)| b.clamp(*v)).collect();
    let mut best = SupResult {
        value: ctx.h(&start)?,
        u: start.clone(),
    };
    if prob.m == 0 {
        return Ok(best);
    }
    if quadratic {
        if let Some(r) = quadratic_sup(&ctx, &start)? {
            if r.value > best.value {
                best = r;
            }
            return Ok(best);
        }
    }
    if prob.m > 1 {
        for j in 0..16 * prob.m {
            let u: Vec<f64> = bounds
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let s = halton(j as u64 + 1, i);
                    if b.is_bounded() {
                        b.clamp(b.lo + s * (b.hi - b.lo))
                    } else {
                        b.clamp(start[i] + (1.0 + start[i].abs()) * (2.0 * s - 1.0))
                    }
                })
                .collect();
            let v = ctx.h(&u)?;
            if v > best.value {
                best = SupResult { u, value: v };
            }
        }
    }
    let sweeps = if prob.m == 1 { 1 } else { opts.sweeps };
    for _ in 0..sweeps {
        for i in 0..prob.m {
            let base = best.u.clone();
            let mut g = |v: f64| {
                let mut u = base.clone();
                u[i] = v;
                ctx.h(&u)
            };
            let (v, hv) = max_1d(&mut g, &bounds[i], base[i], opts).map_err(|up| match up {
                Unbounded::Up => ctx.unbounded(i, true),
                Unbounded::Down => ctx.unbounded(i, false),
                Unbounded::Err(e) => e,
            })?;
            if hv > best.value {
                best.u[i] = v;
                best.value = hv;
            }
        }
    }
    Ok(best)
}

/// Exact maximization of `H(u) = c + gᵀ(u-u₀) + ½(u-u₀)ᵀQ(u-u₀)`.
/// `None` when the quadratic route cannot decide (box-constrained, `m > 1`,
/// not concave or stationary point outside `U`).
fn quadratic_sup(ctx: &Ctx<'_>, u0: &[f64]) -> Result<Option<SupResult>> {
    let m = u0.len();
    let bounds = &ctx.prob.controls.bounds;
    let g0 = ctx.h_u(u0)?;
    let mut q = DMatrix::<f64>::zeros(m, m);
    let mut noise = 0.0f64;
    for i in 0..m {
        let mut u = u0.to_vec();
        u[i] += 1.0;
        let gi = ctx.h_u(&u)?;
        for j in 0..m {
            q[(j, i)] = gi[j] - g0[j];
            noise = noise.max(gi[j].abs() + g0[j].abs());
        }
    }
    let q = (&q + q.transpose()) * 0.5;
    let zero = 8.0 * f64::EPSILON * noise;
    if m == 1 {
        let b = &bounds[0];
        let (qq, g) = (q[(0, 0)], g0[0]);
        let flat = qq.abs() <= zero;
        let grows = |dir: f64| qq > zero || (flat && g * dir > 0.0);
        let mut cands = vec![u0[0]];
        if b.lo.is_finite() {
            cands.push(b.inner_lo());
        } else if grows(-1.0) {
            return Err(ctx.unbounded(0, false));
        }
        if b.hi.is_finite() {
            cands.push(b.inner_hi());
        } else if grows(1.0) {
            return Err(ctx.unbounded(0, true));
        }
        if qq < -zero {
            cands.push(b.clamp(u0[0] - g / qq));
        }
        let mut best: Option<SupResult> = None;
        for v in cands {
            let hv = ctx.h(&[v])?;
            if best.as_ref().is_none_or(|r| hv > r.value) {
                best = Some(SupResult { u: vec![v], value: hv });
            }
        }
        return Ok(best);
    }
    let neg = -&q;
    let Some(chol) = neg.clone().cholesky() else {
        return Ok(None);
    };
    let d = chol.solve(&DVector::from_column_slice(&g0));
    let us: Vec<f64> = (0..m).map(|i| u0[i] + d[i]).collect();
    if !us.iter().zip(bounds).all(|(v, b)| b.contains(*v, 0.0)) {
        return Ok(None);
    }
    let value = ctx.h(&us)?;
    Ok(Some(SupResult { u: us, value }))
}

enum Unbounded {
    Up,
    Down,
    Err(Error),
}

impl From<Error> for Unbounded {
    fn from(e: Error) -> Self {
        Unbounded::Err(e)
    }
}

fn max_1d<G>(g: &mut G, b: &Bound, c: f64, opts: &MaxOptions) -> std::result::Result<(f64, f64), Unbounded>
where
    G: FnMut(f64) -> Result<f64>,
{
    let scale = 1.0 + c.abs();
    let lo = if b.lo.is_finite() { b.inner_lo() } else { c - scale };
    let hi = if b.hi.is_finite() { b.inner_hi() } else { c + scale };
    let mut pts = vec![c];
    let n = opts.grid_points.max(2);
    pts.extend((0..n).map(|j| lo + (hi - lo) * j as f64 / (n - 1) as f64));
    let width = (hi - lo).abs().max(f64::MIN_POSITIVE);
    if b.hi_open && b.hi.is_finite() {
        pts.extend((2..=12).map(|k| b.hi - 10f64.powi(-k) * width));
    }
    if b.lo_open && b.lo.is_finite() {
        pts.extend((2..=12).map(|k| b.lo + 10f64.powi(-k) * width));
    }
    let mut up = Vec::new();
    let mut down = Vec::new();
    for j in 0..GEOMETRIC_PROBES {
        let s = scale * 4f64.powi(j);
        if !b.hi.is_finite() {
            up.push(c + s);
        }
        if !b.lo.is_finite() {
            down.push(c - s);
        }
    }
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(pts.len() + up.len() + down.len());
    for &v in &pts {
        samples.push((v, g(v)?));
    }
    for (probes, dir) in [(&up, Unbounded::Up), (&down, Unbounded::Down)] {
        if probes.is_empty() {
            continue;
        }
        let vals = probes.iter().map(|&v| g(v)).collect::<Result<Vec<f64>>>()?;
        let inner = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let tail = &vals[vals.len() - 5..];
        let rising = tail.windows(2).all(|w| w[1] > w[0]);
        if vals.iter().any(|v| *v == f64::INFINITY) || (rising && tail[4] > inner) {
            return Err(dir);
        }
        samples.extend(probes.iter().copied().zip(vals));
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    samples.dedup_by(|a, b| a.0 == b.0);
    let (ib, &(vb, hb)) = samples
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("at least one sample");
    let a = samples[ib.saturating_sub(1)].0;
    let z = samples[(ib + 1).min(samples.len() - 1)].0;
    let (v, h) = golden(g, a, z, opts.golden_iters)?;
    Ok(if h > hb { (v, h) } else { (vb, hb) })
}

fn golden<G>(g: &mut G, mut a: f64, mut b: f64, iters: usize) -> Result<(f64, f64)>
where
    G: FnMut(f64) -> Result<f64>,
{
    const R: f64 = 0.618_033_988_749_894_8;
    if a == b {
        return Ok((a, g(a)?));
    }
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let mut fc = g(c)?;
    let mut fd = g(d)?;
    for _ in 0..iters {
        if (b - a).abs() <= 4.0 * f64::EPSILON * (a.abs() + b.abs()).max(f64::MIN_POSITIVE) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = g(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = g(d)?;
        }
    }
    Ok(if fc >= fd { (c, fc) } else { (d, fd) })
}

/// Knots of the trusted horizon where the data are finite.
pub(crate) fn trusted_knots(cand: &CandidateProcess, prob: &ControlProblem) -> Vec<usize> {
    let t_end = TRUSTED_FRACTION * cand.grid.t_max();
    cand.grid
        .knots()
        .iter()
        .enumerate()
        .filter(|(_, &t)| t <= t_end && prob.omega.eval(t).is_finite())
        .map(|(k, _)| k)
        .collect()
}

/// Maximum condition: `gap(t) = sup_U H - H(u*(t)) ≤ tol (1 + |H|)` on the trusted horizon.
pub fn check_maximum_condition(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    adj: &AdjointSolution,
    opts: &MaxOptions,
    tol: &Tolerances,
) -> Result<ConditionRecord> {
    let quadratic = is_quadratic_in_u(prob);
    let mut worst = (0.0, 0.0, 0.0, Vec::new());
    for k in trusted_knots(cand, prob) {
        let t = cand.grid.knots()[k];
        let x = cand.x_knot(k);
        let u = cand.u_knot(k)?;
        let p = &adj.p[k];
        let h = pontryagin_h(prob, t, x, &u, p, adj.lambda0)?;
        let s = sup_with(prob, quadratic, t, x, p, adj.lambda0, &u, opts)?;
        let gap = s.value - h;
        let rel = gap / (1.0 + h.abs());
        if rel > worst.0 || worst.3.is_empty() {
            worst = (rel, t, gap, s.u);
        }
    }
    let (rel, t, gap, u_max) = worst;
    Ok(
        ConditionRecord::new("maximum_condition", Verdict::from_bool(rel <= tol.max_gap), rel, tol.max_gap)
            .with_witnesses(vec![(t, gap)])
            .with_note(format!("largest gap at t={t:.6e}, maximizer u={u_max:?}")),
    )
}

/// Largest `⟨H_u, v - u*(t)⟩` over `v ∈ U`, coordinate by coordinate; an
/// infinite end contributes `|H_u,i|` when `H_u,i` points towards it.
pub(crate) fn weak_residual(g: &[f64], u: &[f64], bounds: &[Bound]) -> f64 {
    let mut r = 0.0;
    for i in 0..g.len() {
        let b = &bounds[i];
        r += if g[i] > 0.0 {
            if b.hi.is_finite() {
                g[i] * (b.hi - u[i])
            } else {
                g[i]
            }
        } else if g[i] < 0.0 {
            if b.lo.is_finite() {
                g[i] * (b.lo - u[i])
            } else {
                -g[i]
            }
        } else {
            0.0
        };
    }
    r
}

/// Variational inequality `⟨H_u(t,x*,u*,p,λ₀), u - u*(t)⟩ ≤ 0` for all `u ∈ U`.
pub fn check_weak_inequality(prob: &ControlProblem, cand: &CandidateProcess, adj: &AdjointSolution, tol: &Tolerances) -> Result<ConditionRecord> {
    let mut worst = (f64::NEG_INFINITY, 0.0);
    for k in trusted_knots(cand, prob) {
        let t = cand.grid.knots()[k];
        let u = cand.u_knot(k)?;
        let g = pontryagin_h_u(prob, t, cand.x_knot(k), &u, &adj.p[k], adj.lambda0)?;
        let r = weak_residual(&g, &u, &prob.controls.bounds);
        if r > worst.0 || r.is_nan() {
            worst = (r, t);
        }
    }
    let (r, t) = worst;
    Ok(
        ConditionRecord::new("weak_inequality", Verdict::from_bool(r <= tol.weak_inequality), r, tol.weak_inequality)
            .with_witnesses(vec![(t, r)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::integrate::grid::Grid;
    use crate::pmp::SuppliedAdjoint;
    use crate::problem::ControlSet;
    use crate::weights::WeightSpec;
    use proptest::prelude::*;

    fn regulator() -> (ControlProblem, CandidateProcess) {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "regulator",
            parse("(x1^2 + u1^2)/2", &s).unwrap(),
            vec![parse("2*x1 + u1", &s).unwrap()],
            ControlSet::new(vec![Bound::real_line()]).unwrap(),
            vec![2.0],
            WeightSpec::exp_decay(2.0),
            WeightSpec::exp_decay(4.5),
        )
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(20.0, 200).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    fn closed_adjoint(p: &ControlProblem, c: &CandidateProcess) -> AdjointSolution {
        let e = parse("-2*(1 + sqrt(2))*exp(-(1 + sqrt(2))*t)", &Scope::time()).unwrap();
        AdjointSolution::supplied(p, c, SuppliedAdjoint::Exprs(vec![e]), 1.0, None, 1e-8).unwrap()
    }

    fn halkin() -> ControlProblem {
        let s = Scope::new(1, 1);
        ControlProblem::new(
            "halkin",
            parse("x1", &s).unwrap(),
            vec![parse("-u1*x1", &s).unwrap()],
            ControlSet::new(vec![Bound::closed(0.5, 1.0)]).unwrap(),
            vec![1.0],
            WeightSpec::exp_decay(0.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap()
    }

    fn log_investment() -> ControlProblem {
        let s = Scope::new(1, 1);
        ControlProblem::new(
            "log-investment",
            parse("ln((1 - u1)*x1)", &s).unwrap(),
            vec![parse("u1*x1", &s).unwrap()],
            ControlSet::new(vec![Bound::half_open(0.0, 1.0)]).unwrap(),
            vec![1.0],
            WeightSpec::exp_decay(0.5),
            WeightSpec::exp_decay(1.5),
        )
        .unwrap()
        .maximize()
    }

    #[test]
    fn regulator_maximizer_is_stationary_point() {
        let (p, _) = regulator();
        for &t in &[0.0, 0.7, 3.0] {
            let q = -0.8;
            let s = sup_h(&p, t, &[1.1], &[q], 1.0, &[0.0], &MaxOptions::default()).unwrap();
            let u = q * (2.0 * t).exp();
            assert!((s.u[0] - u).abs() <= 1e-12 * u.abs());
            let hu = -(-2.0 * t).exp() * (1.21 + u * u) / 2.0 + q * (2.2 + u);
            assert!((s.value - hu).abs() <= 1e-12 * hu.abs().max(1.0));
        }
    }

    #[test]
    fn abnormal_linear_h_on_real_line_is_unbounded() {
        let (p, _) = regulator();
        let r = sup_h(&p, 1.0, &[1.0], &[0.5], 0.0, &[0.0], &MaxOptions::default());
        assert!(matches!(r, Err(Error::UnboundedAbove { coord: 1, direction: "+inf", .. })));
    }

    #[test]
    fn linear_h_on_box_picks_vertex() {
        let p = halkin();
        // H = -x + p(-u x) with p < 0 is increasing in u.
        let s = sup_h(&p, 2.0, &[0.3], &[-1.0], 1.0, &[0.7], &MaxOptions::default()).unwrap();
        assert_eq!(s.u, vec![1.0]);
    }

    #[test]
    fn open_end_interior_maximizer() {
        let p = log_investment();
        let t: f64 = 1.3;
        let x = (0.5 * t).exp();
        let q = 2.0 * (-t).exp();
        let s = sup_h(&p, t, &[x], &[q], 1.0, &[0.1], &MaxOptions::default()).unwrap();
        assert!((s.u[0] - 0.5).abs() < 1e-7, "{:?}", s.u);
    }

    #[test]
    fn unbounded_nonquadratic_direction_detected() {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "cubic",
            parse("-u1^3", &s).unwrap(),
            vec![parse("x1", &s).unwrap()],
            ControlSet::new(vec![Bound::half_open(0.0, f64::INFINITY)]).unwrap(),
            vec![1.0],
            WeightSpec::exp_decay(1.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap();
        let r = sup_h(&p, 0.0, &[1.0], &[0.0], 1.0, &[0.0], &MaxOptions::default());
        assert!(matches!(r, Err(Error::UnboundedAbove { direction: "+inf", .. })));
    }

    #[test]
    fn regulator_maximum_condition_and_weak_inequality() {
        let (p, c) = regulator();
        let a = closed_adjoint(&p, &c);
        let tol = Tolerances::default();
        let r = check_maximum_condition(&p, &c, &a, &MaxOptions::default(), &tol).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert!(r.residual < 1e-8);
        let w = check_weak_inequality(&p, &c, &a, &tol).unwrap();
        assert_eq!(w.verdict, Verdict::Pass);
    }

    #[test]
    fn injected_nonmaximizer_fails() {
        let (p, _) = regulator();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(20.0, 200).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        let a = closed_adjoint(&p, &c);
        let tol = Tolerances::default();
        let r = check_maximum_condition(&p, &c, &a, &MaxOptions::default(), &tol).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.witnesses[0].1 > 0.0);
        assert_eq!(check_weak_inequality(&p, &c, &a, &tol).unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn face_with_inward_gradient_fails_weak_inequality() {
        let b = [Bound::closed(0.0, 1.0)];
        assert_eq!(weak_residual(&[-2.0], &[0.0], &b), 0.0);
        assert_eq!(weak_residual(&[2.0], &[1.0], &b), 0.0);
        assert_eq!(weak_residual(&[-2.0], &[1.0], &b), 2.0);
        assert_eq!(weak_residual(&[0.5], &[3.0], &[Bound::real_line()]), 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn gap_nonnegative_and_scales(c in 0.1f64..10.0, t in 0.0f64..3.0, x in -2.0f64..2.0, q in -2.0f64..2.0, u in -3.0f64..3.0) {
            let p = halkin();
            let opts = MaxOptions::default();
            let h = |s: f64| pontryagin_h(&p, t, &[x], &[u.clamp(0.5, 1.0)], &[s * q], s).unwrap();
            let s1 = sup_h(&p, t, &[x], &[q], 1.0, &[u], &opts).unwrap();
            let sc = sup_h(&p, t, &[x], &[c * q], c, &[u], &opts).unwrap();
            let g1 = s1.value - h(1.0);
            let gc = sc.value - h(c);
            prop_assert!(g1 >= 0.0);
            prop_assert!((gc - c * g1).abs() <= 1e-12 * (1.0 + gc.abs()));
            prop_assert_eq!(s1.u, sc.u);
        }
    }
}
