use std::fmt;

use nalgebra::DMatrix;

use super::weighted;
use crate::error::{Error, Result};
use crate::expr::{Expr, Point};
use crate::integrate::grid::Grid;
use crate::integrate::ode::{integrate_knots, solve_cell, OdeOptions};
use crate::integrate::path::{norm, Path};
use crate::problem::{CandidateProcess, ControlProblem};

/// Condition number of `Z(t)` above which the representation is refused.
const MAX_COND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    BackwardOde,
    Representation,
    /// Multiplier given by the user or a closed form.
    Supplied,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Route::BackwardOde => "backward-ode",
            Route::Representation => "representation",
            Route::Supplied => "supplied",
        })
    }
}

/// Point mass of a measure multiplier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Atom {
    pub t: f64,
    pub mass: f64,
}

/// Adjoint values handed in from outside.
#[derive(Debug, Clone, PartialEq)]
pub enum SuppliedAdjoint {
    /// Closed form in `t`; only without measure multipliers.
    Exprs(Vec<Expr>),
    /// Left-continuous values at the candidate's knots.
    Samples(Vec<Vec<f64>>),
}

/// Multiplier `(λ₀, p, μ)`.
///
/// `p` is left-continuous of bounded variation. Between atoms it is
/// absolutely continuous; the continuous part `p(t) + Σ_{t_a ≥ t} ν g_x μ` is
/// interpolated with Hermite cubics whose slopes come from the adjoint equation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSolution {
    pub grid: Grid,
    /// `p(t_k)`.
    pub p: Vec<Vec<f64>>,
    pub lambda0: f64,
    pub route: Route,
    /// Atoms per constraint `j`.
    pub measures: Option<Vec<Vec<Atom>>>,
    /// Backward route: relative sup change on `[0, 0.4 T]` when the terminal
    /// condition is imposed at `0.8 T` instead.
    pub terminal_error: Option<f64>,
    /// Representation route: `(t, cond Z(t))` at the worst knot.
    pub max_cond: Option<(f64, f64)>,
    continuous: Path,
    exprs: Option<Vec<Expr>>,
    /// `(t_a, ν(t_a) Σ_j g_jx(t_a, x*(t_a)) μ_j({t_a}))`.
    jumps: Vec<(f64, Vec<f64>)>,
}

impl AdjointSolution {
    /// Builds the interpolant from knot values; `jumps` must already be known.
    fn assemble(
        prob: &ControlProblem,
        cand: &CandidateProcess,
        p: Vec<Vec<f64>>,
        lambda0: f64,
        route: Route,
        measures: Option<Vec<Vec<Atom>>>,
        jumps: Vec<(f64, Vec<f64>)>,
    ) -> Result<Self> {
        let grid = cand.grid.clone();
        let n = prob.n;
        let mut values = Vec::with_capacity(p.len());
        let mut derivs = Vec::with_capacity(p.len());
        for (k, &t) in grid.knots().iter().enumerate() {
            let before = jump_sum(&jumps, n, |ta| ta >= t);
            let after = jump_sum(&jumps, n, |ta| ta > t);
            let pc: Vec<f64> = (0..n).map(|i| p[k][i] + before[i]).collect();
            let right: Vec<f64> = (0..n).map(|i| pc[i] - after[i]).collect();
            let u = cand.u_knot(k)?;
            let hx = super::pontryagin_h_x(prob, t, cand.x_knot(k), &u, &right, lambda0)?;
            values.push(pc);
            derivs.push(hx.into_iter().map(|v| -v).collect());
        }
        Ok(AdjointSolution {
            continuous: Path::hermite(grid.clone(), values, derivs),
            grid,
            p,
            lambda0,
            route,
            measures,
            terminal_error: None,
            max_cond: None,
            exprs: None,
            jumps,
        })
    }

    /// Wraps a user multiplier; atoms must sit on the active sets `T_j`.
    pub fn supplied(
        prob: &ControlProblem,
        cand: &CandidateProcess,
        p: SuppliedAdjoint,
        lambda0: f64,
        measures: Option<Vec<Vec<Atom>>>,
        activity_tol: f64,
    ) -> Result<Self> {
        if !(lambda0 >= 0.0) {
            return Err(Error::InvalidMeasure(format!("lambda0 = {lambda0} must be nonnegative")));
        }
        let jumps = match &measures {
            Some(ms) => measure_jumps(prob, cand, ms, activity_tol)?,
            None => Vec::new(),
        };
        match p {
            SuppliedAdjoint::Exprs(e) => {
                if e.len() != prob.n {
                    return Err(Error::DimensionMismatch(format!("{} adjoint components, n = {}", e.len(), prob.n)));
                }
                if !jumps.is_empty() {
                    return Err(Error::InvalidMeasure("closed-form adjoints cannot carry atoms; supply samples".into()));
                }
                let values = cand
                    .grid
                    .knots()
                    .iter()
                    .map(|&t| eval_all(&e, t))
                    .collect::<Result<Vec<_>>>()?;
                let mut a = Self::assemble(prob, cand, values, lambda0, Route::Supplied, measures, jumps)?;
                a.exprs = Some(e);
                Ok(a)
            }
            SuppliedAdjoint::Samples(s) => {
                if s.len() != cand.grid.len() || s.iter().any(|v| v.len() != prob.n) {
                    return Err(Error::DimensionMismatch("adjoint samples do not match grid and state dimension".into()));
                }
                Self::assemble(prob, cand, s, lambda0, Route::Supplied, measures, jumps)
            }
        }
    }

    /// `p(t)`, left-continuous at atoms.
    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        if let Some(e) = &self.exprs {
            return eval_all(e, t);
        }
        let pc = self.continuous.at(t);
        if self.jumps.is_empty() {
            return Ok(pc);
        }
        let s = jump_sum(&self.jumps, pc.len(), |ta| ta >= t);
        Ok(pc.iter().zip(&s).map(|(a, b)| a - b).collect())
    }

    pub fn n(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    pub fn sup_norm(&self) -> f64 {
        self.p.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }

    /// `λ₀ = 0` and `p ≡ 0` with no measure mass.
    pub fn is_trivial(&self) -> bool {
        let no_mass = self
            .measures
            .as_ref()
            .is_none_or(|ms| ms.iter().flatten().all(|a| a.mass == 0.0));
        self.lambda0 == 0.0 && self.sup_norm() == 0.0 && no_mass
    }

    pub(crate) fn jumps(&self) -> &[(f64, Vec<f64>)] {
        &self.jumps
    }
}

fn eval_all(e: &[Expr], t: f64) -> Result<Vec<f64>> {
    let p = Point::time(t);
    e.iter().map(|ex| ex.eval(&p)).collect()
}

fn jump_sum(jumps: &[(f64, Vec<f64>)], n: usize, pick: impl Fn(f64) -> bool) -> Vec<f64> {
    let mut s = vec![0.0; n];
    for (ta, j) in jumps {
        if pick(*ta) {
            for i in 0..n {
                s[i] += j[i];
            }
        }
    }
    s
}

fn measure_jumps(prob: &ControlProblem, cand: &CandidateProcess, measures: &[Vec<Atom>], tol: f64) -> Result<Vec<(f64, Vec<f64>)>> {
    if measures.len() != prob.l() {
        return Err(Error::InvalidMeasure(format!(
            "{} measures given for {} constraints",
            measures.len(),
            prob.l()
        )));
    }
    let mut jumps = Vec::new();
    for (j, atoms) in measures.iter().enumerate() {
        for a in atoms {
            if !(a.mass >= 0.0) || !a.mass.is_finite() {
                return Err(Error::InvalidMeasure(format!("atom of g{} at t={} has mass {}", j + 1, a.t, a.mass)));
            }
            if !(0.0..=cand.grid.t_max()).contains(&a.t) {
                return Err(Error::InvalidMeasure(format!("atom of g{} at t={} lies outside the grid", j + 1, a.t)));
            }
            let x = cand.x_at(a.t)?;
            let g = prob.g_at(j, a.t, &x)?;
            if g.abs() > tol {
                return Err(Error::AtomOffActiveSet { j: j + 1, t: a.t, value: g.abs() });
            }
            let gx = prob.g_x_at(j, a.t, &x)?;
            let w = prob.nu.eval(a.t);
            jumps.push((a.t, gx.iter().map(|v| w * v * a.mass).collect()));
        }
    }
    Ok(jumps)
}

/// `∫_0^{t1} ω`, analytic in the head when `ω` has a pole at 0.
fn head_mass(prob: &ControlProblem, t1: f64) -> f64 {
    let beta = prob.omega.pole_exponent();
    prob.omega.eval(t1) * t1 / (beta + 1.0)
}

/// Adjoint equation `ṗ = -φ_xᵀ p + λ₀ ω f_x` integrated backwards from
/// `p(T) = 0` along `cand` truncated to `t_end`.
pub fn adjoint_backward(prob: &ControlProblem, cand: &CandidateProcess, lambda0: f64, t_end: f64, opts: &OdeOptions) -> Result<AdjointSolution> {
    let cand = if t_end < cand.grid.t_max() {
        cand.truncated(t_end)?
    } else {
        cand.clone()
    };
    let p = backward_values(prob, &cand, lambda0, cand.grid.t_max(), opts)?;
    let t_rerun = 0.8 * cand.grid.t_max();
    let rerun = backward_values(prob, &cand.truncated(t_rerun)?, lambda0, t_rerun, opts)?;
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (k, &t) in cand.grid.knots().iter().enumerate() {
        if t > 0.4 * cand.grid.t_max() {
            break;
        }
        let d = p[k].iter().zip(&rerun[k]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        diff = diff.max(d);
        scale = scale.max(norm(&p[k]));
    }
    let mut a = AdjointSolution::assemble(prob, &cand, p, lambda0, Route::BackwardOde, None, Vec::new())?;
    a.terminal_error = Some(if scale > 0.0 { diff / scale } else { diff });
    Ok(a)
}

fn backward_values(prob: &ControlProblem, cand: &CandidateProcess, lambda0: f64, t_end: f64, opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    let n = prob.n;
    let knots = cand.grid.knots();
    debug_assert_eq!(*knots.last().unwrap(), t_end);
    let mut u = vec![0.0; prob.m];
    let mut rhs = |t: f64, p: &[f64], cell: usize, dp: &mut [f64]| -> Result<()> {
        let x = cand.x_at(t)?;
        cand.control.in_cell(t, cell, &mut u)?;
        let a = prob.phi_x_at(t, &x, &u)?;
        let fx = if lambda0 == 0.0 {
            vec![0.0; n]
        } else {
            prob.f_x_at(t, &x, &u)?
        };
        let w = prob.omega.eval(t);
        for j in 0..n {
            let adj: f64 = (0..n).map(|i| a[i * n + j] * p[i]).sum();
            dp[j] = -adj + lambda0 * weighted(w, fx[j]);
        }
        Ok(())
    };
    let pole = prob.omega.pole_exponent() < 0.0;
    if !pole {
        return integrate_knots(&mut rhs, knots, &vec![0.0; n], true, opts);
    }
    // With a pole at 0 the first cell is stepped with the exact weight mass.
    let mut tail = integrate_knots(&mut |t: f64, p: &[f64], c: usize, dp: &mut [f64]| rhs(t, p, c + 1, dp), &knots[1..], &vec![0.0; n], true, opts)?;
    let t1 = knots[1];
    let p1 = tail[0].clone();
    let x1 = cand.x_at(t1)?;
    let u1 = cand.u_in_cell(t1, 0)?;
    let a = prob.phi_x_at(t1, &x1, &u1)?;
    let fx = prob.f_x_at(t1, &x1, &u1)?;
    let mass = head_mass(prob, t1);
    let p0: Vec<f64> = (0..n)
        .map(|j| {
            let adj: f64 = (0..n).map(|i| a[i * n + j] * p1[i]).sum();
            p1[j] + t1 * adj - lambda0 * weighted(mass, fx[j])
        })
        .collect();
    let mut out = vec![p0];
    out.append(&mut tail);
    Ok(out)
}

/// Normal-case adjoint `p(t) = -Z(t) ∫_t^∞ ω Z⁻¹ f_x ds`.
///
/// `Z` and `Y = Z⁻¹` (`Ẏ = Y φ_xᵀ`) are integrated together with the
/// per-cell increments of `∫ ω Y f_x`; the integral from `t` is the reverse
/// cumulative sum plus an exponential tail fitted to the last cell.
pub fn adjoint_representation(prob: &ControlProblem, cand: &CandidateProcess, opts: &OdeOptions) -> Result<AdjointSolution> {
    let n = prob.n;
    let nn = n * n;
    let knots = cand.grid.knots();
    let len = knots.len();
    let mut u = vec![0.0; prob.m];
    let mut rhs = |t: f64, y: &[f64], cell: usize, dy: &mut [f64]| -> Result<()> {
        let x = cand.x_at(t)?;
        cand.control.in_cell(t, cell, &mut u)?;
        let a = prob.phi_x_at(t, &x, &u)?;
        let fx = prob.f_x_at(t, &x, &u)?;
        let w = prob.omega.eval(t);
        let (z, rest) = y.split_at(nn);
        let yinv = &rest[..nn];
        for i in 0..n {
            for j in 0..n {
                // Ż = -Aᵀ Z, Ẏ = Y Aᵀ
                let mut sz = 0.0;
                let mut sy = 0.0;
                for k in 0..n {
                    sz += a[k * n + i] * z[k * n + j];
                    sy += yinv[i * n + k] * a[j * n + k];
                }
                dy[i * n + j] = -sz;
                dy[nn + i * n + j] = sy;
            }
        }
        for i in 0..n {
            let s: f64 = (0..n).map(|k| yinv[i * n + k] * fx[k]).sum();
            dy[2 * nn + i] = weighted(w, s);
        }
        Ok(())
    };
    let mut state = vec![0.0; 2 * nn + n];
    for i in 0..n {
        state[i * n + i] = 1.0;
        state[nn + i * n + i] = 1.0;
    }
    let pole = prob.omega.pole_exponent() < 0.0;
    let mut zs = Vec::with_capacity(len);
    let mut ys = Vec::with_capacity(len);
    let mut incr = vec![vec![0.0; n]; len - 1];
    zs.push(state[..nn].to_vec());
    ys.push(state[nn..2 * nn].to_vec());
    for k in 0..len - 1 {
        for v in &mut state[2 * nn..] {
            *v = 0.0;
        }
        solve_cell(&mut rhs, knots[k], knots[k + 1], &mut state, k, opts)?;
        incr[k] = state[2 * nn..].to_vec();
        if k == 0 && pole {
            let t1 = knots[1];
            let x1 = cand.x_at(t1)?;
            let u1 = cand.u_in_cell(t1, 0)?;
            let fx = prob.f_x_at(t1, &x1, &u1)?;
            let y1 = &state[nn..2 * nn];
            let mass = head_mass(prob, t1);
            incr[0] = (0..n)
                .map(|i| weighted(mass, (0..n).map(|j| y1[i * n + j] * fx[j]).sum()))
                .collect();
        }
        zs.push(state[..nn].to_vec());
        ys.push(state[nn..2 * nn].to_vec());
    }

    let mut max_cond = (0.0, 0.0);
    for (k, z) in zs.iter().enumerate() {
        let c = crate::integrate::state_condition_number(&DMatrix::from_row_slice(n, n, z));
        if c > max_cond.1 || c.is_nan() {
            max_cond = (knots[k], c);
        }
        if !(c <= MAX_COND) {
            return Err(Error::IllConditioned { t: knots[k], cond: c });
        }
    }

    let integrand = |k: usize| -> Result<Vec<f64>> {
        let t = knots[k];
        let x = cand.x_knot(k);
        let u = cand.u_knot(k)?;
        let fx = prob.f_x_at(t, x, &u)?;
        let w = prob.omega.eval(t);
        Ok((0..n)
            .map(|i| weighted(w, (0..n).map(|j| ys[k][i * n + j] * fx[j]).sum()))
            .collect())
    };
    let g_end = integrand(len - 1)?;
    let g_prev = integrand(len - 2)?;
    let (ne, np) = (norm(&g_end), norm(&g_prev));
    let tail: Vec<f64> = if ne == 0.0 {
        vec![0.0; n]
    } else {
        let rate = (np / ne).ln() / (knots[len - 1] - knots[len - 2]);
        if !(rate > 0.0) || !ne.is_finite() {
            return Err(Error::DivergentTail { t: knots[len - 1] });
        }
        g_end.iter().map(|v| v / rate).collect()
    };

    let mut q = tail;
    let mut p = vec![Vec::new(); len];
    for k in (0..len).rev() {
        if k < len - 1 {
            for i in 0..n {
                q[i] += incr[k][i];
            }
        }
        let z = &zs[k];
        p[k] = (0..n).map(|i| -(0..n).map(|j| z[i * n + j] * q[j]).sum::<f64>()).collect();
    }
    let mut a = AdjointSolution::assemble(prob, cand, p, 1.0, Route::Representation, None, Vec::new())?;
    a.max_cond = Some(max_cond);
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::problem::{Bound, ControlSet};
    use crate::weights::WeightSpec;

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
            &Grid::uniform(40.0, 800).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    fn exact(t: f64) -> f64 {
        let c = 1.0 + 2f64.sqrt();
        -2.0 * c * (-c * t).exp()
    }

    #[test]
    fn backward_route_reaches_closed_form() {
        let (p, c) = regulator();
        let a = adjoint_backward(&p, &c, 1.0, 30.0, &OdeOptions::default()).unwrap();
        assert_eq!(a.grid.t_max(), 30.0);
        assert!((a.p[0][0] - exact(0.0)).abs() < 1e-5 * exact(0.0).abs());
        assert!(a.terminal_error.unwrap() < 1e-2);
    }

    #[test]
    fn representation_matches_closed_form() {
        let (p, c) = regulator();
        let a = adjoint_representation(&p, &c, &OdeOptions::default()).unwrap();
        for (k, &t) in a.grid.knots().iter().enumerate() {
            if t > 20.0 {
                break;
            }
            assert!((a.p[k][0] - exact(t)).abs() <= 1e-6 * exact(t).abs(), "t={t}");
        }
        assert_eq!(a.max_cond.unwrap().1, 1.0);
    }

    #[test]
    fn zero_gradient_gives_zero_adjoint() {
        let s = Scope::new(1, 1);
        let p = ControlProblem::new(
            "flat",
            parse("u1^2", &s).unwrap(),
            vec![parse("-x1 + u1", &s).unwrap()],
            ControlSet::new(vec![Bound::closed(-1.0, 1.0)]).unwrap(),
            vec![1.0],
            WeightSpec::exp_decay(1.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(&p, &Grid::uniform(10.0, 50).unwrap(), vec![parse("exp(-t)", &ts).unwrap()], vec![parse("0", &ts).unwrap()]).unwrap();
        let b = adjoint_backward(&p, &c, 1.0, 10.0, &OdeOptions::default()).unwrap();
        let r = adjoint_representation(&p, &c, &OdeOptions::default()).unwrap();
        assert!(b.p.iter().chain(&r.p).all(|v| v[0] == 0.0));
    }

    #[test]
    fn atoms_must_sit_on_the_active_set() {
        let (p, c) = regulator();
        let p = p.with_constraints(vec![parse("x1 - 2", &Scope::new(1, 0)).unwrap()]).unwrap();
        let samples = SuppliedAdjoint::Samples(c.grid.knots().iter().map(|&t| vec![exact(t)]).collect());
        let off = AdjointSolution::supplied(&p, &c, samples.clone(), 1.0, Some(vec![vec![Atom { t: 1.0, mass: 0.5 }]]), 1e-8);
        assert!(matches!(off, Err(Error::AtomOffActiveSet { j: 1, .. })));
        let neg = AdjointSolution::supplied(&p, &c, samples.clone(), 1.0, Some(vec![vec![Atom { t: 0.0, mass: -1.0 }]]), 1e-8);
        assert!(matches!(neg, Err(Error::InvalidMeasure(_))));
        let a = AdjointSolution::supplied(&p, &c, samples, 1.0, Some(vec![vec![Atom { t: 0.0, mass: 0.5 }]]), 1e-8).unwrap();
        // p(0+) = p(0) + ν(0) g_x μ
        let right = a.at(1e-9).unwrap()[0];
        assert!((right - (exact(0.0) + 0.5)).abs() < 1e-6);
    }

    #[test]
    fn trivial_multiplier_is_detected() {
        let (p, c) = regulator();
        let zero = SuppliedAdjoint::Samples(vec![vec![0.0]; c.grid.len()]);
        assert!(AdjointSolution::supplied(&p, &c, zero.clone(), 0.0, None, 1e-8).unwrap().is_trivial());
        assert!(!AdjointSolution::supplied(&p, &c, zero, 1.0, None, 1e-8).unwrap().is_trivial());
    }
}
