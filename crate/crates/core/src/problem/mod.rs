//! Control problems, candidate processes and the assumption audits.

mod audit;
mod constraints;
mod parse;

use std::fmt;

pub use audit::{
    audit_assumptions, check_objective_gradient, halton, jacobian_fd_check, AssumptionReport, AuditEntry, AuditOptions, GradientDiagnostic,
    Witness,
};
pub use constraints::{active_indices, slater_check, ActiveSet, SlaterResult};
pub use parse::{parse_problem, parse_problem_with};

use crate::config::Mode;
use crate::error::{Error, Result};
use crate::expr::{Expr, Point, Var};
use crate::integrate::grid::Grid;
use crate::integrate::path::{norm, Interp, Path};
use crate::integrate::quadrature::gk15_vec;
use crate::weights::WeightSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Min,
    Max,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Min => "min",
            Sense::Max => "max",
        })
    }
}

/// One coordinate of a box control set. Infinite ends are always open.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bound {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Bound {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Bound {
            lo,
            hi,
            lo_open: lo.is_infinite(),
            hi_open: hi.is_infinite(),
        }
    }

    pub fn real_line() -> Self {
        Bound::closed(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn half_open(lo: f64, hi: f64) -> Self {
        Bound {
            lo,
            hi,
            lo_open: lo.is_infinite(),
            hi_open: true,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lo <= self.hi) || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        let lo_ok = if self.lo_open { v > self.lo } else { v >= self.lo - tol };
        let hi_ok = if self.hi_open { v < self.hi } else { v <= self.hi + tol };
        lo_ok && hi_ok
    }

    /// Upper end usable for evaluation: `hi` itself, or a point just inside
    /// when the end is open and finite.
    pub fn inner_hi(&self) -> f64 {
        if self.hi_open && self.hi.is_finite() {
            self.hi - OPEN_MARGIN * (self.hi - self.lo).abs().max(1.0)
        } else {
            self.hi
        }
    }

    pub fn inner_lo(&self) -> f64 {
        if self.lo_open && self.lo.is_finite() {
            self.lo + OPEN_MARGIN * (self.hi - self.lo).abs().max(1.0)
        } else {
            self.lo
        }
    }

    /// Nearest evaluable point of the closure.
    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.inner_lo()).min(self.inner_hi())
    }
}

/// Distance kept from a finite open end when sampling it.
pub const OPEN_MARGIN: f64 = 1e-12;

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = if self.lo_open { '(' } else { '[' };
        let r = if self.hi_open { ')' } else { ']' };
        write!(f, "{l}{}, {}{r}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub bounds: Vec<Bound>,
    pub convex: bool,
}

impl ControlSet {
    pub fn new(bounds: Vec<Bound>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::EmptyControlSet("no control coordinates declared".into()));
        }
        for (i, b) in bounds.iter().enumerate() {
            if b.is_empty() {
                return Err(Error::EmptyControlSet(format!("u{} in {b}", i + 1)));
            }
        }
        Ok(ControlSet { bounds, convex: true })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        u.len() == self.bounds.len() && self.bounds.iter().zip(u).all(|(b, &v)| b.contains(v, tol))
    }
}

/// Closed-form candidate data declared with a problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub x: Vec<Expr>,
    pub u: Vec<Expr>,
    pub p: Option<Vec<Expr>>,
    pub lambda0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    pub name: String,
    pub n: usize,
    pub m: usize,
    /// Integrand in the minimization convention.
    pub f: Expr,
    pub phi: Vec<Expr>,
    pub f_x: Vec<Expr>,
    pub f_u: Vec<Expr>,
    /// `phi_x[i][j] = ∂φ_i/∂x_j`.
    pub phi_x: Vec<Vec<Expr>>,
    pub phi_u: Vec<Vec<Expr>>,
    pub g: Vec<Expr>,
    pub g_x: Vec<Vec<Expr>>,
    pub controls: ControlSet,
    pub x0: Vec<f64>,
    pub omega: WeightSpec,
    pub nu: WeightSpec,
    pub eta: Option<WeightSpec>,
    pub p_exp: f64,
    pub sense: Sense,
    pub params: Vec<(String, f64)>,
    pub candidate: Option<ClosedForm>,
}

fn gradient(e: &Expr, vars: impl Iterator<Item = Var>) -> Vec<Expr> {
    vars.map(|v| e.diff(v)).collect()
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        f: Expr,
        phi: Vec<Expr>,
        controls: ControlSet,
        x0: Vec<f64>,
        omega: WeightSpec,
        nu: WeightSpec,
    ) -> Result<Self> {
        let n = x0.len();
        let m = controls.dim();
        if phi.len() != n {
            return Err(Error::DimensionMismatch(format!("{} dynamics for state dimension {n}", phi.len())));
        }
        let xs = || (0..n).map(Var::X);
        let us = || (0..m).map(Var::U);
        let f_x = gradient(&f, xs());
        let f_u = gradient(&f, us());
        let phi_x = phi.iter().map(|e| gradient(e, xs())).collect();
        let phi_u = phi.iter().map(|e| gradient(e, us())).collect();
        Ok(ControlProblem {
            name: name.into(),
            n,
            m,
            f,
            phi,
            f_x,
            f_u,
            phi_x,
            phi_u,
            g: Vec::new(),
            g_x: Vec::new(),
            controls,
            x0,
            omega,
            nu,
            eta: None,
            p_exp: 2.0,
            sense: Sense::Min,
            params: Vec::new(),
            candidate: None,
        })
    }

    pub fn with_eta(mut self, eta: WeightSpec) -> Self {
        self.eta = Some(eta);
        self
    }

    pub fn with_p_exp(mut self, p: f64) -> Self {
        self.p_exp = p;
        self
    }

    pub fn with_constraints(mut self, g: Vec<Expr>) -> Result<Self> {
        for (j, e) in g.iter().enumerate() {
            if (0..self.m).any(|i| e.depends_on(Var::U(i))) {
                return Err(Error::DimensionMismatch(format!("constraint g{} depends on the control", j + 1)));
            }
        }
        self.g_x = g.iter().map(|e| gradient(e, (0..self.n).map(Var::X))).collect();
        self.g = g;
        Ok(self)
    }

    pub fn with_candidate(mut self, c: ClosedForm) -> Result<Self> {
        if c.x.len() != self.n || c.u.len() != self.m || c.p.as_ref().is_some_and(|p| p.len() != self.n) {
            return Err(Error::DimensionMismatch("candidate closed form has wrong dimensions".into()));
        }
        self.candidate = Some(c);
        Ok(self)
    }

    /// Marks the problem as a maximization; the stored integrand is negated.
    pub fn maximize(mut self) -> Self {
        if self.sense == Sense::Min {
            self.f = crate::expr::neg(self.f);
            self.f_x = self.f_x.into_iter().map(crate::expr::neg).collect();
            self.f_u = self.f_u.into_iter().map(crate::expr::neg).collect();
            self.sense = Sense::Max;
        }
        self
    }

    pub fn l(&self) -> usize {
        self.g.len()
    }

    pub fn f_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<f64> {
        self.f.eval(&Point::new(t, x, u))
    }

    pub fn f_x_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = Point::new(t, x, u);
        self.f_x.iter().map(|e| e.eval(&p)).collect()
    }

    pub fn f_u_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = Point::new(t, x, u);
        self.f_u.iter().map(|e| e.eval(&p)).collect()
    }

    pub fn phi_into(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        let p = Point::new(t, x, u);
        for (o, e) in out.iter_mut().zip(&self.phi) {
            *o = e.eval(&p)?;
        }
        Ok(())
    }

    pub fn phi_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.phi_into(t, x, u, &mut out)?;
        Ok(out)
    }

    /// Row-major `n × n` Jacobian `∂φ/∂x`.
    pub fn phi_x_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = Point::new(t, x, u);
        self.phi_x.iter().flatten().map(|e| e.eval(&p)).collect()
    }

    /// Row-major `n × m` Jacobian `∂φ/∂u`.
    pub fn phi_u_at(&self, t: f64, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let p = Point::new(t, x, u);
        self.phi_u.iter().flatten().map(|e| e.eval(&p)).collect()
    }

    pub fn g_at(&self, j: usize, t: f64, x: &[f64]) -> Result<f64> {
        self.g[j].eval(&Point::new(t, x, &[]))
    }

    pub fn g_x_at(&self, j: usize, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let p = Point::new(t, x, &[]);
        self.g_x[j].iter().map(|e| e.eval(&p)).collect()
    }

    /// Tube radius around `x*(t)`: `γ` (strong) or `γ η(t)` (weak).
    pub fn tube_radius(&self, mode: Mode, gamma: f64, t: f64) -> Result<f64> {
        match mode {
            Mode::Strong => Ok(gamma),
            Mode::Weak => {
                let eta = self.eta.as_ref().ok_or(Error::MissingEta)?;
                Ok(gamma * eta.eval(t))
            }
        }
    }

    /// Candidate process built from the declared closed form.
    pub fn closed_form_candidate(&self, grid: &Grid) -> Result<Option<CandidateProcess>> {
        match &self.candidate {
            Some(c) => Ok(Some(CandidateProcess::from_closed_form(self, grid, c.x.clone(), c.u.clone())?)),
            None => Ok(None),
        }
    }
}

/// Control of a candidate: samples at knots (left-continuous) or expressions in `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// `u(t_k)`; on `(t_k, t_{k+1}]` the value `u(t_{k+1})` applies.
    Samples(Vec<Vec<f64>>),
    Exprs(Vec<Expr>),
}

impl Control {
    pub fn dim(&self) -> usize {
        match self {
            Control::Samples(s) => s.first().map_or(0, Vec::len),
            Control::Exprs(e) => e.len(),
        }
    }

    /// Value inside cell `cell` at time `t`.
    pub fn in_cell(&self, t: f64, cell: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Control::Samples(s) => out.copy_from_slice(&s[cell + 1]),
            Control::Exprs(e) => {
                let p = Point::time(t);
                for (o, ex) in out.iter_mut().zip(e) {
                    *o = ex.eval(&p)?;
                }
            }
        }
        Ok(())
    }

    /// Value at knot `k` (time `t`).
    pub fn at_knot(&self, k: usize, t: f64) -> Result<Vec<f64>> {
        match self {
            Control::Samples(s) => Ok(s[k].clone()),
            Control::Exprs(e) => {
                let p = Point::time(t);
                e.iter().map(|ex| ex.eval(&p)).collect()
            }
        }
    }
}

/// Sampled state-control pair on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateProcess {
    pub grid: Grid,
    pub x: Path,
    pub control: Control,
    /// Closed-form state used by [`CandidateProcess::x_at`] when present.
    pub x_exprs: Option<Vec<Expr>>,
}

impl CandidateProcess {
    pub fn from_closed_form(prob: &ControlProblem, grid: &Grid, x: Vec<Expr>, u: Vec<Expr>) -> Result<Self> {
        if x.len() != prob.n || u.len() != prob.m {
            return Err(Error::DimensionMismatch("closed form dimensions differ from the problem".into()));
        }
        for e in x.iter().chain(&u) {
            if (0..prob.n).any(|i| e.depends_on(Var::X(i))) || (0..prob.m).any(|i| e.depends_on(Var::U(i))) {
                return Err(Error::DimensionMismatch("closed forms may depend on t only".into()));
            }
        }
        let dx: Vec<Expr> = x.iter().map(|e| e.diff(Var::T)).collect();
        let mut values = Vec::with_capacity(grid.len());
        let mut derivs = Vec::with_capacity(grid.len());
        for &t in grid.knots() {
            let p = Point::time(t);
            values.push(x.iter().map(|e| e.eval(&p)).collect::<Result<Vec<f64>>>()?);
            derivs.push(dx.iter().map(|e| e.eval(&p)).collect::<Result<Vec<f64>>>()?);
        }
        Ok(CandidateProcess {
            grid: grid.clone(),
            x: Path::hermite(grid.clone(), values, derivs),
            control: Control::Exprs(u),
            x_exprs: Some(x),
        })
    }

    pub fn from_samples(grid: Grid, x: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> Result<Self> {
        if x.len() != grid.len() || u.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} state and {} control samples on a grid of {} knots",
                x.len(),
                u.len(),
                grid.len()
            )));
        }
        Ok(CandidateProcess {
            x: Path::new(grid.clone(), x, Interp::Linear),
            grid,
            control: Control::Samples(u),
            x_exprs: None,
        })
    }

    pub fn n(&self) -> usize {
        self.x.dim()
    }

    pub fn m(&self) -> usize {
        self.control.dim()
    }

    pub fn x_at(&self, t: f64) -> Result<Vec<f64>> {
        match &self.x_exprs {
            Some(e) => {
                let p = Point::time(t);
                e.iter().map(|ex| ex.eval(&p)).collect()
            }
            None => Ok(self.x.at(t)),
        }
    }

    pub fn x_knot(&self, k: usize) -> &[f64] {
        &self.x.values[k]
    }

    pub fn u_knot(&self, k: usize) -> Result<Vec<f64>> {
        self.control.at_knot(k, self.grid.knots()[k])
    }

    pub fn u_in_cell(&self, t: f64, cell: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.m()];
        self.control.in_cell(t, cell, &mut out)?;
        Ok(out)
    }

    /// `u` at an arbitrary time under the left-continuous convention.
    pub fn u_at(&self, t: f64) -> Result<Vec<f64>> {
        if t <= 0.0 {
            return self.u_knot(0);
        }
        self.u_in_cell(t, self.grid.cell_of(t))
    }

    pub fn u_samples(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.grid.len()).map(|k| self.u_knot(k)).collect()
    }

    /// First knot whose control leaves `U` (beyond `tol`).
    pub fn infeasible_control(&self, prob: &ControlProblem, tol: f64) -> Result<Option<(f64, Vec<f64>)>> {
        for (k, &t) in self.grid.knots().iter().enumerate() {
            let u = self.u_knot(k)?;
            if !prob.controls.contains(&u, tol) {
                return Ok(Some((t, u)));
            }
        }
        Ok(None)
    }

    /// Restriction to knots `≤ t_end`, keeping the closed forms.
    pub fn truncated(&self, t_end: f64) -> Result<Self> {
        let grid = self.grid.truncated(t_end)?;
        let keep = grid.len() - 1;
        let last_t = grid.t_max();
        let mut values: Vec<Vec<f64>> = self.x.values[..keep].to_vec();
        values.push(self.x_at(last_t)?);
        let x = match &self.x.derivs {
            Some(d) if self.x_exprs.is_some() => {
                let mut derivs = d[..keep].to_vec();
                let p = Point::time(last_t);
                let dx = self.x_exprs.as_ref().unwrap().iter().map(|e| e.diff(Var::T).eval(&p));
                derivs.push(dx.collect::<Result<Vec<f64>>>()?);
                Path::hermite(grid.clone(), values, derivs)
            }
            _ => Path::new(grid.clone(), values, self.x.interp),
        };
        let control = match &self.control {
            Control::Samples(s) => {
                let mut s2 = s[..keep].to_vec();
                s2.push(self.u_at(last_t)?);
                Control::Samples(s2)
            }
            c => c.clone(),
        };
        Ok(CandidateProcess {
            grid,
            x,
            control,
            x_exprs: self.x_exprs.clone(),
        })
    }
}

/// Largest per-cell defect `‖x(t_{k+1}) - x(t_k) - ∫ φ‖ / max(1, ‖x(t_{k+1})‖)`
/// (15-point Kronrod per cell).
pub fn state_residual(prob: &ControlProblem, cand: &CandidateProcess) -> Result<(f64, f64)> {
    let knots = cand.grid.knots();
    let mut worst = (0.0, 0.0);
    let mut u = vec![0.0; prob.m];
    for k in 0..cand.grid.cells() {
        let mut integrand = |s: f64| -> Result<Vec<f64>> {
            let x = cand.x_at(s)?;
            cand.control.in_cell(s, k, &mut u)?;
            prob.phi_at(s, &x, &u)
        };
        let (int, _) = gk15_vec(&mut integrand, knots[k], knots[k + 1], prob.n)?;
        let x0 = cand.x_at(knots[k])?;
        let x1 = cand.x_at(knots[k + 1])?;
        let d = (0..prob.n)
            .map(|i| (x1[i] - x0[i] - int[i]).powi(2))
            .sum::<f64>()
            .sqrt()
            / norm(&x1).max(1.0);
        if d > worst.1 {
            worst = (knots[k + 1], d);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};

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
    fn jacobians_are_derived() {
        let p = regulator();
        assert_eq!(p.f_x_at(0.0, &[3.0], &[1.0]).unwrap(), vec![3.0]);
        assert_eq!(p.f_u_at(0.0, &[3.0], &[1.0]).unwrap(), vec![1.0]);
        assert_eq!(p.phi_x_at(0.0, &[3.0], &[1.0]).unwrap(), vec![2.0]);
        assert_eq!(p.phi_u_at(0.0, &[3.0], &[1.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn maximize_negates_integrand() {
        let p = regulator().maximize();
        assert_eq!(p.f_at(0.0, &[1.0], &[1.0]).unwrap(), -1.0);
        assert_eq!(p.f_x_at(0.0, &[3.0], &[1.0]).unwrap(), vec![-3.0]);
    }

    #[test]
    fn open_bounds() {
        let b = Bound::half_open(0.0, 1.0);
        assert!(b.contains(0.5, 0.0));
        assert!(!b.contains(1.0, 1e-3));
        assert!(b.inner_hi() < 1.0);
        assert!(Bound::closed(1.0, 0.0).is_empty());
        assert!(matches!(ControlSet::new(vec![]), Err(Error::EmptyControlSet(_))));
    }

    #[test]
    fn closed_form_candidate_has_small_residual() {
        let p = regulator();
        let s = Scope::time();
        let x = parse("2*exp((1 - sqrt(2))*t)", &s).unwrap();
        let u = parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &s).unwrap();
        let grid = Grid::standard(30.0, 1024).unwrap();
        let c = CandidateProcess::from_closed_form(&p, &grid, vec![x], vec![u]).unwrap();
        let (_, r) = state_residual(&p, &c).unwrap();
        assert!(r < 1e-12, "residual {r}");
        let t = c.truncated(10.0).unwrap();
        assert_eq!(t.grid.t_max(), 10.0);
    }
}
