use nalgebra::DMatrix;

use super::grid::Grid;
use super::ode::{integrate_knots, OdeOptions};
use super::path::{Interp, Path};
use crate::error::{Error, Result};
use crate::problem::{CandidateProcess, Control, ControlProblem};

/// Integrates `ẋ = φ(t, x, u(t))` on `knots`; `control(t, cell, u)` fills the
/// control valid inside `cell`.
pub fn integrate_state<C>(prob: &ControlProblem, mut control: C, x0: &[f64], knots: &[f64], opts: &OdeOptions) -> Result<Vec<Vec<f64>>>
where
    C: FnMut(f64, usize, &mut [f64]) -> Result<()>,
{
    if x0.len() != prob.n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, n = {}", x0.len(), prob.n)));
    }
    let mut u = vec![0.0; prob.m];
    let mut rhs = |t: f64, y: &[f64], cell: usize, dy: &mut [f64]| -> Result<()> {
        control(t, cell, &mut u)?;
        prob.phi_into(t, y, &u, dy)
    };
    integrate_knots(&mut rhs, knots, x0, false, opts)
}

/// Trajectory generated by `control` from `x0`.
pub fn solve_state(prob: &ControlProblem, control: &Control, x0: &[f64], grid: &Grid, opts: &OdeOptions) -> Result<CandidateProcess> {
    if control.dim() != prob.m {
        return Err(Error::DimensionMismatch(format!("control has {} components, m = {}", control.dim(), prob.m)));
    }
    if let Control::Samples(s) = control {
        if s.len() != grid.len() {
            return Err(Error::DimensionMismatch(format!("{} control samples for {} knots", s.len(), grid.len())));
        }
    }
    let xs = integrate_state(prob, |t, cell, u| control.in_cell(t, cell, u), x0, grid.knots(), opts)?;
    let x = match control {
        Control::Exprs(_) => {
            let mut derivs = Vec::with_capacity(xs.len());
            for (k, &t) in grid.knots().iter().enumerate() {
                let u = control.at_knot(k, t)?;
                derivs.push(prob.phi_at(t, &xs[k], &u)?);
            }
            Path::hermite(grid.clone(), xs, derivs)
        }
        Control::Samples(_) => Path::new(grid.clone(), xs, Interp::Linear),
    };
    Ok(CandidateProcess {
        grid: grid.clone(),
        x,
        control: control.clone(),
        x_exprs: None,
    })
}

/// Normalized fundamental matrix of `ż = -φ_xᵀ z` along a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct FundamentalMatrix {
    pub grid: Grid,
    pub n: usize,
    /// Row-major `Z(t_k)`.
    pub z: Vec<Vec<f64>>,
    /// 2-norm condition number of `Z(t_k)`.
    pub cond: Vec<f64>,
}

impl FundamentalMatrix {
    pub fn matrix(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.z[k])
    }

    pub fn max_cond(&self) -> (f64, f64) {
        self.cond
            .iter()
            .zip(self.grid.knots())
            .fold((0.0, 0.0), |acc, (&c, &t)| if c > acc.1 || c.is_nan() { (t, c) } else { acc })
    }

    /// `max_k ‖Z(t_k) Z(t_k)^{-1} - I‖_max`.
    pub fn inverse_consistency(&self) -> f64 {
        let id = DMatrix::<f64>::identity(self.n, self.n);
        (0..self.z.len())
            .map(|k| {
                let m = self.matrix(k);
                match m.clone().lu().try_inverse() {
                    Some(inv) => (m * inv - &id).amax(),
                    None => f64::INFINITY,
                }
            })
            .fold(0.0, f64::max)
    }
}

pub(crate) fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `Ż = -φ_xᵀ(t, x*, u*) Z`, `Z(0) = I`, on the candidate's grid.
pub fn fundamental_matrix(prob: &ControlProblem, cand: &CandidateProcess, opts: &OdeOptions) -> Result<FundamentalMatrix> {
    let n = prob.n;
    let mut u = vec![0.0; prob.m];
    let mut rhs = |t: f64, y: &[f64], cell: usize, dy: &mut [f64]| -> Result<()> {
        let x = cand.x_at(t)?;
        cand.control.in_cell(t, cell, &mut u)?;
        let a = prob.phi_x_at(t, &x, &u)?;
        // (-Aᵀ Z)_{ij} = -Σ_k A_{ki} Z_{kj}
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += a[k * n + i] * y[k * n + j];
                }
                dy[i * n + j] = -s;
            }
        }
        Ok(())
    };
    let mut z0 = vec![0.0; n * n];
    for i in 0..n {
        z0[i * n + i] = 1.0;
    }
    let z = integrate_knots(&mut rhs, cand.grid.knots(), &z0, false, opts)?;
    let cond = z
        .iter()
        .map(|zk| condition_number(&DMatrix::from_row_slice(n, n, zk)))
        .collect();
    Ok(FundamentalMatrix {
        grid: cand.grid.clone(),
        n,
        z,
        cond,
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

    fn u_star() -> Control {
        Control::Exprs(vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &Scope::time()).unwrap()])
    }

    #[test]
    fn regulator_state_matches_closed_form() {
        let p = regulator();
        // The open-loop system has the unstable mode e^{2t}, so relative errors grow
        // like e^{(1+√2)t}; keep the horizon short.
        let g = Grid::uniform(3.0, 60).unwrap();
        let c = solve_state(&p, &u_star(), &[2.0], &g, &OdeOptions::default()).unwrap();
        for (k, &t) in g.knots().iter().enumerate() {
            let exact = 2.0 * ((1.0 - 2f64.sqrt()) * t).exp();
            assert!((c.x_knot(k)[0] - exact).abs() <= 1e-6 * exact);
        }
    }

    #[test]
    fn zero_dynamics_keeps_initial_state() {
        let s = Scope::new(2, 1);
        let p = ControlProblem::new(
            "still",
            parse("x1", &s).unwrap(),
            vec![parse("0", &s).unwrap(), parse("0*u1", &s).unwrap()],
            ControlSet::new(vec![Bound::closed(0.0, 1.0)]).unwrap(),
            vec![1.5, -0.5],
            WeightSpec::exp_decay(1.0),
            WeightSpec::exp_decay(1.0),
        )
        .unwrap();
        let g = Grid::uniform(5.0, 10).unwrap();
        let c = solve_state(&p, &Control::Samples(vec![vec![0.5]; 11]), &[1.5, -0.5], &g, &OdeOptions::default()).unwrap();
        assert!(c.x.values.iter().all(|v| v == &vec![1.5, -0.5]));
        let z = fundamental_matrix(&p, &c, &OdeOptions::default()).unwrap();
        assert!(z.z.iter().all(|m| m == &vec![1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn regulator_fundamental_matrix() {
        let p = regulator();
        let g = Grid::uniform(20.0, 100).unwrap();
        let c = solve_state(&p, &u_star(), &[2.0], &g, &OdeOptions::default()).unwrap();
        let z = fundamental_matrix(&p, &c, &OdeOptions::default()).unwrap();
        assert_eq!(z.z[0], vec![1.0]);
        for (k, &t) in g.knots().iter().enumerate() {
            assert!((z.z[k][0] - (-2.0 * t).exp()).abs() <= 1e-9 * (-2.0 * t).exp());
        }
        assert!(z.inverse_consistency() < 1e-8);
    }
}
