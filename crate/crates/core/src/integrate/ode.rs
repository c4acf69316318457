//! Dormand–Prince 5(4) on grid cells.
//!
//! Integration never crosses a knot: each cell is solved separately, so a
//! control that jumps at knots is seen as smooth inside every call. The
//! right-hand side receives the cell index for that reason.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// `‖y‖` above this counts as blow-up.
    pub max_norm: f64,
    /// Fixed number of steps per cell instead of adaptive control.
    pub fixed_substeps: Option<usize>,
    pub max_steps_per_cell: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-11,
            atol: 1e-250,
            max_norm: 1e150,
            fixed_substeps: None,
            max_steps_per_cell: 100_000,
        }
    }
}

impl OdeOptions {
    pub fn fixed(substeps: usize) -> Self {
        OdeOptions {
            fixed_substeps: Some(substeps.max(1)),
            ..Default::default()
        }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Right-hand side `dy = F(t, y)` on cell `cell`.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[f64], cell: usize, dy: &mut [f64]) -> Result<()>;
}

impl<F> Rhs for F
where
    F: FnMut(f64, &[f64], usize, &mut [f64]) -> Result<()>,
{
    fn eval(&mut self, t: f64, y: &[f64], cell: usize, dy: &mut [f64]) -> Result<()> {
        self(t, y, cell, dy)
    }
}

struct Stepper {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y5: Vec<f64>,
}

impl Stepper {
    fn new(dim: usize) -> Self {
        Stepper {
            k: std::array::from_fn(|_| vec![0.0; dim]),
            tmp: vec![0.0; dim],
            y5: vec![0.0; dim],
        }
    }

    /// One DP step of size `h` from `(t, y)`; returns the scaled error norm.
    fn step<R: Rhs>(&mut self, rhs: &mut R, t: f64, y: &[f64], h: f64, cell: usize, opts: &OdeOptions) -> Result<f64> {
        let dim = y.len();
        rhs.eval(t, y, cell, &mut self.k[0])?;
        for s in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for j in 0..s {
                    acc += h * A[s][j] * self.k[j][i];
                }
                self.tmp[i] = acc;
            }
            rhs.eval(t + C[s] * h, &self.tmp, cell, &mut self.k[s])?;
        }
        let mut err: f64 = 0.0;
        for i in 0..dim {
            let mut y5 = y[i];
            let mut e = 0.0;
            for s in 0..7 {
                y5 += h * B5[s] * self.k[s][i];
                e += h * (B5[s] - B4[s]) * self.k[s][i];
            }
            self.y5[i] = y5;
            let scale = opts.atol + opts.rtol * y[i].abs().max(y5.abs());
            err = err.max(e.abs() / scale);
        }
        Ok(err)
    }
}

fn check_state(y: &[f64], t: f64, opts: &OdeOptions) -> Result<()> {
    let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !norm.is_finite() || norm > opts.max_norm {
        return Err(Error::BlowUp { t });
    }
    Ok(())
}

/// Advances `y` from `t0` to `t1` (either direction) inside cell `cell`.
pub fn solve_cell<R: Rhs>(rhs: &mut R, t0: f64, t1: f64, y: &mut [f64], cell: usize, opts: &OdeOptions) -> Result<()> {
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(());
    }
    let mut st = Stepper::new(y.len());
    if let Some(n) = opts.fixed_substeps {
        let h = span / n as f64;
        for j in 0..n {
            let t = t0 + j as f64 * h;
            st.step(rhs, t, y, h, cell, opts)?;
            y.copy_from_slice(&st.y5);
            check_state(y, t + h, opts)?;
        }
        return Ok(());
    }
    let mut t = t0;
    let mut h = span;
    let mut steps = 0;
    loop {
        let remaining = t1 - t;
        if remaining.abs() <= 1e-15 * t1.abs().max(t0.abs()).max(1e-300) {
            return Ok(());
        }
        if h.abs() > remaining.abs() {
            h = remaining;
        }
        let err = st.step(rhs, t, y, h, cell, opts)?;
        steps += 1;
        if err <= 1.0 {
            y.copy_from_slice(&st.y5);
            t += h;
            check_state(y, t, opts)?;
            let grow = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h *= grow;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
        if !err.is_finite() {
            return Err(Error::BlowUp { t });
        }
        if h.abs() < 1e-14 * t.abs().max(span.abs()) || steps > opts.max_steps_per_cell {
            return Err(Error::BlowUp { t });
        }
    }
}

/// Values at every knot of `knots`, starting from `y0` at the first knot
/// (forward) or at the last knot (backward).
pub fn integrate_knots<R: Rhs>(rhs: &mut R, knots: &[f64], y0: &[f64], backward: bool, opts: &OdeOptions) -> Result<Vec<Vec<f64>>> {
    let n = knots.len();
    let mut out = vec![Vec::new(); n];
    let mut y = y0.to_vec();
    check_state(&y, if backward { knots[n - 1] } else { knots[0] }, opts)?;
    if backward {
        out[n - 1] = y.clone();
        for k in (0..n - 1).rev() {
            solve_cell(rhs, knots[k + 1], knots[k], &mut y, k, opts)?;
            out[k] = y.clone();
        }
    } else {
        out[0] = y.clone();
        for k in 0..n - 1 {
            solve_cell(rhs, knots[k], knots[k + 1], &mut y, k, opts)?;
            out[k + 1] = y.clone();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay(_t: f64, y: &[f64], _c: usize, dy: &mut [f64]) -> Result<()> {
        dy[0] = -y[0];
        Ok(())
    }

    #[test]
    fn adaptive_matches_exponential() {
        let knots: Vec<f64> = (0..=10).map(|k| k as f64).collect();
        let ys = integrate_knots(&mut decay, &knots, &[1.0], false, &OdeOptions::default()).unwrap();
        for (t, y) in knots.iter().zip(&ys) {
            assert!((y[0] - (-t).exp()).abs() <= 1e-10 * (-t).exp());
        }
    }

    #[test]
    fn backward_recovers_initial_value() {
        let knots = [0.0, 0.5, 2.0];
        let ys = integrate_knots(&mut decay, &knots, &[(-2.0f64).exp()], true, &OdeOptions::default()).unwrap();
        assert!((ys[0][0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let err = |n: usize| {
            let knots: Vec<f64> = (0..=n).map(|k| k as f64 * 4.0 / n as f64).collect();
            let ys = integrate_knots(&mut decay, &knots, &[1.0], false, &OdeOptions::fixed(1)).unwrap();
            (ys[n][0] - (-4.0f64).exp()).abs()
        };
        let ratio = err(8) / err(16);
        assert!(ratio > 24.0, "ratio {ratio}");
    }

    #[test]
    fn finite_escape_is_blow_up() {
        let mut sq = |_t: f64, y: &[f64], _c: usize, dy: &mut [f64]| {
            dy[0] = y[0] * y[0];
            Ok(())
        };
        let knots: Vec<f64> = (0..=20).map(|k| k as f64 * 0.1).collect();
        let r = integrate_knots(&mut sq, &knots, &[1.0], false, &OdeOptions::default());
        match r {
            Err(Error::BlowUp { t }) => assert!(t <= 1.0 + 1e-9, "escape reported at {t}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }
}
