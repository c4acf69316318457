//! Arrow-type sufficient condition: concavity in `x` of the maximized
//! Pontryagin function on the tube around the candidate.

use std::fmt;

use crate::config::{Mode, Tolerances, Verdict};
use crate::error::Result;
use crate::pmp::{sup_h, AdjointSolution, MaxOptions, TRUSTED_FRACTION};
use crate::problem::halton;
use crate::problem::{CandidateProcess, ControlProblem};

/// Sampled pairs per time slice.
pub const PAIRS: usize = 64;
/// Upper bound on the number of time slices examined.
pub const MAX_SLICES: usize = 64;

/// `𝓗(t, x, p) = sup_{u ∈ U} H(t, x, u, p, 1)`.
pub fn hamiltonian_sup(prob: &ControlProblem, t: f64, x: &[f64], p: &[f64]) -> Result<f64> {
    let hint: Vec<f64> = prob.controls.bounds.iter().map(|b| b.clamp(0.0)).collect();
    Ok(sup_h(prob, t, x, p, 1.0, &hint, &MaxOptions::default())?.value)
}

fn h_sup(prob: &ControlProblem, t: f64, x: &[f64], p: &[f64], hint: &[f64], opts: &MaxOptions) -> Result<f64> {
    let v = sup_h(prob, t, x, p, 1.0, hint, opts)?.value;
    Ok(if v.is_nan() { f64::NEG_INFINITY } else { v })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceReport {
    pub t: f64,
    pub verdict: Verdict,
    /// Largest `(𝓗(x₁)+𝓗(x₂))/2 - 𝓗((x₁+x₂)/2)` over the sampled pairs.
    pub worst: f64,
    pub pair: Option<(Vec<f64>, Vec<f64>)>,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityReport {
    pub slices: Vec<SliceReport>,
    pub verdict: Verdict,
}

impl ConcavityReport {
    pub fn worst(&self) -> Option<&SliceReport> {
        self.slices.iter().max_by(|a, b| a.worst.total_cmp(&b.worst))
    }
}

impl fmt::Display for ConcavityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "[sufficiency]")?;
        writeln!(f, "verdict   = {}", self.verdict)?;
        writeln!(f, "slices    = {}", self.slices.len())?;
        if let Some(w) = self.worst() {
            writeln!(f, "worst     = {:e} at t={:e}", w.worst, w.t)?;
            if let (Verdict::Fail, Some((a, b))) = (w.verdict, &w.pair) {
                writeln!(f, "witness   = {a:?} / {b:?}")?;
            }
        }
        Ok(())
    }
}

/// Midpoint concavity of `x ↦ 𝓗(t, x, p(t))` on the closed tube of radius
/// `γ` (strong) or `γ η(t)` (weak) around `x*(t)`.
///
/// Pairs are symmetric about `x*(t)` (half on the boundary sphere) plus a
/// Halton fill of the ball; for `n = 1` second differences on a 9-point
/// stencil across the tube are tested as well.
pub fn check_arrow(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    adj: &AdjointSolution,
    gamma: f64,
    mode: Mode,
    tol: &Tolerances,
) -> Result<ConcavityReport> {
    let n = prob.n;
    let opts = MaxOptions::default();
    let t_end = TRUSTED_FRACTION * cand.grid.t_max();
    let knots: Vec<usize> = (0..cand.grid.len())
        .filter(|&k| cand.grid.knots()[k] <= t_end && prob.omega.eval(cand.grid.knots()[k]).is_finite())
        .collect();
    let stride = knots.len().div_ceil(MAX_SLICES).max(1);
    let mut slices = Vec::new();
    for &k in knots.iter().step_by(stride) {
        let t = cand.grid.knots()[k];
        let xs = cand.x_knot(k);
        let us = cand.u_knot(k)?;
        let p = &adj.p[k];
        let r = prob.tube_radius(mode, gamma, t)?;
        let h = |x: &[f64]| h_sup(prob, t, x, p, &us, &opts);
        let h_star = h(xs)?;
        let mut worst = f64::NEG_INFINITY;
        let mut pair = None;
        let mut count = 0;
        let mut record = |x1: Vec<f64>, x2: Vec<f64>, h1: f64, h2: f64, hm: f64| {
            count += 1;
            let lhs = 0.5 * (h1 + h2);
            let excess = if lhs == f64::NEG_INFINITY { f64::NEG_INFINITY } else { lhs - hm };
            let allowed = tol.concavity * (1.0 + hm.abs());
            let score = excess - allowed;
            if score > worst || (excess.is_nan() && !worst.is_nan()) {
                worst = score;
                pair = Some((x1, x2));
            }
        };
        let point = |j: usize, offset: u64| -> Vec<f64> {
            // Halton point mapped into the ball; half of the symmetric pairs lie on the sphere.
            let mut d: Vec<f64> = (0..n).map(|i| 2.0 * halton(offset + j as u64 + 1, i) - 1.0).collect();
            let len = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let radius = if j % 2 == 0 { r } else { r * halton(offset + j as u64 + 1, n).sqrt() };
            for v in &mut d {
                *v *= radius / len;
            }
            d
        };
        for j in 0..PAIRS / 2 {
            let d = point(j, 0);
            let x1: Vec<f64> = xs.iter().zip(&d).map(|(a, b)| a + b).collect();
            let x2: Vec<f64> = xs.iter().zip(&d).map(|(a, b)| a - b).collect();
            let (h1, h2) = (h(&x1)?, h(&x2)?);
            record(x1, x2, h1, h2, h_star);
        }
        for j in 0..PAIRS / 2 {
            let a = point(j, 1000);
            let b = point(j, 5000);
            let x1: Vec<f64> = xs.iter().zip(&a).map(|(x, d)| x + d).collect();
            let x2: Vec<f64> = xs.iter().zip(&b).map(|(x, d)| x + d).collect();
            let xm: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| 0.5 * (a + b)).collect();
            let (h1, h2, hm) = (h(&x1)?, h(&x2)?, h(&xm)?);
            record(x1, x2, h1, h2, hm);
        }
        if n == 1 {
            let xj: Vec<f64> = (-4..=4).map(|j| xs[0] + r * j as f64 / 4.0).collect();
            let hj = xj.iter().map(|&x| h(&[x])).collect::<Result<Vec<f64>>>()?;
            for j in 1..8 {
                record(vec![xj[j - 1]], vec![xj[j + 1]], hj[j - 1], hj[j + 1], hj[j]);
            }
        }
        let verdict = Verdict::from_bool(worst <= 0.0);
        slices.push(SliceReport {
            t,
            verdict,
            worst,
            pair,
            pairs: count,
        });
    }
    let verdict = Verdict::from_bool(slices.iter().all(|s| s.verdict == Verdict::Pass));
    Ok(ConcavityReport { slices, verdict })
}
