//! Generalized needle variations: equal-slot set families, perturbed
//! controls and numerical checks of the approximation estimates.

use std::io::{self, Write};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::integrate::grid::{Grid, T_FLOOR};
use crate::integrate::path::norm;
use crate::integrate::quadrature::{gk15, gk15_vec};
use crate::integrate::{integrate_knots, OdeOptions};
use crate::problem::{CandidateProcess, Control, ControlProblem};

/// Half-open interval `[lo, hi)`.
pub type Interval = (f64, f64);

/// Families `M_1(α), …, M_m(α)` on `[t0, t1]`, `0 ≤ α ≤ 1/m`.
///
/// `[t0, t1]` is cut into `N` subintervals of width `h`, each split into `m`
/// slots of width `h/m`; `M_i(α)` is the union over subintervals of
/// `[start of slot i, start + αh)`. Endpoints are computed in exact rational
/// arithmetic and rounded once, so measure, nesting and disjointness hold
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NeedleFamily {
    pub t0: f64,
    pub t1: f64,
    pub m: usize,
    pub subintervals: usize,
    t0_r: BigRational,
    width_r: BigRational,
}

fn rational(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

fn to_f64(v: &BigRational) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

pub fn build_family(t0: f64, t1: f64, m: usize, subintervals: usize) -> Result<NeedleFamily> {
    if !(t1 > t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::InvalidInterval { t0, t1 });
    }
    if m == 0 || subintervals == 0 {
        return Err(Error::Config(format!("needle family needs m >= 1 and N >= 1 (m={m}, N={subintervals})")));
    }
    let t0_r = rational(t0);
    let width_r = rational(t1) - &t0_r;
    Ok(NeedleFamily {
        t0,
        t1,
        m,
        subintervals,
        t0_r,
        width_r,
    })
}

impl NeedleFamily {
    /// Subinterval width `h`.
    pub fn h(&self) -> f64 {
        (self.t1 - self.t0) / self.subintervals as f64
    }

    fn check(&self, i: usize, alpha: f64) -> Result<()> {
        if i == 0 || i > self.m {
            return Err(Error::Config(format!("family index {i} outside 1..={}", self.m)));
        }
        if !(0.0..=1.0 / self.m as f64).contains(&alpha) {
            return Err(Error::AlphaOutOfRange { alpha, m: self.m });
        }
        Ok(())
    }

    fn slot_start_r(&self, j: usize, i: usize) -> BigRational {
        let num = BigInt::from(j * self.m + (i - 1));
        let den = BigInt::from(self.subintervals * self.m);
        &self.t0_r + &self.width_r * BigRational::new(num, den)
    }

    /// Exact endpoints of `M_i(α)`; empty for `α = 0`.
    pub fn exact_set(&self, i: usize, alpha: f64) -> Result<Vec<(BigRational, BigRational)>> {
        self.check(i, alpha)?;
        if alpha == 0.0 {
            return Ok(Vec::new());
        }
        let len = rational(alpha) * &self.width_r / BigRational::from_integer(BigInt::from(self.subintervals));
        Ok((0..self.subintervals)
            .map(|j| {
                let s = self.slot_start_r(j, i);
                let e = &s + &len;
                (s, e)
            })
            .collect())
    }

    /// `|M_i(α)|` in exact arithmetic; equals `α (t1 - t0)` with both read as exact rationals.
    pub fn exact_measure(&self, i: usize, alpha: f64) -> Result<BigRational> {
        Ok(self
            .exact_set(i, alpha)?
            .into_iter()
            .fold(BigRational::zero(), |acc, (a, b)| acc + (b - a)))
    }

    pub fn set(&self, i: usize, alpha: f64) -> Result<Vec<Interval>> {
        Ok(self.exact_set(i, alpha)?.iter().map(|(a, b)| (to_f64(a), to_f64(b))).collect())
    }

    pub fn measure(&self, i: usize, alpha: f64) -> Result<f64> {
        Ok(self.set(i, alpha)?.iter().map(|(a, b)| b - a).sum())
    }

    /// Family index `i` with `t ∈ M_i(α_i)`, if any.
    pub fn member(&self, t: f64, alpha: &[f64]) -> Option<usize> {
        if t < self.t0 || t >= self.t1 {
            return None;
        }
        let h = self.h();
        let pos = (t - self.t0) / h;
        let j = (pos.floor() as usize).min(self.subintervals - 1);
        let frac = pos - j as f64;
        let slot = ((frac * self.m as f64).floor() as usize).min(self.m - 1);
        // Near slot boundaries the float position is ambiguous; use the exact sets.
        for i in [slot, slot.saturating_sub(1), (slot + 1).min(self.m - 1)] {
            let a = alpha.get(i).copied().unwrap_or(0.0);
            if a <= 0.0 {
                continue;
            }
            let s = to_f64(&self.slot_start_r(j, i + 1));
            let e = s + a * h;
            if t >= s && t < e {
                return Some(i);
            }
        }
        None
    }

    /// Slot starts and ends of every `M_i(α_i)`, sorted.
    pub fn breakpoints(&self, alpha: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![self.t0, self.t1];
        for j in 0..self.subintervals {
            for i in 1..=self.m {
                out.push(to_f64(&self.slot_start_r(j, i)));
            }
        }
        for (i, &a) in alpha.iter().enumerate() {
            for (lo, hi) in self.set(i + 1, a)? {
                out.push(lo);
                out.push(hi);
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        Ok(out)
    }

    /// CSV rows `i,lo,hi` of the intervals of every `M_i(α)`.
    pub fn write_csv<W: Write>(&self, out: &mut W, alpha: f64) -> io::Result<()> {
        writeln!(out, "i,lo,hi")?;
        for i in 1..=self.m {
            let set = self.set(i, alpha).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
            for (lo, hi) in set {
                writeln!(out, "{i},{lo:e},{hi:e}")?;
            }
        }
        Ok(())
    }
}

/// `u_α(t) = u*(t) + Σ_i χ_{M_i(α_i)}(t) (u_i(t) - u*(t))`.
#[derive(Debug, Clone)]
pub struct PerturbedControl {
    pub base: CandidateProcess,
    /// Donor controls on the base grid.
    pub donors: Vec<Control>,
    pub family: NeedleFamily,
    pub alpha: Vec<f64>,
}

impl PerturbedControl {
    pub fn new(base: CandidateProcess, donors: Vec<Control>, family: NeedleFamily, alpha: Vec<f64>) -> Result<Self> {
        if donors.len() != family.m || alpha.len() != family.m {
            return Err(Error::DimensionMismatch(format!(
                "{} donors and {} parameters for a family of {}",
                donors.len(),
                alpha.len(),
                family.m
            )));
        }
        for (i, d) in donors.iter().enumerate() {
            if d.dim() != base.m() {
                return Err(Error::DimensionMismatch(format!("donor {} has {} components, m = {}", i + 1, d.dim(), base.m())));
            }
            if let Control::Samples(s) = d {
                if s.len() != base.grid.len() {
                    return Err(Error::DimensionMismatch(format!("donor {} has {} samples for {} knots", i + 1, s.len(), base.grid.len())));
                }
            }
            family.check(i + 1, alpha[i])?;
        }
        Ok(PerturbedControl { base, donors, family, alpha })
    }

    /// Value inside base cell `cell`; `probe` decides set membership.
    fn in_cell(&self, t: f64, probe: f64, cell: usize, out: &mut [f64]) -> Result<()> {
        match self.family.member(probe, &self.alpha) {
            Some(i) => self.donors[i].in_cell(t, cell, out),
            None => self.base.control.in_cell(t, cell, out),
        }
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.base.m()];
        let cell = self.base.grid.cell_of(t);
        if t <= 0.0 {
            return match self.family.member(t, &self.alpha) {
                Some(i) => self.donors[i].at_knot(0, t),
                None => self.base.u_knot(0),
            };
        }
        self.in_cell(t, t, cell, &mut out)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    /// `max_t ‖∫_{t0}^t (χ_{M_i(α)} - χ_{M_i(α')}) y - (α-α') ∫_{t0}^t y‖`.
    pub lhs: f64,
    pub witness: f64,
    /// `lhs / |α - α'|` (0 when `α = α'`).
    pub delta_emp: f64,
    pub delta: f64,
    pub pass: bool,
}

/// Evaluations per piece between breakpoints when tracking the maximum over `t`.
const SUBSTEPS: usize = 8;

/// Approximation estimate for `M_i`: cumulative sums over all breakpoints of
/// the family, refined `SUBSTEPS` times per piece.
pub fn verify_estimate<F>(family: &NeedleFamily, i: usize, y: F, alpha: f64, alpha_prime: f64, delta: f64) -> Result<EstimateRecord>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    family.check(i, alpha)?;
    family.check(i, alpha_prime)?;
    let (hi_a, lo_a) = if alpha >= alpha_prime { (alpha, alpha_prime) } else { (alpha_prime, alpha) };
    let diff = hi_a - lo_a;
    if diff == 0.0 {
        return Ok(EstimateRecord {
            lhs: 0.0,
            witness: family.t0,
            delta_emp: 0.0,
            delta,
            pass: true,
        });
    }
    let big = family.set(i, hi_a)?;
    let small = family.set(i, lo_a)?;
    let mut cuts = vec![family.t0, family.t1];
    for j in 0..family.subintervals {
        cuts.push(family.t0 + (family.t1 - family.t0) * j as f64 / family.subintervals as f64);
        cuts.push(big[j].0);
        cuts.push(big[j].1);
        if let Some(s) = small.get(j) {
            cuts.push(s.1);
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let dim = y(family.t0)?.len();
    let mut acc = vec![0.0; dim];
    let mut worst = (0.0f64, family.t0);
    let strip = |t: f64| {
        let j = big.partition_point(|iv| iv.0 <= t).saturating_sub(1);
        let lo = small.get(j).map_or(big[j].0, |s| s.1);
        t >= lo && t < big[j].1
    };
    let g = |s: f64, c: f64| -> Result<Vec<f64>> { Ok(y(s)?.into_iter().map(|v| (c - diff) * v).collect()) };
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let c = if strip(0.5 * (a + b)) { 1.0 } else { 0.0 };
        for s in 0..SUBSTEPS {
            let p = a + (b - a) * s as f64 / SUBSTEPS as f64;
            let q = if s + 1 == SUBSTEPS { b } else { a + (b - a) * (s + 1) as f64 / SUBSTEPS as f64 };
            let (v, _) = gk15_vec(&mut |t| g(t, c), p, q, dim)?;
            for k in 0..dim {
                acc[k] += v[k];
            }
            let e = norm(&acc);
            if e > worst.0 {
                worst = (e, q);
            }
        }
    }
    let delta_emp = worst.0 / diff;
    Ok(EstimateRecord {
        lhs: worst.0,
        witness: worst.1,
        delta_emp,
        delta,
        pass: delta_emp <= delta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationReport {
    /// `(α, sup_t ‖x_α - x* - α y‖)` for `α = α₀/2^k`.
    pub rows: Vec<(f64, f64)>,
    /// Fit `error ≈ δ_emp α + c α²`.
    pub delta_emp: f64,
    pub c: f64,
    /// Largest misfit of the fit relative to the largest error.
    pub fit_residual: f64,
    pub delta: f64,
    pub pass: bool,
}

impl LinearizationReport {
    pub fn ratios(&self) -> Vec<f64> {
        self.rows.iter().map(|&(a, e)| e / a).collect()
    }
}

/// Linearization of the state equation under needle variations on
/// `[0, family.t1]`: `x_α` from `u_α` with `α_i = α` for every `i`, against
/// `x* + α y` where `ẏ = φ_x y + Σ_i (φ(x*, u_i) - φ(x*, u*))`, `y(0) = 0`.
#[allow(clippy::too_many_arguments)]
pub fn verify_linearization(
    prob: &ControlProblem,
    cand: &CandidateProcess,
    family: &NeedleFamily,
    donors: &[Control],
    alpha0: f64,
    levels: usize,
    delta: f64,
    opts: &OdeOptions,
) -> Result<LinearizationReport> {
    if family.t0 < 0.0 || family.t1 > cand.grid.t_max() {
        return Err(Error::InvalidInterval { t0: family.t0, t1: family.t1 });
    }
    let n = prob.n;
    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels.max(1) {
        let a = alpha0 / 2f64.powi(level as i32);
        let pert = PerturbedControl::new(cand.clone(), donors.to_vec(), family.clone(), vec![a; family.m])?;
        let mut knots: Vec<f64> = cand.grid.knots().iter().copied().filter(|&t| t <= family.t1).collect();
        knots.extend(family.breakpoints(&pert.alpha)?);
        knots.push(0.0);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let cells: Vec<(usize, f64)> = knots
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (cand.grid.cell_of(mid), mid)
            })
            .collect();
        let mut u = vec![0.0; prob.m];
        let mut rhs = |t: f64, x: &[f64], c: usize, dx: &mut [f64]| -> Result<()> {
            let (cell, mid) = cells[c];
            pert.in_cell(t, mid, cell, &mut u)?;
            prob.phi_into(t, x, &u, dx)
        };
        let xa = integrate_knots(&mut rhs, &knots, &prob.x0, false, opts)?;

        let mut us = vec![0.0; prob.m];
        let mut ud = vec![0.0; prob.m];
        let mut rhs_ref = |t: f64, z: &[f64], c: usize, dz: &mut [f64]| -> Result<()> {
            let (cell, _) = cells[c];
            let (x, y) = z.split_at(n);
            cand.control.in_cell(t, cell, &mut us)?;
            let f = prob.phi_at(t, x, &us)?;
            let jac = prob.phi_x_at(t, x, &us)?;
            for r in 0..n {
                dz[r] = f[r];
                dz[n + r] = (0..n).map(|k| jac[r * n + k] * y[k]).sum();
            }
            if t >= family.t0 && t <= family.t1 {
                for d in donors {
                    d.in_cell(t, cell, &mut ud)?;
                    let fd = prob.phi_at(t, x, &ud)?;
                    for r in 0..n {
                        dz[n + r] += fd[r] - f[r];
                    }
                }
            }
            Ok(())
        };
        let mut z0 = prob.x0.clone();
        z0.extend(vec![0.0; n]);
        let zs = integrate_knots(&mut rhs_ref, &knots, &z0, false, opts)?;
        let err = xa
            .iter()
            .zip(&zs)
            .map(|(x, z)| (0..n).map(|r| (x[r] - z[r] - a * z[n + r]).powi(2)).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        rows.push((a, err));
    }
    let (delta_emp, c, fit_residual) = fit_linear_quadratic(&rows);
    Ok(LinearizationReport {
        pass: delta_emp <= delta,
        rows,
        delta_emp,
        c,
        fit_residual,
        delta,
    })
}

/// Least squares `e ≈ d α + c α²`, `d` clamped at 0.
fn fit_linear_quadratic(rows: &[(f64, f64)]) -> (f64, f64, f64) {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(a, e) in rows {
        s11 += a * a;
        s12 += a * a * a;
        s22 += a * a * a * a;
        b1 += a * e;
        b2 += a * a * e;
    }
    let det = s11 * s22 - s12 * s12;
    let (d, c) = if rows.len() >= 2 && det.abs() > 1e-300 {
        ((b1 * s22 - b2 * s12) / det, (s11 * b2 - s12 * b1) / det)
    } else if s11 > 0.0 {
        (b1 / s11, 0.0)
    } else {
        (0.0, 0.0)
    };
    let d = d.max(0.0);
    let scale = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    let misfit = rows.iter().map(|&(a, e)| (e - d * a - c * a * a).abs()).fold(0.0, f64::max);
    (d, c, if scale > 0.0 { misfit / scale } else { 0.0 })
}

/// Compact set `K ⊆ [0, T]` on which an integrable integrand is bounded.
#[derive(Debug, Clone, PartialEq)]
pub struct LusinMask {
    pub keep: Vec<Interval>,
    pub excluded: Vec<Interval>,
    pub excluded_mass: f64,
    /// Largest sampled value on `K`.
    pub sup_on_k: f64,
}

impl LusinMask {
    pub fn contains(&self, t: f64) -> bool {
        self.keep.iter().any(|&(a, b)| t >= a && t <= b)
    }

    /// CSV rows `t,in_k` at the knots of `grid`.
    pub fn write_csv<W: Write>(&self, out: &mut W, grid: &Grid) -> io::Result<()> {
        writeln!(out, "t,in_k")?;
        for &t in grid.knots() {
            writeln!(out, "{t:e},{}", u8::from(self.contains(t)))?;
        }
        Ok(())
    }
}

/// Removes a neighbourhood of the singular points of `w` on `[0, T]` so that
/// the removed mass of `w` stays below `epsilon`.
///
/// A singularity at 0 is cut at `ε'` with `∫_0^{ε'} w = ε/2`, using
/// `head_mass` when given and a power-law fit otherwise; interior knots where
/// `w` is not finite lose their two adjacent cells.
pub fn lusin_concentrate<F>(w: F, grid: &Grid, epsilon: f64, head_mass: Option<&dyn Fn(f64) -> f64>) -> Result<LusinMask>
where
    F: Fn(f64) -> f64,
{
    let knots = grid.knots();
    let t_max = grid.t_max();
    let value = |t: f64| {
        let v = w(t);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v.abs()
        }
    };
    let head_singular = !value(0.0).is_finite() || {
        let (a, b) = (value(T_FLOOR), value(1e3 * T_FLOOR));
        a > 10.0 * b && a > 1e6
    };
    let mut excluded: Vec<Interval> = Vec::new();
    let mut mass = 0.0;
    let mut start = 0.0;
    if head_singular {
        let head = |t: f64| -> f64 {
            if let Some(h) = head_mass {
                return h(t);
            }
            // w ~ c t^β near 0.
            let (a, b) = (value(t), value(0.5 * t));
            let beta = (a / b).ln() / 2f64.ln();
            if beta <= -1.0 || !beta.is_finite() {
                f64::INFINITY
            } else {
                a * t / (beta + 1.0)
            }
        };
        let target = 0.5 * epsilon;
        if head(t_max) < target {
            return Ok(LusinMask {
                keep: Vec::new(),
                excluded: vec![(0.0, t_max)],
                excluded_mass: head(t_max),
                sup_on_k: 0.0,
            });
        }
        let (mut lo, mut hi) = (T_FLOOR, t_max);
        if head(lo) >= target {
            return Err(Error::CannotConcentrate { mass: head(lo), epsilon });
        }
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            if head(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0 + 1e-12 {
                break;
            }
        }
        start = lo;
        mass = head(lo);
        excluded.push((0.0, lo));
    }
    let mut keep = Vec::new();
    let mut seg_lo = start;
    let mut k = grid.knot_at_or_before(start) + 1;
    while k < knots.len() {
        let t = knots[k];
        if !value(t).is_finite() {
            let a = knots[k - 1].max(seg_lo);
            let b = knots[(k + 1).min(knots.len() - 1)];
            for (p, q) in [(a, t), (t, b)] {
                if q > p {
                    mass += gk15(&mut |s| Ok(value(s)), p, q)?.0;
                }
            }
            if a > seg_lo {
                keep.push((seg_lo, a));
            }
            excluded.push((a, b));
            seg_lo = b;
            k += 2;
            continue;
        }
        k += 1;
    }
    if seg_lo < t_max {
        keep.push((seg_lo, t_max));
    }
    if !(mass < epsilon) {
        return Err(Error::CannotConcentrate { mass, epsilon });
    }
    let sup_on_k = knots
        .iter()
        .copied()
        .filter(|&t| keep.iter().any(|&(a, b)| t >= a && t <= b))
        .chain(keep.iter().map(|k| k.0))
        .map(value)
        .fold(0.0, f64::max);
    Ok(LusinMask {
        keep,
        excluded,
        excluded_mass: mass,
        sup_on_k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::problem::{Bound, ControlSet};
    use crate::weights::WeightSpec;
    use proptest::prelude::*;

    #[test]
    fn slot_layout_and_measure() {
        let f = build_family(0.0, 1.0, 2, 4).unwrap();
        assert_eq!(f.h(), 0.25);
        let m1 = f.set(1, 0.25).unwrap();
        assert_eq!(m1, vec![(0.0, 0.0625), (0.25, 0.3125), (0.5, 0.5625), (0.75, 0.8125)]);
        let m2 = f.set(2, 0.5).unwrap();
        assert_eq!(m2[0], (0.125, 0.25));
        assert_eq!(f.measure(1, 0.25).unwrap(), 0.25);
        assert_eq!(f.exact_measure(1, 0.25).unwrap(), rational(0.25));
        assert!(f.set(1, 0.0).unwrap().is_empty());
        assert!(matches!(f.set(1, 0.6), Err(Error::AlphaOutOfRange { m: 2, .. })));
        assert!(matches!(build_family(1.0, 1.0, 2, 4), Err(Error::InvalidInterval { .. })));
    }

    #[test]
    fn full_slots_partition_the_interval() {
        let f = build_family(0.25, 2.25, 4, 7).unwrap();
        let mut all: Vec<Interval> = (1..=4).flat_map(|i| f.set(i, 0.25).unwrap()).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert_eq!(all[0].0, 0.25);
        assert_eq!(all.last().unwrap().1, 2.25);
        assert!(all.windows(2).all(|w| w[0].1 == w[1].0));
    }

    #[test]
    fn unit_integrand_error_is_one_slot_strip() {
        let f = build_family(0.0, 1.0, 1, 16).unwrap();
        let r = verify_estimate(&f, 1, |_| Ok(vec![1.0]), 0.5, 0.25, 1.0).unwrap();
        // Inside each subinterval the strip [h/4, h/2) has width h/4; the deficit
        // peaks at its end: h/4 - (h/4)(h/2)/h = h/8... relative to |α-α'| = 1/4.
        let h = 1.0 / 16.0;
        assert!((r.lhs - 0.25 * h * (1.0 - 0.5)).abs() < 1e-14, "{}", r.lhs);
        assert!((r.delta_emp - h * 0.5).abs() < 1e-12);
        let same = verify_estimate(&f, 1, |_| Ok(vec![1.0]), 0.3, 0.3, 0.0).unwrap();
        assert_eq!(same.lhs, 0.0);
    }

    #[test]
    fn linear_integrand_passes_moderate_delta() {
        let f = build_family(0.0, 1.0, 1, 64).unwrap();
        let r = verify_estimate(&f, 1, |t| Ok(vec![t]), 0.8, 0.1, 0.05).unwrap();
        assert!(r.pass);
        assert!(r.delta_emp < 1.0 / 64.0, "{}", r.delta_emp);
    }

    #[test]
    fn estimate_is_first_order_in_h() {
        for y in [|t: f64| Ok(vec![t.sin()]), |t: f64| Ok(vec![1.0 + t * t])] {
            let d = |n: usize| {
                let f = build_family(0.0, 2.0, 2, n).unwrap();
                verify_estimate(&f, 2, y, 0.4, 0.15, 1.0).unwrap().delta_emp
            };
            let ratio = d(40) / d(80);
            assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
        }
    }

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
            &Grid::uniform(2.0, 40).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    #[test]
    fn regulator_linearization() {
        let (p, c) = regulator();
        let zero = Control::Exprs(vec![parse("0", &Scope::time()).unwrap()]);
        let run = |n: usize| {
            let f = build_family(0.0, 1.0, 1, n).unwrap();
            verify_linearization(&p, &c, &f, std::slice::from_ref(&zero), 0.1, 3, 0.05, &OdeOptions::default()).unwrap()
        };
        // The needle error enters at order h, so δ_emp halves with N.
        let coarse = run(256);
        let r = run(512);
        assert!(r.pass, "{r:?}");
        assert!(r.ratios().iter().all(|q| *q < 0.05));
        let ratio = coarse.delta_emp / r.delta_emp;
        assert!(ratio > 2.0 / 1.5 && ratio < 2.0 * 1.5, "{ratio}");
    }

    #[test]
    fn donor_equal_to_base_changes_nothing() {
        let (p, c) = regulator();
        let f = build_family(0.0, 1.0, 1, 32).unwrap();
        let r = verify_linearization(&p, &c, &f, std::slice::from_ref(&c.control), 0.1, 2, 0.05, &OdeOptions::default()).unwrap();
        assert!(r.rows.iter().all(|&(_, e)| e == 0.0));
    }

    #[test]
    fn weibull_head_is_cut_by_cdf() {
        let omega = WeightSpec::weibull(0.5);
        let g = Grid::uniform(10.0, 100).unwrap();
        let cdf = |t: f64| omega.head_mass(t).unwrap();
        let mask = lusin_concentrate(|t| omega.eval(t) * 3.0, &g, 1e-3, Some(&|t| 3.0 * cdf(t))).unwrap();
        let cut = mask.keep[0].0;
        // 3·2(1 - e^{-√ε'}) = ε/2
        assert!((6.0 * (1.0 - (-cut.sqrt()).exp()) - 5e-4).abs() < 1e-12);
        assert!(mask.excluded_mass < 1e-3);
        assert!(mask.sup_on_k.is_finite());
        let estimated = lusin_concentrate(|t| omega.eval(t) * 3.0, &g, 1e-3, None).unwrap();
        assert!((estimated.keep[0].0 / cut - 1.0).abs() < 1e-2);
    }

    #[test]
    fn bounded_integrand_keeps_everything() {
        let g = Grid::uniform(5.0, 50).unwrap();
        let mask = lusin_concentrate(|t| (-t).exp(), &g, 1e-6, None).unwrap();
        assert_eq!(mask.keep, vec![(0.0, 5.0)]);
        assert_eq!(mask.excluded_mass, 0.0);
        let mut out = Vec::new();
        mask.write_csv(&mut out, &g).unwrap();
        assert!(String::from_utf8(out).unwrap().starts_with("t,in_k\n0e0,1\n"));
    }

    #[test]
    fn large_epsilon_excludes_all_and_nonintegrable_fails() {
        let g = Grid::uniform(1.0, 10).unwrap();
        let mask = lusin_concentrate(|t| t.powf(-0.5), &g, 10.0, None).unwrap();
        assert!(mask.keep.is_empty());
        let r = lusin_concentrate(|t| 1.0 / t, &g, 1e-3, None);
        assert!(matches!(r, Err(Error::CannotConcentrate { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn nesting_and_disjointness(m in 1usize..5, n in 1usize..40, t0 in -3.0f64..3.0, len in 0.01f64..10.0,
                                    a in 0.0f64..1.0, b in 0.0f64..1.0, i in 0usize..5, k in 0usize..5) {
            let f = build_family(t0, t0 + len, m, n).unwrap();
            let (i, k) = (i % m + 1, k % m + 1);
            let top = 1.0 / m as f64;
            let (lo, hi) = if a <= b { (a * top, b * top) } else { (b * top, a * top) };
            let small = f.set(i, lo).unwrap();
            let big = f.set(i, hi).unwrap();
            for (s, g) in small.iter().zip(&big) {
                prop_assert!(s.0 == g.0 && s.1 <= g.1);
            }
            prop_assert_eq!(f.exact_measure(i, hi).unwrap(), rational(hi) * (rational(t0 + len) - rational(t0)));
            if i != k {
                let other = f.set(k, hi).unwrap();
                for x in &big {
                    for y in &other {
                        prop_assert!(x.1 <= y.0 || y.1 <= x.0);
                    }
                }
            }
        }

        #[test]
        fn perturbed_control_stays_feasible(alpha in 0.0f64..0.5, t in 0.0f64..2.0) {
            let s = Scope::new(1, 1);
            let p = ControlProblem::new(
                "box",
                parse("x1", &s).unwrap(),
                vec![parse("-u1*x1", &s).unwrap()],
                ControlSet::new(vec![Bound::closed(0.0, 1.0)]).unwrap(),
                vec![1.0],
                WeightSpec::exp_decay(1.0),
                WeightSpec::exp_decay(1.0),
            )
            .unwrap();
            let ts = Scope::time();
            let c = CandidateProcess::from_closed_form(&p, &Grid::uniform(2.0, 20).unwrap(),
                vec![parse("exp(-t)", &ts).unwrap()], vec![parse("1", &ts).unwrap()]).unwrap();
            let donors = vec![Control::Exprs(vec![parse("0", &ts).unwrap()]), Control::Exprs(vec![parse("0.5*sin(t)^2", &ts).unwrap()])];
            let f = build_family(0.5, 1.5, 2, 5).unwrap();
            let u = PerturbedControl::new(c, donors, f.clone(), vec![alpha, alpha]).unwrap();
            let v = u.eval(t).unwrap();
            prop_assert!(p.controls.contains(&v, 0.0));
            if f.member(t, &[alpha, alpha]).is_none() {
                prop_assert_eq!(v, vec![1.0]);
            }
        }
    }
}
