//! Gauss–Kronrod quadrature on cells and improper integrals over `[0, ∞)`.

use super::grid::{Grid, T_FLOOR};
use crate::error::Result;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// One 15-point Kronrod panel; returns `(value, |kronrod - gauss|)`.
pub fn gk15<F>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (v, e, _) = gk15_abs(f, a, b)?;
    Ok((v, e))
}

/// [`gk15`] plus the Kronrod integral of `|f|`.
fn gk15_abs<F>(f: &mut F, a: f64, b: f64) -> Result<(f64, f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs = fc.abs() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (l, r) = (f(c - dx)?, f(c + dx)?);
        let s = l + r;
        kronrod += WGK[j] * s;
        abs += WGK[j] * (l.abs() + r.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Ok((kronrod * h, ((kronrod - gauss) * h).abs(), abs * h.abs()))
}

/// Vector version of [`gk15`] with a shared error estimate (max over components).
pub fn gk15_vec<F>(f: &mut F, a: f64, b: f64, dim: usize) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod: Vec<f64> = fc.iter().map(|v| v * WGK[7]).collect();
    let mut gauss: Vec<f64> = fc.iter().map(|v| v * WG[3]).collect();
    for j in 0..7 {
        let dx = h * XGK[j];
        let l = f(c - dx)?;
        let r = f(c + dx)?;
        for i in 0..dim {
            let s = l[i] + r[i];
            kronrod[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let err = kronrod
        .iter()
        .zip(&gauss)
        .map(|(k, g)| ((k - g) * h).abs())
        .fold(0.0, f64::max);
    Ok((kronrod.into_iter().map(|k| k * h).collect(), err))
}

/// Adaptive GK15 on `[a, b]`: the panel with the largest error estimate is
/// bisected until the summed error is below `rtol` relative to the value (or
/// at rounding level), or [`MAX_PANELS`] panels are in use.
pub fn integrate<F>(mut f: F, a: f64, b: f64, rtol: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let first = panel(&mut f, a, b)?;
    if !first.value.is_finite() {
        return Ok(first.value);
    }
    let mut panels = vec![first];
    loop {
        let value: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.err).sum();
        let scale: f64 = panels.iter().map(|p| p.abs).sum();
        if !value.is_finite() || err <= (rtol * value.abs()).max(50.0 * f64::EPSILON * scale) || panels.len() >= MAX_PANELS {
            return Ok(value);
        }
        let worst = panels
            .iter()
            .enumerate()
            .fold(0, |w, (i, p)| if p.err > panels[w].err { i } else { w });
        let p = panels.swap_remove(worst);
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            return Ok(value);
        }
        panels.push(panel(&mut f, p.a, m)?);
        panels.push(panel(&mut f, m, p.b)?);
    }
}

/// Panel budget of [`integrate`].
pub const MAX_PANELS: usize = 64;

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
    /// Integral of `|f|` by the Kronrod rule.
    abs: f64,
}

fn panel<F>(f: &mut F, a: f64, b: f64) -> Result<Panel>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (value, err, abs) = gk15_abs(f, a, b)?;
    Ok(Panel { a, b, value, err, abs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    Finite,
    Divergent,
    Undetermined,
}

impl std::fmt::Display for Convergence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Convergence::Finite => "finite",
            Convergence::Divergent => "divergent",
            Convergence::Undetermined => "undetermined",
        })
    }
}

/// Result of integrating over `[0, ∞)` with a grid-truncated body and an
/// extrapolated tail.
#[derive(Debug, Clone, PartialEq)]
pub struct ImproperIntegral {
    /// `partial + tail`, meaningful only when `convergence` is `Finite`.
    pub value: f64,
    /// Integral over `[0, T]`.
    pub partial: f64,
    pub tail: f64,
    pub convergence: Convergence,
    /// Cumulative integral at every knot.
    pub cumulative: Vec<f64>,
    pub times: Vec<f64>,
    /// Power exponent assumed near `t = 0`, when a pole was treated analytically.
    pub head_exponent: Option<f64>,
    /// Local log-log decay slope `-d ln|g| / d ln t` at the horizon.
    pub slope: f64,
    /// Relative growth of the partial integral over the last decade.
    pub growth: f64,
    /// Where divergence was detected (a non-finite sample, the pole, or the horizon).
    pub witness: Option<f64>,
}

impl ImproperIntegral {
    /// Partial integrals at the decade points `T/1000, T/100, T/10, T`.
    pub fn decade_partials(&self) -> Vec<(f64, f64)> {
        let t_max = *self.times.last().unwrap();
        [1e-3, 1e-2, 1e-1, 1.0]
            .iter()
            .map(|s| {
                let k = self.times.partition_point(|&t| t <= s * t_max).saturating_sub(1);
                (self.times[k], self.cumulative[k])
            })
            .collect()
    }
}

/// Options for [`improper_integral`].
#[derive(Debug, Clone, Copy)]
pub struct ImproperOptions {
    /// Declared power exponent near 0 (`g ~ t^β`).
    pub pole: Option<f64>,
    /// Relative growth per decade that counts as divergence.
    pub growth_tol: f64,
    pub rtol: f64,
}

impl Default for ImproperOptions {
    fn default() -> Self {
        ImproperOptions {
            pole: None,
            growth_tol: 1e-2,
            rtol: 1e-11,
        }
    }
}

/// Integrates `g` over `[0, ∞)` cell by cell on `grid`.
///
/// Near 0 a power head `c·t^β` is integrated analytically when `β` is declared
/// or visibly negative (`β ≤ -1` is divergent). Beyond the horizon the tail is
/// extrapolated from the local log-log slope `s`: finite when `s > 1`,
/// divergent when the partial integral still grows by more than `growth_tol`
/// over the last decade.
pub fn improper_integral<F>(g: F, grid: &Grid, opts: ImproperOptions) -> Result<ImproperIntegral>
where
    F: Fn(f64) -> Result<f64>,
{
    let knots = grid.knots();
    let n = knots.len();
    let mut cumulative = vec![0.0; n];
    let mut head_exponent = None;

    let t1 = knots[1];
    let beta = opts.pole.filter(|b| *b != 0.0).or_else(|| estimate_head_exponent(&g, knots));
    let head_end = t1.min(T_FLOOR);
    let divergent = |cumulative: Vec<f64>, witness: f64, head_exponent| ImproperIntegral {
        value: f64::INFINITY,
        partial: f64::INFINITY,
        tail: f64::NAN,
        convergence: Convergence::Divergent,
        cumulative,
        times: knots.to_vec(),
        head_exponent,
        slope: f64::NAN,
        growth: f64::INFINITY,
        witness: Some(witness),
    };

    let mut head = match beta {
        Some(b) if b < -0.05 => {
            head_exponent = Some(b);
            if b <= -1.0 + 1e-3 {
                return Ok(divergent(cumulative, 0.0, head_exponent));
            }
            let gv = g(head_end)?;
            gv * head_end / (b + 1.0)
        }
        _ => integrate(&g, 0.0, head_end, opts.rtol)?,
    };
    if t1 > head_end {
        head += integrate(&g, head_end, t1, opts.rtol)?;
    }
    cumulative[1] = head;
    if !head.is_finite() {
        return Ok(divergent(cumulative, t1, head_exponent));
    }
    for k in 1..n - 1 {
        let v = integrate(&g, knots[k], knots[k + 1], opts.rtol)?;
        cumulative[k + 1] = cumulative[k] + v;
        if !cumulative[k + 1].is_finite() {
            return Ok(divergent(cumulative, knots[k + 1], head_exponent));
        }
    }

    let t_max = knots[n - 1];
    let partial = cumulative[n - 1];
    let k_decade = knots.partition_point(|&t| t <= t_max / 10.0).saturating_sub(1);
    let growth = if partial == 0.0 {
        0.0
    } else {
        (partial - cumulative[k_decade]).abs() / partial.abs()
    };

    let g_end = g(t_max)?;
    let g_prev = g(knots[n - 2])?;
    if !g_end.is_finite() {
        return Ok(divergent(cumulative, t_max, head_exponent));
    }
    let slope = if g_end == 0.0 {
        f64::INFINITY
    } else if g_prev == 0.0 {
        f64::NEG_INFINITY
    } else {
        -(g_end.abs() / g_prev.abs()).ln() / (t_max / knots[n - 2]).ln()
    };

    let (convergence, tail) = if g_end == 0.0 {
        (Convergence::Finite, 0.0)
    } else if slope > 1.0 {
        (Convergence::Finite, g_end * t_max / (slope - 1.0))
    } else if growth > opts.growth_tol {
        (Convergence::Divergent, f64::INFINITY)
    } else {
        (Convergence::Undetermined, f64::NAN)
    };
    let value = match convergence {
        Convergence::Finite => partial + tail,
        Convergence::Divergent => f64::INFINITY,
        Convergence::Undetermined => f64::NAN,
    };
    Ok(ImproperIntegral {
        value,
        partial,
        tail,
        convergence,
        cumulative,
        times: knots.to_vec(),
        head_exponent,
        slope,
        growth,
        witness: (convergence == Convergence::Divergent).then_some(t_max),
    })
}

/// Power exponent of `g` near 0 from the two smallest positive knots, when
/// those knots are close enough to 0 for the estimate to mean anything.
fn estimate_head_exponent<F>(g: &F, knots: &[f64]) -> Option<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if knots.len() < 3 || knots[1] > 1e-6 {
        return None;
    }
    let (a, b) = (knots[1], knots[2].min(knots[1] * 10.0));
    let (ga, gb) = (g(a).ok()?, g(b).ok()?);
    if ga > 0.0 && gb > 0.0 && ga.is_finite() && gb.is_finite() {
        Some((gb / ga).ln() / (b / a).ln())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::standard(50.0, 2048).unwrap()
    }

    #[test]
    fn gk15_is_exact_for_polynomials() {
        let mut f = |t: f64| Ok(t.powi(10) - 3.0 * t);
        let (v, _) = gk15(&mut f, 0.0, 2.0).unwrap();
        assert!((v - (2f64.powi(11) / 11.0 - 6.0)).abs() < 1e-12);
    }

    #[test]
    fn adaptive_handles_sharp_peak() {
        let v = integrate(|t| Ok(1.0 / (1e-4 + t * t)), -1.0, 1.0, 1e-12).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((v - exact).abs() / exact < 1e-10);
    }

    #[test]
    fn exponential_integral() {
        let r = improper_integral(|t| Ok((-2.0 * t).exp()), &grid(), ImproperOptions::default()).unwrap();
        assert_eq!(r.convergence, Convergence::Finite);
        assert!((r.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weibull_pole_is_integrable() {
        let g = |t: f64| Ok(t.powf(-0.5) * (-t.sqrt()).exp());
        let opts = ImproperOptions {
            pole: Some(-0.5),
            ..Default::default()
        };
        let r = improper_integral(g, &Grid::standard(400.0, 4096).unwrap(), opts).unwrap();
        assert_eq!(r.convergence, Convergence::Finite);
        assert!((r.value - 2.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn detects_divergence_at_infinity_and_at_zero() {
        let r = improper_integral(|_| Ok(1.0), &grid(), ImproperOptions::default()).unwrap();
        assert_eq!(r.convergence, Convergence::Divergent);
        let r = improper_integral(|t| Ok(1.0 / t), &grid(), ImproperOptions::default()).unwrap();
        assert_eq!(r.convergence, Convergence::Divergent);
        assert_eq!(r.witness, Some(0.0));
    }

    #[test]
    fn power_tail_is_extrapolated() {
        let r = improper_integral(|t| Ok((1.0 + t).powi(-3)), &grid(), ImproperOptions::default()).unwrap();
        assert_eq!(r.convergence, Convergence::Finite);
        assert!((r.value - 0.5).abs() < 1e-4, "{}", r.value);
    }
}
