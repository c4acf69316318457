//! Norms of `L_p(ν)` and `W^1_p(ν)` and the Hölder pairing.

use super::grid::Grid;
use super::path::{dot, norm};
use super::quadrature::{improper_integral, Convergence, ImproperOptions};
use crate::config::Verdict;
use crate::error::Result;
use crate::weights::WeightSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedNorm {
    /// `‖x‖_{L_p(ν)}`, plus `‖ẋ‖_{L_p(ν)}` when the derivative was supplied.
    pub value: f64,
    pub lp: f64,
    pub derivative_lp: Option<f64>,
    pub convergence: Convergence,
    /// Set for `p = ∞`: the grid sup under-approximates the essential sup.
    pub grid_limited: bool,
}

fn lp_norm<F>(x: &F, nu: &WeightSpec, p: f64, grid: &Grid) -> Result<(f64, Convergence)>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if p.is_infinite() {
        let mut sup = 0.0f64;
        for &t in grid.knots() {
            sup = sup.max(norm(&x(t)?));
        }
        return Ok((sup, Convergence::Finite));
    }
    let opts = ImproperOptions {
        pole: Some(nu.pole_exponent()),
        ..Default::default()
    };
    let r = improper_integral(|t| Ok(norm(&x(t)?).powf(p) * nu.eval(t)), grid, opts)?;
    Ok((r.value.max(0.0).powf(1.0 / p), r.convergence))
}

fn partial_norm<F>(x: &F, nu: &WeightSpec, p: f64, grid: &Grid) -> Result<f64>
where
    F: Fn(f64) -> Result<Vec<f64>>,
{
    if p.is_infinite() {
        return Ok(lp_norm(x, nu, p, grid)?.0);
    }
    let opts = ImproperOptions {
        pole: Some(nu.pole_exponent()),
        ..Default::default()
    };
    let r = improper_integral(|t| Ok(norm(&x(t)?).powf(p) * nu.eval(t)), grid, opts)?;
    Ok(r.partial.max(0.0).powf(1.0 / p))
}

/// `‖x‖_{L_p(ν)}`, or the `W^1_p(ν)` norm `‖x‖ + ‖ẋ‖` when `dx` is given.
/// For `p = ∞` the unweighted grid supremum is used.
pub fn weighted_norm<F, D>(x: F, dx: Option<D>, nu: &WeightSpec, p: f64, grid: &Grid) -> Result<WeightedNorm>
where
    F: Fn(f64) -> Result<Vec<f64>>,
    D: Fn(f64) -> Result<Vec<f64>>,
{
    let (lp, c1) = lp_norm(&x, nu, p, grid)?;
    let (derivative_lp, c2) = match dx {
        Some(d) => {
            let (v, c) = lp_norm(&d, nu, p, grid)?;
            (Some(v), c)
        }
        None => (None, Convergence::Finite),
    };
    let convergence = match (c1, c2) {
        (Convergence::Divergent, _) | (_, Convergence::Divergent) => Convergence::Divergent,
        (Convergence::Finite, Convergence::Finite) => Convergence::Finite,
        _ => Convergence::Undetermined,
    };
    Ok(WeightedNorm {
        value: lp + derivative_lp.unwrap_or(0.0),
        lp,
        derivative_lp,
        convergence,
        grid_limited: p.is_infinite(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderCheck {
    /// `‖⟨x, y⟩‖_{L_1(ν)}`
    pub lhs: f64,
    /// `‖x‖_{L_p(ν)} ‖y‖_{L_q(ν)}`
    pub rhs: f64,
    pub verdict: Verdict,
}

/// Checks `‖⟨x,y⟩‖_{L_1(ν)} ≤ ‖x‖_{L_p(ν)} ‖y‖_{L_q(ν)}` with `1/p + 1/q = 1`.
pub fn holder_pairing_check<F, G>(x: F, y: G, nu: &WeightSpec, p: f64, grid: &Grid) -> Result<HolderCheck>
where
    F: Fn(f64) -> Result<Vec<f64>>,
    G: Fn(f64) -> Result<Vec<f64>>,
{
    let q = if p.is_infinite() {
        1.0
    } else if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    };
    let opts = ImproperOptions {
        pole: Some(nu.pole_exponent()),
        ..Default::default()
    };
    let pair = improper_integral(|t| Ok(dot(&x(t)?, &y(t)?).abs() * nu.eval(t)), grid, opts)?;
    let (nx, cx) = lp_norm(&x, nu, p, grid)?;
    let (ny, cy) = lp_norm(&y, nu, q, grid)?;
    let finite = [pair.convergence, cx, cy].iter().all(|c| *c == Convergence::Finite);
    let (lhs, rhs) = if finite {
        (pair.value, nx * ny)
    } else {
        // The inequality holds on every finite horizon, so compare the truncated parts.
        (pair.partial, partial_norm(&x, nu, p, grid)? * partial_norm(&y, nu, q, grid)?)
    };
    let ok = lhs <= rhs * (1.0 + 1e-9) + 1e-14;
    Ok(HolderCheck {
        lhs,
        rhs,
        verdict: Verdict::from_bool(ok),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    type NoDeriv = fn(f64) -> Result<Vec<f64>>;

    fn grid() -> Grid {
        Grid::standard(60.0, 1024).unwrap()
    }

    #[test]
    fn exponential_in_l2() {
        let nu = WeightSpec::exp_decay(1.0);
        let r = weighted_norm(|t| Ok(vec![(-t).exp()]), None::<NoDeriv>, &nu, 2.0, &grid()).unwrap();
        assert!((r.value - (1.0f64 / 3.0).sqrt()).abs() < 1e-10);
        let z = weighted_norm(|_| Ok(vec![0.0]), None::<NoDeriv>, &nu, 2.0, &grid()).unwrap();
        assert_eq!(z.value, 0.0);
    }

    #[test]
    fn regulator_state_in_w12() {
        let c = 1.0 - 2f64.sqrt();
        let nu = WeightSpec::exp_decay(4.5);
        let r = weighted_norm(
            |t| Ok(vec![2.0 * (c * t).exp()]),
            Some(|t: f64| Ok(vec![2.0 * c * (c * t).exp()])),
            &nu,
            2.0,
            &grid(),
        )
        .unwrap();
        let expected = (1.0 + c.abs()) * 2.0 * (2.0 * (2f64.sqrt() - 1.0) + 4.5).powf(-0.5);
        assert!((r.value - expected).abs() < 1e-10 * expected);
    }

    #[test]
    fn cauchy_schwarz_is_tight_for_parallel() {
        let nu = WeightSpec::exp_decay(1.0);
        let h = holder_pairing_check(|t| Ok(vec![(-t).exp()]), |t| Ok(vec![(-t).exp()]), &nu, 2.0, &grid()).unwrap();
        assert_eq!(h.verdict, Verdict::Pass);
        assert!((h.lhs - h.rhs).abs() < 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn holder_never_fails(a in 0.1f64..3.0, b in 0.1f64..3.0, k in 1.5f64..4.0, p in 1.2f64..5.0, s in -2.0f64..2.0) {
            let nu = WeightSpec::power(k);
            let g = Grid::standard(200.0, 512).unwrap();
            let h = holder_pairing_check(
                |t| Ok(vec![(1.0 + t).powf(-a), s * (-b * t).exp()]),
                |t| Ok(vec![(b * t).sin(), (1.0 + t).powf(-b)]),
                &nu, p, &g,
            ).unwrap();
            prop_assert_eq!(h.verdict, Verdict::Pass);
        }

        #[test]
        fn norm_is_homogeneous(c in -5.0f64..5.0, a in 0.2f64..2.0) {
            let nu = WeightSpec::exp_decay(1.0);
            let g = Grid::standard(60.0, 256).unwrap();
            let base = weighted_norm(|t| Ok(vec![(-a * t).exp(), t * (-t).exp()]), None::<NoDeriv>, &nu, 2.0, &g).unwrap().value;
            let scaled = weighted_norm(|t| Ok(vec![c * (-a * t).exp(), c * t * (-t).exp()]), None::<NoDeriv>, &nu, 2.0, &g).unwrap().value;
            prop_assert!((scaled - c.abs() * base).abs() <= 1e-9 * (1.0 + base));
        }
    }
}
