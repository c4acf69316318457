//! Quadrature, ODE solving, fundamental matrices and weighted norms on `[0, ∞)`.

pub mod grid;
pub mod norms;
pub mod ode;
pub mod path;
pub mod quadrature;
mod state;

pub use grid::{Grid, T_FLOOR};
pub use norms::{holder_pairing_check, weighted_norm, HolderCheck, WeightedNorm};
pub use ode::{integrate_knots, solve_cell, OdeOptions, Rhs};
pub use path::{dot, norm, write_series_csv, Interp, Path};
pub use quadrature::{gk15, improper_integral, integrate, Convergence, ImproperIntegral, ImproperOptions};
pub use state::{fundamental_matrix, integrate_state, solve_state, FundamentalMatrix};
pub(crate) use state::condition_number as state_condition_number;

use crate::error::{Error, Result};
use crate::weights::WeightSpec;

/// Largest exponent of the truncation ladder `T_j = 10^{j/20}`.
const LADDER_STEPS: i32 = 400;

/// Smallest rung `T_j = 10^{j/20}` (`j ≥ 0`) of the truncation ladder with
/// `tail_bound(T_j) < tol`.
pub fn tail_truncation(w: &WeightSpec, tol: f64) -> Result<f64> {
    if !w.declares_tail() {
        return Err(Error::MissingTailBound(w.label.clone()));
    }
    for j in 0..=LADDER_STEPS {
        let t = 10f64.powf(j as f64 / 20.0);
        let b = w.tail_bound(t).unwrap_or(f64::INFINITY);
        if b < tol {
            return Ok(t);
        }
    }
    Err(Error::Config(format!(
        "tail bound of `{}` stays above {tol:e} up to T = 1e20",
        w.label
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncation_ladder() {
        let t = tail_truncation(&WeightSpec::exp_decay(2.0), 1e-8).unwrap();
        assert!((t - 10f64.powf(0.95)).abs() < 1e-12);
        assert!((-2.0 * t).exp() / 2.0 < 1e-8);
        assert_eq!(tail_truncation(&WeightSpec::exp_decay(2.0), f64::INFINITY).unwrap(), 1.0);
        let custom = WeightSpec::custom("1/(1+t)^2", |t| (1.0 + t).powi(-2));
        assert!(matches!(tail_truncation(&custom, 1e-3), Err(Error::MissingTailBound(_))));
    }

    #[test]
    fn weibull_truncation_uses_exact_tail() {
        let w = WeightSpec::weibull(0.5);
        let t = tail_truncation(&w, 1e-6).unwrap();
        // int_T^inf t^{-1/2} e^{-sqrt t} dt = 2 e^{-sqrt T}
        assert!(2.0 * (-t.sqrt()).exp() < 1e-6);
        let prev = 10f64.powf((20.0 * t.log10()).round() / 20.0 - 0.05);
        assert!(2.0 * (-prev.sqrt()).exp() >= 1e-6);
    }
}
