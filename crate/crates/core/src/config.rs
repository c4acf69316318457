//! Shared enums and the tolerance set used across checks.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Which family of local optimality is examined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Uniform tube `‖x - x*(t)‖ ≤ γ`, arbitrary controls in `U`.
    Strong,
    /// Shrinking tube of radius `γ·η(t)` in state and control.
    Weak,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Strong => "strong",
            Mode::Weak => "weak",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "strong" => Ok(Mode::Strong),
            "weak" => Ok(Mode::Weak),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    Fail,
    Undetermined,
    NotApplicable,
    /// Not checkable numerically (e.g. measurability in `t`).
    Assumed,
    /// Probed, nothing found; weaker than `Pass`.
    NoCounterexample,
}

impl Verdict {
    pub fn is_fail(self) -> bool {
        self == Verdict::Fail
    }

    /// Counts towards an overall pass.
    pub fn is_acceptable(self) -> bool {
        matches!(
            self,
            Verdict::Pass | Verdict::NotApplicable | Verdict::Assumed | Verdict::NoCounterexample
        )
    }

    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Undetermined => "undetermined",
            Verdict::NotApplicable => "not-applicable",
            Verdict::Assumed => "assumed",
            Verdict::NoCounterexample => "no-counterexample",
        })
    }
}

/// Tolerance set echoed into every report header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Activity / feasibility of state constraints (absolute).
    pub feasibility: f64,
    /// Threshold a quantity must fall below at the horizon to count as vanishing.
    pub limit: f64,
    /// Normalized adjoint-equation residual.
    pub adjoint_residual: f64,
    /// Maximum-condition gap, relative to `1 + |H|`.
    pub max_gap: f64,
    /// Weak variational inequality residual (absolute).
    pub weak_inequality: f64,
    /// Midpoint-concavity slack, relative to `1 + |𝓗|`.
    pub concavity: f64,
    /// Relative sup distance allowed between the two adjoint routes.
    pub route_agreement: f64,
    /// Relative growth per decade above which a partial integral counts as divergent.
    pub divergence_growth: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            feasibility: 1e-8,
            limit: 1e-2,
            adjoint_residual: 1e-6,
            max_gap: 1e-8,
            weak_inequality: 1e-8,
            concavity: 1e-9,
            route_agreement: 1e-5,
            divergence_growth: 1e-2,
        }
    }
}

impl fmt::Display for Tolerances {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "feasibility={:e} limit={:e} adjoint_residual={:e} max_gap={:e} weak_inequality={:e} \
             concavity={:e} route_agreement={:e} divergence_growth={:e}",
            self.feasibility,
            self.limit,
            self.adjoint_residual,
            self.max_gap,
            self.weak_inequality,
            self.concavity,
            self.route_agreement,
            self.divergence_growth
        )
    }
}
