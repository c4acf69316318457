//! Numerical stand-in for `lim_{t→∞} q(t) = 0`.
//!
//! A quantity counts as vanishing when `|q|` does not increase across the
//! three decades `T/100, T/10, T` and `|q(T)| ≤ tol`. Every limit statement in
//! the crate goes through [`decay_test`], so the criterion is the same for
//! weight properties, transversality and the Michel condition.

use crate::config::Verdict;
use crate::error::Result;

/// Relative slack when comparing consecutive decade samples.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTest {
    /// `(t, |q(t)|)` at `T/100`, `T/10`, `T`.
    pub samples: [(f64, f64); 3],
    pub tol: f64,
    pub verdict: Verdict,
}

impl DecayTest {
    pub fn last(&self) -> f64 {
        self.samples[2].1
    }

    /// The sample that violates the criterion, if any.
    pub fn witness(&self) -> Option<(f64, f64)> {
        if self.verdict != Verdict::Fail {
            return None;
        }
        let [a, b, c] = self.samples;
        if b.1 > a.1 * (1.0 + MONOTONE_SLACK) {
            Some(b)
        } else {
            Some(c)
        }
    }
}

pub fn decay_test<F>(q: F, horizon: f64, tol: f64) -> Result<DecayTest>
where
    F: Fn(f64) -> Result<f64>,
{
    let ts = [horizon / 100.0, horizon / 10.0, horizon];
    let mut samples = [(0.0, 0.0); 3];
    for (slot, &t) in samples.iter_mut().zip(&ts) {
        let v = q(t)?;
        *slot = (t, if v.is_nan() { f64::INFINITY } else { v.abs() });
    }
    Ok(DecayTest {
        samples,
        tol,
        verdict: judge(&samples, tol),
    })
}

pub fn decay_from_samples(samples: [(f64, f64); 3], tol: f64) -> DecayTest {
    let samples = samples.map(|(t, v)| (t, v.abs()));
    DecayTest {
        samples,
        tol,
        verdict: judge(&samples, tol),
    }
}

fn judge(s: &[(f64, f64); 3], tol: f64) -> Verdict {
    let non_increasing = s.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + MONOTONE_SLACK) || w[1].1 == 0.0);
    Verdict::from_bool(non_increasing && s[2].1 <= tol)
}
