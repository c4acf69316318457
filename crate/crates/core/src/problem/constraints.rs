use super::{CandidateProcess, ControlProblem};
use crate::config::Verdict;
use crate::error::{Error, Result};

/// Active constraints along a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct ActiveSet {
    /// Zero-based indices `j` with `max_t g_j(t, x(t)) ∈ [-tol, tol]`.
    pub indices: Vec<usize>,
    /// Per active index, the knots where `|g_j| ≤ tol`.
    pub times: Vec<Vec<f64>>,
}

impl ActiveSet {
    pub fn is_active(&self, j: usize) -> bool {
        self.indices.contains(&j)
    }

    pub fn times_of(&self, j: usize) -> Option<&[f64]> {
        self.indices.iter().position(|&i| i == j).map(|k| self.times[k].as_slice())
    }
}

pub fn active_indices(prob: &ControlProblem, cand: &CandidateProcess, tol: f64) -> Result<ActiveSet> {
    let mut indices = Vec::new();
    let mut times = Vec::new();
    for j in 0..prob.l() {
        let mut max = f64::NEG_INFINITY;
        let mut active = Vec::new();
        for (k, &t) in cand.grid.knots().iter().enumerate() {
            let g = prob.g_at(j, t, cand.x_knot(k))?;
            if g > tol {
                return Err(Error::InfeasibleState { j: j + 1, t, value: g });
            }
            max = max.max(g);
            if g.abs() <= tol {
                active.push(t);
            }
        }
        if max >= -tol {
            indices.push(j);
            times.push(active);
        }
    }
    Ok(ActiveSet { indices, times })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlaterResult {
    pub verdict: Verdict,
    /// Per active index: a time with `g_j < -tol`, if one was found.
    pub witnesses: Vec<(usize, Option<f64>)>,
}

/// Every active constraint must be strictly negative somewhere along the candidate.
pub fn slater_check(prob: &ControlProblem, cand: &CandidateProcess, active: &ActiveSet, tol: f64) -> Result<SlaterResult> {
    let mut witnesses = Vec::new();
    for &j in &active.indices {
        let mut found = None;
        for (k, &t) in cand.grid.knots().iter().enumerate() {
            if prob.g_at(j, t, cand.x_knot(k))? < -tol {
                found = Some(t);
                break;
            }
        }
        witnesses.push((j, found));
    }
    let ok = witnesses.iter().all(|(_, w)| w.is_some());
    Ok(SlaterResult {
        verdict: Verdict::from_bool(ok),
        witnesses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, Scope};
    use crate::integrate::grid::Grid;
    use crate::problem::{Bound, ControlSet};
    use crate::weights::WeightSpec;

    fn regulator_with(g: &str) -> (ControlProblem, CandidateProcess) {
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
        .unwrap()
        .with_constraints(vec![parse(g, &Scope::new(1, 0)).unwrap()])
        .unwrap();
        let ts = Scope::time();
        let c = CandidateProcess::from_closed_form(
            &p,
            &Grid::uniform(10.0, 100).unwrap(),
            vec![parse("2*exp((1 - sqrt(2))*t)", &ts).unwrap()],
            vec![parse("-2*(1 + sqrt(2))*exp((1 - sqrt(2))*t)", &ts).unwrap()],
        )
        .unwrap();
        (p, c)
    }

    #[test]
    fn active_at_start_only() {
        let (p, c) = regulator_with("x1 - 2");
        let a = active_indices(&p, &c, 1e-8).unwrap();
        assert_eq!(a.indices, vec![0]);
        assert_eq!(a.times[0], vec![0.0]);
        let s = slater_check(&p, &c, &a, 1e-8).unwrap();
        assert_eq!(s.verdict, Verdict::Pass);
        assert!(s.witnesses[0].1.unwrap() > 0.0);
    }

    #[test]
    fn slack_and_infeasible() {
        let (p, c) = regulator_with("x1 - 5");
        assert!(active_indices(&p, &c, 1e-8).unwrap().indices.is_empty());
        let (p, c) = regulator_with("x1 - 1");
        assert!(matches!(active_indices(&p, &c, 1e-8), Err(Error::InfeasibleState { t, .. }) if t == 0.0));
    }

    #[test]
    fn degenerate_constraint_fails_slater() {
        let (p, c) = regulator_with("0*x1");
        let a = active_indices(&p, &c, 1e-8).unwrap();
        assert_eq!(slater_check(&p, &c, &a, 1e-8).unwrap().verdict, Verdict::Fail);
    }
}
