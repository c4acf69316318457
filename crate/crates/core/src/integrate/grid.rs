use crate::error::{Error, Result};

/// Smallest positive knot; weights with a pole at 0 are never evaluated below it.
pub const T_FLOOR: f64 = 1e-12;

/// Strictly increasing knots starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    knots: Vec<f64>,
}

impl Grid {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidGrid("need at least two knots".into()));
        }
        if knots[0] != 0.0 {
            return Err(Error::InvalidGrid(format!("first knot is {}, expected 0", knots[0])));
        }
        for (k, w) in knots.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "knots not strictly increasing at index {}: {} then {}",
                    k + 1,
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(Grid { knots })
    }

    /// `cells` equal cells on `[0, t_max]`.
    pub fn uniform(t_max: f64, cells: usize) -> Result<Self> {
        check_args(t_max, cells)?;
        let h = t_max / cells as f64;
        let mut knots: Vec<f64> = (0..cells).map(|k| k as f64 * h).collect();
        knots.push(t_max);
        Grid::new(knots)
    }

    /// 0 followed by `points - 1` log-uniform knots from [`T_FLOOR`] to `t_max`.
    pub fn log_uniform(t_max: f64, points: usize) -> Result<Self> {
        if points < 3 {
            return Err(Error::InvalidGrid("log-uniform grid needs at least 3 points".into()));
        }
        check_args(t_max, points)?;
        if t_max <= T_FLOOR {
            return Err(Error::InvalidGrid(format!("t_max={t_max} below the grid floor")));
        }
        let count = points - 1;
        let ratio = (t_max / T_FLOOR).ln() / (count - 1) as f64;
        let mut knots = vec![0.0];
        knots.extend((0..count).map(|k| T_FLOOR * (ratio * k as f64).exp()));
        *knots.last_mut().unwrap() = t_max;
        Grid::new(knots)
    }

    /// Geometric refinement from [`T_FLOOR`] up to one uniform cell width,
    /// then uniform cells to `t_max`. `cells` is the total cell count.
    pub fn standard(t_max: f64, cells: usize) -> Result<Self> {
        check_args(t_max, cells)?;
        let geometric = (cells / 64).clamp(4, 64);
        if cells <= geometric + 1 {
            return Grid::uniform(t_max, cells);
        }
        let uniform = cells - geometric;
        let h = t_max / uniform as f64;
        if h <= T_FLOOR * 10.0 {
            return Grid::uniform(t_max, cells);
        }
        let ratio = (h / T_FLOOR).ln() / geometric as f64;
        let mut knots = vec![0.0];
        knots.extend((0..geometric).map(|k| T_FLOOR * (ratio * k as f64).exp()));
        knots.extend((1..uniform).map(|k| k as f64 * h));
        knots.push(t_max);
        Grid::new(knots)
    }

    /// Merges extra breakpoints inside `[0, t_max]`, dropping near-duplicates.
    pub fn with_breakpoints(&self, extra: &[f64]) -> Result<Self> {
        let mut all: Vec<f64> = self.knots.iter().copied().chain(extra.iter().copied()).collect();
        let t_max = self.t_max();
        all.retain(|t| (0.0..=t_max).contains(t));
        all.sort_by(f64::total_cmp);
        let mut merged: Vec<f64> = Vec::with_capacity(all.len());
        for t in all {
            match merged.last() {
                Some(&last) if t - last <= 1e-14 * t.abs().max(1.0) => {}
                _ => merged.push(t),
            }
        }
        Grid::new(merged)
    }

    /// Knots on `[0, t_end]`, with `t_end` appended when it is not a knot.
    pub fn truncated(&self, t_end: f64) -> Result<Self> {
        let mut knots: Vec<f64> = self.knots.iter().copied().filter(|&t| t < t_end).collect();
        knots.push(t_end);
        Grid::new(knots)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn t_max(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    /// Index `k` of the cell `(t_k, t_{k+1}]` containing `t`; `t ≤ 0` maps to cell 0.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = self.knots.partition_point(|&s| s < t);
        k.saturating_sub(1).min(self.cells() - 1)
    }

    /// Index of the largest knot `≤ t`.
    pub fn knot_at_or_before(&self, t: f64) -> usize {
        self.knots.partition_point(|&s| s <= t).saturating_sub(1)
    }
}

fn check_args(t_max: f64, cells: usize) -> Result<()> {
    if !(t_max > 0.0) || !t_max.is_finite() {
        return Err(Error::InvalidGrid(format!("t_max must be positive and finite, got {t_max}")));
    }
    if cells == 0 {
        return Err(Error::InvalidGrid("cell count must be positive".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_grid_shape() {
        let g = Grid::standard(100.0, 4096).unwrap();
        assert_eq!(g.cells(), 4096);
        assert_eq!(g.knots()[0], 0.0);
        assert_eq!(g.knots()[1], T_FLOOR);
        assert_eq!(g.t_max(), 100.0);
    }

    #[test]
    fn log_uniform_has_requested_points() {
        let g = Grid::log_uniform(50.0, 2048).unwrap();
        assert_eq!(g.len(), 2048);
        assert_eq!(g.t_max(), 50.0);
    }

    #[test]
    fn rejects_bad_knots() {
        assert!(matches!(Grid::new(vec![0.0, 1.0, 1.0]), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::new(vec![0.5, 1.0]), Err(Error::InvalidGrid(_))));
        assert!(matches!(Grid::uniform(-1.0, 4), Err(Error::InvalidGrid(_))));
    }

    #[test]
    fn cell_lookup_is_left_open() {
        let g = Grid::uniform(4.0, 4).unwrap();
        assert_eq!(g.cell_of(0.0), 0);
        assert_eq!(g.cell_of(1.0), 0);
        assert_eq!(g.cell_of(1.5), 1);
        assert_eq!(g.cell_of(4.0), 3);
        assert_eq!(g.knot_at_or_before(2.0), 2);
    }

    #[test]
    fn breakpoints_merge() {
        let g = Grid::uniform(1.0, 2).unwrap().with_breakpoints(&[0.25, 0.5, 2.0]).unwrap();
        assert_eq!(g.knots(), &[0.0, 0.25, 0.5, 1.0]);
    }
}
