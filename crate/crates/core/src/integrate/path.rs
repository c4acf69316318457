use std::io::{self, Write};

use super::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interp {
    Linear,
    /// Cubic Hermite; requires derivative samples.
    Hermite,
    /// Value `v_{k+1}` on `(t_k, t_{k+1}]`, `v_0` at `t_0`.
    LeftStep,
}

/// Vector-valued samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: Grid,
    pub values: Vec<Vec<f64>>,
    pub derivs: Option<Vec<Vec<f64>>>,
    pub interp: Interp,
}

impl Path {
    pub fn new(grid: Grid, values: Vec<Vec<f64>>, interp: Interp) -> Self {
        debug_assert_eq!(grid.len(), values.len());
        Path {
            grid,
            values,
            derivs: None,
            interp,
        }
    }

    pub fn hermite(grid: Grid, values: Vec<Vec<f64>>, derivs: Vec<Vec<f64>>) -> Self {
        debug_assert_eq!(values.len(), derivs.len());
        Path {
            grid,
            values,
            derivs: Some(derivs),
            interp: Interp::Hermite,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let knots = self.grid.knots();
        if t <= knots[0] {
            return self.values[0].clone();
        }
        if t >= self.grid.t_max() {
            return self.values.last().unwrap().clone();
        }
        let k = self.grid.cell_of(t);
        self.in_cell(k, t)
    }

    /// Value inside cell `k` (`t_k ≤ t ≤ t_{k+1}`), using that cell's rule.
    pub fn in_cell(&self, k: usize, t: f64) -> Vec<f64> {
        let knots = self.grid.knots();
        let (t0, t1) = (knots[k], knots[k + 1]);
        let (a, b) = (&self.values[k], &self.values[k + 1]);
        match self.interp {
            Interp::LeftStep => {
                if t <= t0 && k == 0 {
                    a.clone()
                } else {
                    b.clone()
                }
            }
            Interp::Linear => {
                let s = (t - t0) / (t1 - t0);
                a.iter().zip(b).map(|(x, y)| x + s * (y - x)).collect()
            }
            Interp::Hermite => {
                let d = self.derivs.as_ref().expect("Hermite path without derivatives");
                let h = t1 - t0;
                let s = (t - t0) / h;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                (0..a.len())
                    .map(|i| h00 * a[i] + h10 * h * d[k][i] + h01 * b[i] + h11 * h * d[k + 1][i])
                    .collect()
            }
        }
    }

    /// Grid sup of `‖·‖`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| norm(v)).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W, names: &[&str]) -> io::Result<()> {
        write_series_csv(out, self.grid.knots(), &self.values, names)
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// CSV with a `t` column and one column per component, 17 significant digits.
pub fn write_series_csv<W: Write>(out: &mut W, times: &[f64], values: &[Vec<f64>], names: &[&str]) -> io::Result<()> {
    write!(out, "t")?;
    for name in names {
        write!(out, ",{name}")?;
    }
    writeln!(out)?;
    for (t, row) in times.iter().zip(values) {
        write!(out, "{t:.16e}")?;
        for v in row {
            write!(out, ",{v:.16e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
