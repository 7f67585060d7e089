//! Uniform grid geometry on `[-1, 1]` and functions sampled over it.
//!
//! The interval is divided into `n + 1` grids of width `h = 2/(n+1)`; the
//! first `n` grids are half open on the right, the last one is closed. A
//! point `x` is addressed by its grid number `ι(x) ∈ {1, …, n+1}` and its
//! location `λ(x) ∈ [0, 1]` within that grid. Functions are stored as dense
//! samples on a fixed set of `λ` values shared by all grids, so that the
//! transition operators act as one `(n+1)×(n+1)` mat-vec per `λ` sample.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of `λ` samples per grid.
pub const DEFAULT_SAMPLES: usize = 16;

/// The uniform grid: `n + 1` cells of width `h = 2/(n+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Domain(format!("grid needs n >= 2, got {n}")));
        }
        Ok(Grid { n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grids, `n + 1`.
    pub fn cells(&self) -> usize {
        self.n + 1
    }

    pub fn h(&self) -> f64 {
        2.0 / (self.n as f64 + 1.0)
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        // Tolerate one ulp of slop at the endpoints.
        if !(-1.0 - 1e-14..=1.0 + 1e-14).contains(&x) {
            return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
        }
        Ok(())
    }

    /// Grid number `ι(x) = ⌊(x+1)/h⌋ + 1`, with `ι(1) = n + 1`.
    pub fn grid_number(&self, x: f64) -> Result<usize> {
        self.check_domain(x)?;
        let s = (x.clamp(-1.0, 1.0) + 1.0) / self.h();
        let i = s.floor() as usize + 1;
        Ok(i.min(self.n + 1))
    }

    /// Location within the grid, `λ(x) = (x+1)/h - (ι(x)-1)`, with `λ(1) = 1`.
    pub fn grid_location(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        let s = (x.clamp(-1.0, 1.0) + 1.0) / self.h();
        let i = self.grid_number(x)?;
        Ok((s - (i - 1) as f64).clamp(0.0, 1.0))
    }

    /// The point with grid number `j` (1-based) and location `lambda`.
    pub fn point(&self, j: usize, lambda: f64) -> f64 {
        (lambda + j as f64 - 1.0) * self.h() - 1.0
    }
}

/// Which norm a sampled function lives under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    /// Continuous functions under the sup norm (`C0`-like).
    C0,
    /// Densities under the L1 norm (`L1`-like).
    L1,
}

/// A function on `[-1,1]` stored as samples on the `(λ_m, grid_j)` lattice.
///
/// Column `m` of `values` is the projected vector `(Π f)(λ_m)`, i.e. the
/// function evaluated at the points `(λ_m + j - 1)h - 1` for `j = 1..=n+1`.
/// Reconstruction between samples is piecewise linear in `λ` within each
/// grid; grids do not interact, so seam discontinuities are representable
/// (`L1`-like data) and detectable (`C0`-like data).
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Grid,
    space: Space,
    /// Shape `(n + 1) × m_samples`; column `m` is the fiber at `λ_m`.
    values: DMatrix<f64>,
}

impl GridFunction {
    /// Sample `f` at `m_samples` equispaced `λ` values (including 0 and 1).
    pub fn from_fn(grid: Grid, m_samples: usize, space: Space, f: impl Fn(f64) -> f64) -> Self {
        assert!(m_samples >= 2, "need at least two λ samples per grid");
        let cells = grid.cells();
        let values = DMatrix::from_fn(cells, m_samples, |j, m| {
            let lambda = m as f64 / (m_samples - 1) as f64;
            f(grid.point(j + 1, lambda))
        });
        GridFunction { grid, space, values }
    }

    /// Embed per-grid data `v(j, λ)` back into a function on `[-1,1]`
    /// (the inverse of [`GridFunction::project`] on its range).
    pub fn embed(
        grid: Grid,
        m_samples: usize,
        space: Space,
        v: impl Fn(usize, f64) -> f64,
    ) -> Self {
        assert!(m_samples >= 2);
        let values = DMatrix::from_fn(grid.cells(), m_samples, |j, m| {
            v(j + 1, m as f64 / (m_samples - 1) as f64)
        });
        GridFunction { grid, space, values }
    }

    pub fn from_values(grid: Grid, space: Space, values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != grid.cells() || values.ncols() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} rows and >= 2 columns, got {}x{}",
                grid.cells(),
                values.nrows(),
                values.ncols()
            )));
        }
        Ok(GridFunction { grid, space, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn samples(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.values
    }

    /// The `λ` value of sample column `m`.
    pub fn lambda(&self, m: usize) -> f64 {
        m as f64 / (self.samples() - 1) as f64
    }

    /// The projected vector `(Π f)(λ)`, interpolating between sample columns.
    pub fn project(&self, lambda: f64) -> DVector<f64> {
        let m = self.samples();
        let pos = lambda.clamp(0.0, 1.0) * (m - 1) as f64;
        let m0 = (pos.floor() as usize).min(m - 2);
        let w = pos - m0 as f64;
        let a = self.values.column(m0);
        let b = self.values.column(m0 + 1);
        DVector::from_fn(self.grid.cells(), |j, _| {
            (1.0 - w) * a[j] + w * b[j]
        })
    }

    /// Point evaluation `(Π⁻¹ v)(x) = v_{ι(x)}(λ(x))`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let j = self.grid.grid_number(x)?;
        let lambda = self.grid.grid_location(x)?;
        let m = self.samples();
        let pos = lambda * (m - 1) as f64;
        let m0 = (pos.floor() as usize).min(m - 2);
        let w = pos - m0 as f64;
        Ok((1.0 - w) * self.values[(j - 1, m0)] + w * self.values[(j - 1, m0 + 1)])
    }

    /// Largest jump across grid seams, `max_j |v_{j+1}(0) - v_j(1)|`.
    ///
    /// Zero (up to rounding) exactly when the sampled data is continuous,
    /// which is the `C0`-like invariant.
    pub fn seam_defect(&self) -> f64 {
        let m = self.samples();
        let mut worst = 0.0f64;
        for j in 0..self.grid.cells() - 1 {
            worst = worst.max((self.values[(j + 1, 0)] - self.values[(j, m - 1)]).abs());
        }
        worst
    }

    pub fn is_c0(&self, tol: f64) -> bool {
        self.seam_defect() <= tol
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |a, &v| a.min(v))
    }

    /// Trapezoid weights in `λ`, exact for the piecewise-linear reconstruction.
    fn lambda_weights(&self) -> Vec<f64> {
        let m = self.samples();
        let w = 1.0 / (m - 1) as f64;
        (0..m)
            .map(|i| if i == 0 || i == m - 1 { 0.5 * w } else { w })
            .collect()
    }

    /// `∫ f dx`, exact for the piecewise-linear reconstruction.
    pub fn integral(&self) -> f64 {
        let w = self.lambda_weights();
        let h = self.grid.h();
        let mut total = 0.0;
        for m in 0..self.samples() {
            let mut col = 0.0;
            for j in 0..self.grid.cells() {
                col += self.values[(j, m)];
            }
            total += w[m] * col;
        }
        h * total
    }

    pub fn l1_norm(&self) -> f64 {
        let w = self.lambda_weights();
        let h = self.grid.h();
        let mut total = 0.0;
        for m in 0..self.samples() {
            let mut col = 0.0;
            for j in 0..self.grid.cells() {
                col += self.values[(j, m)].abs();
            }
            total += w[m] * col;
        }
        h * total
    }

    /// Discrete inner product `⟨f, g⟩ ≈ ∫ f g dx` using the shared diagonal
    /// quadrature (trapezoid in `λ`, exact sum over grids). Using one
    /// diagonal rule on both sides makes the forward/backward duality
    /// identity hold to rounding.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        self.check_compatible(other)?;
        let w = self.lambda_weights();
        let h = self.grid.h();
        let mut total = 0.0;
        for m in 0..self.samples() {
            let mut col = 0.0;
            for j in 0..self.grid.cells() {
                col += self.values[(j, m)] * other.values[(j, m)];
            }
            total += w[m] * col;
        }
        Ok(h * total)
    }

    pub fn check_compatible(&self, other: &GridFunction) -> Result<()> {
        if self.grid != other.grid || self.samples() != other.samples() {
            return Err(Error::ShapeMismatch(format!(
                "grid/sampling mismatch: ({}, {}) vs ({}, {})",
                self.grid.n(),
                self.samples(),
                other.grid.n(),
                other.samples()
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        GridFunction {
            grid: self.grid,
            space: self.space,
            values: self.values.map(f),
        }
    }

    pub fn scale(&self, c: f64) -> GridFunction {
        self.map(|v| c * v)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_compatible(other)?;
        Ok(GridFunction {
            grid: self.grid,
            space: self.space,
            values: &self.values - &other.values,
        })
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        self.check_compatible(other)?;
        Ok(GridFunction {
            grid: self.grid,
            space: self.space,
            values: &self.values + &other.values,
        })
    }

    /// Unique sample points in ascending order with their values (seam
    /// duplicates collapsed; for discontinuous data the left grid wins).
    pub fn sample_points(&self) -> Vec<(f64, f64)> {
        let m = self.samples();
        let cells = self.grid.cells();
        let mut out = Vec::with_capacity(cells * (m - 1) + 1);
        for j in 0..cells {
            let last = if j + 1 == cells { m } else { m - 1 };
            for k in 0..last {
                out.push((self.grid.point(j + 1, self.lambda(k)), self.values[(j, k)]));
            }
        }
        out
    }

    /// CSV serialization: header `x,value`, one row per sample point.
    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "x,value")?;
        for (x, v) in self.sample_points() {
            writeln!(w, "{},{}", fmt_float(x), fmt_float(v))?;
        }
        Ok(())
    }
}

/// Fixed-width float formatting used for all data files, so identical runs
/// produce byte-identical output.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.17e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_number_examples() {
        let g = Grid::new(3).unwrap(); // h = 0.5
        assert_eq!(g.grid_number(-1.0).unwrap(), 1);
        assert_eq!(g.grid_number(1.0).unwrap(), 4);
        assert_eq!(g.grid_number(-0.5).unwrap(), 2); // right-half-open cells
        assert!(g.grid_number(1.5).is_err());
    }

    #[test]
    fn grid_location_examples() {
        let g = Grid::new(3).unwrap();
        assert_eq!(g.grid_location(-1.0).unwrap(), 0.0);
        assert_eq!(g.grid_location(1.0).unwrap(), 1.0);
        assert!((g.grid_location(-0.25).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iota_lambda_reconstruct_x() {
        let g = Grid::new(13).unwrap();
        for k in 0..=1000 {
            let x = -1.0 + 2.0 * k as f64 / 1000.0;
            let i = g.grid_number(x).unwrap();
            let l = g.grid_location(x).unwrap();
            let back = (l + i as f64 - 1.0) * g.h() - 1.0;
            assert!((back - x).abs() <= 4.0 * f64::EPSILON, "x={x} back={back}");
        }
    }

    #[test]
    fn constant_projects_to_ones_and_embeds_back() {
        let g = Grid::new(7).unwrap();
        let f = GridFunction::from_fn(g, 8, Space::C0, |_| 1.0);
        let v = f.project(0.37);
        assert!(v.iter().all(|&x| (x - 1.0).abs() < 1e-15));
        assert!((f.eval(0.123).unwrap() - 1.0).abs() < 1e-15);
        assert!((f.integral() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn round_trip_identity_on_linear_function() {
        let g = Grid::new(7).unwrap();
        let f = GridFunction::from_fn(g, DEFAULT_SAMPLES, Space::C0, |x| x);
        for k in 0..=1000 {
            let x = -1.0 + 2.0 * k as f64 / 1000.0;
            assert!((f.eval(x).unwrap() - x).abs() <= 1e-14);
        }
        // Π(Π⁻¹ v) = v on the range of Π: project at a sample λ returns the column.
        let col = f.project(f.lambda(3));
        for j in 0..g.cells() {
            assert!((col[j] - f.values()[(j, 3)]).abs() <= 1e-15);
        }
    }

    #[test]
    fn seam_discontinuity_is_flagged() {
        let g = Grid::new(4).unwrap();
        // Per-grid constant equal to the grid number: jumps at every seam.
        let f = GridFunction::embed(g, 4, Space::C0, |j, _| j as f64);
        assert!(!f.is_c0(1e-12));
        assert!((f.seam_defect() - 1.0).abs() < 1e-15);
        let smooth = GridFunction::from_fn(g, 4, Space::C0, |x| x * x);
        assert!(smooth.is_c0(1e-14));
    }

    #[test]
    fn projection_contracts_norms_and_preserves_positivity() {
        let g = Grid::new(9).unwrap();
        let f = GridFunction::from_fn(g, 12, Space::L1, |x| (1.3 * x).sin().abs() + 0.1);
        assert!(f.min_value() >= 0.0);
        let v = f.project(0.7);
        assert!(v.iter().all(|&x| x >= 0.0));
        assert!(v.amax() <= f.sup_norm() + 1e-15);
        // L1 of the embedded function is h * Σ_j ∫|v_j|, each fiber bounded by sup over λ of the fiber data.
        assert!(f.l1_norm() <= 2.0 * f.sup_norm() + 1e-15);
    }

    #[test]
    fn inner_product_matches_integral_of_product() {
        let g = Grid::new(31).unwrap();
        let f = GridFunction::from_fn(g, 16, Space::C0, |x| x);
        let one = GridFunction::from_fn(g, 16, Space::C0, |_| 1.0);
        assert!(f.inner(&one).unwrap().abs() < 1e-14);
        let sq = GridFunction::from_fn(g, 16, Space::C0, |x| x * x);
        // ∫ x·x dx = 2/3 up to the piecewise-linear quadrature error O((h/M)²).
        assert!((f.inner(&f).unwrap() - 2.0 / 3.0).abs() < 1e-5);
        assert!((sq.integral() - 2.0 / 3.0).abs() < 1e-5);
    }
}
