//! Boundary-modified Grünwald rate matrices and the interpolated transition
//! operators built from them.
//!
//! For each of the six supported boundary pairs the finite-state generator
//! `G_{n×n}` is a Toeplitz band of Grünwald coefficients with the first row,
//! the last column and the top-right corner replaced by boundary weights.
//! The `(n+1)×(n+1)` interpolation matrix `G_{n+1}(λ)` blends two adjacent
//! copies of `G_{n×n}` so that the embedded process on `[-1,1]` is a Feller
//! process; `λ = 0` and `λ = 1` recover shifted copies of the finite-state
//! chain. The backward operator applies `G_{n+1}(λ(x))`, the forward
//! (Fokker–Planck) operator its transpose.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fraccalc::{FractionalOrder, GrunwaldTable};
use crate::grid::{Grid, GridFunction};

/// Left boundary condition of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeftBc {
    /// Kill on drifting across the boundary.
    Dirichlet,
    /// Fast-forward: restart at the first re-entry state.
    Neumann,
    /// Reflect: restart in the first state.
    NeumannStar,
}

/// Right boundary condition of the chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RightBc {
    /// Kill on jumping across the boundary.
    Dirichlet,
    /// Fast-forward: collect overshooting jumps in the last state.
    Neumann,
}

/// Operator family realised by the forward generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    MixedCaputo,
    RiemannLiouville,
}

/// One of the six supported boundary-condition pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoundaryPair {
    pub left: LeftBc,
    pub right: RightBc,
}

impl BoundaryPair {
    pub const DD: BoundaryPair = BoundaryPair { left: LeftBc::Dirichlet, right: RightBc::Dirichlet };
    pub const DN: BoundaryPair = BoundaryPair { left: LeftBc::Dirichlet, right: RightBc::Neumann };
    pub const ND: BoundaryPair = BoundaryPair { left: LeftBc::Neumann, right: RightBc::Dirichlet };
    pub const NN: BoundaryPair = BoundaryPair { left: LeftBc::Neumann, right: RightBc::Neumann };
    pub const NSTAR_D: BoundaryPair =
        BoundaryPair { left: LeftBc::NeumannStar, right: RightBc::Dirichlet };
    pub const NSTAR_N: BoundaryPair =
        BoundaryPair { left: LeftBc::NeumannStar, right: RightBc::Neumann };

    /// All six pairs, in the order they appear throughout reports.
    pub const ALL: [BoundaryPair; 6] = [
        Self::DD,
        Self::DN,
        Self::ND,
        Self::NN,
        Self::NSTAR_D,
        Self::NSTAR_N,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace("STAR", "*");
        match norm.as_str() {
            "DD" => Ok(Self::DD),
            "DN" => Ok(Self::DN),
            "ND" => Ok(Self::ND),
            "NN" => Ok(Self::NN),
            "N*D" => Ok(Self::NSTAR_D),
            "N*N" => Ok(Self::NSTAR_N),
            _ => Err(Error::UnsupportedPair(s.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.left, self.right) {
            (LeftBc::Dirichlet, RightBc::Dirichlet) => "DD",
            (LeftBc::Dirichlet, RightBc::Neumann) => "DN",
            (LeftBc::Neumann, RightBc::Dirichlet) => "ND",
            (LeftBc::Neumann, RightBc::Neumann) => "NN",
            (LeftBc::NeumannStar, RightBc::Dirichlet) => "N*D",
            (LeftBc::NeumannStar, RightBc::Neumann) => "N*N",
        }
    }

    /// The operator family of the forward (L1) generator: reflecting pairs
    /// realise the Riemann–Liouville derivative, everything else the mixed
    /// Caputo form.
    pub fn forward_kind(&self) -> OperatorKind {
        if self.left == LeftBc::NeumannStar {
            OperatorKind::RiemannLiouville
        } else {
            OperatorKind::MixedCaputo
        }
    }

    /// The exponent `η` of the free domain component of the forward
    /// generator: 0 for mixed Caputo, `α - 2` for Riemann–Liouville.
    pub fn forward_eta(&self, alpha: f64) -> f64 {
        match self.forward_kind() {
            OperatorKind::MixedCaputo => 0.0,
            OperatorKind::RiemannLiouville => alpha - 2.0,
        }
    }

    /// Conservative pairs keep the process alive forever (zero row sums).
    pub fn is_conservative(&self) -> bool {
        matches!(
            (self.left, self.right),
            (LeftBc::Neumann | LeftBc::NeumannStar, RightBc::Neumann)
        )
    }
}

impl std::fmt::Display for BoundaryPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for BoundaryPair {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

/// Unscaled boundary weights of `G_{n×n}`: the full first row (corner
/// included as the last entry), and the last column read bottom-up.
#[derive(Debug, Clone)]
pub struct BoundaryWeights {
    /// `b^l_1, …, b^l_{n-1}, b_n` — the first row.
    pub left_row: Vec<f64>,
    /// `b^r_1, …, b^r_{n-1}` — the last column, `g_{i,n} = b^r_{n+1-i}`.
    pub right_col: Vec<f64>,
    /// The top-right corner `b_n` (same as the last entry of `left_row`).
    pub corner: f64,
}

/// Boundary weights per the weight table, unscaled (caller applies `1/h^α`).
pub fn boundary_weights(
    alpha: FractionalOrder,
    bc: BoundaryPair,
    n: usize,
) -> Result<BoundaryWeights> {
    if n < 3 {
        return Err(Error::Domain(format!("boundary weights need n >= 3, got {n}")));
    }
    let a = alpha.get();
    let ga = GrunwaldTable::new(a, n + 1);
    let gam1 = GrunwaldTable::new(a - 1.0, n + 1);

    // b^l_i for i = 0..=n; b^l_0 enters only the right-Neumann corner sum.
    let bl = |i: usize| -> f64 {
        match bc.left {
            LeftBc::Dirichlet => ga.coeff(i),
            LeftBc::Neumann => {
                if i == 0 {
                    0.0
                } else {
                    -gam1.coeff(i - 1)
                }
            }
            LeftBc::NeumannStar => match i {
                0 => 0.0,
                1 => gam1.coeff(1),
                _ => ga.coeff(i),
            },
        }
    };

    let mut left_row: Vec<f64> = (1..n).map(bl).collect();
    let right_col: Vec<f64> = match bc.right {
        RightBc::Dirichlet => (1..n).map(|i| ga.coeff(i)).collect(),
        RightBc::Neumann => (1..n).map(|i| -gam1.coeff(i - 1)).collect(),
    };
    let corner = match bc.right {
        RightBc::Dirichlet => bl(n),
        RightBc::Neumann => {
            if bc == BoundaryPair::NN {
                // Displayed form of the doubly fast-forwarded matrix; it
                // coincides with -Σ b^l_i (asserted in tests).
                GrunwaldTable::new(a - 2.0, n).coeff(n - 2)
            } else {
                let mut s = crate::fraccalc::Dd::from_f64(0.0);
                for i in 0..n {
                    s = s.add(crate::fraccalc::Dd::from_f64(bl(i)));
                }
                -s.value()
            }
        }
    };
    left_row.push(corner);
    Ok(BoundaryWeights { left_row, right_col, corner })
}

/// The `n×n` transition rate matrix `G^{LR}_{n×n}`, stored structurally:
/// Toeplitz interior band plus boundary row/column/corner, all unscaled.
/// Entries of the actual generator carry the factor `1/h^α`.
#[derive(Debug, Clone)]
pub struct RateMatrix {
    alpha: FractionalOrder,
    bc: BoundaryPair,
    n: usize,
    /// `𝒢^α_0..=𝒢^α_n` (unscaled interior band).
    interior: Vec<f64>,
    weights: BoundaryWeights,
}

impl RateMatrix {
    /// Assemble and validate the rate matrix (off-diagonals nonnegative, row
    /// sums nonpositive; conservative pairs sum to zero).
    pub fn new(alpha: FractionalOrder, bc: BoundaryPair, n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Domain(format!("rate matrix needs n >= 3, got {n}")));
        }
        let weights = boundary_weights(alpha, bc, n)?;
        let interior = GrunwaldTable::new(alpha.get(), n).coeffs().to_vec();
        let m = RateMatrix { alpha, bc, n, interior, weights };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        for i in 1..=self.n {
            let mut row_sum = 0.0;
            for j in 1..=self.n {
                let g = self.entry_unscaled(i, j);
                if i != j && g < -1e-14 {
                    return Err(Error::Invariant(format!(
                        "negative off-diagonal ({i},{j}) = {g:e} for {} at alpha = {}",
                        self.bc,
                        self.alpha.get()
                    )));
                }
                row_sum += g;
            }
            if row_sum > 1e-12 {
                return Err(Error::Invariant(format!(
                    "positive row sum {row_sum:e} in row {i} for {}",
                    self.bc
                )));
            }
            if self.bc.is_conservative() && row_sum.abs() > 1e-12 {
                return Err(Error::Invariant(format!(
                    "conservative pair {} has nonzero row sum {row_sum:e} in row {i}",
                    self.bc
                )));
            }
        }
        Ok(())
    }

    pub fn alpha(&self) -> FractionalOrder {
        self.alpha
    }

    pub fn bc(&self) -> BoundaryPair {
        self.bc
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        2.0 / (self.n as f64 + 1.0)
    }

    /// `h^{-α}`, the scale of every entry.
    pub fn scale(&self) -> f64 {
        self.h().powf(-self.alpha.get())
    }

    pub fn weights(&self) -> &BoundaryWeights {
        &self.weights
    }

    pub fn interior_band(&self) -> &[f64] {
        &self.interior
    }

    /// Unscaled entry `g_{i,j}` (1-based indices).
    pub fn entry_unscaled(&self, i: usize, j: usize) -> f64 {
        debug_assert!((1..=self.n).contains(&i) && (1..=self.n).contains(&j));
        if i == 1 {
            self.weights.left_row[j - 1]
        } else if j == self.n {
            self.weights.right_col[self.n - i]
        } else {
            let k = j as i64 - i as i64 + 1;
            if k < 0 {
                0.0
            } else {
                self.interior[k as usize]
            }
        }
    }

    /// Scaled entry of the generator, `g_{i,j}/h^α`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entry_unscaled(i, j) * self.scale()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let s = self.scale();
        DMatrix::from_fn(self.n, self.n, |i, j| self.entry_unscaled(i + 1, j + 1) * s)
    }

    pub fn row_sums_unscaled(&self) -> Vec<f64> {
        (1..=self.n)
            .map(|i| (1..=self.n).map(|j| self.entry_unscaled(i, j)).sum())
            .collect()
    }

    /// Structured JSON export `{alpha, bc, n, interior_band, left_row,
    /// right_col, corner}` with entries carrying the `1/h^α` scale.
    pub fn to_json(&self) -> serde_json::Value {
        let s = self.scale();
        serde_json::json!({
            "alpha": self.alpha.get(),
            "bc": self.bc.name(),
            "n": self.n,
            "interior_band": self.interior.iter().map(|v| v * s).collect::<Vec<_>>(),
            "left_row": self.weights.left_row.iter().map(|v| v * s).collect::<Vec<_>>(),
            "right_col": self.weights.right_col.iter().map(|v| v * s).collect::<Vec<_>>(),
            "corner": self.weights.corner * s,
        })
    }
}

/// The four interpolating functions of `λ` used to splice boundary behaviour
/// into the interpolation matrix. Unused ones are constant 1.
#[derive(Debug, Clone, Copy)]
pub struct InterpolatingFunctions {
    alpha: f64,
    bc: BoundaryPair,
}

impl InterpolatingFunctions {
    pub fn new(alpha: FractionalOrder, bc: BoundaryPair) -> Self {
        InterpolatingFunctions { alpha: alpha.get(), bc }
    }

    pub fn d_left(&self, lambda: f64) -> f64 {
        match self.bc.left {
            LeftBc::Dirichlet => lambda * self.alpha / (1.0 - lambda + lambda * self.alpha),
            _ => 1.0,
        }
    }

    pub fn n_left(&self, lambda: f64) -> f64 {
        match self.bc.left {
            LeftBc::Dirichlet => 1.0,
            _ => lambda,
        }
    }

    pub fn d_right(&self, lambda: f64) -> f64 {
        match self.bc.right {
            RightBc::Dirichlet => {
                (1.0 - lambda) * self.alpha / (lambda + (1.0 - lambda) * self.alpha)
            }
            RightBc::Neumann => 1.0,
        }
    }

    pub fn n_right(&self, lambda: f64) -> f64 {
        match self.bc.right {
            RightBc::Dirichlet => 1.0,
            RightBc::Neumann => 1.0 - lambda,
        }
    }
}

/// Assemble the `(n+1)×(n+1)` interpolation matrix `G^{LR}_{n+1}(λ)`,
/// scaled by `1/h^α`.
pub fn interpolation_matrix(rate: &RateMatrix, lambda: f64) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda = {lambda} outside [0, 1]")));
    }
    let n = rate.n();
    let fns = InterpolatingFunctions::new(rate.alpha(), rate.bc());
    let (dl, nl, dr, nr) = (
        fns.d_left(lambda),
        fns.n_left(lambda),
        fns.d_right(lambda),
        fns.n_right(lambda),
    );
    let s = rate.scale();
    let g = |i: usize, j: usize| rate.entry_unscaled(i, j);
    let mut a = DMatrix::zeros(n + 1, n + 1);
    // First row: grid 1 keeps the boundary row, Dirichlet-damped; top-right is 0.
    a[(0, 0)] = g(1, 1);
    for j in 2..=n {
        a[(0, j - 1)] = dl * g(1, j);
    }
    // Interior rows blend the two adjacent finite-state rows.
    for i in 2..=n {
        a[(i - 1, 0)] = nl * g(i, 1);
        for j in 2..=n {
            a[(i - 1, j - 1)] = (1.0 - lambda) * g(i - 1, j - 1) + lambda * g(i, j);
        }
        a[(i - 1, n)] = nr * g(i - 1, n);
    }
    // Last row: grid n+1 keeps the boundary column behaviour.
    for j in 2..=n {
        a[(n, j - 1)] = dr * g(n, j - 1);
    }
    a[(n, n)] = g(n, n);
    a *= s;
    Ok(a)
}

/// The discrete transition operators for one `(α, bc, n)` context, with the
/// interpolation matrices cached at the `λ` sample values of the grid
/// functions they act on.
pub struct Operator {
    rate: RateMatrix,
    grid: Grid,
    samples: usize,
    mats: Vec<DMatrix<f64>>,
    mats_t: Vec<DMatrix<f64>>,
}

impl Operator {
    pub fn new(alpha: FractionalOrder, bc: BoundaryPair, n: usize, samples: usize) -> Result<Self> {
        let rate = RateMatrix::new(alpha, bc, n)?;
        let grid = Grid::new(n)?;
        assert!(samples >= 2);
        let mut mats = Vec::with_capacity(samples);
        let mut mats_t = Vec::with_capacity(samples);
        for m in 0..samples {
            let lambda = m as f64 / (samples - 1) as f64;
            let a = interpolation_matrix(&rate, lambda)?;
            mats_t.push(a.transpose());
            mats.push(a);
        }
        Ok(Operator { rate, grid, samples, mats, mats_t })
    }

    pub fn rate(&self) -> &RateMatrix {
        &self.rate
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn alpha(&self) -> FractionalOrder {
        self.rate.alpha()
    }

    pub fn bc(&self) -> BoundaryPair {
        self.rate.bc()
    }

    pub(crate) fn matrix(&self, m: usize) -> &DMatrix<f64> {
        &self.mats[m]
    }

    pub(crate) fn matrix_t(&self, m: usize) -> &DMatrix<f64> {
        &self.mats_t[m]
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        if f.grid() != self.grid || f.samples() != self.samples {
            return Err(Error::ShapeMismatch(format!(
                "operator is sampled as ({}, {}), function as ({}, {})",
                self.grid.n(),
                self.samples,
                f.grid().n(),
                f.samples()
            )));
        }
        Ok(())
    }

    fn apply_with(&self, f: &GridFunction, mats: &[DMatrix<f64>]) -> Result<GridFunction> {
        self.check(f)?;
        let cells = self.grid.cells();
        let mut out = f.clone();
        let mut v = DVector::zeros(cells);
        for m in 0..self.samples {
            v.copy_from(&f.values().column(m));
            let w = &mats[m] * &v;
            out.values_mut().column_mut(m).copy_from(&w);
        }
        Ok(out)
    }

    /// Backward operator `G_{-h} f(x) = [G_{n+1}(λ(x)) (Πf)(λ(x))]_{ι(x)}`.
    pub fn apply_backward(&self, f: &GridFunction) -> Result<GridFunction> {
        self.apply_with(f, &self.mats)
    }

    /// Forward operator `G_{+h} f(x) = [G_{n+1}(λ(x))ᵀ (Πf)(λ(x))]_{ι(x)}`.
    pub fn apply_forward(&self, f: &GridFunction) -> Result<GridFunction> {
        self.apply_with(f, &self.mats_t)
    }
}
