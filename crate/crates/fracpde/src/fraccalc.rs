//! Grünwald coefficients, power functions, fractional integrals and
//! Mittag-Leffler-type series.
//!
//! The Grünwald coefficients `𝒢^q_k = (-1)^k C(q, k)` drive everything else
//! in the crate. They are generated by the forward recursion
//! `𝒢^q_{k+1} = ((k - q)/(k + 1)) 𝒢^q_k`, `𝒢^q_0 = 1`, carried out in
//! double-double arithmetic: the identity checks downstream (telescoping,
//! convolution) compare quantities that cancel ten or more digits, and plain
//! f64 recursions leave too little headroom at table lengths of 10⁴.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::grid::GridFunction;

/// A fractional order `α ∈ (1, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalOrder(f64);

impl FractionalOrder {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 1.0 && alpha <= 2.0 {
            Ok(FractionalOrder(alpha))
        } else {
            Err(Error::InvalidOrder(alpha))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

// ---------------------------------------------------------------------------
// Double-double arithmetic (error-free transformations)
// ---------------------------------------------------------------------------

/// Unevaluated sum of two f64 with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    #[inline]
    pub fn from_f64(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    /// Exact difference of two f64 values.
    #[inline]
    pub fn diff(a: f64, b: f64) -> Dd {
        let (hi, lo) = two_sum(a, -b);
        Dd { hi, lo }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let e = e + self.lo + o.lo;
        let (hi, lo) = quick_two_sum(s, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    #[inline]
    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + self.hi * o.lo + self.lo * o.hi;
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    #[inline]
    pub fn div_f64(self, o: f64) -> Dd {
        let q1 = self.hi / o;
        let (p, e) = two_prod(q1, o);
        let r = self.sub(Dd { hi: p, lo: e });
        let q2 = (r.hi + r.lo) / o;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }
}

// ---------------------------------------------------------------------------
// Grünwald tables
// ---------------------------------------------------------------------------

/// Cached Grünwald coefficients `𝒢^q_k`, `k = 0..=k_max`, plus their running
/// partial sums.
#[derive(Debug, Clone)]
pub struct GrunwaldTable {
    order: f64,
    dd: Vec<Dd>,
    coeffs: Vec<f64>,
    cumsum: Vec<f64>,
}

impl GrunwaldTable {
    /// Build the table by the forward recursion. All real orders `q` are
    /// admissible; consumers restrict the range.
    pub fn new(order: f64, k_max: usize) -> GrunwaldTable {
        let mut dd = Vec::with_capacity(k_max + 1);
        let mut coeffs = Vec::with_capacity(k_max + 1);
        let mut cumsum = Vec::with_capacity(k_max + 1);
        let mut c = Dd::from_f64(1.0);
        let mut s = c;
        dd.push(c);
        coeffs.push(1.0);
        cumsum.push(1.0);
        for k in 0..k_max {
            // c_{k+1} = c_k · (k - q) / (k + 1)
            c = c.mul(Dd::diff(k as f64, order)).div_f64(k as f64 + 1.0);
            s = s.add(c);
            dd.push(c);
            coeffs.push(c.value());
            cumsum.push(s.value());
        }
        GrunwaldTable { order, dd, coeffs, cumsum }
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn k_max(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, k: usize) -> f64 {
        self.coeffs[k]
    }

    /// `𝒢^q_i` with the convention `𝒢^q_{-n} = 0`.
    pub fn coeff_signed(&self, i: i64) -> f64 {
        if i < 0 {
            0.0
        } else {
            self.coeffs[i as usize]
        }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// `Σ_{n=0}^{k} 𝒢^q_n`, accumulated in extended precision.
    pub fn partial_sum(&self, k: usize) -> f64 {
        self.cumsum[k]
    }

    pub(crate) fn coeff_dd(&self, k: usize) -> Dd {
        self.dd[k]
    }
}

/// Both sides of the convolution identity
/// `Σ_{n=0}^{k} 𝒢^q_n 𝒢^Q_{k-n} = 𝒢^{q+Q}_k`, evaluated independently.
/// Returns `(lhs, rhs)`.
pub fn grunwald_convolve_check(q: f64, big_q: f64, k: usize) -> (f64, f64) {
    let a = GrunwaldTable::new(q, k);
    let b = GrunwaldTable::new(big_q, k);
    let mut acc = Dd::from_f64(0.0);
    for n in 0..=k {
        acc = acc.add(a.coeff_dd(n).mul(b.coeff_dd(k - n)));
    }
    let rhs = GrunwaldTable::new(q + big_q, k).coeff(k);
    (acc.value(), rhs)
}

// ---------------------------------------------------------------------------
// Power functions
// ---------------------------------------------------------------------------

/// Which endpoint the kernel anchors at: `p^+` grows from `-1`, `p^-` from `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Plus,
    Minus,
}

/// The power function `p^±_β(x) = (1 ± x)^β / Γ(β + 1)`.
#[derive(Debug, Clone, Copy)]
pub struct PowerFunction {
    beta: f64,
    side: Side,
}

impl PowerFunction {
    pub fn new(beta: f64, side: Side) -> Result<Self> {
        if beta <= -1.0 {
            return Err(Error::Domain(format!("power exponent beta = {beta} <= -1")));
        }
        Ok(PowerFunction { beta, side })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        power_eval(self.beta, self.side, x)
    }
}

/// `p^±_β(x)`. For `β ∈ (-1, 0)` the value at the anchored endpoint is
/// flagged as `+∞` rather than evaluated.
pub fn power_eval(beta: f64, side: Side, x: f64) -> Result<f64> {
    if beta <= -1.0 {
        return Err(Error::Domain(format!("power exponent beta = {beta} <= -1")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
    }
    let y = match side {
        Side::Plus => 1.0 + x,
        Side::Minus => 1.0 - x,
    };
    Ok(power_of_distance(beta, y))
}

/// `y^β / Γ(β+1)` for `y >= 0`, with the `1/Γ` convention at poles:
/// `p_0 ≡ 1` and `p_β ≡ 0` whenever `β` is a negative integer.
pub(crate) fn power_of_distance(beta: f64, y: f64) -> f64 {
    if beta < 0.0 && (beta - beta.round()).abs() < 1e-300 {
        return 0.0; // 1/Γ(nonpositive integer) = 0
    }
    if y == 0.0 {
        return if beta == 0.0 {
            1.0
        } else if beta > 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
    }
    y.powf(beta) / gamma(beta + 1.0)
}

// ---------------------------------------------------------------------------
// Fractional integrals
// ---------------------------------------------------------------------------

/// The fractional integral `I^ν_± f` of a sampled function, by product
/// integration: the weakly singular kernel `p_{ν-1}` is integrated exactly
/// against the piecewise-linear reconstruction of `f`, segment by segment.
pub fn frac_integral(nu: f64, f: &GridFunction, side: Side) -> Result<GridFunction> {
    if nu <= 0.0 {
        return Err(Error::Quadrature(format!("fractional integral needs nu > 0, got {nu}")));
    }
    let grid = f.grid();
    let m = f.samples();
    let cells = grid.cells();
    let gamma_nu = gamma(nu);

    // Segment list [(a, b, fa, fb)] in ascending x, respecting per-grid data.
    let mut segs = Vec::with_capacity(cells * (m - 1));
    for j in 0..cells {
        for k in 0..m - 1 {
            let a = grid.point(j + 1, f.lambda(k));
            let b = grid.point(j + 1, f.lambda(k + 1));
            segs.push((a, b, f.values()[(j, k)], f.values()[(j, k + 1)]));
        }
    }

    // ∫_a^b (x-s)^{ν-1} (linear f) ds for a whole segment below x.
    let left_piece = |x: f64, (a, b, fa, fb): (f64, f64, f64, f64)| -> f64 {
        let u1 = (x - b).max(0.0);
        let u2 = x - a;
        let m0 = (u2.powf(nu) - u1.powf(nu)) / nu;
        let m1 = (u2.powf(nu + 1.0) - u1.powf(nu + 1.0)) / (nu + 1.0);
        fa * m0 + (fb - fa) / (b - a) * ((x - a) * m0 - m1)
    };
    let right_piece = |x: f64, (a, b, fa, fb): (f64, f64, f64, f64)| -> f64 {
        let u1 = (a - x).max(0.0);
        let u2 = b - x;
        let m0 = (u2.powf(nu) - u1.powf(nu)) / nu;
        let m1 = (u2.powf(nu + 1.0) - u1.powf(nu + 1.0)) / (nu + 1.0);
        fa * m0 + (fb - fa) / (b - a) * (m1 - (a - x) * m0)
    };

    let out = GridFunction::embed(grid, m, f.space(), |j, lambda| {
        let x = grid.point(j, lambda);
        let mut acc = 0.0;
        match side {
            Side::Plus => {
                for &s in &segs {
                    if s.0 >= x {
                        break;
                    }
                    let seg = if s.1 <= x { s } else { (s.0, x, s.2, interp(s, x)) };
                    acc += left_piece(x, seg);
                }
            }
            Side::Minus => {
                for &s in segs.iter().rev() {
                    if s.1 <= x {
                        break;
                    }
                    let seg = if s.0 >= x { s } else { (x, s.1, interp(s, x), s.3) };
                    acc += right_piece(x, seg);
                }
            }
        }
        acc / gamma_nu
    });
    Ok(out)
}

fn interp((a, b, fa, fb): (f64, f64, f64, f64), x: f64) -> f64 {
    fa + (fb - fa) * (x - a) / (b - a)
}

// ---------------------------------------------------------------------------
// Mittag-Leffler type series H_{α,β}
// ---------------------------------------------------------------------------

/// `H_{α,β}(x) = Σ_{n≥0} p_{nα+β}(x)`, the power-function form of the
/// two-parameter Mittag-Leffler function on `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct MittagLefflerH {
    pub alpha: f64,
    pub beta: f64,
    pub side: Side,
}

impl MittagLefflerH {
    pub fn new(alpha: f64, beta: f64, side: Side) -> Result<Self> {
        if alpha <= 0.0 {
            return Err(Error::Domain(format!("H series needs alpha > 0, got {alpha}")));
        }
        if beta <= -1.0 {
            return Err(Error::Domain(format!("H series needs beta > -1, got {beta}")));
        }
        Ok(MittagLefflerH { alpha, beta, side })
    }

    pub fn eval(&self, x: f64, tol: f64) -> Result<f64> {
        mittag_h(self.alpha, self.beta, self.side, x, tol)
    }
}

/// Evaluate `H_{α,β}` by partial summation. Terms are positive; the sum is
/// truncated once the term ratio drops below 1/2 (so the geometric tail is
/// bounded by the last term) and the last term is below `tol/2`.
pub fn mittag_h(alpha: f64, beta: f64, side: Side, x: f64, tol: f64) -> Result<f64> {
    if alpha <= 0.0 || beta <= -1.0 {
        return Err(Error::Domain(format!(
            "H series needs alpha > 0 and beta > -1, got ({alpha}, {beta})"
        )));
    }
    if tol <= 0.0 {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("x = {x} outside [-1, 1]")));
    }
    let y = match side {
        Side::Plus => 1.0 + x,
        Side::Minus => 1.0 - x,
    };
    if y == 0.0 {
        // Only exponents that are exactly zero contribute at the endpoint.
        return Ok(if beta == 0.0 { 1.0 } else { 0.0 });
    }
    let ln_y = y.ln();
    let term = |n: usize| -> f64 {
        let e = n as f64 * alpha + beta;
        if e < 0.0 && (e - e.round()).abs() < 1e-300 {
            0.0
        } else {
            (e * ln_y - ln_gamma(e + 1.0)).exp()
        }
    };
    let mut sum = 0.0f64;
    let mut comp = 0.0f64; // Neumaier compensation
    let mut prev = f64::INFINITY;
    for n in 0..100_000 {
        let t = term(n);
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
        if n > 0 && t <= 0.5 * prev && t <= 0.5 * tol {
            return Ok(sum + comp);
        }
        prev = if t > 0.0 { t } else { prev };
    }
    Err(Error::NonConvergence(format!(
        "H_({alpha},{beta}) at x = {x}: no geometric tail bound after 1e5 terms"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid, Space};
    use proptest::prelude::*;

    #[test]
    fn fractional_order_bounds() {
        assert!(FractionalOrder::new(1.5).is_ok());
        assert!(FractionalOrder::new(2.0).is_ok());
        assert!(FractionalOrder::new(1.0).is_err());
        assert!(FractionalOrder::new(2.1).is_err());
        assert!(FractionalOrder::new(f64::NAN).is_err());
    }

    #[test]
    fn grunwald_first_entries() {
        let t = GrunwaldTable::new(1.5, 8);
        assert_eq!(t.coeff(0), 1.0);
        assert_eq!(t.coeff(1), -1.5);
        // q = 2 is the binomial (1, -2, 1, 0, ...).
        let b = GrunwaldTable::new(2.0, 6);
        assert_eq!(b.coeffs()[..4], [1.0, -2.0, 1.0, 0.0]);
        assert_eq!(b.coeff(5), 0.0);
        // q = 0.5, k = 1: -1/2.
        assert_eq!(GrunwaldTable::new(0.5, 2).coeff(1), -0.5);
    }

    #[test]
    fn grunwald_sign_pattern_for_alpha_in_1_2() {
        for &alpha in &[1.1, 1.5, 1.9, 2.0] {
            let t = GrunwaldTable::new(alpha, 200);
            assert!(t.coeff(1) <= 0.0 && (t.coeff(1) + alpha).abs() < 1e-15);
            for k in (0..=200).filter(|&k| k != 1) {
                assert!(t.coeff(k) >= 0.0, "alpha={alpha} k={k}");
            }
        }
    }

    #[test]
    fn recursion_consistency_exact_order() {
        let q = 1.5;
        let t = GrunwaldTable::new(q, 2000);
        for k in 0..2000 {
            let lhs = t.coeff(k + 1) * (k as f64 + 1.0);
            let rhs = (k as f64 - q) * t.coeff(k);
            assert!((lhs - rhs).abs() <= 1e-14 * rhs.abs().max(1e-300), "k={k}");
        }
    }

    #[test]
    fn telescoping_partial_sums() {
        // Σ_{n<=k} 𝒢^α_n = 𝒢^{α-1}_k, checked across orders and lengths.
        for &alpha in &[1.1, 1.5, 1.9, 2.0] {
            let t = GrunwaldTable::new(alpha, 10_000);
            let d = GrunwaldTable::new(alpha - 1.0, 10_000);
            for &k in &[1usize, 4, 17, 100, 999, 10_000] {
                let lhs = t.partial_sum(k);
                let rhs = d.coeff(k);
                let denom = rhs.abs().max(1e-300);
                assert!(
                    ((lhs - rhs) / denom).abs() <= 1e-12,
                    "alpha={alpha} k={k} lhs={lhs:e} rhs={rhs:e}"
                );
            }
        }
    }

    #[test]
    fn partial_sum_example_from_small_table() {
        let t = GrunwaldTable::new(1.5, 4);
        let s: f64 = (0..=4).map(|k| t.coeff(k)).sum();
        let half = GrunwaldTable::new(0.5, 4);
        assert!((s - half.coeff(4)).abs() < 1e-14);
    }

    #[test]
    fn total_mass_decays_like_k_to_one_minus_alpha() {
        let alpha = 1.5;
        let t = GrunwaldTable::new(alpha, 100_000);
        for &k in &[100usize, 1000, 10_000, 100_000] {
            let bound = 4.0 * (k as f64).powf(1.0 - alpha) / gamma(2.0 - alpha).abs();
            assert!(t.partial_sum(k).abs() <= bound, "k={k}");
        }
    }

    #[test]
    fn grunwald_asymptotics() {
        let alpha = 1.5;
        let t = GrunwaldTable::new(alpha, 50_000);
        for &n in &[1000usize, 50_000] {
            let approx = (n as f64).powf(-1.0 - alpha) / gamma(-alpha);
            let rel = (t.coeff(n) - approx) / approx;
            assert!(rel.abs() < 5.0 / n as f64, "n={n} rel={rel}");
        }
    }

    #[test]
    fn convolution_examples() {
        let (lhs, rhs) = grunwald_convolve_check(0.75, 0.75, 1);
        assert!((lhs + 1.5).abs() < 1e-14 && (rhs + 1.5).abs() < 1e-14);
        let (lhs, rhs) = grunwald_convolve_check(1.5, 0.0, 3);
        assert!((lhs - rhs).abs() < 1e-15);
        assert!((lhs - GrunwaldTable::new(1.5, 3).coeff(3)).abs() < 1e-15);
        let (lhs, rhs) = grunwald_convolve_check(1.0, 1.0, 2);
        assert!((lhs - 1.0).abs() < 1e-14 && (rhs - 1.0).abs() < 1e-14);
    }

    proptest! {
        #[test]
        fn convolution_identity_random(q in -1.5f64..2.5, big_q in -1.5f64..2.5, k in 0usize..600) {
            let (lhs, rhs) = grunwald_convolve_check(q, big_q, k);
            let scale = rhs.abs().max(1e-12);
            prop_assert!(((lhs - rhs) / scale).abs() <= 1e-10);
        }
    }

    #[test]
    fn power_eval_examples() {
        assert_eq!(power_eval(0.0, Side::Plus, 0.3).unwrap(), 1.0);
        assert!((power_eval(1.0, Side::Plus, 1.0).unwrap() - 2.0).abs() < 1e-15);
        let v = power_eval(1.5, Side::Plus, 0.0).unwrap();
        assert!((v - 0.7522527780636751).abs() < 1e-12); // 1/Γ(2.5)
        assert!(power_eval(1.0, Side::Plus, 1.5).is_err());
        assert_eq!(power_eval(0.5, Side::Minus, 1.0).unwrap(), 0.0);
        assert!(power_eval(-0.5, Side::Plus, -1.0).unwrap().is_infinite());
    }

    #[test]
    fn frac_integral_maps_powers_to_powers() {
        let grid = Grid::new(15).unwrap();
        let p0 = GridFunction::from_fn(grid, 16, Space::L1, |_| 1.0);
        // I^1 p_0 = p_1 = 1 + x, exactly (the integrand is piecewise linear).
        let i1 = frac_integral(1.0, &p0, Side::Plus).unwrap();
        let p1 = GridFunction::from_fn(grid, 16, Space::L1, |x| 1.0 + x);
        assert!(i1.sub(&p1).unwrap().sup_norm() < 1e-13);
        // I^0.5 p_0 = p_0.5 with the kernel integrated exactly.
        let ih = frac_integral(0.5, &p0, Side::Plus).unwrap();
        let ph = GridFunction::from_fn(grid, 16, Space::L1, |x| {
            power_eval(0.5, Side::Plus, x).unwrap()
        });
        assert!(ih.sub(&ph).unwrap().sup_norm() < 1e-13);
        // Limit at the anchored endpoint is zero.
        assert!(ih.eval(-1.0).unwrap().abs() < 1e-15);
        // Mirror side.
        let j1 = frac_integral(1.0, &p0, Side::Minus).unwrap();
        let q1 = GridFunction::from_fn(grid, 16, Space::L1, |x| 1.0 - x);
        assert!(j1.sub(&q1).unwrap().sup_norm() < 1e-13);
        assert!(frac_integral(-0.1, &p0, Side::Plus).is_err());
    }

    #[test]
    fn frac_integral_semigroup_property() {
        let grid = Grid::new(31).unwrap();
        let p0 = GridFunction::from_fn(grid, 16, Space::L1, |_| 1.0);
        let a = frac_integral(0.7, &frac_integral(0.5, &p0, Side::Plus).unwrap(), Side::Plus)
            .unwrap();
        let b = frac_integral(1.2, &p0, Side::Plus).unwrap();
        // The inner result is re-interpolated before the second pass, so the
        // tolerance is the piecewise-linear quadrature error, not rounding.
        assert!(a.sub(&b).unwrap().sup_norm() < 2e-5);
    }

    #[test]
    fn mittag_h_examples() {
        // At the far endpoint only the n = 0 term survives.
        assert_eq!(mittag_h(1.5, 0.0, Side::Plus, -1.0, 1e-12).unwrap(), 1.0);
        // α = 2, β = 0 is cosh(1 + x).
        let v = mittag_h(2.0, 0.0, Side::Plus, 0.0, 1e-13).unwrap();
        assert!((v - 1f64.cosh()).abs() < 1e-12);
        let v = mittag_h(2.0, 0.0, Side::Plus, 1.0, 1e-13).unwrap();
        assert!((v - 2f64.cosh()).abs() < 1e-12);
    }

    #[test]
    fn mittag_h_recurrence() {
        // H_{α,β} = p_β + H_{α,β+α} at sampled points.
        let (alpha, beta) = (1.3, 0.4);
        for &x in &[-0.9, -0.3, 0.0, 0.5, 1.0] {
            let lhs = mittag_h(alpha, beta, Side::Plus, x, 1e-13).unwrap();
            let rhs = power_eval(beta, Side::Plus, x).unwrap()
                + mittag_h(alpha, beta + alpha, Side::Plus, x, 1e-13).unwrap();
            assert!((lhs - rhs).abs() < 1e-11, "x={x}");
        }
    }
}
