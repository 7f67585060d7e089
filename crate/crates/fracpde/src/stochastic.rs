//! Exact jump simulation of the finite-state chains behind the rate
//! matrices, with kill / restart / fast-forward boundary behaviour baked
//! into the transition rates, plus Monte Carlo estimators for comparison
//! against the forward solver.
//!
//! Reproducibility: every path has its own ChaCha substream derived from
//! `(seed, path id)`, so ensembles are bitwise deterministic regardless of
//! how paths are scheduled across threads.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fraccalc::{FractionalOrder, GrunwaldTable};
use crate::generators::RateMatrix;
use crate::grid::fmt_float;

// ---------------------------------------------------------------------------
// Alias sampling
// ---------------------------------------------------------------------------

/// Walker/Vose alias table for O(1) categorical sampling.
#[derive(Debug, Clone)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
}

impl AliasTable {
    /// Build from nonnegative weights (not necessarily normalised).
    pub fn new(weights: &[f64]) -> Result<Self> {
        let n = weights.len();
        if n == 0 {
            return Err(Error::Domain("alias table needs at least one outcome".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|&w| w < 0.0) {
            return Err(Error::Domain("alias weights must be nonnegative with positive sum".into()));
        }
        let mut prob: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut alias = vec![0usize; n];
        let mut small: Vec<usize> = (0..n).filter(|&i| prob[i] < 1.0).collect();
        let mut large: Vec<usize> = (0..n).filter(|&i| prob[i] >= 1.0).collect();
        while let (Some(s), Some(l)) = (small.pop(), large.pop()) {
            alias[s] = l;
            prob[l] = (prob[l] + prob[s]) - 1.0;
            if prob[l] < 1.0 {
                small.push(l);
            } else {
                large.push(l);
            }
        }
        for i in small.into_iter().chain(large) {
            prob[i] = 1.0;
        }
        Ok(AliasTable { prob, alias })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let n = self.prob.len();
        let k = rng.random_range(0..n);
        if rng.random::<f64>() < self.prob[k] {
            k
        } else {
            self.alias[k]
        }
    }
}

// ---------------------------------------------------------------------------
// Jump chain over a rate matrix
// ---------------------------------------------------------------------------

/// Sampling tables for the continuous-time chain of one rate matrix:
/// exponential holding times by inversion, jump targets by alias tables
/// built once per state. Outcome `n` (0-based) encodes the kill event.
pub struct JumpChain {
    n: usize,
    holding: Vec<f64>,
    targets: Vec<AliasTable>,
}

impl JumpChain {
    pub fn new(rate: &RateMatrix) -> Result<Self> {
        let n = rate.n();
        let scale = rate.scale();
        let mut holding = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for i in 1..=n {
            let diag = rate.entry_unscaled(i, i);
            if diag >= 0.0 {
                return Err(Error::Invariant(format!("state {i} has no outflow")));
            }
            holding.push(-diag * scale);
            // Outcomes 0..n-1 are target states (self weight zero), n is kill.
            let mut w: Vec<f64> = (1..=n)
                .map(|j| if j == i { 0.0 } else { rate.entry_unscaled(i, j).max(0.0) })
                .collect();
            let kill = (-rate.row_sums_unscaled()[i - 1]).max(0.0);
            w.push(kill);
            targets.push(AliasTable::new(&w)?);
        }
        Ok(JumpChain { n, holding, targets })
    }

    pub fn states(&self) -> usize {
        self.n
    }

    /// Holding rate `-g_{ii}` of state `i` (1-based), scaled by `1/h^α`.
    pub fn holding_rate(&self, i: usize) -> f64 {
        self.holding[i - 1]
    }
}

/// One simulated trajectory: right-continuous piecewise-constant states at
/// strictly increasing jump times, plus the kill time if the path died.
#[derive(Debug, Clone)]
pub struct Path {
    pub times: Vec<f64>,
    pub states: Vec<u16>,
    pub killed_at: Option<f64>,
}

impl Path {
    /// State occupied at time `t`, or `None` if the path is dead by then.
    pub fn state_at(&self, t: f64) -> Option<u16> {
        if let Some(k) = self.killed_at {
            if t >= k {
                return None;
            }
        }
        let idx = self.times.partition_point(|&s| s <= t);
        Some(self.states[idx - 1])
    }
}

/// A Monte Carlo sample of trajectories over a common horizon.
#[derive(Debug)]
pub struct PathEnsemble {
    pub horizon: f64,
    pub n_states: usize,
    pub paths: Vec<Path>,
}

/// Gillespie-style exact simulation of `n_paths` trajectories from the
/// boundary-modified rate matrix, all started in `initial_state` (1-based).
/// Deterministic for a fixed seed.
pub fn simulate(
    rate: &RateMatrix,
    initial_state: usize,
    horizon: f64,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    if !(1..=rate.n()).contains(&initial_state) {
        return Err(Error::Domain(format!(
            "initial state {initial_state} outside 1..={}",
            rate.n()
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let chain = JumpChain::new(rate)?;
    let paths: Vec<Path> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p + 1);
            let mut t = 0.0f64;
            let mut state = initial_state;
            let mut times = vec![0.0];
            let mut states = vec![initial_state as u16];
            let mut killed_at = None;
            loop {
                let u: f64 = rng.random(); // in [0, 1): 1-u avoids ln(0)
                t += -(1.0 - u).ln() / chain.holding_rate(state);
                if t >= horizon {
                    break;
                }
                let outcome = chain.targets[state - 1].sample(&mut rng);
                if outcome == chain.n {
                    killed_at = Some(t);
                    break;
                }
                state = outcome + 1;
                times.push(t);
                states.push(state as u16);
            }
            Path { times, states, killed_at }
        })
        .collect();
    Ok(PathEnsemble { horizon, n_states: rate.n(), paths })
}

/// Histogram of surviving paths at time `t`, mapped onto the interval.
///
/// State `j` occupies the cell `[(j-1)h - 1, jh - 1)`; states are grouped
/// into `bins` contiguous cells. `density` is normalised against all paths
/// (killed mass excluded), so it integrates to the survival probability.
#[derive(Debug, Clone)]
pub struct Histogram {
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
    pub density: Vec<f64>,
    pub stderr: Vec<f64>,
    pub counts: Vec<u64>,
    pub killed: u64,
    pub total: u64,
}

impl Histogram {
    pub fn survival(&self) -> f64 {
        1.0 - self.killed as f64 / self.total as f64
    }

    pub fn survival_stderr(&self) -> f64 {
        let p = self.survival();
        (p * (1.0 - p) / self.total as f64).sqrt()
    }

    pub fn total_mass(&self) -> f64 {
        self.density
            .iter()
            .zip(&self.widths)
            .map(|(d, w)| d * w)
            .sum()
    }

    pub fn write_csv(&self, w: &mut impl std::io::Write) -> Result<()> {
        writeln!(w, "x,density,stderr")?;
        for i in 0..self.centers.len() {
            writeln!(
                w,
                "{},{},{}",
                fmt_float(self.centers[i]),
                fmt_float(self.density[i]),
                fmt_float(self.stderr[i])
            )?;
        }
        Ok(())
    }
}

/// Empirical sub-probability density of the ensemble at time `t`.
pub fn empirical_density(ensemble: &PathEnsemble, t: f64, bins: usize) -> Result<Histogram> {
    if ensemble.paths.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    if t > ensemble.horizon {
        return Err(Error::Domain(format!(
            "t = {t} beyond simulated horizon {}",
            ensemble.horizon
        )));
    }
    let n = ensemble.n_states;
    let bins = bins.clamp(1, n);
    let h = 2.0 / (n as f64 + 1.0);
    let bin_of = |state: u16| ((state as usize - 1) * bins) / n;
    let mut counts = vec![0u64; bins];
    let mut killed = 0u64;
    for p in &ensemble.paths {
        match p.state_at(t) {
            Some(s) => counts[bin_of(s)] += 1,
            None => killed += 1,
        }
    }
    let total = ensemble.paths.len() as u64;
    let mut centers = Vec::with_capacity(bins);
    let mut widths = Vec::with_capacity(bins);
    let mut density = Vec::with_capacity(bins);
    let mut stderr = Vec::with_capacity(bins);
    for b in 0..bins {
        // States covered by bin b: exactly those with bin_of(state) == b.
        let lo = (b * n).div_ceil(bins) + 1;
        let hi = ((b + 1) * n).div_ceil(bins);
        let x_lo = (lo as f64 - 1.0) * h - 1.0;
        let x_hi = hi as f64 * h - 1.0;
        let width = x_hi - x_lo;
        let p_hat = counts[b] as f64 / total as f64;
        centers.push(0.5 * (x_lo + x_hi));
        widths.push(width);
        density.push(p_hat / width);
        stderr.push((p_hat * (1.0 - p_hat) / total as f64).sqrt() / width);
    }
    Ok(Histogram { centers, widths, density, stderr, counts, killed, total })
}

/// CSV export of up to `cap` paths: `path_id,t,state,event`.
pub fn write_paths_csv(
    ensemble: &PathEnsemble,
    cap: usize,
    w: &mut impl std::io::Write,
) -> Result<()> {
    writeln!(w, "path_id,t,state,event")?;
    for (id, p) in ensemble.paths.iter().take(cap).enumerate() {
        for (k, (&t, &s)) in p.times.iter().zip(&p.states).enumerate() {
            let event = if k == 0 { "start" } else { "jump" };
            writeln!(w, "{id},{},{s},{event}", fmt_float(t))?;
        }
        if let Some(k) = p.killed_at {
            writeln!(w, "{id},{},0,kill", fmt_float(k))?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// First re-entry of the free walk
// ---------------------------------------------------------------------------

/// Empirical distribution of the first positive state visited by the free
/// Grünwald walk started at 0.
#[derive(Debug, Clone)]
pub struct FirstReentry {
    /// `counts[i]` is the number of excursions that re-entered in state `i+1`.
    pub counts: Vec<u64>,
    /// Re-entries beyond `counts.len()`.
    pub overflow: u64,
    pub n_samples: usize,
}

/// Simulate `n_samples` excursions of the free walk (down one state at unit
/// rate, up by `m` at rate `𝒢^α_{m+1}`) until each first reaches a positive
/// state; only the embedded jump chain matters for the first-entry law.
///
/// Up-jump sizes are drawn from an alias table over `1..=4096` with the
/// exact tail mass `-𝒢^{α-1}_{4096}` resolved by binary search in the
/// telescoped coefficient sums. First-passage times of the zero-mean walk
/// have infinite expectation, so excursions are truncated (with an error)
/// if they leave a ±10⁹ spatial window or exceed 2·10⁹ steps; for a fixed
/// seed the outcome, including whether truncation fires, is deterministic.
pub fn first_reentry_sample(
    alpha: FractionalOrder,
    n_samples: usize,
    seed: u64,
    max_report: usize,
) -> Result<FirstReentry> {
    let a = alpha.get();
    let table_len: usize = 1 << 22;
    let head: usize = 4096;
    let ga = GrunwaldTable::new(a, table_len + 2);
    let gm1 = GrunwaldTable::new(a - 1.0, table_len + 2);

    // Outcome 0: down one state (weight 𝒢^α_0 = 1).
    // Outcome m in 1..=head: up by m (weight 𝒢^α_{m+1}).
    // Outcome head+1: up by more than head (weight -𝒢^{α-1}_{head+1}).
    let mut w = Vec::with_capacity(head + 2);
    w.push(1.0);
    for m in 1..=head {
        w.push(ga.coeff(m + 1));
    }
    w.push(-gm1.coeff(head + 1));
    let alias = AliasTable::new(&w)?;

    // Tail sampling for sizes m > head: binary search over the exact
    // survival function P(size > m | tail) = 𝒢^{α-1}_{m+1}/𝒢^{α-1}_{head+1},
    // which decreases in m. Sizes are capped at 2^22; a capped jump still
    // lands far beyond any reported state (walk depths stay ~10⁵ at the
    // sample counts used here), so the first-entry law is unaffected.
    let tail_total = -gm1.coeff(head + 1);
    let sample_tail = |rng: &mut ChaCha8Rng| -> i64 {
        let u: f64 = rng.random();
        // Smallest m with Σ_{k>m} 𝒢^α_{k+1} = -𝒢^{α-1}_{m+1} <= (1-u)·tail_total.
        let (mut lo, mut hi) = (head + 1, table_len);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if -gm1.coeff(mid + 1) <= (1.0 - u) * tail_total {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo as i64
    };

    let counts_per_path: Vec<Result<i64>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p + 1);
            let mut pos: i64 = 0;
            let mut steps: u64 = 0;
            loop {
                let outcome = alias.sample(&mut rng);
                if outcome == 0 {
                    pos -= 1;
                } else if outcome <= head {
                    pos += outcome as i64;
                } else {
                    pos += sample_tail(&mut rng);
                }
                if pos >= 1 {
                    return Ok(pos);
                }
                steps += 1;
                if pos < -1_000_000_000 || steps > 2_000_000_000 {
                    return Err(Error::Domain(format!(
                        "free walk truncated (excursion {p}: position {pos}, {steps} steps)"
                    )));
                }
            }
        })
        .collect();

    let mut counts = vec![0u64; max_report];
    let mut overflow = 0u64;
    for r in counts_per_path {
        let state = r?;
        if (state as usize) <= max_report {
            counts[state as usize - 1] += 1;
        } else {
            overflow += 1;
        }
    }
    Ok(FirstReentry { counts, overflow, n_samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::BoundaryPair;

    fn order(a: f64) -> FractionalOrder {
        FractionalOrder::new(a).unwrap()
    }

    #[test]
    fn alias_table_reproduces_weights() {
        let w = [0.1, 0.4, 0.0, 0.5];
        let t = AliasTable::new(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0u64; 4];
        let n = 200_000;
        for _ in 0..n {
            counts[t.sample(&mut rng)] += 1;
        }
        assert_eq!(counts[2], 0);
        for i in [0usize, 1, 3] {
            let p = counts[i] as f64 / n as f64;
            assert!((p - w[i]).abs() < 0.005, "outcome {i}: {p}");
        }
        assert!(AliasTable::new(&[]).is_err());
        assert!(AliasTable::new(&[0.0]).is_err());
    }

    #[test]
    fn fixed_seed_single_path_is_identical() {
        let rate = RateMatrix::new(order(1.5), BoundaryPair::DD, 16).unwrap();
        let a = simulate(&rate, 8, 1.0, 1, 42).unwrap();
        let b = simulate(&rate, 8, 1.0, 1, 42).unwrap();
        assert_eq!(a.paths[0].times, b.paths[0].times);
        assert_eq!(a.paths[0].states, b.paths[0].states);
        assert_eq!(a.paths[0].killed_at, b.paths[0].killed_at);
        let c = simulate(&rate, 8, 1.0, 1, 43).unwrap();
        assert_ne!(a.paths[0].times, c.paths[0].times);
    }

    #[test]
    fn conservative_chain_never_killed() {
        let rate = RateMatrix::new(order(1.5), BoundaryPair::NSTAR_N, 16).unwrap();
        let ens = simulate(&rate, 8, 2.0, 2000, 3).unwrap();
        assert!(ens.paths.iter().all(|p| p.killed_at.is_none()));
        let hist = empirical_density(&ens, 2.0, 16).unwrap();
        assert_eq!(hist.killed, 0);
        assert!(hist.total_mass() <= 1.0 + 1e-12);
        assert!((hist.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_at_time_zero_is_point_mass() {
        let rate = RateMatrix::new(order(1.5), BoundaryPair::NN, 12).unwrap();
        let ens = simulate(&rate, 5, 1.0, 100, 1).unwrap();
        let hist = empirical_density(&ens, 0.0, 12).unwrap();
        let idx = hist.counts.iter().position(|&c| c > 0).unwrap();
        assert_eq!(hist.counts[idx], 100);
        assert_eq!(idx, 4); // state 5 -> bin 5 of 12
        assert!(empirical_density(&ens, 2.0, 12).is_err());
    }

    #[test]
    fn paths_are_right_continuous_with_increasing_times() {
        let rate = RateMatrix::new(order(1.3), BoundaryPair::DN, 24).unwrap();
        let ens = simulate(&rate, 12, 0.5, 200, 9).unwrap();
        for p in &ens.paths {
            assert!(p.times.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(p.state_at(0.0), Some(p.states[0]));
            if let Some(k) = p.killed_at {
                assert_eq!(p.state_at(k), None);
                assert!(p.state_at(k - 1e-12).is_some());
            }
        }
    }

    #[test]
    fn empirical_generator_matches_rate_matrix_small_n() {
        // Brute-force equivalence of simulation and linear algebra: estimate
        // g_{ij} = N_{ij} / T_i from a long run of a 5-state chain.
        let rate = RateMatrix::new(order(1.5), BoundaryPair::NSTAR_N, 5).unwrap();
        let chain = JumpChain::new(&rate).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = rate.n();
        let mut occupation = vec![0.0f64; n];
        let mut jumps = vec![vec![0u64; n]; n];
        let mut state = 3usize;
        for _ in 0..1_000_000u64 {
            let u: f64 = rng.random();
            occupation[state - 1] += -u.ln() / chain.holding_rate(state);
            let outcome = chain.targets[state - 1].sample(&mut rng);
            assert_ne!(outcome, n, "conservative chain produced a kill");
            jumps[state - 1][outcome] += 1;
            state = outcome + 1;
        }
        for i in 1..=n {
            for j in 1..=n {
                if i == j {
                    continue;
                }
                let est = jumps[i - 1][j - 1] as f64 / occupation[i - 1];
                let truth = rate.entry(i, j);
                let se = (jumps[i - 1][j - 1].max(1) as f64).sqrt() / occupation[i - 1];
                assert!(
                    (est - truth).abs() <= 5.0 * se + 1e-9,
                    "g({i},{j}): est {est} vs {truth} (se {se})"
                );
            }
        }
    }

    #[test]
    fn first_reentry_alpha_two_is_always_state_one() {
        // The α = 2 walk is simple and symmetric: the only up-jump is +1,
        // so every excursion re-enters in state 1. First-passage times are
        // heavy tailed, hence the modest sample count.
        let fr = first_reentry_sample(order(2.0), 500, 5, 10).unwrap();
        assert_eq!(fr.counts[0], 500);
        assert_eq!(fr.overflow, 0);
        assert!(fr.counts[1..].iter().all(|&c| c == 0));
    }

    #[test]
    fn first_reentry_matches_restart_distribution() {
        let alpha = order(1.5);
        let n = 20_000;
        let fr = first_reentry_sample(alpha, n, 12345, 30).unwrap();
        let z = crate::semigroup::restart_distribution(alpha, 30);
        // z₁ = 0.5 within 3 standard errors.
        let p1 = fr.counts[0] as f64 / n as f64;
        let se1 = (0.5 * 0.5 / n as f64).sqrt();
        assert!((p1 - z[0]).abs() <= 3.0 * se1, "p1 = {p1}");
        // χ² over the first 20 states plus the lumped remainder.
        let (chi2, threshold) = crate::verify::chi_square_reentry(alpha, &fr, 20, 0.01).unwrap();
        assert!(chi2 <= threshold, "chi2 = {chi2} > {threshold}");
    }
}
