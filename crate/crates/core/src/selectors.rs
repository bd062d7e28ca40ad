//! Thresholding selectors built on weighted chi-square statistics.
//!
//! Every selector turns a row `X_j` into
//!
//! ```text
//! t_j = sum_{1<=|k|<=K} omega_k [ (X_{j,k} / eps)^2 - 1 ]
//! ```
//!
//! with the weights of the extremal profile at a detection boundary, and
//! flags row `j` when `t_j` strictly exceeds a threshold. Under pure noise
//! `t_j` has mean 0 and variance 1.
//!
//! Selectors are prepared once (boundary inversion is the expensive part)
//! and then applied to any number of observation matrices.

use serde::{Deserialize, Serialize};

use crate::ellipsoids::{invert_u, solve_extremal, ExtremalProfile, FunctionSpace, SpaceKind};
use crate::error::{Error, Result};
use crate::risk::hamming;
use crate::signal::ObservationMatrix;

/// Lower end of the default sparsity range `log s / log d`.
pub const DEFAULT_C_LOW: f64 = 0.25;
/// Upper end of the default sparsity range `log s / log d`.
pub const DEFAULT_C_HIGH: f64 = 0.75;

/// Geometric grid of candidate sparsities `s_m = d^c_low * d^((m-1) step)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    d: usize,
    c_low: f64,
    c_high: f64,
    step: f64,
    points: Vec<f64>,
}

impl Grid {
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn c_low(&self) -> f64 {
        self.c_low
    }

    pub fn c_high(&self) -> f64 {
        self.c_high
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of grid points `M`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `M = ceil((c_high - c_low) / step) + 1` points starting at `d^c_low`.
pub fn build_grid(d: usize, c_low: f64, c_high: f64, step: f64) -> Result<Grid> {
    check_dimension(d)?;
    if !(c_low > 0.0 && c_high < 1.0 && c_low <= c_high) {
        return Err(Error::domain(format!(
            "grid range needs 0 < c_low <= c_high < 1, got [{c_low}, {c_high}]"
        )));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::domain(format!("grid step must be positive, got {step}")));
    }
    // (0.75 - 0.25) / 0.1 evaluates to 5.000000000000001; absorb that.
    let m = ((c_high - c_low) / step - 1e-9).ceil().max(0.0) as usize + 1;
    let log_d = (d as f64).ln();
    let points: Vec<f64> = (0..m).map(|i| ((c_low + i as f64 * step) * log_d).exp()).collect();
    let last = *points.last().expect("grid has at least one point");
    if last > d as f64 * (1.0 + 1e-12) {
        return Err(Error::domain(format!("grid overshoots d: s_M = {last} > d = {d}")));
    }
    Ok(Grid {
        d,
        c_low,
        c_high,
        step,
        points,
    })
}

/// Default tuning sequences for dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedules {
    /// Threshold slack `delta = (log d)^(-1/2)`.
    pub delta: f64,
    /// Grid step `Delta = (log d)^(-3/2)`.
    pub grid_step: f64,
    /// Lepski slack divisor `tau = (log d)^(1/2)`.
    pub tau: f64,
}

/// `delta log d -> inf`, `Delta log d -> 0` and `tau = o(min(log d, d^(delta/2)))`.
pub fn default_schedules(d: usize) -> Result<Schedules> {
    if d < 8 {
        return Err(Error::domain(format!("default schedules need d >= 8, got {d}")));
    }
    let log_d = (d as f64).ln();
    Ok(Schedules {
        delta: log_d.powf(-0.5),
        grid_step: log_d.powf(-1.5),
        tau: log_d.sqrt(),
    })
}

/// Tuning of the adaptive selectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub delta: f64,
    pub tau: f64,
    pub grid: Grid,
}

impl SelectorConfig {
    pub fn new(delta: f64, tau: f64, grid: Grid) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(Error::domain(format!("delta must be positive, got {delta}")));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::domain(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { delta, tau, grid })
    }

    /// Default schedules on the sparsity range `[d^0.25, d^0.75]`.
    pub fn defaults(d: usize) -> Result<Self> {
        let sched = default_schedules(d)?;
        let grid = build_grid(d, DEFAULT_C_LOW, DEFAULT_C_HIGH, sched.grid_step)?;
        Self::new(sched.delta, sched.tau, grid)
    }
}

/// What produced a [`SelectionResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectionMeta {
    AlmostFull {
        s: f64,
        delta: f64,
        r_star: f64,
    },
    Exact {
        s: f64,
        delta: f64,
        r_star: f64,
    },
    Lepski {
        m_hat: usize,
        s_hat: f64,
        delta: f64,
        tau: f64,
    },
    AdaptiveExact {
        grid_len: usize,
        delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub eta_hat: Vec<bool>,
    /// Per-row statistics; `eta_hat[j]` is set iff `stats[j] > threshold`.
    pub stats: Vec<f64>,
    pub threshold: f64,
    pub meta: SelectionMeta,
}

impl SelectionResult {
    fn from_stats(stats: Vec<f64>, threshold: f64, meta: SelectionMeta) -> Self {
        let eta_hat = stats.iter().map(|t| *t > threshold).collect();
        Self {
            eta_hat,
            stats,
            threshold,
            meta,
        }
    }

    pub fn selected(&self) -> usize {
        self.eta_hat.iter().filter(|b| **b).count()
    }
}

/// `t = sum omega_k [(X_k / eps)^2 - 1]` over the profile support.
pub fn t_statistic(row: &[f64], profile: &ExtremalProfile, eps: f64) -> Result<f64> {
    if row.len() != 2 * profile.bandwidth() {
        return Err(Error::DimensionMismatch {
            expected: 2 * profile.bandwidth(),
            got: row.len(),
        });
    }
    Ok(weighted_sum(row, profile.omega(), eps))
}

fn weighted_sum(row: &[f64], omega: &[f64], eps: f64) -> f64 {
    omega
        .iter()
        .zip(row.chunks_exact(2))
        .map(|(w, pair)| {
            let (a, b) = (pair[0] / eps, pair[1] / eps);
            w * ((a * a - 1.0) + (b * b - 1.0))
        })
        .sum()
}

/// Weights of one profile, trimmed to its nonzero prefix.
#[derive(Debug, Clone)]
struct Statistic {
    profile: ExtremalProfile,
    active: usize,
}

impl Statistic {
    fn new(profile: ExtremalProfile) -> Self {
        let active = profile.active_len();
        Self { profile, active }
    }

    fn eval(&self, row: &[f64]) -> f64 {
        weighted_sum(
            &row[..2 * self.active],
            &self.profile.omega()[..self.active],
            self.profile.eps(),
        )
    }

    fn all_rows(&self, x: &ObservationMatrix) -> Vec<f64> {
        x.rows().map(|row| self.eval(row)).collect()
    }
}

/// `sqrt(2 log(d/s))`.
pub fn almost_full_target(d: usize, s: f64) -> Result<f64> {
    check_sparsity(d, s)?;
    Ok((2.0 * (d as f64 / s).ln()).sqrt())
}

/// `sqrt(2 log d) + sqrt(2 log s)`.
pub fn exact_target(d: usize, s: f64) -> Result<f64> {
    check_sparsity(d, s)?;
    Ok((2.0 * (d as f64).ln()).sqrt() + (2.0 * s.ln()).sqrt())
}

/// Radius with `u(r*) = sqrt(2 log(d/s))`.
pub fn r_star_almost_full(space: &FunctionSpace, eps: f64, d: usize, s: f64) -> Result<f64> {
    invert_u(space, eps, almost_full_target(d, s)?)
}

/// Radius with `u(r*) = sqrt(2 log d) + sqrt(2 log s)`.
pub fn r_star_exact(space: &FunctionSpace, eps: f64, d: usize, s: f64) -> Result<f64> {
    invert_u(space, eps, exact_target(d, s)?)
}

/// `sqrt(2 log(d/s) + delta log d)`.
pub fn almost_full_threshold(d: usize, s: f64, delta: f64) -> Result<f64> {
    check_sparsity(d, s)?;
    check_delta(delta)?;
    let log_d = (d as f64).ln();
    Ok((2.0 * (d as f64 / s).ln() + delta * log_d).sqrt())
}

/// `sqrt((2 + delta) log d)`.
pub fn exact_threshold(d: usize, delta: f64) -> Result<f64> {
    check_dimension(d)?;
    check_delta(delta)?;
    Ok(((2.0 + delta) * (d as f64).ln()).sqrt())
}

/// `sqrt((2 + delta)(log d + log M))`.
pub fn adaptive_exact_threshold(d: usize, grid_len: usize, delta: f64) -> Result<f64> {
    check_dimension(d)?;
    check_delta(delta)?;
    if grid_len == 0 {
        return Err(Error::domain("grid must have at least one point"));
    }
    Ok(((2.0 + delta) * ((d as f64).ln() + (grid_len as f64).ln())).sqrt())
}

/// Non-adaptive almost-full selector for a known sparsity `s`.
#[derive(Debug, Clone)]
pub struct AlmostFullSelector {
    d: usize,
    s: f64,
    delta: f64,
    threshold: f64,
    statistic: Statistic,
}

impl AlmostFullSelector {
    pub fn new(space: &FunctionSpace, eps: f64, d: usize, s: f64, delta: f64) -> Result<Self> {
        let threshold = almost_full_threshold(d, s, delta)?;
        let r_star = r_star_almost_full(space, eps, d, s)?;
        let statistic = Statistic::new(solve_extremal(space, r_star, eps)?);
        Ok(Self {
            d,
            s,
            delta,
            threshold,
            statistic,
        })
    }

    pub fn profile(&self) -> &ExtremalProfile {
        &self.statistic.profile
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Frequency pairs an observation matrix must carry.
    pub fn required_pairs(&self) -> usize {
        self.statistic.active
    }

    pub fn select(&self, x: &ObservationMatrix) -> Result<SelectionResult> {
        check_observations(x, self.d, self.required_pairs(), self.statistic.profile.eps())?;
        let meta = SelectionMeta::AlmostFull {
            s: self.s,
            delta: self.delta,
            r_star: self.profile().radius(),
        };
        Ok(SelectionResult::from_stats(
            self.statistic.all_rows(x),
            self.threshold,
            meta,
        ))
    }
}

/// Almost-full selection with known `s` at the noise level of `x`.
pub fn almost_full_select(
    x: &ObservationMatrix,
    space: &FunctionSpace,
    d: usize,
    s: usize,
    delta: f64,
) -> Result<SelectionResult> {
    AlmostFullSelector::new(space, x.eps(), d, s as f64, delta)?.select(x)
}

/// Non-adaptive exact selector for a known sparsity `s`.
#[derive(Debug, Clone)]
pub struct ExactSelector {
    d: usize,
    s: f64,
    delta: f64,
    threshold: f64,
    statistic: Statistic,
}

impl ExactSelector {
    pub fn new(space: &FunctionSpace, eps: f64, d: usize, s: f64, delta: f64) -> Result<Self> {
        let threshold = exact_threshold(d, delta)?;
        let r_star = r_star_exact(space, eps, d, s)?;
        let statistic = Statistic::new(solve_extremal(space, r_star, eps)?);
        Ok(Self {
            d,
            s,
            delta,
            threshold,
            statistic,
        })
    }

    pub fn profile(&self) -> &ExtremalProfile {
        &self.statistic.profile
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn required_pairs(&self) -> usize {
        self.statistic.active
    }

    pub fn select(&self, x: &ObservationMatrix) -> Result<SelectionResult> {
        check_observations(x, self.d, self.required_pairs(), self.statistic.profile.eps())?;
        let meta = SelectionMeta::Exact {
            s: self.s,
            delta: self.delta,
            r_star: self.profile().radius(),
        };
        Ok(SelectionResult::from_stats(
            self.statistic.all_rows(x),
            self.threshold,
            meta,
        ))
    }
}

pub fn exact_select(
    x: &ObservationMatrix,
    space: &FunctionSpace,
    d: usize,
    s: usize,
    delta: f64,
) -> Result<SelectionResult> {
    ExactSelector::new(space, x.eps(), d, s as f64, delta)?.select(x)
}

/// Diagnostics of one Lepski selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LepskiTrace {
    /// Candidate selections `eta_hat(s_m)`, one per grid point.
    pub candidates: Vec<Vec<bool>>,
    /// Hamming distances between candidates.
    pub distances: Vec<Vec<usize>>,
    /// Slacks `v_m = s_m / tau`, nondecreasing.
    pub v: Vec<f64>,
    /// Zero-based index chosen by the minimum over admissible indices.
    pub m_hat: usize,
    /// Zero-based index reached by the downward scan from `M`.
    pub scan_m_hat: usize,
}

/// Pairwise Hamming distances between candidate selections.
pub fn candidate_distances(candidates: &[Vec<bool>]) -> Result<Vec<Vec<usize>>> {
    let m = candidates.len();
    let mut out = vec![vec![0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let h = hamming(&candidates[a], &candidates[b])?;
            out[a][b] = h;
            out[b][a] = h;
        }
    }
    Ok(out)
}

fn admissible(distances: &[Vec<usize>], v: &[f64], m: usize) -> bool {
    (m..v.len()).all(|i| distances[m][i] as f64 <= v[i])
}

/// Smallest zero-based `m` with `|eta(s_m) - eta(s_i)| <= v_i` for all `i >= m`.
/// The last index is always admissible.
pub fn lepski_index(candidates: &[Vec<bool>], v: &[f64]) -> Result<usize> {
    if candidates.is_empty() || candidates.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: v.len().max(1),
            got: candidates.len(),
        });
    }
    let distances = candidate_distances(candidates)?;
    Ok((0..v.len())
        .find(|&m| admissible(&distances, v, m))
        .unwrap_or(v.len() - 1))
}

fn scan_index(distances: &[Vec<usize>], v: &[f64]) -> usize {
    let mut m_hat = v.len() - 1;
    while m_hat > 0 && admissible(distances, v, m_hat - 1) {
        m_hat -= 1;
    }
    m_hat
}

/// Lepski-adaptive almost-full selector over a sparsity grid.
#[derive(Debug, Clone)]
pub struct LepskiSelector {
    config: SelectorConfig,
    candidates: Vec<AlmostFullSelector>,
    v: Vec<f64>,
}

/// Chosen index, the selection at that index and the full trace.
pub type LepskiOutcome = (usize, SelectionResult, LepskiTrace);

impl LepskiSelector {
    pub fn new(space: &FunctionSpace, eps: f64, config: SelectorConfig) -> Result<Self> {
        let d = config.grid.d();
        let candidates = config
            .grid
            .points()
            .iter()
            .map(|&s| AlmostFullSelector::new(space, eps, d, s, config.delta))
            .collect::<Result<Vec<_>>>()?;
        let v = config.grid.points().iter().map(|s| s / config.tau).collect();
        Ok(Self { config, candidates, v })
    }

    pub fn required_pairs(&self) -> usize {
        self.candidates.iter().map(|c| c.required_pairs()).max().unwrap_or(0)
    }

    pub fn candidates(&self) -> &[AlmostFullSelector] {
        &self.candidates
    }

    pub fn select(&self, x: &ObservationMatrix) -> Result<LepskiOutcome> {
        let mut results = self
            .candidates
            .iter()
            .map(|c| c.select(x))
            .collect::<Result<Vec<_>>>()?;
        let sets: Vec<Vec<bool>> = results.iter().map(|r| r.eta_hat.clone()).collect();
        let distances = candidate_distances(&sets)?;
        let m_hat = (0..self.v.len())
            .find(|&m| admissible(&distances, &self.v, m))
            .unwrap_or(self.v.len() - 1);
        let scan_m_hat = scan_index(&distances, &self.v);
        let mut chosen = results.swap_remove(m_hat);
        chosen.meta = SelectionMeta::Lepski {
            m_hat,
            s_hat: self.config.grid.points()[m_hat],
            delta: self.config.delta,
            tau: self.config.tau,
        };
        let trace = LepskiTrace {
            candidates: sets,
            distances,
            v: self.v.clone(),
            m_hat,
            scan_m_hat,
        };
        Ok((m_hat, chosen, trace))
    }
}

pub fn lepski_select(x: &ObservationMatrix, space: &FunctionSpace, config: &SelectorConfig) -> Result<LepskiOutcome> {
    LepskiSelector::new(space, x.eps(), config.clone())?.select(x)
}

/// Adaptive exact selector for analytic classes: a row is active if any grid
/// point's statistic clears `sqrt((2 + delta)(log d + log M))`.
#[derive(Debug, Clone)]
pub struct AdaptiveExactSelector {
    d: usize,
    delta: f64,
    threshold: f64,
    statistics: Vec<Statistic>,
}

impl AdaptiveExactSelector {
    pub fn new(space: &FunctionSpace, eps: f64, grid: &Grid, delta: f64) -> Result<Self> {
        if space.kind() != SpaceKind::Analytic {
            return Err(Error::Unsupported(
                "the adaptive exact selector is defined for analytic classes only".into(),
            ));
        }
        let d = grid.d();
        let threshold = adaptive_exact_threshold(d, grid.len(), delta)?;
        let statistics = grid
            .points()
            .iter()
            .map(|&s| {
                let r = r_star_exact(space, eps, d, s)?;
                Ok(Statistic::new(solve_extremal(space, r, eps)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            d,
            delta,
            threshold,
            statistics,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn profiles(&self) -> impl Iterator<Item = &ExtremalProfile> {
        self.statistics.iter().map(|s| &s.profile)
    }

    pub fn required_pairs(&self) -> usize {
        self.statistics.iter().map(|s| s.active).max().unwrap_or(0)
    }

    /// `stats[j] = max_m t_{j,m}`, so the max-of-indicators rule is a single threshold.
    pub fn select(&self, x: &ObservationMatrix) -> Result<SelectionResult> {
        let eps = self.statistics[0].profile.eps();
        check_observations(x, self.d, self.required_pairs(), eps)?;
        let stats = x
            .rows()
            .map(|row| {
                self.statistics
                    .iter()
                    .map(|s| s.eval(row))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let meta = SelectionMeta::AdaptiveExact {
            grid_len: self.statistics.len(),
            delta: self.delta,
        };
        Ok(SelectionResult::from_stats(stats, self.threshold, meta))
    }
}

pub fn adaptive_exact_select(
    x: &ObservationMatrix,
    space: &FunctionSpace,
    grid: &Grid,
    delta: f64,
) -> Result<SelectionResult> {
    AdaptiveExactSelector::new(space, x.eps(), grid, delta)?.select(x)
}

fn check_dimension(d: usize) -> Result<()> {
    if d < 2 {
        return Err(Error::domain(format!("dimension must be at least 2, got {d}")));
    }
    Ok(())
}

fn check_sparsity(d: usize, s: f64) -> Result<()> {
    check_dimension(d)?;
    if !(s >= 1.0 && s < d as f64) {
        return Err(Error::domain(format!(
            "sparsity must satisfy 1 <= s < d, got s = {s}, d = {d}"
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::domain(format!("delta must be positive, got {delta}")));
    }
    Ok(())
}

fn check_observations(x: &ObservationMatrix, d: usize, pairs: usize, eps: f64) -> Result<()> {
    if x.d() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.d(),
        });
    }
    if x.pairs() < pairs {
        return Err(Error::DimensionMismatch {
            expected: 2 * pairs,
            got: 2 * x.pairs(),
        });
    }
    if x.eps() != eps {
        return Err(Error::domain(format!(
            "observations have eps = {}, selector was built for {eps}",
            x.eps()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsoids::u_exact;
    use crate::seeding::replication_rng;
    use crate::signal::{embed_signal_with_width, sample_observations, SignMode, SparsityPattern};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    const LOG_1024: f64 = 6.931_471_805_599_453;

    fn analytic_profile() -> ExtremalProfile {
        let e10 = (-10f64).exp();
        solve_extremal(&FunctionSpace::analytic(1.0 / (2.0 * PI)).unwrap(), e10, e10).unwrap()
    }

    #[test]
    fn t_statistic_closed_forms() {
        let p = analytic_profile();
        let eps = p.eps();
        let at_eps = vec![eps; 20];
        assert_relative_eq!(t_statistic(&at_eps, &p, eps).unwrap(), 0.0, epsilon = 1e-14);
        let zeros = vec![0.0; 20];
        assert_relative_eq!(
            t_statistic(&zeros, &p, eps).unwrap(),
            -10f64.sqrt(),
            max_relative = 1e-12
        );
        assert!(matches!(
            t_statistic(&zeros[..18], &p, eps),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn t_statistic_mean_identity_at_extremal_signal() {
        // E t = sum omega (theta/eps)^2 = u; check the algebra on the noiseless part.
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let p = solve_extremal(&space, 0.05, 0.01).unwrap();
        let mean: f64 = 2.0
            * p.omega()
                .iter()
                .zip(p.theta_star())
                .map(|(w, t)| w * (t / 0.01).powi(2))
                .sum::<f64>();
        assert_relative_eq!(mean, u_exact(&p), max_relative = 1e-12);
    }

    #[test]
    fn targets_and_thresholds() {
        assert_relative_eq!(
            almost_full_target(1024, 32.0).unwrap(),
            2.632_768_847_734_159,
            max_relative = 1e-14
        );
        assert_relative_eq!(almost_full_target(1024, 32.0).unwrap(), 2.63268, max_relative = 1e-4);
        assert_relative_eq!(
            exact_target(1024, 32.0).unwrap(),
            6.356_066_258_793_193,
            max_relative = 1e-14
        );
        assert_relative_eq!(exact_target(1024, 32.0).unwrap(), 6.35598, max_relative = 1e-4);
        assert_relative_eq!(
            exact_target(1024, 1.0).unwrap(),
            (2.0 * LOG_1024).sqrt(),
            max_relative = 1e-14
        );
        assert!(exact_target(1024, 2.0).unwrap() > almost_full_target(1024, 2.0).unwrap());
        assert!(almost_full_target(1024, 1024.0).is_err());
        assert_relative_eq!(
            almost_full_threshold(1024, 32.0, 0.3).unwrap(),
            3.001_818_340_153_063,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            exact_threshold(1024, 0.3).unwrap(),
            3.992_791_649_069_45,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            adaptive_exact_threshold(1024, 6, 0.3).unwrap(),
            4.479_222_246_339_566,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            adaptive_exact_threshold(1024, 6, 0.3).unwrap(),
            4.47933,
            max_relative = 1e-4
        );
        let mut prev = f64::INFINITY;
        for s in 1..1024 {
            let t = almost_full_threshold(1024, s as f64, 0.3).unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn boundaries_order() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let a = r_star_almost_full(&space, 0.01, 1024, 32.0).unwrap();
        let e = r_star_exact(&space, 0.01, 1024, 32.0).unwrap();
        assert!(a < e);
        let tiny = r_star_almost_full(&space, 0.01, 1 << 20, ((1 << 20) - 1) as f64).unwrap();
        assert!(tiny < a);
        assert!(r_star_exact(&space, 0.01, 1024, 1024.0).is_err());
    }

    #[test]
    fn grid_construction() {
        let g = build_grid(10_000, 0.25, 0.75, 0.1).unwrap();
        assert_eq!(g.len(), 6);
        assert_relative_eq!(g.points()[0], 10.0, max_relative = 1e-12);
        assert_relative_eq!(g.points()[1], 25.118_864_315_095_8, max_relative = 1e-12);
        assert_relative_eq!(g.points()[5], 1000.0, max_relative = 1e-12);
        for w in g.points().windows(2) {
            assert_relative_eq!(w[1] / w[0], 10f64.powf(0.4), max_relative = 1e-12);
        }
        let single = build_grid(1024, 0.5, 0.5, 0.1).unwrap();
        assert_eq!(single.len(), 1);
        assert_relative_eq!(single.points()[0], 32.0, max_relative = 1e-12);
        assert!(build_grid(1024, 0.6, 0.5, 0.1).is_err());
        assert!(build_grid(1024, 0.2, 0.5, 0.0).is_err());
        assert!(build_grid(1024, 0.9, 0.99, 0.5).is_err());
    }

    #[test]
    fn schedules() {
        let s = default_schedules(1024).unwrap();
        assert_relative_eq!(s.delta, 0.379_828_256_043_302_2, max_relative = 1e-14);
        assert_relative_eq!(s.grid_step, 0.054_797_634_138_317_56, max_relative = 1e-14);
        assert_relative_eq!(s.tau, 2.632_768_847_734_159, max_relative = 1e-14);
        assert!((s.delta - 0.37989).abs() < 1e-4 && (s.grid_step - 0.05478).abs() < 1e-4);
        let small = default_schedules(64).unwrap();
        assert!(s.delta * LOG_1024 > small.delta * 64f64.ln());
        let mut prev = default_schedules(8).unwrap();
        for p in 4..30 {
            let cur = default_schedules(1 << p).unwrap();
            assert!(cur.delta < prev.delta && cur.grid_step < prev.grid_step && cur.tau > prev.tau);
            prev = cur;
        }
        assert!(default_schedules(7).is_err());
    }

    #[test]
    fn lepski_index_rules() {
        let same = vec![vec![true, false, true]; 4];
        assert_eq!(lepski_index(&same, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 0);
        let injected = vec![vec![true; 4], vec![false; 4]];
        assert_eq!(lepski_index(&injected, &[1.0, 3.5]).unwrap(), 1);
        assert_eq!(lepski_index(&injected, &[1.0, 4.0]).unwrap(), 0);
        assert!(lepski_index(&injected, &[1.0]).is_err());
    }

    #[test]
    fn scan_can_stop_above_global_minimum() {
        // m = 0 is admissible while m = 1 is not: the scan stops at 2.
        let c = vec![
            vec![false; 4],
            vec![true, false, false, false],
            vec![false, true, false, false],
        ];
        let d = candidate_distances(&c).unwrap();
        let v = [0.5, 1.0, 1.0];
        assert_eq!(scan_index(&d, &v), 2);
        assert_eq!(lepski_index(&c, &v).unwrap(), 0);
    }

    #[test]
    fn zero_observations_select_nothing() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let eps = 0.01;
        let af = AlmostFullSelector::new(&space, eps, 16, 2.0, 0.3).unwrap();
        let x =
            ObservationMatrix::from_rows(16, af.required_pairs(), eps, vec![0.0; 32 * af.required_pairs()]).unwrap();
        let res = af.select(&x).unwrap();
        assert_eq!(res.selected(), 0);
        assert!(res.stats.iter().all(|t| *t < 0.0));
        let ex = ExactSelector::new(&space, eps, 16, 2.0, 0.3).unwrap();
        let x =
            ObservationMatrix::from_rows(16, ex.required_pairs(), eps, vec![0.0; 32 * ex.required_pairs()]).unwrap();
        assert_eq!(ex.select(&x).unwrap().selected(), 0);
    }

    #[test]
    fn selectors_reject_mismatched_observations() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let af = AlmostFullSelector::new(&space, 0.01, 16, 2.0, 0.3).unwrap();
        let short = ObservationMatrix::from_rows(16, 1, 0.01, vec![0.0; 32]).unwrap();
        assert!(af.select(&short).is_err());
        let wrong_d =
            ObservationMatrix::from_rows(8, af.required_pairs(), 0.01, vec![0.0; 16 * af.required_pairs()]).unwrap();
        assert!(af.select(&wrong_d).is_err());
    }

    #[test]
    fn adaptive_exact_requires_analytic() {
        let grid = build_grid(1024, 0.25, 0.75, 0.1).unwrap();
        let sob = FunctionSpace::sobolev(1.0).unwrap();
        assert!(matches!(
            AdaptiveExactSelector::new(&sob, 0.01, &grid, 0.3),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn adaptive_exact_fires_if_any_grid_point_fires() {
        let space = FunctionSpace::analytic(1.0 / (2.0 * PI)).unwrap();
        let eps = (-40f64).exp();
        let grid = build_grid(64, 0.3, 0.7, 0.2).unwrap();
        let sel = AdaptiveExactSelector::new(&space, eps, &grid, 0.3).unwrap();
        let pairs = sel.required_pairs();
        let mut data = vec![0.0; 64 * 2 * pairs];
        // strong signal on row 3, first coordinate only
        data[3 * 2 * pairs] = 100.0 * eps;
        let x = ObservationMatrix::from_rows(64, pairs, eps, data).unwrap();
        let res = sel.select(&x).unwrap();
        let per_m: Vec<bool> = sel
            .statistics
            .iter()
            .map(|s| s.eval(x.row(3)) > sel.threshold())
            .collect();
        assert!(per_m.iter().any(|b| *b));
        assert!(res.eta_hat[3]);
        assert_eq!(res.selected(), 1);
    }

    #[test]
    fn lepski_selects_same_as_identical_candidates() {
        // A strong signal on 8 of 64 rows: every grid point agrees, so m_hat = 0.
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let eps = 1e-3;
        let grid = build_grid(64, 0.3, 0.7, 0.2).unwrap();
        let config = SelectorConfig::new(0.5, 2.0, grid).unwrap();
        let sel = LepskiSelector::new(&space, eps, config).unwrap();
        let profile = solve_extremal(&space, 0.1, eps).unwrap();
        let eta: Vec<bool> = (0..64).map(|j| j % 8 == 0).collect();
        let pattern = SparsityPattern::new(eta.clone()).unwrap();
        let mut rng = replication_rng(3, 0);
        let sig = embed_signal_with_width(&profile, &pattern, SignMode::Fixed, sel.required_pairs(), &mut rng).unwrap();
        let x = sample_observations(&sig, eps, &mut rng).unwrap();
        let (m_hat, res, trace) = sel.select(&x).unwrap();
        assert_eq!(m_hat, 0);
        assert_eq!(trace.scan_m_hat, 0);
        assert_eq!(res.eta_hat, eta);
        assert!(trace.v.windows(2).all(|w| w[0] <= w[1]));
    }
}
