//! Monte Carlo risk laboratory.
//!
//! Replication `i` of an experiment with master seed `seed` draws everything
//! (pattern, signs, noise) from [`replication_rng`]`(seed, i)`. Replications
//! run in parallel on the current rayon pool and are aggregated in index
//! order, so reports are bit-identical for any thread count.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsoids::{solve_extremal, ExtremalProfile, FunctionSpace};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, replication_rng};
use crate::selectors::{
    r_star_almost_full, r_star_exact, AdaptiveExactSelector, AlmostFullSelector, ExactSelector, LepskiSelector,
    SelectorConfig,
};
use crate::signal::{
    embed_signal_with_width, sample_observations, sample_pattern, ObservationMatrix, SignMode, SparsityPattern,
};

/// Replications simulated per generator in the statistic-level diagnostics.
const CHUNK: usize = 10_000;

/// Number of positions where `a` and `b` differ.
pub fn hamming(a: &[bool], b: &[bool]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    AlmostFull,
    Exact,
    #[serde(rename = "lepski")]
    LepskiAdaptive,
    AdaptiveExact,
}

impl SelectorKind {
    pub fn name(&self) -> &'static str {
        match self {
            SelectorKind::AlmostFull => "almost-full",
            SelectorKind::Exact => "exact",
            SelectorKind::LepskiAdaptive => "lepski",
            SelectorKind::AdaptiveExact => "adaptive-exact",
        }
    }

    /// Exact-recovery selectors are calibrated against the exact boundary.
    pub fn uses_exact_boundary(&self) -> bool {
        matches!(self, SelectorKind::Exact | SelectorKind::AdaptiveExact)
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "almost-full" => Ok(SelectorKind::AlmostFull),
            "exact" => Ok(SelectorKind::Exact),
            "lepski" => Ok(SelectorKind::LepskiAdaptive),
            "adaptive-exact" => Ok(SelectorKind::AdaptiveExact),
            other => Err(Error::domain(format!("unknown selector '{other}'"))),
        }
    }
}

/// Everything needed to reproduce one Monte Carlo risk estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub space: FunctionSpace,
    pub d: usize,
    pub s: usize,
    pub eps: f64,
    /// Signal radius as a multiple of the selector's detection boundary.
    pub rho: f64,
    pub selector: SelectorKind,
    pub config: SelectorConfig,
    pub sign_mode: SignMode,
    pub reps: usize,
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1 <= self.s && self.s < self.d) {
            return Err(Error::domain(format!(
                "need 1 <= s < d, got s = {}, d = {}",
                self.s, self.d
            )));
        }
        if self.reps == 0 {
            return Err(Error::domain("reps must be at least 1"));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::domain(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::domain(format!("rho must be positive, got {}", self.rho)));
        }
        if self.config.grid.d() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: self.config.grid.d(),
            });
        }
        Ok(())
    }
}

/// Detection boundary `r*(s)` the experiment's signal radius is scaled from.
pub fn boundary_radius(spec: &ExperimentSpec) -> Result<f64> {
    let s = spec.s as f64;
    if spec.selector.uses_exact_boundary() {
        r_star_exact(&spec.space, spec.eps, spec.d, s)
    } else {
        r_star_almost_full(&spec.space, spec.eps, spec.d, s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub spec: ExperimentSpec,
    /// Estimate of `E|eta_hat - eta| / s`.
    pub mean_normalized_risk: f64,
    pub std_error: f64,
    pub reps: usize,
    /// Boundary radius `r*(s)` and the signal radius `rho r*(s)`.
    pub r_star: f64,
    pub signal_radius: f64,
    /// Hamming distance of every replication, in replication order.
    pub hamming_counts: Vec<usize>,
}

impl RiskReport {
    /// Mean unnormalized Hamming risk `E|eta_hat - eta|`.
    pub fn mean_hamming(&self) -> f64 {
        self.mean_normalized_risk * self.spec.s as f64
    }

    /// `mean +- 1.96 stderr`.
    pub fn ci95(&self) -> (f64, f64) {
        let h = 1.96 * self.std_error;
        (self.mean_normalized_risk - h, self.mean_normalized_risk + h)
    }
}

enum PreparedSelector {
    AlmostFull(AlmostFullSelector),
    Exact(ExactSelector),
    Lepski(Box<LepskiSelector>),
    AdaptiveExact(AdaptiveExactSelector),
}

impl PreparedSelector {
    fn new(spec: &ExperimentSpec) -> Result<Self> {
        let (space, eps, d, s) = (&spec.space, spec.eps, spec.d, spec.s as f64);
        let delta = spec.config.delta;
        Ok(match spec.selector {
            SelectorKind::AlmostFull => Self::AlmostFull(AlmostFullSelector::new(space, eps, d, s, delta)?),
            SelectorKind::Exact => Self::Exact(ExactSelector::new(space, eps, d, s, delta)?),
            SelectorKind::LepskiAdaptive => {
                Self::Lepski(Box::new(LepskiSelector::new(space, eps, spec.config.clone())?))
            }
            SelectorKind::AdaptiveExact => {
                Self::AdaptiveExact(AdaptiveExactSelector::new(space, eps, &spec.config.grid, delta)?)
            }
        })
    }

    fn required_pairs(&self) -> usize {
        match self {
            Self::AlmostFull(s) => s.required_pairs(),
            Self::Exact(s) => s.required_pairs(),
            Self::Lepski(s) => s.required_pairs(),
            Self::AdaptiveExact(s) => s.required_pairs(),
        }
    }

    fn select(&self, x: &ObservationMatrix) -> Result<Vec<bool>> {
        Ok(match self {
            Self::AlmostFull(s) => s.select(x)?.eta_hat,
            Self::Exact(s) => s.select(x)?.eta_hat,
            Self::Lepski(s) => s.select(x)?.1.eta_hat,
            Self::AdaptiveExact(s) => s.select(x)?.eta_hat,
        })
    }
}

/// Monte Carlo estimate of the normalized Hamming risk of `spec.selector`
/// at signal radius `rho r*(s)`.
pub fn mc_risk(spec: &ExperimentSpec) -> Result<RiskReport> {
    spec.validate()?;
    let selector = PreparedSelector::new(spec)?;
    run(spec, selector.required_pairs(), |x, _| selector.select(x))
}

/// As [`mc_risk`] with a caller-supplied selector. The closure receives the
/// observations and the true pattern, which lets tests plug in oracles.
pub fn mc_risk_with<F>(spec: &ExperimentSpec, selector: F) -> Result<RiskReport>
where
    F: Fn(&ObservationMatrix, &SparsityPattern) -> Result<Vec<bool>> + Sync,
{
    spec.validate()?;
    run(spec, 0, selector)
}

fn run<F>(spec: &ExperimentSpec, selector_pairs: usize, selector: F) -> Result<RiskReport>
where
    F: Fn(&ObservationMatrix, &SparsityPattern) -> Result<Vec<bool>> + Sync,
{
    let r_star = boundary_radius(spec)?;
    let signal_radius = spec.rho * r_star;
    let profile = solve_extremal(&spec.space, signal_radius, spec.eps)?;
    let pairs = selector_pairs.max(profile.active_len());

    let hamming_counts = (0..spec.reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(spec.seed, i);
            let pattern = sample_pattern(spec.d, spec.s, &mut rng)?;
            let signal = embed_signal_with_width(&profile, &pattern, spec.sign_mode, pairs, &mut rng)?;
            let x = sample_observations(&signal, spec.eps, &mut rng)?;
            hamming(&selector(&x, &pattern)?, pattern.eta())
        })
        .collect::<Result<Vec<usize>>>()?;

    let s = spec.s as f64;
    let normalized: Vec<f64> = hamming_counts.iter().map(|&h| h as f64 / s).collect();
    let (mean, std_error) = mean_and_stderr(&normalized);
    Ok(RiskReport {
        spec: spec.clone(),
        mean_normalized_risk: mean,
        std_error,
        reps: spec.reps,
        r_star,
        signal_radius,
        hamming_counts,
    })
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Risk at each `rho`, sorted ascending. Point `i` of the sorted list uses
/// master seed `derive_seed(template.seed, i)`.
pub fn phase_sweep(template: &ExperimentSpec, rhos: &[f64]) -> Result<Vec<(f64, RiskReport)>> {
    if rhos.is_empty() {
        return Err(Error::domain("rho list must not be empty"));
    }
    let mut sorted = rhos.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let spec = ExperimentSpec {
                rho,
                seed: derive_seed(template.seed, i as u64),
                ..template.clone()
            };
            mc_risk(&spec).map(|r| (rho, r))
        })
        .collect()
}

/// Monte Carlo estimate of the Bayes lower bound `A + B` on the normalized
/// Hamming risk under the independent Bernoulli(s/d) prior on activity and
/// a symmetric sign prior on the extremal coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    /// `(d/s) P_0(Lambda >= (1-p)/p)`.
    pub a_hat: f64,
    /// `P_1(Lambda < (1-p)/p)`.
    pub b_hat: f64,
    pub risk_lb_hat: f64,
    /// Log of the Bayes decision boundary, `log((1-p)/p)`.
    pub log_boundary: f64,
    pub reps: usize,
}

/// Lower bound at radius `rho r*(s)`, with `r*` the almost-full boundary.
pub fn bayes_lower_bound(
    space: &FunctionSpace,
    d: usize,
    s: usize,
    eps: f64,
    rho: f64,
    reps: usize,
    seed: u64,
) -> Result<LowerBound> {
    check_prior(d, s)?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::domain(format!("rho must be positive, got {rho}")));
    }
    let r_star = r_star_almost_full(space, eps, d, s as f64)?;
    let profile = solve_extremal(space, rho * r_star, eps)?;
    let amplitudes: Vec<f64> = profile.theta_star()[..profile.active_len()]
        .iter()
        .map(|t| t / eps)
        .collect();
    bayes_lower_bound_for_amplitudes(&amplitudes, d, s, reps, seed)
}

/// Lower bound for explicit normalized amplitudes `v_k = theta_k / eps`,
/// `k = 1..K` (each used for `+k` and `-k`).
pub fn bayes_lower_bound_for_amplitudes(
    amplitudes: &[f64],
    d: usize,
    s: usize,
    reps: usize,
    seed: u64,
) -> Result<LowerBound> {
    check_prior(d, s)?;
    if reps == 0 {
        return Err(Error::domain("reps must be at least 1"));
    }
    let p = s as f64 / d as f64;
    let log_boundary = ((1.0 - p) / p).ln();
    let log_lr = |y: &[f64]| -> f64 {
        amplitudes
            .iter()
            .zip(y.chunks_exact(2))
            .map(|(v, pair)| -v * v + log_cosh(v * pair[0]) + log_cosh(v * pair[1]))
            .sum()
    };

    let outcomes: Vec<(bool, bool)> = (0..reps as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replication_rng(seed, i);
            let mut y = vec![0.0; 2 * amplitudes.len()];
            y.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            let null_rejects = log_lr(&y) >= log_boundary;
            for (pair, v) in y.chunks_exact_mut(2).zip(amplitudes) {
                for slot in pair {
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    *slot = sign * v + rng.sample::<f64, _>(StandardNormal);
                }
            }
            let alt_misses = log_lr(&y) < log_boundary;
            (null_rejects, alt_misses)
        })
        .collect();

    let n = reps as f64;
    let a_hat = (d as f64 / s as f64) * outcomes.iter().filter(|o| o.0).count() as f64 / n;
    let b_hat = outcomes.iter().filter(|o| o.1).count() as f64 / n;
    Ok(LowerBound {
        a_hat,
        b_hat,
        risk_lb_hat: a_hat + b_hat,
        log_boundary,
        reps,
    })
}

fn check_prior(d: usize, s: usize) -> Result<()> {
    if s == 0 || 2 * s >= d {
        return Err(Error::domain(format!(
            "the Bayes bound needs 1 <= s and p = s/d < 1/2, got s = {s}, d = {d}"
        )));
    }
    Ok(())
}

/// `log cosh x = |x| + log1p(exp(-2|x|)) - log 2`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Simulated draws of the statistic `t` for a fixed coefficient row.
fn simulate_statistic<F>(profile: &ExtremalProfile, theta: &[f64], reps: usize, seed: u64, mut visit: F)
where
    F: FnMut(&[f64]),
{
    let active = profile.active_len();
    let omega = &profile.omega()[..active];
    let eps = profile.eps();
    let mean: Vec<f64> = theta[..active].iter().map(|t| t / eps).collect();
    let chunks = reps.div_ceil(CHUNK);
    let per_chunk: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = replication_rng(seed, c as u64);
            let n = CHUNK.min(reps - c * CHUNK);
            (0..n)
                .map(|_| {
                    omega
                        .iter()
                        .zip(&mean)
                        .map(|(w, m)| {
                            let a = m + rng.sample::<f64, _>(StandardNormal);
                            let b = m + rng.sample::<f64, _>(StandardNormal);
                            w * ((a * a - 1.0) + (b * b - 1.0))
                        })
                        .sum()
                })
                .collect()
        })
        .collect();
    per_chunk.iter().for_each(|values| visit(values));
}

/// Monte Carlo moments of the statistic `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub reps: usize,
}

/// Moments of `t` when every row coefficient at `+-k` equals `theta[k-1]`.
/// Pass zeros for the null distribution.
pub fn statistic_moments(profile: &ExtremalProfile, theta: &[f64], reps: usize, seed: u64) -> Result<Moments> {
    if theta.len() != profile.bandwidth() {
        return Err(Error::DimensionMismatch {
            expected: profile.bandwidth(),
            got: theta.len(),
        });
    }
    if reps < 2 {
        return Err(Error::domain("moments need at least two replications"));
    }
    let mut all = Vec::with_capacity(reps);
    simulate_statistic(profile, theta, reps, seed, |v| all.extend_from_slice(v));
    let (mean, std_error) = mean_and_stderr(&all);
    let n = reps as f64;
    let variance = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(Moments {
        mean,
        variance,
        std_error,
        reps,
    })
}

/// One line of the null lower-tail diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub t: f64,
    /// `P_0(t_j <= T)` by simulation.
    pub mc_tail: f64,
    /// `exp(-T^2 / 2)`.
    pub bound: f64,
    /// `log(mc_tail) / (-T^2 / 2)`; undefined at `T = 0`.
    pub exponent_ratio: Option<f64>,
}

pub const MIN_TAIL_REPS: usize = 100_000;

/// Compare simulated null lower tails of `t` with `exp(-T^2/2)`.
pub fn tail_check(profile: &ExtremalProfile, t_list: &[f64], reps: usize, seed: u64) -> Result<Vec<TailRow>> {
    if reps < MIN_TAIL_REPS {
        return Err(Error::domain(format!(
            "tail diagnostics need at least {MIN_TAIL_REPS} replications, got {reps}"
        )));
    }
    if let Some(t) = t_list.iter().find(|t| !(t.is_finite() && **t <= 0.0)) {
        return Err(Error::domain(format!("tail points must be nonpositive, got {t}")));
    }
    let zeros = vec![0.0; profile.bandwidth()];
    let mut hits = vec![0usize; t_list.len()];
    simulate_statistic(profile, &zeros, reps, seed, |values| {
        for v in values {
            for (h, t) in hits.iter_mut().zip(t_list) {
                *h += (*v <= *t) as usize;
            }
        }
    });
    Ok(t_list
        .iter()
        .zip(hits)
        .map(|(&t, h)| {
            let mc_tail = h as f64 / reps as f64;
            let half_sq = 0.5 * t * t;
            let exponent_ratio = (t < 0.0).then(|| mc_tail.ln() / -half_sq);
            TailRow {
                t,
                mc_tail,
                bound: (-half_sq).exp(),
                exponent_ratio,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hamming_cases() {
        assert_eq!(hamming(&[true, false, true], &[true, true, true]).unwrap(), 1);
        let a = [true, false, false, true];
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&[false; 9], &[true; 9]).unwrap(), 9);
        assert!(hamming(&[true], &[true, false]).is_err());
    }

    #[test]
    fn selector_names_round_trip() {
        for k in [
            SelectorKind::AlmostFull,
            SelectorKind::Exact,
            SelectorKind::LepskiAdaptive,
            SelectorKind::AdaptiveExact,
        ] {
            assert_eq!(k.name().parse::<SelectorKind>().unwrap(), k);
        }
        assert!("lasso".parse::<SelectorKind>().is_err());
    }

    #[test]
    fn log_cosh_is_stable() {
        for &x in &[0.0, 0.3, -2.0, 10.0] {
            assert_relative_eq!(log_cosh(x), f64::cosh(x).ln(), max_relative = 1e-13, epsilon = 1e-15);
        }
        assert_relative_eq!(log_cosh(800.0), 800.0 - std::f64::consts::LN_2, max_relative = 1e-15);
    }

    #[test]
    fn lower_bound_without_signal() {
        let lb = bayes_lower_bound_for_amplitudes(&[0.0; 5], 100, 1, 1000, 3).unwrap();
        assert_eq!(lb.b_hat, 1.0);
        assert_eq!(lb.a_hat, 0.0);
        assert_eq!(lb.risk_lb_hat, 1.0);
        assert_relative_eq!(lb.log_boundary, 99f64.ln(), max_relative = 1e-15);
        assert_relative_eq!(lb.log_boundary, 4.595_12, max_relative = 1e-6);
    }

    #[test]
    fn lower_bound_rejects_dense_prior() {
        assert!(bayes_lower_bound_for_amplitudes(&[1.0], 10, 5, 10, 0).is_err());
        assert!(bayes_lower_bound_for_amplitudes(&[1.0], 10, 4, 10, 0).is_ok());
    }

    #[test]
    fn tail_check_rules() {
        let space = FunctionSpace::analytic(1.0 / (2.0 * std::f64::consts::PI)).unwrap();
        let e10 = (-10f64).exp();
        let p = solve_extremal(&space, e10, e10).unwrap();
        assert!(tail_check(&p, &[-1.0], 10, 0).is_err());
        assert!(tail_check(&p, &[0.5], MIN_TAIL_REPS, 0).is_err());
        let rows = tail_check(&p, &[0.0, -1.0, -2.0, -3.0], MIN_TAIL_REPS, 1).unwrap();
        assert_eq!(rows[0].bound, 1.0);
        assert!(rows[0].exponent_ratio.is_none());
        assert!(rows[0].mc_tail <= rows[0].bound);
        assert_relative_eq!(rows[3].bound, 0.011_109, max_relative = 1e-4);
        assert!(rows[1].mc_tail > rows[2].mc_tail && rows[2].mc_tail >= rows[3].mc_tail);
        for r in &rows {
            assert!(r.mc_tail <= r.bound);
        }
    }

    #[test]
    fn moments_require_matching_row() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let p = solve_extremal(&space, 0.1, 0.01).unwrap();
        assert!(statistic_moments(&p, &[0.0; 3], 100, 0).is_err());
        let m = statistic_moments(&p, &vec![0.0; p.bandwidth()], 20_000, 0).unwrap();
        assert!(m.mean.abs() < 4.0 * m.std_error);
    }
}
