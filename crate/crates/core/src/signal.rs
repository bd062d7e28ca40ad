//! Sparsity patterns, extremal signals and sequence-space observations.
//!
//! Coefficient rows are laid out with frequencies interleaved: column
//! `2(k-1)` holds frequency `+k` and column `2(k-1)+1` holds `-k`, so the
//! first `2K` columns of any row are exactly the support `1 <= |k| <= K`.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ellipsoids::{ExtremalProfile, FunctionSpace};
use crate::error::{Error, Result};

/// A binary activity vector with exactly `s` ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    eta: Vec<bool>,
    s: usize,
}

impl SparsityPattern {
    pub fn new(eta: Vec<bool>) -> Result<Self> {
        let s = eta.iter().filter(|b| **b).count();
        if s == 0 {
            return Err(Error::domain("a sparsity pattern needs at least one active component"));
        }
        Ok(Self { eta, s })
    }

    pub fn d(&self) -> usize {
        self.eta.len()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn eta(&self) -> &[bool] {
        &self.eta
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.eta[j]
    }
}

/// Uniform draw over patterns with exactly `s` ones (partial Fisher-Yates).
pub fn sample_pattern<R: Rng + ?Sized>(d: usize, s: usize, rng: &mut R) -> Result<SparsityPattern> {
    if s == 0 || s > d {
        return Err(Error::domain(format!(
            "sparsity must satisfy 1 <= s <= d, got s = {s}, d = {d}"
        )));
    }
    let mut index: Vec<usize> = (0..d).collect();
    for i in 0..s {
        let j = rng.random_range(i..d);
        index.swap(i, j);
    }
    let mut eta = vec![false; d];
    for &j in &index[..s] {
        eta[j] = true;
    }
    Ok(SparsityPattern { eta, s })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignMode {
    /// Every active row equals `theta*`.
    Fixed,
    /// Independent uniform signs on every coordinate of every active row.
    Rademacher,
}

/// Coefficients `eta_j theta_{j,k}` of a sparse additive signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix {
    theta: Vec<f64>,
    pairs: usize,
    pattern: SparsityPattern,
    radius: f64,
}

impl SignalMatrix {
    pub fn d(&self) -> usize {
        self.pattern.d()
    }

    /// Number of frequency pairs; rows have `2 * pairs` columns.
    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let w = 2 * self.pairs;
        &self.theta[j * w..(j + 1) * w]
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }
}

/// Place `+-theta*` on every active row, zero elsewhere.
pub fn embed_signal<R: Rng + ?Sized>(
    profile: &ExtremalProfile,
    pattern: &SparsityPattern,
    mode: SignMode,
    rng: &mut R,
) -> SignalMatrix {
    embed(profile, pattern, mode, profile.bandwidth(), rng)
}

/// As [`embed_signal`], on `pairs` frequency pairs. Must cover every nonzero
/// coefficient of the profile; extra columns are zero.
pub fn embed_signal_with_width<R: Rng + ?Sized>(
    profile: &ExtremalProfile,
    pattern: &SparsityPattern,
    mode: SignMode,
    pairs: usize,
    rng: &mut R,
) -> Result<SignalMatrix> {
    if pairs < profile.active_len() {
        return Err(Error::DimensionMismatch {
            expected: profile.active_len(),
            got: pairs,
        });
    }
    Ok(embed(profile, pattern, mode, pairs, rng))
}

fn embed<R: Rng + ?Sized>(
    profile: &ExtremalProfile,
    pattern: &SparsityPattern,
    mode: SignMode,
    pairs: usize,
    rng: &mut R,
) -> SignalMatrix {
    let w = 2 * pairs;
    let used = profile.bandwidth().min(pairs);
    let mut theta = vec![0.0; pattern.d() * w];
    for (j, row) in theta.chunks_exact_mut(w).enumerate() {
        if !pattern.is_active(j) {
            continue;
        }
        for (k, &t) in profile.theta_star()[..used].iter().enumerate() {
            for slot in &mut row[2 * k..2 * k + 2] {
                *slot = match mode {
                    SignMode::Fixed => t,
                    SignMode::Rademacher if rng.random::<bool>() => t,
                    SignMode::Rademacher => -t,
                };
            }
        }
    }
    SignalMatrix {
        theta,
        pairs,
        pattern: pattern.clone(),
        radius: profile.radius(),
    }
}

/// Empirical Fourier coefficients `X_{j,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMatrix {
    x: Vec<f64>,
    d: usize,
    pairs: usize,
    eps: f64,
}

impl ObservationMatrix {
    /// Wrap row-major data of shape `d x 2 pairs`.
    pub fn from_rows(d: usize, pairs: usize, eps: f64, x: Vec<f64>) -> Result<Self> {
        if x.len() != d * 2 * pairs {
            return Err(Error::DimensionMismatch {
                expected: d * 2 * pairs,
                got: x.len(),
            });
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(Error::domain(format!("eps must be positive, got {eps}")));
        }
        Ok(Self { x, d, pairs, eps })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn row(&self, j: usize) -> &[f64] {
        let w = 2 * self.pairs;
        &self.x[j * w..(j + 1) * w]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.x.chunks_exact(2 * self.pairs)
    }
}

/// `X_{j,k} = theta_{j,k} + eps xi_{j,k}` with independent standard normal noise.
pub fn sample_observations<R: Rng + ?Sized>(signal: &SignalMatrix, eps: f64, rng: &mut R) -> Result<ObservationMatrix> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::domain(format!("eps must be positive, got {eps}")));
    }
    let x = signal
        .theta
        .iter()
        .map(|t| t + eps * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(ObservationMatrix {
        x,
        d: signal.d(),
        pairs: signal.pairs,
        eps,
    })
}

/// Trigonometric basis: `phi_0 = 1`, `phi_k = sqrt2 cos(2 pi k x)`,
/// `phi_{-k} = sqrt2 sin(2 pi k x)`.
pub fn basis_eval(k: i64, x: f64) -> f64 {
    match k {
        0 => 1.0,
        k if k > 0 => SQRT_2 * (2.0 * PI * k as f64 * x).cos(),
        k => SQRT_2 * (2.0 * PI * (-k) as f64 * x).sin(),
    }
}

/// `sqrt(sum c_k^2 theta_k^2)` for finitely many `(k, theta_k)` pairs, `k != 0`.
pub fn space_norm(coeffs: &[(i64, f64)], space: &FunctionSpace) -> Result<f64> {
    let mut total = 0.0;
    for &(k, t) in coeffs {
        let c = space.semi_axis(k)?;
        total += (c * t) * (c * t);
    }
    Ok(total.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ellipsoids::solve_extremal;
    use crate::seeding::replication_rng;
    use approx::assert_relative_eq;

    #[test]
    fn pattern_edge_cases() {
        let mut rng = replication_rng(1, 0);
        assert_eq!(sample_pattern(5, 5, &mut rng).unwrap().eta(), &[true; 5]);
        assert!(sample_pattern(5, 0, &mut rng).is_err());
        assert!(sample_pattern(5, 6, &mut rng).is_err());
        let p = sample_pattern(100, 7, &mut rng).unwrap();
        assert_eq!(p.eta().iter().filter(|b| **b).count(), 7);
        assert_eq!(p.s(), 7);
    }

    #[test]
    fn pattern_inclusion_is_uniform() {
        let (d, s, draws) = (10_000usize, 100usize, 2_000usize);
        let mut hits = vec![0u32; d];
        let mut rng = replication_rng(42, 0);
        for _ in 0..draws {
            let p = sample_pattern(d, s, &mut rng).unwrap();
            for (h, &b) in hits.iter_mut().zip(p.eta()) {
                *h += b as u32;
            }
        }
        let p = s as f64 / d as f64;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        // Each coordinate individually is within 3 SE with probability 0.997;
        // check the fraction and the pooled mean.
        let outside = hits
            .iter()
            .filter(|&&h| (h as f64 / draws as f64 - p).abs() > 3.0 * se)
            .count();
        assert!((outside as f64) < 0.01 * d as f64, "{outside} coordinates outside 3 SE");
        let mean = hits.iter().map(|&h| h as f64).sum::<f64>() / (d * draws) as f64;
        assert_relative_eq!(mean, p, max_relative = 1e-12);
    }

    #[test]
    fn fixed_embedding_is_identity() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let profile = solve_extremal(&space, 0.1, 0.01).unwrap();
        let pattern = SparsityPattern::new(vec![true]).unwrap();
        let mut rng = replication_rng(3, 0);
        let sig = embed_signal(&profile, &pattern, SignMode::Fixed, &mut rng);
        for (k, t) in profile.theta_star().iter().enumerate() {
            assert_eq!(sig.row(0)[2 * k], *t);
            assert_eq!(sig.row(0)[2 * k + 1], *t);
        }
    }

    #[test]
    fn rows_keep_radius_and_inactive_rows_vanish() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let profile = solve_extremal(&space, 0.05, 0.01).unwrap();
        let mut rng = replication_rng(5, 0);
        let pattern = sample_pattern(20, 6, &mut rng).unwrap();
        for mode in [SignMode::Fixed, SignMode::Rademacher] {
            let sig = embed_signal(&profile, &pattern, mode, &mut rng);
            for j in 0..20 {
                let n2: f64 = sig.row(j).iter().map(|t| t * t).sum();
                if pattern.is_active(j) {
                    assert_relative_eq!(n2.sqrt(), 0.05, max_relative = 1e-10);
                } else {
                    assert_eq!(n2, 0.0);
                }
            }
        }
    }

    #[test]
    fn rademacher_signs_are_fair() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let profile = solve_extremal(&space, 0.1, 0.01).unwrap();
        let pattern = SparsityPattern::new(vec![true]).unwrap();
        let mut rng = replication_rng(9, 0);
        let n = 10_000;
        let positive = (0..n)
            .filter(|_| embed_signal(&profile, &pattern, SignMode::Rademacher, &mut rng).row(0)[0] > 0.0)
            .count();
        let se = (0.25 / n as f64).sqrt();
        assert!((positive as f64 / n as f64 - 0.5).abs() < 3.0 * se);
    }

    #[test]
    fn width_must_cover_profile() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let profile = solve_extremal(&space, 0.1, 0.01).unwrap();
        let pattern = SparsityPattern::new(vec![true, false]).unwrap();
        let mut rng = replication_rng(9, 0);
        let active = profile.active_len();
        assert!(embed_signal_with_width(&profile, &pattern, SignMode::Fixed, active - 1, &mut rng).is_err());
        let sig = embed_signal_with_width(&profile, &pattern, SignMode::Fixed, active, &mut rng).unwrap();
        assert_eq!(sig.row(0).len(), 2 * active);
    }

    #[test]
    fn noiseless_limit() {
        let space = FunctionSpace::sobolev(1.0).unwrap();
        let profile = solve_extremal(&space, 0.1, 0.01).unwrap();
        let pattern = SparsityPattern::new(vec![true, false, true]).unwrap();
        let mut rng = replication_rng(2, 0);
        let sig = embed_signal(&profile, &pattern, SignMode::Fixed, &mut rng);
        let obs = sample_observations(&sig, 1e-300, &mut rng).unwrap();
        for j in 0..3 {
            for (x, t) in obs.row(j).iter().zip(sig.row(j)) {
                assert!((x - t).abs() <= 1e-15 * t.abs() + 1e-290);
            }
        }
        assert!(sample_observations(&sig, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noise_moments() {
        let pattern = SparsityPattern::new(vec![true]).unwrap();
        let sig = SignalMatrix {
            theta: vec![0.0; 2],
            pairs: 1,
            pattern,
            radius: 1.0,
        };
        let eps = 0.3;
        let n = 100_000;
        let mut rng = replication_rng(77, 0);
        let draws: Vec<f64> = (0..n)
            .map(|_| sample_observations(&sig, eps, &mut rng).unwrap().row(0)[0])
            .collect();
        let mean = draws.iter().map(|x| x / eps).sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var / (eps * eps) - 1.0).abs() < 0.05);
    }

    #[test]
    fn seeds_reproduce_bitwise() {
        let space = FunctionSpace::analytic(0.2).unwrap();
        let profile = solve_extremal(&space, 1e-4, 1e-5).unwrap();
        let run = || {
            let mut rng = replication_rng(123, 4);
            let p = sample_pattern(50, 5, &mut rng).unwrap();
            let sig = embed_signal(&profile, &p, SignMode::Rademacher, &mut rng);
            let obs = sample_observations(&sig, 1e-5, &mut rng).unwrap();
            (p, sig, obs)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn basis_values() {
        assert_eq!(basis_eval(0, 0.37), 1.0);
        assert_relative_eq!(basis_eval(1, 0.0), SQRT_2);
        assert_relative_eq!(basis_eval(-1, 0.25), SQRT_2, max_relative = 1e-15);
    }

    #[test]
    fn basis_is_orthonormal() {
        let n = 2048;
        let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        for j in -8i64..=8 {
            for k in -8i64..=8 {
                let ip = nodes.iter().map(|&x| basis_eval(j, x) * basis_eval(k, x)).sum::<f64>() / n as f64;
                let expected = if j == k { 1.0 } else { 0.0 };
                assert!((ip - expected).abs() < 1e-6, "<phi_{j}, phi_{k}> = {ip}");
            }
        }
    }

    #[test]
    fn space_norm_values() {
        let sob = FunctionSpace::sobolev(1.0).unwrap();
        let ana = FunctionSpace::analytic(1.0 / (2.0 * PI)).unwrap();
        assert_eq!(space_norm(&[], &sob).unwrap(), 0.0);
        assert_relative_eq!(space_norm(&[(1, 1.0)], &sob).unwrap(), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(
            space_norm(&[(1, 1.0)], &ana).unwrap(),
            std::f64::consts::E,
            max_relative = 1e-14
        );
        assert!(space_norm(&[(0, 1.0)], &sob).is_err());
    }

    #[test]
    fn quadrature_coefficients_match_space_norm() {
        // f(x) = 0.01 phi_1(x) - 0.02 phi_{-3}(x), coefficients recovered by midpoint quadrature
        let n = 2048;
        let f = |x: f64| 0.01 * basis_eval(1, x) - 0.02 * basis_eval(-3, x);
        let coef = |k: i64| {
            (0..n)
                .map(|i| (i as f64 + 0.5) / n as f64)
                .map(|x| f(x) * basis_eval(k, x))
                .sum::<f64>()
                / n as f64
        };
        let coeffs: Vec<(i64, f64)> = (-4i64..=4).filter(|k| *k != 0).map(|k| (k, coef(k))).collect();
        let sob = FunctionSpace::sobolev(1.0).unwrap();
        let expected = ((2.0 * PI * 0.01f64).powi(2) + (6.0 * PI * 0.02f64).powi(2)).sqrt();
        assert_relative_eq!(space_norm(&coeffs, &sob).unwrap(), expected, max_relative = 1e-8);
    }
}
