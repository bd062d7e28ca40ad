//! Extreme problem on Sobolev and analytic ellipsoids.
//!
//! For a radius `r` and noise level `eps` the extremal sequence minimizes
//! `sum theta_k^4` over coefficient sequences supported on `1 <= |k| <= K`
//! with `sum theta_k^2 = r^2` and `sum c_k^2 theta_k^2 <= 1`. Its value defines
//!
//! ```text
//! u_eps(r)^2 = (1 / (2 eps^4)) * sum theta*_k^4
//! ```
//!
//! which calibrates every threshold and detection boundary in the crate.
//!
//! Profiles store one entry per frequency `k = 1..K`; the value at `-k`
//! equals the value at `k`, so every sum over the support counts each stored
//! entry twice. Internally the solvers work with the scale-free shares
//! `q_k = theta_k^2 / r^2`, which keeps tiny radii (analytic classes need
//! `r` far below `1e-100`) away from underflow.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest bandwidth a profile may have.
pub const MAX_BANDWIDTH: usize = 1 << 24;

const FLOOR_SLACK: f64 = 1e-12;
const FEASIBILITY_SLACK: f64 = 1e-10;
const INVERT_TOL: f64 = 1e-8;
const INVERT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceKind {
    /// Periodic Sobolev class, `c_k = (2 pi |k|)^sigma`.
    Sobolev,
    /// Periodic functions analytic on a strip, `c_k = exp(2 pi sigma |k|)`.
    Analytic,
}

/// An ellipsoid family together with its smoothness parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpace {
    kind: SpaceKind,
    sigma: f64,
}

impl FunctionSpace {
    pub fn new(kind: SpaceKind, sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::domain(format!("smoothness must be positive, got {sigma}")));
        }
        Ok(Self { kind, sigma })
    }

    pub fn sobolev(sigma: f64) -> Result<Self> {
        Self::new(SpaceKind::Sobolev, sigma)
    }

    pub fn analytic(sigma: f64) -> Result<Self> {
        Self::new(SpaceKind::Analytic, sigma)
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Semi-axis `c_k`. The constant component `k = 0` is excluded.
    pub fn semi_axis(&self, k: i64) -> Result<f64> {
        if k == 0 {
            return Err(Error::domain(
                "semi-axis undefined at k = 0 (constant component excluded)",
            ));
        }
        Ok((0.5 * self.log_semi_axis_sq(k.unsigned_abs() as usize)).exp())
    }

    /// `log c_k^2` for `k >= 1`.
    pub(crate) fn log_semi_axis_sq(&self, k: usize) -> f64 {
        let k = k as f64;
        match self.kind {
            SpaceKind::Sobolev => 2.0 * self.sigma * (2.0 * PI * k).ln(),
            SpaceKind::Analytic => 4.0 * PI * self.sigma * k,
        }
    }

    pub(crate) fn semi_axis_sq(&self, k: usize) -> f64 {
        self.log_semi_axis_sq(k).exp()
    }

    /// Bandwidth `K_eps` of the extremal profile at radius `r`.
    ///
    /// Sobolev: `floor((4 sigma + 1)^(1/(2 sigma)) r^(-1/sigma))`.
    /// Analytic: `floor(log(1/r) / (2 pi sigma))`.
    pub fn bandwidth(&self, r: f64) -> Result<usize> {
        check_positive("radius", r)?;
        let raw = match self.kind {
            SpaceKind::Sobolev => {
                let s = self.sigma;
                ((4.0 * s + 1.0).ln() / (2.0 * s) - r.ln() / s).exp()
            }
            SpaceKind::Analytic => -r.ln() / (2.0 * PI * self.sigma),
        };
        // Absorb rounding in e.g. log(exp(-10)) = -9.999999999999998.
        let floored = (raw * (1.0 + FLOOR_SLACK)).floor();
        if floored.is_nan() || floored < 1.0 {
            return Err(Error::DegenerateBandwidth { bandwidth: raw });
        }
        if floored > MAX_BANDWIDTH as f64 {
            return Err(Error::domain(format!(
                "bandwidth {floored:e} exceeds the supported maximum {MAX_BANDWIDTH}"
            )));
        }
        Ok(floored as usize)
    }

    /// Largest radius for which the extremal profile exists.
    ///
    /// Sobolev profiles need `c_1 r <= 1`; analytic profiles need a bandwidth
    /// of at least one, which also makes the equal-magnitude profile feasible.
    pub fn max_radius(&self) -> f64 {
        match self.kind {
            SpaceKind::Sobolev => (2.0 * PI).powf(-self.sigma),
            SpaceKind::Analytic => (-2.0 * PI * self.sigma).exp(),
        }
    }
}

/// Constant of the sharp Sobolev asymptotics,
/// `2 sigma [(1 + 1/(4 sigma)) (1 + 4 sigma)^(1/(2 sigma)) B(1/(2 sigma), 2)^(1/sigma)]^(-1)`.
pub fn c_sigma(sigma: f64) -> Result<f64> {
    check_positive("sigma", sigma)?;
    let a = 1.0 / (2.0 * sigma);
    let log_beta = libm::lgamma(a) + libm::lgamma(2.0) - libm::lgamma(a + 2.0);
    let log_denominator =
        (1.0 + 1.0 / (4.0 * sigma)).ln() + (1.0 + 4.0 * sigma).ln() / (2.0 * sigma) + log_beta / sigma;
    Ok(2.0 * sigma * (-log_denominator).exp())
}

/// Leading-order asymptotic form of `u_eps(r)`. Reference only; thresholds and
/// boundaries always use [`u_exact`].
pub fn u_asymptotic(space: &FunctionSpace, r: f64, eps: f64) -> Result<f64> {
    check_positive("radius", r)?;
    check_positive("eps", eps)?;
    let ratio_sq = (r / eps) * (r / eps);
    match space.kind {
        SpaceKind::Sobolev => {
            let s = space.sigma;
            Ok(c_sigma(s)? * r.powf(1.0 / (2.0 * s)) * ratio_sq)
        }
        SpaceKind::Analytic => {
            if r >= 1.0 {
                return Err(Error::domain(format!("analytic asymptotics need r < 1, got {r}")));
            }
            Ok(ratio_sq * (2.0 * PI * space.sigma).sqrt() / (-r.ln()).sqrt())
        }
    }
}

/// Solved extremal sequence and the quantities derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtremalProfile {
    space: FunctionSpace,
    radius: f64,
    eps: f64,
    theta_star: Vec<f64>,
    u: f64,
    omega: Vec<f64>,
}

impl ExtremalProfile {
    /// Build a profile from shares `q_k = theta_k^2 / r^2` with `2 sum q_k = 1`.
    fn from_shares(space: FunctionSpace, radius: f64, eps: f64, shares: &[f64]) -> Self {
        let total: f64 = 2.0 * shares.iter().sum::<f64>();
        let theta_star: Vec<f64> = shares.iter().map(|q| radius * (q / total).sqrt()).collect();
        let u = u_from_theta(&theta_star, eps);
        let omega = theta_star
            .iter()
            .map(|t| {
                let v = t / eps;
                v * v / (2.0 * u)
            })
            .collect();
        Self {
            space,
            radius,
            eps,
            theta_star,
            u,
            omega,
        }
    }

    pub fn space(&self) -> &FunctionSpace {
        &self.space
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Bandwidth `K`: the profile lives on `1 <= |k| <= K`.
    pub fn bandwidth(&self) -> usize {
        self.theta_star.len()
    }

    /// `theta*_k` for `k = 1..=K`.
    pub fn theta_star(&self) -> &[f64] {
        &self.theta_star
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    /// `omega_k` for `k = 1..=K`.
    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// Largest `k` with a nonzero coefficient. Sobolev profiles clip well
    /// before `K`; coordinates beyond this index carry zero weight.
    pub fn active_len(&self) -> usize {
        self.theta_star.iter().rposition(|t| *t > 0.0).map_or(0, |i| i + 1)
    }

    /// `sum_{1<=|k|<=K} theta_k^2`.
    pub fn l2_norm_sq(&self) -> f64 {
        2.0 * self.theta_star.iter().map(|t| t * t).sum::<f64>()
    }

    /// `sum_{1<=|k|<=K} c_k^2 theta_k^2`, evaluated in the log domain.
    pub fn ellipsoid_load(&self) -> f64 {
        ellipsoid_load(&self.space, &self.theta_star)
    }

    /// `sum_{1<=|k|<=K} omega_k^2`, equal to 1/2 by construction.
    pub fn omega_norm_sq(&self) -> f64 {
        2.0 * self.omega.iter().map(|w| w * w).sum::<f64>()
    }
}

fn u_from_theta(theta: &[f64], eps: f64) -> f64 {
    // (1/(2 eps^4)) sum_{+-k} theta^4 = sum_{k>=1} (theta/eps)^4
    theta
        .iter()
        .map(|t| {
            let v = t / eps;
            let v2 = v * v;
            v2 * v2
        })
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn ellipsoid_load(space: &FunctionSpace, theta: &[f64]) -> f64 {
    let logs: Vec<f64> = theta
        .iter()
        .enumerate()
        .filter(|(_, t)| **t > 0.0)
        .map(|(i, t)| space.log_semi_axis_sq(i + 1) + 2.0 * t.ln())
        .collect();
    2.0 * log_sum_exp(&logs).exp()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `u_eps(r) = sqrt(sum theta*^4 / (2 eps^4))` for a solved profile.
pub fn u_exact(profile: &ExtremalProfile) -> f64 {
    u_from_theta(&profile.theta_star, profile.eps)
}

/// Solve the extreme problem on the support `1 <= |k| <= K_eps(r)`.
pub fn solve_extremal(space: &FunctionSpace, r: f64, eps: f64) -> Result<ExtremalProfile> {
    let k = space.bandwidth(r)?;
    solve_extremal_with_bandwidth(space, r, eps, k)
}

/// Solve the extreme problem on an explicit support `1 <= |k| <= bandwidth`.
///
/// Sobolev: `theta_k^2` is affine in `c_k^2` on its support and clipped at
/// zero. The two multipliers are found exactly by scanning active prefixes.
/// Analytic: equal magnitudes `theta_k^2 = r^2 / (2K)`, checked for
/// membership in the ellipsoid.
pub fn solve_extremal_with_bandwidth(
    space: &FunctionSpace,
    r: f64,
    eps: f64,
    bandwidth: usize,
) -> Result<ExtremalProfile> {
    check_positive("radius", r)?;
    check_positive("eps", eps)?;
    if bandwidth == 0 || bandwidth > MAX_BANDWIDTH {
        return Err(Error::domain(format!(
            "bandwidth must lie in 1..={MAX_BANDWIDTH}, got {bandwidth}"
        )));
    }
    let shares = match space.kind {
        SpaceKind::Sobolev => {
            let c2: Vec<f64> = (1..=bandwidth).map(|k| space.semi_axis_sq(k)).collect();
            let budget = 1.0 / (r * r);
            if c2[0] > budget * (1.0 + FEASIBILITY_SLACK) {
                return Err(Error::Infeasible {
                    radius: r,
                    limit: space.max_radius(),
                });
            }
            water_fill(&c2, budget)
        }
        SpaceKind::Analytic => vec![0.5 / bandwidth as f64; bandwidth],
    };
    let profile = ExtremalProfile::from_shares(*space, r, eps, &shares);
    if profile.ellipsoid_load() > 1.0 + FEASIBILITY_SLACK {
        return Err(Error::Infeasible {
            radius: r,
            limit: space.max_radius(),
        });
    }
    Ok(profile)
}

/// Minimize `sum q_k^2` subject to `2 sum q_k = 1`, `2 sum c2_k q_k <= budget`,
/// `q >= 0`, assuming `c2` is increasing and `c2[0] <= budget`.
fn water_fill(c2: &[f64], budget: f64) -> Vec<f64> {
    let n = c2.len();
    let mean_c2 = c2.iter().sum::<f64>() / n as f64;
    if mean_c2 <= budget {
        return vec![0.5 / n as f64; n];
    }

    // With the ellipsoid active, q_k = a - b c2_k on an active prefix 1..=m:
    //   m a - S1 b = 1/2,  S1 a - S2 b = budget / 2.
    let (mut s1, mut s2) = (c2[0], c2[0] * c2[0]);
    for m in 2..=n {
        let c = c2[m - 1];
        s1 += c;
        s2 += c * c;
        let mf = m as f64;
        let det = mf * s2 - s1 * s1;
        if det <= 0.0 {
            continue;
        }
        let a = (s2 - s1 * budget) / (2.0 * det);
        let b = (s1 - mf * budget) / (2.0 * det);
        let last = a - b * c;
        let next_clipped = m == n || a - b * c2[m] <= 0.0;
        if b >= 0.0 && last > 0.0 && next_clipped {
            let mut q: Vec<f64> = c2.iter().map(|c| (a - b * c).max(0.0)).collect();
            q[m..].iter_mut().for_each(|x| *x = 0.0);
            return q;
        }
    }
    // Only the first pair fits.
    let mut q = vec![0.0; n];
    q[0] = 0.5;
    q
}

/// Invert `r -> u_exact(solve_extremal(space, r, eps))` at `target`.
///
/// The bracket starts at the asymptotic guess and expands geometrically;
/// bisection then runs on `log r`. Analytic `u` jumps where the bandwidth
/// changes; a target inside such a jump resolves to the smallest radius
/// whose `u` exceeds it.
pub fn invert_u(space: &FunctionSpace, eps: f64, target: f64) -> Result<f64> {
    check_positive("eps", eps)?;
    if !(target.is_finite() && target > 0.0) {
        return Err(Error::domain(format!("target u must be positive, got {target}")));
    }
    let u_at = |r: f64| solve_extremal(space, r, eps).map(|p| p.u);
    let r_max = space.max_radius();

    let guess = asymptotic_radius(space, eps, target).min(r_max);
    let (mut lo, mut hi) = (guess, guess);
    while u_at(lo)? >= target {
        lo *= 0.5;
        if lo < f64::MIN_POSITIVE {
            return Err(Error::NoConvergence(format!("no radius below u = {target}")));
        }
    }
    while u_at(hi)? < target {
        if hi >= r_max {
            return Err(Error::domain(format!(
                "target u = {target} is not reached below the feasibility limit r = {r_max:e}"
            )));
        }
        hi = (hi * 2.0).min(r_max);
    }

    for _ in 0..INVERT_MAX_ITER {
        if hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            break;
        }
        let mid = lo * (hi / lo).sqrt();
        if !(mid > lo && mid < hi) {
            break;
        }
        if u_at(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }

    let u_hi = u_at(hi)?;
    if (u_hi - target).abs() <= INVERT_TOL * target {
        return Ok(hi);
    }
    let converged = hi / lo - 1.0 <= 1e-12;
    if converged && space.kind == SpaceKind::Analytic && space.bandwidth(lo)? != space.bandwidth(hi)? {
        return Ok(hi);
    }
    Err(Error::NoConvergence(format!(
        "bisection stalled at r = {hi:e} with u = {u_hi} (target {target})"
    )))
}

fn asymptotic_radius(space: &FunctionSpace, eps: f64, target: f64) -> f64 {
    let s = space.sigma;
    match space.kind {
        SpaceKind::Sobolev => {
            let c = c_sigma(s).unwrap_or(1.0);
            (target * eps * eps / c).powf(1.0 / (2.0 + 1.0 / (2.0 * s)))
        }
        SpaceKind::Analytic => {
            // Fixed point of r = eps * sqrt(target * sqrt(log(1/r) / (2 pi sigma))).
            let mut r = eps.min(0.5);
            for _ in 0..8 {
                let log_inv = (-r.ln()).max(1.0);
                r = eps * (target * (log_inv / (2.0 * PI * s)).sqrt()).sqrt();
            }
            r
        }
    }
}

/// Brute-force verification oracle for the extreme problem.
///
/// Works on the support `1 <= |k| <= min(k_cap, K_eps(r))` and maximizes the
/// concave Lagrange dual over the two multipliers: `lambda` (the l2
/// constraint) is solved exactly for every `mu`, `mu` (the ellipsoid) is
/// located on a dense logarithmic grid and then refined by bisection on the
/// dual derivative. Shares the problem statement with [`solve_extremal`]
/// but no code path.
pub fn oracle_extremal(space: &FunctionSpace, r: f64, eps: f64, k_cap: usize) -> Result<ExtremalProfile> {
    check_positive("radius", r)?;
    check_positive("eps", eps)?;
    if !(1..=16).contains(&k_cap) {
        return Err(Error::domain(format!(
            "oracle support cap must lie in 1..=16, got {k_cap}"
        )));
    }
    let k = k_cap.min(space.bandwidth(r)?);
    let c2: Vec<f64> = (1..=k).map(|j| space.semi_axis_sq(j)).collect();
    let budget = 1.0 / (r * r);
    if c2[0] > budget * (1.0 + FEASIBILITY_SLACK) {
        return Err(Error::Infeasible {
            radius: r,
            limit: space.max_radius(),
        });
    }
    let shares = DualProblem { c2: &c2, budget }.solve();
    let profile = ExtremalProfile::from_shares(*space, r, eps, &shares);
    if profile.ellipsoid_load() > 1.0 + 1e-6 {
        return Err(Error::Infeasible {
            radius: r,
            limit: space.max_radius(),
        });
    }
    Ok(profile)
}

struct DualProblem<'a> {
    c2: &'a [f64],
    budget: f64,
}

impl DualProblem<'_> {
    const GRID: usize = 4000;

    /// l2 multiplier solving `sum_k (lambda - mu c2_k)_+ = 1`.
    fn lambda(&self, mu: f64) -> f64 {
        let base = mu * self.c2[0];
        let (mut lo, mut hi) = (base, base + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let mass: f64 = self.c2.iter().map(|c| (mid - mu * c).max(0.0)).sum();
            if mass < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn shares(&self, mu: f64) -> Vec<f64> {
        let lambda = self.lambda(mu);
        self.c2.iter().map(|c| 0.5 * (lambda - mu * c).max(0.0)).collect()
    }

    fn dual(&self, mu: f64) -> f64 {
        let lambda = self.lambda(mu);
        let quad: f64 = self.c2.iter().map(|c| (lambda - mu * c).max(0.0).powi(2)).sum();
        lambda - mu * self.budget - 0.5 * quad
    }

    /// Derivative of the dual in `mu`: ellipsoid load minus budget.
    fn slope(&self, mu: f64) -> f64 {
        let q = self.shares(mu);
        2.0 * self.c2.iter().zip(&q).map(|(c, q)| c * q).sum::<f64>() - self.budget
    }

    fn solve(&self) -> Vec<f64> {
        let n = self.c2.len();
        if n == 1 || self.slope(0.0) <= 0.0 {
            return self.shares(0.0);
        }
        // Past mu_max only the first pair is active.
        let mu_max = 1.0 / (self.c2[1] - self.c2[0]);
        let grid: Vec<f64> = std::iter::once(0.0)
            .chain((0..Self::GRID).map(|i| mu_max * 10f64.powf(-12.0 + 12.0 * i as f64 / (Self::GRID - 1) as f64)))
            .collect();
        let best = grid
            .iter()
            .map(|&mu| self.dual(mu))
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, v)| if v > acc.1 { (i, v) } else { acc },
            );
        let mut lo = grid[best.0.saturating_sub(1)];
        let mut hi = grid[(best.0 + 1).min(grid.len() - 1)];
        if self.slope(hi) > 0.0 {
            return self.shares(hi);
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.slope(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.shares(hi)
    }
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}
