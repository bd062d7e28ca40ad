use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;
use sparse_select::ellipsoids::{solve_extremal, u_asymptotic, u_exact};
use sparse_select::risk::{bayes_lower_bound, mc_risk, phase_sweep, tail_check};
use sparse_select::selectors::{
    almost_full_target, almost_full_threshold, default_schedules, exact_target, exact_threshold, r_star_almost_full,
    r_star_exact,
};
use sparse_select::{ExperimentSpec, FunctionSpace, RiskReport, SelectorConfig, SelectorKind, SignMode, SpaceKind};

use crate::error::CliError;
use crate::output::{real, to_json, Artifact};

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceArg {
    Sobolev,
    Analytic,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorArg {
    AlmostFull,
    Exact,
    Lepski,
    AdaptiveExact,
}

impl From<SelectorArg> for SelectorKind {
    fn from(s: SelectorArg) -> Self {
        match s {
            SelectorArg::AlmostFull => SelectorKind::AlmostFull,
            SelectorArg::Exact => SelectorKind::Exact,
            SelectorArg::Lepski => SelectorKind::LepskiAdaptive,
            SelectorArg::AdaptiveExact => SelectorKind::AdaptiveExact,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    AlmostFull,
    Exact,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SignArg {
    Rademacher,
    Fixed,
}

/// Function class flags shared by every command.
#[derive(Debug, Clone, Args, Serialize)]
pub struct SpaceFlags {
    #[arg(long, value_enum)]
    pub space: SpaceArg,
    /// Smoothness sigma.
    #[arg(long)]
    pub sigma: f64,
}

impl SpaceFlags {
    fn build(&self) -> Result<FunctionSpace, CliError> {
        let kind = match self.space {
            SpaceArg::Sobolev => SpaceKind::Sobolev,
            SpaceArg::Analytic => SpaceKind::Analytic,
        };
        Ok(FunctionSpace::new(kind, self.sigma)?)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ExtremalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub space: SpaceFlags,
    /// l2 radius r.
    #[arg(long)]
    pub r: f64,
    /// Noise level.
    #[arg(long)]
    pub eps: f64,
    /// Write JSON here (plus a manifest) instead of stdout.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn extremal(args: &ExtremalArgs) -> Result<Artifact, CliError> {
    let space = args.space.build()?;
    let p = solve_extremal(&space, args.r, args.eps)?;
    let doc = json!({
        "space": args.space.space,
        "sigma": args.space.sigma,
        "r": args.r,
        "eps": args.eps,
        "K": p.bandwidth(),
        "active_len": p.active_len(),
        "theta_star": p.theta_star(),
        "u_exact": u_exact(&p),
        "u_asymptotic": u_asymptotic(&space, args.r, args.eps).ok(),
        "omega": p.omega(),
        "constraint_residuals": {
            "l2": p.l2_norm_sq() / (args.r * args.r) - 1.0,
            "ellipsoid": p.ellipsoid_load() - 1.0,
            "omega_norm": p.omega_norm_sq() - 0.5,
        },
    });
    artifact("extremal", args, None, &doc)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundaryArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub space: SpaceFlags,
    #[arg(long)]
    pub eps: f64,
    /// Number of components.
    #[arg(long)]
    pub d: usize,
    /// Number of active components.
    #[arg(long)]
    pub s: usize,
    #[arg(long, value_enum)]
    pub mode: BoundaryMode,
    /// Threshold slack; defaults to (log d)^(-1/2).
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn boundary(args: &BoundaryArgs) -> Result<Artifact, CliError> {
    let space = args.space.build()?;
    let (d, s) = (args.d, args.s);
    if !(1 <= s && s < d) {
        return Err(sparse_select::Error::Domain(format!("need 1 <= s < d, got s = {s}, d = {d}")).into());
    }
    let delta = match args.delta {
        Some(v) => v,
        None => default_schedules(d)?.delta,
    };
    let sf = s as f64;
    let (target_u, r_star, threshold) = match args.mode {
        BoundaryMode::AlmostFull => (
            almost_full_target(d, sf)?,
            r_star_almost_full(&space, args.eps, d, sf)?,
            almost_full_threshold(d, sf, delta)?,
        ),
        BoundaryMode::Exact => (
            exact_target(d, sf)?,
            r_star_exact(&space, args.eps, d, sf)?,
            exact_threshold(d, delta)?,
        ),
    };
    let doc = json!({
        "mode": args.mode,
        "space": args.space.space,
        "sigma": args.space.sigma,
        "eps": args.eps,
        "d": d,
        "s": s,
        "delta": delta,
        "target_u": target_u,
        "r_star": r_star,
        "K": space.bandwidth(r_star)?,
        "threshold": threshold,
    });
    artifact("boundary", args, None, &doc)
}

/// Flags describing a Monte Carlo risk experiment.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ExperimentFlags {
    #[arg(long, value_enum)]
    pub selector: SelectorArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub space: SpaceFlags,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub s: usize,
    #[arg(long)]
    pub eps: f64,
    #[arg(long, default_value_t = 200)]
    pub reps: usize,
    /// Master seed; drawn from entropy when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Threshold slack; defaults to (log d)^(-1/2).
    #[arg(long)]
    pub delta: Option<f64>,
    /// Lepski slack divisor; defaults to (log d)^(1/2).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, value_enum, default_value_t = SignArg::Rademacher)]
    pub signs: SignArg,
}

impl ExperimentFlags {
    fn build(&self, rho: f64, seed: u64) -> Result<ExperimentSpec, CliError> {
        let defaults = SelectorConfig::defaults(self.d)?;
        let config = SelectorConfig::new(
            self.delta.unwrap_or(defaults.delta),
            self.tau.unwrap_or(defaults.tau),
            defaults.grid,
        )?;
        let spec = ExperimentSpec {
            space: self.space.build()?,
            d: self.d,
            s: self.s,
            eps: self.eps,
            rho,
            selector: self.selector.into(),
            config,
            sign_mode: match self.signs {
                SignArg::Rademacher => SignMode::Rademacher,
                SignArg::Fixed => SignMode::Fixed,
            },
            reps: self.reps,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub experiment: ExperimentFlags,
    /// Signal radius as a multiple of the detection boundary.
    #[arg(long)]
    pub rho: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn simulate(args: &SimulateArgs) -> Result<Artifact, CliError> {
    let seed = resolve_seed(args.experiment.seed);
    let report = mc_risk(&args.experiment.build(args.rho, seed)?)?;
    let (lo, hi) = report.ci95();
    let doc = json!({
        "selector": report.spec.selector.name(),
        "rho": args.rho,
        "d": report.spec.d,
        "s": report.spec.s,
        "eps": report.spec.eps,
        "delta": report.spec.config.delta,
        "tau": report.spec.config.tau,
        "grid": report.spec.config.grid.points(),
        "reps": report.reps,
        "seed": seed,
        "r_star": report.r_star,
        "signal_radius": report.signal_radius,
        "mean_norm_risk": report.mean_normalized_risk,
        "std_err": report.std_error,
        "ci95": [lo, hi],
        "mean_hamming": report.mean_hamming(),
        "hamming_counts": report.hamming_counts,
    });
    artifact("simulate", args, Some(seed), &doc)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SweepArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub experiment: ExperimentFlags,
    /// Comma-separated signal radii as multiples of the detection boundary.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rhos: Vec<f64>,
    /// CSV output path; the manifest goes to `<out>.manifest.json`.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "rho",
    "selector",
    "d",
    "s",
    "eps",
    "sigma",
    "reps",
    "mean_norm_risk",
    "std_err",
    "seed",
];

pub fn sweep(args: &SweepArgs) -> Result<Artifact, CliError> {
    let seed = resolve_seed(args.experiment.seed);
    let template = args.experiment.build(1.0, seed)?;
    let rows = phase_sweep(&template, &args.rhos)?;
    let bytes = sweep_csv(&rows, args.experiment.space.sigma).map_err(|e| CliError::Io {
        context: "formatting CSV".into(),
        source: e.into(),
    })?;
    Ok(Artifact {
        command: "sweep",
        params: params(args, Some(seed))?,
        seed: Some(seed),
        bytes,
    })
}

fn sweep_csv(rows: &[(f64, RiskReport)], sigma: f64) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(SWEEP_HEADER)?;
    for (rho, r) in rows {
        w.write_record([
            real(*rho),
            r.spec.selector.name().to_string(),
            r.spec.d.to_string(),
            r.spec.s.to_string(),
            real(r.spec.eps),
            real(sigma),
            r.reps.to_string(),
            real(r.mean_normalized_risk),
            real(r.std_error),
            r.spec.seed.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| e.into_error().into())
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct LowerBoundArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub space: SpaceFlags,
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub s: usize,
    #[arg(long)]
    pub eps: f64,
    /// Signal radius as a multiple of the almost-full boundary.
    #[arg(long)]
    pub rho: f64,
    #[arg(long, default_value_t = 10_000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn lower_bound(args: &LowerBoundArgs) -> Result<Artifact, CliError> {
    let space = args.space.build()?;
    let seed = resolve_seed(args.seed);
    let lb = bayes_lower_bound(&space, args.d, args.s, args.eps, args.rho, args.reps, seed)?;
    let doc = json!({
        "d": args.d,
        "s": args.s,
        "eps": args.eps,
        "rho": args.rho,
        "reps": lb.reps,
        "seed": seed,
        "log_boundary": lb.log_boundary,
        "a_hat": lb.a_hat,
        "b_hat": lb.b_hat,
        "risk_lb_hat": lb.risk_lb_hat,
    });
    artifact("lower-bound", args, Some(seed), &doc)
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TailsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub space: SpaceFlags,
    /// Radius of the extremal profile.
    #[arg(long)]
    pub r: f64,
    #[arg(long)]
    pub eps: f64,
    /// Comma-separated nonpositive tail points, e.g. `--t=-1,-2,-3`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required = true)]
    pub t: Vec<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub reps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

pub fn tails(args: &TailsArgs) -> Result<Artifact, CliError> {
    let space = args.space.build()?;
    let seed = resolve_seed(args.seed);
    let profile = solve_extremal(&space, args.r, args.eps)?;
    let rows = tail_check(&profile, &args.t, args.reps, seed)?;
    let doc = json!({
        "K": profile.bandwidth(),
        "reps": args.reps,
        "seed": seed,
        "rows": rows,
    });
    artifact("tails", args, Some(seed), &doc)
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

/// The parsed flags, with an entropy-drawn seed filled in.
fn params<T: Serialize>(args: &T, seed: Option<u64>) -> Result<serde_json::Value, CliError> {
    let mut v = serde_json::to_value(args).map_err(|e| CliError::Io {
        context: "recording parameters".into(),
        source: e.into(),
    })?;
    if let (Some(seed), Some(obj)) = (seed, v.as_object_mut()) {
        obj.insert("seed".into(), seed.into());
    }
    Ok(v)
}

fn artifact<T: Serialize>(
    command: &'static str,
    args: &T,
    seed: Option<u64>,
    doc: &serde_json::Value,
) -> Result<Artifact, CliError> {
    Ok(Artifact {
        command,
        params: params(args, seed)?,
        seed,
        bytes: to_json(doc)?,
    })
}
