//! Parameter estimation: fit a compartmental model (and its population size)
//! to an observed cumulative activity series by minimising the relative L2
//! error with multi-start bounded Nelder-Mead.
//!
//! Parameter vectors are packed as
//!
//! | model  | layout                                             |
//! |--------|----------------------------------------------------|
//! | SIS    | `[beta, lambda, N]`                                |
//! | SEIZ   | `[beta, b, rho, epsilon, p, l, N]`                 |
//! | CD-SEIZ| `[beta, b, rho, epsilon, p0, p1, p2, l0, l1, l2, N]` |
//!
//! Initial conditions come from the first observation: `I(0)` is the first
//! cumulative count (per activity for CD-SEIZ), `E(0) = Z(0) = 0` and
//! `S(0) = N - I(0)`. A series whose first bin is empty is seeded with a
//! single infected user so the dynamics can start.

mod lhs;
pub mod nelder_mead;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::ActivitySeries;
use crate::error::{Error, Result};
use crate::integrator::{infected_series, integrate, InfectedSeries, TimeGrid};
use crate::metrics::{fit_error, mean_deviation};
use crate::models::{Activity, CdSeizParams, ModelKind, ModelParams, ModelState, SeizParams, SisParams};

pub use lhs::latin_hypercube;
pub use nelder_mead::{NelderMeadOptions, NelderMeadResult};

/// Position of `N` in every packed vector is last.
pub fn param_names(kind: ModelKind) -> &'static [&'static str] {
    match kind {
        ModelKind::Sis => &["beta", "lambda", "n"],
        ModelKind::Seiz => &["beta", "b", "rho", "epsilon", "p", "l", "n"],
        ModelKind::CdSeiz => &["beta", "b", "rho", "epsilon", "p0", "p1", "p2", "l0", "l1", "l2", "n"],
    }
}

pub fn is_probability(name: &str) -> bool {
    matches!(name, "p" | "p0" | "p1" | "p2" | "l" | "l0" | "l1" | "l2")
}

pub fn theta_len(kind: ModelKind) -> usize {
    kind.n_params() + 1
}

pub fn pack(params: &ModelParams, n: f64) -> Vec<f64> {
    let mut theta = match params {
        ModelParams::Sis(p) => vec![p.beta, p.lambda],
        ModelParams::Seiz(p) => vec![p.beta, p.b, p.rho, p.epsilon, p.p, p.l],
        ModelParams::CdSeiz(p) => {
            let mut v = vec![p.beta, p.b, p.rho, p.epsilon];
            v.extend_from_slice(&p.p);
            v.extend_from_slice(&p.l);
            v
        }
    };
    theta.push(n);
    theta
}

pub fn unpack(kind: ModelKind, theta: &[f64]) -> Result<(ModelParams, f64)> {
    if theta.len() != theta_len(kind) {
        return Err(Error::invalid(format!(
            "{kind} parameter vector needs {} entries, got {}",
            theta_len(kind),
            theta.len()
        )));
    }
    let t = theta;
    let params = match kind {
        ModelKind::Sis => ModelParams::Sis(SisParams { beta: t[0], lambda: t[1] }),
        ModelKind::Seiz => ModelParams::Seiz(SeizParams { beta: t[0], b: t[1], rho: t[2], epsilon: t[3], p: t[4], l: t[5] }),
        ModelKind::CdSeiz => ModelParams::CdSeiz(CdSeizParams {
            beta: t[0],
            b: t[1],
            rho: t[2],
            epsilon: t[3],
            p: [t[4], t[5], t[6]],
            l: [t[7], t[8], t[9]],
        }),
    };
    Ok((params, t[t.len() - 1]))
}

/// Box constraints on a packed parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Coordinates searched on a cubic scale (rates and `N`): most of the
    /// search effort then goes to the low end of a wide range, where slow
    /// hourly rates and barely-saturated populations live.
    pub cubic: Vec<bool>,
}

impl Bounds {
    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.lo.len() && theta.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *l <= *x && *x <= *h)
    }

    /// Map unit coordinates into the box.
    fn from_unit(&self, u: &[f64], out: &mut [f64]) {
        for (k, x) in out.iter_mut().enumerate() {
            let (lo, hi) = (self.lo[k], self.hi[k]);
            *x = if self.cubic[k] {
                lo + (hi - lo) * u[k].powi(3)
            } else {
                lo + u[k] * (hi - lo)
            };
            *x = x.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub model: ModelKind,
    /// Upper bound on every rate parameter (per hour).
    pub rate_cap: f64,
    /// Explicit `[lo, hi]` for the rate/probability parameters, in packed
    /// order without `N`. Defaults to `[0, rate_cap]` and `[0, 1]`.
    pub param_bounds: Option<Vec<[f64; 2]>>,
    /// Upper bound of `N` as a multiple of the final observed total.
    pub n_upper_factor: f64,
    pub n_starts: usize,
    /// Objective evaluations allowed per start.
    pub max_evals: usize,
    pub xtol: f64,
    pub ftol: f64,
    pub seed: u64,
    pub substeps: usize,
    /// Shortest series accepted for fitting.
    pub min_points: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            model: ModelKind::Seiz,
            rate_cap: 10.0,
            param_bounds: None,
            n_upper_factor: 100.0,
            n_starts: 32,
            max_evals: 2000,
            xtol: 1e-6,
            ftol: 1e-8,
            seed: 0,
            substeps: TimeGrid::DEFAULT_SUBSTEPS,
            min_points: 8,
        }
    }
}

impl FitConfig {
    pub fn for_model(model: ModelKind) -> Self {
        FitConfig { model, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_cap.is_finite() && self.rate_cap > 0.0) {
            return Err(Error::Config(format!("rate_cap must be > 0, got {}", self.rate_cap)));
        }
        if !(self.n_upper_factor.is_finite() && self.n_upper_factor >= 1.0) {
            return Err(Error::Config("n_upper_factor must be >= 1".into()));
        }
        if self.n_starts == 0 || self.max_evals == 0 || self.substeps == 0 {
            return Err(Error::Config("n_starts, max_evals and substeps must be positive".into()));
        }
        if let Some(bounds) = &self.param_bounds {
            let names = &param_names(self.model)[..self.model.n_params()];
            if bounds.len() != names.len() {
                return Err(Error::Config(format!(
                    "{} bounds expected for {}, got {}",
                    names.len(),
                    self.model,
                    bounds.len()
                )));
            }
            for (name, [lo, hi]) in names.iter().zip(bounds) {
                let ok = lo.is_finite() && hi.is_finite() && lo <= hi && *lo >= 0.0;
                let ok = ok && (!is_probability(name) || *hi <= 1.0);
                if !ok {
                    return Err(Error::Config(format!("invalid bounds [{lo}, {hi}] for {name}")));
                }
            }
        }
        Ok(())
    }

    /// Search box for `target`.
    pub fn bounds(&self, target: &ActivitySeries) -> Result<Bounds> {
        self.validate()?;
        let names = param_names(self.model);
        let mut lo = Vec::with_capacity(names.len());
        let mut hi = Vec::with_capacity(names.len());
        let mut cubic = Vec::with_capacity(names.len());
        for (k, name) in names[..self.model.n_params()].iter().enumerate() {
            let [l, h] = match &self.param_bounds {
                Some(b) => b[k],
                None if is_probability(name) => [0.0, 1.0],
                None => [0.0, self.rate_cap],
            };
            lo.push(l);
            hi.push(h);
            cubic.push(!is_probability(name));
        }
        let seeds = initial_infected(self.model, target);
        let i0: f64 = seeds.iter().sum();
        let last = target.final_total() as f64;
        let n_lo = last.max(i0 + 1.0);
        lo.push(n_lo);
        hi.push((self.n_upper_factor * last).max(n_lo));
        cubic.push(true);
        Ok(Bounds { lo, hi, cubic })
    }
}

/// Initial infected count per channel (one entry for SIS/SEIZ).
pub fn initial_infected(kind: ModelKind, target: &ActivitySeries) -> Vec<f64> {
    match kind {
        ModelKind::Sis | ModelKind::Seiz => vec![(target.total[0] as f64).max(1.0)],
        ModelKind::CdSeiz => Activity::ALL
            .iter()
            .map(|&a| {
                let c = target.channel(a);
                let first = c[0] as f64;
                if first == 0.0 && c.last().copied().unwrap_or(0) > 0 {
                    1.0
                } else {
                    first
                }
            })
            .collect(),
    }
}

pub fn initial_state(kind: ModelKind, seeds: &[f64], n: f64) -> ModelState {
    let infected: f64 = seeds.iter().sum();
    let s = n - infected;
    match kind {
        ModelKind::Sis => ModelState::sis(s, seeds[0]),
        ModelKind::Seiz => ModelState::seiz(s, 0.0, seeds[0], 0.0),
        ModelKind::CdSeiz => ModelState::cdseiz(s, [[0.0, seeds[0], 0.0], [0.0, seeds[1], 0.0], [0.0, seeds[2], 0.0]]),
    }
}

/// Precomputed pieces of the objective for one target.
struct Problem {
    kind: ModelKind,
    grid: TimeGrid,
    seeds: Vec<f64>,
    total: Vec<f64>,
    channels: Option<[Vec<f64>; 3]>,
    /// Squared norm of whatever the objective compares against.
    target_norm_sq: f64,
}

impl Problem {
    fn new(target: &ActivitySeries, kind: ModelKind, substeps: usize) -> Result<Self> {
        let total = target.total_f64();
        if total.iter().all(|v| *v == 0.0) {
            return Err(Error::DegenerateTarget);
        }
        let grid = TimeGrid::new(0.0, 1.0, target.n_obs(), substeps)?;
        let channels = (kind == ModelKind::CdSeiz).then(|| Activity::ALL.map(|a| target.channel_f64(a)));
        let target_norm_sq = match &channels {
            Some(ch) => ch.iter().flatten().map(|v| v * v).sum(),
            None => total.iter().map(|v| v * v).sum(),
        };
        Ok(Problem { kind, grid, seeds: initial_infected(kind, target), total, channels, target_norm_sq })
    }

    fn simulate(&self, theta: &[f64]) -> Result<(ModelParams, f64, ModelState, InfectedSeries)> {
        let (params, n) = unpack(self.kind, theta)?;
        let init = initial_state(self.kind, &self.seeds, n);
        let traj = integrate(&params, &init, n, &self.grid)?;
        Ok((params, n, init, infected_series(&traj, self.kind)))
    }

    fn residual(&self, series: &InfectedSeries) -> f64 {
        let sq = |m: &[f64], t: &[f64]| m.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let r = match (&self.channels, &series.channels) {
            (Some(target), Some(model)) => (0..3).map(|k| sq(&model[k], &target[k])).sum(),
            _ => sq(&series.total, &self.total),
        };
        (r / self.target_norm_sq).sqrt()
    }

    /// Objective with integration failures mapped to `+inf`.
    fn value(&self, theta: &[f64]) -> f64 {
        match self.simulate(theta) {
            Ok((_, _, _, series)) => {
                let v = self.residual(&series);
                if v.is_nan() {
                    f64::INFINITY
                } else {
                    v
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

/// Relative L2 misfit of the model given by `theta` against `target`.
/// SIS and SEIZ compare the total series; CD-SEIZ compares the three
/// activity series stacked end to end.
pub fn objective(theta: &[f64], target: &ActivitySeries, config: &FitConfig) -> Result<f64> {
    let problem = Problem::new(target, config.model, config.substeps)?;
    let bounds = config.bounds(target)?;
    if !bounds.contains(theta) {
        return Err(Error::invalid("parameter vector lies outside the search box"));
    }
    Ok(problem.value(theta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub params: ModelParams,
    pub n_fit: f64,
    pub theta: Vec<f64>,
    pub initial_state: ModelState,
    /// Relative L2 error of the total infected curve.
    pub error: f64,
    /// Mean absolute deviation of the total infected curve.
    pub mean_deviation: f64,
    /// Minimised objective (equals `error` except for CD-SEIZ).
    pub objective: f64,
    pub trajectory: InfectedSeries,
    pub n_evals: usize,
    pub converged: Vec<bool>,
    pub best_start_index: usize,
}

impl FitResult {
    pub const CSV_HEADER: &'static str = "model,error,mean_deviation,objective,n_fit,n_evals,best_start_index,converged_starts,theta";

    pub fn csv_row(&self) -> String {
        let theta: Vec<String> = self.theta.iter().map(|v| v.to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.model,
            self.error,
            self.mean_deviation,
            self.objective,
            self.n_fit,
            self.n_evals,
            self.best_start_index,
            self.converged.iter().filter(|c| **c).count(),
            theta.join(";")
        )
    }
}

/// Outcome of a single multi-start run, kept for diagnostics.
#[derive(Debug, Clone)]
pub struct StartOutcome {
    pub theta: Vec<f64>,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
    pub best_history: Vec<f64>,
}

fn run_starts(problem: &Problem, bounds: &Bounds, config: &FitConfig) -> Vec<StartOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts = latin_hypercube(config.n_starts, bounds.lo.len(), &mut rng);
    let opts = NelderMeadOptions { max_evals: config.max_evals, xtol: config.xtol, ftol: config.ftol };
    starts
        .par_iter()
        .map(|u0| {
            let mut theta = vec![0.0; u0.len()];
            let r = nelder_mead::minimize(
                |u: &[f64]| {
                    bounds.from_unit(u, &mut theta);
                    problem.value(&theta)
                },
                u0,
                &opts,
            );
            let mut best = vec![0.0; u0.len()];
            bounds.from_unit(&r.x, &mut best);
            StartOutcome { theta: best, value: r.f, evals: r.evals, converged: r.converged, best_history: r.best_history }
        })
        .collect()
}

/// Fit `config.model` to `target`. Deterministic for a given seed; ties
/// between starts go to the lowest start index.
pub fn fit(target: &ActivitySeries, config: &FitConfig) -> Result<FitResult> {
    fit_detailed(target, config).map(|(r, _)| r)
}

/// [`fit`] plus the per-start outcomes.
pub fn fit_detailed(target: &ActivitySeries, config: &FitConfig) -> Result<(FitResult, Vec<StartOutcome>)> {
    config.validate()?;
    if target.n_obs() < config.min_points {
        return Err(Error::invalid(format!(
            "series has {} points; at least {} are needed to fit",
            target.n_obs(),
            config.min_points
        )));
    }
    if target.final_total() == 0 {
        return Err(Error::DegenerateTarget);
    }
    let problem = Problem::new(target, config.model, config.substeps)?;
    let bounds = config.bounds(target)?;
    let outcomes = run_starts(&problem, &bounds, config);

    let (best_index, best) = outcomes
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value).then(a.0.cmp(&b.0)))
        .expect("at least one start");
    if !best.value.is_finite() {
        return Err(Error::FitFailed(format!(
            "all {} starts of the {} fit hit integration failures (box lo={:?}, hi={:?})",
            outcomes.len(),
            config.model,
            bounds.lo,
            bounds.hi
        )));
    }

    let (params, n_fit, initial_state, trajectory) = problem.simulate(&best.theta)?;
    let result = FitResult {
        model: config.model,
        params,
        n_fit,
        theta: best.theta.clone(),
        initial_state,
        error: fit_error(&trajectory.total, &problem.total)?,
        mean_deviation: mean_deviation(&trajectory.total, &problem.total)?,
        objective: best.value,
        trajectory,
        n_evals: outcomes.iter().map(|o| o.evals).sum(),
        converged: outcomes.iter().map(|o| o.converged).collect(),
        best_start_index: best_index,
    };
    Ok((result, outcomes))
}
