//! Fixed-step classical Runge-Kutta (RK4) integration of the model ODEs,
//! sampled on an observation grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{infected_indices, ModelKind, ModelParams, ModelState};

/// Largest state dimension of any model.
const MAX_DIM: usize = 10;

/// Relative (to N) size of a negative excursion that is silently clamped.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    /// Start time in hours.
    pub t0: f64,
    /// Spacing between observations in hours.
    pub dt_obs: f64,
    pub n_obs: usize,
    /// RK4 steps per observation interval.
    pub substeps: usize,
}

impl TimeGrid {
    pub const DEFAULT_SUBSTEPS: usize = 10;

    pub fn new(t0: f64, dt_obs: f64, n_obs: usize, substeps: usize) -> Result<Self> {
        let grid = TimeGrid { t0, dt_obs, n_obs, substeps };
        grid.validate()?;
        Ok(grid)
    }

    /// Hourly grid starting at zero with the default number of substeps.
    pub fn hourly(n_obs: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n_obs, Self::DEFAULT_SUBSTEPS)
    }

    pub fn with_substeps(self, substeps: usize) -> Result<Self> {
        Self::new(self.t0, self.dt_obs, self.n_obs, substeps)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.t0.is_finite() {
            return Err(Error::invalid("t0 must be finite"));
        }
        if !(self.dt_obs.is_finite() && self.dt_obs > 0.0) {
            return Err(Error::invalid(format!("dt_obs must be > 0, got {}", self.dt_obs)));
        }
        if self.n_obs < 2 {
            return Err(Error::invalid(format!("n_obs must be >= 2, got {}", self.n_obs)));
        }
        if self.substeps == 0 {
            return Err(Error::invalid("substeps must be >= 1"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        self.dt_obs / self.substeps as f64
    }

    pub fn time(&self, j: usize) -> f64 {
        self.t0 + self.dt_obs * j as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.n_obs).map(|j| self.time(j)).collect()
    }
}

/// Model states at every observation time, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.n_obs
    }

    pub fn is_empty(&self) -> bool {
        self.grid.n_obs == 0
    }

    pub fn state(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Time series of one compartment.
    pub fn compartment(&self, index: usize) -> Vec<f64> {
        self.states().map(|s| s[index]).collect()
    }
}

/// Integrate `params` from `initial` over `grid`.
///
/// After every RK4 step, negative entries no larger than
/// `CLAMP_TOLERANCE * n` are set to zero and the mass is taken back from S
/// so the population stays constant. Larger excursions are reported as
/// [`Error::Stiffness`].
pub fn integrate(params: &ModelParams, initial: &ModelState, n: f64, grid: &TimeGrid) -> Result<Trajectory> {
    let kind = params.kind();
    let dim = kind.dimension();
    params.validate()?;
    grid.validate()?;
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::invalid(format!("population size must be finite and > 0, got {n}")));
    }
    let x0 = initial.as_slice();
    if x0.len() != dim {
        return Err(Error::invalid(format!("{kind} initial state needs {dim} entries, got {}", x0.len())));
    }
    if x0.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::invalid("initial state must be finite and non-negative"));
    }
    let total: f64 = x0.iter().sum();
    if (total - n).abs() > CLAMP_TOLERANCE * n {
        return Err(Error::invalid(format!("initial state sums to {total}, expected N = {n}")));
    }

    let inv_n = 1.0 / n;
    let h = grid.step();
    let clamp_limit = CLAMP_TOLERANCE * n;

    let mut data = Vec::with_capacity(dim * grid.n_obs);
    data.extend_from_slice(x0);

    let mut x = [0.0; MAX_DIM];
    x[..dim].copy_from_slice(x0);
    let mut k1 = [0.0; MAX_DIM];
    let mut k2 = [0.0; MAX_DIM];
    let mut k3 = [0.0; MAX_DIM];
    let mut k4 = [0.0; MAX_DIM];
    let mut tmp = [0.0; MAX_DIM];

    for j in 1..grid.n_obs {
        for sub in 0..grid.substeps {
            params.rhs_unchecked(&x[..dim], inv_n, &mut k1[..dim]);
            for d in 0..dim {
                tmp[d] = x[d] + 0.5 * h * k1[d];
            }
            params.rhs_unchecked(&tmp[..dim], inv_n, &mut k2[..dim]);
            for d in 0..dim {
                tmp[d] = x[d] + 0.5 * h * k2[d];
            }
            params.rhs_unchecked(&tmp[..dim], inv_n, &mut k3[..dim]);
            for d in 0..dim {
                tmp[d] = x[d] + h * k3[d];
            }
            params.rhs_unchecked(&tmp[..dim], inv_n, &mut k4[..dim]);
            for d in 0..dim {
                x[d] += h / 6.0 * (k1[d] + 2.0 * (k2[d] + k3[d]) + k4[d]);
            }

            let t = grid.time(j - 1) + h * (sub + 1) as f64;
            clamp_step(&mut x[..dim], clamp_limit, t)?;
        }
        data.extend_from_slice(&x[..dim]);
    }

    Ok(Trajectory { grid: *grid, dim, data })
}

fn clamp_step(x: &mut [f64], limit: f64, t: f64) -> Result<()> {
    let mut deficit = 0.0;
    for (d, v) in x.iter_mut().enumerate() {
        if !v.is_finite() {
            return Err(Error::Divergence { time: t });
        }
        if *v < 0.0 {
            if -*v > limit {
                return Err(Error::Stiffness { compartment: d, time: t, value: *v });
            }
            deficit += *v;
            *v = 0.0;
        }
    }
    if deficit < 0.0 {
        // S normally absorbs the correction; fall back to the largest pool
        // when S itself is the near-empty one.
        let target = if x[0] + deficit >= 0.0 {
            0
        } else {
            x.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        x[target] += deficit;
    }
    Ok(())
}

/// Infected compartment(s) at the observation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfectedSeries {
    pub total: Vec<f64>,
    /// Per-activity series (CD-SEIZ only).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub channels: Option<[Vec<f64>; 3]>,
}

pub fn infected_series(trajectory: &Trajectory, kind: ModelKind) -> InfectedSeries {
    let idx = infected_indices(kind);
    match kind {
        ModelKind::Sis | ModelKind::Seiz => InfectedSeries {
            total: trajectory.compartment(idx[0]),
            channels: None,
        },
        ModelKind::CdSeiz => {
            let channels = [
                trajectory.compartment(idx[0]),
                trajectory.compartment(idx[1]),
                trajectory.compartment(idx[2]),
            ];
            let total = (0..trajectory.len())
                .map(|j| channels[0][j] + channels[1][j] + channels[2][j])
                .collect();
            InfectedSeries { total, channels: Some(channels) }
        }
    }
}
