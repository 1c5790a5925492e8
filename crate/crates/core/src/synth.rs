//! Stochastic ground truth: exact (Gillespie direct-method) simulation of the
//! agent-level SEIZ / CD-SEIZ process, emitting tweet-event logs whose
//! parameters are known.
//!
//! Every term of the ODE right-hand side becomes one reaction channel with
//! the same rate expression, so the ensemble mean follows the ODE for large
//! populations. Each transition into `I` emits an event of the channel's
//! activity type, attached to a uniformly chosen earlier participant of the
//! same cascade. The first seed of channel 0 is the root tweet; further
//! seeds are reactions at `t = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{Action, ActivitySeries, Timestamp, TweetEvent, SECONDS_PER_HOUR};
use crate::error::{Error, Result};
use crate::fitting::initial_state;
use crate::integrator::{infected_series, integrate, InfectedSeries, TimeGrid};
use crate::models::{Activity, CdSeizParams, ModelKind, ModelParams, SeizParams};

/// 2018-04-01T00:00:00Z
pub const DEFAULT_EPOCH: Timestamp = Timestamp(1_522_540_800);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub params: ModelParams,
    pub n_agents: u64,
    /// Initial infected per channel (one entry for SEIZ, three for CD-SEIZ).
    pub i0: Vec<u64>,
    pub horizon_hours: u32,
    pub seed: u64,
    pub n_cascades: usize,
    /// Relative half-width of a per-cascade multiplicative perturbation of
    /// every parameter (0 = identical parameters for all cascades).
    #[serde(default)]
    pub param_jitter: f64,
    /// Timestamp of every root.
    #[serde(default = "default_epoch")]
    pub epoch: Timestamp,
}

fn default_epoch() -> Timestamp {
    DEFAULT_EPOCH
}

impl SynthConfig {
    pub fn new(params: ModelParams, i0: Vec<u64>) -> Self {
        SynthConfig {
            params,
            n_agents: 20_000,
            i0,
            horizon_hours: 48,
            seed: 0,
            n_cascades: 1,
            param_jitter: 0.0,
            epoch: DEFAULT_EPOCH,
        }
    }

    pub fn model(&self) -> ModelKind {
        self.params.kind()
    }

    pub fn validate(&self) -> Result<()> {
        let channels = match self.model() {
            ModelKind::Seiz => 1,
            ModelKind::CdSeiz => 3,
            ModelKind::Sis => return Err(Error::Config("synthetic cascades need a SEIZ or CD-SEIZ model".into())),
        };
        self.params.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.i0.len() != channels {
            return Err(Error::Config(format!("{} needs {channels} initial counts, got {}", self.model(), self.i0.len())));
        }
        if self.i0[0] == 0 {
            return Err(Error::Config("the retweet channel needs at least one seed (the root)".into()));
        }
        let seeded: u64 = self.i0.iter().sum();
        if seeded >= self.n_agents {
            return Err(Error::Config(format!("n_agents ({}) must exceed the seeded total ({seeded})", self.n_agents)));
        }
        if self.horizon_hours < 8 {
            return Err(Error::Config(format!("horizon must be at least 8 hours, got {}", self.horizon_hours)));
        }
        if !(0.0..1.0).contains(&self.param_jitter) {
            return Err(Error::Config("param_jitter must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// Initial infected per CD-SEIZ channel, padded with zeros for SEIZ.
    fn seeds(&self) -> [u64; 3] {
        let mut s = [0; 3];
        s[..self.i0.len()].copy_from_slice(&self.i0);
        s
    }

    pub fn cascade_id(index: usize) -> String {
        format!("c{index:05}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCascade {
    pub index: usize,
    pub root_id: String,
    pub events: Vec<TweetEvent>,
    pub true_params: ModelParams,
    /// Compartment counts at every whole hour `0..=horizon`, in the model's
    /// state layout.
    pub hourly_state: Vec<Vec<u64>>,
}

impl SynthCascade {
    /// Infected count (all channels) at each hour.
    pub fn infected(&self, kind: ModelKind) -> Vec<u64> {
        let idx = crate::models::infected_indices(kind);
        self.hourly_state.iter().map(|s| idx.iter().map(|&i| s[i]).sum()).collect()
    }
}

/// Sidecar entry describing the truth behind one synthetic cascade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub cascade_id: String,
    pub params: ModelParams,
    pub n_agents: u64,
    pub i0: Vec<u64>,
    pub seed: u64,
    pub stream: u64,
}

impl SynthCascade {
    pub fn truth(&self, config: &SynthConfig) -> TruthRecord {
        TruthRecord {
            cascade_id: self.root_id.clone(),
            params: self.true_params,
            n_agents: config.n_agents,
            i0: config.i0.clone(),
            seed: config.seed,
            stream: self.index as u64,
        }
    }
}

pub fn simulate_stochastic(config: &SynthConfig) -> Result<Vec<SynthCascade>> {
    config.validate()?;
    (0..config.n_cascades)
        .into_par_iter()
        .map(|index| simulate_one(config, index))
        .collect()
}

fn jittered(params: &ModelParams, jitter: f64, rng: &mut ChaCha8Rng) -> ModelParams {
    if jitter == 0.0 {
        return *params;
    }
    let mut j = |v: f64| v * (1.0 + jitter * (2.0 * rng.gen::<f64>() - 1.0));
    match params {
        ModelParams::Seiz(p) => ModelParams::Seiz(SeizParams {
            beta: j(p.beta),
            b: j(p.b),
            rho: j(p.rho),
            epsilon: j(p.epsilon),
            p: j(p.p).clamp(0.0, 1.0),
            l: j(p.l).clamp(0.0, 1.0),
        }),
        ModelParams::CdSeiz(p) => ModelParams::CdSeiz(CdSeizParams {
            beta: j(p.beta),
            b: j(p.b),
            rho: j(p.rho),
            epsilon: j(p.epsilon),
            p: p.p.map(|v| j(v).clamp(0.0, 1.0)),
            l: p.l.map(|v| j(v).clamp(0.0, 1.0)),
        }),
        ModelParams::Sis(_) => *params,
    }
}

fn channel_params(params: &ModelParams) -> [SeizParams; 3] {
    match params {
        ModelParams::Seiz(p) => {
            let idle = SeizParams { beta: 0.0, b: 0.0, rho: 0.0, epsilon: 0.0, ..*p };
            [*p, idle, idle]
        }
        ModelParams::CdSeiz(p) => [p.channel(0), p.channel(1), p.channel(2)],
        ModelParams::Sis(_) => unreachable!("validated"),
    }
}

/// Reactions per channel, in order: S->I (contact with I), S->E (contact
/// with I), S->Z (contact with Z), S->E (contact with Z), E->I (contact
/// with I), E->I (incubation).
const REACTIONS: usize = 6;

fn simulate_one(config: &SynthConfig, index: usize) -> Result<SynthCascade> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let params = jittered(&config.params, config.param_jitter, &mut rng);
    let channels = channel_params(&params);
    let kind = config.model();
    let n = config.n_agents as f64;
    let horizon = config.horizon_hours as f64;
    let seeds = config.seeds();
    let root_id = SynthConfig::cascade_id(index);
    let root_ts = config.epoch;

    // s, then (e, i, z) per channel.
    let mut s = config.n_agents - seeds.iter().sum::<u64>();
    let mut eiz = [[0u64; 3]; 3];
    for k in 0..3 {
        eiz[k][1] = seeds[k];
    }

    let mut events = Vec::new();
    let mut participants: Vec<usize> = Vec::new();
    let mut seq = 0usize;
    let mut emit = |events: &mut Vec<TweetEvent>, participants: &mut Vec<usize>, action: Action, t: f64, rng: &mut ChaCha8Rng| {
        let id = if seq == 0 { root_id.clone() } else { format!("{root_id}-{seq:06}") };
        let parent_id = if action == Action::Root {
            None
        } else {
            let pick = participants[rng.gen_range(0..participants.len())];
            Some(events_id(&root_id, pick))
        };
        events.push(TweetEvent {
            id,
            user_id: format!("u{index}-{seq}"),
            ts: root_ts.plus_seconds((t * SECONDS_PER_HOUR as f64).floor() as i64),
            action,
            parent_id,
        });
        participants.push(seq);
        seq += 1;
    };

    emit(&mut events, &mut participants, Action::Root, 0.0, &mut rng);
    for k in 0..3 {
        let extra = if k == 0 { seeds[0] - 1 } else { seeds[k] };
        for _ in 0..extra {
            emit(&mut events, &mut participants, Action::from(Activity::ALL[k]), 0.0, &mut rng);
        }
    }

    let snapshot = |s: u64, eiz: &[[u64; 3]; 3]| -> Vec<u64> {
        match kind {
            ModelKind::Seiz => vec![s, eiz[0][0], eiz[0][1], eiz[0][2]],
            _ => std::iter::once(s).chain(eiz.iter().flatten().copied()).collect(),
        }
    };
    let mut hourly = vec![snapshot(s, &eiz)];

    let mut t = 0.0;
    let mut rates = [0.0f64; 3 * REACTIONS];
    loop {
        let sf = s as f64;
        for k in 0..3 {
            let p = &channels[k];
            let (e, i, z) = (eiz[k][0] as f64, eiz[k][1] as f64, eiz[k][2] as f64);
            let si = p.beta * sf * i / n;
            let sz = p.b * sf * z / n;
            let r = &mut rates[k * REACTIONS..(k + 1) * REACTIONS];
            r[0] = p.p * si;
            r[1] = (1.0 - p.p) * si;
            r[2] = p.l * sz;
            r[3] = (1.0 - p.l) * sz;
            r[4] = p.rho * e * i / n;
            r[5] = p.epsilon * e;
        }
        let total: f64 = rates.iter().sum();
        if !total.is_finite() {
            return Err(Error::Config(format!("non-finite propensity in cascade {index}")));
        }
        let next_t = if total > 0.0 {
            t + -(1.0 - rng.gen::<f64>()).ln() / total
        } else {
            f64::INFINITY
        };
        while (hourly.len() as f64) <= horizon && next_t > hourly.len() as f64 {
            hourly.push(snapshot(s, &eiz));
        }
        if next_t > horizon {
            break;
        }
        t = next_t;

        let mut pick = rng.gen::<f64>() * total;
        let mut chosen = rates.len() - 1;
        for (r, &rate) in rates.iter().enumerate() {
            if pick < rate {
                chosen = r;
                break;
            }
            pick -= rate;
        }
        // Guard against picking an empty channel through rounding at the tail.
        while rates[chosen] == 0.0 {
            chosen -= 1;
        }
        let (k, r) = (chosen / REACTIONS, chosen % REACTIONS);
        match r {
            0 => {
                s -= 1;
                eiz[k][1] += 1;
            }
            1 | 3 => {
                s -= 1;
                eiz[k][0] += 1;
            }
            2 => {
                s -= 1;
                eiz[k][2] += 1;
            }
            _ => {
                eiz[k][0] -= 1;
                eiz[k][1] += 1;
            }
        }
        if matches!(r, 0 | 4 | 5) {
            emit(&mut events, &mut participants, Action::from(Activity::ALL[k]), t, &mut rng);
        }
    }

    Ok(SynthCascade { index, root_id, events, true_params: params, hourly_state: hourly })
}

fn events_id(root_id: &str, seq: usize) -> String {
    if seq == 0 {
        root_id.to_string()
    } else {
        format!("{root_id}-{seq:06}")
    }
}

/// Deterministic counterpart of [`simulate_stochastic`]: the ODE solution
/// from the same initial state.
pub fn mean_field(config: &SynthConfig, substeps: usize) -> Result<InfectedSeries> {
    config.validate()?;
    let kind = config.model();
    let seeds: Vec<f64> = match kind {
        ModelKind::Seiz => vec![config.i0[0] as f64],
        _ => config.i0.iter().map(|&v| v as f64).collect(),
    };
    let n = config.n_agents as f64;
    let grid = TimeGrid::new(0.0, 1.0, config.horizon_hours as usize + 1, substeps)?;
    let traj = integrate(&config.params, &initial_state(kind, &seeds, n), n, &grid)?;
    Ok(infected_series(&traj, kind))
}

/// Noise-free fit target: the mean-field infected curve(s) rounded to whole
/// users. SEIZ curves are reported as retweets.
pub fn noiseless_target(config: &SynthConfig) -> Result<ActivitySeries> {
    let series = mean_field(config, TimeGrid::DEFAULT_SUBSTEPS)?;
    let round = |v: &Vec<f64>| -> Vec<u64> { v.iter().map(|x| x.round() as u64).collect() };
    let len = series.total.len();
    let channels = match &series.channels {
        Some(ch) => [round(&ch[0]), round(&ch[1]), round(&ch[2])],
        None => [round(&series.total), vec![0; len], vec![0; len]],
    };
    ActivitySeries::from_channels(config.epoch, channels)
}
