//! Compartmental models of information spread: SIS, SEIZ and the
//! per-activity CD-SEIZ variant.
//!
//! State layouts (people-units, continuous):
//!
//! | model  | layout                                              |
//! |--------|-----------------------------------------------------|
//! | SIS    | `[S, I]`                                            |
//! | SEIZ   | `[S, E, I, Z]`                                      |
//! | CD-SEIZ| `[S, E0, I0, Z0, E1, I1, Z1, E2, I2, Z2]`           |
//!
//! Channel `k` of CD-SEIZ is the activity with [`Activity::index`] `k`
//! (0 = retweet, 1 = quote, 2 = reply). All rates are per hour.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The three reaction channels. Quote and mention share one channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Retweet,
    Quote,
    Reply,
}

impl Activity {
    pub const ALL: [Activity; 3] = [Activity::Retweet, Activity::Quote, Activity::Reply];

    pub fn index(self) -> usize {
        match self {
            Activity::Retweet => 0,
            Activity::Quote => 1,
            Activity::Reply => 2,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Retweet => "retweet",
            Activity::Quote => "quote",
            Activity::Reply => "reply",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sis,
    Seiz,
    CdSeiz,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Sis, ModelKind::Seiz, ModelKind::CdSeiz];

    /// Length of the compartment state vector.
    pub fn dimension(self) -> usize {
        match self {
            ModelKind::Sis => 2,
            ModelKind::Seiz => 4,
            ModelKind::CdSeiz => 10,
        }
    }

    /// Number of rate/probability parameters (population size excluded).
    pub fn n_params(self) -> usize {
        match self {
            ModelKind::Sis => 2,
            ModelKind::Seiz => 6,
            ModelKind::CdSeiz => 10,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Sis => "sis",
            ModelKind::Seiz => "seiz",
            ModelKind::CdSeiz => "cdseiz",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sis" => Ok(ModelKind::Sis),
            "seiz" => Ok(ModelKind::Seiz),
            "cdseiz" => Ok(ModelKind::CdSeiz),
            other => Err(Error::invalid(format!("unknown model {other:?}"))),
        }
    }
}

pub fn model_dimension(kind: ModelKind) -> usize {
    kind.dimension()
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() || v < 0.0 {
        return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
    }
    Ok(())
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} must lie in [0, 1], got {v}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisParams {
    pub beta: f64,
    pub lambda: f64,
}

impl SisParams {
    pub fn new(beta: f64, lambda: f64) -> Result<Self> {
        let p = SisParams { beta, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate("beta", self.beta)?;
        check_rate("lambda", self.lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeizParams {
    /// S-I contact rate.
    pub beta: f64,
    /// S-Z contact rate.
    pub b: f64,
    /// E-I contact rate.
    pub rho: f64,
    /// Incubation rate E -> I.
    pub epsilon: f64,
    /// Probability that an S-I contact moves S directly to I (else to E).
    pub p: f64,
    /// Probability that an S-Z contact moves S to Z (else to E).
    pub l: f64,
}

impl SeizParams {
    pub fn validate(&self) -> Result<()> {
        check_rate("beta", self.beta)?;
        check_rate("b", self.b)?;
        check_rate("rho", self.rho)?;
        check_rate("epsilon", self.epsilon)?;
        check_prob("p", self.p)?;
        check_prob("l", self.l)
    }
}

/// CD-SEIZ shares the contact and incubation rates across activities and
/// varies only the transition probabilities, indexed by [`Activity::index`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdSeizParams {
    pub beta: f64,
    pub b: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub p: [f64; 3],
    pub l: [f64; 3],
}

impl CdSeizParams {
    pub fn validate(&self) -> Result<()> {
        check_rate("beta", self.beta)?;
        check_rate("b", self.b)?;
        check_rate("rho", self.rho)?;
        check_rate("epsilon", self.epsilon)?;
        for k in 0..3 {
            check_prob(&format!("p{k}"), self.p[k])?;
            check_prob(&format!("l{k}"), self.l[k])?;
        }
        Ok(())
    }

    /// The single-activity SEIZ system seen by channel `k`.
    pub fn channel(&self, k: usize) -> SeizParams {
        SeizParams {
            beta: self.beta,
            b: self.b,
            rho: self.rho,
            epsilon: self.epsilon,
            p: self.p[k],
            l: self.l[k],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelParams {
    Sis(SisParams),
    Seiz(SeizParams),
    CdSeiz(CdSeizParams),
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Sis(_) => ModelKind::Sis,
            ModelParams::Seiz(_) => ModelKind::Seiz,
            ModelParams::CdSeiz(_) => ModelKind::CdSeiz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelParams::Sis(p) => p.validate(),
            ModelParams::Seiz(p) => p.validate(),
            ModelParams::CdSeiz(p) => p.validate(),
        }
    }

    /// Checked right-hand side. `out` must have the model's dimension.
    pub fn rhs(&self, state: &[f64], n: f64, out: &mut [f64]) -> Result<()> {
        let dim = self.kind().dimension();
        if state.len() != dim || out.len() != dim {
            return Err(Error::invalid(format!(
                "{} state must have length {dim}, got {}",
                self.kind(),
                state.len()
            )));
        }
        check_inputs(state, n)?;
        self.validate()?;
        self.rhs_unchecked(state, 1.0 / n, out);
        Ok(())
    }

    /// Derivative without validation; `inv_n` is `1 / N`.
    #[inline]
    pub(crate) fn rhs_unchecked(&self, state: &[f64], inv_n: f64, out: &mut [f64]) {
        match self {
            ModelParams::Sis(p) => sis_deriv(state, p, inv_n, out),
            ModelParams::Seiz(p) => seiz_deriv(state, p, inv_n, out),
            ModelParams::CdSeiz(p) => cdseiz_deriv(state, p, inv_n, out),
        }
    }
}

/// Compartment populations at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelState(pub Vec<f64>);

impl ModelState {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// `[S, I]`.
    pub fn sis(s: f64, i: f64) -> Self {
        ModelState(vec![s, i])
    }

    /// `[S, E, I, Z]`.
    pub fn seiz(s: f64, e: f64, i: f64, z: f64) -> Self {
        ModelState(vec![s, e, i, z])
    }

    /// `S` followed by one `(E, I, Z)` triple per activity.
    pub fn cdseiz(s: f64, channels: [[f64; 3]; 3]) -> Self {
        let mut v = Vec::with_capacity(10);
        v.push(s);
        for c in channels {
            v.extend_from_slice(&c);
        }
        ModelState(v)
    }
}

/// Index of the infected compartment(s) for a model.
pub fn infected_indices(kind: ModelKind) -> &'static [usize] {
    match kind {
        ModelKind::Sis => &[1],
        ModelKind::Seiz => &[2],
        ModelKind::CdSeiz => &[2, 5, 8],
    }
}

fn check_inputs(state: &[f64], n: f64) -> Result<()> {
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::invalid(format!("population size must be finite and > 0, got {n}")));
    }
    if let Some(x) = state.iter().find(|x| !x.is_finite()) {
        return Err(Error::invalid(format!("non-finite state entry {x}")));
    }
    Ok(())
}

pub fn sis_rhs(state: &[f64], params: &SisParams, n: f64) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    ModelParams::Sis(*params).rhs(state, n, &mut out)?;
    Ok(out)
}

pub fn seiz_rhs(state: &[f64], params: &SeizParams, n: f64) -> Result<[f64; 4]> {
    let mut out = [0.0; 4];
    ModelParams::Seiz(*params).rhs(state, n, &mut out)?;
    Ok(out)
}

pub fn cdseiz_rhs(state: &[f64], params: &CdSeizParams, n: f64) -> Result<[f64; 10]> {
    let mut out = [0.0; 10];
    ModelParams::CdSeiz(*params).rhs(state, n, &mut out)?;
    Ok(out)
}

#[inline]
fn sis_deriv(x: &[f64], p: &SisParams, inv_n: f64, out: &mut [f64]) {
    let (s, i) = (x[0], x[1]);
    let flow = p.beta * s * i * inv_n - p.lambda * i * inv_n;
    out[0] = -flow;
    out[1] = flow;
}

/// One SEIZ block sharing the susceptible pool `s`. Writes `(dE, dI, dZ)`
/// and returns the drain on S.
#[inline]
fn seiz_block(s: f64, e: f64, i: f64, z: f64, p: &SeizParams, inv_n: f64, out: &mut [f64]) -> f64 {
    let si = p.beta * s * i * inv_n;
    let sz = p.b * s * z * inv_n;
    let ei = p.rho * e * i * inv_n;
    let incubation = p.epsilon * e;
    out[0] = (1.0 - p.p) * si + (1.0 - p.l) * sz - ei - incubation;
    out[1] = p.p * si + ei + incubation;
    out[2] = p.l * sz;
    si + sz
}

#[inline]
fn seiz_deriv(x: &[f64], p: &SeizParams, inv_n: f64, out: &mut [f64]) {
    let drain = seiz_block(x[0], x[1], x[2], x[3], p, inv_n, &mut out[1..4]);
    out[0] = -drain;
}

#[inline]
fn cdseiz_deriv(x: &[f64], p: &CdSeizParams, inv_n: f64, out: &mut [f64]) {
    let s = x[0];
    let mut drain = 0.0;
    for k in 0..3 {
        let o = 1 + 3 * k;
        let channel = p.channel(k);
        drain += seiz_block(s, x[o], x[o + 1], x[o + 2], &channel, inv_n, &mut out[o..o + 3]);
    }
    out[0] = -drain;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn dimensions() {
        assert_eq!(model_dimension(ModelKind::Sis), 2);
        assert_eq!(model_dimension(ModelKind::Seiz), 4);
        assert_eq!(model_dimension(ModelKind::CdSeiz), 10);
    }

    #[test]
    fn sis_examples() {
        let p = SisParams::new(0.5, 0.1).unwrap();
        assert_eq!(sis_rhs(&[100.0, 0.0], &p, 100.0).unwrap(), [0.0, 0.0]);
        let zero = SisParams::new(0.0, 0.0).unwrap();
        assert_eq!(sis_rhs(&[90.0, 10.0], &zero, 100.0).unwrap(), [0.0, 0.0]);
        let d = sis_rhs(&[90.0, 10.0], &p, 100.0).unwrap();
        assert!(close(&d, &[-4.49, 4.49], 1e-12), "{d:?}");
    }

    #[test]
    fn seiz_examples() {
        let any = SeizParams { beta: 0.7, b: 0.3, rho: 0.2, epsilon: 0.4, p: 0.5, l: 0.5 };
        assert_eq!(seiz_rhs(&[100.0, 0.0, 0.0, 0.0], &any, 100.0).unwrap(), [0.0; 4]);

        let direct = SeizParams { beta: 1.0, b: 1.0, rho: 0.0, epsilon: 0.0, p: 1.0, l: 1.0 };
        let d = seiz_rhs(&[90.0, 5.0, 5.0, 0.0], &direct, 100.0).unwrap();
        assert!(close(&d, &[-4.5, 0.0, 4.5, 0.0], 1e-12), "{d:?}");

        // Hand-evaluated: SI/N = 4, SZ/N = 4, EI/N = 0.5.
        let p = SeizParams { beta: 0.8, b: 0.4, rho: 0.2, epsilon: 0.1, p: 0.3, l: 0.6 };
        let d = seiz_rhs(&[80.0, 10.0, 5.0, 5.0], &p, 100.0).unwrap();
        assert!(close(&d, &[-4.8, 1.78, 2.06, 0.96], 1e-12), "{d:?}");
    }

    #[test]
    fn cdseiz_matches_seiz_per_channel() {
        let shared = SeizParams { beta: 0.9, b: 0.35, rho: 0.15, epsilon: 0.25, p: 0.4, l: 0.7 };
        let cd = CdSeizParams {
            beta: shared.beta,
            b: shared.b,
            rho: shared.rho,
            epsilon: shared.epsilon,
            p: [shared.p; 3],
            l: [shared.l; 3],
        };
        let (s, e, i, z) = (700.0, 40.0, 60.0, 10.0);
        let state = ModelState::cdseiz(s, [[e, i, z]; 3]);
        let d = cdseiz_rhs(state.as_slice(), &cd, 1000.0).unwrap();
        let single = seiz_rhs(&[s, e, i, z], &shared, 1000.0).unwrap();
        for k in 0..3 {
            assert!(close(&d[1 + 3 * k..4 + 3 * k], &single[1..4], 1e-12));
        }
        assert!((d[0] - 3.0 * single[0]).abs() < 1e-12);
    }

    #[test]
    fn cdseiz_degenerates_to_seiz() {
        let cd = CdSeizParams {
            beta: 0.6,
            b: 0.2,
            rho: 0.3,
            epsilon: 0.05,
            p: [0.8, 0.3, 0.1],
            l: [0.25, 0.5, 0.9],
        };
        let state = ModelState::cdseiz(900.0, [[30.0, 50.0, 20.0], [0.0; 3], [0.0; 3]]);
        let d = cdseiz_rhs(state.as_slice(), &cd, 1000.0).unwrap();
        let single = seiz_rhs(&[900.0, 30.0, 50.0, 20.0], &cd.channel(0), 1000.0).unwrap();
        let mut embedded = [0.0; 10];
        embedded[..4].copy_from_slice(&single);
        assert!(close(&d, &embedded, 1e-12), "{d:?}");
        assert_eq!(cdseiz_rhs(&ModelState::cdseiz(10.0, [[0.0; 3]; 3]).0, &cd, 10.0).unwrap(), [0.0; 10]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = SisParams { beta: 0.5, lambda: 0.0 };
        assert!(sis_rhs(&[f64::NAN, 1.0], &p, 10.0).is_err());
        assert!(sis_rhs(&[1.0, 1.0], &p, f64::INFINITY).is_err());
        assert!(sis_rhs(&[1.0, 1.0], &p, 0.0).is_err());
        assert!(SisParams::new(-1.0, 0.0).is_err());
        let bad = SeizParams { beta: 0.1, b: 0.1, rho: 0.1, epsilon: 0.1, p: 1.5, l: 0.0 };
        assert!(seiz_rhs(&[1.0, 0.0, 0.0, 0.0], &bad, 1.0).is_err());
        assert!(seiz_rhs(&[1.0, 0.0], &SeizParams { p: 0.5, ..bad }, 1.0).is_err());
    }

    #[test]
    fn model_kind_parses() {
        assert_eq!("CD-SEIZ".parse::<ModelKind>().unwrap(), ModelKind::CdSeiz);
        assert_eq!("sis".parse::<ModelKind>().unwrap(), ModelKind::Sis);
        assert!("sir".parse::<ModelKind>().is_err());
    }
}
