//! Finite-state Markov model of a Rayleigh block-fading channel.
//!
//! The envelope is quantized into `L` intervals chosen so that the channel
//! spends the same average time in each one. Time is measured in transport
//! blocks: only neighbouring states are reachable from one block to the next.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::config::{db_to_linear, linear_to_db};
use crate::error::{Error, Result};
use crate::markov::{TransitionMatrix, ROW_TOLERANCE};

/// Transport-block duration used when only the normalized Doppler is given.
pub const DEFAULT_BLOCK_DURATION_S: f64 = 0.14e-3;

const MAX_ITERATIONS: usize = 10_000;
const DURATION_TOLERANCE: f64 = 1e-9;

/// Expected number of crossings per second of envelope level `eta`.
pub fn level_crossing_rate(eta: f64, doppler_hz: f64) -> f64 {
    if eta.is_infinite() {
        return 0.0;
    }
    (2.0 * PI).sqrt() * eta * doppler_hz * (-eta * eta).exp()
}

fn tail(eta: f64) -> f64 {
    if eta.is_infinite() {
        0.0
    } else {
        (-eta * eta).exp()
    }
}

/// Probability that the unit-power Rayleigh envelope lies in `[eta_lo, eta_hi)`.
pub fn state_marginal(eta_lo: f64, eta_hi: f64) -> Result<f64> {
    check_interval(eta_lo, eta_hi)?;
    Ok(tail(eta_lo) - tail(eta_hi))
}

/// Mean SNR conditioned on the envelope lying in `[eta_lo, eta_hi)`.
pub fn state_snr(eta_lo: f64, eta_hi: f64, snr_avg: f64) -> Result<f64> {
    check_interval(eta_lo, eta_hi)?;
    let upper = if eta_hi.is_infinite() {
        0.0
    } else {
        tail(eta_hi) * (eta_hi * eta_hi + 1.0)
    };
    let numerator = tail(eta_lo) * (eta_lo * eta_lo + 1.0) - upper;
    Ok(snr_avg * numerator / (tail(eta_lo) - tail(eta_hi)))
}

fn check_interval(lo: f64, hi: f64) -> Result<()> {
    if !(lo >= 0.0) || !(lo < hi) || lo.is_infinite() {
        return Err(Error::InvalidInterval { lo, hi });
    }
    Ok(())
}

/// Average time spent in `[lo, hi)` per visit, in units of `1/f_D`.
fn normalized_duration(lo: f64, hi: f64) -> f64 {
    let crossings = level_crossing_rate(lo, 1.0) + level_crossing_rate(hi, 1.0);
    if crossings == 0.0 {
        return f64::INFINITY;
    }
    (tail(lo) - tail(hi)) / crossings
}

/// Physical parameters of the fading channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadingSpec {
    pub doppler_hz: f64,
    pub block_duration_s: f64,
    pub bandwidth_hz: f64,
    /// Average SNR, linear.
    pub snr_avg: f64,
    pub states: usize,
}

impl FadingSpec {
    /// Builds a spec from the normalized Doppler `f_D t_TB` and the blocklength,
    /// using a fixed transport-block duration.
    pub fn from_normalized(
        doppler_block: f64,
        blocklength: u32,
        snr_avg: f64,
        states: usize,
    ) -> Self {
        let t = DEFAULT_BLOCK_DURATION_S;
        FadingSpec {
            doppler_hz: doppler_block / t,
            block_duration_s: t,
            bandwidth_hz: f64::from(blocklength) / t,
            snr_avg,
            states,
        }
    }

    /// Normalized Doppler `f_D t_TB`.
    pub fn doppler_block(&self) -> f64 {
        self.doppler_hz * self.block_duration_s
    }

    /// Symbols per transport block, `B t_TB` rounded.
    pub fn blocklength(&self) -> u32 {
        (self.bandwidth_hz * self.block_duration_s).round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{what}={v} must be positive")))
            }
        };
        positive(self.doppler_hz, "doppler_hz")?;
        positive(self.block_duration_s, "block_duration_s")?;
        positive(self.bandwidth_hz, "bandwidth_hz")?;
        positive(self.snr_avg, "snr_avg")?;
        if self.states == 0 {
            return Err(Error::InvalidConfig(
                "at least one fading state is needed".into(),
            ));
        }
        if self.blocklength() == 0 {
            return Err(Error::InvalidConfig(
                "B * t_TB rounds to zero symbols".into(),
            ));
        }
        Ok(())
    }
}

/// Places thresholds above `lo`, one per remaining state, so that each state
/// lasts `target` on average. Returns `None` when the target is too long.
fn thresholds_for_duration(target: f64, states: usize) -> Option<Vec<f64>> {
    let mut edges = vec![0.0];
    for _ in 1..states {
        let lo = *edges.last().unwrap();
        if normalized_duration(lo, f64::INFINITY) <= target {
            return None;
        }
        let mut hi = lo + 1.0;
        while normalized_duration(lo, hi) < target {
            hi += 1.0;
        }
        let mut a = lo;
        let mut b = hi;
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if normalized_duration(lo, mid) < target {
                a = mid;
            } else {
                b = mid;
            }
        }
        edges.push(0.5 * (a + b));
    }
    Some(edges)
}

/// Interior thresholds `eta_2..eta_L` and the common normalized duration.
fn partition(states: usize) -> Result<(Vec<f64>, f64)> {
    if states == 0 {
        return Err(Error::InvalidConfig(
            "at least one fading state is needed".into(),
        ));
    }
    if states == 1 {
        return Ok((Vec::new(), f64::INFINITY));
    }
    let last_residual = |t: f64| {
        thresholds_for_duration(t, states)
            .map(|e| normalized_duration(*e.last().unwrap(), f64::INFINITY) - t)
    };
    let mut lo = 1e-12;
    let mut hi = 1.0;
    let mut iterations = 0;
    while hi - lo > 1e-16 * hi {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(Error::NoConvergence {
                iterations,
                residual: hi - lo,
            });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        match last_residual(mid) {
            Some(r) if r > 0.0 => lo = mid,
            _ => hi = mid,
        }
    }
    let target = lo;
    let edges = thresholds_for_duration(target, states).ok_or(Error::NoConvergence {
        iterations,
        residual: f64::NAN,
    })?;
    let durations = durations_of(&edges);
    let spread = durations
        .iter()
        .fold(0.0f64, |m, d| m.max((d - target).abs()))
        / target;
    if spread > DURATION_TOLERANCE {
        return Err(Error::NoConvergence {
            iterations,
            residual: spread,
        });
    }
    Ok((edges[1..].to_vec(), target))
}

fn durations_of(lower_edges: &[f64]) -> Vec<f64> {
    lower_edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| {
            let hi = lower_edges.get(i + 1).copied().unwrap_or(f64::INFINITY);
            normalized_duration(lo, hi)
        })
        .collect()
}

/// Interior envelope thresholds `eta_2..eta_L` of the equal-duration partition.
pub fn equal_duration_partition(spec: &FadingSpec) -> Result<Vec<f64>> {
    Ok(partition(spec.states)?.0)
}

/// Average state duration of the equal-duration partition, in units of `1/f_D`.
pub fn normalized_state_duration(states: usize) -> Result<f64> {
    Ok(partition(states)?.1)
}

/// Number of states whose equal-duration partition lasts closest to
/// `blocks_per_state` transport blocks at normalized Doppler `doppler_block`.
pub fn states_for_partition_parameter(blocks_per_state: f64, doppler_block: f64) -> Result<usize> {
    if !(blocks_per_state > 0.0) || !(doppler_block > 0.0) {
        return Err(Error::InvalidConfig(
            "partition parameter and Doppler must be positive".into(),
        ));
    }
    let mut best = (1, f64::INFINITY);
    for states in 2..=128 {
        let c = normalized_state_duration(states)? / doppler_block;
        let gap = (c - blocks_per_state).abs();
        if gap < best.1 {
            best = (states, gap);
        }
        if c < blocks_per_state {
            break;
        }
    }
    Ok(best.0)
}

/// A fully constructed finite-state Markov channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "FadingModelDoc", try_from = "FadingModelDoc")]
pub struct FadingModel {
    pub spec: FadingSpec,
    /// Lower envelope edge of each state; the top state is unbounded.
    pub thresholds: Vec<f64>,
    pub marginals: Vec<f64>,
    /// Mean SNR of each state, linear.
    pub state_snrs: Vec<f64>,
    pub transitions: TransitionMatrix,
}

/// Builds the channel model, checking that a block fits in every state.
pub fn build_fsmc(spec: &FadingSpec) -> Result<FadingModel> {
    spec.validate()?;
    let states = spec.states;
    let mut edges = vec![0.0];
    edges.extend(equal_duration_partition(spec)?);
    let upper = |l: usize| edges.get(l + 1).copied().unwrap_or(f64::INFINITY);

    let mut marginals = Vec::with_capacity(states);
    let mut state_snrs = Vec::with_capacity(states);
    for l in 0..states {
        marginals.push(state_marginal(edges[l], upper(l))?);
        state_snrs.push(state_snr(edges[l], upper(l), spec.snr_avg)?);
    }

    let t = spec.block_duration_s;
    let mut transitions = TransitionMatrix::zeros(states);
    for l in 0..states {
        let up = if l + 1 < states {
            level_crossing_rate(edges[l + 1], spec.doppler_hz) * t / marginals[l]
        } else {
            0.0
        };
        let down = if l > 0 {
            level_crossing_rate(edges[l], spec.doppler_hz) * t / marginals[l]
        } else {
            0.0
        };
        if up + down > 1.0 {
            return Err(Error::InfeasibleBlockDuration { state: l });
        }
        if l + 1 < states {
            transitions.set(l, l + 1, up);
        }
        if l > 0 {
            transitions.set(l, l - 1, down);
        }
        transitions.set(l, l, 1.0 - up - down);
    }

    Ok(FadingModel {
        spec: *spec,
        thresholds: edges,
        marginals,
        state_snrs,
        transitions,
    })
}

impl FadingModel {
    pub fn states(&self) -> usize {
        self.marginals.len()
    }

    /// Average state duration in transport blocks.
    pub fn partition_parameter(&self) -> f64 {
        let durations = durations_of(&self.thresholds);
        durations[0] / self.spec.doppler_block()
    }

    /// The same channel at another average SNR; the partition is SNR-free.
    pub fn with_snr(&self, snr_avg: f64) -> FadingModel {
        let scale = snr_avg / self.spec.snr_avg;
        FadingModel {
            spec: FadingSpec {
                snr_avg,
                ..self.spec
            },
            state_snrs: self.state_snrs.iter().map(|g| g * scale).collect(),
            ..self.clone()
        }
    }

    /// A single-state channel at a fixed SNR, i.e. an AWGN channel.
    pub fn constant(snr: f64) -> FadingModel {
        FadingModel {
            spec: FadingSpec {
                doppler_hz: 1.0,
                block_duration_s: DEFAULT_BLOCK_DURATION_S,
                bandwidth_hz: 1.0 / DEFAULT_BLOCK_DURATION_S,
                snr_avg: snr,
                states: 1,
            },
            thresholds: vec![0.0],
            marginals: vec![1.0],
            state_snrs: vec![snr],
            transitions: TransitionMatrix::identity(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.states();
        if l == 0
            || self.thresholds.len() != l
            || self.state_snrs.len() != l
            || self.transitions.size() != l
        {
            return Err(Error::InvalidConfig(
                "fading model dimensions disagree".into(),
            ));
        }
        if self.thresholds[0] != 0.0 || self.thresholds.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig(
                "thresholds must start at 0 and increase".into(),
            ));
        }
        if (self.marginals.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
            return Err(Error::InvalidConfig("marginals must sum to 1".into()));
        }
        self.transitions.check_stochastic()?;
        for i in 0..l {
            for j in 0..l {
                if i.abs_diff(j) > 1 && self.transitions.get(i, j) != 0.0 {
                    return Err(Error::InvalidConfig(
                        "transitions must be tridiagonal".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&FadingModelDoc::from(self))
            .map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<FadingModel> {
        let doc: FadingModelDoc =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        doc.try_into()
    }
}

/// External JSON form. Thresholds list all `L+1` edges with the unbounded
/// top edge written as `null`; SNRs are in dB.
#[derive(Debug, Serialize, Deserialize)]
struct FadingModelDoc {
    #[serde(rename = "f_D")]
    doppler_hz: f64,
    #[serde(rename = "t_TB")]
    block_duration_s: f64,
    #[serde(rename = "B")]
    bandwidth_hz: f64,
    snr_avg_db: f64,
    #[serde(rename = "L")]
    states: usize,
    thresholds: Vec<Option<f64>>,
    marginals: Vec<f64>,
    state_snrs_db: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

impl From<&FadingModel> for FadingModelDoc {
    fn from(m: &FadingModel) -> Self {
        let mut thresholds: Vec<Option<f64>> = m.thresholds.iter().copied().map(Some).collect();
        thresholds.push(None);
        FadingModelDoc {
            doppler_hz: m.spec.doppler_hz,
            block_duration_s: m.spec.block_duration_s,
            bandwidth_hz: m.spec.bandwidth_hz,
            snr_avg_db: linear_to_db(m.spec.snr_avg),
            states: m.states(),
            thresholds,
            marginals: m.marginals.clone(),
            state_snrs_db: m.state_snrs.iter().map(|&g| linear_to_db(g)).collect(),
            transitions: m.transitions.to_rows(),
        }
    }
}

impl From<FadingModel> for FadingModelDoc {
    fn from(m: FadingModel) -> Self {
        FadingModelDoc::from(&m)
    }
}

impl TryFrom<FadingModelDoc> for FadingModel {
    type Error = Error;

    fn try_from(doc: FadingModelDoc) -> Result<Self> {
        let mut thresholds = doc.thresholds;
        if thresholds.pop() != Some(None) || thresholds.iter().any(Option::is_none) {
            return Err(Error::InvalidConfig(
                "thresholds must be finite with a trailing null for the open top state".into(),
            ));
        }
        let model = FadingModel {
            spec: FadingSpec {
                doppler_hz: doc.doppler_hz,
                block_duration_s: doc.block_duration_s,
                bandwidth_hz: doc.bandwidth_hz,
                snr_avg: db_to_linear(doc.snr_avg_db),
                states: doc.states,
            },
            thresholds: thresholds.into_iter().flatten().collect(),
            marginals: doc.marginals,
            state_snrs: doc.state_snrs_db.iter().map(|&d| db_to_linear(d)).collect(),
            transitions: TransitionMatrix::from_rows(&doc.transitions)?,
        };
        if model.states() != doc.states {
            return Err(Error::InvalidConfig("L disagrees with marginals".into()));
        }
        model.validate()?;
        Ok(model)
    }
}
