//! N-HARQ retransmission chains over an AWGN channel.
//!
//! A state records what the previous packet still needs from the current
//! slot: nothing (`0`), its `r`-th superimposed retransmission (`r`), or
//! nothing because it failed for good (`e`). The stationary mass of `e` is
//! the packet error rate.

use serde::{Deserialize, Serialize};

use crate::config::{segment_failure, sinr, HarqConfig};
use crate::delay::DelayProfile;
use crate::error::{Error, Result};
use crate::fbl::CodeParams;
use crate::markov::{clean_probability, long_run_distribution, TransitionMatrix};

/// Tolerance of the self-consistent solve for two retransmissions.
const FIXED_POINT_TOLERANCE: f64 = 1e-12;
const FIXED_POINT_DAMPING: f64 = 0.5;
const FIXED_POINT_MAX_ITERATIONS: usize = 10_000;
pub const SELF_CONSISTENCY_TOLERANCE: f64 = 1e-10;

/// A solved retransmission chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetxMarkov {
    pub transitions: TransitionMatrix,
    /// Stationary probabilities ordered `0, 1, .., m-1, e`.
    pub stationary: Vec<f64>,
}

impl RetxMarkov {
    /// Stationary probability of permanent failure.
    pub fn per(&self) -> f64 {
        *self.stationary.last().expect("chain has states")
    }

    pub fn throughput(&self, code: &CodeParams) -> f64 {
        throughput(self.per(), code)
    }

    pub fn state_labels(&self) -> Vec<String> {
        state_labels(self.stationary.len())
    }
}

pub(crate) fn state_labels(states: usize) -> Vec<String> {
    (0..states)
        .map(|i| {
            if i + 1 == states {
                "e".to_string()
            } else {
                i.to_string()
            }
        })
        .collect()
}

/// Entry SINR of a new packet for each origin state, and the SINR of a
/// retransmission that shares its slot with a new packet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SingleRetxSinrs {
    pub entry: [f64; 3],
    pub interfered_retx: f64,
}

impl SingleRetxSinrs {
    pub fn new(alpha: f64, gamma: f64) -> Self {
        SingleRetxSinrs {
            entry: [
                gamma,
                sinr(1.0 - alpha, 0.0, gamma),
                sinr(1.0 - alpha, alpha, gamma),
            ],
            interfered_retx: sinr(alpha, 1.0 - alpha, gamma),
        }
    }
}

/// One row of the single-retransmission chain: `[to 0, to 1, to e]`.
///
/// `entry` and `clean` are the SINRs seen by the new packet over the shared
/// and the unshared part of its slot; `retx` is the SINR of its retransmission.
pub(crate) fn single_retx_row(
    cfg: &HarqConfig,
    entry: f64,
    clean: f64,
    retx: f64,
    row: usize,
) -> Result<[f64; 3]> {
    let tau = cfg.taus[0];
    let first = [(entry, tau), (clean, 1.0 - tau)];
    let fail_first = segment_failure(cfg.scheme, &cfg.code, &first)?;
    let fail_both = segment_failure(cfg.scheme, &cfg.code, &[first[0], first[1], (retx, tau)])?;
    let to_retx = clean_probability(fail_first - fail_both, row)?;
    Ok([1.0 - fail_first, to_retx, fail_both])
}

/// A stream starts with nothing pending.
fn start_state(states: usize) -> Vec<f64> {
    let mut p = vec![0.0; states];
    p[0] = 1.0;
    p
}

fn require_m(cfg: &HarqConfig, m: usize) -> Result<()> {
    cfg.validate()?;
    if cfg.m != m {
        return Err(Error::InvalidConfig(format!(
            "this chain needs m={m}, got m={}",
            cfg.m
        )));
    }
    Ok(())
}

/// Transition matrix of the chain with a single retransmission.
pub fn transition_matrix_m2(cfg: &HarqConfig) -> Result<TransitionMatrix> {
    require_m(cfg, 2)?;
    let s = SingleRetxSinrs::new(cfg.alphas[0], cfg.gamma0);
    let mut t = TransitionMatrix::zeros(3);
    for (i, &entry) in s.entry.iter().enumerate() {
        let row = single_retx_row(cfg, entry, cfg.gamma0, s.interfered_retx, i)?;
        for (j, v) in row.into_iter().enumerate() {
            t.set(i, j, v);
        }
    }
    Ok(t)
}

pub fn solve_m2(cfg: &HarqConfig) -> Result<RetxMarkov> {
    let transitions = transition_matrix_m2(cfg)?;
    let stationary = long_run_distribution(&transitions, &start_state(3))?;
    Ok(RetxMarkov {
        transitions,
        stationary,
    })
}

/// Closed-form packet error rate of a 3-state chain ordered `0, 1, e`.
///
/// Written with off-diagonal entries only, so no probability is recovered
/// as a difference from one.
pub fn per_m2_closed_form(t: &TransitionMatrix) -> Result<f64> {
    if t.size() != 3 {
        return Err(Error::InvalidConfig(format!(
            "closed form needs a 3x3 chain, got {}x{}",
            t.size(),
            t.size()
        )));
    }
    let p = |i, j| t.get(i, j);
    let leave0 = p(0, 1) + p(0, 2);
    let leave1 = p(1, 0) + p(1, 2);
    let det = p(0, 1) * p(1, 2) + p(0, 2) * p(1, 0) + p(0, 2) * p(1, 2);
    let other = p(0, 1) * p(2, 0) + p(2, 0) * leave1 + p(2, 1) * (p(1, 0) + leave0);
    let total = det + other;
    if !(total > 0.0) {
        return Err(Error::SingularChain(
            "closed-form denominator vanishes".into(),
        ));
    }
    Ok(det / total)
}

/// Every SINR that appears in the chain with two retransmissions.
///
/// `first` and `second` are the power shares of the first and second
/// retransmission; when both share a slot the first one keeps
/// `first - second`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinrCatalogM3 {
    /// Slot without superposition.
    pub clean: f64,
    /// New packet after the first retransmission in its slot was cancelled.
    pub new_beside_retx1: f64,
    /// New packet after the second retransmission in its slot was cancelled.
    pub new_beside_retx2: f64,
    /// First retransmission decoded under the new packet.
    pub retx1_under_new: f64,
    /// Second retransmission decoded under the new packet.
    pub retx2_under_new: f64,
    /// First retransmission with its reduced share, under the new packet.
    pub retx1_shared_under_new: f64,
    /// First retransmission with its reduced share, under everything else.
    pub retx1_shared_under_all: f64,
    /// New packet under an undecoded first retransmission.
    pub new_under_retx1: f64,
    /// New packet under an undecoded second retransmission.
    pub new_under_retx2: f64,
    /// New packet (first-retransmission share) under a reduced first retransmission.
    pub new_under_retx1_shared: f64,
    /// New packet (first-retransmission share) under a second retransmission.
    pub new_under_retx2_beside_retx1: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl SinrCatalogM3 {
    pub fn new(alpha1: f64, alpha2: f64, tau1: f64, tau2: f64, gamma: f64) -> Self {
        let split = alpha1 - alpha2;
        SinrCatalogM3 {
            clean: gamma,
            new_beside_retx1: sinr(1.0 - alpha1, 0.0, gamma),
            new_beside_retx2: sinr(1.0 - alpha2, 0.0, gamma),
            retx1_under_new: sinr(alpha1, 1.0 - alpha1, gamma),
            retx2_under_new: sinr(alpha2, 1.0 - alpha2, gamma),
            retx1_shared_under_new: sinr(split, 1.0 - alpha1, gamma),
            retx1_shared_under_all: sinr(split, 1.0 - split, gamma),
            new_under_retx1: sinr(1.0 - alpha1, alpha1, gamma),
            new_under_retx2: sinr(1.0 - alpha2, alpha2, gamma),
            new_under_retx1_shared: sinr(1.0 - alpha1, split, gamma),
            new_under_retx2_beside_retx1: sinr(1.0 - alpha1, alpha2, gamma),
            tau1,
            tau2,
        }
    }

    pub fn from_config(cfg: &HarqConfig) -> Self {
        Self::new(
            cfg.alphas[0],
            cfg.alphas[1],
            cfg.taus[0],
            cfg.taus[1],
            cfg.gamma0,
        )
    }

    /// Part of the slot after the first retransmission.
    pub fn rest1(&self) -> f64 {
        1.0 - self.tau1
    }

    /// Part of the slot after the second retransmission.
    pub fn rest2(&self) -> f64 {
        1.0 - self.tau2
    }

    /// Part of the first retransmission not overlapped by the second.
    pub fn tau_gap(&self) -> f64 {
        self.tau1 - self.tau2
    }

    /// Segment lists of the nested failure events of a new packet whose
    /// predecessor ended in `origin` while the packet before that ended in
    /// `middle`. States are indexed `0, 1, 2, 3 = e`.
    pub(crate) fn events(&self, origin: usize, middle: usize) -> [Vec<(f64, f64)>; 3] {
        let c = self;
        let (t1, t2, gap, r1, r2) = (c.tau1, c.tau2, c.tau_gap(), c.rest1(), c.rest2());
        let mut first: Vec<(f64, f64)> = match (origin, middle) {
            (0, _) => vec![(c.clean, t1), (c.clean, r1)],
            (1, _) => vec![(c.new_beside_retx1, t1), (c.clean, r1)],
            (2, 0) => vec![(c.new_beside_retx2, t2), (c.clean, r2)],
            (2, 1) | (2, 2) => vec![(c.new_beside_retx1, t1), (c.clean, r1)],
            (2, _) => vec![
                (c.new_under_retx1_shared, t2),
                (c.new_under_retx1, gap),
                (c.clean, r1),
            ],
            (_, 0) => vec![(c.new_under_retx2, t2), (c.clean, r2)],
            (_, 1) | (_, 2) => vec![
                (c.new_under_retx2_beside_retx1, t2),
                (c.new_beside_retx1, gap),
                (c.clean, r1),
            ],
            (_, _) => vec![(c.new_under_retx1, t1), (c.clean, r1)],
        };
        let appended = match (origin, middle) {
            (0 | 1, _) | (_, 0 | 1) => vec![(c.retx1_under_new, t1)],
            (_, 2) => vec![(c.retx1_shared_under_new, t2), (c.retx1_under_new, gap)],
            _ => vec![(c.retx1_shared_under_all, t2), (c.retx1_under_new, gap)],
        };
        first.retain(|s| s.1 > 0.0);
        let mut second = first.clone();
        second.extend(appended.into_iter().filter(|s| s.1 > 0.0));
        let mut third = second.clone();
        third.push((c.retx2_under_new, t2));
        [first, second, third]
    }
}

/// Outgoing probabilities `[0, 1, 2, e]` from nested failure probabilities.
fn nested_row(fail: [f64; 3], row: usize) -> Result<[f64; 4]> {
    Ok([
        1.0 - fail[0],
        clean_probability(fail[0] - fail[1], row)?,
        clean_probability(fail[1] - fail[2], row)?,
        fail[2],
    ])
}

/// Rows of the two-retransmission chain that do not depend on the
/// stationary mix, plus the per-middle-state rows for origins `2` and `e`.
#[derive(Debug, Clone)]
struct M3Rows {
    fixed: [[f64; 4]; 2],
    mixed: [[[f64; 4]; 4]; 2],
}

fn m3_rows(cfg: &HarqConfig) -> Result<M3Rows> {
    let cat = SinrCatalogM3::from_config(cfg);
    let fail = |lists: &[Vec<(f64, f64)>; 3]| -> Result<[f64; 3]> {
        Ok([
            segment_failure(cfg.scheme, &cfg.code, &lists[0])?,
            segment_failure(cfg.scheme, &cfg.code, &lists[1])?,
            segment_failure(cfg.scheme, &cfg.code, &lists[2])?,
        ])
    };
    let mut fixed = [[0.0; 4]; 2];
    for (origin, row) in fixed.iter_mut().enumerate() {
        *row = nested_row(fail(&cat.events(origin, 0))?, origin)?;
    }
    let mut mixed = [[[0.0; 4]; 4]; 2];
    for (slot, origin) in [2usize, 3].into_iter().enumerate() {
        for middle in 0..4 {
            mixed[slot][middle] = nested_row(fail(&cat.events(origin, middle))?, origin)?;
        }
    }
    Ok(M3Rows { fixed, mixed })
}

fn assemble_m3(rows: &M3Rows, mix: &[f64]) -> TransitionMatrix {
    let mut t = TransitionMatrix::zeros(4);
    for (i, row) in rows.fixed.iter().enumerate() {
        for j in 0..4 {
            t.set(i, j, row[j]);
        }
    }
    for (slot, origin) in [2usize, 3].into_iter().enumerate() {
        for j in 0..4 {
            let v: f64 = (0..4).map(|k| mix[k] * rows.mixed[slot][k][j]).sum();
            t.set(origin, j, v);
        }
    }
    t
}

/// Transition matrix of the chain with two retransmissions, given the
/// stationary distribution used to average over the middle packet's state.
pub fn transition_matrix_m3(cfg: &HarqConfig, mix: &[f64]) -> Result<TransitionMatrix> {
    require_m(cfg, 3)?;
    check_mix(mix)?;
    Ok(assemble_m3(&m3_rows(cfg)?, mix))
}

fn check_mix(mix: &[f64]) -> Result<()> {
    if mix.len() != 4
        || mix.iter().any(|&p| !(p >= 0.0))
        || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::InvalidConfig(format!(
            "state mix must be a distribution over 4 states, got {mix:?}"
        )));
    }
    Ok(())
}

/// Self-consistent solution of the chain with two retransmissions by damped
/// fixed-point iteration on the stationary distribution.
///
/// Near a degenerate fixed point the iteration slows to sublinear steps. When
/// the budget runs out the last iterate is still accepted if it reproduces
/// itself within [`SELF_CONSISTENCY_TOLERANCE`].
pub fn stationary_m3(cfg: &HarqConfig) -> Result<RetxMarkov> {
    require_m(cfg, 3)?;
    let rows = m3_rows(cfg)?;
    let mut p = vec![0.25; 4];
    let mut residual = f64::INFINITY;
    for _ in 0..FIXED_POINT_MAX_ITERATIONS {
        let target = long_run_distribution(&assemble_m3(&rows, &p), &start_state(4))?;
        let next: Vec<f64> = p
            .iter()
            .zip(&target)
            .map(|(a, b)| (1.0 - FIXED_POINT_DAMPING) * a + FIXED_POINT_DAMPING * b)
            .collect();
        residual = max_gap(&next, &p);
        p = next;
        if residual <= FIXED_POINT_TOLERANCE {
            break;
        }
    }
    if residual > FIXED_POINT_TOLERANCE {
        if let Some(polished) = newton_polish(&rows, &p)? {
            p = polished;
        }
    }
    let transitions = assemble_m3(&rows, &p);
    let stationary = long_run_distribution(&transitions, &start_state(4))?;
    if residual > FIXED_POINT_TOLERANCE && max_gap(&stationary, &p) > SELF_CONSISTENCY_TOLERANCE {
        return Err(Error::NoConvergence {
            iterations: FIXED_POINT_MAX_ITERATIONS,
            residual,
        });
    }
    Ok(RetxMarkov {
        transitions,
        stationary,
    })
}

const NEWTON_MAX_ITERATIONS: usize = 60;
const NEWTON_STEP: f64 = 1e-7;

/// Newton iteration on `stationary(P(p)) - p` over the first three
/// coordinates, with a finite-difference Jacobian. Used where the damped
/// iteration stalls; returns `None` when it does not improve the gap.
fn newton_polish(rows: &M3Rows, start: &[f64]) -> Result<Option<Vec<f64>>> {
    let gap = |p: &[f64]| -> Result<Vec<f64>> {
        let s = long_run_distribution(&assemble_m3(rows, p), &start_state(4))?;
        Ok((0..3).map(|i| s[i] - p[i]).collect())
    };
    let complete = |x: &[f64]| -> Vec<f64> {
        let mut p: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        p.push((1.0 - p.iter().sum::<f64>()).max(0.0));
        let total: f64 = p.iter().sum();
        p.iter().map(|v| v / total).collect()
    };
    let initial = gap(start)?.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut x = start[..3].to_vec();
    let mut g = gap(start)?;
    let mut best = (initial, start.to_vec());
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let mut jac = vec![0.0; 9];
        for j in 0..3 {
            let mut shifted = x.clone();
            shifted[j] += NEWTON_STEP;
            let gj = gap(&complete(&shifted))?;
            for i in 0..3 {
                jac[i * 3 + j] = (gj[i] - g[i]) / NEWTON_STEP;
            }
        }
        let Ok(step) = crate::markov::solve_linear(jac, g.iter().map(|v| -v).collect(), 3) else {
            break;
        };
        x.iter_mut().zip(&step).for_each(|(v, d)| *v += d);
        let p = complete(&x);
        x = p[..3].to_vec();
        g = gap(&p)?;
        let size = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if size < best.0 {
            best = (size, p);
        }
        if size <= FIXED_POINT_TOLERANCE {
            break;
        }
    }
    Ok((best.0 < initial).then_some(best.1))
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Solves the chain matching `cfg.m`.
pub fn solve(cfg: &HarqConfig) -> Result<RetxMarkov> {
    match cfg.m {
        2 => solve_m2(cfg),
        3 => stationary_m3(cfg),
        m => Err(Error::InvalidConfig(format!(
            "analytic AWGN chains exist for m=2 and m=3, got m={m}"
        ))),
    }
}

/// Spectral efficiency `k (1 - per) / n`.
pub fn throughput(per: f64, code: &CodeParams) -> f64 {
    code.rate() * (1.0 - per)
}

/// Delay of an `packets`-long stream with one retransmission: the stream
/// overruns by one slot when its last packet needs the retransmission.
pub fn delay_profile_m2(p0: f64, packets: u64) -> Result<DelayProfile> {
    let n = packets as f64;
    DelayProfile::from_points(&[(n, p0), (n + 1.0, 1.0 - p0)])
}

/// Delay of an `packets`-long stream with two retransmissions.
pub fn delay_profile_m3(p0: f64, p1: f64, taus: &[f64], packets: u64) -> Result<DelayProfile> {
    if taus.len() != 2 {
        return Err(Error::InvalidConfig(
            "two time-sharing ratios are needed".into(),
        ));
    }
    if p0 + p1 > 1.0 + 1e-12 {
        return Err(Error::InvalidConfig(format!("p0+p1={} exceeds 1", p0 + p1)));
    }
    let n = packets as f64;
    let rest = (1.0 - p0 - p1).max(0.0);
    DelayProfile::from_points(&[(n, p0), (n + taus[0], p1), (n + 1.0 + taus[1], rest)])
}
