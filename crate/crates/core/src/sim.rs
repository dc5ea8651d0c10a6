//! Monte Carlo simulation of packet streams at the decoding-probability level.
//!
//! Each packet draws one uniform `u` and is decoded at the first attempt
//! whose accumulated failure probability is at most `u`, so the failure
//! events of successive attempts are nested exactly as in the analytic
//! chains. Random numbers are addressed by (seed, replica, packet, purpose),
//! which makes a report independent of how replicas are scheduled.
//!
//! Superimposed packets see the same segment lists as the analytic chains,
//! but here the states of the preceding packets are the realized ones
//! rather than stationary averages.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::awgn::{self, state_labels, SingleRetxSinrs, SinrCatalogM3};
use crate::config::{segment_failure, sinr, HarqConfig};
use crate::delay::{slots_to_ticks, ticks_to_slots, DelayProfile, TICKS_PER_SLOT};
use crate::error::{Error, Result};
use crate::fading;
use crate::fsmc::FadingModel;
use crate::oharq::{
    oharq_delay_single, oharq_delay_stream, oharq_fading_m1, oharq_split_probs, oharq_throughput,
    splits_from_failures,
};
use crate::par::ExecPolicy;

/// Words of the keystream reserved for each packet.
const WORDS_PER_PACKET: u128 = 64;
const DECODE_WORD: u128 = 0;
const FADING_WORD: u128 = 2;
/// Each fading draw consumes two 32-bit words.
const MAX_ORTHOGONAL_RETRANSMISSIONS: usize = ((WORDS_PER_PACKET - FADING_WORD) / 2 - 1) as usize;
const MAX_TABLE_ENTRIES: usize = 4_000_000;
/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;
pub const AGREEMENT_THRESHOLD: f64 = 3.0;
const MAX_CONVOLVED_STREAM: u64 = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Constant SNR `gamma0` of the HARQ configuration.
    Awgn,
    /// Block fading; the per-state SNRs replace `gamma0`.
    Fading(FadingModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    Nharq,
    Oharq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub harq: HarqConfig,
    pub channel: Channel,
    /// Stream length of one replica.
    pub packets: u64,
    /// Independent streams; estimates pool all of them.
    pub replicas: u64,
    pub seed: u64,
    pub mode: SimMode,
    /// Replaces the computed failure probabilities after `1, 2, ..`
    /// transmissions by fixed values, for every packet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_failures: Option<Vec<f64>>,
}

impl SimConfig {
    pub fn new(
        harq: HarqConfig,
        channel: Channel,
        mode: SimMode,
        packets: u64,
        replicas: u64,
        seed: u64,
    ) -> Self {
        SimConfig {
            harq,
            channel,
            packets,
            replicas,
            seed,
            mode,
            pinned_failures: None,
        }
    }

    pub fn with_pinned_failures(mut self, failures: Vec<f64>) -> Self {
        self.pinned_failures = Some(failures);
        self
    }

    /// Maximum number of transmissions of one packet.
    pub fn transmissions(&self) -> usize {
        match self.mode {
            SimMode::Nharq => self.harq.m,
            SimMode::Oharq => self.harq.taus.len() + 1,
        }
    }

    fn model(&self) -> FadingModel {
        match &self.channel {
            Channel::Awgn => FadingModel::constant(self.harq.gamma0),
            Channel::Fading(m) => m.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.packets == 0 || self.replicas == 0 {
            return Err(Error::InvalidConfig(
                "packets and replicas must be at least 1".into(),
            ));
        }
        match self.mode {
            SimMode::Nharq => {
                self.harq.validate()?;
                if !(2..=3).contains(&self.harq.m) {
                    return Err(Error::InvalidConfig(format!(
                        "non-orthogonal streams are simulated for m=2 and m=3, got m={}",
                        self.harq.m
                    )));
                }
            }
            SimMode::Oharq => {
                self.harq.validate_orthogonal()?;
                if self.harq.taus.len() > MAX_ORTHOGONAL_RETRANSMISSIONS {
                    return Err(Error::InvalidConfig(format!(
                        "at most {MAX_ORTHOGONAL_RETRANSMISSIONS} orthogonal retransmissions are simulated"
                    )));
                }
            }
        }
        if let Channel::Fading(m) = &self.channel {
            m.validate()?;
        }
        if let Some(p) = &self.pinned_failures {
            if p.len() != self.transmissions()
                || p.iter().any(|&v| !(0.0..=1.0).contains(&v))
                || p.windows(2).any(|w| w[1] > w[0])
            {
                return Err(Error::InvalidConfig(format!(
                    "pinned failures {p:?} must be {} nonincreasing probabilities",
                    self.transmissions()
                )));
            }
        }
        Ok(())
    }
}

/// A pooled estimate with its standard error and 95% confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Estimate {
    fn new(value: f64, std_error: f64) -> Self {
        Estimate {
            value,
            std_error,
            ci_low: value - Z95 * std_error,
            ci_high: value + Z95 * std_error,
        }
    }

    fn probability(value: f64, std_error: f64) -> Self {
        let e = Self::new(value, std_error);
        Estimate {
            ci_low: e.ci_low.max(0.0),
            ci_high: e.ci_high.min(1.0),
            ..e
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub mode: SimMode,
    pub transmissions: usize,
    pub packets: u64,
    pub replicas: u64,
    pub seed: u64,
    pub state_labels: Vec<String>,
    /// Fraction of packets ending in each state `0, 1, .., e`.
    pub occupancy: Vec<Estimate>,
    pub per_hat: Estimate,
    /// Fraction of channel uses in each fading state; empty over AWGN.
    pub fading_occupancy: Vec<Estimate>,
    /// Non-orthogonal streams over fading: packet state by the fading state
    /// of the following slot, packet-state major.
    pub joint_occupancy: Vec<Estimate>,
    pub fading_samples: u64,
    pub throughput_hat: Estimate,
    pub delay_mean: Estimate,
    /// Empirical distribution of the stream delay over replicas.
    pub delay: DelayProfile,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// One packet of the raw trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub packet_id: u64,
    pub attempts: usize,
    pub delivered: bool,
    pub delay_ticks: i64,
    pub fading_states: Vec<usize>,
}

/// Keystream addressed by packet and purpose within one replica.
struct Draws {
    rng: ChaCha8Rng,
}

impl Draws {
    fn new(seed: u64, replica: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replica);
        Draws { rng }
    }

    fn uniform(&mut self, packet: u64, word: u128) -> f64 {
        self.rng
            .set_word_pos(packet as u128 * WORDS_PER_PACKET + word);
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

fn sample(probabilities: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Number of attempts whose failure probability exceeds `u`.
fn failed_attempts(failures: &[f64], u: f64) -> usize {
    failures.iter().take_while(|&&f| u < f).count()
}

/// Accumulated failure probabilities of a superimposed packet, indexed by the
/// realized states of the two preceding packets and the fading state of each
/// slot the packet occupies.
struct NharqTable {
    transmissions: usize,
    middles: usize,
    fading_states: usize,
    data: Vec<f64>,
}

impl NharqTable {
    fn build(sim: &SimConfig, model: &FadingModel) -> Result<Self> {
        let m = sim.harq.m;
        let l = model.states();
        let states = m + 1;
        let middles = if m == 2 { 1 } else { states };
        let paths = l.pow(m as u32);
        let entries = states * middles * paths;
        if entries * m > MAX_TABLE_ENTRIES {
            return Err(Error::InvalidConfig(format!(
                "{l} fading states make the failure table too large"
            )));
        }
        let mut data = Vec::with_capacity(entries * m);
        for origin in 0..states {
            for middle in 0..middles {
                for path in 0..paths {
                    let gammas: Vec<f64> = (0..m)
                        .map(|j| model.state_snrs[path / l.pow((m - 1 - j) as u32) % l])
                        .collect();
                    match &sim.pinned_failures {
                        Some(p) => data.extend_from_slice(p),
                        None => {
                            data.extend(superposed_failures(&sim.harq, origin, middle, &gammas)?)
                        }
                    }
                }
            }
        }
        Ok(NharqTable {
            transmissions: m,
            middles,
            fading_states: l,
            data,
        })
    }

    fn get(&self, origin: usize, middle: usize, path: &[usize]) -> &[f64] {
        let mut idx = origin * self.middles + middle.min(self.middles - 1);
        for &s in path {
            idx = idx * self.fading_states + s;
        }
        &self.data[idx * self.transmissions..(idx + 1) * self.transmissions]
    }
}

/// Catalog entry describing the slot of a new packet whose predecessor
/// ended in `previous` and the packet before that in `earlier`.
///
/// A second retransmission of `earlier` shares the slot when it failed
/// twice; the catalog then indexes by `earlier` with `previous` as the
/// packet in between. Otherwise only the first retransmission of
/// `previous` can be present: decoded eventually (`2`) or never (`e`).
fn catalog_key(previous: usize, earlier: usize) -> (usize, usize) {
    match (previous, earlier) {
        (p, e) if e >= 2 => (e, p),
        (p, _) if p <= 1 => (p, 0),
        (p, _) => (p, p),
    }
}

/// Failure probabilities after each transmission of a superimposed packet
/// whose slots have SNRs `gammas`, given the final states of the previous
/// packet and of the one before it (`0, 1, .., e`).
pub fn superposed_failures(
    cfg: &HarqConfig,
    previous: usize,
    earlier: usize,
    gammas: &[f64],
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(2..=3).contains(&cfg.m) || gammas.len() < cfg.m || previous > cfg.m || earlier > cfg.m {
        return Err(Error::InvalidConfig(format!(
            "need m in 2..=3, {} slot SNRs and states up to {}",
            cfg.m, cfg.m
        )));
    }
    let lists: Vec<Vec<(f64, f64)>> = if cfg.m == 2 {
        let (alpha, tau) = (cfg.alphas[0], cfg.taus[0]);
        let entry = SingleRetxSinrs::new(alpha, gammas[0]).entry[previous];
        let first = vec![(entry, tau), (gammas[0], 1.0 - tau)];
        let mut second = first.clone();
        second.push((sinr(alpha, 1.0 - alpha, gammas[1]), tau));
        vec![first, second]
    } else {
        let (o, k) = catalog_key(previous, earlier);
        let cat =
            |g: f64| SinrCatalogM3::new(cfg.alphas[0], cfg.alphas[1], cfg.taus[0], cfg.taus[1], g);
        let e0 = cat(gammas[0]).events(o, k);
        let e1 = cat(gammas[1]).events(o, k);
        let e2 = cat(gammas[2]).events(o, k);
        let first = e0[0].clone();
        let mut second = first.clone();
        second.extend_from_slice(&e1[1][e1[0].len()..]);
        let mut third = second.clone();
        third.extend_from_slice(&e2[2][e2[1].len()..]);
        vec![first, second, third]
    };
    lists
        .iter()
        .map(|l| segment_failure(cfg.scheme, &cfg.code, l))
        .collect()
}

/// Accumulated failure probabilities of an orthogonal packet for every
/// prefix of fading states it can see.
struct OharqTable {
    fading_states: usize,
    offsets: Vec<usize>,
    data: Vec<f64>,
}

impl OharqTable {
    fn build(sim: &SimConfig, model: &FadingModel) -> Result<Self> {
        let l = model.states();
        let depth = sim.transmissions();
        let mut offsets = Vec::with_capacity(depth);
        let mut total = 0usize;
        for d in 1..=depth {
            offsets.push(total);
            total = total.saturating_add(l.saturating_pow(d as u32));
        }
        if total > MAX_TABLE_ENTRIES {
            return Err(Error::InvalidConfig(format!(
                "{l} fading states and {depth} transmissions make the failure table too large"
            )));
        }
        let cfg = &sim.harq;
        let mut data = Vec::with_capacity(total);
        for d in 1..=depth {
            for path in 0..l.pow(d as u32) {
                if let Some(p) = &sim.pinned_failures {
                    data.push(p[d - 1]);
                    continue;
                }
                let segments: Vec<(f64, f64)> = (0..d)
                    .map(|j| {
                        let g = model.state_snrs[path / l.pow((d - 1 - j) as u32) % l];
                        (g, if j == 0 { 1.0 } else { cfg.taus[j - 1] })
                    })
                    .collect();
                data.push(segment_failure(cfg.scheme, &cfg.code, &segments)?);
            }
        }
        Ok(OharqTable {
            fading_states: l,
            offsets,
            data,
        })
    }

    fn get(&self, path: &[usize]) -> f64 {
        let idx = path.iter().fold(0, |acc, &s| acc * self.fading_states + s);
        self.data[self.offsets[path.len() - 1] + idx]
    }
}

enum Tables {
    Nharq(NharqTable),
    Oharq(OharqTable),
}

/// Counts from one replica.
#[derive(Debug, Clone, Default)]
struct Tally {
    states: Vec<u64>,
    joint: Vec<u64>,
    fading: Vec<u64>,
    delivered: u64,
    busy_ticks: i64,
    stream_ticks: i64,
    trace: Vec<TraceRow>,
}

struct Runner<'a> {
    sim: &'a SimConfig,
    model: FadingModel,
    tables: Tables,
    record_joint: bool,
}

impl<'a> Runner<'a> {
    fn new(sim: &'a SimConfig) -> Result<Self> {
        sim.validate()?;
        let model = sim.model();
        let tables = match sim.mode {
            SimMode::Nharq => Tables::Nharq(NharqTable::build(sim, &model)?),
            SimMode::Oharq => Tables::Oharq(OharqTable::build(sim, &model)?),
        };
        let record_joint = sim.mode == SimMode::Nharq && matches!(sim.channel, Channel::Fading(_));
        Ok(Runner {
            sim,
            model,
            tables,
            record_joint,
        })
    }

    fn step(&self, from: Option<usize>, u: f64) -> usize {
        match from {
            None => sample(&self.model.marginals, u),
            Some(s) => sample(self.model.transitions.row(s), u),
        }
    }

    /// Slot span of a packet that used `retx` retransmissions.
    fn span_ticks(&self, retx: usize) -> i64 {
        let taus = &self.sim.harq.taus;
        match self.sim.mode {
            SimMode::Nharq if retx == 0 => TICKS_PER_SLOT,
            SimMode::Nharq => retx as i64 * TICKS_PER_SLOT + slots_to_ticks(taus[retx - 1]),
            SimMode::Oharq => {
                TICKS_PER_SLOT + taus[..retx].iter().map(|&t| slots_to_ticks(t)).sum::<i64>()
            }
        }
    }

    /// How far the last packet pushes a non-orthogonal stream past `N` slots:
    /// a whole slot with one retransmission, otherwise up to the end of the
    /// last retransmission after the stream's final slot.
    fn overrun_ticks(&self, retx: usize) -> i64 {
        if retx == 0 {
            0
        } else if self.sim.harq.m == 2 {
            TICKS_PER_SLOT
        } else {
            (retx as i64 - 1) * TICKS_PER_SLOT + slots_to_ticks(self.sim.harq.taus[retx - 1])
        }
    }

    fn run(&self, replica: u64, trace: bool) -> Tally {
        match &self.tables {
            Tables::Nharq(t) => self.run_nharq(t, replica, trace),
            Tables::Oharq(t) => self.run_oharq(t, replica, trace),
        }
    }

    fn run_nharq(&self, table: &NharqTable, replica: u64, trace: bool) -> Tally {
        let sim = self.sim;
        let m = sim.harq.m;
        let states = m + 1;
        let l = self.model.states();
        let n = sim.packets;
        let mut draws = Draws::new(sim.seed, replica);
        let mut tally = Tally {
            states: vec![0; states],
            joint: vec![0; if self.record_joint { states * l } else { 0 }],
            fading: vec![0; l],
            ..Tally::default()
        };
        // Fading state of every slot a packet of the stream can touch.
        let slots = n + m as u64 - 1;
        let mut fading = Vec::with_capacity(slots as usize);
        let mut prev = None;
        for t in 0..slots {
            let s = self.step(prev, draws.uniform(t, FADING_WORD));
            fading.push(s);
            prev = Some(s);
        }
        let (mut origin, mut middle) = (0, 0);
        let mut last_retx = 0;
        for s in 0..n {
            let path = &fading[s as usize..s as usize + m];
            let failures = table.get(origin, middle, path);
            let state = failed_attempts(failures, draws.uniform(s, DECODE_WORD));
            tally.states[state] += 1;
            tally.fading[path[0]] += 1;
            if self.record_joint {
                tally.joint[state * l + path[1]] += 1;
            }
            let delivered = state < m;
            tally.delivered += delivered as u64;
            let retx = state.min(m - 1);
            let span = self.span_ticks(retx);
            if trace {
                tally.trace.push(TraceRow {
                    packet_id: replica * n + s,
                    attempts: retx + 1,
                    delivered,
                    delay_ticks: span,
                    fading_states: path[..retx + 1].to_vec(),
                });
            }
            tally.busy_ticks = tally.busy_ticks.max(s as i64 * TICKS_PER_SLOT + span);
            last_retx = retx;
            middle = origin;
            origin = state;
        }
        tally.stream_ticks = n as i64 * TICKS_PER_SLOT + self.overrun_ticks(last_retx);
        tally
    }

    fn run_oharq(&self, table: &OharqTable, replica: u64, trace: bool) -> Tally {
        let sim = self.sim;
        let depth = sim.transmissions();
        let states = depth + 1;
        let l = self.model.states();
        let n = sim.packets;
        let mut draws = Draws::new(sim.seed, replica);
        let mut tally = Tally {
            states: vec![0; states],
            fading: vec![0; l],
            ..Tally::default()
        };
        let mut current = None;
        let mut path = Vec::with_capacity(depth);
        for s in 0..n {
            let u = draws.uniform(s, DECODE_WORD);
            path.clear();
            let mut state = depth;
            for r in 0..depth {
                let f = self.step(current, draws.uniform(s, FADING_WORD + 2 * r as u128));
                current = Some(f);
                path.push(f);
                tally.fading[f] += 1;
                if u >= table.get(&path) {
                    state = r;
                    break;
                }
            }
            tally.states[state] += 1;
            let delivered = state < depth;
            tally.delivered += delivered as u64;
            let retx = path.len() - 1;
            let span = self.span_ticks(retx);
            tally.busy_ticks += span;
            if trace {
                tally.trace.push(TraceRow {
                    packet_id: replica * n + s,
                    attempts: retx + 1,
                    delivered,
                    delay_ticks: span,
                    fading_states: path.clone(),
                });
            }
        }
        tally.stream_ticks = tally.busy_ticks;
        tally
    }
}

/// Pooled ratio `sum(num) / sum(den)` with a standard error taken from the
/// spread across replicas, floored by the binomial error when the values
/// are per-sample indicators.
fn ratio_estimate(num: &[f64], den: &[f64], binomial: bool) -> (f64, f64) {
    let total_num: f64 = num.iter().sum();
    let total_den: f64 = den.iter().sum();
    let value = total_num / total_den;
    let r = num.len() as f64;
    let batch = if num.len() > 1 {
        let mean_den = total_den / r;
        let ss: f64 = num
            .iter()
            .zip(den)
            .map(|(a, b)| (a - value * b).powi(2))
            .sum();
        (ss / (r * (r - 1.0))).sqrt() / mean_den
    } else {
        0.0
    };
    let floor = if binomial {
        (value * (1.0 - value) / total_den).max(0.0).sqrt()
    } else {
        0.0
    };
    (value, batch.max(floor))
}

fn proportions(counts: &[Vec<u64>], totals: &[f64]) -> Vec<Estimate> {
    let cells = counts.first().map_or(0, Vec::len);
    (0..cells)
        .map(|c| {
            let num: Vec<f64> = counts.iter().map(|t| t[c] as f64).collect();
            let (v, se) = ratio_estimate(&num, totals, true);
            Estimate::probability(v, se)
        })
        .collect()
}

fn mean_estimate(samples: &[f64]) -> Estimate {
    let r = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / r;
    let se = if samples.len() > 1 {
        (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
    } else {
        0.0
    };
    Estimate::new(mean, se)
}

fn run_all(sim: &SimConfig, policy: ExecPolicy, trace: bool) -> Result<(SimReport, Vec<Tally>)> {
    let runner = Runner::new(sim)?;
    let replicas: Vec<u64> = (0..sim.replicas).collect();
    let tallies = policy.map(&replicas, |&r| runner.run(r, trace));
    Ok((summarize(sim, &runner, &tallies)?, tallies))
}

fn summarize(sim: &SimConfig, runner: &Runner, tallies: &[Tally]) -> Result<SimReport> {
    let n = sim.packets as f64;
    let states = sim.transmissions() + 1;
    let packets: Vec<f64> = vec![n; tallies.len()];
    let state_counts: Vec<Vec<u64>> = tallies.iter().map(|t| t.states.clone()).collect();
    let occupancy = proportions(&state_counts, &packets);
    let per_hat = occupancy[states - 1];

    let fading_counts: Vec<Vec<u64>> = tallies.iter().map(|t| t.fading.clone()).collect();
    let fading_totals: Vec<f64> = tallies
        .iter()
        .map(|t| t.fading.iter().sum::<u64>() as f64)
        .collect();
    let fading_occupancy = match sim.channel {
        Channel::Awgn => Vec::new(),
        Channel::Fading(_) => proportions(&fading_counts, &fading_totals),
    };
    let joint_counts: Vec<Vec<u64>> = tallies.iter().map(|t| t.joint.clone()).collect();
    let joint_occupancy = if runner.record_joint {
        proportions(&joint_counts, &packets)
    } else {
        Vec::new()
    };

    let rate = sim.harq.code.rate();
    let delivered: Vec<f64> = tallies.iter().map(|t| rate * t.delivered as f64).collect();
    let throughput_hat = match sim.mode {
        SimMode::Nharq => {
            let (v, se) = ratio_estimate(&delivered, &packets, false);
            let floor =
                rate * (per_hat.value * (1.0 - per_hat.value) / (n * tallies.len() as f64)).sqrt();
            Estimate::new(v, se.max(floor))
        }
        SimMode::Oharq => {
            let busy: Vec<f64> = tallies
                .iter()
                .map(|t| ticks_to_slots(t.busy_ticks))
                .collect();
            let (v, se) = ratio_estimate(&delivered, &busy, false);
            Estimate::new(v, se)
        }
    };

    let stream: Vec<f64> = tallies
        .iter()
        .map(|t| ticks_to_slots(t.stream_ticks))
        .collect();
    let delay_mean = mean_estimate(&stream);
    let weight = 1.0 / tallies.len() as f64;
    let delay =
        DelayProfile::from_ticks(tallies.iter().map(|t| (t.stream_ticks, weight)).collect())?;

    Ok(SimReport {
        mode: sim.mode,
        transmissions: sim.transmissions(),
        packets: sim.packets,
        replicas: sim.replicas,
        seed: sim.seed,
        state_labels: state_labels(states),
        occupancy,
        per_hat,
        fading_occupancy,
        joint_occupancy,
        fading_samples: fading_totals.iter().sum::<f64>() as u64,
        throughput_hat,
        delay_mean,
        delay,
    })
}

/// Simulates `sim.replicas` independent streams of `sim.packets` packets.
/// The report depends only on `sim`, never on the policy.
pub fn simulate(sim: &SimConfig, policy: ExecPolicy) -> Result<SimReport> {
    Ok(run_all(sim, policy, false)?.0)
}

/// Like [`simulate`], also writing one CSV row per packet:
/// `packet_id,attempts,delivered,delay_slots,fading_states`.
pub fn simulate_traced<W: Write>(
    sim: &SimConfig,
    policy: ExecPolicy,
    writer: W,
) -> Result<SimReport> {
    let (report, tallies) = run_all(sim, policy, true)?;
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "packet_id",
        "attempts",
        "delivered",
        "delay_slots",
        "fading_states",
    ])?;
    for row in tallies.iter().flat_map(|t| &t.trace) {
        let fading: Vec<String> = match sim.channel {
            Channel::Awgn => Vec::new(),
            Channel::Fading(_) => row
                .fading_states
                .iter()
                .map(|s| (s + 1).to_string())
                .collect(),
        };
        w.write_record([
            row.packet_id.to_string(),
            row.attempts.to_string(),
            row.delivered.to_string(),
            ticks_to_slots(row.delay_ticks).to_string(),
            fading.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(report)
}

/// Collects the per-packet trace in memory.
pub fn simulate_trace_rows(
    sim: &SimConfig,
    policy: ExecPolicy,
) -> Result<(SimReport, Vec<TraceRow>)> {
    let (report, tallies) = run_all(sim, policy, true)?;
    Ok((report, tallies.into_iter().flat_map(|t| t.trace).collect()))
}

/// Analytic predictions for the statistics a simulation reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReference {
    pub mode: SimMode,
    pub transmissions: usize,
    pub packets: u64,
    pub occupancy: Vec<f64>,
    pub fading_marginals: Vec<f64>,
    pub joint_occupancy: Vec<f64>,
    pub throughput: f64,
    pub delay_mean: f64,
    pub delay_variance: f64,
    /// Stream delay distribution; omitted for long orthogonal streams,
    /// whose distribution is expensive to convolve.
    pub delay: Option<DelayProfile>,
}

impl AnalyticReference {
    /// Solves the analytic model matching a simulation setup.
    pub fn for_config(sim: &SimConfig) -> Result<Self> {
        sim.validate()?;
        let cfg = &sim.harq;
        let model = match &sim.channel {
            Channel::Awgn => None,
            Channel::Fading(m) => Some(m),
        };
        let mut joint = Vec::new();
        let occupancy = match (&sim.pinned_failures, sim.mode, model) {
            (Some(p), _, m) => {
                let splits = splits_from_failures(p)?;
                if let (SimMode::Nharq, Some(m)) = (sim.mode, m) {
                    joint = splits
                        .iter()
                        .flat_map(|s| m.marginals.iter().map(move |q| s * q))
                        .collect();
                }
                splits
            }
            (None, SimMode::Nharq, None) => awgn::solve(cfg)?.stationary,
            (None, SimMode::Nharq, Some(m)) => {
                let solved = fading::solve(cfg, m)?;
                joint = solved.stationary.clone();
                solved.aggregates().to_vec()
            }
            (None, SimMode::Oharq, None) => oharq_split_probs(cfg)?,
            (None, SimMode::Oharq, Some(m)) => oharq_fading_m1(m, cfg)?.to_vec(),
        };
        let per = *occupancy.last().expect("states");
        let (throughput, delay_mean, delay_variance, delay) = match sim.mode {
            SimMode::Nharq => {
                let d = match cfg.m {
                    2 => awgn::delay_profile_m2(occupancy[0], sim.packets)?,
                    _ => {
                        awgn::delay_profile_m3(occupancy[0], occupancy[1], &cfg.taus, sim.packets)?
                    }
                };
                (
                    awgn::throughput(per, &cfg.code),
                    d.mean(),
                    d.variance(),
                    Some(d),
                )
            }
            SimMode::Oharq => {
                let single = oharq_delay_single(&occupancy, &cfg.taus)?;
                let n = sim.packets as f64;
                let stream = if sim.packets <= MAX_CONVOLVED_STREAM {
                    Some(oharq_delay_stream(&single, sim.packets)?)
                } else {
                    None
                };
                (
                    oharq_throughput(&occupancy, &cfg.taus, &cfg.code)?,
                    n * single.mean(),
                    n * single.variance(),
                    stream,
                )
            }
        };
        Ok(AnalyticReference {
            mode: sim.mode,
            transmissions: sim.transmissions(),
            packets: sim.packets,
            occupancy,
            fading_marginals: model.map(|m| m.marginals.clone()).unwrap_or_default(),
            joint_occupancy: joint,
            throughput,
            delay_mean,
            delay_variance,
            delay,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScore {
    pub statistic: String,
    pub simulated: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub scores: Vec<ZScore>,
    pub max_abs_z: f64,
    pub passed: bool,
}

fn z_score(statistic: String, simulated: f64, analytic: f64, std_error: f64) -> ZScore {
    let diff = simulated - analytic;
    let z = if std_error > 0.0 {
        diff / std_error
    } else if diff.abs() <= 1e-12 * (simulated.abs() + analytic.abs()).max(1e-3) {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    ZScore {
        statistic,
        simulated,
        analytic,
        std_error,
        z,
    }
}

/// Binomial error of a proportion evaluated at the analytic value.
fn binomial_se(p: f64, samples: f64) -> f64 {
    (p * (1.0 - p) / samples).max(0.0).sqrt()
}

/// z-scores of every reported statistic against the analytic reference;
/// the errors are the larger of the simulated and the analytic one.
pub fn compare(report: &SimReport, reference: &AnalyticReference) -> Result<Agreement> {
    let mismatch = |what: &str| Err(Error::ConfigMismatch(what.to_string()));
    if report.mode != reference.mode || report.transmissions != reference.transmissions {
        return mismatch("mode or number of transmissions differ");
    }
    if report.packets != reference.packets {
        return mismatch("stream lengths differ");
    }
    if report.occupancy.len() != reference.occupancy.len()
        || report.fading_occupancy.len() != reference.fading_marginals.len()
        || report.joint_occupancy.len() != reference.joint_occupancy.len()
    {
        return mismatch("state spaces differ");
    }
    let samples = (report.packets * report.replicas) as f64;
    let mut scores = Vec::new();
    let mut push_proportions =
        |name: &str, labels: &[String], sim: &[Estimate], ana: &[f64], n: f64| {
            for ((label, s), &a) in labels.iter().zip(sim).zip(ana) {
                let se = s.std_error.max(binomial_se(a, n));
                scores.push(z_score(format!("{name}[{label}]"), s.value, a, se));
            }
        };
    push_proportions(
        "occupancy",
        &report.state_labels,
        &report.occupancy,
        &reference.occupancy,
        samples,
    );
    let fading_labels: Vec<String> = (1..=report.fading_occupancy.len())
        .map(|l| l.to_string())
        .collect();
    push_proportions(
        "fading",
        &fading_labels,
        &report.fading_occupancy,
        &reference.fading_marginals,
        report.fading_samples as f64,
    );
    let l = reference.fading_marginals.len().max(1);
    let joint_labels: Vec<String> = (0..report.joint_occupancy.len())
        .map(|i| format!("{}:{}", report.state_labels[i / l], i % l + 1))
        .collect();
    push_proportions(
        "joint",
        &joint_labels,
        &report.joint_occupancy,
        &reference.joint_occupancy,
        samples,
    );

    let per = *reference.occupancy.last().expect("states");
    let per_se = report.per_hat.std_error.max(binomial_se(per, samples));
    scores.push(z_score("per".into(), report.per_hat.value, per, per_se));

    let tp_floor = match report.mode {
        SimMode::Nharq => {
            let rate = reference.throughput / (1.0 - per).max(f64::MIN_POSITIVE);
            rate * binomial_se(per, samples)
        }
        SimMode::Oharq => 0.0,
    };
    scores.push(z_score(
        "throughput".into(),
        report.throughput_hat.value,
        reference.throughput,
        report.throughput_hat.std_error.max(tp_floor),
    ));
    let delay_se = report
        .delay_mean
        .std_error
        .max((reference.delay_variance / report.replicas as f64).sqrt());
    scores.push(z_score(
        "delay_mean".into(),
        report.delay_mean.value,
        reference.delay_mean,
        delay_se,
    ));

    let max_abs_z = scores.iter().map(|s| s.z.abs()).fold(0.0, f64::max);
    Ok(Agreement {
        passed: max_abs_z <= AGREEMENT_THRESHOLD,
        max_abs_z,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{db_to_linear, Scheme};
    use crate::fbl::CodeParams;
    use crate::fsmc::{build_fsmc, FadingSpec};

    fn code() -> CodeParams {
        CodeParams::new(50, 100).unwrap()
    }

    fn m2(alpha: f64, tau: f64, snr_db: f64) -> HarqConfig {
        HarqConfig::new(
            code(),
            Scheme::Ir,
            vec![alpha],
            vec![tau],
            db_to_linear(snr_db),
        )
        .unwrap()
    }

    #[test]
    fn uniforms_are_addressed_not_sequential() {
        let mut a = Draws::new(7, 3);
        let mut b = Draws::new(7, 3);
        let x = a.uniform(10, DECODE_WORD);
        let _ = b.uniform(99, FADING_WORD);
        assert_eq!(x, b.uniform(10, DECODE_WORD));
        assert_ne!(x, Draws::new(7, 4).uniform(10, DECODE_WORD));
        assert!((0.0..1.0).contains(&x));
    }

    #[test]
    fn failed_attempts_counts_nested_failures() {
        assert_eq!(failed_attempts(&[0.5, 0.2], 0.7), 0);
        assert_eq!(failed_attempts(&[0.5, 0.2], 0.3), 1);
        assert_eq!(failed_attempts(&[0.5, 0.2], 0.1), 2);
        assert_eq!(failed_attempts(&[1.0, 1.0], 0.999), 2);
        assert_eq!(failed_attempts(&[0.0, 0.0], 0.0), 0);
    }

    #[test]
    fn sample_skips_empty_states() {
        assert_eq!(sample(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample(&[0.5, 0.5], 0.5), 1);
        assert_eq!(sample(&[0.5, 0.5, 0.0], 0.999_999_999_999), 1);
    }

    #[test]
    fn awgn_table_matches_chain_rows() {
        let cfg = m2(0.4, 0.6, -1.0);
        let sim = SimConfig::new(cfg.clone(), Channel::Awgn, SimMode::Nharq, 10, 1, 0);
        let table = NharqTable::build(&sim, &sim.model()).unwrap();
        let t = awgn::transition_matrix_m2(&cfg).unwrap();
        for origin in 0..3 {
            let f = table.get(origin, 0, &[0, 0]);
            assert!((1.0 - f[0] - t.get(origin, 0)).abs() < 1e-15);
            assert!((f[1] - t.get(origin, 2)).abs() < 1e-15);
        }
    }

    #[test]
    fn fading_table_matches_chain_rows() {
        let model = build_fsmc(&FadingSpec::from_normalized(
            0.0855,
            100,
            db_to_linear(10.0),
            4,
        ))
        .unwrap();
        let cfg = m2(0.5, 0.5, 0.0);
        let sim = SimConfig::new(
            cfg.clone(),
            Channel::Fading(model.clone()),
            SimMode::Nharq,
            10,
            1,
            0,
        );
        let table = NharqTable::build(&sim, &model).unwrap();
        let t = fading::build_fading_chain(&cfg, &model).unwrap();
        for origin in 0..3 {
            for l in 0..4 {
                for k in 0..4 {
                    let p = model.transitions.get(l, k);
                    if p == 0.0 {
                        continue;
                    }
                    let f = table.get(origin, 0, &[l, k]);
                    let from = fading::state_index(origin, l, 4);
                    let to_e = t.get(from, fading::state_index(2, k, 4));
                    assert!((p * f[1] - to_e).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn policy_does_not_change_the_report() {
        let sim = SimConfig::new(
            m2(0.35, 1.0, -4.0),
            Channel::Awgn,
            SimMode::Nharq,
            200,
            16,
            42,
        );
        let a = simulate(&sim, ExecPolicy::Sequential).unwrap();
        let b = simulate(&sim, ExecPolicy::Parallel { threads: Some(4) }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perfect_channel() {
        let sim = SimConfig::new(
            m2(0.35, 1.0, 200.0),
            Channel::Awgn,
            SimMode::Nharq,
            50,
            4,
            1,
        );
        let r = simulate(&sim, ExecPolicy::Sequential).unwrap();
        assert_eq!(r.per_hat.value, 0.0);
        assert_eq!(r.delay, DelayProfile::point(50.0));
        let o = HarqConfig::orthogonal(code(), Scheme::Ir, vec![0.5], 1e20).unwrap();
        let sim = SimConfig::new(o, Channel::Awgn, SimMode::Oharq, 50, 4, 1);
        let r = simulate(&sim, ExecPolicy::Sequential).unwrap();
        assert_eq!(r.per_hat.value, 0.0);
        assert_eq!(r.delay, DelayProfile::point(50.0));
    }

    #[test]
    fn occupancy_sums_to_one() {
        let model = build_fsmc(&FadingSpec::from_normalized(
            0.0855,
            100,
            db_to_linear(5.0),
            4,
        ))
        .unwrap();
        let sim = SimConfig::new(
            m2(0.5, 0.5, 0.0),
            Channel::Fading(model),
            SimMode::Nharq,
            300,
            3,
            9,
        );
        let r = simulate(&sim, ExecPolicy::default()).unwrap();
        let total: f64 = r.occupancy.iter().map(|e| e.value).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let joint: f64 = r.joint_occupancy.iter().map(|e| e.value).sum();
        assert!((joint - 1.0).abs() < 1e-12);
        assert_eq!(r.fading_occupancy.len(), 4);
    }

    #[test]
    fn validation_rejects_bad_setups() {
        let mut sim = SimConfig::new(m2(0.35, 1.0, 0.0), Channel::Awgn, SimMode::Nharq, 0, 1, 0);
        assert!(simulate(&sim, ExecPolicy::Sequential).is_err());
        sim.packets = 10;
        sim.pinned_failures = Some(vec![0.2, 0.5]);
        assert!(simulate(&sim, ExecPolicy::Sequential).is_err());
        sim.pinned_failures = None;
        sim.harq = HarqConfig::new(code(), Scheme::Ir, vec![0.3; 3], vec![0.5; 3], 1.0).unwrap();
        assert!(simulate(&sim, ExecPolicy::Sequential).is_err());
        sim.mode = SimMode::Oharq;
        sim.harq = HarqConfig::orthogonal(code(), Scheme::Ir, vec![0.1; 40], 1.0).unwrap();
        assert!(simulate(&sim, ExecPolicy::Sequential).is_err());
    }

    #[test]
    fn compare_flags_mismatches() {
        let sim = SimConfig::new(
            m2(0.35, 1.0, -4.0),
            Channel::Awgn,
            SimMode::Nharq,
            100,
            4,
            0,
        );
        let r = simulate(&sim, ExecPolicy::Sequential).unwrap();
        let mut reference = AnalyticReference::for_config(&sim).unwrap();
        reference.packets = 99;
        assert!(matches!(
            compare(&r, &reference),
            Err(Error::ConfigMismatch(_))
        ));
    }

    #[test]
    fn report_round_trips_through_json() {
        let sim = SimConfig::new(
            m2(0.35, 1.0, -4.0),
            Channel::Awgn,
            SimMode::Nharq,
            100,
            2,
            0,
        );
        let r = simulate(&sim, ExecPolicy::Sequential).unwrap();
        let back: SimReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let cfg_back: SimConfig =
            serde_json::from_str(&serde_json::to_string(&sim).unwrap()).unwrap();
        assert_eq!(cfg_back, sim);
    }
}
