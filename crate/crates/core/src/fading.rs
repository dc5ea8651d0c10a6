//! Single-retransmission N-HARQ chain over a finite-state Markov fading channel.
//!
//! The state is the pair (packet state `J` in `0, 1, e`, fading state `l`),
//! ordered `J`-major: index `J * L + l`.

use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::awgn::{single_retx_row, throughput, SingleRetxSinrs};
use crate::config::{sinr, HarqConfig};
use crate::delay::DelayProfile;
use crate::error::{Error, Result};
use crate::fbl::CodeParams;
use crate::fsmc::FadingModel;
use crate::markov::{long_run_distribution, TransitionMatrix};

const PACKET_STATES: usize = 3;
const PACKET_LABELS: [&str; PACKET_STATES] = ["0", "1", "e"];

/// A solved packet-state by fading-state chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingRetxMarkov {
    pub fading_states: usize,
    pub transitions: TransitionMatrix,
    pub stationary: Vec<f64>,
}

pub fn state_index(packet_state: usize, fading_state: usize, fading_states: usize) -> usize {
    packet_state * fading_states + fading_state
}

/// Transition matrix of the expanded chain. The channel's per-state SNRs
/// replace `cfg.gamma0`.
pub fn build_fading_chain(cfg: &HarqConfig, model: &FadingModel) -> Result<TransitionMatrix> {
    cfg.validate()?;
    model.validate()?;
    if cfg.m != 2 {
        return Err(Error::InvalidConfig(format!(
            "the fading chain supports a single retransmission (m=2), got m={}",
            cfg.m
        )));
    }
    let alpha = cfg.alphas[0];
    let l_count = model.states();
    let mut t = TransitionMatrix::zeros(PACKET_STATES * l_count);
    for l in 0..l_count {
        let gamma = model.state_snrs[l];
        let entries = SingleRetxSinrs::new(alpha, gamma).entry;
        for k in 0..l_count {
            let p_lk = model.transitions.get(l, k);
            if p_lk == 0.0 {
                continue;
            }
            let retx = sinr(alpha, 1.0 - alpha, model.state_snrs[k]);
            for (i, &entry) in entries.iter().enumerate() {
                let from = state_index(i, l, l_count);
                let row = single_retx_row(cfg, entry, gamma, retx, from)?;
                for (j, v) in row.into_iter().enumerate() {
                    t.set(from, state_index(j, k, l_count), p_lk * v);
                }
            }
        }
    }
    Ok(t)
}

/// Stationary solution of the expanded chain.
///
/// When the channel never changes state the chain splits into one block per
/// fading state; each block then keeps the mass of its channel marginal.
pub fn solve_fading_chain(
    transitions: &TransitionMatrix,
    model: &FadingModel,
) -> Result<FadingRetxMarkov> {
    let l_count = model.states();
    if transitions.size() != PACKET_STATES * l_count {
        return Err(Error::InvalidConfig(format!(
            "chain of size {} does not match {} fading states",
            transitions.size(),
            l_count
        )));
    }
    let mut initial = vec![0.0; transitions.size()];
    initial[..l_count].copy_from_slice(&model.marginals);
    let stationary = long_run_distribution(transitions, &initial)?;
    Ok(FadingRetxMarkov {
        fading_states: l_count,
        transitions: transitions.clone(),
        stationary,
    })
}

/// Builds and solves the expanded chain.
pub fn solve(cfg: &HarqConfig, model: &FadingModel) -> Result<FadingRetxMarkov> {
    solve_fading_chain(&build_fading_chain(cfg, model)?, model)
}

impl FadingRetxMarkov {
    pub fn probability(&self, packet_state: usize, fading_state: usize) -> f64 {
        self.stationary[state_index(packet_state, fading_state, self.fading_states)]
    }

    /// Stationary probabilities of the packet states `[0, 1, e]`.
    pub fn aggregates(&self) -> [f64; PACKET_STATES] {
        let mut out = [0.0; PACKET_STATES];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = (0..self.fading_states)
                .map(|l| self.probability(j, l))
                .sum();
        }
        out
    }

    /// Stationary probability of each fading state.
    pub fn fading_marginals(&self) -> Vec<f64> {
        (0..self.fading_states)
            .map(|l| (0..PACKET_STATES).map(|j| self.probability(j, l)).sum())
            .collect()
    }

    pub fn per(&self) -> f64 {
        self.aggregates()[PACKET_STATES - 1]
    }

    pub fn throughput(&self, code: &CodeParams) -> f64 {
        throughput(self.per(), code)
    }

    pub fn delay_profile(&self, packets: u64) -> Result<DelayProfile> {
        crate::awgn::delay_profile_m2(self.aggregates()[0], packets)
    }

    pub fn state_label(&self, index: usize) -> String {
        let j = index / self.fading_states;
        let l = index % self.fading_states;
        format!("{}:{}", PACKET_LABELS[j], l + 1)
    }

    /// Writes `state,packet_state,fading_state,probability` rows.
    pub fn write_stationary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["state", "packet_state", "fading_state", "probability"])?;
        for (idx, p) in self.stationary.iter().enumerate() {
            w.write_record([
                self.state_label(idx),
                PACKET_LABELS[idx / self.fading_states].to_string(),
                (idx % self.fading_states + 1).to_string(),
                p.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes the nonzero transitions as `from,to,probability` rows.
    pub fn write_transitions_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["from", "to", "probability"])?;
        for i in 0..self.transitions.size() {
            for j in 0..self.transitions.size() {
                let v = self.transitions.get(i, j);
                if v != 0.0 {
                    w.write_record([self.state_label(i), self.state_label(j), v.to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::awgn::{solve_m2, transition_matrix_m2};
    use crate::config::{db_to_linear, Scheme};
    use crate::fsmc::{build_fsmc, FadingSpec};
    use approx::assert_relative_eq;

    fn cfg(alpha: f64, tau: f64) -> HarqConfig {
        HarqConfig::new(
            CodeParams::new(50, 100).unwrap(),
            Scheme::Ir,
            vec![alpha],
            vec![tau],
            1.0,
        )
        .unwrap()
    }

    fn model(doppler_block: f64, states: usize, snr_db: f64) -> FadingModel {
        build_fsmc(&FadingSpec::from_normalized(
            doppler_block,
            100,
            db_to_linear(snr_db),
            states,
        ))
        .unwrap()
    }

    #[test]
    fn single_state_reduces_to_awgn() {
        let m = FadingModel::constant(db_to_linear(-1.0));
        let c = cfg(0.4, 0.7).with_gamma0(m.state_snrs[0]);
        let fading = build_fading_chain(&c, &m).unwrap();
        let awgn = transition_matrix_m2(&c).unwrap();
        assert_eq!(fading, awgn);
        let s = solve_fading_chain(&fading, &m).unwrap();
        assert_relative_eq!(s.per(), solve_m2(&c).unwrap().per(), max_relative = 1e-12);
    }

    #[test]
    fn static_channel_decomposes_into_blocks() {
        let mut m = model(0.04, 4, 2.0);
        m.transitions = TransitionMatrix::identity(4);
        let c = cfg(0.35, 0.8);
        let s = solve(&c, &m).unwrap();
        let expected: f64 = (0..4)
            .map(|l| m.marginals[l] * solve_m2(&c.with_gamma0(m.state_snrs[l])).unwrap().per())
            .sum();
        assert_relative_eq!(s.per(), expected, max_relative = 1e-9);
        for (a, b) in s.fading_marginals().iter().zip(&m.marginals) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn preserves_fading_marginals_and_sparsity() {
        let m = model(0.0855, 4, 13.0);
        let c = cfg(0.5, 0.5);
        let t = build_fading_chain(&c, &m).unwrap();
        assert!(t.max_row_sum_error() < 1e-12);
        for i in 0..PACKET_STATES {
            for j in 0..PACKET_STATES {
                assert_eq!(t.get(state_index(i, 0, 4), state_index(j, 3, 4)), 0.0);
            }
        }
        let s = solve_fading_chain(&t, &m).unwrap();
        for (a, b) in s.fading_marginals().iter().zip(&m.marginals) {
            assert!((a - b).abs() < 1e-9);
        }
        let p = crate::markov::power_iteration(&t, 1e-15, 1_000_000).unwrap();
        for (a, b) in p.iter().zip(&s.stationary) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn high_snr_concentrates_on_success() {
        let m = model(0.04, 4, 13.0).with_snr(1e12);
        let s = solve(&cfg(0.3, 0.5), &m).unwrap();
        let agg = s.aggregates();
        assert!((agg[0] - 1.0).abs() < 1e-9);
        for (a, b) in s.fading_marginals().iter().zip(&m.marginals) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn csv_exports() {
        let m = model(0.04, 2, 10.0);
        let s = solve(&cfg(0.5, 0.5), &m).unwrap();
        let mut out = Vec::new();
        s.write_stationary_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("state,packet_state,fading_state,probability\n0:1,0,1,"));
        assert_eq!(text.lines().count(), 7);
        let mut out = Vec::new();
        s.write_transitions_csv(&mut out).unwrap();
        assert!(String::from_utf8(out)
            .unwrap()
            .starts_with("from,to,probability\n"));
    }

    #[test]
    fn rejects_two_retransmissions() {
        let c = HarqConfig::new(
            CodeParams::new(50, 100).unwrap(),
            Scheme::Ir,
            vec![0.3, 0.3],
            vec![1.0, 1.0],
            1.0,
        )
        .unwrap();
        assert!(build_fading_chain(&c, &model(0.04, 2, 10.0)).is_err());
    }
}
