//! Standard orthogonal HARQ: every retransmission occupies its own slot.
//!
//! Split probabilities are ordered `[p_0, .., p_m, p_e]`: `p_i` is the
//! probability of decoding after exactly `i` retransmissions and `p_e` of
//! giving up after all `m`.

use crate::config::{segment_failure, HarqConfig};
use crate::delay::DelayProfile;
use crate::error::{Error, Result};
use crate::fbl::CodeParams;
use crate::fsmc::FadingModel;
use crate::markov::clean_probability;

/// Turns nonincreasing cumulative failure probabilities into split probabilities.
pub(crate) fn splits_from_failures(failures: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(failures.len() + 1);
    out.push(1.0 - failures[0]);
    for (i, w) in failures.windows(2).enumerate() {
        out.push(clean_probability(w[0] - w[1], i + 1)?);
    }
    out.push(*failures.last().expect("at least one transmission"));
    Ok(out)
}

/// Success-split probabilities over an AWGN channel at `cfg.gamma0`.
///
/// After `i` retransmissions IR has seen `1 + tau_1 + .. + tau_i` slots of
/// fresh symbols, while CC has combined `i + 1` copies.
pub fn oharq_split_probs(cfg: &HarqConfig) -> Result<Vec<f64>> {
    cfg.validate_orthogonal()?;
    let mut segments = vec![(cfg.gamma0, 1.0)];
    let mut failures = vec![segment_failure(cfg.scheme, &cfg.code, &segments)?];
    for &tau in &cfg.taus {
        segments.push((cfg.gamma0, tau));
        failures.push(segment_failure(cfg.scheme, &cfg.code, &segments)?);
    }
    splits_from_failures(&failures)
}

fn check_splits(splits: &[f64], taus: &[f64]) -> Result<()> {
    if splits.len() != taus.len() + 2 {
        return Err(Error::InvalidConfig(format!(
            "{} split probabilities do not match {} retransmissions",
            splits.len(),
            taus.len()
        )));
    }
    if splits.iter().any(|&p| !(p >= 0.0)) || (splits.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!(
            "split probabilities {splits:?} are not a distribution"
        )));
    }
    Ok(())
}

/// Slots consumed by a packet that stops after `i` retransmissions.
fn cumulative_slots(taus: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    let mut out = vec![acc];
    for &t in taus {
        acc += t;
        out.push(acc);
    }
    out
}

/// Delivered bits per channel use, accounting for the slots retransmissions consume.
pub fn oharq_throughput(splits: &[f64], taus: &[f64], code: &CodeParams) -> Result<f64> {
    check_splits(splits, taus)?;
    let slots = cumulative_slots(taus);
    let fail = splits[splits.len() - 1];
    let busy: f64 = splits[..slots.len()]
        .iter()
        .zip(&slots)
        .map(|(p, s)| p * s)
        .sum::<f64>()
        + fail * slots[slots.len() - 1];
    Ok(code.rate() * (1.0 - fail) / busy)
}

/// Slots consumed by one packet.
pub fn oharq_delay_single(splits: &[f64], taus: &[f64]) -> Result<DelayProfile> {
    check_splits(splits, taus)?;
    let slots = cumulative_slots(taus);
    let mut points: Vec<(f64, f64)> = slots.iter().zip(splits).map(|(&s, &p)| (s, p)).collect();
    points.push((slots[slots.len() - 1], splits[splits.len() - 1]));
    DelayProfile::from_points(&points)
}

/// Slots consumed by a stream of `packets` independent packets.
pub fn oharq_delay_stream(single: &DelayProfile, packets: u64) -> Result<DelayProfile> {
    single.n_fold(packets)
}

/// Split probabilities `[p_0, p_1, p_e]` with one retransmission over a
/// fading channel that moves one step between the two transmissions.
pub fn oharq_fading_m1(model: &FadingModel, cfg: &HarqConfig) -> Result<[f64; 3]> {
    cfg.validate_orthogonal()?;
    model.validate()?;
    if cfg.taus.len() != 1 {
        return Err(Error::InvalidConfig(format!(
            "the fading baseline supports one retransmission, got {}",
            cfg.taus.len()
        )));
    }
    let tau = cfg.taus[0];
    let l_count = model.states();
    let mut out = [0.0; 3];
    for l in 0..l_count {
        let gamma_l = model.state_snrs[l];
        let q = model.marginals[l];
        let first = segment_failure(cfg.scheme, &cfg.code, &[(gamma_l, 1.0)])?;
        out[0] += q * (1.0 - first);
        for k in 0..l_count {
            let p_lk = model.transitions.get(l, k);
            if p_lk == 0.0 {
                continue;
            }
            let both = segment_failure(
                cfg.scheme,
                &cfg.code,
                &[(gamma_l, 1.0), (model.state_snrs[k], tau)],
            )?;
            out[1] += q * p_lk * clean_probability(first - both, l)?;
            out[2] += q * p_lk * both;
        }
    }
    Ok(out)
}
