//! Oracles and shared setups for the integration tests.
#![allow(dead_code)]

use nharq::fsmc::{build_fsmc, states_for_partition_parameter};
use nharq::markov::{long_run_distribution, TransitionMatrix};
use nharq::sim::{superposed_failures, SimConfig};
use nharq::{
    db_to_linear, CodeParams, DispersionScale, FadingModel, FadingSpec, HarqConfig, Scheme,
};

pub mod props;

pub const PARTITION_PARAMETER: f64 = 3.0446;

pub fn code(k: u32, n: u32) -> CodeParams {
    CodeParams::new(k, n).unwrap()
}

/// The convention under which the reference curves were computed.
pub fn nats(k: u32, n: u32) -> CodeParams {
    code(k, n).with_dispersion(DispersionScale::Nats)
}

/// Fading channel of the table scenarios at a normalized Doppler `f_D t_TB`.
pub fn table_channel(doppler_block: f64, snr_db: f64) -> FadingModel {
    let states = states_for_partition_parameter(PARTITION_PARAMETER, doppler_block).unwrap();
    build_fsmc(&FadingSpec::from_normalized(
        doppler_block,
        100,
        db_to_linear(snr_db),
        states,
    ))
    .unwrap()
}

/// Binomial law of the slots taken by `packets` packets with one orthogonal
/// retransmission of length `tau`: each packet independently needs it with
/// probability `eps`. Returns `(delay, mass)` points.
pub fn binomial_stream_delay(packets: u64, eps: f64, tau: f64) -> Vec<(f64, f64)> {
    let n = packets as f64;
    let mut out = Vec::with_capacity(packets as usize + 1);
    let mut coeff = 1.0f64;
    for i in 0..=packets {
        if i > 0 {
            coeff *= (packets - i + 1) as f64 / i as f64;
        }
        let mass = coeff * eps.powi(i as i32) * (1.0 - eps).powi((packets - i) as i32);
        out.push((n + i as f64 * tau, mass));
    }
    out
}

/// Exact chain of a stream with two retransmissions whose state is the pair
/// (final state of the last packet, final state of the one before). Uses
/// the same per-packet failure lists as the simulator, so it describes the
/// simulated process without averaging over the packet in between.
pub fn pair_chain_occupancy(cfg: &HarqConfig) -> Vec<f64> {
    let states = cfg.m + 1;
    let size = states * states;
    let mut t = TransitionMatrix::zeros(size);
    for previous in 0..states {
        for earlier in 0..states {
            let f = superposed_failures(cfg, previous, earlier, &[cfg.gamma0; 3]).unwrap();
            let from = previous * states + earlier;
            let mut rest = 1.0;
            for (j, &fail) in f.iter().enumerate() {
                t.set(from, j * states + previous, rest - fail);
                rest = fail;
            }
            t.set(from, (states - 1) * states + previous, rest);
        }
    }
    let mut start = vec![0.0; size];
    start[0] = 1.0;
    let p = long_run_distribution(&t, &start).unwrap();
    (0..states)
        .map(|j| (0..states).map(|b| p[j * states + b]).sum())
        .collect()
}

pub fn sim_awgn_m2(snr_db: f64) -> HarqConfig {
    HarqConfig::new(
        code(50, 100),
        Scheme::Ir,
        vec![0.35],
        vec![1.0],
        db_to_linear(snr_db),
    )
    .unwrap()
}

pub fn sim_awgn_m3(snr_db: f64) -> HarqConfig {
    HarqConfig::new(
        code(50, 100),
        Scheme::Ir,
        vec![0.3, 0.3],
        vec![1.0, 1.0],
        db_to_linear(snr_db),
    )
    .unwrap()
}

pub fn describe(sim: &SimConfig) -> String {
    format!(
        "{:?} m={} {:?} gamma0={:.4} packets={}x{}",
        sim.mode,
        sim.transmissions(),
        sim.harq.scheme,
        sim.harq.gamma0,
        sim.replicas,
        sim.packets
    )
}
