//! Built-in scenarios for the reference tables and figures.

use nharq::optimizer::{ChainKind, SearchSettings, SweepAxis};
use nharq::sim::SimMode;
use nharq::{DispersionScale, Scheme};

use crate::plotdata::PlotKind;
use crate::scenario::{AxisSpec, ChannelSpec, Experiment, HarqSpec, Scenario, SimSpec, Values};

pub const NAMES: [&str; 7] = [
    "table1",
    "table1b",
    "fig5",
    "fig6",
    "fig7",
    "fig9",
    "mc_validate",
];

fn harq(k: u32, scheme: Scheme, alphas: Vec<f64>, taus: Vec<f64>) -> HarqSpec {
    HarqSpec {
        k,
        n: 100,
        scheme,
        alphas,
        taus,
        dispersion: DispersionScale::Nats,
    }
}

fn table_snrs() -> Vec<f64> {
    (0..=8).map(|i| 12.0 + 0.5 * f64::from(i)).collect()
}

fn fading(doppler_block: f64) -> ChannelSpec {
    ChannelSpec::Fading {
        snr_db: 15.0,
        doppler_block,
        states: None,
        partition_parameter: None,
    }
}

fn range(from: f64, to: f64, step: f64) -> Values {
    Values::Range { from, to, step }
}

pub fn recipe(name: &str) -> Option<Scenario> {
    let scenario = |name: &str, harq, channel, experiment| Scenario {
        name: name.to_string(),
        harq,
        channel,
        experiment,
        seed: None,
    };
    let awgn = |snr_db| ChannelSpec::Awgn { snr_db };
    let s = match name {
        "table1" => scenario(
            name,
            harq(100, Scheme::Ir, vec![0.5], vec![0.5]),
            fading(0.0338),
            Experiment::Optimize {
                chain: ChainKind::FadingM2,
                eta0: 0.98,
                snr_db: table_snrs(),
                search: SearchSettings::default(),
            },
        ),
        "table1b" => scenario(
            name,
            harq(100, Scheme::Cc, vec![0.5], vec![1.0]),
            fading(0.04),
            Experiment::Optimize {
                chain: ChainKind::FadingM2,
                eta0: 0.99,
                snr_db: table_snrs(),
                search: SearchSettings::default(),
            },
        ),
        "fig5" => scenario(
            name,
            harq(50, Scheme::Ir, vec![0.5], vec![1.0]),
            awgn(-2.0),
            Experiment::Sweep {
                chain: ChainKind::AwgnM2,
                x: AxisSpec {
                    axis: SweepAxis::Alpha(0),
                    values: range(0.05, 1.0, 0.05),
                },
                y: None,
                plots: Vec::new(),
            },
        ),
        "fig6" => scenario(
            name,
            harq(50, Scheme::Ir, vec![0.35], vec![1.0]),
            awgn(-2.0),
            Experiment::Sweep {
                chain: ChainKind::AwgnM2,
                x: AxisSpec {
                    axis: SweepAxis::SnrDb,
                    values: range(-6.0, 0.0, 0.5),
                },
                y: None,
                plots: vec![PlotKind::PerVsSnr, PlotKind::ThroughputVsSnr],
            },
        ),
        "fig7" => scenario(
            name,
            harq(70, Scheme::Ir, vec![0.5], vec![0.5]),
            awgn(-1.0),
            Experiment::Sweep {
                chain: ChainKind::AwgnM2,
                x: AxisSpec {
                    axis: SweepAxis::Tau(0),
                    values: range(0.05, 1.0, 0.05),
                },
                y: Some(AxisSpec {
                    axis: SweepAxis::Alpha(0),
                    values: range(0.05, 1.0, 0.05),
                }),
                plots: vec![PlotKind::PerSurface],
            },
        ),
        "fig9" => scenario(
            name,
            harq(50, Scheme::Ir, vec![0.5, 0.5], vec![1.0, 1.0]),
            awgn(-4.0),
            Experiment::Sweep {
                chain: ChainKind::AwgnM3,
                x: AxisSpec {
                    axis: SweepAxis::Alpha(0),
                    values: range(0.05, 1.0, 0.05),
                },
                y: Some(AxisSpec {
                    axis: SweepAxis::Alpha(1),
                    values: range(0.05, 1.0, 0.05),
                }),
                plots: vec![PlotKind::PerSurface],
            },
        ),
        "mc_validate" => Scenario {
            seed: Some(1),
            ..scenario(
                name,
                HarqSpec {
                    dispersion: DispersionScale::Bits,
                    ..harq(50, Scheme::Ir, vec![0.35], vec![1.0])
                },
                awgn(-4.0),
                Experiment::Validate(SimSpec {
                    mode: SimMode::Nharq,
                    packets: 1000,
                    replicas: 200,
                    trace: false,
                    pinned_failures: None,
                }),
            )
        },
        _ => return None,
    };
    Some(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_recipe_builds_and_round_trips() {
        for name in NAMES {
            let s = recipe(name).unwrap();
            assert_eq!(s.name, name);
            let echo = serde_json::to_string(&s).unwrap();
            assert_eq!(Scenario::from_json(&echo, name).unwrap(), s);
        }
        assert!(recipe("fig99").is_none());
    }

    #[test]
    fn table_recipes_cover_twelve_to_sixteen_db() {
        for name in ["table1", "table1b"] {
            let Experiment::Optimize { snr_db, .. } = recipe(name).unwrap().experiment else {
                panic!("{name} is not an optimization")
            };
            assert_eq!(
                snr_db,
                vec![12.0, 12.5, 13.0, 13.5, 14.0, 14.5, 15.0, 15.5, 16.0]
            );
        }
    }
}
