//! Scenario files: JSON with snake_case keys, SNRs in dB.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nharq::fsmc::{build_fsmc, states_for_partition_parameter};
use nharq::optimizer::{ChainKind, SearchSettings, SweepAxis};
use nharq::sim::SimMode;
use nharq::{
    db_to_linear, CodeParams, DispersionScale, FadingModel, FadingSpec, HarqConfig, Scheme,
};

use crate::error::{CliError, Result};
use crate::plotdata::PlotKind;

/// Average fading-state duration, in transport blocks, used when a scenario
/// gives neither a state count nor a partition parameter.
pub const DEFAULT_PARTITION_PARAMETER: f64 = 3.0446;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub harq: HarqSpec,
    pub channel: ChannelSpec,
    pub experiment: Experiment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarqSpec {
    pub k: u32,
    pub n: u32,
    pub scheme: Scheme,
    /// Power shares of the retransmissions; empty for the orthogonal baseline.
    #[serde(default)]
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    #[serde(default)]
    pub dispersion: DispersionScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Awgn {
        snr_db: f64,
    },
    Fading {
        snr_db: f64,
        /// Normalized Doppler `f_D t_TB`.
        doppler_block: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        states: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partition_parameter: Option<f64>,
    },
    /// A channel model written by the `fsmc` subcommand.
    ModelFile {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        snr_db: Option<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    Sweep {
        chain: ChainKind,
        x: AxisSpec,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        y: Option<AxisSpec>,
        #[serde(default)]
        plots: Vec<PlotKind>,
    },
    Optimize {
        chain: ChainKind,
        eta0: f64,
        snr_db: Vec<f64>,
        #[serde(default)]
        search: SearchSettings,
    },
    Simulate(SimSpec),
    Validate(SimSpec),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Sweep { .. } => "sweep",
            Experiment::Optimize { .. } => "optimize",
            Experiment::Simulate(_) => "simulate",
            Experiment::Validate(_) => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub axis: SweepAxis,
    pub values: Values,
}

/// Either explicit points or an inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Values {
    List(Vec<f64>),
    Range { from: f64, to: f64, step: f64 },
}

impl Values {
    pub fn points(&self) -> Result<Vec<f64>> {
        match *self {
            Values::List(ref v) => Ok(v.clone()),
            Values::Range { from, to, step } => {
                if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
                    return Err(CliError::Scenario(format!(
                        "range from={from} to={to} step={step} is not increasing"
                    )));
                }
                let count = ((to - from) / step + 1e-9).floor() as usize;
                // Rounded to the 1e-9 lattice so ranges print cleanly.
                Ok((0..=count)
                    .map(|i| ((from + step * i as f64) * 1e9).round() / 1e9)
                    .collect())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub mode: SimMode,
    pub packets: u64,
    pub replicas: u64,
    /// Also write the per-packet trace.
    #[serde(default)]
    pub trace: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pinned_failures: Option<Vec<f64>>,
}

/// The SNR and fading model a scenario describes.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedChannel {
    pub snr_db: f64,
    pub fading: Option<FadingModel>,
}

impl Scenario {
    pub fn from_json(text: &str, origin: &str) -> Result<Scenario> {
        let scenario: Scenario =
            serde_json::from_str(text).map_err(|e| CliError::parse(origin, &e))?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let scenario = Self::from_json(&text, &path.display().to_string())?;
        scenario.validate(path.parent())?;
        Ok(scenario)
    }

    /// Checks what the types cannot: finite SNRs and existing model files.
    /// Relative model paths are resolved against `base`.
    pub fn validate(&self, base: Option<&Path>) -> Result<()> {
        let finite = |v: f64, what: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(CliError::Scenario(format!(
                    "{what} must be finite, got {v}"
                )))
            }
        };
        match &self.channel {
            ChannelSpec::Awgn { snr_db } | ChannelSpec::Fading { snr_db, .. } => {
                finite(*snr_db, "snr_db")?
            }
            ChannelSpec::ModelFile { path, snr_db } => {
                if let Some(s) = snr_db {
                    finite(*s, "snr_db")?;
                }
                let full = resolve(base, path);
                if !full.is_file() {
                    return Err(CliError::Scenario(format!(
                        "model file {} does not exist",
                        full.display()
                    )));
                }
            }
        }
        if let Experiment::Optimize { snr_db, .. } = &self.experiment {
            for &s in snr_db {
                finite(s, "snr_db")?;
            }
        }
        Ok(())
    }

    pub fn code(&self) -> Result<CodeParams> {
        Ok(CodeParams::new(self.harq.k, self.harq.n)?.with_dispersion(self.harq.dispersion))
    }

    /// Configuration at the scenario SNR; orthogonal chains and simulations
    /// ignore power shares.
    pub fn harq_config(&self, orthogonal: bool, snr_db: f64) -> Result<HarqConfig> {
        let gamma = db_to_linear(snr_db);
        let h = &self.harq;
        let cfg = if orthogonal {
            HarqConfig::orthogonal(self.code()?, h.scheme, h.taus.clone(), gamma)?
        } else {
            HarqConfig::new(
                self.code()?,
                h.scheme,
                h.alphas.clone(),
                h.taus.clone(),
                gamma,
            )?
        };
        Ok(cfg)
    }

    pub fn channel(&self, base: Option<&Path>) -> Result<ResolvedChannel> {
        match &self.channel {
            ChannelSpec::Awgn { snr_db } => Ok(ResolvedChannel {
                snr_db: *snr_db,
                fading: None,
            }),
            ChannelSpec::Fading {
                snr_db,
                doppler_block,
                states,
                partition_parameter,
            } => {
                let states = match (states, partition_parameter) {
                    (Some(l), None) => *l,
                    (None, c) => states_for_partition_parameter(
                        c.unwrap_or(DEFAULT_PARTITION_PARAMETER),
                        *doppler_block,
                    )?,
                    (Some(_), Some(_)) => {
                        return Err(CliError::Scenario(
                            "give either states or partition_parameter, not both".into(),
                        ))
                    }
                };
                let spec = FadingSpec::from_normalized(
                    *doppler_block,
                    self.harq.n,
                    db_to_linear(*snr_db),
                    states,
                );
                Ok(ResolvedChannel {
                    snr_db: *snr_db,
                    fading: Some(build_fsmc(&spec)?),
                })
            }
            ChannelSpec::ModelFile { path, snr_db } => {
                let full = resolve(base, path);
                let text = std::fs::read_to_string(&full).map_err(|e| CliError::io(&full, e))?;
                let model = FadingModel::from_json(&text)?;
                let snr_db = snr_db.unwrap_or_else(|| nharq::linear_to_db(model.spec.snr_avg));
                Ok(ResolvedChannel {
                    snr_db,
                    fading: Some(model.with_snr(db_to_linear(snr_db))),
                })
            }
        }
    }
}

fn resolve(base: Option<&Path>, path: &Path) -> PathBuf {
    match base {
        Some(b) if path.is_relative() => b.join(path),
        _ => path.to_path_buf(),
    }
}
