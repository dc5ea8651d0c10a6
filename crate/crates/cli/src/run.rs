//! Executes scenarios and writes their artifacts plus a run manifest.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use nharq::fsmc::{build_fsmc, states_for_partition_parameter};
use nharq::optimizer::{
    sweep, sweep_surface, write_table_csv, ChainKind, Evaluator, OptimizationProblem, SweepRow,
};
use nharq::par::ExecPolicy;
use nharq::sim::{
    compare, simulate, simulate_traced, AnalyticReference, Channel, SimConfig, SimMode,
};
use nharq::{db_to_linear, linear_to_db, FadingModel, FadingSpec};

use crate::error::{CliError, Result};
use crate::plotdata::{emit_plotdata, PlotSource};
use crate::scenario::{Experiment, Scenario, SimSpec, DEFAULT_PARTITION_PARAMETER};

/// Flags shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    /// Overrides the scenario seed.
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: PathBuf,
}

impl RunOptions {
    fn policy(&self) -> ExecPolicy {
        ExecPolicy::with_threads(self.threads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    /// Set by validation runs.
    pub agreement: Option<bool>,
    pub summary: String,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.agreement == Some(false) {
            2
        } else {
            0
        }
    }
}

struct Artifacts<'a> {
    dir: &'a Path,
    written: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts {
            dir,
            written: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.written.push(name.to_string());
        Ok(())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    created: String,
    command: &'a [String],
    seed: Option<u64>,
    threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scenario: Option<&'a Scenario>,
    #[serde(skip_serializing_if = "Option::is_none")]
    channel_model: Option<serde_json::Value>,
    outputs: &'a [String],
}

fn write_manifest(
    artifacts: &mut Artifacts,
    opts: &RunOptions,
    command: &[String],
    seed: Option<u64>,
    scenario: Option<&Scenario>,
    model: Option<&FadingModel>,
) -> Result<()> {
    let channel_model = match model {
        Some(m) => Some(serde_json::from_str(&m.to_json()?)?),
        None => None,
    };
    let mut outputs = artifacts.written.clone();
    outputs.push("manifest.json".into());
    let manifest = Manifest {
        tool: "nharq",
        version: env!("CARGO_PKG_VERSION"),
        created: chrono::Utc::now().to_rfc3339(),
        command,
        seed,
        threads: opts.threads,
        scenario,
        channel_model,
        outputs: &outputs,
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    artifacts.write_text("manifest.json", &text)
}

fn is_orthogonal(chain: ChainKind) -> bool {
    matches!(chain, ChainKind::Orthogonal | ChainKind::FadingOrthogonal)
}

/// Runs `scenario`, resolving relative model paths against `base`.
/// `command` is echoed into the manifest.
pub fn run_scenario(
    scenario: &Scenario,
    base: Option<&Path>,
    opts: &RunOptions,
    command: &[String],
) -> Result<Outcome> {
    scenario.validate(base)?;
    let mut scenario = scenario.clone();
    if opts.seed.is_some() {
        scenario.seed = opts.seed;
    }
    let channel = scenario.channel(base)?;
    let mut artifacts = Artifacts::new(&opts.out_dir)?;
    let policy = opts.policy();

    let (agreement, summary) = match &scenario.experiment {
        Experiment::Sweep { chain, x, y, plots } => {
            let template = scenario.harq_config(is_orthogonal(*chain), channel.snr_db)?;
            let ev = Evaluator::new(*chain, template, channel.fading.clone())?;
            let xs = x.values.points()?;
            let rows = match y {
                None => sweep(&ev, x.axis, &xs, policy),
                Some(y) => sweep_surface(&ev, x.axis, &xs, y.axis, &y.values.points()?, policy),
            };
            write_sweep(
                artifacts.create("sweep.csv")?,
                x.axis.name(),
                y.as_ref().map(|a| a.axis.name()),
                &rows,
            )?;
            let source = PlotSource::Sweep {
                x_axis: x.axis,
                y_axis: y.as_ref().map(|a| a.axis),
                rows: &rows,
            };
            for kind in plots {
                emit_plotdata(
                    &source,
                    *kind,
                    artifacts.create(&format!("{}.csv", kind.name()))?,
                )?;
            }
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            (
                None,
                format!("{} points evaluated, {failed} failed", rows.len()),
            )
        }
        Experiment::Optimize {
            chain,
            eta0,
            snr_db,
            search,
        } => {
            let template = scenario.harq_config(is_orthogonal(*chain), channel.snr_db)?;
            let ev = Evaluator::new(*chain, template, channel.fading.clone())?;
            let mut results = Vec::with_capacity(snr_db.len());
            for &snr in snr_db {
                let problem = OptimizationProblem::new(ev.at_snr_db(snr), *eta0, *search)?;
                results.push((snr, problem.optimize(policy)?));
            }
            write_table_csv(artifacts.create("table.csv")?, &results)?;
            let summaries: Vec<OptimumSummary> = results.iter().map(OptimumSummary::from).collect();
            artifacts.write_text("results.json", &serde_json::to_string_pretty(&summaries)?)?;
            let feasible = results.iter().filter(|(_, r)| r.feasible).count();
            (
                None,
                format!(
                    "{} SNR points optimized, {feasible} feasible",
                    results.len()
                ),
            )
        }
        Experiment::Simulate(spec) | Experiment::Validate(spec) => {
            let validate = matches!(scenario.experiment, Experiment::Validate(_));
            let sim = sim_config(&scenario, spec, channel.snr_db, channel.fading.clone())?;
            let report = if spec.trace {
                simulate_traced(&sim, policy, artifacts.create("trace.csv")?)?
            } else {
                simulate(&sim, policy)?
            };
            artifacts.write_text("report.json", &report.to_json()?)?;
            let mut w = csv::Writer::from_writer(artifacts.create("occupancy.csv")?);
            w.write_record(["state", "probability", "std_error", "ci_low", "ci_high"])?;
            for (label, e) in report.state_labels.iter().zip(&report.occupancy) {
                w.write_record([
                    label.clone(),
                    e.value.to_string(),
                    e.std_error.to_string(),
                    e.ci_low.to_string(),
                    e.ci_high.to_string(),
                ])?;
            }
            w.flush().map_err(|e| CliError::io("occupancy.csv", e))?;
            emit_plotdata(
                &PlotSource::Delay(&report.delay),
                crate::plotdata::PlotKind::DelayCdf,
                artifacts.create("delay_cdf.csv")?,
            )?;
            let summary = format!(
                "PER {:.4e} +/- {:.1e}, throughput {:.4}",
                report.per_hat.value, report.per_hat.std_error, report.throughput_hat.value
            );
            if validate {
                let agreement = compare(&report, &AnalyticReference::for_config(&sim)?)?;
                let mut w = csv::Writer::from_writer(artifacts.create("validation.csv")?);
                w.write_record(["statistic", "simulated", "analytic", "std_error", "z"])?;
                for s in &agreement.scores {
                    w.write_record([
                        s.statistic.clone(),
                        s.simulated.to_string(),
                        s.analytic.to_string(),
                        s.std_error.to_string(),
                        s.z.to_string(),
                    ])?;
                }
                w.flush().map_err(|e| CliError::io("validation.csv", e))?;
                let verdict = if agreement.passed {
                    "agrees"
                } else {
                    "DISAGREES"
                };
                (
                    Some(agreement.passed),
                    format!("{summary}; max |z| = {:.2}, {verdict}", agreement.max_abs_z),
                )
            } else {
                (None, summary)
            }
        }
    };

    let seed = Some(effective_seed(&scenario));
    write_manifest(
        &mut artifacts,
        opts,
        command,
        seed,
        Some(&scenario),
        channel.fading.as_ref(),
    )?;
    Ok(Outcome {
        outputs: artifacts.written,
        agreement,
        summary,
    })
}

fn effective_seed(scenario: &Scenario) -> u64 {
    scenario.seed.unwrap_or(0)
}

fn sim_config(
    scenario: &Scenario,
    spec: &SimSpec,
    snr_db: f64,
    fading: Option<FadingModel>,
) -> Result<SimConfig> {
    let harq = scenario.harq_config(spec.mode == SimMode::Oharq, snr_db)?;
    let channel = fading.map(Channel::Fading).unwrap_or(Channel::Awgn);
    let mut sim = SimConfig::new(
        harq,
        channel,
        spec.mode,
        spec.packets,
        spec.replicas,
        effective_seed(scenario),
    );
    if let Some(pinned) = &spec.pinned_failures {
        sim = sim.with_pinned_failures(pinned.clone());
    }
    sim.validate()?;
    Ok(sim)
}

fn write_sweep<W: std::io::Write>(
    writer: W,
    x_name: String,
    y_name: Option<String>,
    rows: &[SweepRow],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![x_name];
    header.extend(y_name.clone());
    header.extend(["per", "throughput", "error"].map(String::from));
    w.write_record(&header)?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let mut rec = vec![r.x.to_string()];
        if y_name.is_some() {
            rec.push(cell(r.y));
        }
        rec.extend([
            cell(r.zeta),
            cell(r.eta),
            r.error.clone().unwrap_or_default(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io("sweep.csv", e))?;
    Ok(())
}

/// An optimization result without its evaluation trace.
#[derive(Serialize)]
struct OptimumSummary {
    snr_db: f64,
    alpha_hat: Vec<f64>,
    tau_hat: Vec<f64>,
    zeta: f64,
    eta: f64,
    feasible: bool,
    evaluations: usize,
}

impl From<&(f64, nharq::optimizer::OptimizationResult)> for OptimumSummary {
    fn from((snr_db, r): &(f64, nharq::optimizer::OptimizationResult)) -> Self {
        OptimumSummary {
            snr_db: *snr_db,
            alpha_hat: r.alpha_hat.clone(),
            tau_hat: r.tau_hat.clone(),
            zeta: r.zeta,
            eta: r.eta,
            feasible: r.feasible,
            evaluations: r.trace.len(),
        }
    }
}

/// Parameters of the `fsmc` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct FsmcRequest {
    pub doppler_block: f64,
    pub snr_db: f64,
    pub blocklength: u32,
    pub states: Option<usize>,
    pub partition_parameter: Option<f64>,
}

/// Builds a fading channel and writes `model.json` (loadable as a
/// `model_file` channel) and a per-state table.
pub fn run_fsmc(request: &FsmcRequest, opts: &RunOptions, command: &[String]) -> Result<Outcome> {
    if !request.snr_db.is_finite() {
        return Err(CliError::Scenario(format!(
            "snr_db must be finite, got {}",
            request.snr_db
        )));
    }
    let states = match request.states {
        Some(l) => l,
        None => states_for_partition_parameter(
            request
                .partition_parameter
                .unwrap_or(DEFAULT_PARTITION_PARAMETER),
            request.doppler_block,
        )?,
    };
    let spec = FadingSpec::from_normalized(
        request.doppler_block,
        request.blocklength,
        db_to_linear(request.snr_db),
        states,
    );
    let model = build_fsmc(&spec)?;
    let mut artifacts = Artifacts::new(&opts.out_dir)?;
    artifacts.write_text("model.json", &model.to_json()?)?;

    let mut w = csv::Writer::from_writer(artifacts.create("fsmc.csv")?);
    w.write_record([
        "state",
        "lower_threshold",
        "upper_threshold",
        "marginal",
        "snr_db",
        "stay",
        "down",
        "up",
    ])?;
    let l = model.states();
    for s in 0..l {
        let upper = model
            .thresholds
            .get(s + 1)
            .map(f64::to_string)
            .unwrap_or_default();
        let down = if s > 0 {
            model.transitions.get(s, s - 1)
        } else {
            0.0
        };
        let up = if s + 1 < l {
            model.transitions.get(s, s + 1)
        } else {
            0.0
        };
        w.write_record([
            (s + 1).to_string(),
            model.thresholds[s].to_string(),
            upper,
            model.marginals[s].to_string(),
            linear_to_db(model.state_snrs[s]).to_string(),
            model.transitions.get(s, s).to_string(),
            down.to_string(),
            up.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io("fsmc.csv", e))?;
    drop(w);

    write_manifest(&mut artifacts, opts, command, None, None, Some(&model))?;
    Ok(Outcome {
        outputs: artifacts.written,
        agreement: None,
        summary: format!(
            "{l} states, {:.3} blocks per state on average",
            model.partition_parameter()
        ),
    })
}
