//! Packet-error-rate minimization under a throughput floor, and parameter sweeps.
//!
//! The search runs a global grid over the ordered parameter region and then
//! a compass pattern search around the best grid point.

use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::io::Write;

use crate::awgn;
use crate::config::{db_to_linear, HarqConfig, Scheme};
use crate::error::{Error, Result};
use crate::fading;
use crate::fsmc::FadingModel;
use crate::oharq;
use crate::par::ExecPolicy;

/// Parameters are snapped to this lattice so delays stay exactly representable.
pub const PARAMETER_STEP: f64 = 1e-4;

const FEASIBILITY_SLACK: f64 = 1e-9;
const MAX_MOVES_PER_STEP: usize = 1000;

/// Which analytic model is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainKind {
    AwgnM2,
    AwgnM3,
    FadingM2,
    /// Orthogonal baseline over AWGN, any number of retransmissions.
    Orthogonal,
    /// Orthogonal baseline over the fading channel, one retransmission.
    FadingOrthogonal,
}

impl ChainKind {
    fn uses_fading(self) -> bool {
        matches!(self, ChainKind::FadingM2 | ChainKind::FadingOrthogonal)
    }

    fn is_orthogonal(self) -> bool {
        matches!(self, ChainKind::Orthogonal | ChainKind::FadingOrthogonal)
    }
}

/// Packet error rate and throughput of one parameter point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    pub zeta: f64,
    pub eta: f64,
}

/// A model together with everything but the parameters being tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    pub chain: ChainKind,
    pub template: HarqConfig,
    pub fading: Option<FadingModel>,
}

impl Evaluator {
    pub fn new(
        chain: ChainKind,
        template: HarqConfig,
        fading: Option<FadingModel>,
    ) -> Result<Self> {
        if chain.uses_fading() && fading.is_none() {
            return Err(Error::InvalidConfig(format!(
                "{chain:?} needs a fading model"
            )));
        }
        let expected = match chain {
            ChainKind::AwgnM2 | ChainKind::FadingM2 | ChainKind::FadingOrthogonal => Some(2),
            ChainKind::AwgnM3 => Some(3),
            ChainKind::Orthogonal => None,
        };
        if let Some(m) = expected {
            if template.m != m {
                return Err(Error::InvalidConfig(format!(
                    "{chain:?} needs m={m}, template has m={}",
                    template.m
                )));
            }
        }
        Ok(Evaluator {
            chain,
            template,
            fading,
        })
    }

    /// The same evaluator at another SNR (average SNR for fading channels).
    pub fn at_snr_db(&self, snr_db: f64) -> Evaluator {
        let gamma = db_to_linear(snr_db);
        Evaluator {
            chain: self.chain,
            template: self.template.with_gamma0(gamma),
            fading: self.fading.as_ref().map(|m| m.with_snr(gamma)),
        }
    }

    pub fn config_for(&self, alphas: &[f64], taus: &[f64]) -> HarqConfig {
        let taus = if self.template.scheme == Scheme::Cc {
            vec![1.0; taus.len()]
        } else {
            taus.to_vec()
        };
        HarqConfig {
            alphas: if self.chain.is_orthogonal() {
                Vec::new()
            } else {
                alphas.to_vec()
            },
            taus,
            ..self.template.clone()
        }
    }

    pub fn evaluate(&self, alphas: &[f64], taus: &[f64]) -> Result<Evaluation> {
        let cfg = self.config_for(alphas, taus);
        let code = cfg.code;
        let (zeta, eta) = match self.chain {
            ChainKind::AwgnM2 => {
                let s = awgn::solve_m2(&cfg)?;
                (s.per(), s.throughput(&code))
            }
            ChainKind::AwgnM3 => {
                let s = awgn::stationary_m3(&cfg)?;
                (s.per(), s.throughput(&code))
            }
            ChainKind::FadingM2 => {
                let s = fading::solve(&cfg, self.model()?)?;
                (s.per(), s.throughput(&code))
            }
            ChainKind::Orthogonal => {
                let splits = oharq::oharq_split_probs(&cfg)?;
                let eta = oharq::oharq_throughput(&splits, &cfg.taus, &code)?;
                (splits[splits.len() - 1], eta)
            }
            ChainKind::FadingOrthogonal => {
                let splits = oharq::oharq_fading_m1(self.model()?, &cfg)?;
                let eta = oharq::oharq_throughput(&splits, &cfg.taus, &code)?;
                (splits[2], eta)
            }
        };
        Ok(Evaluation {
            alphas: cfg.alphas,
            taus: cfg.taus,
            zeta,
            eta,
        })
    }

    fn evaluate_or_fail(&self, alphas: &[f64], taus: &[f64]) -> Result<Evaluation> {
        self.evaluate(alphas, taus)
            .map_err(|e| Error::EvaluatorFailure {
                alphas: alphas.to_vec(),
                taus: taus.to_vec(),
                source: Box::new(e),
            })
    }

    fn model(&self) -> Result<&FadingModel> {
        self.fading
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("missing fading model".into()))
    }

    fn retransmissions(&self) -> usize {
        self.template.retransmissions()
    }

    fn tunes_alpha(&self) -> bool {
        !self.chain.is_orthogonal()
    }

    fn tunes_tau(&self) -> bool {
        self.template.scheme == Scheme::Ir
    }
}

/// Grid resolution and refinement budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchSettings {
    pub resolution: f64,
    pub shrinks: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            resolution: 0.05,
            shrinks: 8,
        }
    }
}

/// Minimize the packet error rate subject to `throughput >= eta0`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationProblem {
    pub evaluator: Evaluator,
    pub eta0: f64,
    pub search: SearchSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub alpha_hat: Vec<f64>,
    pub tau_hat: Vec<f64>,
    pub zeta: f64,
    pub eta: f64,
    pub feasible: bool,
    pub trace: Vec<Evaluation>,
}

fn is_feasible(e: &Evaluation, eta0: f64) -> bool {
    e.eta >= eta0 - FEASIBILITY_SLACK
}

/// Total order used to pick the best point: feasible first, then lower error
/// rate (compared as logarithms), higher throughput, shorter first
/// retransmission and smaller first power share.
fn compare(a: &Evaluation, b: &Evaluation, eta0: f64) -> Ordering {
    let key = |e: &Evaluation| if is_feasible(e, eta0) { 0 } else { 1 };
    key(a)
        .cmp(&key(b))
        .then_with(|| a.zeta.ln().total_cmp(&b.zeta.ln()))
        .then_with(|| b.eta.total_cmp(&a.eta))
        .then_with(|| first(&a.taus).total_cmp(&first(&b.taus)))
        .then_with(|| first(&a.alphas).total_cmp(&first(&b.alphas)))
}

fn first(v: &[f64]) -> f64 {
    v.first().copied().unwrap_or(0.0)
}

fn snap(x: f64) -> f64 {
    // Dividing by the inverse step lands on the closest double to the decimal.
    (x / PARAMETER_STEP).round() / (1.0 / PARAMETER_STEP).round()
}

/// Nonincreasing sequences of length `len` over `values`.
fn ordered_sequences(values: &[f64], len: usize) -> Vec<Vec<f64>> {
    if len == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        for mut tail in ordered_sequences(&values[..=i], len - 1) {
            tail.insert(0, v);
            out.push(tail);
        }
    }
    out
}

impl OptimizationProblem {
    pub fn new(evaluator: Evaluator, eta0: f64, search: SearchSettings) -> Result<Self> {
        if !(eta0 > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "eta0={eta0} must be positive"
            )));
        }
        if !(1e-3..=0.25).contains(&search.resolution) {
            return Err(Error::InvalidConfig(format!(
                "grid resolution {} outside [1e-3, 0.25]",
                search.resolution
            )));
        }
        Ok(OptimizationProblem {
            evaluator,
            eta0,
            search,
        })
    }

    fn grid(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let steps = (1.0 / self.search.resolution).round() as usize;
        let levels: Vec<f64> = (0..=steps).map(|i| snap(i as f64 / steps as f64)).collect();
        let r = self.evaluator.retransmissions();
        let alphas = if self.evaluator.tunes_alpha() {
            ordered_sequences(&levels, r)
        } else {
            vec![Vec::new()]
        };
        let taus = if self.evaluator.tunes_tau() {
            ordered_sequences(&levels[1..], r)
        } else {
            vec![vec![1.0; r]]
        };
        let mut points = Vec::with_capacity(alphas.len() * taus.len());
        for a in &alphas {
            for t in &taus {
                points.push((a.clone(), t.clone()));
            }
        }
        points
    }

    fn admissible(&self, alphas: &[f64], taus: &[f64]) -> bool {
        alphas.iter().all(|a| (0.0..=1.0).contains(a))
            && taus.iter().all(|t| *t > 0.0 && *t <= 1.0)
            && alphas.windows(2).all(|w| w[1] <= w[0])
            && (self.evaluator.template.scheme == Scheme::Cc
                || taus.windows(2).all(|w| w[1] <= w[0]))
    }

    /// Runs the grid search and the pattern-search refinement.
    pub fn optimize(&self, policy: ExecPolicy) -> Result<OptimizationResult> {
        let grid = self.grid();
        let evaluated = policy.map(&grid, |(a, t)| self.evaluator.evaluate_or_fail(a, t));
        let mut trace = Vec::with_capacity(evaluated.len());
        for e in evaluated {
            trace.push(e?);
        }
        let mut best = trace
            .iter()
            .min_by(|a, b| compare(a, b, self.eta0))
            .cloned()
            .ok_or_else(|| Error::InvalidConfig("empty search grid".into()))?;

        let r = self.evaluator.retransmissions();
        let mut step = self.search.resolution;
        for _ in 0..=self.search.shrinks {
            for _ in 0..MAX_MOVES_PER_STEP {
                let mut improved: Option<Evaluation> = None;
                for (alphas, taus) in self.neighbours(&best, step, r) {
                    let e = self.evaluator.evaluate_or_fail(&alphas, &taus)?;
                    trace.push(e.clone());
                    let incumbent = improved.as_ref().unwrap_or(&best);
                    if compare(&e, incumbent, self.eta0) == Ordering::Less {
                        improved = Some(e);
                    }
                }
                match improved {
                    Some(e) => best = e,
                    None => break,
                }
            }
            step /= 2.0;
        }

        Ok(OptimizationResult {
            feasible: is_feasible(&best, self.eta0),
            alpha_hat: best.alphas,
            tau_hat: best.taus,
            zeta: best.zeta,
            eta: best.eta,
            trace,
        })
    }

    fn neighbours(&self, at: &Evaluation, step: f64, r: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut out = Vec::new();
        let mut push = |alphas: Vec<f64>, taus: Vec<f64>| {
            if self.admissible(&alphas, &taus)
                && (alphas != at.alphas || taus != at.taus)
                && !out.contains(&(alphas.clone(), taus.clone()))
            {
                out.push((alphas, taus));
            }
        };
        for i in 0..r {
            for sign in [1.0, -1.0] {
                if self.evaluator.tunes_alpha() {
                    let mut a = at.alphas.clone();
                    a[i] = snap((a[i] + sign * step).clamp(0.0, 1.0));
                    push(a, at.taus.clone());
                }
                if self.evaluator.tunes_tau() {
                    let mut t = at.taus.clone();
                    t[i] = snap((t[i] + sign * step).clamp(PARAMETER_STEP, 1.0));
                    push(at.alphas.clone(), t);
                }
            }
        }
        out
    }
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum SweepAxis {
    SnrDb,
    /// Power share of the retransmission with this zero-based index.
    Alpha(usize),
    /// Time share of the retransmission with this zero-based index.
    Tau(usize),
}

impl SweepAxis {
    pub fn name(&self) -> String {
        match self {
            SweepAxis::SnrDb => "snr_db".into(),
            SweepAxis::Alpha(i) => format!("alpha_{}", i + 1),
            SweepAxis::Tau(i) => format!("tau_{}", i + 1),
        }
    }

    fn apply(&self, ev: &Evaluator, value: f64) -> Result<Evaluator> {
        let mut out = ev.clone();
        match *self {
            SweepAxis::SnrDb => return Ok(ev.at_snr_db(value)),
            SweepAxis::Alpha(i) => {
                *out.template
                    .alphas
                    .get_mut(i)
                    .ok_or_else(|| Error::InvalidConfig(format!("no alpha index {i}")))? = value
            }
            SweepAxis::Tau(i) => {
                *out.template
                    .taus
                    .get_mut(i)
                    .ok_or_else(|| Error::InvalidConfig(format!("no tau index {i}")))? = value
            }
        }
        Ok(out)
    }
}

/// One sweep point; `error` is set when the model could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub x: f64,
    pub y: Option<f64>,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    pub error: Option<String>,
}

fn sweep_point(
    ev: &Evaluator,
    x: f64,
    y: Option<f64>,
    axes: (SweepAxis, Option<SweepAxis>),
) -> SweepRow {
    let result = axes.0.apply(ev, x).and_then(|e| match (axes.1, y) {
        (Some(axis), Some(v)) => axis.apply(&e, v),
        _ => Ok(e),
    });
    let result = result.and_then(|e| e.evaluate(&e.template.alphas, &e.template.taus));
    match result {
        Ok(r) => SweepRow {
            x,
            y,
            zeta: Some(r.zeta),
            eta: Some(r.eta),
            error: None,
        },
        Err(e) => SweepRow {
            x,
            y,
            zeta: None,
            eta: None,
            error: Some(e.to_string()),
        },
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Evaluates the template at each value of `axis`, ordered by value.
pub fn sweep(ev: &Evaluator, axis: SweepAxis, values: &[f64], policy: ExecPolicy) -> Vec<SweepRow> {
    let xs = sorted(values);
    policy.map(&xs, |&x| sweep_point(ev, x, None, (axis, None)))
}

/// Evaluates the template over the grid `xs` by `ys`, in long format.
pub fn sweep_surface(
    ev: &Evaluator,
    x_axis: SweepAxis,
    xs: &[f64],
    y_axis: SweepAxis,
    ys: &[f64],
    policy: ExecPolicy,
) -> Vec<SweepRow> {
    let mut points = Vec::new();
    for &x in &sorted(xs) {
        for &y in &sorted(ys) {
            points.push((x, y));
        }
    }
    policy.map(&points, |&(x, y)| {
        sweep_point(ev, x, Some(y), (x_axis, Some(y_axis)))
    })
}

/// Writes one optimization result per SNR as a table.
pub fn write_table_csv<W: Write>(writer: W, rows: &[(f64, OptimizationResult)]) -> Result<()> {
    let retx = rows.first().map(|(_, r)| r.tau_hat.len()).unwrap_or(1);
    let mut header = vec!["snr_db".to_string()];
    header.extend((1..=retx).map(|i| format!("alpha_hat_{i}")));
    header.extend((1..=retx).map(|i| format!("tau_hat_{i}")));
    header.extend(["zeta", "eta", "feasible"].map(String::from));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&header)?;
    for (snr, r) in rows {
        let mut rec = vec![snr.to_string()];
        rec.extend((0..retx).map(|i| r.alpha_hat.get(i).map(f64::to_string).unwrap_or_default()));
        rec.extend((0..retx).map(|i| r.tau_hat.get(i).map(f64::to_string).unwrap_or_default()));
        rec.push(format!("{:e}", r.zeta));
        rec.push(r.eta.to_string());
        rec.push(r.feasible.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
