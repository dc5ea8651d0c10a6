//! Figure data as CSV with fixed column order.

use std::io::Write;

use serde::{Deserialize, Serialize};

use nharq::delay::DelayProfile;
use nharq::optimizer::{SweepAxis, SweepRow};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    PerVsSnr,
    ThroughputVsSnr,
    PerSurface,
    DelayCdf,
}

impl PlotKind {
    pub fn name(self) -> &'static str {
        match self {
            PlotKind::PerVsSnr => "per_vs_snr",
            PlotKind::ThroughputVsSnr => "throughput_vs_snr",
            PlotKind::PerSurface => "per_surface",
            PlotKind::DelayCdf => "delay_cdf",
        }
    }
}

/// Result data a plot can be drawn from.
#[derive(Debug, Clone, Copy)]
pub enum PlotSource<'a> {
    Sweep {
        x_axis: SweepAxis,
        y_axis: Option<SweepAxis>,
        rows: &'a [SweepRow],
    },
    Delay(&'a DelayProfile),
}

fn mismatch(kind: PlotKind, reason: &str) -> CliError {
    CliError::ShapeMismatch {
        kind: kind.name().into(),
        reason: reason.into(),
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `source` as the CSV for `kind`. Points that failed to evaluate
/// keep their row with an empty value.
pub fn emit_plotdata<W: Write>(source: &PlotSource, kind: PlotKind, writer: W) -> Result<()> {
    match (kind, source) {
        (
            PlotKind::PerVsSnr | PlotKind::ThroughputVsSnr,
            PlotSource::Sweep {
                x_axis,
                y_axis,
                rows,
            },
        ) => {
            if *x_axis != SweepAxis::SnrDb || y_axis.is_some() {
                return Err(mismatch(kind, "needs a one-dimensional sweep over snr_db"));
            }
            let column = if kind == PlotKind::PerVsSnr {
                "per"
            } else {
                "throughput"
            };
            let mut w = csv::Writer::from_writer(writer);
            w.write_record(["snr_db", column])?;
            for r in rows.iter() {
                let v = if kind == PlotKind::PerVsSnr {
                    r.zeta
                } else {
                    r.eta
                };
                w.write_record([r.x.to_string(), cell(v)])?;
            }
            w.flush().map_err(|e| CliError::io("plot data", e))?;
            Ok(())
        }
        (
            PlotKind::PerSurface,
            PlotSource::Sweep {
                x_axis,
                y_axis,
                rows,
            },
        ) => {
            let Some(y_axis) = y_axis else {
                return Err(mismatch(kind, "needs a two-dimensional sweep"));
            };
            let mut w = csv::Writer::from_writer(writer);
            w.write_record([x_axis.name(), y_axis.name(), "per".into()])?;
            for r in rows.iter() {
                w.write_record([r.x.to_string(), cell(r.y), cell(r.zeta)])?;
            }
            w.flush().map_err(|e| CliError::io("plot data", e))?;
            Ok(())
        }
        (PlotKind::DelayCdf, PlotSource::Delay(profile)) => Ok(profile.write_csv(writer)?),
        (PlotKind::DelayCdf, PlotSource::Sweep { .. }) => {
            Err(mismatch(kind, "needs a delay distribution"))
        }
        (_, PlotSource::Delay(_)) => Err(mismatch(kind, "needs a sweep")),
    }
}
