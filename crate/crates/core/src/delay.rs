//! Discrete delivery-delay distributions on a fixed `1e-4` slot lattice.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};

/// Lattice resolution: delays are whole multiples of `1 / TICKS_PER_SLOT` slots.
pub const TICKS_PER_SLOT: i64 = 10_000;

/// Masses below this are discarded after each stream convolution.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Support size beyond which a stream convolution is abandoned.
pub const MAX_SUPPORT: usize = 10_000_000;

/// Converts a slot count to lattice ticks, rounding to the nearest tick.
pub fn slots_to_ticks(slots: f64) -> i64 {
    (slots * TICKS_PER_SLOT as f64).round() as i64
}

pub fn ticks_to_slots(ticks: i64) -> f64 {
    ticks as f64 / TICKS_PER_SLOT as f64
}

/// Quantiles reported for a delay distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    pub p50: f64,
    pub p99: f64,
    pub p99_999: f64,
}

/// Probability mass function over delivery delays measured in slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DelayProfileDoc", try_from = "DelayProfileDoc")]
pub struct DelayProfile {
    ticks: Vec<i64>,
    masses: Vec<f64>,
}

/// Serialized form: delays in slots alongside their masses.
#[derive(Serialize, Deserialize)]
struct DelayProfileDoc {
    delays: Vec<f64>,
    masses: Vec<f64>,
}

impl From<DelayProfile> for DelayProfileDoc {
    fn from(d: DelayProfile) -> Self {
        DelayProfileDoc {
            delays: d.support(),
            masses: d.masses,
        }
    }
}

impl TryFrom<DelayProfileDoc> for DelayProfile {
    type Error = Error;

    fn try_from(doc: DelayProfileDoc) -> Result<Self> {
        if doc.delays.len() != doc.masses.len() {
            return Err(Error::InvalidConfig(format!(
                "{} delays but {} masses",
                doc.delays.len(),
                doc.masses.len()
            )));
        }
        let points: Vec<(f64, f64)> = doc.delays.into_iter().zip(doc.masses).collect();
        DelayProfile::from_points(&points)
    }
}

impl DelayProfile {
    /// Builds a profile from `(delay in slots, mass)` points. Equal delays are
    /// merged and zero masses dropped.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        let ticks: Vec<(i64, f64)> = points
            .iter()
            .map(|&(d, p)| (slots_to_ticks(d), p))
            .collect();
        Self::from_ticks(ticks)
    }

    pub(crate) fn from_ticks(points: Vec<(i64, f64)>) -> Result<Self> {
        let mut merged: HashMap<i64, f64> = HashMap::with_capacity(points.len());
        for (t, p) in points {
            if !(p >= 0.0) || !p.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "delay mass {p} must be nonnegative"
                )));
            }
            if t < 0 {
                return Err(Error::InvalidConfig("delays must be nonnegative".into()));
            }
            if p > 0.0 {
                *merged.entry(t).or_insert(0.0) += p;
            }
        }
        let mut pairs: Vec<(i64, f64)> = merged.into_iter().collect();
        pairs.sort_unstable_by_key(|&(t, _)| t);
        let (ticks, masses) = pairs.into_iter().unzip();
        Ok(DelayProfile { ticks, masses })
    }

    /// A point mass at `slots`.
    pub fn point(slots: f64) -> Self {
        DelayProfile {
            ticks: vec![slots_to_ticks(slots)],
            masses: vec![1.0],
        }
    }

    pub fn support(&self) -> Vec<f64> {
        self.ticks.iter().map(|&t| ticks_to_slots(t)).collect()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.ticks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ticks.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass at exactly `slots` (after lattice rounding).
    pub fn mass_at(&self, slots: f64) -> f64 {
        let t = slots_to_ticks(slots);
        self.ticks
            .binary_search(&t)
            .map(|i| self.masses[i])
            .unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.ticks
            .iter()
            .zip(&self.masses)
            .map(|(&t, &p)| ticks_to_slots(t) * p)
            .sum::<f64>()
            / self.total_mass()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.ticks
            .iter()
            .zip(&self.masses)
            .map(|(&t, &p)| (ticks_to_slots(t) - mean).powi(2) * p)
            .sum::<f64>()
            / self.total_mass()
    }

    /// `(delay, mass, cumulative mass)` rows.
    pub fn cdf(&self) -> Vec<(f64, f64, f64)> {
        let mut acc = 0.0;
        self.ticks
            .iter()
            .zip(&self.masses)
            .map(|(&t, &p)| {
                acc += p;
                (ticks_to_slots(t), p, acc)
            })
            .collect()
    }

    /// Smallest delay whose cumulative mass reaches `level` of the total.
    pub fn quantile(&self, level: f64) -> Option<f64> {
        let target = level * self.total_mass();
        let mut acc = 0.0;
        for (&t, &p) in self.ticks.iter().zip(&self.masses) {
            acc += p;
            if acc >= target * (1.0 - 1e-12) {
                return Some(ticks_to_slots(t));
            }
        }
        self.ticks.last().map(|&t| ticks_to_slots(t))
    }

    pub fn quantile_summary(&self) -> Option<QuantileSummary> {
        Some(QuantileSummary {
            p50: self.quantile(0.5)?,
            p99: self.quantile(0.99)?,
            p99_999: self.quantile(0.999_99)?,
        })
    }

    /// Writes `delay,mass,cumulative_mass` rows with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["delay", "mass", "cumulative_mass"])?;
        for (d, p, c) in self.cdf() {
            w.write_record([d.to_string(), p.to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Distribution of the sum of two independent delays.
    pub fn convolve(&self, other: &DelayProfile) -> Result<DelayProfile> {
        self.convolve_pruned(other, 0.0)
    }

    fn convolve_pruned(&self, other: &DelayProfile, prune: f64) -> Result<DelayProfile> {
        let mut acc: HashMap<i64, f64> = HashMap::with_capacity(self.len() + other.len());
        for (&ta, &pa) in self.ticks.iter().zip(&self.masses) {
            for (&tb, &pb) in other.ticks.iter().zip(&other.masses) {
                *acc.entry(ta + tb).or_insert(0.0) += pa * pb;
            }
            if acc.len() > MAX_SUPPORT {
                return Err(Error::SupportExplosion { size: acc.len() });
            }
        }
        let mut pairs: Vec<(i64, f64)> = acc.into_iter().filter(|&(_, p)| p >= prune).collect();
        if pairs.len() > MAX_SUPPORT {
            return Err(Error::SupportExplosion { size: pairs.len() });
        }
        pairs.sort_unstable_by_key(|&(t, _)| t);
        let (ticks, masses) = pairs.into_iter().unzip();
        Ok(DelayProfile { ticks, masses })
    }

    /// Distribution of the total delay of `count` independent packets.
    pub fn n_fold(&self, count: u64) -> Result<DelayProfile> {
        self.n_fold_pruned(count, PRUNE_THRESHOLD)
    }

    /// [`n_fold`](Self::n_fold) with an explicit pruning threshold.
    pub fn n_fold_pruned(&self, count: u64, prune: f64) -> Result<DelayProfile> {
        if count == 0 {
            return Err(Error::InvalidConfig(
                "stream length must be at least 1".into(),
            ));
        }
        let mut result: Option<DelayProfile> = None;
        let mut base = self.clone();
        let mut remaining = count;
        loop {
            if remaining & 1 == 1 {
                result = Some(match result {
                    None => base.clone(),
                    Some(r) => r.convolve_pruned(&base, prune)?,
                });
            }
            remaining >>= 1;
            if remaining == 0 {
                break;
            }
            base = base.convolve_pruned(&base, prune)?;
        }
        Ok(result.expect("count is positive"))
    }
}
