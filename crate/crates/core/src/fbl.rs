//! Finite-blocklength error probabilities.
//!
//! The normal approximation over a list of parallel AWGN sub-channels is the
//! single error model used everywhere else in the crate: the protocol code
//! assembles a [`SinrSegmentList`] for a packet and asks [`epsilon_ir`] (or
//! [`epsilon_cc`] for Chase combining) how likely decoding is to fail.

use serde::{Deserialize, Serialize};
use std::f64::consts::{LOG2_E, PI};

use crate::error::{Error, Result};

/// Upper bound on the spectral efficiency accepted by [`CodeParams::new`].
const MAX_BITS_PER_SYMBOL: u32 = 20;

/// Beyond this point the Gaussian tail is evaluated with its asymptotic series.
const TAIL_SERIES_START: f64 = 8.0;

/// Gaussian tail probability `Q(x) = P(Z > x)` for a standard normal `Z`.
///
/// Uses `erfc` in the bulk and the asymptotic expansion
/// `phi(x)/x * sum (-1)^k (2k-1)!! / x^(2k)` in the upper tail so that the
/// relative accuracy holds for error rates far below `1e-20`.
pub fn q_function(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == f64::INFINITY {
        return 0.0;
    }
    if x == f64::NEG_INFINITY {
        return 1.0;
    }
    if x <= TAIL_SERIES_START {
        return 0.5 * libm::erfc(x / std::f64::consts::SQRT_2);
    }
    if x >= 40.0 {
        return 0.0;
    }
    let density = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let inv_x2 = 1.0 / (x * x);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let next = -term * (2 * k - 1) as f64 * inv_x2;
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    density / x * sum
}

/// How the channel dispersion is scaled relative to the information density.
///
/// `Bits` is the textbook form `V = (1 - (1+g)^-2) log2(e)^2`, consistent with
/// capacity measured in bits. `Nats` drops the `log2(e)^2` factor while the
/// capacity term stays in bits; the reference N-HARQ tables were generated with
/// this convention, so it is kept available for reproducing them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersionScale {
    #[default]
    Bits,
    Nats,
}

impl DispersionScale {
    fn factor(self) -> f64 {
        match self {
            DispersionScale::Bits => LOG2_E * LOG2_E,
            DispersionScale::Nats => 1.0,
        }
    }
}

/// Channel dispersion of a real-valued-input AWGN channel at linear SINR `gamma`, in bits².
pub fn dispersion(gamma: f64) -> f64 {
    dispersion_scaled(gamma, DispersionScale::Bits)
}

/// Channel dispersion under an explicit [`DispersionScale`].
pub fn dispersion_scaled(gamma: f64, scale: DispersionScale) -> f64 {
    if gamma == f64::INFINITY {
        return scale.factor();
    }
    let inv = 1.0 / (1.0 + gamma);
    (1.0 - inv * inv) * scale.factor()
}

/// Information bits and first-transmission blocklength of a packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeParams {
    pub k: u32,
    pub n: u32,
    #[serde(default)]
    pub dispersion: DispersionScale,
}

impl CodeParams {
    pub fn new(k: u32, n: u32) -> Result<Self> {
        let code = CodeParams {
            k,
            n,
            dispersion: DispersionScale::Bits,
        };
        code.validate()?;
        Ok(code)
    }

    pub fn with_dispersion(mut self, scale: DispersionScale) -> Self {
        self.dispersion = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidCode("blocklength n must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::InvalidCode(
                "information bits k must be positive".into(),
            ));
        }
        if u64::from(self.k) > u64::from(self.n) * u64::from(MAX_BITS_PER_SYMBOL) {
            return Err(Error::InvalidCode(format!(
                "k={} exceeds {} bits per symbol at n={}",
                self.k, MAX_BITS_PER_SYMBOL, self.n
            )));
        }
        Ok(())
    }

    /// Nominal code rate `k/n`, the throughput ceiling of N-HARQ.
    pub fn rate(&self) -> f64 {
        f64::from(self.k) / f64::from(self.n)
    }
}

/// One constant-SINR stretch of a codeword, as a fraction of the blocklength.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub gamma: f64,
    pub fraction: f64,
}

/// Ordered SINR segments observed by one packet across all its transmissions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SinrSegmentList {
    segments: Vec<Segment>,
    base_n: u32,
}

impl SinrSegmentList {
    pub fn new(base_n: u32) -> Self {
        SinrSegmentList {
            segments: Vec::new(),
            base_n,
        }
    }

    pub fn from_pairs(base_n: u32, pairs: &[(f64, f64)]) -> Result<Self> {
        let mut list = Self::new(base_n);
        for &(gamma, fraction) in pairs {
            list.push(gamma, fraction)?;
        }
        Ok(list)
    }

    /// Appends a segment. Zero-length segments are dropped silently since the
    /// normal approximation is undefined for them.
    pub fn push(&mut self, gamma: f64, fraction: f64) -> Result<()> {
        if gamma.is_nan() || gamma < 0.0 {
            return Err(Error::InvalidConfig(format!("SINR {gamma} must be >= 0")));
        }
        if fraction.is_nan() || fraction < 0.0 || fraction.is_infinite() {
            return Err(Error::InvalidConfig(format!(
                "blocklength fraction {fraction} must be finite and >= 0"
            )));
        }
        if fraction < ZERO_FRACTION {
            return Ok(());
        }
        self.segments.push(Segment { gamma, fraction });
        Ok(())
    }

    /// Chainable variant of [`push`](Self::push) for building fixed catalogs.
    pub fn with(mut self, gamma: f64, fraction: f64) -> Result<Self> {
        self.push(gamma, fraction)?;
        Ok(self)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn base_n(&self) -> u32 {
        self.base_n
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    /// Symbols carried by each segment: `round(fraction * n)`, at least one.
    pub fn symbol_counts(&self) -> impl Iterator<Item = f64> + '_ {
        let n = f64::from(self.base_n);
        self.segments
            .iter()
            .map(move |s| (s.fraction * n).round().max(1.0))
    }

    pub fn total_symbols(&self) -> f64 {
        self.symbol_counts().sum()
    }
}

/// Fractions below this are treated as absent segments.
const ZERO_FRACTION: f64 = 1e-12;

/// Error probability of incremental-redundancy decoding over parallel AWGN segments.
pub fn epsilon_ir(segments: &SinrSegmentList, code: &CodeParams) -> Result<f64> {
    if segments.is_empty() {
        return Err(Error::EmptySegments);
    }
    if code.k == 0 {
        return Err(Error::InvalidCode(
            "information bits k must be positive".into(),
        ));
    }
    if segments.base_n() == 0 {
        return Err(Error::InvalidCode(
            "segment base blocklength must be positive".into(),
        ));
    }
    let mut info = 0.0;
    let mut var = 0.0;
    let mut total = 0.0;
    for (seg, count) in segments.segments().iter().zip(segments.symbol_counts()) {
        info += count * (1.0 + seg.gamma).log2();
        var += count * dispersion_scaled(seg.gamma, code.dispersion);
        total += count;
    }
    if var == 0.0 {
        // All segments silent: zero capacity cannot carry k > 0 bits.
        return Ok(1.0);
    }
    let numerator = info - f64::from(code.k) + total.log2();
    Ok(q_function(numerator / var.sqrt()).clamp(0.0, 1.0))
}

/// Error probability of Chase combining: maximum-ratio combined copies of one codeword.
pub fn epsilon_cc(gammas: &[f64], code: &CodeParams) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::EmptySegments);
    }
    let accumulated: f64 = gammas.iter().sum();
    let list = SinrSegmentList::new(code.n).with(accumulated, 1.0)?;
    epsilon_ir(&list, code)
}
