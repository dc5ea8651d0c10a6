use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbl::{epsilon_cc, epsilon_ir, CodeParams, SinrSegmentList};

/// Converts a decibel value to a linear power ratio.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to decibels.
pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Combining scheme at the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    /// Incremental redundancy: each retransmission carries fresh parity.
    #[serde(rename = "ir", alias = "IR")]
    Ir,
    /// Chase combining: each retransmission repeats the codeword.
    #[serde(rename = "cc", alias = "CC")]
    Cc,
}

/// Code and protocol parameters shared by the analytic models and the simulator.
///
/// `m` is the maximum number of transmissions of a packet, so `alphas` and
/// `taus` both describe the `m - 1` retransmissions. `alphas[r]` is the share
/// of slot power and `taus[r]` the share of the slot duration given to the
/// `(r+1)`-th retransmission.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarqConfig {
    pub code: CodeParams,
    pub m: usize,
    pub scheme: Scheme,
    pub alphas: Vec<f64>,
    pub taus: Vec<f64>,
    /// Clean-slot SNR (linear, noise power normalized to one).
    pub gamma0: f64,
}

impl HarqConfig {
    /// Builds a config, forcing whole-slot retransmissions for Chase combining.
    pub fn new(
        code: CodeParams,
        scheme: Scheme,
        alphas: Vec<f64>,
        taus: Vec<f64>,
        gamma0: f64,
    ) -> Result<Self> {
        let m = alphas.len().max(taus.len()) + 1;
        let taus = match scheme {
            Scheme::Cc => vec![1.0; taus.len()],
            Scheme::Ir => taus,
        };
        let cfg = HarqConfig {
            code,
            m,
            scheme,
            alphas,
            taus,
            gamma0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds a config for the orthogonal baseline, which has no power split.
    pub fn orthogonal(
        code: CodeParams,
        scheme: Scheme,
        taus: Vec<f64>,
        gamma0: f64,
    ) -> Result<Self> {
        let taus = match scheme {
            Scheme::Cc => vec![1.0; taus.len()],
            Scheme::Ir => taus,
        };
        let cfg = HarqConfig {
            code,
            m: taus.len() + 1,
            scheme,
            alphas: Vec::new(),
            taus,
            gamma0,
        };
        cfg.validate_orthogonal()?;
        Ok(cfg)
    }

    pub fn retransmissions(&self) -> usize {
        self.m.saturating_sub(1)
    }

    pub fn with_gamma0(&self, gamma0: f64) -> Self {
        HarqConfig {
            gamma0,
            ..self.clone()
        }
    }

    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        self.with_gamma0(db_to_linear(snr_db))
    }

    /// Checks the invariants needed by the non-orthogonal models: matching
    /// vector lengths, parameter ranges and a nonincreasing hierarchy.
    pub fn validate(&self) -> Result<()> {
        self.validate_common()?;
        if self.alphas.len() != self.retransmissions() {
            return Err(Error::InvalidConfig(format!(
                "expected {} power-split ratios for m={}, got {}",
                self.retransmissions(),
                self.m,
                self.alphas.len()
            )));
        }
        for (r, &a) in self.alphas.iter().enumerate() {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::InvalidConfig(format!(
                    "alpha[{r}]={a} outside [0,1]"
                )));
            }
        }
        for w in self.alphas.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidConfig(format!(
                    "power-split ratios must be nonincreasing, got {:?}",
                    self.alphas
                )));
            }
        }
        for w in self.taus.windows(2) {
            if w[1] > w[0] {
                return Err(Error::InvalidConfig(format!(
                    "time-sharing ratios must be nonincreasing, got {:?}",
                    self.taus
                )));
            }
        }
        Ok(())
    }

    /// Checks the invariants of the orthogonal baseline, where power-split
    /// ratios are unused and retransmission lengths are unordered.
    pub fn validate_orthogonal(&self) -> Result<()> {
        self.validate_common()
    }

    fn validate_common(&self) -> Result<()> {
        self.code.validate()?;
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if self.taus.len() != self.retransmissions() {
            return Err(Error::InvalidConfig(format!(
                "expected {} time-sharing ratios for m={}, got {}",
                self.retransmissions(),
                self.m,
                self.taus.len()
            )));
        }
        for (r, &t) in self.taus.iter().enumerate() {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidConfig(format!("tau[{r}]={t} outside (0,1]")));
            }
        }
        if self.scheme == Scheme::Cc && self.taus.iter().any(|&t| t != 1.0) {
            return Err(Error::InvalidConfig(
                "Chase combining retransmits whole slots; every tau must be 1".into(),
            ));
        }
        if self.gamma0.is_nan() || self.gamma0 < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "gamma0={} must be >= 0",
                self.gamma0
            )));
        }
        Ok(())
    }
}

/// Decoding-failure probability of a packet that has seen `segments`
/// (`(sinr, fraction of n)` pairs) under the configured scheme.
///
/// Chase combining only ever sees whole-slot copies, so the SINRs of the
/// non-empty segments are combined instead of treated as parallel channels.
pub(crate) fn segment_failure(
    scheme: Scheme,
    code: &CodeParams,
    segments: &[(f64, f64)],
) -> Result<f64> {
    let list = SinrSegmentList::from_pairs(code.n, segments)?;
    match scheme {
        Scheme::Ir => epsilon_ir(&list, code),
        Scheme::Cc => {
            let copies: Vec<f64> = list.segments().iter().map(|s| s.gamma).collect();
            epsilon_cc(&copies, code)
        }
    }
}

/// SINR `a g / (1 + b g)` with the `g -> infinity` limit taken exactly.
pub(crate) fn sinr(signal: f64, interference: f64, gamma: f64) -> f64 {
    if gamma.is_infinite() {
        if interference > 0.0 {
            return signal / interference;
        }
        return if signal > 0.0 { f64::INFINITY } else { 0.0 };
    }
    signal * gamma / (1.0 + interference * gamma)
}
