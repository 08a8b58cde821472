use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "lowercase")]
pub enum TimingAgg {
    Median,
    Mean,
}

#[derive(Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    Gpu,
    Cpu,
}

impl Device {
    pub fn as_str(self) -> &'static str {
        match self {
            Device::Gpu => "gpu",
            Device::Cpu => "cpu",
        }
    }
}

/// Everything a runner needs to judge and time one candidate. Sent verbatim
/// as the `config` object of every eval frame.
#[derive(Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub warmup_iters: u32,
    pub timed_iters: u32,
    pub timing_agg: TimingAgg,
    pub n_input_seeds: u32,
    pub atol: f64,
    pub rtol: f64,
    pub timeout_s: f64,
    pub device: Device,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            warmup_iters: 3,
            timed_iters: 10,
            timing_agg: TimingAgg::Median,
            n_input_seeds: 5,
            atol: 1e-2,
            rtol: 1e-2,
            timeout_s: 300.0,
            device: Device::Gpu,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.timed_iters < 1 {
            return bad("timed_iters must be at least 1");
        }
        if self.n_input_seeds < 1 {
            return bad("n_input_seeds must be at least 1");
        }
        if !(self.atol.is_finite() && self.atol >= 0.0) || !(self.rtol.is_finite() && self.rtol >= 0.0) {
            return bad("atol and rtol must be finite and non-negative");
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return bad("timeout_s must be finite and positive");
        }
        Ok(())
    }

    /// Compact JSON in declared field order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}
