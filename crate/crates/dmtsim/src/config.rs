//! Experiment configuration: every physical and DSP parameter of one link
//! realization, JSON (de)serialization with strict key checking, and dotted
//! `key=value` overrides for sweep scripting.

use serde::{Deserialize, Serialize};

use crate::channel::{FiberParams, FilterParams, NoiseParams};
use crate::loading::LoadingConfig;
use crate::{Error, Result};

/// Optical spectrum layout of the transmitted signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sideband {
    /// Mux/demux centered on the carrier; both sidebands survive.
    #[serde(rename = "DSB", alias = "dsb")]
    Dsb,
    /// Mux/demux detuned below the carrier; the upper sideband is
    /// suppressed at the filter edge.
    #[serde(rename = "VSB", alias = "vsb")]
    Vsb,
}

impl std::fmt::Display for Sideband {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Sideband::Dsb => "DSB",
            Sideband::Vsb => "VSB",
        })
    }
}

/// Transmit-side DAC/clipping settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TxConfig {
    /// Symmetric clip ratio above the waveform rms, dB.
    pub clip_ratio_db: f64,
    /// DAC resolution in bits; `None` keeps the waveform unquantized.
    pub dac_bits: Option<u8>,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            clip_ratio_db: 9.0,
            dac_bits: None,
        }
    }
}

/// Mach-Zehnder drive settings. The half-wave voltage drops out of the
/// normalized field model, so the drive strength is captured entirely by
/// the peak-over-Vpi modulation index.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MzmConfig {
    /// Drive peak over Vpi.
    pub mod_index: f64,
    /// Bias phase in radians; pi/4 is the linear-field quadrature point.
    pub bias_phase: f64,
}

impl Default for MzmConfig {
    fn default() -> Self {
        // The index trades beat-interference floors (which scale with the
        // sideband power) against noise-beat efficiency; 0.28 keeps the
        // noiseless floors error-free at full rate while staying inside
        // the FEC limit at 32 dB OSNR.
        Self {
            mod_index: 0.28,
            bias_phase: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Receiver settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RxConfig {
    /// PIN/TIA electrical 3-dB bandwidth, GHz.
    pub elec_bw_ghz: f64,
    /// Decision-directed channel update gain.
    pub update_gain: f64,
}

impl Default for RxConfig {
    fn default() -> Self {
        Self {
            elec_bw_ghz: 30.0,
            update_gain: 0.1,
        }
    }
}

/// Every parameter of one experiment point. A `LinkConfig` plus its seed
/// fully determines all waveforms, noise, and outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    /// Net payload rate to sustain, bit/s.
    pub net_rate: f64,
    /// DAC/ADC sample rate, Hz.
    pub fs: f64,
    pub fft_len: usize,
    pub cp_samples: usize,
    pub n_ts: usize,
    pub frame_symbols: usize,
    pub oversampling: f64,
    pub sideband: Sideband,
    /// Filter detuning below the carrier for VSB operation, GHz. Ignored
    /// for DSB.
    pub detune_ghz: f64,
    pub fiber: FiberParams,
    pub mux: FilterParams,
    pub demux: FilterParams,
    pub noise: NoiseParams,
    pub tx: TxConfig,
    pub mzm: MzmConfig,
    pub loading: LoadingConfig,
    pub rx: RxConfig,
    pub launch_power_dbm: f64,
    /// Propagate with the split-step Kerr model instead of the linear
    /// dispersion operator.
    pub nonlinear: bool,
    /// Split-step size for the nonlinear model, km.
    pub ssfm_step_km: f64,
    pub seed: u64,
    /// Frame cap per measurement point.
    pub frames_per_point: usize,
    /// Bit-error target per point; the run stops at whichever of the error
    /// target or the frame cap comes first.
    pub target_errors: usize,
    /// Frames used to probe the SNR profile during calibration.
    pub probe_frames: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            net_rate: 56e9,
            fs: 84e9,
            fft_len: 512,
            cp_samples: 32,
            n_ts: 5,
            frame_symbols: 128,
            oversampling: 1.05,
            sideband: Sideband::Dsb,
            detune_ghz: 20.0,
            fiber: FiberParams::default(),
            mux: FilterParams::default(),
            demux: FilterParams::default(),
            noise: NoiseParams::default(),
            tx: TxConfig::default(),
            mzm: MzmConfig::default(),
            loading: LoadingConfig::default(),
            rx: RxConfig::default(),
            launch_power_dbm: 5.0,
            nonlinear: false,
            ssfm_step_km: 1.0,
            seed: 1,
            frames_per_point: 8,
            target_errors: 100,
            probe_frames: 4,
        }
    }
}

impl LinkConfig {
    /// Parses a config from JSON; unknown keys are errors.
    pub fn from_json_str(json: &str) -> Result<Self> {
        let cfg: LinkConfig =
            serde_json::from_str(json).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies dotted `key=value` overrides (e.g. `fiber.L=40`,
    /// `noise.target_osnr_db=32`) on top of this config. Unknown paths are
    /// rejected when the patched document is re-parsed.
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for set in sets {
            let (path, raw) = set
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{set}` is not key=value")))?;
            let value: serde_json::Value = serde_json::from_str(raw)
                .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let parts: Vec<&str> = path.split('.').collect();
            let mut node = &mut doc;
            for part in &parts[..parts.len() - 1] {
                node = node
                    .as_object_mut()
                    .ok_or_else(|| {
                        Error::Config(format!("override path `{path}` does not address a field"))
                    })?
                    .entry(part.to_string())
                    .or_insert_with(|| serde_json::Value::Object(Default::default()));
            }
            node.as_object_mut()
                .ok_or_else(|| {
                    Error::Config(format!("override path `{path}` does not address a field"))
                })?
                .insert(parts[parts.len() - 1].to_string(), value);
        }
        let cfg: LinkConfig =
            serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_len.is_power_of_two() || self.fft_len < 16 {
            return Err(Error::Config(format!(
                "fft_len must be a power of two >= 16, got {}",
                self.fft_len
            )));
        }
        if self.n_ts == 0 || self.n_ts >= self.frame_symbols {
            return Err(Error::Config(
                "n_ts must be at least 1 and below frame_symbols".into(),
            ));
        }
        if self.oversampling < 1.0 {
            return Err(Error::Config("oversampling must be >= 1".into()));
        }
        if self.fs <= 0.0 || self.net_rate < 0.0 {
            return Err(Error::Config("fs must be positive, net_rate nonnegative".into()));
        }
        if self.nonlinear && self.ssfm_step_km <= 0.0 {
            return Err(Error::Config("ssfm_step_km must be positive".into()));
        }
        if self.probe_frames == 0 || self.frames_per_point == 0 {
            return Err(Error::Config("probe_frames and frames_per_point must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of data-carrying subcarriers under the oversampling factor.
    pub fn n_data(&self) -> Result<usize> {
        crate::loading::usable_subcarriers(self.fft_len, self.oversampling)
    }

    /// Occupied DMT bandwidth, Hz.
    pub fn dmt_bandwidth(&self) -> Result<f64> {
        Ok(self.n_data()? as f64 * self.fs / self.fft_len as f64)
    }

    /// Mux/demux filters as actually applied: for VSB both centers shift
    /// down by the detuning, which is equivalent to detuning the laser
    /// upward against grid-locked filters.
    pub fn effective_filters(&self) -> (FilterParams, FilterParams) {
        match self.sideband {
            Sideband::Dsb => (self.mux.clone(), self.demux.clone()),
            Sideband::Vsb => (
                self.mux.offset_by_ghz(-self.detune_ghz),
                self.demux.offset_by_ghz(-self.detune_ghz),
            ),
        }
    }

    /// Stable 64-bit fingerprint of the canonical JSON form, recorded in
    /// sweep outputs so results can be traced to their exact configuration.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        fnv1a(json.as_bytes())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// Per-point seed for a sweep: mixes the run seed with the parameter name
/// and point index so points are independent and reproducible.
pub fn derive_point_seed(seed: u64, param: &str, index: usize) -> u64 {
    let mut bytes = Vec::with_capacity(param.len() + 16);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(param.as_bytes());
    bytes.extend_from_slice(&(index as u64).to_le_bytes());
    fnv1a(&bytes)
}
