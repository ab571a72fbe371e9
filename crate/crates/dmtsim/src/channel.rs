//! Optical field-level channel: Mach-Zehnder electro-optic conversion,
//! mux/demux filtering (detuned for vestigial-sideband operation),
//! dispersive and optionally nonlinear fiber propagation, ASE noise loading
//! to a target OSNR, and square-law photodetection with an electrical
//! bandwidth limit.
//!
//! All spectral operations act circularly on the block, which matches the
//! DAC-memory playback of the frame: the simulated block is one period of
//! the steady-state repeated waveform.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::math::db_to_linear;
use crate::signal::{SignalBlock, SimRng};
use crate::transform::{bin_frequencies, fft, ifft};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// OSNR reference bandwidth (0.1 nm around 1550 nm), Hz.
pub const OSNR_REF_BANDWIDTH: f64 = 12.5e9;

/// Fiber span parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiberParams {
    /// Dispersion coefficient, ps/(nm km).
    #[serde(rename = "D")]
    pub dispersion: f64,
    /// Length, km.
    #[serde(rename = "L")]
    pub length_km: f64,
    /// Attenuation, dB/km.
    pub alpha_db_per_km: f64,
    /// Kerr coefficient, 1/(W km).
    pub gamma: f64,
    /// Optical carrier frequency, Hz.
    #[serde(rename = "f0")]
    pub carrier_hz: f64,
}

impl Default for FiberParams {
    fn default() -> Self {
        Self {
            dispersion: 17.0,
            length_km: 80.0,
            alpha_db_per_km: 0.2,
            gamma: 1.3,
            carrier_hz: 194.25e12,
        }
    }
}

impl FiberParams {
    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    /// Frequency of the n-th dispersion-induced power-fading null for
    /// intensity modulation with direct detection, Hz.
    pub fn fading_null_hz(&self, n: u32) -> f64 {
        let dl = self.dispersion * 1e-6 * self.length_km * 1e3; // s/m
        let lambda = self.wavelength_m();
        ((2.0 * n as f64 - 1.0) * SPEED_OF_LIGHT / (2.0 * dl * lambda * lambda)).sqrt()
    }
}

/// Super-Gaussian optical bandpass.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    /// 3-dB bandwidth, GHz.
    pub bw_3db_ghz: f64,
    /// Super-Gaussian order; 1 is a plain Gaussian.
    pub order: u32,
    /// Passband center relative to the optical carrier, GHz.
    pub center_offset_ghz: f64,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self {
            bw_3db_ghz: 39.0,
            order: 3,
            center_offset_ghz: 0.0,
        }
    }
}

impl FilterParams {
    /// Same filter shifted in frequency, used for VSB detuning.
    pub fn offset_by_ghz(&self, delta_ghz: f64) -> Self {
        Self {
            center_offset_ghz: self.center_offset_ghz + delta_ghz,
            ..self.clone()
        }
    }

    /// Amplitude response at baseband frequency `f` (Hz from the carrier).
    pub fn amplitude(&self, f: f64) -> f64 {
        let half_bw = self.bw_3db_ghz * 1e9 / 2.0;
        let x = (f - self.center_offset_ghz * 1e9) / half_bw;
        (-0.5 * std::f64::consts::LN_2 * x.powi(2 * self.order as i32)).exp()
    }
}

/// Noise injected into the link.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseParams {
    /// OSNR target in dB over the 12.5 GHz reference bandwidth; `None`
    /// disables noise loading.
    pub target_osnr_db: Option<f64>,
    /// Variance of additive Gaussian noise on the detected photocurrent;
    /// `None` disables it.
    pub rx_electrical_noise: Option<f64>,
}

/// Multiplies the block spectrum by `response(f)`.
fn apply_freq_response(block: &SignalBlock, response: impl Fn(f64) -> Complex64) -> SignalBlock {
    let mut spec = block.samples.clone();
    fft(&mut spec);
    for (s, f) in spec
        .iter_mut()
        .zip(bin_frequencies(block.samples.len(), block.sample_rate))
    {
        *s *= response(f);
    }
    ifft(&mut spec);
    SignalBlock {
        samples: spec,
        sample_rate: block.sample_rate,
    }
}

/// Dual-drive push-pull MZM at the field level (chirp-free):
/// `E(t) = cos((pi/2) * mod_index * d(t) + bias_phase)` with `d(t)` the
/// drive normalized to unit peak. A bias of pi/4 is the linear-field
/// quadrature point.
pub fn mzm_modulate(drive: &SignalBlock, mod_index: f64, bias_phase: f64) -> Result<SignalBlock> {
    if !drive.is_real() {
        return Err(Error::invalid("MZM drive must be real"));
    }
    let peak = drive.samples.iter().map(|x| x.re.abs()).fold(0.0, f64::max);
    let scale = if peak > 0.0 {
        std::f64::consts::FRAC_PI_2 * mod_index / peak
    } else {
        0.0
    };
    let samples = drive
        .samples
        .iter()
        .map(|x| Complex64::new((scale * x.re + bias_phase).cos(), 0.0))
        .collect();
    SignalBlock::new(samples, drive.sample_rate)
}

/// Optical bandpass with the super-Gaussian amplitude response
/// `H(f) = exp(-ln2/2 * ((f - f_c) / (bw/2))^(2 order))`.
pub fn optical_bandpass(field: &SignalBlock, filt: &FilterParams) -> SignalBlock {
    apply_freq_response(field, |f| Complex64::new(filt.amplitude(f), 0.0))
}

/// Chromatic dispersion as the all-pass
/// `H(f) = exp(j pi D L (lambda^2 / c) f^2)`.
pub fn apply_dispersion(field: &SignalBlock, fiber: &FiberParams) -> SignalBlock {
    dispersion_over(field, fiber, fiber.length_km)
}

fn dispersion_over(field: &SignalBlock, fiber: &FiberParams, length_km: f64) -> SignalBlock {
    let dl = fiber.dispersion * 1e-6 * length_km * 1e3; // s/m
    let lambda = fiber.wavelength_m();
    let coef = std::f64::consts::PI * dl * lambda * lambda / SPEED_OF_LIGHT;
    apply_freq_response(field, |f| Complex64::from_polar(1.0, coef * f * f))
}

/// Symmetric split-step Fourier propagation with Kerr nonlinearity and
/// attenuation.
///
/// The field is first scaled so its mean power equals `launch_power_dbm`.
/// Each step applies a leading dispersion half-step (merged with the
/// previous step's trailing half), the nonlinear phase
/// `exp(j gamma |E|^2 L_eff)` at the step-entry power, and the full-step
/// attenuation.
pub fn ssfm_propagate(
    field: &SignalBlock,
    fiber: &FiberParams,
    launch_power_dbm: f64,
    step_km: f64,
) -> Result<SignalBlock> {
    if step_km <= 0.0 {
        return Err(Error::invalid("step_km must be positive"));
    }
    let total = fiber.length_km;
    if total > 0.0 && step_km > total {
        return Err(Error::invalid("step_km exceeds the fiber length"));
    }

    let p_launch = 10f64.powf((launch_power_dbm - 30.0) / 10.0);
    let p_now = field.power();
    if p_now <= 0.0 {
        return Err(Error::invalid("cannot scale a zero-power field"));
    }
    let mut out = field.clone();
    let amp = (p_launch / p_now).sqrt();
    for s in out.samples.iter_mut() {
        *s *= amp;
    }
    if total == 0.0 {
        return Ok(out);
    }

    let alpha_np = fiber.alpha_db_per_km * std::f64::consts::LN_10 / 10.0; // power nepers/km
    let n_steps = (total / step_km).ceil() as usize;
    let mut carry = 0.0;
    let mut z = 0.0;
    for _ in 0..n_steps {
        let dz = step_km.min(total - z);
        z += dz;
        out = dispersion_over(&out, fiber, carry + dz / 2.0);
        carry = dz / 2.0;

        let l_eff = if alpha_np > 0.0 {
            (1.0 - (-alpha_np * dz).exp()) / alpha_np
        } else {
            dz
        };
        let loss_amp = (-alpha_np * dz / 2.0).exp();
        for s in out.samples.iter_mut() {
            let phase = fiber.gamma * s.norm_sqr() * l_eff;
            *s *= Complex64::from_polar(loss_amp, phase);
        }
    }
    Ok(dispersion_over(&out, fiber, carry))
}

/// Adds circular complex white Gaussian noise so the OSNR against the
/// current signal power, referenced to 12.5 GHz, hits the target.
pub fn load_ase(field: &SignalBlock, noise: &NoiseParams, rng: &mut SimRng) -> Result<SignalBlock> {
    let target = match noise.target_osnr_db {
        Some(t) if t.is_finite() => t,
        _ => return Ok(field.clone()),
    };
    let p_sig = field.power();
    if p_sig <= 0.0 {
        return Err(Error::invalid("noise loading needs positive signal power"));
    }
    let density = ase_density(p_sig, target);
    let var = density * field.sample_rate; // total noise power over the simulated band
    let samples = field
        .samples
        .iter()
        .map(|&s| s + rng.complex_normal(var))
        .collect();
    SignalBlock::new(samples, field.sample_rate)
}

/// Noise spectral density that puts `signal_power` at `osnr_db` in the
/// reference bandwidth.
pub fn ase_density(signal_power: f64, osnr_db: f64) -> f64 {
    signal_power / (db_to_linear(osnr_db) * OSNR_REF_BANDWIDTH)
}

fn square_law(field: &SignalBlock) -> Vec<f64> {
    field.samples.iter().map(|s| s.norm_sqr()).collect()
}

/// Normalized 3-dB frequency of the unit-delay 5th-order Bessel prototype.
fn bessel5_cutoff() -> f64 {
    use std::sync::OnceLock;
    static CUT: OnceLock<f64> = OnceLock::new();
    *CUT.get_or_init(|| {
        let mag2 = |w: f64| {
            let re = 945.0 - 420.0 * w * w + 15.0 * w.powi(4);
            let im = 945.0 * w - 105.0 * w.powi(3) + w.powi(5);
            re * re + im * im
        };
        let target = 2.0 * 945.0 * 945.0;
        let (mut lo, mut hi) = (1.0f64, 4.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mag2(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    })
}

/// Complex response of a 5th-order Bessel low-pass with the given 3-dB
/// frequency.
pub fn bessel5_response(f: f64, f_3db_hz: f64) -> Complex64 {
    let s = Complex64::new(0.0, bessel5_cutoff() * f / f_3db_hz);
    let b5 =
        s.powu(5) + 15.0 * s.powu(4) + 105.0 * s.powu(3) + 420.0 * s.powu(2) + 945.0 * s + 945.0;
    945.0 / b5
}

/// Square-law photodetection with unit responsivity: `i(t) = |E(t)|^2`,
/// then a 5th-order Bessel low-pass at `elec_bw_ghz`, AC coupling (mean
/// removal), and optional additive Gaussian electrical noise.
pub fn pin_detect(
    field: &SignalBlock,
    elec_bw_ghz: f64,
    noise: &NoiseParams,
    rng: &mut SimRng,
) -> Result<SignalBlock> {
    if elec_bw_ghz <= 0.0 {
        return Err(Error::invalid("electrical bandwidth must be positive"));
    }
    let current = SignalBlock::from_real(square_law(field), field.sample_rate)?;
    let mut filtered = apply_freq_response(&current, |f| bessel5_response(f, elec_bw_ghz * 1e9));

    let mean = filtered.samples.iter().map(|s| s.re).sum::<f64>() / filtered.len() as f64;
    for s in filtered.samples.iter_mut() {
        *s = Complex64::new(s.re - mean, 0.0);
    }
    if let Some(var) = noise.rx_electrical_noise {
        if var > 0.0 {
            let sigma = var.sqrt();
            for s in filtered.samples.iter_mut() {
                s.re += sigma * rng.std_normal();
            }
        }
    }
    Ok(filtered)
}
