//! SNR estimation, margin-adaptive bit loading, margin-equalizing power
//! loading, and the framing/rate arithmetic that feeds them.
//!
//! Bit loading follows Chow's margin-adaptive iteration: round the
//! per-subcarrier capacity estimate at the current system margin, then walk
//! the margin until the total converges on the target, and finally close the
//! residual gap with one-bit adjustments on the subcarriers with the
//! largest/smallest rounding residues. Power loading equalizes the
//! per-subcarrier margin at the allocated bit counts.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::math::{db_to_linear, normal_quantile};
use crate::{Error, Result, SPEED_OF_LIGHT};

/// Estimated per-subcarrier linear SNR, indexed by subcarrier 1..n_data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnrProfile {
    /// Linear SNR per data subcarrier; element 0 is subcarrier 1.
    pub snr: Vec<f64>,
    pub fft_len: usize,
}

impl SnrProfile {
    pub fn n_data(&self) -> usize {
        self.snr.len()
    }
}

/// Per-subcarrier bit counts and power scales plus the framing parameters
/// they were computed for. Produced by calibration, consumed by the modem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubcarrierPlan {
    /// Bits per subcarrier (0 = unused), element 0 is subcarrier 1.
    pub bits: Vec<u8>,
    /// Power scale factors, mean 1 over subcarriers with bits > 0.
    pub power: Vec<f64>,
    pub fft_len: usize,
    pub cp_samples: usize,
    /// Training symbols at the head of each frame.
    pub n_ts: usize,
    /// Total symbols per frame (training + payload).
    pub frame_symbols: usize,
    pub oversampling: f64,
}

impl SubcarrierPlan {
    pub fn n_data(&self) -> usize {
        self.bits.len()
    }

    pub fn payload_symbols(&self) -> usize {
        self.frame_symbols - self.n_ts
    }

    /// Payload bits carried by one symbol.
    pub fn bits_per_symbol(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Payload bits carried by one frame.
    pub fn frame_bits(&self) -> usize {
        self.bits_per_symbol() * self.payload_symbols()
    }

    pub fn symbol_samples(&self) -> usize {
        self.fft_len + self.cp_samples
    }

    pub fn frame_samples(&self) -> usize {
        self.frame_symbols * self.symbol_samples()
    }

    pub fn active_subcarriers(&self) -> usize {
        self.bits.iter().filter(|&&b| b > 0).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits.len() != self.power.len() {
            return Err(Error::invalid("bits/power length mismatch"));
        }
        if self.n_ts >= self.frame_symbols {
            return Err(Error::invalid("n_ts must be below frame_symbols"));
        }
        if self.bits.len() > self.fft_len / 2 - 1 {
            return Err(Error::invalid("more subcarriers than the FFT supports"));
        }
        let active: Vec<usize> = (0..self.bits.len()).filter(|&k| self.bits[k] > 0).collect();
        for k in 0..self.bits.len() {
            if self.bits[k] == 0 && self.power[k] != 0.0 {
                return Err(Error::invalid(format!(
                    "subcarrier {} has power but no bits",
                    k + 1
                )));
            }
        }
        if !active.is_empty() {
            let mean: f64 =
                active.iter().map(|&k| self.power[k]).sum::<f64>() / active.len() as f64;
            if (mean - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "mean power over active subcarriers is {mean}, not 1"
                )));
            }
        }
        Ok(())
    }
}

/// Knobs of the loading algorithms.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadingConfig {
    /// SNR gap to capacity in dB.
    pub gap_db: f64,
    /// Largest constellation order handed out.
    pub b_max: u8,
    /// Margin iteration stops once the allocation is within this many bits
    /// of the target; the residue adjustment closes the rest.
    pub margin_tol_bits: f64,
    pub max_iters: usize,
    /// Cap applied to estimated SNR so noiseless probes stay finite, dB.
    pub snr_ceiling_db: f64,
}

impl Default for LoadingConfig {
    fn default() -> Self {
        Self {
            gap_db: gap_db_for_target_ber(1e-3),
            b_max: 8,
            margin_tol_bits: 2.0,
            max_iters: 32,
            snr_ceiling_db: 60.0,
        }
    }
}

/// SNR gap for uncoded QAM at a target decision error rate `p`:
/// `Gamma = Phi^-1(1 - p/2)^2 / 3`, returned in dB.
pub fn gap_db_for_target_ber(p: f64) -> f64 {
    let q = normal_quantile(1.0 - p / 2.0);
    10.0 * (q * q / 3.0).log10()
}

/// Number of data-carrying subcarriers: `floor((N/2 - 1) / oversampling)`.
///
/// Subcarriers above this index are forced to zero everywhere in the chain.
pub fn usable_subcarriers(fft_len: usize, oversampling: f64) -> Result<usize> {
    if !fft_len.is_power_of_two() || fft_len < 4 {
        return Err(Error::invalid("fft_len must be a power of two"));
    }
    if oversampling < 1.0 {
        return Err(Error::invalid("oversampling must be >= 1"));
    }
    Ok(((fft_len / 2 - 1) as f64 / oversampling).floor() as usize)
}

/// Minimum cyclic prefix, in samples, that covers the chromatic-dispersion
/// delay spread: `ceil(fs * D * L * (c / f0^2) * B_dmt)`.
///
/// `d` in ps/(nm km), `l` in km, `f0`/`b_dmt`/`fs` in Hz. Monotone
/// nondecreasing in each of `d`, `l`, `b_dmt`.
pub fn cp_min_samples(d: f64, l: f64, f0: f64, b_dmt: f64, fs: f64) -> Result<usize> {
    if d < 0.0 || l < 0.0 || b_dmt < 0.0 || fs < 0.0 {
        return Err(Error::invalid("dispersion inputs must be nonnegative"));
    }
    if f0 <= 0.0 {
        return Err(Error::invalid("carrier frequency must be positive"));
    }
    // D [ps/(nm km)] * L [km] = D*L * 1e-3 s/m.
    let dl_s_per_m = d * l * 1e-3;
    let spread_s = dl_s_per_m * (SPEED_OF_LIGHT / (f0 * f0)) * b_dmt;
    Ok((spread_s * fs).ceil() as usize)
}

/// Bits one payload symbol must carry so that a frame with `n_ts` training
/// symbols and `cp` prefix samples still delivers `net_rate` bit/s:
/// `ceil(net_rate * frame_symbols * (N + cp) / (fs * (frame_symbols - n_ts)))`.
pub fn rate_budget(
    net_rate: f64,
    fft_len: usize,
    cp_samples: usize,
    n_ts: usize,
    frame_symbols: usize,
    fs: f64,
) -> Result<usize> {
    if n_ts >= frame_symbols {
        return Err(Error::invalid("n_ts must be below frame_symbols"));
    }
    if net_rate < 0.0 || fs <= 0.0 {
        return Err(Error::invalid("rates must be nonnegative, fs positive"));
    }
    // Exact integer path when the rates are integral Hz (they always are in
    // practice); otherwise a float with a one-ulp-scale slack before ceil.
    if net_rate.fract() == 0.0 && fs.fract() == 0.0 && net_rate < 2e18 && fs < 2e18 {
        let num = net_rate as u128 * frame_symbols as u128 * (fft_len + cp_samples) as u128;
        let den = fs as u128 * (frame_symbols - n_ts) as u128;
        return Ok(num.div_ceil(den) as usize);
    }
    let x = net_rate * frame_symbols as f64 * (fft_len + cp_samples) as f64
        / (fs * (frame_symbols - n_ts) as f64);
    Ok((x - 1e-9).ceil().max(0.0) as usize)
}

/// Data-aided per-subcarrier SNR from equalized probe symbols.
///
/// `rx` and `tx` are indexed `[subcarrier][symbol]`; `tx` is the known
/// transmitted probe. Returns `E|X|^2 / E|Y - X|^2` per subcarrier, capped
/// at the configured ceiling (which is also what a zero-error subcarrier
/// reports).
pub fn estimate_snr(
    rx: &[Vec<Complex64>],
    tx: &[Vec<Complex64>],
    fft_len: usize,
    snr_ceiling_db: f64,
) -> Result<SnrProfile> {
    if rx.len() != tx.len() || rx.is_empty() {
        return Err(Error::invalid("rx/tx subcarrier count mismatch"));
    }
    let ceiling = db_to_linear(snr_ceiling_db);
    let mut snr = Vec::with_capacity(rx.len());
    for (yk, xk) in rx.iter().zip(tx) {
        if yk.len() != xk.len() || yk.len() < 10 {
            return Err(Error::invalid(
                "need at least 10 probe symbols per subcarrier",
            ));
        }
        let sig: f64 = xk.iter().map(|x| x.norm_sqr()).sum();
        let err: f64 = yk.iter().zip(xk).map(|(y, x)| (y - x).norm_sqr()).sum();
        let s = if err == 0.0 {
            ceiling
        } else {
            (sig / err).min(ceiling)
        };
        snr.push(s);
    }
    Ok(SnrProfile { snr, fft_len })
}

/// Chow's margin-adaptive bit loading.
///
/// Allocates exactly `target_bits` across the profile when feasible; each
/// subcarrier gets at most `cfg.b_max` bits and zero-SNR subcarriers get
/// none. Ties in the final one-bit adjustment go to the lowest subcarrier
/// index.
pub fn chow_bitload(snr: &SnrProfile, target_bits: usize, cfg: &LoadingConfig) -> Result<Vec<u8>> {
    let n = snr.snr.len();
    if n == 0 {
        return Err(Error::invalid("empty SNR profile"));
    }
    let usable = snr.snr.iter().filter(|&&s| s > 0.0).count();
    if target_bits > usable * cfg.b_max as usize {
        return Err(Error::Infeasible(format!(
            "target {target_bits} bits exceeds {} achievable on {usable} usable subcarriers",
            usable * cfg.b_max as usize
        )));
    }

    let (mut bits, exact, _margin_db) = chow_iterate(snr, target_bits, cfg);
    let mut total: isize = bits.iter().map(|&b| b as isize).sum();
    let target = target_bits as isize;

    if (total - target).unsigned_abs() > n + usable * cfg.b_max as usize {
        return Err(Error::invalid(
            "bit loading failed to converge on a pathological profile",
        ));
    }

    // Residue of subcarrier k relative to its current allocation; adding a
    // bit costs 1.0 of residue, removing one refunds it.
    let mut residue: Vec<f64> = exact
        .iter()
        .zip(&bits)
        .map(|(&e, &b)| e - b as f64)
        .collect();

    while total < target {
        let mut best: Option<usize> = None;
        for k in 0..n {
            if snr.snr[k] > 0.0 && bits[k] < cfg.b_max {
                match best {
                    Some(j) if residue[k] <= residue[j] => {}
                    _ => best = Some(k),
                }
            }
        }
        let k = best.expect("feasibility was checked");
        bits[k] += 1;
        residue[k] -= 1.0;
        total += 1;
    }
    while total > target {
        let mut worst: Option<usize> = None;
        for k in 0..n {
            if bits[k] > 0 {
                match worst {
                    Some(j) if residue[k] >= residue[j] => {}
                    _ => worst = Some(k),
                }
            }
        }
        let k = worst.expect("positive total implies loaded subcarriers");
        bits[k] -= 1;
        residue[k] += 1.0;
        total -= 1;
    }
    Ok(bits)
}

/// The margin-walk portion of Chow's algorithm, before the exact-sum
/// adjustment. Returns the rounded allocation, its exact (unrounded)
/// bit values, and the converged margin in dB.
fn chow_iterate(
    snr: &SnrProfile,
    target_bits: usize,
    cfg: &LoadingConfig,
) -> (Vec<u8>, Vec<f64>, f64) {
    let gamma = db_to_linear(cfg.gap_db);
    let n = snr.snr.len();
    let mut margin_db = 0.0;
    let mut bits = vec![0u8; n];
    let mut exact = vec![0f64; n];

    for iter in 0..=cfg.max_iters {
        let margin_lin = db_to_linear(margin_db);
        let mut total = 0isize;
        let mut used = 0usize;
        for k in 0..n {
            exact[k] = if snr.snr[k] > 0.0 {
                (1.0 + snr.snr[k] / (gamma * margin_lin)).log2()
            } else {
                0.0
            };
            let b = exact[k].round().clamp(0.0, cfg.b_max as f64) as u8;
            bits[k] = b;
            if b > 0 {
                total += b as isize;
                used += 1;
            }
        }
        let diff = total - target_bits as isize;
        if diff == 0 || (iter == cfg.max_iters) || (diff.abs() as f64) <= cfg.margin_tol_bits {
            break;
        }
        let used = if used == 0 { n } else { used };
        // Chow's update: spread the excess evenly over the used carriers.
        margin_db += diff as f64 / used as f64 * 10.0 * 2f64.log10();
    }
    (bits, exact, margin_db)
}

/// Cioffi's margin-equalizing power allocation.
///
/// `P_k` is proportional to `(2^b_k - 1) * Gamma / snr_k` on loaded
/// subcarriers and zero elsewhere, normalized to mean 1 over the loaded
/// set, so every loaded subcarrier ends up with the same margin.
pub fn cioffi_powerload(snr: &SnrProfile, bits: &[u8], cfg: &LoadingConfig) -> Result<Vec<f64>> {
    if bits.len() != snr.snr.len() {
        return Err(Error::invalid("bits/profile length mismatch"));
    }
    let gamma = db_to_linear(cfg.gap_db);
    let mut power = vec![0.0; bits.len()];
    let mut active = 0usize;
    let mut sum = 0.0;
    for k in 0..bits.len() {
        if bits[k] == 0 {
            continue;
        }
        if snr.snr[k] <= 0.0 {
            return Err(Error::invalid(format!(
                "subcarrier {} carries bits but has zero SNR",
                k + 1
            )));
        }
        power[k] = ((1u64 << bits[k]) - 1) as f64 * gamma / snr.snr[k];
        sum += power[k];
        active += 1;
    }
    if active > 0 {
        let scale = active as f64 / sum;
        for p in power.iter_mut() {
            *p *= scale;
        }
    }
    Ok(power)
}
