//! Experiment orchestration: link assembly, two-pass calibration (probe
//! then load), Monte Carlo BER measurement with a deterministic stopping
//! rule, parameter sweeps with per-point recalibration, required-OSNR
//! extraction, and CSV emission.
//!
//! Everything is reproducible: frames, noise realizations, and capture
//! rotations are drawn from sub-streams derived from the config seed, and
//! parallel execution merges results in frame order.

use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{
    apply_dispersion, load_ase, mzm_modulate, optical_bandpass, pin_detect, ssfm_propagate,
    OSNR_REF_BANDWIDTH,
};
use crate::config::{derive_point_seed, LinkConfig};
use crate::loading::{
    chow_bitload, cioffi_powerload, estimate_snr, rate_budget, usable_subcarriers, SnrProfile,
    SubcarrierPlan,
};
use crate::qam::Constellation;
use crate::rxchain::{
    count_ber, demodulate_frame, refine_frame_start, schmidl_cox_sync, BerCount, Metrics,
    Tracking,
};
use crate::signal::{SignalBlock, SimRng};
use crate::txchain::{
    assemble_frame, clip, clip_level, make_training_symbols, quantize, TrainingSymbols,
};
use crate::{Error, Result};

pub use crate::rxchain::FEC_LIMIT_BER;

// Sub-stream layout per point seed. Probe and measurement frames live in
// disjoint spaces; each frame owns payload, channel-noise, and rotation
// streams.
const STREAM_TS: u64 = 0;
const KIND_PAYLOAD: u64 = 0;
const KIND_CHANNEL: u64 = 1;
const KIND_ROTATION: u64 = 2;

fn frame_stream(probe: bool, frame: usize, kind: u64) -> u64 {
    let base = if probe { 1u64 << 40 } else { 1u64 << 20 };
    base + ((frame as u64) << 3) + kind
}

/// Calibration output: the loaded plan plus the probe measurements it was
/// derived from.
#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub plan: SubcarrierPlan,
    pub snr: SnrProfile,
    pub target_bits: usize,
    pub measured_osnr_db: Option<f64>,
}

/// One sweep point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub seed: u64,
    pub metrics: Metrics,
}

/// Ordered sweep output with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub param: String,
    pub config_fingerprint: u64,
    pub base_seed: u64,
    pub rows: Vec<SweepRow>,
}

/// Parameters the sweep driver knows how to vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    CpSamples,
    NTs,
    DetuneGhz,
    LaunchPowerDbm,
    TargetOsnrDb,
    FftLen,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::CpSamples => "cp_samples",
            SweepParam::NTs => "n_ts",
            SweepParam::DetuneGhz => "detune_ghz",
            SweepParam::LaunchPowerDbm => "launch_power_dbm",
            SweepParam::TargetOsnrDb => "target_osnr_db",
            SweepParam::FftLen => "fft_len",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "cp_samples" => SweepParam::CpSamples,
            "n_ts" => SweepParam::NTs,
            "detune_ghz" => SweepParam::DetuneGhz,
            "launch_power_dbm" => SweepParam::LaunchPowerDbm,
            "target_osnr_db" => SweepParam::TargetOsnrDb,
            "fft_len" => SweepParam::FftLen,
            other => {
                return Err(Error::invalid(format!("unknown sweep parameter `{other}`")))
            }
        })
    }

    fn integer_valued(self) -> bool {
        matches!(
            self,
            SweepParam::CpSamples | SweepParam::NTs | SweepParam::FftLen
        )
    }

    fn apply(self, cfg: &LinkConfig, value: f64) -> Result<LinkConfig> {
        let mut out = cfg.clone();
        match self {
            SweepParam::CpSamples => out.cp_samples = value as usize,
            SweepParam::NTs => out.n_ts = value as usize,
            SweepParam::DetuneGhz => out.detune_ghz = value,
            SweepParam::LaunchPowerDbm => out.launch_power_dbm = value,
            SweepParam::TargetOsnrDb => out.noise.target_osnr_db = Some(value),
            SweepParam::FftLen => out.fft_len = value as usize,
        }
        out.validate()?;
        Ok(out)
    }
}

/// Equal-power 16-QAM probe plan on every usable subcarrier, with the
/// config's framing.
fn probe_plan(cfg: &LinkConfig) -> Result<SubcarrierPlan> {
    let n_data = usable_subcarriers(cfg.fft_len, cfg.oversampling)?;
    Ok(SubcarrierPlan {
        bits: vec![4; n_data],
        power: vec![1.0; n_data],
        fft_len: cfg.fft_len,
        cp_samples: cfg.cp_samples,
        n_ts: cfg.n_ts,
        frame_symbols: cfg.frame_symbols,
        oversampling: cfg.oversampling,
    })
}

/// Constellation-domain payload symbols implied by a bit stream under a
/// plan, `[subcarrier][payload symbol]`. Used as the known reference for
/// probe SNR estimation.
fn payload_symbol_matrix(bits: &[u8], plan: &SubcarrierPlan) -> Result<Vec<Vec<Complex64>>> {
    let n_data = plan.n_data();
    let mut out = vec![Vec::with_capacity(plan.payload_symbols()); n_data];
    let mut cursor = 0usize;
    for _ in 0..plan.payload_symbols() {
        for k in 0..n_data {
            let b = plan.bits[k];
            if b == 0 {
                continue;
            }
            let c = Constellation::cached(b)?;
            let mut label = 0usize;
            for _ in 0..b {
                label = (label << 1) | bits[cursor] as usize;
                cursor += 1;
            }
            out[k].push(c.map_label(label));
        }
    }
    Ok(out)
}

struct FrameOutcome {
    count: BerCount,
    measured_osnr_db: Option<f64>,
    /// Equalized payload symbols, kept only for probe frames.
    eq_symbols: Option<Vec<Vec<Complex64>>>,
    tx_symbols: Option<Vec<Vec<Complex64>>>,
}

/// Clipped (and optionally quantized) drive waveform for one frame's bits.
fn build_drive(
    cfg: &LinkConfig,
    plan: &SubcarrierPlan,
    ts: &TrainingSymbols,
    bits: &[u8],
) -> Result<SignalBlock> {
    let frame = assemble_frame(bits, plan, ts, cfg.fs).map_err(|e| e.at_stage("assemble"))?;
    let clipped = clip(&frame, cfg.tx.clip_ratio_db).map_err(|e| e.at_stage("clip"))?;
    match cfg.tx.dac_bits {
        Some(b) => {
            let full_scale = if cfg.tx.clip_ratio_db.is_finite() {
                clip_level(&frame, cfg.tx.clip_ratio_db)
            } else {
                clipped
                    .samples
                    .iter()
                    .map(|x| x.re.abs())
                    .fold(0.0, f64::max)
            };
            quantize(&clipped, b, full_scale).map_err(|e| e.at_stage("quantize"))
        }
        None => Ok(clipped),
    }
}

/// Drive waveform of measurement frame `frame_idx`, as the DAC would play
/// it. Useful for waveform export and inspection.
pub fn drive_waveform(
    cfg: &LinkConfig,
    plan: &SubcarrierPlan,
    ts: &TrainingSymbols,
    frame_idx: usize,
) -> Result<SignalBlock> {
    let root = SimRng::new(cfg.seed);
    let mut payload_rng = root.fork(frame_stream(false, frame_idx, KIND_PAYLOAD));
    let bits = payload_rng.bits(plan.frame_bits());
    build_drive(cfg, plan, ts, &bits)
}

/// Transmits, propagates, detects and demodulates one frame.
fn one_frame(
    cfg: &LinkConfig,
    plan: &SubcarrierPlan,
    ts: &TrainingSymbols,
    probe: bool,
    frame_idx: usize,
) -> Result<FrameOutcome> {
    let root = SimRng::new(cfg.seed);
    let mut payload_rng = root.fork(frame_stream(probe, frame_idx, KIND_PAYLOAD));
    let mut chan_rng = root.fork(frame_stream(probe, frame_idx, KIND_CHANNEL));
    let mut rot_rng = root.fork(frame_stream(probe, frame_idx, KIND_ROTATION));

    let bits = payload_rng.bits(plan.frame_bits());
    let drive = build_drive(cfg, plan, ts, &bits)?;

    // Optical chain.
    let field = mzm_modulate(&drive, cfg.mzm.mod_index, cfg.mzm.bias_phase)
        .map_err(|e| e.at_stage("mzm"))?;
    let (mux, demux) = cfg.effective_filters();
    let field = optical_bandpass(&field, &mux);
    let field = if cfg.nonlinear {
        ssfm_propagate(&field, &cfg.fiber, cfg.launch_power_dbm, cfg.ssfm_step_km)
            .map_err(|e| e.at_stage("fiber"))?
    } else {
        apply_dispersion(&field, &cfg.fiber)
    };

    let pre_noise_power = field.power();
    let field_noisy = load_ase(&field, &cfg.noise, &mut chan_rng).map_err(|e| e.at_stage("ase"))?;
    let measured_osnr_db = cfg.noise.target_osnr_db.map(|_| {
        let added = field_noisy
            .samples
            .iter()
            .zip(&field.samples)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            / field.len() as f64;
        10.0 * (pre_noise_power / (added / cfg.fs * OSNR_REF_BANDWIDTH)).log10()
    });
    let field = optical_bandpass(&field_noisy, &demux);

    // Receiver.
    let detected = pin_detect(&field, cfg.rx.elec_bw_ghz, &cfg.noise, &mut chan_rng)
        .map_err(|e| e.at_stage("pin"))?;
    let detected = detected.to_real().map_err(|e| e.at_stage("pin"))?;

    // The capture is one period of the cyclic playback; start it at a
    // random rotation so synchronization earns its keep.
    let len = detected.len();
    let rot = rot_rng.below(len);
    let mut ext = Vec::with_capacity(2 * len);
    ext.extend_from_slice(&detected[rot..]);
    ext.extend_from_slice(&detected[..rot]);
    ext.extend_from_within(..len);

    let coarse = schmidl_cox_sync(&ext[..len + plan.fft_len], plan.fft_len, plan.cp_samples)
        .map_err(|e| e.at_stage("sync"))?;
    let start = refine_frame_start(
        &ext,
        plan.fft_len,
        plan.cp_samples,
        plan.frame_symbols,
        coarse,
        plan.cp_samples + 16,
    );

    // Probes track data-aided against the known payload so the SNR
    // estimate reflects the channel, not decision-error feedback.
    let known = if probe {
        Some(payload_symbol_matrix(&bits, plan)?)
    } else {
        None
    };
    let tracking = match &known {
        Some(k) => Tracking::DataAided(k),
        None => Tracking::DecisionDirected,
    };
    let demod = demodulate_frame(
        &ext[start..start + plan.frame_samples()],
        plan,
        ts,
        cfg.rx.update_gain,
        tracking,
    )
    .map_err(|e| e.at_stage("demodulate"))?;
    let count = count_ber(&bits, &demod.bits).map_err(|e| e.at_stage("count"))?;

    let (eq_symbols, tx_symbols) = if probe {
        (Some(demod.eq_symbols), known)
    } else {
        (None, None)
    };
    Ok(FrameOutcome {
        count,
        measured_osnr_db,
        eq_symbols,
        tx_symbols,
    })
}

/// Runs the full link once with equal-power 16-QAM probe frames at the
/// configured noise condition, estimates the per-subcarrier SNR, then
/// loads bits and power for the net rate.
pub fn calibrate(cfg: &LinkConfig) -> Result<Calibration> {
    cfg.validate()?;
    let plan = probe_plan(cfg)?;
    let (snr, measured_osnr_db) = probe_snr(cfg, &plan)?;

    let target_bits = rate_budget(
        cfg.net_rate,
        cfg.fft_len,
        cfg.cp_samples,
        cfg.n_ts,
        cfg.frame_symbols,
        cfg.fs,
    )?;
    let bits = chow_bitload(&snr, target_bits, &cfg.loading)?;
    let power = cioffi_powerload(&snr, &bits, &cfg.loading)?;
    let plan = SubcarrierPlan {
        bits,
        power,
        fft_len: cfg.fft_len,
        cp_samples: cfg.cp_samples,
        n_ts: cfg.n_ts,
        frame_symbols: cfg.frame_symbols,
        oversampling: cfg.oversampling,
    };
    plan.validate()?;
    Ok(Calibration {
        plan,
        snr,
        target_bits,
        measured_osnr_db,
    })
}

/// Probe pass shared by calibration and the SNR-spectrum output.
fn probe_snr(cfg: &LinkConfig, plan: &SubcarrierPlan) -> Result<(SnrProfile, Option<f64>)> {
    let mut ts_rng = SimRng::new(cfg.seed).fork(STREAM_TS);
    let ts = make_training_symbols(plan, &mut ts_rng)?;

    let outcomes: Vec<FrameOutcome> = (0..cfg.probe_frames)
        .into_par_iter()
        .map(|f| one_frame(cfg, plan, &ts, true, f))
        .collect::<Result<_>>()?;

    let n_data = plan.n_data();
    let mut rx = vec![Vec::new(); n_data];
    let mut tx = vec![Vec::new(); n_data];
    let mut osnr_acc = Vec::new();
    for o in &outcomes {
        let (eq, known) = (
            o.eq_symbols.as_ref().expect("probe frames keep symbols"),
            o.tx_symbols.as_ref().expect("probe frames keep symbols"),
        );
        for k in 0..n_data {
            rx[k].extend_from_slice(&eq[k]);
            tx[k].extend_from_slice(&known[k]);
        }
        if let Some(v) = o.measured_osnr_db {
            osnr_acc.push(v);
        }
    }
    let snr = estimate_snr(&rx, &tx, plan.fft_len, cfg.loading.snr_ceiling_db)?;
    let osnr = if osnr_acc.is_empty() {
        None
    } else {
        Some(osnr_acc.iter().sum::<f64>() / osnr_acc.len() as f64)
    };
    Ok((snr, osnr))
}

/// Monte Carlo BER measurement under the stopping rule: frames run in
/// index order (parallel in batches, merged deterministically) until the
/// error target or the frame cap is reached, whichever comes first.
pub fn run_link(cfg: &LinkConfig, plan: &SubcarrierPlan) -> Result<Metrics> {
    cfg.validate()?;
    plan.validate()?;
    let mut ts_rng = SimRng::new(cfg.seed).fork(STREAM_TS);
    let ts = make_training_symbols(plan, &mut ts_rng)?;

    let mut count = BerCount::default();
    let mut osnr_acc = Vec::new();
    let mut frames_run = 0usize;
    let batch = rayon::current_num_threads().max(1);
    let mut next = 0usize;
    'outer: while next < cfg.frames_per_point {
        let upper = (next + batch).min(cfg.frames_per_point);
        let outcomes: Vec<FrameOutcome> = (next..upper)
            .into_par_iter()
            .map(|f| one_frame(cfg, plan, &ts, false, f))
            .collect::<Result<_>>()?;
        for o in outcomes {
            count.merge(o.count);
            if let Some(v) = o.measured_osnr_db {
                osnr_acc.push(v);
            }
            frames_run += 1;
            if count.bit_errors >= cfg.target_errors {
                break 'outer;
            }
        }
        next = upper;
    }

    Ok(Metrics {
        ber: count.ber(),
        bit_errors: count.bit_errors,
        bits_counted: count.bits_counted,
        snr_profile: None,
        measured_osnr_db: if osnr_acc.is_empty() {
            None
        } else {
            Some(osnr_acc.iter().sum::<f64>() / osnr_acc.len() as f64)
        },
        frames_run,
        capped: count.bit_errors < cfg.target_errors,
    })
}

/// Calibrates and measures one configuration point.
pub fn run_point(cfg: &LinkConfig) -> Result<(Calibration, Metrics)> {
    let cal = calibrate(cfg)?;
    let mut metrics = run_link(cfg, &cal.plan)?;
    metrics.snr_profile = Some(cal.snr.clone());
    Ok((cal, metrics))
}

/// Sweeps one parameter, recalibrating at every point (the plan depends on
/// the swept parameter). Rows come out ordered by sweep value; each point
/// runs under its own derived seed.
pub fn sweep(cfg: &LinkConfig, param: SweepParam, values: &[f64]) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    let mut ordered = values.to_vec();
    ordered.sort_by(|a, b| a.total_cmp(b));

    let mut rows = Vec::with_capacity(ordered.len());
    for (i, &v) in ordered.iter().enumerate() {
        let mut point_cfg = param.apply(cfg, v)?;
        point_cfg.seed = derive_point_seed(cfg.seed, param.name(), i);
        let (_cal, metrics) = run_point(&point_cfg)?;
        rows.push(SweepRow {
            value: v,
            seed: point_cfg.seed,
            metrics,
        });
    }
    Ok(SweepResult {
        param: param.name().to_string(),
        config_fingerprint: cfg.fingerprint(),
        base_seed: cfg.seed,
        rows,
    })
}

/// BER vs OSNR curve over the given grid.
pub fn osnr_curve(cfg: &LinkConfig, grid_db: &[f64]) -> Result<SweepResult> {
    sweep(cfg, SweepParam::TargetOsnrDb, grid_db)
}

/// Required-OSNR extraction result.
#[derive(Debug, Clone, Serialize)]
pub struct RequiredOsnr {
    /// OSNR in dB at which the BER curve crosses the target.
    pub osnr_db: f64,
    /// True when even the lowest grid OSNR was already below the target
    /// BER; `osnr_db` then reports that grid edge.
    pub saturated: bool,
    pub curve: SweepResult,
}

/// Finds the OSNR where BER crosses `ber_target`, by log-linear
/// interpolation on an OSNR sweep.
pub fn required_osnr(cfg: &LinkConfig, ber_target: f64, grid_db: &[f64]) -> Result<RequiredOsnr> {
    if !(0.0..1.0).contains(&ber_target) || ber_target <= 0.0 {
        return Err(Error::invalid("ber_target must be in (0, 1)"));
    }
    let curve = osnr_curve(cfg, grid_db)?;
    let points: Vec<(f64, f64, usize)> = curve
        .rows
        .iter()
        .map(|r| (r.value, r.metrics.ber, r.metrics.bits_counted))
        .collect();
    check_monotone(&points)?;
    let (osnr_db, saturated) = crossing_from_curve(&points, ber_target)?;
    Ok(RequiredOsnr {
        osnr_db,
        saturated,
        curve,
    })
}

/// Flags BER increases along the OSNR axis that exceed Monte Carlo
/// wiggle (3 sigma on each point, Poisson error counts).
fn check_monotone(points: &[(f64, f64, usize)]) -> Result<()> {
    for pair in points.windows(2) {
        let (x1, b1, n1) = pair[0];
        let (x2, b2, n2) = pair[1];
        let sigma1 = (b1.max(1e-12) / n1.max(1) as f64).sqrt();
        let sigma2 = (b2.max(1e-12) / n2.max(1) as f64).sqrt();
        // Absolute slack covers the saturated high-BER region where tiny
        // wiggles are meaningless.
        if b2 > b1 + 3.0 * (sigma1 + sigma2) + 5e-3 {
            return Err(Error::invalid(format!(
                "BER not monotone beyond Monte Carlo noise: {b1:.3e} at {x1} dB vs {b2:.3e} at {x2} dB"
            )));
        }
    }
    Ok(())
}

/// Log-linear interpolation of the target crossing on an ascending-OSNR
/// curve. Zero-BER points are clamped to half an error for the log.
fn crossing_from_curve(points: &[(f64, f64, usize)], target: f64) -> Result<(f64, bool)> {
    if points.is_empty() {
        return Err(Error::invalid("empty OSNR curve"));
    }
    let log_ber = |ber: f64, bits: usize| -> f64 {
        let floor = 0.5 / bits.max(1) as f64;
        ber.max(floor).log10()
    };
    if points[0].1 <= target {
        return Ok((points[0].0, true));
    }
    for i in 1..points.len() {
        let (x1, b1, n1) = points[i - 1];
        let (x2, b2, n2) = points[i];
        if b2 <= target {
            let (l1, l2, lt) = (log_ber(b1, n1), log_ber(b2, n2), target.log10());
            let x = x1 + (x2 - x1) * (lt - l1) / (l2 - l1);
            return Ok((x, false));
        }
    }
    let best = points
        .iter()
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    Err(Error::Unreachable(format!(
        "BER target {target:.2e} never reached on the grid; best BER {best:.3e}"
    )))
}

/// One row of the SNR-spectrum output.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumRow {
    pub subcarrier: usize,
    pub freq_ghz: f64,
    pub snr_db: f64,
}

/// Calibration-style probe run emitting per-subcarrier SNR against
/// absolute frequency offset.
pub fn snr_spectrum(cfg: &LinkConfig) -> Result<Vec<SpectrumRow>> {
    cfg.validate()?;
    let plan = probe_plan(cfg)?;
    let (snr, _) = probe_snr(cfg, &plan)?;
    Ok(snr
        .snr
        .iter()
        .enumerate()
        .map(|(i, &s)| SpectrumRow {
            subcarrier: i + 1,
            freq_ghz: (i + 1) as f64 * cfg.fs / cfg.fft_len as f64 / 1e9,
            snr_db: crate::math::linear_to_db(s.max(1e-300)),
        })
        .collect())
}

/// Floating-point CSV field: 9 significant digits.
pub fn fmt_sig9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// `<param>,ber,bit_errors,bits_counted,seed` rows.
pub fn write_sweep_csv(out: &mut dyn Write, result: &SweepResult, param: SweepParam) -> Result<()> {
    writeln!(out, "{},ber,bit_errors,bits_counted,seed", result.param)?;
    for row in &result.rows {
        let value = if param.integer_valued() {
            format!("{}", row.value as i64)
        } else {
            fmt_sig9(row.value)
        };
        writeln!(
            out,
            "{},{},{},{},{}",
            value,
            fmt_sig9(row.metrics.ber),
            row.metrics.bit_errors,
            row.metrics.bits_counted,
            row.seed
        )?;
    }
    Ok(())
}

/// `osnr_db,ber,bit_errors,bits_counted,fft_len,cp_samples,n_ts,sideband,distance_km,seed` rows.
pub fn write_osnr_csv(out: &mut dyn Write, cfg: &LinkConfig, result: &SweepResult) -> Result<()> {
    writeln!(
        out,
        "osnr_db,ber,bit_errors,bits_counted,fft_len,cp_samples,n_ts,sideband,distance_km,seed"
    )?;
    for row in &result.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_sig9(row.value),
            fmt_sig9(row.metrics.ber),
            row.metrics.bit_errors,
            row.metrics.bits_counted,
            cfg.fft_len,
            cfg.cp_samples,
            cfg.n_ts,
            cfg.sideband,
            fmt_sig9(cfg.fiber.length_km),
            row.seed
        )?;
    }
    Ok(())
}

/// `subcarrier,freq_ghz,snr_db` rows.
pub fn write_spectrum_csv(out: &mut dyn Write, rows: &[SpectrumRow]) -> Result<()> {
    writeln!(out, "subcarrier,freq_ghz,snr_db")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{}",
            r.subcarrier,
            fmt_sig9(r.freq_ghz),
            fmt_sig9(r.snr_db)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small, fast configuration for smoke tests.
    fn tiny_cfg() -> LinkConfig {
        LinkConfig::default()
            .with_overrides(&[
                "fft_len=64".into(),
                "cp_samples=8".into(),
                "n_ts=3".into(),
                "frame_symbols=12".into(),
                "fiber.L=0".into(),
                "noise.target_osnr_db=30".into(),
                "probe_frames=2".into(),
                "frames_per_point=2".into(),
                "seed=7".into(),
            ])
            .unwrap()
    }

    #[test]
    fn calibration_meets_the_rate_budget_exactly() {
        let cfg = tiny_cfg();
        let cal = calibrate(&cfg).unwrap();
        assert_eq!(cal.plan.bits_per_symbol(), cal.target_bits);
        assert_eq!(
            cal.target_bits,
            rate_budget(56e9, 64, 8, 3, 12, 84e9).unwrap()
        );
        cal.plan.validate().unwrap();
    }

    #[test]
    fn runs_are_bit_identical_for_the_same_seed() {
        let cfg = tiny_cfg();
        let (cal1, m1) = run_point(&cfg).unwrap();
        let (cal2, m2) = run_point(&cfg).unwrap();
        assert_eq!(cal1.plan.bits, cal2.plan.bits);
        assert_eq!(cal1.plan.power, cal2.plan.power);
        assert_eq!(m1.bit_errors, m2.bit_errors);
        assert_eq!(m1.bits_counted, m2.bits_counted);
        assert_eq!(m1.measured_osnr_db, m2.measured_osnr_db);
    }

    #[test]
    fn reseeding_preserves_total_bits() {
        let cfg = tiny_cfg();
        let cal1 = calibrate(&cfg).unwrap();
        let cfg2 = cfg.with_overrides(&["seed=99".into()]).unwrap();
        let cal2 = calibrate(&cfg2).unwrap();
        assert_eq!(cal1.plan.bits_per_symbol(), cal2.plan.bits_per_symbol());
    }

    #[test]
    fn noiseless_b2b_point_is_error_free() {
        // The tiny 64-point grid cannot carry 56 Gb/s; probe at a rate it
        // can hold with margin.
        let cfg = tiny_cfg()
            .with_overrides(&["noise.target_osnr_db=null".into(), "net_rate=20e9".into()])
            .unwrap();
        let (_, m) = run_point(&cfg).unwrap();
        assert_eq!(m.bit_errors, 0);
        assert!(m.capped, "error target can never be hit noiselessly");
        assert_eq!(m.frames_run, cfg.frames_per_point);
        assert_eq!(m.measured_osnr_db, None);
    }

    #[test]
    fn measured_osnr_tracks_the_target() {
        let cfg = tiny_cfg();
        let (_, m) = run_point(&cfg).unwrap();
        let measured = m.measured_osnr_db.unwrap();
        assert!((measured - 30.0).abs() < 0.5, "measured {measured}");
    }

    #[test]
    fn sweep_rows_are_ordered_and_reproducible() {
        let cfg = tiny_cfg();
        let result = sweep(&cfg, SweepParam::CpSamples, &[16.0, 4.0, 8.0]).unwrap();
        let values: Vec<f64> = result.rows.iter().map(|r| r.value).collect();
        assert_eq!(values, vec![4.0, 8.0, 16.0]);

        let again = sweep(&cfg, SweepParam::CpSamples, &[4.0, 8.0, 16.0]).unwrap();
        let mut buf1 = Vec::new();
        let mut buf2 = Vec::new();
        write_sweep_csv(&mut buf1, &result, SweepParam::CpSamples).unwrap();
        write_sweep_csv(&mut buf2, &again, SweepParam::CpSamples).unwrap();
        assert_eq!(buf1, buf2, "sweep output must be byte-identical");
        assert!(String::from_utf8(buf1)
            .unwrap()
            .starts_with("cp_samples,ber,bit_errors,bits_counted,seed\n"));
    }

    #[test]
    fn crossing_interpolation_matches_hand_arithmetic() {
        // BER 1e-2 at 20 dB and 1e-3 at 30 dB: the 3.8e-3 crossing sits at
        // 20 + 10 * (log10(3.8e-3) - log10(1e-2)) / (log10(1e-3) - log10(1e-2)).
        let points = vec![(20.0, 1e-2, 1_000_000), (30.0, 1e-3, 1_000_000)];
        let (x, saturated) = crossing_from_curve(&points, 3.8e-3).unwrap();
        assert!(!saturated);
        assert!((x - 24.2022).abs() < 1e-3, "crossing {x}");
    }

    #[test]
    fn crossing_boundary_cases() {
        let all_below = vec![(20.0, 1e-4, 1_000_000), (30.0, 1e-5, 1_000_000)];
        let (x, saturated) = crossing_from_curve(&all_below, 3.8e-3).unwrap();
        assert!(saturated);
        assert_eq!(x, 20.0);

        let all_above = vec![(20.0, 0.1, 1_000_000), (30.0, 0.05, 1_000_000)];
        assert!(matches!(
            crossing_from_curve(&all_above, 3.8e-3),
            Err(Error::Unreachable(_))
        ));
    }

    #[test]
    fn monotonicity_check_tolerates_mc_noise_only() {
        let ok = vec![(20.0, 1e-2, 100_000), (22.0, 1.02e-2, 100_000), (24.0, 5e-3, 100_000)];
        check_monotone(&ok).unwrap();
        let bad = vec![(20.0, 1e-3, 1_000_000), (22.0, 1e-2, 1_000_000)];
        assert!(check_monotone(&bad).is_err());
    }

    #[test]
    fn csv_float_format_is_nine_significant_digits() {
        assert_eq!(fmt_sig9(3.8e-3), "3.80000000e-3");
        assert_eq!(fmt_sig9(32.0), "3.20000000e1");
        assert_eq!(fmt_sig9(0.0), "0.00000000e0");
    }

    #[test]
    fn unknown_sweep_parameter_is_an_error() {
        assert!(SweepParam::from_name("volume").is_err());
        assert_eq!(
            SweepParam::from_name("detune_ghz").unwrap(),
            SweepParam::DetuneGhz
        );
    }
}
