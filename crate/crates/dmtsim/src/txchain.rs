//! Transmit-side frame assembly: training symbols, QAM mapping onto the
//! loaded subcarriers, cyclic prefixing, clipping, and optional DAC
//! quantization. The output is the real-valued drive waveform at the DAC
//! rate.

use std::io::Write;
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::loading::SubcarrierPlan;
use crate::qam::Constellation;
use crate::signal::{SignalBlock, SimRng};
use crate::transform::hermitian_ifft;
use crate::{Error, Result};

/// Known training content of one frame, in the frequency domain.
///
/// `symbols[ts][k]` is the value loaded on subcarrier `k+1` in training
/// symbol `ts`; zero entries are unloaded bins.
#[derive(Debug, Clone)]
pub struct TrainingSymbols {
    pub symbols: Vec<Vec<Complex64>>,
}

impl TrainingSymbols {
    pub fn n_ts(&self) -> usize {
        self.symbols.len()
    }

    /// Placeholder for plans without training symbols.
    pub fn empty() -> Self {
        Self { symbols: vec![] }
    }
}

/// Builds the `n_ts` training symbols for a plan.
///
/// TS #1 is a Schmidl-Cox preamble: pseudo-random QPSK on the even-indexed
/// active subcarriers and zeros on the odd ones, which makes the two halves
/// of its time-domain symbol identical. TS #2..n_ts carry pseudo-random
/// QPSK on every active subcarrier for channel estimation. All content
/// derives deterministically from `rng`, and every TS is scaled to the mean
/// payload symbol power.
pub fn make_training_symbols(plan: &SubcarrierPlan, rng: &mut SimRng) -> Result<TrainingSymbols> {
    if plan.n_ts == 0 {
        return Err(Error::invalid(
            "at least one training symbol is required for synchronization",
        ));
    }
    let n_data = plan.n_data();
    let payload_power: f64 = plan.power.iter().sum();
    let qpsk = Constellation::cached(2)?;

    let even_active: Vec<usize> = (0..n_data)
        .filter(|&k| plan.bits[k] > 0 && (k + 1) % 2 == 0)
        .collect();
    if even_active.is_empty() {
        return Err(Error::invalid(
            "no active even-indexed subcarriers to build the sync preamble from",
        ));
    }
    let active: Vec<usize> = (0..n_data).filter(|&k| plan.bits[k] > 0).collect();

    let mut symbols = Vec::with_capacity(plan.n_ts);
    for ts in 0..plan.n_ts {
        let loaded = if ts == 0 { &even_active } else { &active };
        let scale = (payload_power / loaded.len() as f64).sqrt();
        let mut bins = vec![Complex64::new(0.0, 0.0); n_data];
        for &k in loaded {
            let label = rng.below(4);
            bins[k] = qpsk.map_label(label) * scale;
        }
        symbols.push(bins);
    }
    Ok(TrainingSymbols { symbols })
}

/// One DMT symbol: zero-extend the data bins to the FFT grid, transform to
/// time, and prepend the cyclic prefix. A prefix longer than the body keeps
/// extending it cyclically, so sweeps with cp > fft_len stay well defined.
fn symbol_samples(bins: &[Complex64], plan: &SubcarrierPlan) -> Result<Vec<f64>> {
    let mut full = vec![Complex64::new(0.0, 0.0); plan.fft_len / 2 - 1];
    full[..bins.len()].copy_from_slice(bins);
    let body = hermitian_ifft(&full, plan.fft_len)?;
    let n = plan.fft_len as isize;
    let cp = plan.cp_samples as isize;
    let mut out = Vec::with_capacity(plan.symbol_samples());
    for i in 0..cp {
        out.push(body[(i - cp).rem_euclid(n) as usize]);
    }
    out.extend_from_slice(&body);
    Ok(out)
}

/// Assembles training plus payload symbols into one real frame waveform.
///
/// `payload_bits` must hold exactly `(frame_symbols - n_ts) * sum(bits)`
/// bits; they are mapped subcarrier by subcarrier under the plan's bit and
/// power allocation.
pub fn assemble_frame(
    payload_bits: &[u8],
    plan: &SubcarrierPlan,
    ts: &TrainingSymbols,
    fs: f64,
) -> Result<SignalBlock> {
    plan.validate()?;
    if ts.n_ts() != plan.n_ts {
        return Err(Error::invalid(format!(
            "plan wants {} training symbols, got {}",
            plan.n_ts,
            ts.n_ts()
        )));
    }
    let expected = plan.frame_bits();
    if payload_bits.len() != expected {
        return Err(Error::invalid(format!(
            "payload must be {expected} bits, got {}",
            payload_bits.len()
        )));
    }

    let n_data = plan.n_data();
    let mut waveform = Vec::with_capacity(plan.frame_samples());
    for sym in &ts.symbols {
        waveform.extend(symbol_samples(sym, plan)?);
    }

    let mut cursor = 0usize;
    let mut bins = vec![Complex64::new(0.0, 0.0); n_data];
    for _ in 0..plan.payload_symbols() {
        for k in 0..n_data {
            let b = plan.bits[k];
            if b == 0 {
                bins[k] = Complex64::new(0.0, 0.0);
                continue;
            }
            let c = Constellation::cached(b)?;
            let mut label = 0usize;
            for _ in 0..b {
                label = (label << 1) | payload_bits[cursor] as usize;
                cursor += 1;
            }
            bins[k] = c.map_label(label) * plan.power[k].sqrt();
        }
        waveform.extend(symbol_samples(&bins, plan)?);
    }
    debug_assert_eq!(cursor, payload_bits.len());
    SignalBlock::from_real(waveform, fs)
}

/// Clip level for a block: `rms * 10^(clip_ratio_db / 20)`.
pub fn clip_level(block: &SignalBlock, clip_ratio_db: f64) -> f64 {
    block.rms() * 10f64.powf(clip_ratio_db / 20.0)
}

/// Symmetric clipping at the given ratio above the block rms.
///
/// The rms is measured once, before clipping; `f64::INFINITY` disables the
/// stage.
pub fn clip(block: &SignalBlock, clip_ratio_db: f64) -> Result<SignalBlock> {
    if !block.is_real() {
        return Err(Error::invalid("clipping expects a real drive waveform"));
    }
    if clip_ratio_db == f64::INFINITY {
        return Ok(block.clone());
    }
    let a = clip_level(block, clip_ratio_db);
    let samples = block
        .samples
        .iter()
        .map(|x| Complex64::new(x.re.clamp(-a, a), 0.0))
        .collect();
    SignalBlock::new(samples, block.sample_rate)
}

/// Uniform mid-rise quantization over `[-full_scale, +full_scale]`.
pub fn quantize(block: &SignalBlock, dac_bits: u8, full_scale: f64) -> Result<SignalBlock> {
    if dac_bits == 0 || dac_bits > 16 {
        return Err(Error::invalid("dac_bits must be 1..=16"));
    }
    if full_scale <= 0.0 {
        return Err(Error::invalid("full scale must be positive"));
    }
    let levels = (1u32 << dac_bits) as f64;
    let step = 2.0 * full_scale / levels;
    let top = full_scale - step / 2.0;
    let samples = block
        .samples
        .iter()
        .map(|x| {
            let q = step * ((x.re / step).floor() + 0.5);
            Complex64::new(q.clamp(-top, top), x.im)
        })
        .collect();
    SignalBlock::new(samples, block.sample_rate)
}

/// Frame layout written next to exported waveforms.
#[derive(Debug, Clone, Serialize)]
pub struct WaveformSidecar {
    pub sample_rate: f64,
    pub fft_len: usize,
    pub cp_samples: usize,
    pub n_ts: usize,
    pub frame_symbols: usize,
    pub n_samples: usize,
}

/// Writes a real waveform as little-endian f64 binary, with a JSON sidecar
/// (`<path>.json`) describing the sample rate and frame layout.
pub fn export_waveform(path: &Path, block: &SignalBlock, plan: &SubcarrierPlan) -> Result<()> {
    let samples = block.to_real()?;
    let mut raw = Vec::with_capacity(samples.len() * 8);
    for s in &samples {
        raw.extend_from_slice(&s.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&raw)?;

    let sidecar = WaveformSidecar {
        sample_rate: block.sample_rate,
        fft_len: plan.fft_len,
        cp_samples: plan.cp_samples,
        n_ts: plan.n_ts,
        frame_symbols: plan.frame_symbols,
        n_samples: samples.len(),
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::invalid(format!("sidecar serialization: {e}")))?;
    std::fs::write(path.with_extension(
        path.extension()
            .map(|e| format!("{}.json", e.to_string_lossy()))
            .unwrap_or_else(|| "json".into()),
    ), json)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::q_function;

    fn test_plan(fft_len: usize, cp: usize, n_ts: usize, bits: u8) -> SubcarrierPlan {
        let n_data = crate::loading::usable_subcarriers(fft_len, 1.05).unwrap();
        SubcarrierPlan {
            bits: vec![bits; n_data],
            power: vec![if bits > 0 { 1.0 } else { 0.0 }; n_data],
            fft_len,
            cp_samples: cp,
            n_ts,
            frame_symbols: 16,
            oversampling: 1.05,
        }
    }

    #[test]
    fn preamble_halves_are_identical() {
        let plan = test_plan(128, 16, 5, 2);
        let mut rng = SimRng::new(5);
        let ts = make_training_symbols(&plan, &mut rng).unwrap();
        assert_eq!(ts.n_ts(), 5);
        let body = symbol_samples(&ts.symbols[0], &plan).unwrap();
        let n = plan.fft_len;
        let cp = plan.cp_samples;
        let scale = body.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for i in 0..n / 2 {
            assert!(
                (body[cp + i] - body[cp + n / 2 + i]).abs() < 1e-12 * scale,
                "halves differ at {i}"
            );
        }
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let plan = test_plan(256, 8, 3, 4);
        let a = make_training_symbols(&plan, &mut SimRng::new(77)).unwrap();
        let b = make_training_symbols(&plan, &mut SimRng::new(77)).unwrap();
        assert_eq!(a.symbols, b.symbols);
    }

    #[test]
    fn five_ts_leave_123_payload_symbols() {
        let mut plan = test_plan(128, 32, 5, 2);
        plan.frame_symbols = 128;
        assert_eq!(plan.payload_symbols(), 123);
        let ts = make_training_symbols(&plan, &mut SimRng::new(1)).unwrap();
        assert_eq!(ts.n_ts(), 5);
    }

    #[test]
    fn cyclic_prefix_is_a_sample_exact_copy() {
        let plan = test_plan(128, 16, 2, 3);
        let mut rng = SimRng::new(9);
        let ts = make_training_symbols(&plan, &mut rng).unwrap();
        let bits = rng.bits(plan.frame_bits());
        let frame = assemble_frame(&bits, &plan, &ts, 84e9).unwrap();
        assert_eq!(frame.len(), plan.frame_samples());
        let (n, cp, span) = (plan.fft_len, plan.cp_samples, plan.symbol_samples());
        for s in 0..plan.frame_symbols {
            for i in 0..cp {
                assert_eq!(
                    frame.samples[s * span + i].re,
                    frame.samples[s * span + i + n].re,
                    "CP mismatch in symbol {s} at {i}"
                );
            }
        }
    }

    #[test]
    fn empty_plan_gives_zero_block() {
        let mut plan = test_plan(64, 4, 1, 0);
        plan.n_ts = 0;
        let frame = assemble_frame(&[], &plan, &TrainingSymbols::empty(), 84e9).unwrap();
        assert!(frame.samples.iter().all(|x| x.re == 0.0 && x.im == 0.0));
    }

    #[test]
    fn frame_length_arithmetic_over_sweep_grid() {
        for &n in &[64usize, 128, 512, 1024] {
            for &cp in &[0usize, 2, 32, 512] {
                for &n_ts in &[1usize, 5, 20] {
                    let mut plan = test_plan(n, cp, n_ts, 2);
                    plan.frame_symbols = 128;
                    let mut rng = SimRng::new(3);
                    let ts = make_training_symbols(&plan, &mut rng).unwrap();
                    let bits = rng.bits(plan.frame_bits());
                    let frame = assemble_frame(&bits, &plan, &ts, 84e9).unwrap();
                    assert_eq!(frame.len(), 128 * (n + cp));
                }
            }
        }
    }

    #[test]
    fn clip_disabled_is_identity() {
        let block = SignalBlock::from_real(vec![5.0, -7.0, 0.25], 1.0).unwrap();
        assert_eq!(clip(&block, f64::INFINITY).unwrap(), block);
    }

    #[test]
    fn clip_level_at_9_db_on_unit_rms() {
        // One 3.0 among samples tuned so the block rms is exactly 1.
        let n = 1000;
        let v = ((n as f64 - 9.0) / (n as f64 - 1.0)).sqrt();
        let mut samples = vec![v; n];
        samples[0] = 3.0;
        let block = SignalBlock::from_real(samples, 1.0).unwrap();
        assert!((block.rms() - 1.0).abs() < 1e-12);
        let clipped = clip(&block, 9.0).unwrap();
        let a = 10f64.powf(9.0 / 20.0);
        assert!((a - 2.818).abs() < 1e-3);
        assert!((clipped.samples[0].re - a).abs() < 1e-12);
        assert_eq!(clipped.samples[1].re, v);
    }

    #[test]
    fn clipped_fraction_matches_gaussian_tail() {
        let mut rng = SimRng::new(123);
        let n = 400_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.std_normal()).collect();
        let block = SignalBlock::from_real(samples, 1.0).unwrap();
        let a = clip_level(&block, 9.0);
        let clipped = clip(&block, 9.0).unwrap();
        let hits = block
            .samples
            .iter()
            .zip(&clipped.samples)
            .filter(|(orig, out)| orig.re != out.re)
            .count();
        let frac = hits as f64 / n as f64;
        let oracle = 2.0 * q_function(a / block.rms());
        assert!(
            (frac - oracle).abs() / oracle < 0.15,
            "clipped {frac:.5} vs oracle {oracle:.5}"
        );
    }

    #[test]
    fn papr_after_clipping_stays_at_the_ratio() {
        let plan = test_plan(512, 32, 5, 4);
        let mut rng = SimRng::new(21);
        let ts = make_training_symbols(&plan, &mut rng).unwrap();
        let bits = rng.bits(plan.frame_bits());
        let frame = assemble_frame(&bits, &plan, &ts, 84e9).unwrap();
        let clipped = clip(&frame, 9.0).unwrap();
        let peak = clipped.samples.iter().map(|x| x.re.abs()).fold(0.0, f64::max);
        let papr_db = 20.0 * (peak / clipped.rms()).log10();
        assert!(papr_db <= 9.1, "PAPR {papr_db:.3} dB");
    }

    #[test]
    fn quantizer_edge_cases() {
        let block = SignalBlock::from_real(vec![0.7, -0.2, 0.0], 1.0).unwrap();
        // 1-bit: sign times half scale (mid-rise grid)
        let q1 = quantize(&block, 1, 1.0).unwrap();
        assert_eq!(q1.samples[0].re, 0.5);
        assert_eq!(q1.samples[1].re, -0.5);
        assert_eq!(q1.samples[2].re, 0.5); // 0 rounds up onto the positive cell

        // 8-bit over a full-scale ramp: error bounded by one step
        let a = 1.0;
        let ramp: Vec<f64> = (0..1000).map(|i| -a + 2.0 * a * i as f64 / 999.0).collect();
        let rb = SignalBlock::from_real(ramp.clone(), 1.0).unwrap();
        let q8 = quantize(&rb, 8, a).unwrap();
        for (x, q) in ramp.iter().zip(&q8.samples) {
            assert!((x - q.re).abs() <= a / 256.0 + 1e-12);
        }
        assert!(quantize(&block, 0, 1.0).is_err());
    }

    #[test]
    fn waveform_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.f64");
        let plan = test_plan(64, 4, 1, 2);
        let mut rng = SimRng::new(2);
        let ts = make_training_symbols(&plan, &mut rng).unwrap();
        let bits = rng.bits(plan.frame_bits());
        let frame = assemble_frame(&bits, &plan, &ts, 84e9).unwrap();
        export_waveform(&path, &frame, &plan).unwrap();

        let raw = std::fs::read(&path).unwrap();
        assert_eq!(raw.len(), frame.len() * 8);
        let first = f64::from_le_bytes(raw[..8].try_into().unwrap());
        assert_eq!(first, frame.samples[0].re);

        let sidecar: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("f64.json")).unwrap())
                .unwrap();
        assert_eq!(sidecar["sample_rate"], 84e9);
        assert_eq!(sidecar["n_samples"], frame.len() as u64);
    }
}
