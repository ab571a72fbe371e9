//! Gray-labeled QAM constellations with unit average power.
//!
//! Labeling convention (fixed so symbol tables are reproducible): a label of
//! `b` bits is read MSB-first; the first `ceil(b/2)` bits select the I level
//! and the rest the Q level, each through a per-axis reflected Gray code.
//! The all-zeros label maps to the positive corner, e.g. `(3+3i)/sqrt(10)`
//! for 16-QAM. Even orders give square QAM, odd orders rectangular QAM
//! (`2^((b+1)/2) x 2^((b-1)/2)`), and order 1 is BPSK on the real axis.
//! Per-axis Gray labeling makes every nearest-neighbor pair differ in
//! exactly one bit.

use std::sync::OnceLock;

use num_complex::Complex64;

use crate::{Error, Result};

pub const MAX_ORDER_BITS: u8 = 8;

pub fn gray_encode(n: usize) -> usize {
    n ^ (n >> 1)
}

pub fn gray_decode(g: usize) -> usize {
    let mut n = g;
    let mut shift = 1;
    while (g >> shift) > 0 {
        n ^= g >> shift;
        shift += 1;
    }
    n
}

/// A Gray-labeled QAM constellation normalized to unit average power.
#[derive(Debug, Clone)]
pub struct Constellation {
    pub order_bits: u8,
    /// Points indexed by integer label (MSB-first bit order).
    points: Vec<Complex64>,
    bits_i: u8,
    bits_q: u8,
    scale: f64,
}

impl Constellation {
    pub fn new(order_bits: u8) -> Result<Self> {
        if order_bits < 1 || order_bits > MAX_ORDER_BITS {
            return Err(Error::invalid(format!(
                "order_bits must be 1..={MAX_ORDER_BITS}, got {order_bits}"
            )));
        }
        let bits_i = (order_bits + 1) / 2;
        let bits_q = order_bits / 2;
        let m_i = 1usize << bits_i;
        let m_q = 1usize << bits_q;
        // Mean energy of levels {+-1, +-3, ...}: (M^2 - 1) / 3 per axis.
        let energy = (m_i * m_i - 1) as f64 / 3.0 + (m_q * m_q - 1) as f64 / 3.0;
        let scale = 1.0 / energy.sqrt();

        let points = (0..1usize << order_bits)
            .map(|label| {
                let gi = label >> bits_q;
                let gq = label & (m_q - 1);
                Complex64::new(
                    axis_amplitude(gray_decode(gi), m_i) * scale,
                    axis_amplitude(gray_decode(gq), m_q) * scale,
                )
            })
            .collect();

        Ok(Self {
            order_bits,
            points,
            bits_i,
            bits_q,
            scale,
        })
    }

    /// Shared table for the given order.
    pub fn cached(order_bits: u8) -> Result<&'static Constellation> {
        static TABLES: OnceLock<Vec<Constellation>> = OnceLock::new();
        let tables = TABLES.get_or_init(|| {
            (1..=MAX_ORDER_BITS)
                .map(|b| Constellation::new(b).expect("static orders are valid"))
                .collect()
        });
        if order_bits < 1 || order_bits > MAX_ORDER_BITS {
            return Err(Error::invalid(format!(
                "order_bits must be 1..={MAX_ORDER_BITS}, got {order_bits}"
            )));
        }
        Ok(&tables[(order_bits - 1) as usize])
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn map_label(&self, label: usize) -> Complex64 {
        self.points[label]
    }

    /// Hard decision to the nearest point; equidistant inputs resolve to
    /// the lowest integer label.
    pub fn demap_label(&self, symbol: Complex64) -> usize {
        let m_i = 1usize << self.bits_i;
        let m_q = 1usize << self.bits_q;
        let gi = gray_encode(slice_axis(symbol.re, m_i, self.scale));
        let gq = gray_encode(slice_axis(symbol.im, m_q, self.scale));
        (gi << self.bits_q) | gq
    }
}

fn axis_amplitude(level: usize, m: usize) -> f64 {
    (m as f64 - 1.0) - 2.0 * level as f64
}

/// Nearest level index on one axis; ties go to the smaller Gray code,
/// which is the smaller integer label overall.
fn slice_axis(v: f64, m: usize, scale: f64) -> usize {
    if m == 1 {
        return 0;
    }
    let u = ((m as f64 - 1.0) - v / scale) / 2.0;
    if u <= 0.0 {
        return 0;
    }
    if u >= (m - 1) as f64 {
        return m - 1;
    }
    let k = u.floor();
    let frac = u - k;
    let k = k as usize;
    if frac > 0.5 {
        k + 1
    } else if frac < 0.5 {
        k
    } else if gray_encode(k) < gray_encode(k + 1) {
        k
    } else {
        k + 1
    }
}

fn label_from_bits(bits: &[u8]) -> Result<usize> {
    let mut label = 0usize;
    for &b in bits {
        if b > 1 {
            return Err(Error::invalid("bit values must be 0 or 1"));
        }
        label = (label << 1) | b as usize;
    }
    Ok(label)
}

fn bits_from_label(label: usize, order_bits: u8) -> Vec<u8> {
    (0..order_bits)
        .map(|i| ((label >> (order_bits - 1 - i)) & 1) as u8)
        .collect()
}

/// Maps `order_bits` bits (MSB first) to a unit-average-power QAM symbol.
pub fn qam_map(bits: &[u8], order_bits: u8) -> Result<Complex64> {
    let c = Constellation::cached(order_bits)?;
    if bits.len() != order_bits as usize {
        return Err(Error::invalid(format!(
            "expected {} bits, got {}",
            order_bits,
            bits.len()
        )));
    }
    Ok(c.map_label(label_from_bits(bits)?))
}

/// Hard-decides a symbol back to its label bits.
pub fn qam_demap(symbol: Complex64, order_bits: u8) -> Result<Vec<u8>> {
    let c = Constellation::cached(order_bits)?;
    Ok(bits_from_label(c.demap_label(symbol), order_bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::q_function;
    use crate::SimRng;

    #[test]
    fn qpsk_first_quadrant_corner() {
        let s = qam_map(&[0, 0], 2).unwrap();
        assert!((s.re - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((s.im - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn unit_average_power_all_orders() {
        for b in 1..=MAX_ORDER_BITS {
            let c = Constellation::new(b).unwrap();
            let mean: f64 =
                c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / c.points().len() as f64;
            assert!((mean - 1.0).abs() < 1e-12, "order {b}: mean power {mean}");
        }
    }

    // Independent 16-QAM oracle: per-axis reflected Gray code written out by
    // hand. Two I bits (MSB side) pick the I level, two Q bits the Q level.
    fn expected_16qam(label: usize) -> Complex64 {
        fn level(gray2: usize) -> f64 {
            match gray2 {
                0b00 => 3.0,
                0b01 => 1.0,
                0b11 => -1.0,
                0b10 => -3.0,
                _ => unreachable!(),
            }
        }
        let a = 1.0 / 10f64.sqrt();
        Complex64::new(level(label >> 2) * a, level(label & 3) * a)
    }

    #[test]
    fn sixteen_qam_matches_enumerated_table() {
        for label in 0..16 {
            let bits = bits_from_label(label, 4);
            let got = qam_map(&bits, 4).unwrap();
            let want = expected_16qam(label);
            assert!((got - want).norm() < 1e-12, "label {label:04b}: {got} vs {want}");
        }
        // e.g. the all-zeros label sits at the positive corner
        let s = qam_map(&[0, 0, 0, 0], 4).unwrap();
        assert!((s - Complex64::new(3.0, 3.0) / 10f64.sqrt()).norm() < 1e-12);
    }

    #[test]
    fn map_demap_round_trip_all_orders() {
        for b in 1..=MAX_ORDER_BITS {
            let c = Constellation::new(b).unwrap();
            for label in 0..(1usize << b) {
                assert_eq!(c.demap_label(c.map_label(label)), label, "order {b}");
            }
        }
    }

    #[test]
    fn equidistant_input_takes_lowest_label() {
        // QPSK: all four points tie, label 0 wins.
        assert_eq!(qam_demap(Complex64::new(0.0, 0.0), 2).unwrap(), vec![0, 0]);
        // 16-QAM: the four inner points tie; of their labels {5, 7, 13, 15}
        // the smallest is 5.
        assert_eq!(qam_demap(Complex64::new(0.0, 0.0), 4).unwrap(), vec![0, 1, 0, 1]);
    }

    #[test]
    fn gray_property_nearest_neighbors_differ_in_one_bit() {
        for b in 1..=MAX_ORDER_BITS {
            let c = Constellation::new(b).unwrap();
            let pts = c.points();
            for (la, pa) in pts.iter().enumerate() {
                let mut best = f64::INFINITY;
                for (lb, pb) in pts.iter().enumerate() {
                    if la != lb {
                        best = best.min((pa - pb).norm());
                    }
                }
                for (lb, pb) in pts.iter().enumerate() {
                    if la != lb && (pa - pb).norm() < best * 1.0001 {
                        assert_eq!(
                            (la ^ lb).count_ones(),
                            1,
                            "order {b}: labels {la:b}/{lb:b} are nearest neighbors"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(qam_map(&[0, 0], 3).is_err());
        assert!(qam_map(&[0, 2], 2).is_err());
        assert!(qam_map(&[0], 0).is_err());
        assert!(qam_map(&[0; 9], 9).is_err());
    }

    #[test]
    fn qpsk_ber_matches_q_function_oracle() {
        // Gray QPSK over AWGN: BER = Q(sqrt(Es/N0)). At 9.8 dB that is ~1e-3.
        let snr = 10f64.powf(9.8 / 10.0);
        let expected = q_function(snr.sqrt());
        let mut rng = SimRng::new(0xBE5);
        let n_sym = 1_000_000usize;
        let mut errors = 0usize;
        for _ in 0..n_sym {
            let bits = rng.bits(2);
            let tx = qam_map(&bits, 2).unwrap();
            let rx = tx + rng.complex_normal(1.0 / snr);
            let decided = qam_demap(rx, 2).unwrap();
            errors += bits
                .iter()
                .zip(&decided)
                .filter(|(a, b)| a != b)
                .count();
        }
        let ber = errors as f64 / (2 * n_sym) as f64;
        assert!(
            (ber - expected).abs() / expected < 0.3,
            "ber {ber:.3e} vs oracle {expected:.3e}"
        );
    }
}
