//! Fingerprint images: CFR as (magnitude, phase) channels, ADCAM as a
//! single magnitude channel. Rows are antennas (or angle bins), columns are
//! subcarriers (or delay bins). Every image is max-normalized on its own.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::channel::{Adcam, CfrMatrix};
use crate::error::{Error, Result};

/// Channel-major pixel grid with values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintImage {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f64>,
}

impl FingerprintImage {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != channels * height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {channels}x{height}x{width} image",
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::domain("image pixels must lie in [0, 1]"));
        }
        Ok(FingerprintImage {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.pixels[(c * self.height + row) * self.width + col]
    }

    /// Writes channel 0 as an 8-bit binary PGM.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + self.height * self.width);
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.extend(self.channel(0).iter().map(|p| (p * 255.0).round() as u8));
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn max_normalize(values: &mut [f64]) {
    let max = values.iter().cloned().fold(0.0_f64, f64::max);
    if max > 0.0 {
        for v in values.iter_mut() {
            *v = (*v / max).min(1.0);
        }
    }
}

/// Channel 0 is `|H| / max|H|`, channel 1 is `(arg H + pi) / 2 pi`.
pub fn cfr_to_image(h: &CfrMatrix) -> FingerprintImage {
    let n = h.rows() * h.cols();
    let mut pixels = Vec::with_capacity(2 * n);
    pixels.extend(h.data().iter().map(|z| z.norm()));
    max_normalize(&mut pixels[..n]);
    pixels.extend(h.data().iter().map(|z| {
        // arg(0) is 0 by convention, which lands on 0.5.
        ((z.arg() + PI) / (2.0 * PI)).clamp(0.0, 1.0)
    }));
    FingerprintImage {
        channels: 2,
        height: h.rows(),
        width: h.cols(),
        pixels,
    }
}

pub fn adcam_to_image(a: &Adcam) -> FingerprintImage {
    let mut pixels = a.data().to_vec();
    max_normalize(&mut pixels);
    FingerprintImage {
        channels: 1,
        height: a.rows(),
        width: a.cols(),
        pixels,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{synthesize_cfr, ComplexMatrix, DatasetMeta, PropagationPath};
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;
    use proptest::prelude::*;

    #[test]
    fn unit_cfr_maps_to_ones_and_half() {
        let h = ComplexMatrix::from_vec(3, 4, vec![Complex64::new(1.0, 0.0); 12]).unwrap();
        let img = cfr_to_image(&h);
        assert!(img.channel(0).iter().all(|&p| p == 1.0));
        assert!(img.channel(1).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn zero_cfr_uses_degenerate_guard() {
        let img = cfr_to_image(&ComplexMatrix::zeros(3, 4));
        assert!(img.channel(0).iter().all(|&p| p == 0.0));
        assert!(img.channel(1).iter().all(|&p| p == 0.5));
    }

    #[test]
    fn single_path_gives_flat_magnitude_and_phase_ramp() {
        let meta = DatasetMeta::new(4, 16, 60e9, 0.05e9, [10.0, 10.0]).unwrap();
        let gain = Complex64::from_polar(0.8, 0.3);
        let delay = 2;
        let path = PropagationPath::new(PI / 2.0, 0.0, gain, delay, 0.0, 1.0).unwrap();
        let img = cfr_to_image(&synthesize_cfr(&[path], &meta).unwrap());
        for p in img.channel(0) {
            assert_abs_diff_eq!(*p, 1.0, epsilon = 1e-12);
        }
        for row in 0..4 {
            for l in 0..16 {
                // Broadside, so only the delay ramp and the gain phase remain.
                let phase = 0.3 - 2.0 * PI * (l * delay) as f64 / 16.0;
                let wrapped = phase - 2.0 * PI * ((phase + PI) / (2.0 * PI)).floor();
                let expected = (wrapped + PI) / (2.0 * PI);
                let got = img.get(1, row, l);
                let diff = (got - expected).abs();
                assert!(diff < 1e-9 || (1.0 - diff) < 1e-9, "row {row} col {l}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn adcam_single_peak_and_zero() {
        let mut data = vec![0.0; 12];
        data[7] = 3.5;
        let img = adcam_to_image(&Adcam::from_vec(3, 4, data).unwrap());
        for (i, p) in img.channel(0).iter().enumerate() {
            assert_eq!(*p, if i == 7 { 1.0 } else { 0.0 });
        }
        let zero = adcam_to_image(&Adcam::from_vec(3, 4, vec![0.0; 12]).unwrap());
        assert!(zero.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn pgm_dump_has_header_and_payload() {
        let h = ComplexMatrix::from_vec(2, 3, vec![Complex64::new(1.0, 0.0); 6]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfr_0.pgm");
        cfr_to_image(&h).write_pgm(&path).unwrap();
        let bytes = std::fs::read(path).unwrap();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[255u8; 6]);
    }

    fn complex_grid() -> impl Strategy<Value = ComplexMatrix> {
        (1usize..6, 1usize..6).prop_flat_map(|(r, c)| {
            proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), r * c).prop_map(move |v| {
                let data = v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect();
                ComplexMatrix::from_vec(r, c, data).unwrap()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn pixels_stay_in_unit_range(h in complex_grid()) {
            let img = cfr_to_image(&h);
            prop_assert!(img.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
            let a = crate::channel::Adcam::from_vec(
                h.rows(), h.cols(), h.data().iter().map(|z| z.norm()).collect()).unwrap();
            prop_assert!(adcam_to_image(&a).pixels().iter().all(|p| (0.0..=1.0).contains(p)));
        }

        #[test]
        fn magnitude_channel_is_scale_invariant(h in complex_grid(), c in 0.01f64..100.0) {
            let mut scaled = h.clone();
            scaled.map_in_place(|z| z * c);
            let a = cfr_to_image(&h);
            let b = cfr_to_image(&scaled);
            for (x, y) in a.channel(0).iter().zip(b.channel(0)) {
                prop_assert!((x - y).abs() < 1e-7);
            }
        }

        #[test]
        fn global_phase_shifts_phase_channel(h in complex_grid(), theta in -3.0f64..3.0) {
            let mut rotated = h.clone();
            rotated.map_in_place(|z| z * Complex64::from_polar(1.0, theta));
            let a = cfr_to_image(&h);
            let b = cfr_to_image(&rotated);
            let shift = theta / (2.0 * PI);
            for ((x, y), z) in a.channel(1).iter().zip(b.channel(1)).zip(h.data()) {
                if z.norm() < 1e-9 { continue; }
                let d = (y - x - shift).rem_euclid(1.0);
                prop_assert!(d < 1e-9 || 1.0 - d < 1e-9);
            }
        }

        #[test]
        fn adcam_image_ignores_positive_scale(v in proptest::collection::vec(0.0f64..10.0, 12), c in 0.01f64..100.0) {
            let a = Adcam::from_vec(3, 4, v.clone()).unwrap();
            let b = Adcam::from_vec(3, 4, v.iter().map(|x| x * c).collect()).unwrap();
            let (ia, ib) = (adcam_to_image(&a), adcam_to_image(&b));
            for (x, y) in ia.pixels().iter().zip(ib.pixels()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
