//! Narrowband ULA channel model: steering vectors, per-subcarrier channel
//! frequency response (CFR) synthesis and the angle-delay channel amplitude
//! matrix (ADCAM) obtained through the two DFT bases.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// System parameters that stay fixed for every sample of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_bs_antennas: usize,
    pub num_subcarriers: usize,
    /// Hz.
    pub carrier_frequency: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Meters.
    pub antenna_spacing: f64,
    /// Seconds, always `1 / bandwidth`.
    pub sample_interval: f64,
    /// Meters, `[width, height]`.
    pub scene_extent: [f64; 2],
}

impl DatasetMeta {
    /// Half-wavelength spaced array with `T_s = 1 / bandwidth`.
    pub fn new(
        num_bs_antennas: usize,
        num_subcarriers: usize,
        carrier_frequency: f64,
        bandwidth: f64,
        scene_extent: [f64; 2],
    ) -> Result<Self> {
        let meta = DatasetMeta {
            num_bs_antennas,
            num_subcarriers,
            carrier_frequency,
            bandwidth,
            antenna_spacing: SPEED_OF_LIGHT / carrier_frequency / 2.0,
            sample_interval: 1.0 / bandwidth,
            scene_extent,
        };
        meta.validate()?;
        Ok(meta)
    }

    /// 60 GHz carrier, 50 MHz bandwidth, 64 subcarriers, 64-element ULA over
    /// a 250 m x 250 m area.
    pub fn reference() -> Self {
        DatasetMeta::new(64, 64, 60e9, 0.05e9, [250.0, 250.0]).expect("reference meta is valid")
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_frequency
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.num_bs_antennas < 1 {
            problems.push("num_bs_antennas must be >= 1".to_string());
        }
        if self.num_subcarriers < 1 {
            problems.push("num_subcarriers must be >= 1".to_string());
        }
        if !(self.carrier_frequency.is_finite() && self.carrier_frequency > 0.0) {
            problems.push("carrier_frequency must be positive".to_string());
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            problems.push("bandwidth must be positive".to_string());
        }
        if !(self.antenna_spacing.is_finite() && self.antenna_spacing > 0.0) {
            problems.push("antenna_spacing must be positive".to_string());
        }
        if self.sample_interval != 1.0 / self.bandwidth {
            problems.push("sample_interval must equal 1/bandwidth".to_string());
        }
        if !(self.scene_extent[0] > 0.0 && self.scene_extent[1] > 0.0) {
            problems.push("scene_extent must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(problems.join("; ")))
        }
    }
}

/// One propagation path between the BS and a mobile terminal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Angle of arrival at the BS array, radians in (0, pi).
    pub aoa: f64,
    /// Angle of departure at the terminal, radians.
    pub aod: f64,
    pub complex_gain: Complex64,
    /// Delay in whole sample intervals.
    pub sampled_delay: usize,
    /// dB.
    pub pathloss: f64,
    /// Unfolded path length in meters.
    pub distance: f64,
}

impl PropagationPath {
    pub fn new(
        aoa: f64,
        aod: f64,
        complex_gain: Complex64,
        sampled_delay: usize,
        pathloss: f64,
        distance: f64,
    ) -> Result<Self> {
        let path = PropagationPath {
            aoa,
            aod,
            complex_gain,
            sampled_delay,
            pathloss,
            distance,
        };
        path.check_angle()?;
        if !(aod.is_finite()
            && complex_gain.re.is_finite()
            && complex_gain.im.is_finite()
            && pathloss.is_finite()
            && distance.is_finite())
        {
            return Err(Error::domain("path parameters must be finite"));
        }
        Ok(path)
    }

    fn check_angle(&self) -> Result<()> {
        if self.aoa > 0.0 && self.aoa < PI {
            Ok(())
        } else {
            Err(Error::domain(format!("AOA {} outside (0, pi)", self.aoa)))
        }
    }

    pub fn validate(&self, meta: &DatasetMeta) -> Result<()> {
        self.check_angle()?;
        if self.sampled_delay >= meta.num_subcarriers {
            return Err(Error::domain(format!(
                "sampled delay {} beyond the OFDM window of {} subcarriers",
                self.sampled_delay, meta.num_subcarriers
            )));
        }
        Ok(())
    }
}

/// Dense row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

/// Antennas along the rows, subcarriers along the columns.
pub type CfrMatrix = ComplexMatrix;

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(ComplexMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn conj_transpose(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c].conj();
            }
        }
        out
    }

    pub fn matmul(&self, rhs: &ComplexMatrix) -> Result<ComplexMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimensionMismatch(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = ComplexMatrix::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * rhs.cols..(r + 1) * rhs.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                let rhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                for (o, b) in out_row.iter_mut().zip(rhs_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub(crate) fn map_in_place(&mut self, f: impl Fn(Complex64) -> Complex64) {
        for z in &mut self.data {
            *z = f(*z);
        }
    }
}

/// Non-negative angle-delay amplitude grid, angle bins along the rows and
/// delay bins along the columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Adcam {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Adcam {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} ADCAM",
                data.len()
            )));
        }
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("ADCAM entries must be finite and non-negative"));
        }
        Ok(Adcam { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn map_in_place(&mut self, f: impl Fn(f64) -> f64) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }
}

/// ULA response `exp(-j 2 pi k d cos(phi) / lambda)` for `k = 0..N_t`.
pub fn steering_vector(phi: f64, meta: &DatasetMeta) -> Result<Vec<Complex64>> {
    if !(phi > 0.0 && phi < PI) {
        return Err(Error::domain(format!("AOA {phi} outside (0, pi)")));
    }
    let spatial = meta.antenna_spacing * phi.cos() / meta.wavelength();
    Ok((0..meta.num_bs_antennas)
        .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 * spatial))
        .collect())
}

/// Unit-modulus delay factor `exp(-j 2 pi l n / N_c)`, reduced modulo `N_c`
/// so the phase argument stays exact for large products.
fn delay_phase(l: usize, delay: usize, num_subcarriers: usize) -> Complex64 {
    let k = (l * delay) % num_subcarriers;
    Complex64::from_polar(1.0, -2.0 * PI * k as f64 / num_subcarriers as f64)
}

/// Sums the per-path responses into the `N_t x N_c` CFR matrix.
pub fn synthesize_cfr(paths: &[PropagationPath], meta: &DatasetMeta) -> Result<CfrMatrix> {
    if paths.is_empty() {
        return Err(Error::domain("cannot synthesize a CFR from an empty path list"));
    }
    let nt = meta.num_bs_antennas;
    let nc = meta.num_subcarriers;
    let mut h = ComplexMatrix::zeros(nt, nc);
    for path in paths {
        path.validate(meta)?;
        let steering = steering_vector(path.aoa, meta)?;
        let delays: Vec<Complex64> = (0..nc)
            .map(|l| delay_phase(l, path.sampled_delay, nc))
            .collect();
        for (k, e) in steering.iter().enumerate() {
            let scaled = path.complex_gain * e;
            let row = &mut h.data[k * nc..(k + 1) * nc];
            for (entry, d) in row.iter_mut().zip(&delays) {
                *entry += scaled * d;
            }
        }
    }
    Ok(h)
}

/// Angle basis `V` (with the half-aperture shift) and delay basis `F`.
pub fn dft_matrices(meta: &DatasetMeta) -> (ComplexMatrix, ComplexMatrix) {
    let nt = meta.num_bs_antennas;
    let nc = meta.num_subcarriers;
    let half = nt as f64 / 2.0;
    let scale_t = 1.0 / (nt as f64).sqrt();
    let mut v = ComplexMatrix::zeros(nt, nt);
    for z in 0..nt {
        for q in 0..nt {
            let arg = -2.0 * PI * z as f64 * (q as f64 - half) / nt as f64;
            v.set(z, q, Complex64::from_polar(scale_t, arg));
        }
    }
    let scale_c = 1.0 / (nc as f64).sqrt();
    let mut f = ComplexMatrix::zeros(nc, nc);
    for z in 0..nc {
        for q in 0..nc {
            let k = (z * q) % nc;
            f.set(z, q, Complex64::from_polar(scale_c, -2.0 * PI * k as f64 / nc as f64));
        }
    }
    (v, f)
}

/// Precomputed `V^H` and `F` for repeated ADCAM evaluation.
#[derive(Debug, Clone)]
pub struct AdcamTransform {
    v_h: ComplexMatrix,
    f: ComplexMatrix,
}

impl AdcamTransform {
    pub fn new(meta: &DatasetMeta) -> Self {
        let (v, f) = dft_matrices(meta);
        AdcamTransform {
            v_h: v.conj_transpose(),
            f,
        }
    }

    /// `|V^H H F|` entrywise.
    pub fn apply(&self, h: &CfrMatrix) -> Result<Adcam> {
        if h.rows != self.v_h.cols || h.cols != self.f.rows {
            return Err(Error::DimensionMismatch(format!(
                "CFR is {}x{}, transform expects {}x{}",
                h.rows, h.cols, self.v_h.cols, self.f.rows
            )));
        }
        let product = self.v_h.matmul(h)?.matmul(&self.f)?;
        let data = product.data.iter().map(|z| z.norm()).collect();
        Ok(Adcam {
            rows: product.rows,
            cols: product.cols,
            data,
        })
    }
}

pub fn compute_adcam(h: &CfrMatrix, meta: &DatasetMeta) -> Result<Adcam> {
    AdcamTransform::new(meta).apply(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn meta(nt: usize, nc: usize) -> DatasetMeta {
        DatasetMeta::new(nt, nc, 60e9, 0.05e9, [250.0, 250.0]).unwrap()
    }

    fn path(aoa: f64, gain: Complex64, delay: usize) -> PropagationPath {
        PropagationPath::new(aoa, 0.0, gain, delay, 0.0, 1.0).unwrap()
    }

    fn random_cfr(rng: &mut ChaCha8Rng, nt: usize, nc: usize) -> CfrMatrix {
        let data = (0..nt * nc)
            .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        ComplexMatrix::from_vec(nt, nc, data).unwrap()
    }

    #[test]
    fn steering_broadside_is_all_ones() {
        for nt in [1, 2, 7, 64] {
            let e = steering_vector(PI / 2.0, &meta(nt, 4)).unwrap();
            assert_eq!(e.len(), nt);
            for z in e {
                assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-12);
                assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn steering_analytic_cases() {
        let m = meta(2, 4);
        let near_endfire = steering_vector(1e-9, &m).unwrap();
        assert_abs_diff_eq!(near_endfire[0].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(near_endfire[1].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(near_endfire[1].im, 0.0, epsilon = 1e-8);

        let e = steering_vector(PI / 3.0, &m).unwrap();
        assert_abs_diff_eq!(e[1].re, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1].im, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn steering_rejects_out_of_range_angles() {
        let m = meta(4, 4);
        for phi in [0.0, PI, -0.1, 4.0, f64::NAN] {
            assert!(matches!(steering_vector(phi, &m), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn steering_mirror_angle_is_conjugate() {
        let m = meta(16, 4);
        for phi in [0.1, 0.7, 1.3, 2.9] {
            let a = steering_vector(phi, &m).unwrap();
            let b = steering_vector(PI - phi, &m).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_abs_diff_eq!(x.re, y.re, epsilon = 1e-9);
                assert_abs_diff_eq!(x.im, -y.im, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn single_broadside_zero_delay_path_gives_ones() {
        let m = meta(8, 16);
        let h = synthesize_cfr(&[path(PI / 2.0, Complex64::new(1.0, 0.0), 0)], &m).unwrap();
        for z in h.data() {
            assert_abs_diff_eq!(z.re, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_path_has_constant_magnitude() {
        let m = meta(8, 16);
        let gain = Complex64::new(0.3, -0.4);
        let h = synthesize_cfr(&[path(1.1, gain, 5)], &m).unwrap();
        for z in h.data() {
            assert_abs_diff_eq!(z.norm(), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn opposite_paths_cancel() {
        let m = meta(8, 16);
        let paths = [
            path(0.9, Complex64::new(1.0, 0.0), 3),
            path(0.9, Complex64::new(-1.0, 0.0), 3),
        ];
        let h = synthesize_cfr(&paths, &m).unwrap();
        assert!(h.data().iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn synthesize_rejects_empty_and_out_of_window_delays() {
        let m = meta(4, 8);
        assert!(matches!(synthesize_cfr(&[], &m), Err(Error::Domain(_))));
        let late = path(1.0, Complex64::new(1.0, 0.0), 8);
        assert!(matches!(synthesize_cfr(&[late], &m), Err(Error::Domain(_))));
    }

    #[test]
    fn dft_single_subcarrier_is_unit() {
        let (_, f) = dft_matrices(&meta(3, 1));
        assert_eq!(f.rows(), 1);
        assert_abs_diff_eq!(f.get(0, 0).re, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.get(0, 0).im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn dft_two_antenna_columns_orthonormal() {
        let (v, _) = dft_matrices(&meta(2, 1));
        for a in 0..2 {
            for b in 0..2 {
                let dot: Complex64 = (0..2).map(|z| v.get(z, a).conj() * v.get(z, b)).sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot.re, expected, epsilon = 1e-12);
                assert_abs_diff_eq!(dot.im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn dft_frobenius_norm_is_sqrt_dimension() {
        for (nt, nc) in [(1, 1), (3, 5), (64, 64)] {
            let (v, f) = dft_matrices(&meta(nt, nc));
            assert_abs_diff_eq!(v.frobenius_norm(), (nt as f64).sqrt(), epsilon = 1e-10);
            assert_abs_diff_eq!(f.frobenius_norm(), (nc as f64).sqrt(), epsilon = 1e-10);
        }
    }

    #[test]
    fn adcam_of_zero_is_zero() {
        let m = meta(4, 4);
        let a = compute_adcam(&ComplexMatrix::zeros(4, 4), &m).unwrap();
        assert!(a.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adcam_rejects_dimension_mismatch() {
        let m = meta(4, 4);
        let err = compute_adcam(&ComplexMatrix::zeros(4, 5), &m).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn adcam_preserves_frobenius_norm_small() {
        let m = meta(4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cfr(&mut rng, 4, 4);
        let a = compute_adcam(&h, &m).unwrap();
        let rel = (a.frobenius_norm() - h.frobenius_norm()).abs() / h.frobenius_norm();
        assert!(rel < 1e-8, "relative error {rel}");
    }
}
