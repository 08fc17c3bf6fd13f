#![allow(dead_code)]

use amdnloc::channel::DatasetMeta;
use amdnloc::image::{cfr_to_image, FingerprintImage};
use amdnloc::scene::{generate_dataset, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Three well separated isotropic blobs in the plane, `per_blob` points each.
pub fn three_blobs(seed: u64, per_blob: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();
    let centers = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];
    let mut rows = Vec::new();
    for c in centers {
        for _ in 0..per_blob {
            rows.push(vec![c[0] + noise.sample(&mut rng), c[1] + noise.sample(&mut rng)]);
        }
    }
    rows
}

/// Mean silhouette straight from the definition, O(M^2) with no shortcuts.
pub fn silhouette_oracle(x: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().max().unwrap() + 1;
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let mut total = 0.0;
    for i in 0..x.len() {
        let own = labels.iter().filter(|&&l| l == labels[i]).count();
        if own == 1 {
            continue;
        }
        let mean_to = |c: usize| {
            let members: Vec<usize> = (0..x.len()).filter(|&j| labels[j] == c && j != i).collect();
            members.iter().map(|&j| dist(&x[i], &x[j])).sum::<f64>() / members.len() as f64
        };
        let a = mean_to(labels[i]);
        let b = (0..k)
            .filter(|&c| c != labels[i])
            .map(mean_to)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / x.len() as f64
}

/// Two-channel image with the given magnitude plane and a flat phase.
pub fn magnitude_image(h: usize, w: usize, magnitude: Vec<f64>) -> FingerprintImage {
    let mut pixels = magnitude;
    pixels.extend(std::iter::repeat_n(0.5, h * w));
    FingerprintImage::new(2, h, w, pixels).unwrap()
}

/// Horizontal bands of period `period` rows.
pub fn banded(h: usize, w: usize, period: usize, phase: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| {
            let r = i / w;
            if (r + phase) % period < period / 2 {
                1.0
            } else {
                0.1
            }
        })
        .collect()
}

/// Vertical stripes of period `period` columns.
pub fn striped(h: usize, w: usize, period: usize) -> Vec<f64> {
    (0..h * w)
        .map(|i| if (i % w).is_multiple_of(period) { 1.0 } else { 0.05 })
        .collect()
}

pub fn jitter(values: &[f64], amount: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    values
        .iter()
        .map(|v| (v + rng.gen_range(-amount..amount)).clamp(0.0, 1.0))
        .collect()
}

/// CFR images of a small dataset drawn from the reference scene.
pub fn reference_cfr_images(seed: u64, count: usize) -> Vec<FingerprintImage> {
    let samples = generate_dataset(&Scene::reference(seed), count, &DatasetMeta::reference()).unwrap();
    samples.iter().map(|s| cfr_to_image(&s.cfr)).collect()
}
