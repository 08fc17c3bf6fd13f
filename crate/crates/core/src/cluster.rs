//! Centroid clustering of per-sample path parameters, with the cluster
//! count chosen by combining Silhouette and Calinski-Harabasz scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::PropagationPath;
use crate::error::{Error, Result};

pub const FEATURE_DIM: usize = 6;
pub const DEFAULT_MAX_ITER: usize = 300;
pub const DEFAULT_TOL: f64 = 1e-6;

/// First-arrival AOA, AOD, gain (dB), delay (samples), total pathloss
/// proxy (dB) and path count.
pub fn path_features(paths: &[PropagationPath]) -> Result<[f64; FEATURE_DIM]> {
    let first = paths
        .first()
        .ok_or_else(|| Error::domain("sample without paths"))?;
    let received: f64 = paths.iter().map(|p| 10f64.powf(-p.pathloss / 10.0)).sum();
    Ok([
        first.aoa,
        first.aod,
        20.0 * first.complex_gain.norm().log10(),
        first.sampled_delay as f64,
        -10.0 * received.log10(),
        paths.len() as f64,
    ])
}

/// Per-dimension z-scoring; constant dimensions keep unit scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::domain("no feature rows"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub silhouette: f64,
    /// `f64::INFINITY` when the within-cluster dispersion is zero.
    pub calinski_harabasz: f64,
    pub rng_seed: u64,
    /// Within-cluster sum of squares after seeding and after each Lloyd
    /// iteration.
    pub wcss_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_rows(features: &[Vec<f64>]) -> Result<usize> {
    let d = features
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::domain("no feature rows"))?;
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::DimensionMismatch("feature rows differ in length".into()));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("features must be finite"));
    }
    Ok(d)
}

/// Seeding: first centroid uniform, later ones drawn proportional to the
/// squared distance to the nearest chosen centroid.
fn seed_centroids(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let m = features.len();
    let mut centroids = vec![features[rng.gen_range(0..m)].clone()];
    let mut nearest: Vec<f64> = features.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = m - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..m)
        };
        centroids.push(features[pick].clone());
        for (n, x) in nearest.iter_mut().zip(features) {
            *n = n.min(sq_dist(x, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Nearest centroid, ties to the lowest index.
pub fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(x, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(features: &[Vec<f64>], centroids: &mut [Vec<f64>]) -> Vec<usize> {
    let mut labels: Vec<usize> = features
        .par_iter()
        .map(|x| nearest_centroid(x, centroids).0)
        .collect();
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        // The point farthest from its own centroid (within a cluster that
        // can spare it) moves into the empty cluster.
        let mut donor: Option<(usize, f64)> = None;
        for (i, x) in features.iter().enumerate() {
            if counts[labels[i]] < 2 {
                continue;
            }
            let d = sq_dist(x, &centroids[labels[i]]);
            if donor.is_none_or(|(_, best)| d > best) {
                donor = Some((i, d));
            }
        }
        let (i, _) = donor.expect("K <= M leaves a cluster with at least two members");
        labels[i] = empty;
        centroids[empty] = features[i].clone();
    }
    labels
}

fn means(features: &[Vec<f64>], labels: &[usize], k: usize, d: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (x, &l) in features.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x) {
            *s += v;
        }
    }
    for (s, n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= *n as f64);
    }
    sums
}

pub fn wcss(features: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    features
        .iter()
        .zip(labels)
        .map(|(x, &l)| sq_dist(x, &centroids[l]))
        .sum()
}

/// Lloyd iterations from seeded centroids until the largest centroid
/// shift drops below `tol` or `max_iter` is reached.
pub fn kmeans(features: &[Vec<f64>], k: usize, seed: u64, max_iter: usize, tol: f64) -> Result<ClusteringResult> {
    let d = check_rows(features)?;
    let m = features.len();
    if k < 2 || k > m {
        return Err(Error::domain(format!("K = {k} outside 2..={m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(features, k, &mut rng);
    let mut labels = assign(features, &mut centroids);
    let mut history = vec![wcss(features, &labels, &centroids)];
    for _ in 0..max_iter {
        let updated = means(features, &labels, k, d);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = updated;
        labels = assign(features, &mut centroids);
        history.push(wcss(features, &labels, &centroids));
        if shift < tol {
            break;
        }
    }
    let centroids = means(features, &labels, k, d);
    Ok(ClusteringResult {
        k,
        silhouette: silhouette(features, &labels)?,
        calinski_harabasz: calinski_harabasz(features, &labels)?,
        centroids,
        labels,
        rng_seed: seed,
        wcss_history: history,
    })
}

fn cluster_count(labels: &[usize], m: usize) -> Result<usize> {
    if labels.len() != m {
        return Err(Error::DimensionMismatch(format!("{} labels for {m} rows", labels.len())));
    }
    let k = labels.iter().max().map_or(0, |l| l + 1);
    if k < 2 {
        return Err(Error::domain("cluster scores need at least two clusters"));
    }
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::domain("cluster labels must be contiguous with no empty cluster"));
    }
    Ok(k)
}

/// Mean silhouette; singleton clusters contribute 0.
pub fn silhouette(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    check_rows(features)?;
    let m = features.len();
    let k = cluster_count(labels, m)?;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let scores: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let own = labels[i];
            if counts[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for (j, x) in features.iter().enumerate() {
                if j != i {
                    sums[labels[j]] += sq_dist(&features[i], x).sqrt();
                }
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / m as f64)
}

/// Between-cluster over within-cluster dispersion ratio, each divided by
/// its degrees of freedom. Zero within-cluster dispersion gives `+inf`.
pub fn calinski_harabasz(features: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let d = check_rows(features)?;
    let m = features.len();
    let k = cluster_count(labels, m)?;
    let centroids = means(features, labels, k, d);
    let mut overall = vec![0.0; d];
    for x in features {
        for (o, v) in overall.iter_mut().zip(x) {
            *o += v;
        }
    }
    overall.iter_mut().for_each(|o| *o /= m as f64);
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    let between: f64 = centroids
        .iter()
        .zip(&counts)
        .map(|(c, &n)| n as f64 * sq_dist(c, &overall))
        .sum();
    let within = wcss(features, labels, &centroids);
    if within <= 0.0 || m == k {
        return Ok(f64::INFINITY);
    }
    Ok((between / (k - 1) as f64) / (within / (m - k) as f64))
}

/// Min-max normalization. Infinite scores map to 1 and finite ones are
/// spread over [0, 1]; a flat curve maps to zeros.
pub fn normalize_curve(values: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| {
            if v.is_infinite() {
                1.0
            } else if hi > lo {
                (v - lo) / (hi - lo)
            } else {
                0.0
            }
        })
        .collect()
}

/// Index of the maximal combined score, ties to the first (smallest K).
pub fn pick_best(silhouettes: &[f64], ch: &[f64]) -> usize {
    let s = normalize_curve(silhouettes);
    let c = normalize_curve(ch);
    let mut best = 0;
    for i in 1..s.len() {
        if s[i] + c[i] > s[best] + c[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub best: ClusteringResult,
    /// `(K, silhouette, calinski_harabasz)` for every candidate.
    pub curve: Vec<(usize, f64, f64)>,
}

pub fn select_k_with_curve(features: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Result<Selection> {
    check_rows(features)?;
    let m = features.len();
    if k_min < 2 || k_min >= k_max || k_max + 1 > m {
        return Err(Error::domain(format!(
            "K range {k_min}..={k_max} invalid for {m} samples (need 2 <= k_min < k_max <= M - 1)"
        )));
    }
    let runs: Vec<ClusteringResult> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| kmeans(features, k, seed, DEFAULT_MAX_ITER, DEFAULT_TOL))
        .collect::<Result<_>>()?;
    let sil: Vec<f64> = runs.iter().map(|r| r.silhouette).collect();
    let ch: Vec<f64> = runs.iter().map(|r| r.calinski_harabasz).collect();
    let best = pick_best(&sil, &ch);
    let curve = runs
        .iter()
        .map(|r| (r.k, r.silhouette, r.calinski_harabasz))
        .collect();
    Ok(Selection {
        best: runs[best].clone(),
        curve,
    })
}

pub fn select_k(features: &[Vec<f64>], k_min: usize, k_max: usize, seed: u64) -> Result<ClusteringResult> {
    Ok(select_k_with_curve(features, k_min, k_max, seed)?.best)
}

pub const LABELS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub silhouette: f64,
    /// `null` encodes `+inf`.
    pub ch: Option<f64>,
}

impl Scores {
    fn new(silhouette: f64, ch: f64) -> Self {
        Scores {
            silhouette,
            ch: ch.is_finite().then_some(ch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub scores: Scores,
}

/// Contents of `labels_adcam.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdcamLabelsFile {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
    /// In standardized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub scores: Scores,
    pub standardizer: Standardizer,
    pub curve: Vec<CurvePoint>,
}

impl AdcamLabelsFile {
    pub fn new(selection: &Selection, standardizer: &Standardizer) -> Self {
        let best = &selection.best;
        AdcamLabelsFile {
            version: LABELS_VERSION,
            k: best.k,
            seed: best.rng_seed,
            labels: best.labels.clone(),
            centroids: best.centroids.clone(),
            scores: Scores::new(best.silhouette, best.calinski_harabasz),
            standardizer: standardizer.clone(),
            curve: selection
                .curve
                .iter()
                .map(|&(k, s, c)| CurvePoint { k, scores: Scores::new(s, c) })
                .collect(),
        }
    }
}

/// Standardized path features for every sample.
pub fn standardized_features(path_lists: &[&[PropagationPath]]) -> Result<(Vec<Vec<f64>>, Standardizer)> {
    let raw: Vec<Vec<f64>> = path_lists
        .iter()
        .map(|p| path_features(p).map(|f| f.to_vec()))
        .collect::<Result<_>>()?;
    let standardizer = Standardizer::fit(&raw)?;
    let rows = raw.iter().map(|r| standardizer.apply(r)).collect();
    Ok((rows, standardizer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rows(points: &[[f64; 2]]) -> Vec<Vec<f64>> {
        points.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn distinct_points_become_their_own_centroids() {
        let f = rows(&[[0.0, 0.0], [5.0, 1.0], [-3.0, 4.0]]);
        let r = kmeans(&f, 3, 1, 100, 1e-9).unwrap();
        assert_eq!(*r.wcss_history.last().unwrap(), 0.0);
        let mut centroids = r.centroids.clone();
        centroids.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(centroids, rows(&[[-3.0, 4.0], [0.0, 0.0], [5.0, 1.0]]));
    }

    #[test]
    fn identical_points_trigger_empty_cluster_rule() {
        let f = rows(&[[2.0, 2.0]; 5]);
        let r = kmeans(&f, 2, 0, 50, 1e-9).unwrap();
        assert_eq!(r.centroids, rows(&[[2.0, 2.0], [2.0, 2.0]]));
        assert!(r.labels.contains(&0) && r.labels.contains(&1));
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let f = rows(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(kmeans(&f, 1, 0, 10, 1e-6).is_err());
        assert!(kmeans(&f, 3, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn coincident_pairs_have_unit_silhouette_and_infinite_ch() {
        let f = rows(&[[0.0, 0.0], [0.0, 0.0], [10.0, 0.0], [10.0, 0.0]]);
        let labels = [0, 0, 1, 1];
        assert_abs_diff_eq!(silhouette(&f, &labels).unwrap(), 1.0, epsilon = 1e-15);
        assert_eq!(calinski_harabasz(&f, &labels).unwrap(), f64::INFINITY);
    }

    #[test]
    fn empty_or_single_cluster_is_rejected() {
        let f = rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]);
        assert!(silhouette(&f, &[0, 0, 0]).is_err());
        assert!(silhouette(&f, &[0, 2, 2]).is_err());
        assert!(calinski_harabasz(&f, &[1, 1, 1]).is_err());
    }

    #[test]
    fn six_point_calinski_harabasz_closed_form() {
        // Clusters {(0,0),(2,0),(1,3)} and {(10,0),(12,0),(11,3)}:
        // centroids (1,1) and (11,1), overall centroid (6,1).
        // Between: 3*25 + 3*25 = 150. Within per cluster: 2 + 2 + 4 = 8.
        let f = rows(&[[0.0, 0.0], [2.0, 0.0], [1.0, 3.0], [10.0, 0.0], [12.0, 0.0], [11.0, 3.0]]);
        let labels = [0, 0, 0, 1, 1, 1];
        let expected = (150.0 / 1.0) / (16.0 / 4.0);
        assert_abs_diff_eq!(calinski_harabasz(&f, &labels).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn curve_normalization_and_ties() {
        assert_eq!(normalize_curve(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
        assert_eq!(normalize_curve(&[4.0, 4.0]), vec![0.0, 0.0]);
        assert_eq!(normalize_curve(&[1.0, f64::INFINITY, 2.0]), vec![0.0, 1.0, 1.0]);
        assert_eq!(pick_best(&[0.5, 0.5], &[3.0, 3.0]), 0);
        // Opposite slopes sum to a tie, so the smaller K wins.
        assert_eq!(pick_best(&[0.2, 0.4], &[5.0, 1.0]), 0);
    }

    #[test]
    fn select_k_validates_range() {
        let f = rows(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        assert!(select_k(&f, 2, 8, 0).is_err());
        assert!(select_k(&f, 3, 3, 0).is_err());
        assert!(select_k(&f, 1, 3, 0).is_err());
        assert!(select_k(&f, 2, 3, 0).is_ok());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let f = rows(&[[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]]);
        let s = Standardizer::fit(&f).unwrap();
        let z: Vec<Vec<f64>> = f.iter().map(|r| s.apply(r)).collect();
        let mean0: f64 = z.iter().map(|r| r[0]).sum::<f64>() / 3.0;
        let var0: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert_abs_diff_eq!(mean0, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(var0, 1.0, epsilon = 1e-12);
        assert!(z.iter().all(|r| r[1] == 0.0));
    }

    #[test]
    fn infinite_ch_serializes_as_null() {
        let s = Scores::new(0.9, f64::INFINITY);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"silhouette":0.9,"ch":null}"#);
    }
}
