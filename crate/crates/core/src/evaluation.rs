//! Baseline configurations, error statistics and the report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::PropagationPath;
use crate::cluster::{AdcamLabelsFile, Standardizer};
use crate::error::{Error, Result};
use crate::filter::{dual_match, CfrLabelsFile, TemplatePair};
use crate::fusion::{RegionLabel, RegionsFile};
use crate::image::{adcam_to_image, cfr_to_image, FingerprintImage};
use crate::nn::{
    mse_loss, stratified_split, train, Architecture, BranchSpec, Example, ExtractorConfig, LocalizerModel, TrainConfig, TrainReport,
};
use crate::scene::{MultipathSample, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ResCfr,
    ResAdcam,
    ResCfradcam,
    ResMultiCfradcam,
    ResMultiCfrperfectadcam,
    Amdnloc,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::ResCfr,
        Method::ResAdcam,
        Method::ResCfradcam,
        Method::ResMultiCfradcam,
        Method::ResMultiCfrperfectadcam,
        Method::Amdnloc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::ResCfr => "res_cfr",
            Method::ResAdcam => "res_adcam",
            Method::ResCfradcam => "res_cfradcam",
            Method::ResMultiCfradcam => "res_multi_cfradcam",
            Method::ResMultiCfrperfectadcam => "res_multi_cfrperfectadcam",
            Method::Amdnloc => "amdnloc",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name.trim())
            .ok_or_else(|| Error::UnknownBaseline(name.to_string()))
    }

    /// Comma-separated list; `all` expands to every method.
    pub fn parse_list(list: &str) -> Result<Vec<Self>> {
        if list.trim() == "all" {
            return Ok(Method::ALL.to_vec());
        }
        let mut out: Vec<Method> = list.split(',').map(Method::parse).collect::<Result<_>>()?;
        out.dedup();
        Ok(out)
    }

}

/// Length of the ground-truth first-arrival vector.
pub const PERFECT_FEATURES: usize = 4;

/// AOA, AOD, unfolded distance and gain (dB) of the first arrival.
pub fn perfect_features(paths: &[PropagationPath]) -> Result<[f64; PERFECT_FEATURES]> {
    let p = paths.first().ok_or_else(|| Error::domain("sample without paths"))?;
    Ok([p.aoa, p.aod, p.distance, 20.0 * p.complex_gain.norm().log10()])
}

/// The three segmentation artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    pub cfr: CfrLabelsFile,
    pub adcam: AdcamLabelsFile,
    pub regions: RegionsFile,
}

impl Segmentation {
    pub fn region_labels(&self) -> Result<Vec<RegionLabel>> {
        self.regions.region_labels(&self.cfr.labels, &self.adcam.labels)
    }
}

/// Stored representatives and centroids used to label unseen samples.
#[derive(Debug, Clone)]
pub struct RegionAssigner {
    representatives: Vec<TemplatePair>,
    centroids: Vec<Vec<f64>>,
    standardizer: Standardizer,
    pair_table: Vec<[usize; 2]>,
    pair_index: BTreeMap<[usize; 2], usize>,
}

impl RegionAssigner {
    /// `cfr_images` are the images the segmentation was computed on.
    pub fn new(seg: &Segmentation, cfr_images: &[FingerprintImage]) -> Result<Self> {
        let [a, b] = seg.cfr.template;
        let representatives = seg
            .cfr
            .representatives
            .iter()
            .map(|&i| {
                cfr_images
                    .get(i)
                    .map(|img| TemplatePair::from_image(img, i, a, b))
                    .ok_or_else(|| Error::MalformedManifest(format!("representative {i} out of range")))
            })
            .collect::<Result<_>>()?;
        Ok(RegionAssigner {
            representatives,
            centroids: seg.adcam.centroids.clone(),
            standardizer: seg.adcam.standardizer.clone(),
            pair_table: seg.regions.pair_table.clone(),
            pair_index: seg.regions.pair_table.iter().enumerate().map(|(r, p)| (*p, r)).collect(),
        })
    }

    /// Similarity to every category representative; degenerate templates
    /// score zero.
    pub fn cfr_scores(&self, image: &FingerprintImage) -> Vec<f64> {
        self.representatives
            .iter()
            .map(|r| dual_match(r, image).unwrap_or(0.0))
            .collect()
    }

    pub fn adcam_distances(&self, paths: &[PropagationPath]) -> Result<Vec<f64>> {
        let x = self
            .standardizer
            .apply(&crate::cluster::path_features(paths)?);
        Ok(self
            .centroids
            .iter()
            .map(|c| c.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum())
            .collect())
    }

    /// Category with the highest score among `allowed`, ties to the lowest.
    pub fn best_category(scores: &[f64], allowed: impl Iterator<Item = usize>) -> Option<usize> {
        let mut best: Option<usize> = None;
        for c in allowed {
            if best.is_none_or(|b| scores[c] > scores[b] || (scores[c] == scores[b] && c < b)) {
                best = Some(c);
            }
        }
        best
    }

    /// Fused region of an unseen sample. An unseen `(category, cluster)`
    /// pair falls back to the region whose pair ranks best by similarity,
    /// then centroid distance, then region index.
    pub fn assign(&self, cfr_image: &FingerprintImage, paths: &[PropagationPath]) -> Result<usize> {
        if self.pair_table.is_empty() {
            return Err(Error::domain("no regions to assign"));
        }
        let scores = self.cfr_scores(cfr_image);
        let dists = self.adcam_distances(paths)?;
        let c = Self::best_category(&scores, 0..scores.len()).unwrap_or(0);
        let mut a = 0;
        for (k, d) in dists.iter().enumerate() {
            if *d < dists[a] {
                a = k;
            }
        }
        if let Some(&r) = self.pair_index.get(&[c, a]) {
            return Ok(r);
        }
        let mut best = 0;
        for (r, [pc, pa]) in self.pair_table.iter().enumerate().skip(1) {
            let [bc, ba] = self.pair_table[best];
            if scores[*pc] > scores[bc] || (scores[*pc] == scores[bc] && dists[*pa] < dists[ba]) {
                best = r;
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionMode {
    /// Test samples use their segmentation labels.
    Known,
    /// Test samples are assigned from stored representatives.
    Inferred,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cfr_extractor: ExtractorConfig,
    pub adcam_extractor: ExtractorConfig,
    /// Hidden width of the dense branch over the first-arrival vector.
    pub perfect_hidden: usize,
    pub train: TrainConfig,
    pub region_mode: RegionMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            cfr_extractor: ExtractorConfig::default(),
            adcam_extractor: ExtractorConfig::default(),
            perfect_hidden: 32,
            train: TrainConfig::default(),
            region_mode: RegionMode::Known,
        }
    }
}

/// Everything the baselines consume, built once per dataset.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub cfr_images: Vec<FingerprintImage>,
    pub adcam_images: Vec<FingerprintImage>,
    /// Standardized first-arrival vectors.
    pub perfect: Vec<Vec<f64>>,
    pub positions: Vec<[f64; 2]>,
    pub paths: Vec<Vec<PropagationPath>>,
    pub regions: Vec<RegionLabel>,
    pub segmentation: Segmentation,
    pub assigner: RegionAssigner,
}

impl PreparedData {
    pub fn new(samples: &[MultipathSample], segmentation: Segmentation) -> Result<Self> {
        let regions = segmentation.region_labels()?;
        if regions.len() != samples.len() {
            return Err(Error::DimensionMismatch(format!(
                "segmentation covers {} samples, dataset has {}",
                regions.len(),
                samples.len()
            )));
        }
        let cfr_images: Vec<FingerprintImage> = samples.iter().map(|s| cfr_to_image(&s.cfr)).collect();
        let adcam_images = samples.iter().map(|s| adcam_to_image(&s.adcam)).collect();
        let raw: Vec<Vec<f64>> = samples
            .iter()
            .map(|s| perfect_features(&s.paths).map(|f| f.to_vec()))
            .collect::<Result<_>>()?;
        let kept_raw: Vec<Vec<f64>> = raw
            .iter()
            .zip(&regions)
            .filter(|(_, r)| r.kept)
            .map(|(f, _)| f.clone())
            .collect();
        let standardizer = Standardizer::fit(&kept_raw)?;
        let assigner = RegionAssigner::new(&segmentation, &cfr_images)?;
        Ok(PreparedData {
            perfect: raw.iter().map(|f| standardizer.apply(f)).collect(),
            positions: samples.iter().map(|s| s.position).collect(),
            paths: samples.iter().map(|s| s.paths.clone()).collect(),
            cfr_images,
            adcam_images,
            regions,
            segmentation,
            assigner,
        })
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        (0..self.regions.len()).filter(|&i| self.regions[i].kept).collect()
    }

    fn inputs(&self, method: Method, i: usize) -> Vec<&[f64]> {
        let cfr = self.cfr_images[i].pixels();
        let adcam = self.adcam_images[i].pixels();
        match method {
            Method::ResCfr => vec![cfr],
            Method::ResAdcam => vec![adcam],
            Method::ResMultiCfrperfectadcam => vec![cfr, &self.perfect[i]],
            _ => vec![cfr, adcam],
        }
    }

    fn conv_branch(image: &FingerprintImage, extractor: &ExtractorConfig) -> BranchSpec {
        BranchSpec::Conv {
            input_channels: image.channels(),
            height: image.height(),
            width: image.width(),
            extractor: extractor.clone(),
        }
    }

    pub fn architecture(&self, method: Method, num_heads: usize, cfg: &EvalConfig) -> Architecture {
        let cfr = Self::conv_branch(&self.cfr_images[0], &cfg.cfr_extractor);
        let adcam = Self::conv_branch(&self.adcam_images[0], &cfg.adcam_extractor);
        let branches = match method {
            Method::ResCfr => vec![cfr],
            Method::ResAdcam => vec![adcam],
            Method::ResMultiCfrperfectadcam => vec![
                cfr,
                BranchSpec::Dense {
                    input_len: PERFECT_FEATURES,
                    hidden: cfg.perfect_hidden,
                    feature_len: cfg.adcam_extractor.feature_len,
                },
            ],
            _ => vec![cfr, adcam],
        };
        Architecture { branches, num_heads }
    }

    /// Head of every kept sample, plus the source label behind each head
    /// for the CFR-only multi-head baselines.
    fn heads(&self, method: Method, kept: &[usize]) -> (Vec<usize>, Vec<usize>) {
        match method {
            Method::Amdnloc => (kept.iter().map(|&i| self.regions[i].region).collect(), Vec::new()),
            Method::ResMultiCfradcam | Method::ResMultiCfrperfectadcam => {
                let cats: BTreeMap<usize, usize> = kept
                    .iter()
                    .map(|&i| self.regions[i].cfr_label)
                    .collect::<std::collections::BTreeSet<_>>()
                    .into_iter()
                    .enumerate()
                    .map(|(h, c)| (c, h))
                    .collect();
                let map = cats.keys().copied().collect();
                (kept.iter().map(|&i| cats[&self.regions[i].cfr_label]).collect(), map)
            }
            _ => (vec![0; kept.len()], Vec::new()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub threshold: f64,
    pub fraction: f64,
}

/// Default thresholds: 0 to 20 m in 0.5 m steps.
pub fn default_thresholds() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.5).collect()
}

/// Fraction of errors at or below each threshold.
pub fn error_cdf(errors: &[f64], thresholds: &[f64]) -> Result<Vec<CdfPoint>> {
    if errors.is_empty() {
        return Err(Error::domain("no errors to summarize"));
    }
    if errors.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(Error::domain("errors must be finite and non-negative"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| CdfPoint {
            threshold: t,
            fraction: sorted.partition_point(|e| *e <= t) as f64 / n,
        })
        .collect())
}

/// Default thresholds, extended by the maximum error when it lies beyond
/// them so every table ends at 1.
pub fn cdf_table(errors: &[f64]) -> Result<Vec<CdfPoint>> {
    let mut thresholds = default_thresholds();
    let max = errors.iter().cloned().fold(0.0, f64::max);
    if max > *thresholds.last().expect("non-empty") {
        thresholds.push(max);
    }
    error_cdf(errors, &thresholds)
}

pub fn fraction_within(cdf: &[CdfPoint], threshold: f64) -> Option<f64> {
    cdf.iter().find(|p| p.threshold == threshold).map(|p| p.fraction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub index: usize,
    pub region: usize,
    pub head: usize,
    pub truth: [f64; 2],
    pub predicted: [f64; 2],
}

impl Prediction {
    pub fn error(&self) -> f64 {
        ((self.predicted[0] - self.truth[0]).powi(2) + (self.predicted[1] - self.truth[1]).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    pub region: usize,
    pub count: usize,
    pub mse: f64,
    pub rmse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub num_heads: usize,
    pub input_dims: Vec<usize>,
    pub region_mode: RegionMode,
    pub test_count: usize,
    /// m².
    pub test_mse: f64,
    /// m.
    pub test_rmse: f64,
    pub mean_error: f64,
    pub within_2m: f64,
    pub curve: TrainReport,
    pub cdf: Vec<CdfPoint>,
    pub per_region: Vec<RegionError>,
    pub predictions: Vec<Prediction>,
}

struct MethodSetup<'a> {
    kept: Vec<usize>,
    strata: Vec<usize>,
    head_sources: Vec<usize>,
    arch: Architecture,
    examples: Vec<Example<'a>>,
}

fn setup<'a>(method: Method, data: &'a PreparedData, cfg: &EvalConfig) -> Result<MethodSetup<'a>> {
    let kept = data.kept_indices();
    if kept.is_empty() {
        return Err(Error::domain("no kept samples"));
    }
    let strata: Vec<usize> = kept.iter().map(|&i| data.regions[i].region).collect();
    let (heads, head_sources) = data.heads(method, &kept);
    let num_heads = heads.iter().max().map_or(1, |m| m + 1);
    let arch = data.architecture(method, num_heads, cfg);
    let examples = kept
        .iter()
        .zip(&heads)
        .map(|(&i, &head)| Example {
            inputs: data.inputs(method, i),
            target: data.positions[i],
            head,
        })
        .collect();
    Ok(MethodSetup {
        kept,
        strata,
        head_sources,
        arch,
        examples,
    })
}

/// Provenance stored in every trained model's manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub method: Method,
    /// CFR category behind each head of the CFR-only multi-head baselines.
    pub head_sources: Vec<usize>,
    pub eval_config: EvalConfig,
    pub curve: TrainReport,
    pub segmentation: Segmentation,
}

impl ModelMetadata {
    pub fn of(model: &LocalizerModel) -> Result<Self> {
        serde_json::from_value(model.metadata.clone())
            .map_err(|e| Error::MalformedManifest(format!("model metadata: {e}")))
    }
}

/// Trains `method` on the kept samples. Every method stratifies by fused
/// region with the same seed, so all of them share one split.
pub fn train_method(method: Method, data: &PreparedData, cfg: &EvalConfig) -> Result<(LocalizerModel, TrainReport)> {
    let s = setup(method, data, cfg)?;
    let (mut model, curve, _) = train(&s.examples, &s.strata, &s.arch, &cfg.train)?;
    let meta = ModelMetadata {
        method,
        head_sources: s.head_sources,
        eval_config: cfg.clone(),
        curve: curve.clone(),
        segmentation: data.segmentation.clone(),
    };
    model.metadata = serde_json::to_value(&meta)?;
    Ok((model, curve))
}

/// Scores a trained model on the test split its training run used.
pub fn score_method(
    method: Method,
    model: &LocalizerModel,
    curve: &TrainReport,
    data: &PreparedData,
    cfg: &EvalConfig,
) -> Result<MethodReport> {
    let s = setup(method, data, cfg)?;
    if model.architecture() != &s.arch {
        return Err(Error::MalformedManifest(format!(
            "model architecture does not match {} on this dataset",
            method.name()
        )));
    }
    let split = stratified_split(&s.strata, cfg.train.split, cfg.train.seed);
    if split.test.is_empty() {
        return Err(Error::domain("test split is empty"));
    }
    let predictions: Vec<Prediction> = split
        .test
        .iter()
        .map(|&j| {
            let i = s.kept[j];
            let head = match (cfg.region_mode, method) {
                (RegionMode::Known, _) | (_, Method::ResCfr | Method::ResAdcam | Method::ResCfradcam) => {
                    s.examples[j].head
                }
                (RegionMode::Inferred, Method::Amdnloc) => data.assigner.assign(&data.cfr_images[i], &data.paths[i])?,
                (RegionMode::Inferred, _) => {
                    let scores = data.assigner.cfr_scores(&data.cfr_images[i]);
                    let best = RegionAssigner::best_category(&scores, s.head_sources.iter().copied()).unwrap_or(0);
                    s.head_sources.iter().position(|&c| c == best).unwrap_or(0)
                }
            };
            Ok(Prediction {
                index: i,
                region: data.regions[i].region,
                head,
                truth: data.positions[i],
                predicted: model.forward(&s.examples[j].inputs, head)?,
            })
        })
        .collect::<Result<_>>()?;
    let preds: Vec<[f64; 2]> = predictions.iter().map(|p| p.predicted).collect();
    let truths: Vec<[f64; 2]> = predictions.iter().map(|p| p.truth).collect();
    let test_mse = mse_loss(&preds, &truths)?;
    let errors: Vec<f64> = predictions.iter().map(Prediction::error).collect();
    let cdf = cdf_table(&errors)?;
    let mut by_region: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (p, e) in predictions.iter().zip(&errors) {
        by_region.entry(p.region).or_default().push(e * e);
    }
    let per_region = by_region
        .into_iter()
        .map(|(region, sq)| {
            let mse = sq.iter().sum::<f64>() / sq.len() as f64;
            RegionError {
                region,
                count: sq.len(),
                mse,
                rmse: mse.sqrt(),
            }
        })
        .collect();
    Ok(MethodReport {
        method,
        num_heads: model.num_heads(),
        input_dims: s.arch.branches.iter().map(BranchSpec::input_len).collect(),
        region_mode: cfg.region_mode,
        test_count: predictions.len(),
        test_mse,
        test_rmse: test_mse.sqrt(),
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
        within_2m: fraction_within(&cdf, 2.0).expect("2 m is a default threshold"),
        curve: curve.clone(),
        cdf,
        per_region,
        predictions,
    })
}

pub fn run_baseline(method: Method, data: &PreparedData, cfg: &EvalConfig) -> Result<(LocalizerModel, MethodReport)> {
    let (model, curve) = train_method(method, data, cfg)?;
    let report = score_method(method, &model, &curve, data, cfg)?;
    Ok((model, report))
}

/// Inference-time path: assign a region from stored representatives, then
/// run the matching head. Needs a two-image-branch multi-head model.
pub fn predict_region_then_locate(
    model: &LocalizerModel,
    assigner: &RegionAssigner,
    cfr_image: &FingerprintImage,
    adcam_image: &FingerprintImage,
    paths: &[PropagationPath],
) -> Result<[f64; 2]> {
    let region = if model.num_heads() == 1 {
        0
    } else {
        assigner.assign(cfr_image, paths)?
    };
    model.forward(&[cfr_image.pixels(), adcam_image.pixels()], region)
}

/// Data for the region scatter plot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScatterData {
    pub extent: [f64; 2],
    /// `[x_min, y_min, x_max, y_max]`.
    pub buildings: Vec<[f64; 4]>,
    pub bs_position: [f64; 2],
    pub points: Vec<([f64; 2], Option<usize>)>,
}

impl ScatterData {
    pub fn new(scene: &Scene, positions: &[[f64; 2]], regions: &[RegionLabel]) -> Self {
        ScatterData {
            extent: scene.extent,
            buildings: scene
                .buildings
                .iter()
                .map(|b| [b.min[0], b.min[1], b.max[0], b.max[1]])
                .collect(),
            bs_position: scene.bs_position,
            points: positions
                .iter()
                .zip(regions)
                .map(|(p, r)| (*p, r.kept_region()))
                .collect(),
        }
    }
}

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub num_samples: usize,
    #[serde(rename = "I")]
    pub num_regions: usize,
    pub dropped: usize,
    pub config: EvalConfig,
    pub methods: Vec<MethodReport>,
    #[serde(skip)]
    pub scatter: ScatterData,
}

fn csv_line(out: &mut String, fields: std::fmt::Arguments<'_>) {
    out.write_fmt(fields).expect("writing to a String");
    out.push('\n');
}

pub fn cdf_csv(cdf: &[CdfPoint]) -> String {
    let mut out = String::from("threshold_m,fraction\n");
    for p in cdf {
        csv_line(&mut out, format_args!("{},{}", p.threshold, p.fraction));
    }
    out
}

fn region_color(region: usize) -> String {
    let hue = (region as f64 * 137.508) % 360.0;
    format!("hsl({hue:.1},70%,45%)")
}

pub fn scatter_svg(data: &ScatterData) -> String {
    const SIZE: f64 = 500.0;
    const MARGIN: f64 = 10.0;
    let sx = |x: f64| MARGIN + x / data.extent[0].max(f64::MIN_POSITIVE) * SIZE;
    let sy = |y: f64| MARGIN + SIZE - y / data.extent[1].max(f64::MIN_POSITIVE) * SIZE;
    let total = SIZE + 2.0 * MARGIN;
    let mut out = String::new();
    csv_line(
        &mut out,
        format_args!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{total}\" height=\"{total}\" viewBox=\"0 0 {total} {total}\">"
        ),
    );
    csv_line(
        &mut out,
        format_args!("<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{SIZE}\" height=\"{SIZE}\" fill=\"white\" stroke=\"black\"/>"),
    );
    for b in &data.buildings {
        csv_line(
            &mut out,
            format_args!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#b0b0b0\"/>",
                sx(b[0]),
                sy(b[3]),
                sx(b[2]) - sx(b[0]),
                sy(b[1]) - sy(b[3])
            ),
        );
    }
    for (p, region) in &data.points {
        let fill = region.map_or_else(|| "#000000".to_string(), region_color);
        let r = if region.is_some() { 2.0 } else { 1.0 };
        csv_line(
            &mut out,
            format_args!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{r}\" fill=\"{fill}\"/>", sx(p[0]), sy(p[1])),
        );
    }
    let [bx, by] = data.bs_position;
    csv_line(
        &mut out,
        format_args!(
            "<path d=\"M{:.2} {:.2} l-5 8 h10 z\" fill=\"red\"/>",
            sx(bx),
            sy(by) - 4.0
        ),
    );
    out.push_str("</svg>\n");
    out
}

/// Writes `report.json`, `mse_curve_<method>.csv`, `cdf_<method>.csv` and
/// `regions_scatter.svg`. Nothing written depends on wall-clock time.
pub fn emit_reports(report: &EvalReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if report.methods.is_empty() {
        return Err(Error::domain("no method reports to emit"));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut put = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("report.json".into(), serde_json::to_string_pretty(report)? + "\n")?;
    for m in &report.methods {
        put(format!("mse_curve_{}.csv", m.method.name()), m.curve.to_csv())?;
        put(format!("cdf_{}.csv", m.method.name()), cdf_csv(&m.cdf))?;
    }
    put("regions_scatter.svg".into(), scatter_svg(&report.scatter))?;
    Ok(written)
}
