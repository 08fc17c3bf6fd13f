//! Stage orchestration: one function per CLI subcommand, wired through the
//! documented artifact files, plus a driver that runs every stage.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::channel::DatasetMeta;
use crate::cluster::{select_k_with_curve, standardized_features, AdcamLabelsFile};
use crate::dataset_io::{export_dataset, import_dataset};
use crate::error::{Error, Result};
use crate::evaluation::{
    emit_reports, score_method, train_method, EvalConfig, EvalReport, Method, ModelMetadata, PreparedData, RegionMode,
    ScatterData, Segmentation, REPORT_VERSION,
};
use crate::filter::{segment as filter_segment, CfrLabelsFile, FilterConfig};
use crate::fusion::{cleanse, fuse_labels, RegionsFile, DEFAULT_MIN_SIZE};
use crate::image::{cfr_to_image, FingerprintImage};
use crate::nn::{load_model, save_model, ExtractorConfig, LocalizerModel, TrainConfig, TrainReport};
use crate::scene::{generate_dataset, Scene};

pub const CONFIG_VERSION: u32 = 1;
/// Scene description written next to a synthesized dataset.
pub const SCENE_FILE: &str = "scene.json";
pub const LABELS_CFR_FILE: &str = "labels_cfr.json";
pub const LABELS_ADCAM_FILE: &str = "labels_adcam.json";
pub const REGIONS_FILE: &str = "regions.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub num_bs_antennas: usize,
    pub num_subcarriers: usize,
    pub carrier_frequency: f64,
    pub bandwidth: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        let r = DatasetMeta::reference();
        ChannelConfig {
            num_bs_antennas: r.num_bs_antennas,
            num_subcarriers: r.num_subcarriers,
            carrier_frequency: r.carrier_frequency,
            bandwidth: r.bandwidth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterParams {
    pub tau_in: f64,
    pub tau_out: f64,
    /// `[a, b]` template height and width.
    pub template: [usize; 2],
}

impl Default for FilterParams {
    fn default() -> Self {
        let d = FilterConfig::with_defaults(1);
        FilterParams {
            tau_in: d.tau_in,
            tau_out: d.tau_out,
            template: [d.template_height, d.template_width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterParams {
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            k_min: 2,
            k_max: 12,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    pub cfr_extractor: ExtractorConfig,
    pub adcam_extractor: ExtractorConfig,
    pub perfect_hidden: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        let e = EvalConfig::default();
        ModelParams {
            cfr_extractor: e.cfr_extractor,
            adcam_extractor: e.adcam_extractor,
            perfect_hidden: e.perfect_hidden,
        }
    }
}

/// Everything that determines a pipeline run. Missing keys take defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Seeds the reference scene when no scene is given.
    pub seed: u64,
    pub num_samples: usize,
    pub scene: Option<Scene>,
    pub channel: ChannelConfig,
    pub filter: FilterParams,
    pub cluster: ClusterParams,
    pub min_size: usize,
    pub model: ModelParams,
    pub train: TrainConfig,
    pub baselines: Vec<Method>,
    pub region_mode: RegionMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            version: CONFIG_VERSION,
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: 0,
            num_samples: 2000,
            scene: None,
            channel: ChannelConfig::default(),
            filter: FilterParams::default(),
            cluster: ClusterParams::default(),
            min_size: DEFAULT_MIN_SIZE,
            model: ModelParams::default(),
            train: TrainConfig::default(),
            baselines: Method::ALL.to_vec(),
            region_mode: RegionMode::Known,
        }
    }
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let cfg: PipelineConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn scene(&self) -> Scene {
        self.scene.clone().unwrap_or_else(|| Scene::reference(self.seed))
    }

    pub fn meta(&self) -> Result<DatasetMeta> {
        let c = &self.channel;
        DatasetMeta::new(
            c.num_bs_antennas,
            c.num_subcarriers,
            c.carrier_frequency,
            c.bandwidth,
            self.scene().extent,
        )
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            cfr_extractor: self.model.cfr_extractor.clone(),
            adcam_extractor: self.model.adcam_extractor.clone(),
            perfect_hidden: self.model.perfect_hidden,
            train: self.train.clone(),
            region_mode: self.region_mode,
        }
    }

    /// Collects every violation rather than stopping at the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.version != CONFIG_VERSION {
            v.push(format!("config version {} is not {CONFIG_VERSION}", self.version));
        }
        if self.num_samples == 0 {
            v.push("num_samples must be at least 1".into());
        }
        if let Err(Error::InvalidConfig(s)) = self.scene().validate() {
            v.extend(s);
        }
        if let Err(e) = self.meta().and_then(|m| m.validate()) {
            v.push(e.to_string());
        }
        for (name, t) in [("tau_in", self.filter.tau_in), ("tau_out", self.filter.tau_out)] {
            if !(t > 0.0 && t <= 1.0) {
                v.push(format!("{name} = {t} must lie in (0, 1]"));
            }
        }
        let [a, b] = self.filter.template;
        if a == 0 || b == 0 || a > self.channel.num_bs_antennas || b > self.channel.num_subcarriers {
            v.push(format!(
                "template {a}x{b} must fit inside {}x{}",
                self.channel.num_bs_antennas, self.channel.num_subcarriers
            ));
        }
        if self.cluster.k_min < 2 || self.cluster.k_min >= self.cluster.k_max {
            v.push(format!(
                "cluster range must satisfy 2 <= k_min < k_max, got {}..{}",
                self.cluster.k_min, self.cluster.k_max
            ));
        }
        if self.cluster.k_max + 1 > self.num_samples {
            v.push(format!("k_max {} needs more than {} samples", self.cluster.k_max, self.num_samples));
        }
        if self.min_size == 0 {
            v.push("min_size must be at least 1".into());
        }
        for (name, e) in [("cfr", &self.model.cfr_extractor), ("adcam", &self.model.adcam_extractor)] {
            v.extend(e.violations().into_iter().map(|m| format!("{name} extractor: {m}")));
        }
        if self.model.perfect_hidden == 0 {
            v.push("perfect_hidden must be at least 1".into());
        }
        v.extend(self.train.violations());
        if self.baselines.is_empty() {
            v.push("baseline list is empty".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

/// Reads a JSON artifact; a missing file is a missing artifact.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingArtifact(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::MalformedManifest(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Effective parameters of a stage, written beside its output.
#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    version: u32,
    stage: &'a str,
    params: &'a T,
}

fn echo<T: Serialize>(dir: &Path, stage: &str, params: &T) -> Result<()> {
    write_json(
        &dir.join(format!("{stage}.config.json")),
        &Echo {
            version: CONFIG_VERSION,
            stage,
            params,
        },
    )
}

fn parent_of(path: &Path) -> &Path {
    path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn import(data: &Path) -> Result<(Vec<crate::scene::MultipathSample>, DatasetMeta)> {
    import_dataset(data)
}

pub fn synth(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let scene = cfg.scene();
    let meta = cfg.meta()?;
    let samples = generate_dataset(&scene, cfg.num_samples, &meta)?;
    export_dataset(&samples, &meta, out)?;
    write_json(&out.join(SCENE_FILE), &scene)?;
    echo(out, "synth", cfg)
}

fn cfr_images(samples: &[crate::scene::MultipathSample]) -> Vec<FingerprintImage> {
    samples.iter().map(|s| cfr_to_image(&s.cfr)).collect()
}

pub fn segment(data: &Path, params: &FilterParams, out: &Path) -> Result<CfrLabelsFile> {
    let (samples, meta) = import(data)?;
    let mut cfg = FilterConfig::with_defaults(samples.len());
    cfg.tau_in = params.tau_in;
    cfg.tau_out = params.tau_out;
    [cfg.template_height, cfg.template_width] = params.template;
    cfg.validate(meta.num_bs_antennas, meta.num_subcarriers, samples.len())?;
    let assignment = filter_segment(&cfr_images(&samples), &cfg)?;
    let file = CfrLabelsFile::new(&assignment, &cfg);
    write_json(out, &file)?;
    echo(parent_of(out), "segment", params)?;
    Ok(file)
}

pub fn cluster(data: &Path, params: &ClusterParams, out: &Path) -> Result<AdcamLabelsFile> {
    let (samples, _) = import(data)?;
    let paths: Vec<&[crate::channel::PropagationPath]> = samples.iter().map(|s| s.paths.as_slice()).collect();
    let (features, standardizer) = standardized_features(&paths)?;
    let selection = select_k_with_curve(&features, params.k_min, params.k_max, params.seed)?;
    let file = AdcamLabelsFile::new(&selection, &standardizer);
    write_json(out, &file)?;
    echo(parent_of(out), "cluster", params)?;
    Ok(file)
}

pub fn fuse(cfr: &Path, adcam: &Path, min_size: usize, out: &Path) -> Result<RegionsFile> {
    let c: CfrLabelsFile = read_json(cfr)?;
    let a: AdcamLabelsFile = read_json(adcam)?;
    let regions = cleanse(&fuse_labels(&c.labels, &a.labels)?, min_size)?;
    let file = RegionsFile::new(&regions, min_size);
    write_json(out, &file)?;
    echo(parent_of(out), "fuse", &serde_json::json!({ "min_size": min_size }))?;
    Ok(file)
}

/// Label files default to siblings of `regions.json`.
#[derive(Debug, Clone)]
pub struct SegmentationPaths {
    pub regions: PathBuf,
    pub cfr: PathBuf,
    pub adcam: PathBuf,
}

impl SegmentationPaths {
    pub fn beside(regions: &Path) -> Self {
        let dir = parent_of(regions);
        SegmentationPaths {
            regions: regions.to_path_buf(),
            cfr: dir.join(LABELS_CFR_FILE),
            adcam: dir.join(LABELS_ADCAM_FILE),
        }
    }

    pub fn load(&self) -> Result<Segmentation> {
        Ok(Segmentation {
            regions: read_json(&self.regions)?,
            cfr: read_json(&self.cfr)?,
            adcam: read_json(&self.adcam)?,
        })
    }
}

/// Training report CSV written next to a model file.
pub fn report_csv_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    parent_of(model).join(format!("{stem}_train.csv"))
}

pub fn train(
    data: &Path,
    seg: &SegmentationPaths,
    method: Method,
    cfg: &EvalConfig,
    out: &Path,
) -> Result<(LocalizerModel, TrainReport)> {
    let segmentation = seg.load()?;
    let (samples, _) = import(data)?;
    let prepared = PreparedData::new(&samples, segmentation)?;
    let (model, curve) = train_method(method, &prepared, cfg)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    save_model(&model, out)?;
    std::fs::write(report_csv_path(out), curve.to_csv())?;
    echo(parent_of(out), "train", &serde_json::json!({ "method": method, "config": cfg }))?;
    Ok((model, curve))
}

fn scatter_for(data: &Path, meta: &DatasetMeta, prepared: &PreparedData) -> Result<ScatterData> {
    let scene_path = data.join(SCENE_FILE);
    let scene = if scene_path.exists() {
        read_json(&scene_path)?
    } else {
        Scene {
            extent: meta.scene_extent,
            buildings: Vec::new(),
            ..Scene::reference(0)
        }
    };
    Ok(ScatterData::new(&scene, &prepared.positions, &prepared.regions))
}

/// Scores the stored model, trains and scores every other requested
/// baseline with the model's own configuration, and writes the reports.
/// Baseline models are saved under `<report>/models/`.
pub fn eval(
    model_path: &Path,
    data: &Path,
    baselines: &[Method],
    region_mode: Option<RegionMode>,
    report_dir: &Path,
) -> Result<EvalReport> {
    if baselines.is_empty() {
        return Err(Error::InvalidConfig(vec!["baseline list is empty".into()]));
    }
    let model = load_model(model_path)?;
    let meta_info = ModelMetadata::of(&model)?;
    let mut cfg = meta_info.eval_config.clone();
    if let Some(mode) = region_mode {
        cfg.region_mode = mode;
    }
    let (samples, meta) = import(data)?;
    let prepared = PreparedData::new(&samples, meta_info.segmentation.clone())?;
    let models_dir = report_dir.join("models");
    std::fs::create_dir_all(&models_dir)?;
    let mut methods = Vec::new();
    for &method in baselines {
        let report = if method == meta_info.method {
            score_method(method, &model, &meta_info.curve, &prepared, &cfg)?
        } else {
            log::info!("training baseline {}", method.name());
            let (m, curve) = train_method(method, &prepared, &cfg)?;
            save_model(&m, &models_dir.join(format!("{}.bin", method.name())))?;
            score_method(method, &m, &curve, &prepared, &cfg)?
        };
        log::info!("{}: test RMSE {:.3} m", method.name(), report.test_rmse);
        methods.push(report);
    }
    let report = EvalReport {
        version: REPORT_VERSION,
        num_samples: samples.len(),
        num_regions: prepared.segmentation.regions.num_regions,
        dropped: prepared.segmentation.regions.dropped.len(),
        config: cfg,
        methods,
        scatter: scatter_for(data, &meta, &prepared)?,
    };
    emit_reports(&report, report_dir)?;
    // Only the file name, so reruns into other directories stay identical.
    let model_name = model_path.file_name().map(|n| n.to_string_lossy().into_owned());
    echo(
        report_dir,
        "eval",
        &serde_json::json!({ "model": model_name, "baselines": baselines, "region_mode": report.config.region_mode }),
    )?;
    Ok(report)
}

/// Artifact locations of a full run under one output directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub data: PathBuf,
    pub labels_cfr: PathBuf,
    pub labels_adcam: PathBuf,
    pub regions: PathBuf,
    pub model: PathBuf,
    pub report: PathBuf,
}

impl RunLayout {
    pub fn under(out: &Path) -> Self {
        RunLayout {
            data: out.join("data"),
            labels_cfr: out.join(LABELS_CFR_FILE),
            labels_adcam: out.join(LABELS_ADCAM_FILE),
            regions: out.join(REGIONS_FILE),
            model: out.join("model.bin"),
            report: out.join("report"),
        }
    }
}

/// Every stage in order. The trained model is the full method.
pub fn run_all(cfg: &PipelineConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let l = RunLayout::under(out);
    synth(cfg, &l.data)?;
    segment(&l.data, &cfg.filter, &l.labels_cfr)?;
    cluster(&l.data, &cfg.cluster, &l.labels_adcam)?;
    fuse(&l.labels_cfr, &l.labels_adcam, cfg.min_size, &l.regions)?;
    train(
        &l.data,
        &SegmentationPaths::beside(&l.regions),
        Method::Amdnloc,
        &cfg.eval_config(),
        &l.model,
    )?;
    eval(&l.model, &l.data, &cfg.baselines, None, &l.report)
}
