//! Two-stage heterogeneity matched filter over CFR magnitude images.
//!
//! Stage one walks the images in order: every unlabeled image seeds a
//! category with two corner templates and captures later unlabeled images
//! whose dual-template similarity reaches `tau_in`. Stage two merges
//! categories whose representatives match each other at `tau_out`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::FingerprintImage;
use crate::union_find::UnionFind;

/// Channel of the CFR image used for matching (magnitude).
pub const MATCH_CHANNEL: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub template_height: usize,
    pub template_width: usize,
    pub tau_in: f64,
    pub tau_out: f64,
    /// Sentinel label for "not yet matched"; must exceed the sample count.
    pub tau_c: usize,
}

impl FilterConfig {
    /// 8x16 templates, `tau_in = 0.95`, `tau_out = 0.90`, `tau_c = M + 1`.
    pub fn with_defaults(num_samples: usize) -> Self {
        FilterConfig {
            template_height: 8,
            template_width: 16,
            tau_in: 0.95,
            tau_out: 0.90,
            tau_c: num_samples + 1,
        }
    }

    pub fn validate(&self, height: usize, width: usize, num_samples: usize) -> Result<()> {
        let mut problems = Vec::new();
        if self.template_height < 1 || self.template_height > height {
            problems.push(format!("template height {} outside 1..={height}", self.template_height));
        }
        if self.template_width < 1 || self.template_width > width {
            problems.push(format!("template width {} outside 1..={width}", self.template_width));
        }
        if !(self.tau_in > 0.0 && self.tau_in <= 1.0) {
            problems.push(format!("tau_in {} outside (0, 1]", self.tau_in));
        }
        if !(self.tau_out > 0.0 && self.tau_out <= 1.0) {
            problems.push(format!("tau_out {} outside (0, 1]", self.tau_out));
        }
        if self.tau_c <= num_samples {
            problems.push(format!("tau_c {} must exceed the sample count {num_samples}", self.tau_c));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }
}

/// Borrowed single-channel view.
#[derive(Debug, Clone, Copy)]
pub struct Plane<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [f64],
}

impl<'a> Plane<'a> {
    pub fn new(height: usize, width: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} plane",
                data.len()
            )));
        }
        Ok(Plane { height, width, data })
    }

    pub fn of(image: &'a FingerprintImage, channel: usize) -> Self {
        Plane {
            height: image.height(),
            width: image.width(),
            data: image.channel(channel),
        }
    }
}

/// Rectangular pixel block cut out of an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Template {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {height}x{width} template",
                data.len()
            )));
        }
        Ok(Template { height, width, data })
    }

    pub fn crop(plane: Plane<'_>, row: usize, col: usize, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in row..row + height {
            data.extend_from_slice(&plane.data[r * plane.width + col..r * plane.width + col + width]);
        }
        Template { height, width, data }
    }

    fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Upper-left and lower-right corner templates of one seed image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplatePair {
    pub t1: Template,
    pub t2: Template,
    pub source_index: usize,
}

impl TemplatePair {
    pub fn from_image(image: &FingerprintImage, source_index: usize, a: usize, b: usize) -> Self {
        let plane = Plane::of(image, MATCH_CHANNEL);
        TemplatePair {
            t1: Template::crop(plane, 0, 0, a, b),
            t2: Template::crop(plane, plane.height - a, plane.width - b, a, b),
            source_index,
        }
    }
}

/// Window energies `sum I^2` for every valid shift of an `a x b` template.
/// They depend only on the source, so they are computed once per image.
#[derive(Debug, Clone)]
pub struct PreparedSource {
    template_height: usize,
    template_width: usize,
    energy: Vec<f64>,
}

impl PreparedSource {
    pub fn new(source: Plane<'_>, a: usize, b: usize) -> Self {
        let rows = source.height - a + 1;
        let cols = source.width - b + 1;
        let squared: Vec<f64> = source.data.iter().map(|v| v * v).collect();
        let mut energy = vec![0.0; rows * cols];
        for y in 0..rows {
            let acc = &mut energy[y * cols..(y + 1) * cols];
            for r in 0..a {
                let row = &squared[(y + r) * source.width..(y + r + 1) * source.width];
                for c in 0..b {
                    for (x, e) in acc.iter_mut().enumerate() {
                        *e += row[x + c];
                    }
                }
            }
        }
        PreparedSource {
            template_height: a,
            template_width: b,
            energy,
        }
    }
}

/// Maximum NCC over valid shifts. With `stop_at` the scan returns as soon
/// as a shift reaches it; every computed score is identical either way.
fn scan(template: &Template, source: Plane<'_>, prepared: &PreparedSource, stop_at: Option<f64>) -> f64 {
    let (a, b) = (template.height, template.width);
    debug_assert_eq!((a, b), (prepared.template_height, prepared.template_width));
    let rows = source.height - a + 1;
    let cols = source.width - b + 1;
    let tt = template.energy();
    let mut acc = vec![0.0; cols];
    let mut best = 0.0_f64;
    for y in 0..rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..a {
            let row = &source.data[(y + r) * source.width..(y + r + 1) * source.width];
            for c in 0..b {
                let t = template.data[r * b + c];
                if t == 0.0 {
                    continue;
                }
                for (x, s) in acc.iter_mut().enumerate() {
                    *s += t * row[x + c];
                }
            }
        }
        for (x, num) in acc.iter().enumerate() {
            let e = prepared.energy[y * cols + x];
            if e <= 0.0 {
                continue;
            }
            let score = (num / (tt * e).sqrt()).clamp(0.0, 1.0);
            if score > best {
                best = score;
                if stop_at.is_some_and(|tau| best >= tau) {
                    return best;
                }
            }
        }
    }
    best
}

fn check_template(template: &Template, source: Plane<'_>) -> Result<()> {
    if template.height > source.height || template.width > source.width {
        return Err(Error::domain(format!(
            "template {}x{} larger than source {}x{}",
            template.height, template.width, source.height, source.width
        )));
    }
    if template.data.iter().any(|v| *v < 0.0) || source.data.iter().any(|v| *v < 0.0) {
        return Err(Error::domain("NCC inputs must be non-negative"));
    }
    if template.data.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateTemplate);
    }
    Ok(())
}

/// Normalized cross-correlation maximized over all shifts that keep the
/// template fully inside the source. All-zero windows score 0.
pub fn ncc_match(template: &Template, source: Plane<'_>) -> Result<f64> {
    check_template(template, source)?;
    let prepared = PreparedSource::new(source, template.height, template.width);
    Ok(scan(template, source, &prepared, None))
}

/// Both corners must agree: the pair similarity is the smaller NCC.
pub fn dual_match(pair: &TemplatePair, source: &FingerprintImage) -> Result<f64> {
    let plane = Plane::of(source, MATCH_CHANNEL);
    Ok(ncc_match(&pair.t1, plane)?.min(ncc_match(&pair.t2, plane)?))
}

/// Sources with cached window energies for repeated matching.
pub struct MatchContext<'a> {
    images: &'a [FingerprintImage],
    prepared: Vec<PreparedSource>,
    a: usize,
    b: usize,
}

impl<'a> MatchContext<'a> {
    pub fn new(images: &'a [FingerprintImage], a: usize, b: usize) -> Self {
        let prepared = images
            .par_iter()
            .map(|img| PreparedSource::new(Plane::of(img, MATCH_CHANNEL), a, b))
            .collect();
        MatchContext { images, prepared, a, b }
    }

    pub fn pair(&self, index: usize) -> TemplatePair {
        TemplatePair::from_image(&self.images[index], index, self.a, self.b)
    }

    fn ncc(&self, template: &Template, target: usize, stop_at: Option<f64>) -> f64 {
        if template.data.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        scan(template, Plane::of(&self.images[target], MATCH_CHANNEL), &self.prepared[target], stop_at)
    }

    /// Same value as [`dual_match`]; degenerate templates score 0.
    pub fn similarity(&self, pair: &TemplatePair, target: usize) -> f64 {
        self.ncc(&pair.t1, target, None).min(self.ncc(&pair.t2, target, None))
    }

    /// `dual_match(pair, target) >= tau`, with early exits.
    pub fn matches(&self, pair: &TemplatePair, target: usize, tau: f64) -> bool {
        self.ncc(&pair.t1, target, Some(tau)) >= tau && self.ncc(&pair.t2, target, Some(tau)) >= tau
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub labels: Vec<usize>,
    pub num_categories: usize,
    /// Indexed by category.
    pub representatives: Vec<TemplatePair>,
}

impl CategoryAssignment {
    pub fn representative_indices(&self) -> Vec<usize> {
        self.representatives.iter().map(|r| r.source_index).collect()
    }
}

fn check_images(images: &[FingerprintImage], cfg: &FilterConfig) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::domain("matching needs at least one image"))?;
    if images
        .iter()
        .any(|im| im.height() != first.height() || im.width() != first.width())
    {
        return Err(Error::DimensionMismatch("images differ in size".into()));
    }
    cfg.validate(first.height(), first.width(), images.len())
}

/// Match within categories, a single ordered pass over `images`.
pub fn match_within(images: &[FingerprintImage], cfg: &FilterConfig) -> Result<CategoryAssignment> {
    check_images(images, cfg)?;
    let ctx = MatchContext::new(images, cfg.template_height, cfg.template_width);
    Ok(match_within_ctx(&ctx, cfg))
}

pub fn match_within_ctx(ctx: &MatchContext<'_>, cfg: &FilterConfig) -> CategoryAssignment {
    let m = ctx.images.len();
    let unlabeled = cfg.tau_c;
    let mut labels = vec![unlabeled; m];
    let mut representatives = Vec::new();
    let mut class_num = 0;
    for i in 0..m {
        if labels[i] != unlabeled {
            continue;
        }
        let pair = ctx.pair(i);
        // Candidate decisions are pure reads; writes happen in index order.
        let candidates: Vec<usize> = (i + 1..m).filter(|&j| labels[j] == unlabeled).collect();
        let captured: Vec<usize> = candidates
            .par_iter()
            .copied()
            .filter(|&j| ctx.matches(&pair, j, cfg.tau_in))
            .collect();
        if captured.is_empty() {
            if let Some(k) = (0..i).find(|&k| ctx.matches(&pair, k, cfg.tau_in)) {
                labels[i] = labels[k];
                continue;
            }
        }
        labels[i] = class_num;
        for j in captured {
            labels[j] = class_num;
        }
        representatives.push(pair);
        class_num += 1;
    }
    let (labels, order) = compact_labels(&labels);
    let representatives = order.into_iter().map(|c| representatives[c].clone()).collect();
    CategoryAssignment {
        num_categories: class_num,
        labels,
        representatives,
    }
}

/// Relabels to `0..n` in order of first occurrence. Returns the new labels
/// and, per new label, the old one.
pub fn compact_labels(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut map = std::collections::HashMap::new();
    let mut order = Vec::new();
    let compact = labels
        .iter()
        .map(|&l| {
            *map.entry(l).or_insert_with(|| {
                order.push(l);
                order.len() - 1
            })
        })
        .collect();
    (compact, order)
}

/// Match between categories: union-find merging of categories whose
/// representatives match at `tau_out`, repeated until the category count
/// stops changing. A merged category keeps the representative of its
/// lowest-numbered constituent.
pub fn match_between(
    assignment: &CategoryAssignment,
    images: &[FingerprintImage],
    cfg: &FilterConfig,
) -> Result<CategoryAssignment> {
    check_images(images, cfg)?;
    if assignment.labels.len() != images.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} images",
            assignment.labels.len(),
            images.len()
        )));
    }
    let ctx = MatchContext::new(images, cfg.template_height, cfg.template_width);
    Ok(match_between_ctx(assignment, &ctx, cfg))
}

pub fn match_between_ctx(
    assignment: &CategoryAssignment,
    ctx: &MatchContext<'_>,
    cfg: &FilterConfig,
) -> CategoryAssignment {
    let n = assignment.num_categories;
    let mut sets = UnionFind::new(n);
    let mut count = n;
    loop {
        let survivors: Vec<usize> = (0..n).filter(|&c| sets.find(c) == c).collect();
        for &i in &survivors {
            let pair = &assignment.representatives[i];
            for &j in &survivors {
                if i == j || sets.find(i) == sets.find(j) {
                    continue;
                }
                let target = assignment.representatives[j].source_index;
                if ctx.matches(pair, target, cfg.tau_out) {
                    sets.union_to_min(i, j);
                }
            }
        }
        let next = (0..n).filter(|&c| sets.find(c) == c).count();
        if next == count {
            break;
        }
        count = next;
    }
    let roots: Vec<usize> = (0..n).filter(|&c| sets.find(c) == c).collect();
    let new_index: std::collections::HashMap<usize, usize> =
        roots.iter().enumerate().map(|(k, &r)| (r, k)).collect();
    let labels = assignment
        .labels
        .iter()
        .map(|&l| new_index[&sets.find(l)])
        .collect();
    CategoryAssignment {
        labels,
        num_categories: roots.len(),
        representatives: roots
            .iter()
            .map(|&r| assignment.representatives[r].clone())
            .collect(),
    }
}

/// Runs both stages over the magnitude channel of `images`.
pub fn segment(images: &[FingerprintImage], cfg: &FilterConfig) -> Result<CategoryAssignment> {
    check_images(images, cfg)?;
    let ctx = MatchContext::new(images, cfg.template_height, cfg.template_width);
    let within = match_within_ctx(&ctx, cfg);
    Ok(match_between_ctx(&within, &ctx, cfg))
}

pub const LABELS_VERSION: u32 = 1;

/// Contents of `labels_cfr.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfrLabelsFile {
    pub version: u32,
    pub tau_in: f64,
    pub tau_out: f64,
    pub template: [usize; 2],
    pub labels: Vec<usize>,
    /// Source image index of each category's representative.
    pub representatives: Vec<usize>,
}

impl CfrLabelsFile {
    pub fn new(assignment: &CategoryAssignment, cfg: &FilterConfig) -> Self {
        CfrLabelsFile {
            version: LABELS_VERSION,
            tau_in: cfg.tau_in,
            tau_out: cfg.tau_out,
            template: [cfg.template_height, cfg.template_width],
            labels: assignment.labels.clone(),
            representatives: assignment.representative_indices(),
        }
    }

    pub fn num_categories(&self) -> usize {
        self.representatives.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_image(h: usize, w: usize, data: Vec<f64>) -> FingerprintImage {
        let mut pixels = data;
        pixels.extend(std::iter::repeat_n(0.5, h * w));
        FingerprintImage::new(2, h, w, pixels).unwrap()
    }

    /// Direct evaluation of the similarity formula, one shift at a time.
    fn brute_force_ncc(t: &Template, src: Plane<'_>) -> f64 {
        let mut best = 0.0_f64;
        for y in 0..=src.height - t.height {
            for x in 0..=src.width - t.width {
                let mut num = 0.0;
                let mut tt = 0.0;
                let mut ii = 0.0;
                for r in 0..t.height {
                    for c in 0..t.width {
                        let tv = t.data[r * t.width + c];
                        let iv = src.data[(y + r) * src.width + x + c];
                        num += tv * iv;
                        tt += tv * tv;
                        ii += iv * iv;
                    }
                }
                if ii > 0.0 {
                    best = best.max(num / (tt * ii).sqrt());
                }
            }
        }
        best.min(1.0)
    }

    #[test]
    fn exact_crop_scores_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f64> = (0..12 * 20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let src = Plane::new(12, 20, &data).unwrap();
        let t = Template::crop(src, 3, 5, 4, 6);
        assert_abs_diff_eq!(ncc_match(&t, src).unwrap(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn constant_patterns_score_one() {
        let data = vec![0.3; 25];
        let src = Plane::new(5, 5, &data).unwrap();
        let t = Template::new(2, 3, vec![7.0; 6]).unwrap();
        assert_abs_diff_eq!(ncc_match(&t, src).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_template_on_identity_matches_brute_force() {
        let t = Template::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let data = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let src = Plane::new(3, 3, &data).unwrap();
        // Shifts (0,0) and (1,1) cover two diagonal ones: 2 / sqrt(2 * 2) = 1.
        // Shifts (0,1) and (1,0) see a single off-diagonal one: 0.
        assert_abs_diff_eq!(ncc_match(&t, src).unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ncc_match(&t, src).unwrap(), brute_force_ncc(&t, src), epsilon = 1e-12);
    }

    #[test]
    fn degenerate_template_is_an_error() {
        let data = vec![1.0; 9];
        let src = Plane::new(3, 3, &data).unwrap();
        let t = Template::new(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(ncc_match(&t, src), Err(Error::DegenerateTemplate)));
    }

    #[test]
    fn zero_source_windows_are_skipped() {
        let data = vec![0.0; 9];
        let src = Plane::new(3, 3, &data).unwrap();
        let t = Template::new(2, 2, vec![1.0; 4]).unwrap();
        assert_eq!(ncc_match(&t, src).unwrap(), 0.0);
    }

    #[test]
    fn oversized_template_is_rejected() {
        let data = vec![1.0; 9];
        let src = Plane::new(3, 3, &data).unwrap();
        let t = Template::new(4, 1, vec![1.0; 4]).unwrap();
        assert!(matches!(ncc_match(&t, src), Err(Error::Domain(_))));
    }

    #[test]
    fn brute_force_equivalence_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (h, w) = (rng.gen_range(2..9), rng.gen_range(2..9));
            let (a, b) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
            let data: Vec<f64> = (0..h * w)
                .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..1.0) })
                .collect();
            let tdata: Vec<f64> = (0..a * b).map(|_| rng.gen_range(0.01..1.0)).collect();
            let src = Plane::new(h, w, &data).unwrap();
            let t = Template::new(a, b, tdata).unwrap();
            let fast = ncc_match(&t, src).unwrap();
            assert!((fast - brute_force_ncc(&t, src)).abs() <= 1e-12);
        }
    }

    #[test]
    fn dual_match_takes_the_weaker_corner() {
        // Upper-left corner is a bright dot that exists in the target;
        // lower-right corner is a vertical bar the target never shows.
        let mut seed = vec![0.1; 16];
        seed[0] = 1.0;
        seed[11] = 1.0;
        seed[15] = 1.0;
        let seed_img = plane_image(4, 4, seed);
        let pair = TemplatePair::from_image(&seed_img, 0, 2, 2);
        let target = plane_image(4, 4, {
            let mut t = vec![0.1; 16];
            t[5] = 1.0;
            t
        });
        let plane = Plane::of(&target, 0);
        let s1 = ncc_match(&pair.t1, plane).unwrap();
        let s2 = ncc_match(&pair.t2, plane).unwrap();
        assert!(s2 < s1);
        assert_eq!(dual_match(&pair, &target).unwrap(), s2);
        assert_abs_diff_eq!(dual_match(&pair, &seed_img).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dual_match_ignores_global_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..64).map(|_| rng.gen_range(0.1..1.0)).collect();
        let img = plane_image(8, 8, data.clone());
        let scaled = plane_image(8, 8, data.iter().map(|v| v * 0.37).collect());
        let pair = TemplatePair::from_image(&img, 0, 3, 3);
        assert_abs_diff_eq!(dual_match(&pair, &scaled).unwrap(), 1.0, epsilon = 1e-7);
    }

    #[test]
    fn context_agrees_with_direct_matching() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let images: Vec<FingerprintImage> = (0..4)
            .map(|_| plane_image(6, 7, (0..42).map(|_| rng.gen_range(0.0..1.0)).collect()))
            .collect();
        let ctx = MatchContext::new(&images, 2, 3);
        for i in 0..4 {
            let pair = ctx.pair(i);
            for j in 0..4 {
                let direct = dual_match(&pair, &images[j]).unwrap();
                assert_eq!(ctx.similarity(&pair, j), direct);
                for tau in [0.5, 0.8, 0.9, 0.99] {
                    assert_eq!(ctx.matches(&pair, j, tau), direct >= tau);
                }
            }
        }
    }

    #[test]
    fn identical_images_share_a_category() {
        let data: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0 + 0.1).collect();
        let images = vec![plane_image(8, 8, data.clone()); 3];
        let cfg = FilterConfig { template_height: 2, template_width: 3, tau_in: 0.9, tau_out: 0.9, tau_c: 4 };
        assert_eq!(match_within(&images, &cfg).unwrap().labels, vec![0, 0, 0]);
    }

    #[test]
    fn single_image_forms_one_category() {
        let images = vec![plane_image(4, 4, vec![0.5; 16])];
        let cfg = FilterConfig { template_height: 2, template_width: 2, tau_in: 0.9, tau_out: 0.9, tau_c: 2 };
        let out = match_within(&images, &cfg).unwrap();
        assert_eq!(out.labels, vec![0]);
        assert_eq!(out.num_categories, 1);
        assert_eq!(out.representatives[0].source_index, 0);
    }

    #[test]
    fn config_validation_lists_every_violation() {
        let cfg = FilterConfig { template_height: 0, template_width: 99, tau_in: 0.0, tau_out: 1.5, tau_c: 3 };
        match cfg.validate(8, 16, 3) {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn compaction_follows_first_occurrence() {
        let (labels, order) = compact_labels(&[7, 3, 7, 9, 3]);
        assert_eq!(labels, vec![0, 1, 0, 2, 1]);
        assert_eq!(order, vec![7, 3, 9]);
    }
}
