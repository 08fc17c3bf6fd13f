//! Procedural 2-D urban scene with a single BS and an image-method ray model
//! (direct path plus first-order wall reflections).

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{
    AdcamTransform, Adcam, CfrMatrix, DatasetMeta, PropagationPath, SPEED_OF_LIGHT,
};
use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Attempts per sample before dataset generation gives up.
pub const POSITION_RETRY_BUDGET: usize = 10_000;

/// Axis-aligned rectangular building.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub min: Point,
    pub max: Point,
    /// Wall reflection coefficient in [0, 1].
    pub reflection: f64,
}

impl Building {
    /// Closed-rectangle containment: points on an edge count as inside.
    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    /// Whether segment `a`-`b` touches the closed rectangle.
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        let mut t_enter = 0.0_f64;
        let mut t_exit = 1.0_f64;
        for axis in 0..2 {
            let d = b[axis] - a[axis];
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if d == 0.0 {
                if a[axis] < lo || a[axis] > hi {
                    return false;
                }
            } else {
                let mut t0 = (lo - a[axis]) / d;
                let mut t1 = (hi - a[axis]) / d;
                if t0 > t1 {
                    std::mem::swap(&mut t0, &mut t1);
                }
                t_enter = t_enter.max(t0);
                t_exit = t_exit.min(t1);
                if t_enter > t_exit {
                    return false;
                }
            }
        }
        true
    }
}

fn default_max_paths() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Meters, `[width, height]`.
    pub extent: [f64; 2],
    pub buildings: Vec<Building>,
    pub bs_position: Point,
    #[serde(alias = "seed")]
    pub rng_seed: u64,
    #[serde(default = "default_max_paths")]
    pub max_paths: usize,
}

impl Scene {
    /// 250 m x 250 m block with four buildings and the BS near the lower edge.
    pub fn reference(rng_seed: u64) -> Self {
        let b = |min: Point, max: Point, reflection: f64| Building { min, max, reflection };
        Scene {
            extent: [250.0, 250.0],
            buildings: vec![
                b([40.0, 60.0], [90.0, 100.0], 0.7),
                b([150.0, 50.0], [200.0, 90.0], 0.6),
                b([60.0, 150.0], [110.0, 200.0], 0.8),
                b([160.0, 140.0], [210.0, 180.0], 0.5),
            ],
            bs_position: [125.0, 5.0],
            rng_seed,
            max_paths: default_max_paths(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let scene: Scene = serde_json::from_str(&text)?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.extent[0] > 0.0 && self.extent[1] > 0.0) {
            problems.push("extent must be positive".to_string());
        }
        for (i, b) in self.buildings.iter().enumerate() {
            if !(b.min[0] < b.max[0] && b.min[1] < b.max[1]) {
                problems.push(format!("building {i} has empty area"));
            }
            if b.min[0] < 0.0 || b.min[1] < 0.0 || b.max[0] > self.extent[0] || b.max[1] > self.extent[1] {
                problems.push(format!("building {i} lies outside the extent"));
            }
            if !(0.0..=1.0).contains(&b.reflection) {
                problems.push(format!("building {i} reflection coefficient outside [0, 1]"));
            }
            if b.contains(self.bs_position) {
                problems.push(format!("BS lies inside building {i}"));
            }
        }
        if !self.inside_extent(self.bs_position) {
            problems.push("BS lies outside the extent".to_string());
        }
        if self.max_paths == 0 {
            problems.push("max_paths must be >= 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn inside_extent(&self, p: Point) -> bool {
        p[0] >= 0.0 && p[0] <= self.extent[0] && p[1] >= 0.0 && p[1] <= self.extent[1]
    }

    /// Inside the extent and outside every (closed) building.
    pub fn is_valid_position(&self, p: Point) -> bool {
        self.inside_extent(p) && !self.buildings.iter().any(|b| b.contains(p))
    }
}

/// True when segment `a`-`b` touches any building, edges included.
pub fn los_blocked(a: Point, b: Point, scene: &Scene) -> bool {
    scene.buildings.iter().any(|bld| bld.intersects_segment(a, b))
}

fn blocked_except(a: Point, b: Point, scene: &Scene, skip: usize) -> bool {
    scene
        .buildings
        .iter()
        .enumerate()
        .any(|(i, bld)| i != skip && bld.intersects_segment(a, b))
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(v: Point) -> f64 {
    v[0].hypot(v[1])
}

/// Geometric path before delay quantization and gain assignment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayGeometry {
    /// Unfolded length in meters.
    pub length: f64,
    /// Direction leaving the BS towards the first interaction point.
    pub bs_direction: Point,
    /// Direction leaving the terminal towards its first interaction point.
    pub mt_direction: Point,
    /// Product of reflection coefficients along the path.
    pub reflection: f64,
    /// Wall reflection point, `None` for the direct path.
    pub bounce: Option<Point>,
}

/// Wall of a building: the fixed coordinate axis, the line position, the
/// span along the other axis and the sign of the outward normal.
struct Wall {
    axis: usize,
    at: f64,
    span: (f64, f64),
    outward: f64,
}

fn walls(b: &Building) -> [Wall; 4] {
    [
        Wall { axis: 0, at: b.min[0], span: (b.min[1], b.max[1]), outward: -1.0 },
        Wall { axis: 0, at: b.max[0], span: (b.min[1], b.max[1]), outward: 1.0 },
        Wall { axis: 1, at: b.min[1], span: (b.min[0], b.max[0]), outward: -1.0 },
        Wall { axis: 1, at: b.max[1], span: (b.min[0], b.max[0]), outward: 1.0 },
    ]
}

/// Mirror image of `p` across the wall line.
pub fn mirror(p: Point, axis: usize, at: f64) -> Point {
    let mut img = p;
    img[axis] = 2.0 * at - p[axis];
    img
}

/// Direct path (when unblocked) and all valid single-bounce reflections.
pub fn trace_geometry(mt: Point, scene: &Scene) -> Vec<RayGeometry> {
    let bs = scene.bs_position;
    let mut rays = Vec::new();
    if !los_blocked(bs, mt, scene) {
        rays.push(RayGeometry {
            length: norm(sub(mt, bs)),
            bs_direction: sub(mt, bs),
            mt_direction: sub(bs, mt),
            reflection: 1.0,
            bounce: None,
        });
    }
    for (bi, bld) in scene.buildings.iter().enumerate() {
        if bld.reflection <= 0.0 {
            continue;
        }
        for wall in walls(bld) {
            let ax = wall.axis;
            let other = 1 - ax;
            // Both endpoints strictly on the outward side of the wall.
            if (bs[ax] - wall.at) * wall.outward <= 0.0 || (mt[ax] - wall.at) * wall.outward <= 0.0 {
                continue;
            }
            let image = mirror(bs, ax, wall.at);
            let t = (wall.at - image[ax]) / (mt[ax] - image[ax]);
            let mut bounce = [0.0; 2];
            bounce[ax] = wall.at;
            bounce[other] = image[other] + t * (mt[other] - image[other]);
            if bounce[other] < wall.span.0 || bounce[other] > wall.span.1 {
                continue;
            }
            if blocked_except(bs, bounce, scene, bi) || blocked_except(bounce, mt, scene, bi) {
                continue;
            }
            rays.push(RayGeometry {
                length: norm(sub(mt, image)),
                bs_direction: sub(bounce, bs),
                mt_direction: sub(bounce, mt),
                reflection: bld.reflection,
                bounce: Some(bounce),
            });
        }
    }
    rays
}

/// Nearest-integer rounding with ties rounded up.
pub fn quantize_delay(length: f64, meta: &DatasetMeta) -> usize {
    let samples = length / (SPEED_OF_LIGHT * meta.sample_interval);
    (samples + 0.5).floor() as usize
}

const AOA_MARGIN: f64 = 1e-9;

/// AOA relative to the array axis (the x axis), folded into (0, pi).
fn arrival_angle(dir: Point) -> f64 {
    let c = (dir[0] / norm(dir)).clamp(-1.0, 1.0);
    c.acos().clamp(AOA_MARGIN, PI - AOA_MARGIN)
}

pub fn trace_paths<R: Rng>(
    mt: Point,
    scene: &Scene,
    meta: &DatasetMeta,
    max_paths: usize,
    rng: &mut R,
) -> Result<Vec<PropagationPath>> {
    let mut rays: Vec<(usize, RayGeometry)> = trace_geometry(mt, scene)
        .into_iter()
        .map(|r| (quantize_delay(r.length, meta), r))
        .filter(|(delay, _)| *delay < meta.num_subcarriers)
        .collect();
    if rays.is_empty() {
        return Err(Error::FullyShadowed);
    }
    rays.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.length.total_cmp(&b.1.length)));
    rays.truncate(max_paths);

    let strongest = rays
        .iter()
        .map(|(_, r)| r.reflection / r.length)
        .fold(0.0_f64, f64::max);
    let wavelength = meta.wavelength();
    rays.iter()
        .map(|(delay, r)| {
            let magnitude = r.reflection / r.length / strongest;
            let phase = rng.gen_range(0.0..2.0 * PI);
            let pathloss =
                20.0 * (4.0 * PI * r.length / wavelength).log10() - 20.0 * r.reflection.log10();
            PropagationPath::new(
                arrival_angle(r.bs_direction),
                r.mt_direction[1].atan2(r.mt_direction[0]),
                Complex64::from_polar(magnitude, phase),
                *delay,
                pathloss,
                r.length,
            )
        })
        .collect()
}

/// One terminal's ground truth and fingerprints.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathSample {
    pub position: Point,
    pub paths: Vec<PropagationPath>,
    pub cfr: CfrMatrix,
    pub adcam: Adcam,
    pub is_nlos: bool,
}

fn round_to_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Builds the CFR and ADCAM for a path list. Both are rounded to `f32`
/// precision so the in-memory sample equals its serialized form.
pub fn fingerprints(
    paths: &[PropagationPath],
    meta: &DatasetMeta,
    transform: &AdcamTransform,
) -> Result<(CfrMatrix, Adcam)> {
    let mut cfr = crate::channel::synthesize_cfr(paths, meta)?;
    cfr.map_in_place(|z| Complex64::new(round_to_f32(z.re), round_to_f32(z.im)));
    let mut adcam = transform.apply(&cfr)?;
    adcam.map_in_place(round_to_f32);
    Ok((cfr, adcam))
}

/// Per-sample RNG: the scene seed selects the key, the sample index the
/// ChaCha stream.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn generate_one(
    index: usize,
    scene: &Scene,
    meta: &DatasetMeta,
    transform: &AdcamTransform,
) -> Result<MultipathSample> {
    let mut rng = sample_rng(scene.rng_seed, index);
    for _ in 0..POSITION_RETRY_BUDGET {
        let p = [
            rng.gen_range(0.0..scene.extent[0]),
            rng.gen_range(0.0..scene.extent[1]),
        ];
        if !scene.is_valid_position(p) {
            continue;
        }
        let paths = match trace_paths(p, scene, meta, scene.max_paths, &mut rng) {
            Ok(paths) => paths,
            Err(Error::FullyShadowed) => continue,
            Err(e) => return Err(e),
        };
        let (cfr, adcam) = fingerprints(&paths, meta, transform)?;
        return Ok(MultipathSample {
            position: p,
            is_nlos: los_blocked(scene.bs_position, p, scene),
            paths,
            cfr,
            adcam,
        });
    }
    Err(Error::RetryBudgetExhausted {
        index,
        budget: POSITION_RETRY_BUDGET,
    })
}

/// Draws `count` terminals. Sample `i` depends only on `(seed, i)`, so the
/// parallel map equals a sequential loop bit for bit.
pub fn generate_dataset(scene: &Scene, count: usize, meta: &DatasetMeta) -> Result<Vec<MultipathSample>> {
    if count == 0 {
        return Err(Error::domain("dataset must contain at least one sample"));
    }
    scene.validate()?;
    meta.validate()?;
    let transform = AdcamTransform::new(meta);
    (0..count)
        .into_par_iter()
        .map(|i| generate_one(i, scene, meta, &transform))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn empty_scene() -> Scene {
        Scene {
            extent: [250.0, 250.0],
            buildings: vec![],
            bs_position: [125.0, 5.0],
            rng_seed: 1,
            max_paths: 6,
        }
    }

    fn with_buildings(buildings: Vec<Building>) -> Scene {
        Scene {
            buildings,
            ..empty_scene()
        }
    }

    fn bld(min: Point, max: Point) -> Building {
        Building { min, max, reflection: 0.5 }
    }

    #[test]
    fn segment_through_building_is_blocked() {
        let s = Scene {
            extent: [20.0, 20.0],
            buildings: vec![bld([4.0, -1.0], [6.0, 1.0])],
            bs_position: [0.0, 0.0],
            rng_seed: 0,
            max_paths: 1,
        };
        assert!(los_blocked([0.0, 0.0], [10.0, 0.0], &s));
    }

    #[test]
    fn disjoint_segment_is_clear() {
        let s = with_buildings(vec![bld([4.0, 4.0], [6.0, 6.0])]);
        assert!(!los_blocked([0.0, 0.0], [0.0, 10.0], &s));
    }

    #[test]
    fn touching_an_edge_counts_as_blocked() {
        let s = with_buildings(vec![bld([4.0, 4.0], [6.0, 6.0])]);
        assert!(los_blocked([4.0, 5.0], [0.0, 0.0], &s));
        assert!(los_blocked([0.0, 6.0], [10.0, 6.0], &s));
        assert!(los_blocked([0.0, 2.0], [4.0, 4.0], &s));
    }

    #[test]
    fn free_space_has_exactly_the_direct_path() {
        let scene = empty_scene();
        let meta = DatasetMeta::reference();
        let mt = [125.0 + 60.0, 5.0 + 80.0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let paths = trace_paths(mt, &scene, &meta, 6, &mut rng).unwrap();
        assert_eq!(paths.len(), 1);
        let r = 100.0;
        let expected_delay = (r / (SPEED_OF_LIGHT / 0.05e9) + 0.5).floor() as usize;
        assert_eq!(paths[0].sampled_delay, expected_delay);
        assert_abs_diff_eq!(paths[0].aoa, (60.0f64 / 100.0).acos(), epsilon = 1e-12);
        assert_abs_diff_eq!(paths[0].complex_gain.norm(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(paths[0].distance, 100.0, epsilon = 1e-12);
    }

    #[test]
    fn shadowed_terminal_keeps_only_reflections() {
        // BS below a blocking building; a reflective tower on the right
        // side lets energy bounce around the blocker.
        let scene = Scene {
            extent: [100.0, 100.0],
            buildings: vec![
                Building { min: [30.0, 40.0], max: [70.0, 50.0], reflection: 0.0 },
                Building { min: [80.0, 20.0], max: [90.0, 90.0], reflection: 0.9 },
                Building { min: [0.0, 95.0], max: [10.0, 100.0], reflection: 0.0 },
            ],
            bs_position: [50.0, 10.0],
            rng_seed: 0,
            max_paths: 6,
        };
        let mt = [55.0, 70.0];
        assert!(los_blocked(scene.bs_position, mt, &scene));
        let rays = trace_geometry(mt, &scene);
        assert!(rays.iter().all(|r| r.bounce.is_some()));
        assert_eq!(rays.len(), 1);
        // Hand image method: left wall of the tower at x = 80 mirrors the
        // BS to (110, 10).
        let image = [110.0, 10.0];
        assert_abs_diff_eq!(rays[0].length, norm(sub(mt, image)), epsilon = 1e-9);
        let t = (80.0 - 110.0) / (55.0 - 110.0);
        let y = 10.0 + t * (70.0 - 10.0);
        let bounce = rays[0].bounce.unwrap();
        assert_abs_diff_eq!(bounce[0], 80.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bounce[1], y, epsilon = 1e-9);
    }

    #[test]
    fn reflection_length_matches_unfolded_segments() {
        let scene = Scene::reference(0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        for _ in 0..300 {
            let p = [rng.gen_range(0.0..250.0), rng.gen_range(0.0..250.0)];
            if !scene.is_valid_position(p) {
                continue;
            }
            for r in trace_geometry(p, &scene) {
                if let Some(b) = r.bounce {
                    let legs = norm(sub(b, scene.bs_position)) + norm(sub(p, b));
                    assert!((legs - r.length).abs() < 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 50);
    }

    #[test]
    fn delay_rounding_ties_go_up() {
        let meta = DatasetMeta::reference();
        let step = SPEED_OF_LIGHT * meta.sample_interval;
        assert_eq!(quantize_delay(2.5 * step, &meta), 3);
        assert_eq!(quantize_delay(2.49 * step, &meta), 2);
        assert_eq!(quantize_delay(0.0, &meta), 0);
    }

    #[test]
    fn paths_are_sorted_and_direct_is_first() {
        let scene = Scene::reference(3);
        let meta = DatasetMeta::reference();
        let samples = generate_dataset(&scene, 60, &meta).unwrap();
        for s in &samples {
            assert!(s.paths.windows(2).all(|w| w[0].sampled_delay <= w[1].sampled_delay));
            let min_delay = s.paths.iter().map(|p| p.sampled_delay).min().unwrap();
            if !s.is_nlos {
                assert_eq!(s.paths[0].sampled_delay, min_delay);
                let direct = norm(sub(s.position, scene.bs_position));
                assert_abs_diff_eq!(s.paths[0].distance, direct, epsilon = 1e-9);
            }
            for p in &s.paths {
                assert!(p.sampled_delay < meta.num_subcarriers);
                assert!(p.complex_gain.norm() > 0.0 && p.complex_gain.norm().is_finite());
            }
        }
    }

    #[test]
    fn free_space_dataset_is_all_los() {
        let meta = DatasetMeta::reference();
        let samples = generate_dataset(&empty_scene(), 100, &meta).unwrap();
        assert!(samples.iter().all(|s| !s.is_nlos && s.paths.len() == 1));
    }

    #[test]
    fn single_sample_is_deterministic() {
        let meta = DatasetMeta::reference();
        let scene = Scene::reference(11);
        let a = generate_dataset(&scene, 1, &meta).unwrap();
        let b = generate_dataset(&scene, 1, &meta).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_samples_is_rejected() {
        let meta = DatasetMeta::reference();
        assert!(generate_dataset(&Scene::reference(0), 0, &meta).is_err());
    }

    #[test]
    fn fully_occluded_scene_exhausts_budget() {
        let meta = DatasetMeta::reference();
        // Buildings cover everything but a tiny pocket around the BS.
        let scene = Scene {
            extent: [100.0, 100.0],
            buildings: vec![
                Building { min: [0.0, 0.0], max: [100.0, 49.99], reflection: 0.0 },
                Building { min: [0.0, 50.01], max: [100.0, 100.0], reflection: 0.0 },
                Building { min: [0.0, 49.99], max: [49.99, 50.01], reflection: 0.0 },
                Building { min: [50.01, 49.99], max: [100.0, 50.01], reflection: 0.0 },
            ],
            bs_position: [50.0, 50.0],
            rng_seed: 0,
            max_paths: 6,
        };
        let err = generate_dataset(&scene, 1, &meta).unwrap_err();
        assert!(matches!(err, Error::RetryBudgetExhausted { budget: POSITION_RETRY_BUDGET, .. }));
    }

    #[test]
    fn scene_validation_catches_bad_layouts() {
        let mut s = Scene::reference(0);
        s.bs_position = [50.0, 70.0];
        assert!(matches!(s.validate(), Err(Error::InvalidConfig(_))));
        let mut s = Scene::reference(0);
        s.buildings.push(bld([240.0, 240.0], [260.0, 245.0]));
        assert!(s.validate().is_err());
    }
}
