//! Synthetic Sentinel-2-like scenes with known land cover, burn scars and clouds.
//!
//! Land cover is the argmax of eleven smoothed white-noise fields (separable
//! box blur), burn scars and clouds are unions of disks painted along random
//! walks, and reflectance is rendered at 10 m from per-class spectral
//! signatures before being block-averaged to each band's native resolution.
//! The generator uses ChaCha8 (`rand_chacha`) seeded per scene.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{save_manifest, split_counts, split_manifest_counts, DatasetManifest, GeneratorInfo, Splits};
use crate::preprocess::WORLDCOVER_CODES;
use crate::raster::{BandId, BandStack, GeoRef, Grid, LabelKind, LabelRaster, REFLECTANCE_SCALE};
use crate::scene::{native_shape, write_scene, Scene};

pub const PRNG_NAME: &str = "ChaCha8 (rand_chacha 0.9); scene i uses seed splitmix64(base_seed + i)";

pub const N_LANDCOVER_CLASSES: usize = 11;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub n_landcover_classes: usize,
    /// Box-blur radius of the class noise fields, in pixels.
    pub class_field_smoothness: usize,
    /// Inclusive range of burn blob counts.
    pub burn_blob_count: (usize, usize),
    /// Range the per-scene burned-fraction target is drawn from.
    pub burn_area_fraction: (f64, f64),
    pub cloud_fraction: (f64, f64),
    pub noise_sigma: f64,
    /// Probability that a scene ships only a severity raster (no delineation).
    pub severity_only_probability: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 512,
            width: 512,
            n_landcover_classes: N_LANDCOVER_CLASSES,
            class_field_smoothness: 48,
            burn_blob_count: (1, 3),
            burn_area_fraction: (0.02, 0.15),
            cloud_fraction: (0.0, 0.1),
            noise_sigma: 0.01,
            severity_only_probability: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac_ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("scene must be at least 1x1".into()));
        }
        if self.n_landcover_classes != N_LANDCOVER_CLASSES {
            return Err(Error::Config(format!(
                "the land-cover taxonomy has {N_LANDCOVER_CLASSES} classes, got {}",
                self.n_landcover_classes
            )));
        }
        if !frac_ok(self.burn_area_fraction) || !frac_ok(self.cloud_fraction) {
            return Err(Error::Config("fractions must be ordered ranges within [0, 1]".into()));
        }
        if self.burn_blob_count.0 > self.burn_blob_count.1 {
            return Err(Error::Config("burn blob count range is reversed".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(0.0..=1.0).contains(&self.severity_only_probability) {
            return Err(Error::Config("noise sigma must be >= 0 and probabilities in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Mean reflectance per land-cover class, in `BandId::ALL` order.
pub const CLASS_SIGNATURES: [[f64; 12]; N_LANDCOVER_CLASSES] = [
    // tree cover
    [0.03, 0.035, 0.06, 0.035, 0.08, 0.22, 0.28, 0.30, 0.31, 0.31, 0.16, 0.08],
    // shrubland
    [0.04, 0.05, 0.08, 0.07, 0.11, 0.20, 0.24, 0.26, 0.27, 0.27, 0.22, 0.12],
    // grassland
    [0.05, 0.06, 0.10, 0.08, 0.14, 0.25, 0.29, 0.31, 0.32, 0.32, 0.26, 0.15],
    // cropland
    [0.05, 0.06, 0.10, 0.06, 0.13, 0.30, 0.36, 0.38, 0.39, 0.39, 0.24, 0.12],
    // built-up
    [0.12, 0.13, 0.15, 0.17, 0.18, 0.19, 0.20, 0.21, 0.22, 0.22, 0.25, 0.22],
    // bare / sparse vegetation
    [0.12, 0.14, 0.19, 0.24, 0.26, 0.28, 0.29, 0.30, 0.31, 0.31, 0.36, 0.30],
    // snow and ice
    [0.75, 0.74, 0.72, 0.70, 0.69, 0.68, 0.66, 0.64, 0.63, 0.60, 0.15, 0.12],
    // permanent water
    [0.06, 0.06, 0.05, 0.03, 0.025, 0.02, 0.018, 0.015, 0.014, 0.012, 0.008, 0.006],
    // herbaceous wetland
    [0.04, 0.05, 0.08, 0.06, 0.10, 0.18, 0.22, 0.24, 0.25, 0.25, 0.16, 0.09],
    // mangroves
    [0.03, 0.04, 0.06, 0.04, 0.07, 0.20, 0.25, 0.27, 0.28, 0.28, 0.13, 0.06],
    // moss and lichen
    [0.07, 0.08, 0.11, 0.10, 0.13, 0.19, 0.22, 0.23, 0.24, 0.24, 0.22, 0.14],
];

/// Classes whose burned signature must separate in NBR.
pub const VEGETATED_CLASSES: [usize; 7] = [0, 1, 2, 3, 8, 9, 10];

/// Additive bias on the standardized class fields; controls class frequency.
const CLASS_PRIOR: [f64; N_LANDCOVER_CLASSES] = [1.0, 0.8, 0.8, 0.5, 0.0, 0.0, -1.5, -0.3, -0.5, -1.0, -1.0];

pub const CLOUD_REFLECTANCE: f64 = 0.85;

/// Multiplicative change a burn applies to each band.
pub fn burn_factor(band: BandId) -> f64 {
    use BandId::*;
    match band {
        B08 | B8A => 0.45,
        B11 | B12 => 1.6,
        B01 | B02 | B03 | B04 => 0.9,
        _ => 1.0,
    }
}

pub fn burned_signature(class: usize) -> [f64; 12] {
    let mut s = CLASS_SIGNATURES[class];
    for (v, b) in s.iter_mut().zip(BandId::ALL) {
        *v = (*v * burn_factor(b)).clamp(0.0, 1.0);
    }
    s
}

/// Ground truth at 10 m.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub y_d: LabelRaster,
    pub y_lc: LabelRaster,
    pub severity: LabelRaster,
    pub cloud: LabelRaster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    /// The scene as it would be stored: native-resolution digital numbers.
    pub scene: Scene,
    pub truth: GroundTruth,
    /// Unquantized 10 m renderings after and before the fire.
    pub post_fire: BandStack,
    pub pre_fire: BandStack,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Sliding-window sum along rows then columns, divided by sqrt(window size)
/// so unit-variance white noise stays unit variance.
fn box_blur_standardized(values: &mut [f64], height: usize, width: usize, radius: usize) {
    let mut tmp = vec![0.0; values.len()];
    blur_pass(values, &mut tmp, height, width, radius, true);
    blur_pass(&tmp, values, height, width, radius, false);
}

fn blur_pass(src: &[f64], dst: &mut [f64], height: usize, width: usize, radius: usize, along_rows: bool) {
    let (lines, len) = if along_rows { (height, width) } else { (width, height) };
    let idx = |line: usize, i: usize| if along_rows { line * width + i } else { i * width + line };
    let mut prefix = vec![0.0; len + 1];
    for line in 0..lines {
        for i in 0..len {
            prefix[i + 1] = prefix[i] + src[idx(line, i)];
        }
        for i in 0..len {
            let lo = i.saturating_sub(radius);
            let hi = (i + radius + 1).min(len);
            dst[idx(line, i)] = (prefix[hi] - prefix[lo]) / ((hi - lo) as f64).sqrt();
        }
    }
}

fn landcover_field(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = cfg.height * cfg.width;
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut class = vec![0u8; n];
    let mut field = vec![0.0; n];
    for (k, prior) in CLASS_PRIOR.iter().enumerate() {
        for v in field.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        box_blur_standardized(&mut field, cfg.height, cfg.width, cfg.class_field_smoothness);
        for i in 0..n {
            let v = field[i] + prior;
            if v > best[i] {
                best[i] = v;
                class[i] = k as u8;
            }
        }
    }
    class
}

/// Paints disks along a random walk until `mask` holds `target` pixels.
/// `core` keeps each pixel's smallest distance to a walk point, in disk radii.
#[allow(clippy::too_many_arguments)]
fn paint_walk(
    mask: &mut [bool],
    core: &mut [f64],
    count: &mut usize,
    target: usize,
    height: usize,
    width: usize,
    radius_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) {
    let (h, w) = (height as f64, width as f64);
    let mut y = rng.random_range(0.1 * h..=0.9 * h);
    let mut x = rng.random_range(0.1 * w..=0.9 * w);
    let base_radius = rng.random_range(radius_range.0..=radius_range.1);
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    for _ in 0..4000 {
        if *count >= target {
            break;
        }
        let radius = base_radius * rng.random_range(0.7..1.3);
        let r0 = (y - radius).floor().max(0.0) as usize;
        let r1 = ((y + radius).ceil() as usize).min(height - 1);
        let c0 = (x - radius).floor().max(0.0) as usize;
        let c1 = ((x + radius).ceil() as usize).min(width - 1);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let d = ((r as f64 + 0.5 - y).powi(2) + (c as f64 + 0.5 - x).powi(2)).sqrt() / radius;
                if d <= 1.0 {
                    let i = r * width + c;
                    if !mask[i] {
                        mask[i] = true;
                        *count += 1;
                    }
                    if d < core[i] {
                        core[i] = d;
                    }
                }
            }
        }
        heading += rng.random_range(-0.6..0.6);
        let step = 0.5 * base_radius;
        y += step * heading.sin();
        x += step * heading.cos();
        if y < 0.0 || y >= h {
            heading = -heading;
            y = y.clamp(0.0, h - 1.0);
        }
        if x < 0.0 || x >= w {
            heading = std::f64::consts::PI - heading;
            x = x.clamp(0.0, w - 1.0);
        }
    }
}

fn severity_from_core(d: f64) -> u8 {
    if d < 0.35 {
        3
    } else if d < 0.7 {
        2
    } else {
        1
    }
}

/// Block mean of a 10 m band down to its native grid.
fn to_native(values: &[f64], height: usize, width: usize, band: BandId) -> Grid<u16> {
    let f = band.upsample_factor();
    let (nh, nw) = native_shape(band, height, width);
    Grid::from_fn(nh, nw, |r, c| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for rr in r * f..((r + 1) * f).min(height) {
            for cc in c * f..((c + 1) * f).min(width) {
                sum += values[rr * width + cc];
                n += 1;
            }
        }
        quantize(sum / n as f64)
    })
}

pub fn quantize(reflectance: f64) -> u16 {
    (reflectance.clamp(0.0, 1.0) * REFLECTANCE_SCALE).round() as u16
}

/// Renders one synthetic scene; identical configs give identical scenes.
pub fn generate_scene(cfg: &SynthConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let (height, width) = (cfg.height, cfg.width);
    let n = height * width;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let classes = landcover_field(cfg, &mut rng);

    let mut burned = vec![false; n];
    let mut core = vec![f64::INFINITY; n];
    let mut burned_count = 0usize;
    let blobs = rng.random_range(cfg.burn_blob_count.0..=cfg.burn_blob_count.1);
    let target = rng.random_range(cfg.burn_area_fraction.0..=cfg.burn_area_fraction.1);
    let target_px = (target * n as f64).round() as usize;
    for b in 0..blobs {
        let goal = target_px * (b + 1) / blobs;
        paint_walk(&mut burned, &mut core, &mut burned_count, goal, height, width, (8.0, 20.0), &mut rng);
    }

    let mut cloud = vec![false; n];
    let mut cloud_core = vec![f64::INFINITY; n];
    let mut cloud_count = 0usize;
    let cloud_target = rng.random_range(cfg.cloud_fraction.0..=cfg.cloud_fraction.1);
    let cloud_px = (cloud_target * n as f64).round() as usize;
    while cloud_count < cloud_px {
        let before = cloud_count;
        paint_walk(&mut cloud, &mut cloud_core, &mut cloud_count, cloud_px, height, width, (15.0, 40.0), &mut rng);
        if cloud_count == before {
            break;
        }
    }

    let mut post = Vec::with_capacity(12);
    let mut pre = Vec::with_capacity(12);
    for band in BandId::ALL {
        let bi = band.index();
        let factor = burn_factor(band);
        let mut post_v = Vec::with_capacity(n);
        let mut pre_v = Vec::with_capacity(n);
        for i in 0..n {
            let noise = if cfg.noise_sigma > 0.0 {
                cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let base = CLASS_SIGNATURES[classes[i] as usize][bi];
            let (before, after) = if cloud[i] {
                (CLOUD_REFLECTANCE, CLOUD_REFLECTANCE)
            } else if burned[i] {
                (base, (base * factor).clamp(0.0, 1.0))
            } else {
                (base, base)
            };
            pre_v.push((before + noise).clamp(0.0, 1.0));
            post_v.push((after + noise).clamp(0.0, 1.0));
        }
        post.push((band, Grid::new(height, width, post_v)?));
        pre.push((band, Grid::new(height, width, pre_v)?));
    }

    let zone = rng.random_range(29u32..=37);
    let geo = GeoRef::new(
        300_000.0 + 60.0 * rng.random_range(0..5000) as f64,
        4_000_000.0 + 60.0 * rng.random_range(0..5000) as f64,
        10.0,
        -10.0,
        32_600 + zone,
    )?;
    let event_date = NaiveDate::from_ymd_opt(2017, 6, 1).unwrap() + chrono::Days::new(rng.random_range(0..2000));
    let severity_only = rng.random_bool(cfg.severity_only_probability);

    let severity = Grid::from_fn(height, width, |r, c| {
        let i = r * width + c;
        if burned[i] {
            severity_from_core(core[i])
        } else {
            0
        }
    });
    let y_d = severity.map(|&s| u8::from(s > 0));
    let y_lc = Grid::new(height, width, classes)?;
    let cloud_grid = Grid::new(height, width, cloud.iter().map(|&c| u8::from(c)).collect())?;

    let post_fire = BandStack::new(10.0, post)?;
    let pre_fire = BandStack::new(10.0, pre)?;
    let native = |stack: &BandStack| -> BTreeMap<BandId, Grid<u16>> {
        stack
            .iter()
            .map(|(b, g)| (b, to_native(g.values(), height, width, b)))
            .collect()
    };

    let truth = GroundTruth {
        y_d: LabelRaster::new(y_d, LabelKind::Delineation)?,
        y_lc: LabelRaster::new(y_lc.clone(), LabelKind::Landcover)?,
        severity: LabelRaster::new(severity, LabelKind::Severity)?,
        cloud: LabelRaster::new(cloud_grid, LabelKind::Cloud)?,
    };
    let scene = Scene {
        id: format!("synth-{:016x}", cfg.seed),
        event_date,
        height,
        width,
        geo,
        bands: native(&post_fire),
        pre_fire_bands: native(&pre_fire),
        delineation: (!severity_only).then(|| truth.y_d.clone()),
        severity: Some(truth.severity.clone()),
        landcover: LabelRaster::unchecked(y_lc.map(|&k| WORLDCOVER_CODES[k as usize]), LabelKind::Landcover),
        cloud: truth.cloud.clone(),
    };
    Ok(SyntheticScene {
        scene,
        truth,
        post_fire,
        pre_fire,
    })
}

/// Seed of scene `index` in a dataset generated from `base_seed`.
pub fn scene_seed(base_seed: u64, index: usize) -> u64 {
    splitmix64(base_seed.wrapping_add(index as u64))
}

/// Writes `n_scenes` scenes and a manifest split 70/10/20 with `cfg_base.seed`.
pub fn generate_dataset(cfg_base: &SynthConfig, n_scenes: usize, out_dir: &Path) -> Result<DatasetManifest> {
    if n_scenes < 3 {
        return Err(Error::Config(format!("need at least 3 scenes, got {n_scenes}")));
    }
    let counts = split_counts(n_scenes, 0.7, 0.1)?;
    generate_dataset_with_counts(cfg_base, counts, out_dir)
}

/// Writes `counts.iter().sum()` scenes with an explicit train/val/test allocation.
pub fn generate_dataset_with_counts(cfg_base: &SynthConfig, counts: [usize; 3], out_dir: &Path) -> Result<DatasetManifest> {
    cfg_base.validate()?;
    let n_scenes: usize = counts.iter().sum();
    if n_scenes < 3 {
        return Err(Error::Config(format!("need at least 3 scenes, got {n_scenes}")));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let make = |i: usize| -> Result<_> {
        let cfg = SynthConfig {
            seed: scene_seed(cfg_base.seed, i),
            ..cfg_base.clone()
        };
        let mut synth = generate_scene(&cfg)?;
        synth.scene.id = format!("scene-{i:04}");
        write_scene(&synth.scene, out_dir)
    };
    #[cfg(feature = "parallel")]
    let entries = {
        use rayon::prelude::*;
        (0..n_scenes).into_par_iter().map(make).collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let entries = (0..n_scenes).map(make).collect::<Result<Vec<_>>>()?;

    let unsplit = DatasetManifest {
        generator: Some(GeneratorInfo {
            prng: PRNG_NAME.to_string(),
            seed: cfg_base.seed,
            notes: serde_json::to_string(cfg_base)?,
        }),
        entries,
        splits: Splits::default(),
    };
    let manifest = split_manifest_counts(&unsplit, counts, cfg_base.seed)?;
    save_manifest(&manifest, out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indices::nbr_value;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            height: 128,
            width: 160,
            class_field_smoothness: 12,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn signatures_in_range_and_separated() {
        for (k, sig) in CLASS_SIGNATURES.iter().enumerate() {
            assert!(sig.iter().all(|&v| v > 0.0 && v < 1.0), "class {k}");
            let burned = burned_signature(k);
            assert!(burned.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let (nir, swir) = (BandId::B08.index(), BandId::B12.index());
        for k in VEGETATED_CLASSES {
            let s = CLASS_SIGNATURES[k];
            let b = burned_signature(k);
            assert!(nbr_value(b[nir], b[swir]) < nbr_value(s[nir], s[swir]) - 0.3, "class {k}");
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(generate_scene(&small(4)).unwrap(), generate_scene(&small(4)).unwrap());
        assert_ne!(
            generate_scene(&small(4)).unwrap().scene.bands,
            generate_scene(&small(5)).unwrap().scene.bands
        );
    }

    #[test]
    fn label_domains_and_consistency() {
        for seed in 0..4 {
            let s = generate_scene(&small(seed)).unwrap();
            assert!(s.truth.y_lc.grid.values().iter().all(|&v| v <= 10));
            assert!(s.truth.y_d.grid.values().iter().all(|&v| v <= 1));
            assert!(s.truth.cloud.grid.values().iter().all(|&v| v <= 1));
            for (d, sev) in s.truth.y_d.grid.values().iter().zip(s.truth.severity.grid.values()) {
                assert_eq!(*d == 1, *sev > 0);
            }
            for (_, g) in s.post_fire.iter() {
                assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
            }
            s.scene.validate().unwrap();
        }
    }

    #[test]
    fn burned_fraction_tracks_target() {
        for seed in 0..6 {
            let cfg = SynthConfig {
                burn_area_fraction: (0.05, 0.05),
                ..small(seed)
            };
            let s = generate_scene(&cfg).unwrap();
            let burned = s.truth.y_d.grid.values().iter().filter(|&&v| v == 1).count();
            let frac = burned as f64 / s.truth.y_d.grid.len() as f64;
            assert!((0.025..=0.10).contains(&frac), "seed {seed}: {frac}");
        }
    }

    #[test]
    fn box_blur_keeps_unit_variance_in_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (h, w) = (200, 200);
        let mut v: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
        box_blur_standardized(&mut v, h, w, 5);
        let interior: Vec<f64> = (50..150)
            .flat_map(|r| (50..150).map(move |c| (r, c)))
            .map(|(r, c)| v[r * w + c])
            .collect();
        let var = interior.iter().map(|x| x * x).sum::<f64>() / interior.len() as f64;
        assert!((var - 1.0).abs() < 0.3, "{var}");
    }
}
