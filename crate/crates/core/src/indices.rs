//! Spectral-index baselines and a threshold classifier.
//!
//! BAIS2 follows Filipponi (2018):
//! `(1 - sqrt(B06 * B07 * B8A / B04)) * ((B12 - B8A) / sqrt(B12 + B8A) + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::{BandId, BandStack, Grid, LabelKind, LabelRaster};

/// Denominators smaller than this mark the pixel invalid.
pub const DENOMINATOR_EPS: f64 = 1e-9;

/// Default dNBR threshold for "burned" (onset of moderate severity).
pub const DEFAULT_DNBR_THRESHOLD: f64 = 0.27;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Nbr,
    Dnbr,
    Ndvi,
    Bais2,
}

impl std::str::FromStr for IndexKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nbr" => Ok(IndexKind::Nbr),
            "dnbr" => Ok(IndexKind::Dnbr),
            "ndvi" => Ok(IndexKind::Ndvi),
            "bais2" => Ok(IndexKind::Bais2),
            other => Err(crate::Error::Argument(format!("unknown index {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexMap {
    pub grid: Grid<f64>,
    pub kind: IndexKind,
    pub valid: Grid<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NbrConfig {
    /// SWIR band of the ratio; B12 (2190 nm) unless overridden.
    pub swir: BandId,
}

impl Default for NbrConfig {
    fn default() -> Self {
        Self { swir: BandId::B12 }
    }
}

/// Guarded normalized difference `(a - b) / (a + b)`.
#[inline]
pub fn normalized_difference(a: f64, b: f64) -> Option<f64> {
    let den = a + b;
    (den.abs() >= DENOMINATOR_EPS).then(|| (a - b) / den)
}

/// NBR of one pixel, 0 where the denominator vanishes.
pub fn nbr_value(nir: f64, swir: f64) -> f64 {
    normalized_difference(nir, swir).unwrap_or(0.0)
}

fn normalized_map(a: &Grid<f64>, b: &Grid<f64>, kind: IndexKind) -> IndexMap {
    let mut values = Vec::with_capacity(a.len());
    let mut valid = Vec::with_capacity(a.len());
    for (&x, &y) in a.values().iter().zip(b.values()) {
        match normalized_difference(x, y) {
            Some(v) => {
                values.push(v);
                valid.push(true);
            }
            None => {
                values.push(0.0);
                valid.push(false);
            }
        }
    }
    let (h, w) = a.shape();
    IndexMap {
        grid: Grid::new(h, w, values).expect("shape preserved"),
        kind,
        valid: Grid::new(h, w, valid).expect("shape preserved"),
    }
}

pub fn compute_nbr(x: &BandStack) -> Result<IndexMap> {
    compute_nbr_with(x, NbrConfig::default())
}

pub fn compute_nbr_with(x: &BandStack, cfg: NbrConfig) -> Result<IndexMap> {
    let [nir, swir] = x.bands_of([BandId::B08, cfg.swir])?;
    Ok(normalized_map(nir, swir, IndexKind::Nbr))
}

pub fn compute_ndvi(x: &BandStack) -> Result<IndexMap> {
    let [nir, red] = x.bands_of([BandId::B08, BandId::B04])?;
    Ok(normalized_map(nir, red, IndexKind::Ndvi))
}

/// `NBR(pre) - NBR(post)`, valid where both inputs are valid.
pub fn compute_dnbr(pre_fire: &BandStack, post_fire: &BandStack) -> Result<IndexMap> {
    let pre = compute_nbr(pre_fire)?;
    let post = compute_nbr(post_fire)?;
    pre.grid.check_same_shape(&post.grid, "dNBR inputs")?;
    let (h, w) = pre.grid.shape();
    let values = pre.grid.values().iter().zip(post.grid.values()).map(|(a, b)| a - b).collect();
    let valid = pre.valid.values().iter().zip(post.valid.values()).map(|(a, b)| *a && *b).collect();
    Ok(IndexMap {
        grid: Grid::new(h, w, values)?,
        kind: IndexKind::Dnbr,
        valid: Grid::new(h, w, valid)?,
    })
}

/// BAIS2 of one pixel, `None` where a guard trips.
pub fn bais2_value(b04: f64, b06: f64, b07: f64, b8a: f64, b12: f64) -> Option<f64> {
    if b04.abs() < DENOMINATOR_EPS {
        return None;
    }
    let radicand = b06 * b07 * b8a / b04;
    let swir_sum = b12 + b8a;
    if radicand < 0.0 || swir_sum < DENOMINATOR_EPS {
        return None;
    }
    Some((1.0 - radicand.sqrt()) * ((b12 - b8a) / swir_sum.sqrt() + 1.0))
}

pub fn compute_bais2(x: &BandStack) -> Result<IndexMap> {
    let [b04, b06, b07, b8a, b12] = x.bands_of([BandId::B04, BandId::B06, BandId::B07, BandId::B8A, BandId::B12])?;
    let n = b04.len();
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let v = bais2_value(
            b04.values()[i],
            b06.values()[i],
            b07.values()[i],
            b8a.values()[i],
            b12.values()[i],
        );
        values.push(v.unwrap_or(0.0));
        valid.push(v.is_some());
    }
    let (h, w) = b04.shape();
    Ok(IndexMap {
        grid: Grid::new(h, w, values)?,
        kind: IndexKind::Bais2,
        valid: Grid::new(h, w, valid)?,
    })
}

pub fn compute_index(kind: IndexKind, post_fire: &BandStack, pre_fire: Option<&BandStack>) -> Result<IndexMap> {
    match kind {
        IndexKind::Nbr => compute_nbr(post_fire),
        IndexKind::Ndvi => compute_ndvi(post_fire),
        IndexKind::Bais2 => compute_bais2(post_fire),
        IndexKind::Dnbr => {
            let pre = pre_fire.ok_or_else(|| crate::Error::Config("dNBR needs a pre-fire acquisition".into()))?;
            compute_dnbr(pre, post_fire)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Greater,
    Less,
}

/// Burned (1) where the comparison holds on a valid pixel, else 0.
pub fn threshold_classify(index: &IndexMap, threshold: f64, polarity: Polarity) -> LabelRaster {
    let (h, w) = index.grid.shape();
    let values = index
        .grid
        .values()
        .iter()
        .zip(index.valid.values())
        .map(|(&v, &ok)| {
            let hit = match polarity {
                Polarity::Greater => v > threshold,
                Polarity::Less => v < threshold,
            };
            u8::from(ok && hit)
        })
        .collect();
    LabelRaster::unchecked(Grid::new(h, w, values).expect("shape preserved"), LabelKind::Delineation)
}
