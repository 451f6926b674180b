//! Browser demo: map a spectral index over a synthetic scene and score a
//! threshold against its burned-area ground truth.
//!
//! [`Explorer`] holds the logic and runs natively; [`Demo`] is the thin
//! wasm-bindgen face used by `www/index.html`.

use burnscar::eval::metrics::{confusion_grids, macro_f1};
use burnscar::indices::{compute_index, threshold_classify, IndexKind, IndexMap, Polarity};
use burnscar::preprocess::{post_fire_stack, pre_fire_stack};
use burnscar::raster::{BandId, BandStack, Grid};
use burnscar::synth::{generate_scene, SynthConfig};
use burnscar::{Error, Result};
use wasm_bindgen::prelude::*;

/// Side lengths the demo accepts; bigger scenes stall the page.
pub const MIN_SIDE: usize = 64;
pub const MAX_SIDE: usize = 512;

/// Burned pixels score high on dNBR and BAIS2 and low on NBR and NDVI.
pub fn burned_polarity(kind: IndexKind) -> Polarity {
    match kind {
        IndexKind::Dnbr | IndexKind::Bais2 => Polarity::Greater,
        IndexKind::Nbr | IndexKind::Ndvi => Polarity::Less,
    }
}

pub struct Explorer {
    post: BandStack,
    pre: Option<BandStack>,
    truth: Grid<u8>,
    cloud: Grid<u8>,
    index: Option<IndexMap>,
}

impl Explorer {
    pub fn generate(seed: u64, side: usize) -> Result<Self> {
        if !(MIN_SIDE..=MAX_SIDE).contains(&side) {
            return Err(Error::Argument(format!("side must be in {MIN_SIDE}..={MAX_SIDE}, got {side}")));
        }
        let synthetic = generate_scene(&SynthConfig {
            seed,
            height: side,
            width: side,
            ..SynthConfig::default()
        })?;
        Ok(Self {
            post: post_fire_stack(&synthetic.scene)?,
            pre: pre_fire_stack(&synthetic.scene)?,
            truth: synthetic.truth.y_d.grid,
            cloud: synthetic.truth.cloud.grid,
            index: None,
        })
    }

    pub fn side(&self) -> usize {
        self.post.width()
    }

    pub fn burned_fraction(&self) -> f64 {
        let burned = self.truth.values().iter().filter(|&&v| v == 1).count();
        burned as f64 / self.truth.len() as f64
    }

    /// B04/B03/B02 as RGBA with a fixed 0..0.3 reflectance stretch.
    pub fn true_color(&self) -> Result<Vec<u8>> {
        let [r, g, b] = self.post.bands_of([BandId::B04, BandId::B03, BandId::B02])?;
        let stretch = |v: f64| (v / 0.3 * 255.0).clamp(0.0, 255.0) as u8;
        let mut out = Vec::with_capacity(r.len() * 4);
        for i in 0..r.len() {
            out.extend([stretch(r.values()[i]), stretch(g.values()[i]), stretch(b.values()[i]), 255]);
        }
        Ok(out)
    }

    /// Computes the index and returns it colour-mapped over its valid range.
    pub fn compute(&mut self, kind: IndexKind) -> Result<Vec<u8>> {
        let map = compute_index(kind, &self.post, self.pre.as_ref())?;
        let (lo, hi) = value_range(&map);
        let image = colormap(&map, lo, hi);
        self.index = Some(map);
        Ok(image)
    }

    /// Min and max of the current index over valid pixels.
    pub fn range(&self) -> Result<(f64, f64)> {
        Ok(value_range(self.current()?))
    }

    /// Thresholded mask as an RGBA overlay (red: true positive, yellow: false
    /// positive, blue: missed) and its macro-F1 against the truth, clouds
    /// excluded.
    pub fn threshold(&self, threshold: f64) -> Result<(Vec<u8>, f64)> {
        let map = self.current()?;
        let mask = threshold_classify(map, threshold, burned_polarity(map.kind)).grid;
        let valid = Grid::from_fn(self.truth.height(), self.truth.width(), |r, c| {
            *self.cloud.get(r, c) == 0 && *map.valid.get(r, c) && *self.truth.get(r, c) != 255
        });
        let f1 = macro_f1(&confusion_grids(&mask, &self.truth, &valid, 2)?)?;
        let mut out = Vec::with_capacity(mask.len() * 4);
        for ((&p, &t), &ok) in mask.values().iter().zip(self.truth.values()).zip(valid.values()) {
            out.extend(match (ok, p, t) {
                (false, _, _) => [0, 0, 0, 0],
                (true, 1, 1) => [220, 40, 30, 200],
                (true, 1, _) => [250, 210, 40, 200],
                (true, _, 1) => [40, 110, 230, 200],
                _ => [0, 0, 0, 0],
            });
        }
        Ok((out, f1))
    }

    fn current(&self) -> Result<&IndexMap> {
        self.index
            .as_ref()
            .ok_or_else(|| Error::Argument("compute an index first".into()))
    }
}

fn value_range(map: &IndexMap) -> (f64, f64) {
    map.grid
        .values()
        .iter()
        .zip(map.valid.values())
        .filter(|(v, &ok)| ok && v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)))
}

/// Blue (low) through white to red (high); invalid pixels are transparent.
fn colormap(map: &IndexMap, lo: f64, hi: f64) -> Vec<u8> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Vec::with_capacity(map.grid.len() * 4);
    for (&v, &ok) in map.grid.values().iter().zip(map.valid.values()) {
        if !ok {
            out.extend([0, 0, 0, 0]);
            continue;
        }
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        let (r, g, b) = if t < 0.5 {
            let s = t * 2.0;
            (s, s, 1.0)
        } else {
            let s = (1.0 - t) * 2.0;
            (1.0, s, s)
        };
        out.extend([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8, 255]);
    }
    out
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    inner: Explorer,
    last_f1: f64,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, side: u32) -> std::result::Result<Demo, JsError> {
        Ok(Demo {
            inner: Explorer::generate(seed as u64, side as usize).map_err(js)?,
            last_f1: f64::NAN,
        })
    }

    pub fn side(&self) -> u32 {
        self.inner.side() as u32
    }

    #[wasm_bindgen(js_name = burnedFraction)]
    pub fn burned_fraction(&self) -> f64 {
        self.inner.burned_fraction()
    }

    #[wasm_bindgen(js_name = trueColor)]
    pub fn true_color(&self) -> std::result::Result<Vec<u8>, JsError> {
        self.inner.true_color().map_err(js)
    }

    /// `kind` is one of nbr, dnbr, ndvi, bais2.
    pub fn index(&mut self, kind: &str) -> std::result::Result<Vec<u8>, JsError> {
        let kind: IndexKind = kind.parse().map_err(js)?;
        self.inner.compute(kind).map_err(js)
    }

    #[wasm_bindgen(js_name = rangeLow)]
    pub fn range_low(&self) -> std::result::Result<f64, JsError> {
        Ok(self.inner.range().map_err(js)?.0)
    }

    #[wasm_bindgen(js_name = rangeHigh)]
    pub fn range_high(&self) -> std::result::Result<f64, JsError> {
        Ok(self.inner.range().map_err(js)?.1)
    }

    /// Overlay for the threshold; the score is then available from `f1()`.
    pub fn threshold(&mut self, threshold: f64) -> std::result::Result<Vec<u8>, JsError> {
        let (overlay, f1) = self.inner.threshold(threshold).map_err(js)?;
        self.last_f1 = f1;
        Ok(overlay)
    }

    pub fn f1(&self) -> f64 {
        self.last_f1
    }
}
