//! Tiled inference over arbitrarily large samples.

use super::data::{mask_clouds, CompactSample};
use super::network::{MtlNetwork, LANDCOVER_CLASSES, SIDE_MULTIPLE};
use crate::error::{Error, Result};
use crate::preprocess::PreparedSample;
use crate::raster::{BandId, Grid, Planes};
use crate::tiler::{make_blend_window, plan_tiles, Blender, TilerConfig};

pub const DEFAULT_PROBABILITY_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Burned probability, `sigmoid` of the blended logits.
    pub probability: Grid<f64>,
    /// 1 where the probability exceeds 0.5.
    pub mask: Grid<u8>,
    /// Blended land-cover logits when requested.
    pub landcover_logits: Option<Planes>,
}

impl Prediction {
    pub fn landcover_classes(&self) -> Option<Grid<u8>> {
        let z = self.landcover_logits.as_ref()?;
        let n = z.plane_len();
        Some(Grid::from_fn(z.height, z.width, |r, c| {
            let i = r * z.width + c;
            (0..z.channels)
                .max_by(|&a, &b| z.data[a * n + i].total_cmp(&z.data[b * n + i]).then(b.cmp(&a)))
                .unwrap_or(0) as u8
        }))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Effective tile side: the configured size, shrunk (to a multiple of 8) for
/// inputs smaller than one tile.
fn tile_side(cfg: &TilerConfig, h: usize, w: usize) -> Result<usize> {
    let fit = h.min(w) / SIDE_MULTIPLE * SIDE_MULTIPLE;
    let tile = cfg.tile_size.min(fit);
    if tile == 0 || !tile.is_multiple_of(SIDE_MULTIPLE) {
        return Err(Error::Shape(format!(
            "cannot tile a {h}x{w} input with {}-pixel tiles (sides must be multiples of {SIDE_MULTIPLE})",
            cfg.tile_size
        )));
    }
    Ok(tile)
}

/// Runs the network tile by tile over an already cloud-masked input.
pub fn predict_planes(net: &MtlNetwork, x: &Planes, cfg: &TilerConfig, with_landcover: bool) -> Result<Prediction> {
    if x.channels != net.in_channels() {
        return Err(Error::Config(format!(
            "input has {} bands but the network was trained on {}",
            x.channels,
            net.in_channels()
        )));
    }
    let with_lc = with_landcover && net.has_landcover_head();
    let (h, w) = (x.height, x.width);
    let tile = tile_side(cfg, h, w)?;
    let spec = plan_tiles(h, w, tile, cfg.stride.min(tile))?;
    let window = make_blend_window(tile, cfg.taper)?;
    let channels = if with_lc { 1 + LANDCOVER_CLASSES } else { 1 };
    let mut blender = Blender::new(&window, channels, (h, w));
    for &(top, left) in &spec.positions {
        let input = x.crop(top, left, tile, tile)?;
        let (out, _) = net.forward_item(&input, with_lc)?;
        let logits = match out.logits_lc {
            Some(lc) => super::layers::concat_channels(&out.logits_d, &lc),
            None => out.logits_d,
        };
        blender.add((top, left), &logits)?;
    }
    let blended = blender.finish()?;
    let probability = Grid::new(h, w, blended.plane(0).iter().map(|&z| sigmoid(z)).collect())?;
    let mask = probability.map(|&p| (p > DEFAULT_PROBABILITY_THRESHOLD) as u8);
    let landcover_logits = with_lc.then(|| {
        let n = blended.plane_len();
        Planes {
            channels: LANDCOVER_CLASSES,
            height: h,
            width: w,
            data: blended.data[n..].to_vec(),
        }
    });
    Ok(Prediction {
        probability,
        mask,
        landcover_logits,
    })
}

/// Delineation for a prepared sample, using the bands the network was trained on.
pub fn predict(net: &MtlNetwork, sample: &PreparedSample, bands: &[BandId], cfg: &TilerConfig) -> Result<Prediction> {
    if bands.len() != net.in_channels() {
        return Err(Error::Config(format!(
            "{} bands requested but the network expects {}",
            bands.len(),
            net.in_channels()
        )));
    }
    let mut x = sample.x.to_planes(bands)?;
    mask_clouds(&mut x, &sample.cloud.grid)?;
    predict_planes(net, &x, cfg, false)
}

pub fn predict_compact(net: &MtlNetwork, sample: &CompactSample, cfg: &TilerConfig) -> Result<Prediction> {
    predict_planes(net, &sample.full_input(), cfg, false)
}
