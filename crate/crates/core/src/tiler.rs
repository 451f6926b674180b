//! Random training crops and overlapping-tile reconstruction with smooth
//! edge-tapered blending.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, Planes};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TilerConfig {
    pub tile_size: usize,
    pub stride: usize,
    /// Fraction of the tile side tapered at each edge.
    pub taper: f64,
}

impl Default for TilerConfig {
    fn default() -> Self {
        Self {
            tile_size: 512,
            stride: 256,
            taper: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileSpec {
    pub tile_size: usize,
    pub stride: usize,
    pub height: usize,
    pub width: usize,
    /// (top, left) corners, row-major order.
    pub positions: Vec<(usize, usize)>,
}

/// Start offsets along one axis: multiples of `stride`, plus a final tile
/// flush with the far edge when the last regular tile stops short.
pub fn axis_positions(side: usize, tile: usize, stride: usize) -> Vec<usize> {
    let last = side - tile;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

pub fn plan_tiles(height: usize, width: usize, tile_size: usize, stride: usize) -> Result<TileSpec> {
    if tile_size == 0 || tile_size > height.min(width) {
        return Err(Error::Plan(format!(
            "tile {tile_size} does not fit a {height}x{width} image; pad it first"
        )));
    }
    if stride == 0 || stride > tile_size {
        return Err(Error::Plan(format!("stride {stride} must be in 1..={tile_size}")));
    }
    let rows = axis_positions(height, tile_size, stride);
    let cols = axis_positions(width, tile_size, stride);
    let positions = rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect();
    Ok(TileSpec {
        tile_size,
        stride,
        height,
        width,
        positions,
    })
}

/// Uniform crop offset `(top, left)` for a `crop`x`crop` window.
pub fn sample_crop_offset(height: usize, width: usize, crop: usize, rng: &mut impl Rng) -> Result<(usize, usize)> {
    if crop > height || crop > width {
        return Err(Error::Bounds(format!("crop {crop} larger than {height}x{width}")));
    }
    let top = rng.random_range(0..=height - crop);
    let left = rng.random_range(0..=width - crop);
    Ok((top, left))
}

/// Cubic smoothstep `3u^2 - 2u^3`.
#[inline]
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendWindow {
    pub profile: Vec<f64>,
    pub weights: Grid<f64>,
}

impl BlendWindow {
    pub fn tile_size(&self) -> usize {
        self.profile.len()
    }
}

/// One-dimensional taper: smoothstep ramps over `round(taper * tile)` pixels at
/// each end (sampled at pixel centres, so never exactly zero) and 1 inside.
pub fn blend_profile(tile_size: usize, taper_fraction: f64) -> Result<Vec<f64>> {
    if !(taper_fraction > 0.0 && taper_fraction <= 0.5) {
        return Err(Error::Argument(format!("taper fraction {taper_fraction} not in (0, 0.5]")));
    }
    if tile_size == 0 {
        return Err(Error::Argument("tile size must be positive".into()));
    }
    let band = ((taper_fraction * tile_size as f64).round() as usize).clamp(1, tile_size.div_ceil(2));
    Ok((0..tile_size)
        .map(|i| {
            let from_edge = i.min(tile_size - 1 - i);
            if from_edge < band {
                smoothstep((from_edge as f64 + 0.5) / band as f64)
            } else {
                1.0
            }
        })
        .collect())
}

pub fn make_blend_window(tile_size: usize, taper_fraction: f64) -> Result<BlendWindow> {
    let profile = blend_profile(tile_size, taper_fraction)?;
    let weights = Grid::from_fn(tile_size, tile_size, |r, c| profile[r] * profile[c]);
    Ok(BlendWindow { profile, weights })
}

/// Streaming normalized blending: `out = sum(w_i * v_i) / sum(w_i)` per pixel.
///
/// Deviations from the first tile covering each pixel are accumulated instead
/// of raw values, which is algebraically the same but keeps the result exactly
/// constant when every contribution agrees.
#[derive(Debug)]
pub struct Blender<'a> {
    window: &'a BlendWindow,
    channels: usize,
    height: usize,
    width: usize,
    anchor: Planes,
    acc: Planes,
    den: Vec<f64>,
}

impl<'a> Blender<'a> {
    pub fn new(window: &'a BlendWindow, channels: usize, out_shape: (usize, usize)) -> Self {
        let (height, width) = out_shape;
        Self {
            window,
            channels,
            height,
            width,
            anchor: Planes::zeros(channels, height, width),
            acc: Planes::zeros(channels, height, width),
            den: vec![0.0; height * width],
        }
    }

    pub fn add(&mut self, (top, left): (usize, usize), p: &Planes) -> Result<()> {
        let t = self.window.tile_size();
        let (channels, height, width) = (self.channels, self.height, self.width);
        if p.channels != channels || p.height != t || p.width != t {
            return Err(Error::Shape(format!(
                "tile output {}x{}x{} does not match {channels}x{t}x{t}",
                p.channels, p.height, p.width
            )));
        }
        if top + t > height || left + t > width {
            return Err(Error::Bounds(format!("tile at ({top},{left}) leaves the {height}x{width} output")));
        }
        for r in 0..t {
            let wrow = self.window.weights.row(r);
            let base = (top + r) * width + left;
            let den = &mut self.den[base..base + t];
            for c in 0..channels {
                let src = &p.plane(c)[r * t..(r + 1) * t];
                let anchor = &mut self.anchor.plane_mut(c)[base..base + t];
                let acc = &mut self.acc.plane_mut(c)[base..base + t];
                for i in 0..t {
                    if den[i] == 0.0 {
                        anchor[i] = src[i];
                    } else {
                        acc[i] += wrow[i] * (src[i] - anchor[i]);
                    }
                }
            }
            den.iter_mut().zip(wrow).for_each(|(d, &w)| *d += w);
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Planes> {
        let width = self.width;
        if let Some(i) = self.den.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::Coverage(format!("pixel ({}, {}) is not covered by any tile", i / width, i % width)));
        }
        let mut out = self.acc;
        let n = out.plane_len();
        for c in 0..self.channels {
            let anchor = &self.anchor.data[c * n..(c + 1) * n];
            for ((o, &d), &a) in out.plane_mut(c).iter_mut().zip(&self.den).zip(anchor) {
                *o = a + *o / d;
            }
        }
        Ok(out)
    }
}

pub fn blend_tiles(tiles: &[((usize, usize), Planes)], window: &BlendWindow, out_shape: (usize, usize)) -> Result<Planes> {
    let channels = tiles
        .first()
        .map(|(_, p)| p.channels)
        .ok_or_else(|| Error::Coverage("no tiles to blend".into()))?;
    let mut blender = Blender::new(window, channels, out_shape);
    for (pos, p) in tiles {
        blender.add(*pos, p)?;
    }
    blender.finish()
}

/// Sum of blend weights per pixel for a tiling (the normalization denominator).
pub fn coverage_weights(spec: &TileSpec, window: &BlendWindow) -> Grid<f64> {
    let mut den = Grid::filled(spec.height, spec.width, 0.0);
    let t = spec.tile_size;
    for &(top, left) in &spec.positions {
        for r in 0..t {
            for c in 0..t {
                *den.get_mut(top + r, left + c) += window.weights.get(r, c);
            }
        }
    }
    den
}
