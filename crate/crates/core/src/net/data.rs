//! Compact in-memory training samples and batch assembly.
//!
//! Model inputs are zeroed at cloud pixels, so nothing under a cloud can
//! influence a loss or a gradient.

use crate::error::{Error, Result};
use crate::preprocess::PreparedSample;
use crate::raster::{BandId, Grid, Planes, REFLECTANCE_SCALE};

#[derive(Debug, Clone, PartialEq)]
enum Pixels {
    /// Digital numbers; reflectance is `dn / 10000`, reproduced exactly.
    Dn(Vec<u16>),
    Float(Vec<f64>),
}

/// A prepared sample reduced to the selected bands, stored as digital
/// numbers whenever that is lossless.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactSample {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pixels: Pixels,
    pub y_d: Grid<u8>,
    pub y_lc: Grid<u8>,
    pub cloud: Grid<u8>,
    pub valid_d: Grid<bool>,
    pub valid_lc: Grid<bool>,
}

impl CompactSample {
    pub fn from_prepared(sample: &PreparedSample, bands: &[BandId]) -> Result<Self> {
        let planes = sample.x.to_planes(bands)?;
        let as_dn: Option<Vec<u16>> = planes
            .data
            .iter()
            .map(|&v| {
                let dn = (v * REFLECTANCE_SCALE).round();
                (dn >= 0.0 && dn <= u16::MAX as f64 && dn / REFLECTANCE_SCALE == v).then_some(dn as u16)
            })
            .collect();
        let (height, width) = sample.shape();
        Ok(Self {
            id: sample.id.clone(),
            height,
            width,
            channels: bands.len(),
            pixels: match as_dn {
                Some(dn) => Pixels::Dn(dn),
                None => Pixels::Float(planes.data),
            },
            y_d: sample.y_d.grid.clone(),
            y_lc: sample.y_lc.grid.clone(),
            cloud: sample.cloud.grid.clone(),
            valid_d: sample.valid_d.clone(),
            valid_lc: sample.valid_lc.clone(),
        })
    }

    pub fn is_lossless_dn(&self) -> bool {
        matches!(self.pixels, Pixels::Dn(_))
    }

    fn value(&self, i: usize) -> f64 {
        match &self.pixels {
            Pixels::Dn(d) => d[i] as f64 / REFLECTANCE_SCALE,
            Pixels::Float(f) => f[i],
        }
    }

    /// Cloud-masked model input for a window.
    pub fn input(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Planes> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Bounds(format!(
                "{h}x{w} window at ({top},{left}) in a {}x{} sample",
                self.height, self.width
            )));
        }
        let mut out = Planes::zeros(self.channels, h, w);
        let plane = self.height * self.width;
        for c in 0..self.channels {
            let dst = out.plane_mut(c);
            for r in 0..h {
                for col in 0..w {
                    let i = (top + r) * self.width + left + col;
                    if *self.cloud.get(top + r, left + col) == 0 {
                        dst[r * w + col] = self.value(c * plane + i);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn full_input(&self) -> Planes {
        self.input(0, 0, self.height, self.width).expect("full window is in bounds")
    }
}

/// Zeroes every channel where `cloud` is set.
pub fn mask_clouds(x: &mut Planes, cloud: &Grid<u8>) -> Result<()> {
    if (x.height, x.width) != cloud.shape() {
        return Err(Error::Dimension(format!("input {}x{} vs cloud mask {:?}", x.height, x.width, cloud.shape())));
    }
    let n = x.plane_len();
    for c in 0..x.channels {
        for (v, &m) in x.data[c * n..(c + 1) * n].iter_mut().zip(cloud.values()) {
            if m != 0 {
                *v = 0.0;
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub x: Vec<Planes>,
    pub y_d: Vec<Grid<u8>>,
    pub y_lc: Vec<Grid<u8>>,
    pub valid_d: Vec<Grid<bool>>,
    pub valid_lc: Vec<Grid<bool>>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// Square crops of side `size` at the given corners.
    pub fn from_crops(items: &[(&CompactSample, (usize, usize))], size: usize) -> Result<Self> {
        let mut batch = Self {
            x: Vec::with_capacity(items.len()),
            y_d: Vec::with_capacity(items.len()),
            y_lc: Vec::with_capacity(items.len()),
            valid_d: Vec::with_capacity(items.len()),
            valid_lc: Vec::with_capacity(items.len()),
        };
        for &(s, (top, left)) in items {
            batch.x.push(s.input(top, left, size, size)?);
            batch.y_d.push(s.y_d.crop(top, left, size, size)?);
            batch.y_lc.push(s.y_lc.crop(top, left, size, size)?);
            batch.valid_d.push(s.valid_d.crop(top, left, size, size)?);
            batch.valid_lc.push(s.valid_lc.crop(top, left, size, size)?);
        }
        Ok(batch)
    }

    /// Whole samples, cloud-masked.
    pub fn from_samples(samples: &[&PreparedSample], bands: &[BandId]) -> Result<Self> {
        let mut batch = Self {
            x: Vec::new(),
            y_d: Vec::new(),
            y_lc: Vec::new(),
            valid_d: Vec::new(),
            valid_lc: Vec::new(),
        };
        for s in samples {
            let mut x = s.x.to_planes(bands)?;
            mask_clouds(&mut x, &s.cloud.grid)?;
            batch.x.push(x);
            batch.y_d.push(s.y_d.grid.clone());
            batch.y_lc.push(s.y_lc.grid.clone());
            batch.valid_d.push(s.valid_d.clone());
            batch.valid_lc.push(s.valid_lc.clone());
        }
        Ok(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::tests::sample;
    use crate::raster::BandStack;

    const BANDS: [BandId; 2] = [BandId::B04, BandId::B08];

    fn dn_sample(h: usize, w: usize) -> PreparedSample {
        let mut s = sample(h, w);
        s.x = BandStack::new(
            10.0,
            BANDS.iter().enumerate().map(|(k, &b)| {
                (b, Grid::from_fn(h, w, |r, c| ((k * 7919 + r * 131 + c * 17) % 10_000) as f64 / REFLECTANCE_SCALE))
            }),
        )
        .unwrap();
        s
    }

    #[test]
    fn dn_storage_is_lossless() {
        let s = dn_sample(16, 24);
        let c = CompactSample::from_prepared(&s, &BANDS).unwrap();
        assert!(c.is_lossless_dn());
        assert!(!CompactSample::from_prepared(&sample(4, 4), &BANDS).unwrap().is_lossless_dn());
        let want = s.x.to_planes(&BANDS).unwrap();
        let got = c.full_input();
        for r in 0..16 {
            for col in 0..24 {
                let cloudy = *s.cloud.grid.get(r, col) != 0;
                for ch in 0..2 {
                    let i = ch * 16 * 24 + r * 24 + col;
                    let expect = if cloudy { 0.0 } else { want.data[i] };
                    assert_eq!(got.data[i].to_bits(), expect.to_bits());
                }
            }
        }
        let b = TrainingBatch::from_samples(&[&s], &BANDS).unwrap();
        assert_eq!(b.x[0], got);
    }

    #[test]
    fn crops_match_sample_crops() {
        let s = dn_sample(16, 24);
        let c = CompactSample::from_prepared(&s, &[BandId::B08, BandId::B04]).unwrap();
        let batch = TrainingBatch::from_crops(&[(&c, (4, 8))], 8).unwrap();
        let cropped = s.crop(4, 8, 8, 8).unwrap();
        let want = TrainingBatch::from_samples(&[&cropped], &[BandId::B08, BandId::B04]).unwrap();
        assert_eq!(batch, want);
        assert!(TrainingBatch::from_crops(&[(&c, (10, 8))], 8).is_err());
    }
}
