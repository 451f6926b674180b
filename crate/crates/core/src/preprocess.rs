//! Data preparation: resampling to 10 m, label derivation, validity masks,
//! minimum-size padding and splitting of oversized areas.

use crate::error::{Error, Result};
use crate::raster::{BandId, BandStack, GeoRef, Grid, LabelKind, LabelRaster, IGNORE, REFLECTANCE_SCALE};
use crate::scene::Scene;

/// ESA WorldCover codes, in the order of the contiguous class indices 0..=10.
pub const WORLDCOVER_CODES: [u8; 11] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 95, 100];

pub const MIN_SIDE: usize = 512;
pub const MAX_SIDE: usize = 2500;

/// A model-ready sample on the 10 m grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSample {
    pub id: String,
    pub x: BandStack,
    pub y_d: LabelRaster,
    pub y_lc: LabelRaster,
    pub cloud: LabelRaster,
    pub valid_d: Grid<bool>,
    pub valid_lc: Grid<bool>,
    pub geo: GeoRef,
    /// Top-left corner of this sample in its source scene's (padded) grid.
    pub offset: (usize, usize),
}

impl PreparedSample {
    pub fn shape(&self) -> (usize, usize) {
        self.x.shape()
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            id: self.id.clone(),
            x: self.x.crop(top, left, h, w)?,
            y_d: LabelRaster::unchecked(self.y_d.grid.crop(top, left, h, w)?, self.y_d.kind),
            y_lc: LabelRaster::unchecked(self.y_lc.grid.crop(top, left, h, w)?, self.y_lc.kind),
            cloud: LabelRaster::unchecked(self.cloud.grid.crop(top, left, h, w)?, self.cloud.kind),
            valid_d: self.valid_d.crop(top, left, h, w)?,
            valid_lc: self.valid_lc.crop(top, left, h, w)?,
            geo: self.geo.offset(top, left),
            offset: (self.offset.0 + top, self.offset.1 + left),
        })
    }
}

/// Nearest-neighbour enlargement: `out[r][c] = in[r / factor][c / factor]`.
pub fn upsample_nearest<T: Clone>(g: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    if factor < 1 {
        return Err(Error::Argument("upsampling factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let (h, w) = g.shape();
    let mut values = Vec::with_capacity(h * w * factor * factor);
    for r in 0..h * factor {
        let src = g.row(r / factor);
        for c in 0..w * factor {
            values.push(src[c / factor].clone());
        }
    }
    Grid::new(h * factor, w * factor, values)
}

/// Severity grades {1, 2, 3} become burned, 0 stays unburned, 255 stays ignored.
pub fn binarize_severity(severity: &LabelRaster) -> Result<LabelRaster> {
    let mut values = Vec::with_capacity(severity.grid.len());
    for &v in severity.grid.values() {
        values.push(match v {
            0 => 0,
            1..=3 => 1,
            IGNORE => IGNORE,
            other => return Err(Error::LabelDomain(format!("unexpected severity code {other}"))),
        });
    }
    let (h, w) = severity.shape();
    Ok(LabelRaster::unchecked(Grid::new(h, w, values)?, LabelKind::Delineation))
}

pub fn remap_code(code: u8) -> u8 {
    WORLDCOVER_CODES
        .iter()
        .position(|&c| c == code)
        .map_or(IGNORE, |i| i as u8)
}

/// WorldCover codes to contiguous class indices; unknown codes become 255.
pub fn remap_landcover(raw: &LabelRaster) -> LabelRaster {
    LabelRaster::unchecked(raw.grid.map(|&v| remap_code(v)), LabelKind::Landcover)
}

/// Masks shared by both tasks: clouds invalidate everything, and land cover
/// additionally drops ignored codes and burned pixels.
pub fn validity_masks(y_d: &LabelRaster, y_lc: &LabelRaster, cloud: &LabelRaster) -> Result<(Grid<bool>, Grid<bool>)> {
    y_d.grid.check_same_shape(&cloud.grid, "delineation vs cloud")?;
    y_lc.grid.check_same_shape(&cloud.grid, "land cover vs cloud")?;
    let valid_d = cloud.grid.map(|&c| c == 0);
    let (h, w) = cloud.shape();
    let valid_lc = Grid::from_fn(h, w, |r, c| {
        *cloud.grid.get(r, c) == 0 && *y_lc.grid.get(r, c) != IGNORE && *y_d.grid.get(r, c) != 1
    });
    Ok((valid_d, valid_lc))
}

/// Index into `0..n` for a reflection about the edges (edge pixel not repeated).
pub fn mirror_index(p: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = p.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

fn reflect_pad<T: Clone>(g: &Grid<T>, top: usize, bottom: usize, left: usize, right: usize) -> Grid<T> {
    let (h, w) = g.shape();
    Grid::from_fn(h + top + bottom, w + left + right, |r, c| {
        let sr = mirror_index(r as isize - top as isize, h);
        let sc = mirror_index(c as isize - left as isize, w);
        g.get(sr, sc).clone()
    })
}

/// Reflect-pads any side shorter than `min_side`, splitting the pad evenly
/// (extra pixel at the bottom/right); padded pixels are invalid for both tasks.
pub fn ensure_min_size(sample: PreparedSample, min_side: usize) -> Result<PreparedSample> {
    let (h, w) = sample.shape();
    if h >= min_side && w >= min_side {
        return Ok(sample);
    }
    let pad_h = min_side.saturating_sub(h);
    let pad_w = min_side.saturating_sub(w);
    let (top, left) = (pad_h / 2, pad_w / 2);
    let (bottom, right) = (pad_h - top, pad_w - left);
    let pad = |g: &Grid<u8>| reflect_pad(g, top, bottom, left, right);
    let inside = |r: usize, c: usize| r >= top && r < top + h && c >= left && c < left + w;
    let mask = |g: &Grid<bool>| {
        let padded = reflect_pad(g, top, bottom, left, right);
        Grid::from_fn(padded.height(), padded.width(), |r, c| inside(r, c) && *padded.get(r, c))
    };
    let x = BandStack::new(
        sample.x.pixel_size(),
        sample.x.iter().map(|(b, g)| (b, reflect_pad(g, top, bottom, left, right))),
    )?;
    Ok(PreparedSample {
        id: sample.id,
        x,
        y_d: LabelRaster::unchecked(pad(&sample.y_d.grid), sample.y_d.kind),
        y_lc: LabelRaster::unchecked(pad(&sample.y_lc.grid), sample.y_lc.kind),
        cloud: LabelRaster::unchecked(pad(&sample.cloud.grid), sample.cloud.kind),
        valid_d: mask(&sample.valid_d),
        valid_lc: mask(&sample.valid_lc),
        geo: sample.geo.translated(-(top as f64), -(left as f64)),
        offset: sample.offset,
    })
}

/// Near-equal partition of `side` into `ceil(side / max_side)` spans.
pub fn split_spans(side: usize, max_side: usize) -> Vec<(usize, usize)> {
    let k = side.div_ceil(max_side).max(1);
    let base = side / k;
    let extra = side % k;
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let span = (start, len);
            start += len;
            span
        })
        .collect()
}

/// Splits a sample whose sides exceed `max_side` into near-equal subsections.
pub fn split_large_aoi(sample: PreparedSample, max_side: usize) -> Result<Vec<PreparedSample>> {
    if max_side == 0 {
        return Err(Error::Argument("max_side must be positive".into()));
    }
    let (h, w) = sample.shape();
    if h <= max_side && w <= max_side {
        return Ok(vec![sample]);
    }
    let rows = split_spans(h, max_side);
    let cols = split_spans(w, max_side);
    let mut out = Vec::with_capacity(rows.len() * cols.len());
    for (i, &(top, hh)) in rows.iter().enumerate() {
        for (j, &(left, ww)) in cols.iter().enumerate() {
            let mut part = sample.crop(top, left, hh, ww)?;
            part.id = format!("{}_r{i}c{j}", sample.id);
            out.push(part);
        }
    }
    Ok(out)
}

/// Reassembles subsections produced by [`split_large_aoi`].
pub fn mosaic(parts: &[PreparedSample]) -> Result<PreparedSample> {
    let first = parts.first().ok_or_else(|| Error::Argument("nothing to mosaic".into()))?;
    let origin = parts.iter().map(|p| p.offset).min().unwrap();
    let h = parts.iter().map(|p| p.offset.0 + p.shape().0).max().unwrap() - origin.0;
    let w = parts.iter().map(|p| p.offset.1 + p.shape().1).max().unwrap() - origin.1;
    let mut bands: Vec<_> = first.x.iter().map(|(b, _)| (b, Grid::filled(h, w, 0.0))).collect();
    let mut y_d = Grid::filled(h, w, 0u8);
    let mut y_lc = Grid::filled(h, w, 0u8);
    let mut cloud = Grid::filled(h, w, 0u8);
    let mut valid_d = Grid::filled(h, w, false);
    let mut valid_lc = Grid::filled(h, w, false);
    for p in parts {
        let (t, l) = (p.offset.0 - origin.0, p.offset.1 - origin.1);
        for (b, g) in bands.iter_mut() {
            g.paste(p.x.band(*b)?, t, l)?;
        }
        y_d.paste(&p.y_d.grid, t, l)?;
        y_lc.paste(&p.y_lc.grid, t, l)?;
        cloud.paste(&p.cloud.grid, t, l)?;
        valid_d.paste(&p.valid_d, t, l)?;
        valid_lc.paste(&p.valid_lc, t, l)?;
    }
    let top_left = parts.iter().find(|p| p.offset == origin).unwrap_or(first);
    Ok(PreparedSample {
        id: first.id.split("_r").next().unwrap_or(&first.id).to_string(),
        x: BandStack::new(first.x.pixel_size(), bands)?,
        y_d: LabelRaster::unchecked(y_d, first.y_d.kind),
        y_lc: LabelRaster::unchecked(y_lc, first.y_lc.kind),
        cloud: LabelRaster::unchecked(cloud, first.cloud.kind),
        valid_d,
        valid_lc,
        geo: top_left.geo,
        offset: origin,
    })
}

/// Runs the full preparation pipeline on one raw scene.
pub fn prepare(scene: &Scene) -> Result<Vec<PreparedSample>> {
    let x = post_fire_stack(scene)?;
    let y_d = match (&scene.delineation, &scene.severity) {
        (Some(d), _) => d.clone(),
        (None, Some(s)) => binarize_severity(s)?,
        (None, None) => return Err(Error::IncompleteScene(Vec::new())),
    };
    let y_lc = remap_landcover(&scene.landcover);
    let (valid_d, valid_lc) = validity_masks(&y_d, &y_lc, &scene.cloud)?;
    let sample = PreparedSample {
        id: scene.id.clone(),
        x,
        y_d,
        y_lc,
        cloud: scene.cloud.clone(),
        valid_d,
        valid_lc,
        geo: scene.geo,
        offset: (0, 0),
    };
    let sample = ensure_min_size(sample, MIN_SIDE)?;
    split_large_aoi(sample, MAX_SIDE)
}

fn reflectance_stack<'a>(bands: impl ExactSizeIterator<Item = (&'a BandId, &'a Grid<u16>)>, h: usize, w: usize) -> Result<BandStack> {
    let mut out = Vec::with_capacity(bands.len());
    for (id, g) in bands {
        let up = upsample_nearest(g, id.upsample_factor())?.crop(0, 0, h, w)?;
        out.push((*id, up.map(|&dn| dn as f64 / REFLECTANCE_SCALE)));
    }
    BandStack::new(10.0, out)
}

/// Post-fire reflectance of a scene on its 10 m grid (no padding or splitting).
pub fn post_fire_stack(scene: &Scene) -> Result<BandStack> {
    scene.validate()?;
    reflectance_stack(scene.bands.iter(), scene.height, scene.width)
}

/// Pre-fire reflectance of a scene on the 10 m grid, if the scene has one.
pub fn pre_fire_stack(scene: &Scene) -> Result<Option<BandStack>> {
    if scene.pre_fire_bands.is_empty() {
        return Ok(None);
    }
    reflectance_stack(scene.pre_fire_bands.iter(), scene.height, scene.width).map(Some)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::raster::BandId;

    pub(crate) fn sample(h: usize, w: usize) -> PreparedSample {
        let x = BandStack::new(
            10.0,
            [BandId::B04, BandId::B08]
                .into_iter()
                .enumerate()
                .map(|(k, b)| (b, Grid::from_fn(h, w, |r, c| (k * 100_000 + r * 1000 + c) as f64))),
        )
        .unwrap();
        let y_d = LabelRaster::unchecked(Grid::from_fn(h, w, |r, c| ((r + c) % 3 == 0) as u8), LabelKind::Delineation);
        let y_lc = LabelRaster::unchecked(Grid::from_fn(h, w, |r, c| ((r * 7 + c) % 12) as u8), LabelKind::Landcover);
        let cloud = LabelRaster::unchecked(Grid::from_fn(h, w, |r, _| (r % 5 == 0) as u8), LabelKind::Cloud);
        let (valid_d, valid_lc) = validity_masks(&y_d, &y_lc, &cloud).unwrap();
        PreparedSample {
            id: "s".into(),
            x,
            y_d,
            y_lc,
            cloud,
            valid_d,
            valid_lc,
            geo: GeoRef::new(0.0, 0.0, 10.0, -10.0, 32633).unwrap(),
            offset: (0, 0),
        }
    }

    #[test]
    fn upsample_examples() {
        let g = Grid::new(2, 2, vec![1, 2, 3, 4]).unwrap();
        assert_eq!(upsample_nearest(&g, 1).unwrap(), g);
        let up = upsample_nearest(&g, 2).unwrap();
        assert_eq!(up.values(), &[1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4]);
        assert!(matches!(upsample_nearest(&g, 0), Err(Error::Argument(_))));

        let src = Grid::from_fn(7, 5, |r, c| r * 5 + c);
        let big = upsample_nearest(&src, 6).unwrap();
        assert_eq!(big.shape(), (42, 30));
        for r in 0..42 {
            for c in 0..30 {
                assert_eq!(big.get(r, c), src.get(r / 6, c / 6));
            }
        }
    }

    #[test]
    fn severity_binarization() {
        let s = LabelRaster::unchecked(Grid::new(1, 4, vec![0, 1, 3, 255]).unwrap(), LabelKind::Severity);
        assert_eq!(binarize_severity(&s).unwrap().grid.values(), &[0, 1, 1, 255]);
        let z = LabelRaster::unchecked(Grid::filled(3, 3, 0), LabelKind::Severity);
        assert!(binarize_severity(&z).unwrap().grid.values().iter().all(|&v| v == 0));
        let bad = LabelRaster::unchecked(Grid::new(1, 2, vec![0, 7]).unwrap(), LabelKind::Severity);
        assert!(matches!(binarize_severity(&bad), Err(Error::LabelDomain(_))));
    }

    #[test]
    fn landcover_table() {
        assert_eq!(remap_code(10), 0);
        assert_eq!(remap_code(100), 10);
        assert_eq!(remap_code(95), 9);
        assert_eq!(remap_code(42), 255);
        assert_eq!(remap_code(0), 255);
        let all: Vec<u8> = WORLDCOVER_CODES.iter().map(|&c| remap_code(c)).collect();
        assert_eq!(all, (0..11).collect::<Vec<u8>>());
    }

    #[test]
    fn mirror_indices() {
        let got: Vec<usize> = (-4..8).map(|p| mirror_index(p, 4)).collect();
        assert_eq!(got, [2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
        assert_eq!(mirror_index(-3, 1), 0);
    }

    #[test]
    fn min_size_padding() {
        let s = sample(512, 512);
        assert_eq!(ensure_min_size(s.clone(), 512).unwrap(), s);

        let s = sample(400, 512);
        let p = ensure_min_size(s.clone(), 512).unwrap();
        assert_eq!(p.shape(), (512, 512));
        for r in 0..512 {
            let interior = (56..456).contains(&r);
            let src = mirror_index(r as isize - 56, 400);
            for c in [0, 100, 511] {
                assert_eq!(p.x.band(BandId::B08).unwrap().get(r, c), s.x.band(BandId::B08).unwrap().get(src, c));
                assert_eq!(p.y_lc.grid.get(r, c), s.y_lc.grid.get(src, c));
                if !interior {
                    assert!(!p.valid_d.get(r, c) && !p.valid_lc.get(r, c));
                } else {
                    assert_eq!(p.valid_d.get(r, c), s.valid_d.get(src, c));
                }
            }
        }
    }

    #[test]
    fn split_examples() {
        assert_eq!(split_spans(2500, 2500), [(0, 2500)]);
        assert_eq!(split_spans(3000, 2500), [(0, 1500), (1500, 1500)]);
        assert_eq!(split_spans(5100, 2500), [(0, 1700), (1700, 1700), (3400, 1700)]);
        assert_eq!(split_spans(600, 2500), [(0, 600)]);
        assert_eq!(split_spans(5001, 2500), [(0, 1667), (1667, 1667), (3334, 1667)]);

        let s = sample(30, 25);
        let parts = split_large_aoi(s.clone(), 12).unwrap();
        assert_eq!(parts.len(), 3 * 3);
        assert!(parts.iter().all(|p| p.shape().0 <= 12 && p.shape().1 <= 12));
        assert_eq!(mosaic(&parts).unwrap(), s);
        assert_eq!(split_large_aoi(s.clone(), 30).unwrap(), vec![s]);
    }

    #[test]
    fn masks_follow_rules() {
        let s = sample(20, 20);
        for i in 0..400 {
            let cloud = s.cloud.grid.values()[i];
            assert_eq!(s.valid_d.values()[i], cloud == 0);
            if s.valid_lc.values()[i] {
                assert_eq!(cloud, 0);
                assert_ne!(s.y_d.grid.values()[i], 1);
                assert_ne!(s.y_lc.grid.values()[i], IGNORE);
            }
        }
    }
}
