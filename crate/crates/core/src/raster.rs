//! Grid containers, band and label types shared by every stage.
//!
//! All grids are stored row-major: the value at row `r`, column `c` lives at
//! index `r * width + c`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label code excluded from losses and metrics.
pub const IGNORE: u8 = 255;

/// Scale from Sentinel-2 L2A digital numbers to reflectance.
pub const REFLECTANCE_SCALE: f64 = 10_000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    values: Vec<T>,
}

impl<T> Grid<T> {
    pub fn new(height: usize, width: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} grid",
                values.len()
            )));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> &T {
        &self.values[row * self.width + col]
    }

    #[inline]
    pub fn get_mut(&mut self, row: usize, col: usize) -> &mut T {
        &mut self.values[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape<U>(&self, other: &Grid<U>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    /// Copies the `h`x`w` window whose top-left corner is (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::Bounds(format!(
                "window {h}x{w} at ({top},{left}) in a {}x{} grid",
                self.height, self.width
            )));
        }
        let mut values = Vec::with_capacity(h * w);
        for r in top..top + h {
            let start = r * self.width + left;
            values.extend_from_slice(&self.values[start..start + w]);
        }
        Ok(Self {
            height: h,
            width: w,
            values,
        })
    }

    /// Writes `src` into this grid with its top-left corner at (`top`, `left`).
    pub fn paste(&mut self, src: &Grid<T>, top: usize, left: usize) -> Result<()> {
        if top + src.height > self.height || left + src.width > self.width {
            return Err(Error::Bounds(format!(
                "pasting {}x{} at ({top},{left}) into {}x{}",
                src.height, src.width, self.height, self.width
            )));
        }
        for r in 0..src.height {
            let dst = (top + r) * self.width + left;
            self.values[dst..dst + src.width].clone_from_slice(src.row(r));
        }
        Ok(())
    }
}

/// Elementwise combination of two equally shaped grids.
pub fn map_binary<A, B, C>(a: &Grid<A>, b: &Grid<B>, op: impl Fn(&A, &B) -> C) -> Result<Grid<C>> {
    a.check_same_shape(b, "map_binary")?;
    Ok(Grid {
        height: a.height,
        width: a.width,
        values: a.values.iter().zip(&b.values).map(|(x, y)| op(x, y)).collect(),
    })
}

/// Multi-channel float planes laid out channel-major (`c`, then row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct Planes {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planes {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_grids(grids: &[&Grid<f64>]) -> Result<Self> {
        let first = grids
            .first()
            .ok_or_else(|| Error::Argument("no planes given".into()))?;
        let (height, width) = first.shape();
        let mut data = Vec::with_capacity(grids.len() * height * width);
        for g in grids {
            first.check_same_shape(g, "stacking planes")?;
            data.extend_from_slice(g.values());
        }
        Ok(Self {
            channels: grids.len(),
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn to_grid(&self, c: usize) -> Grid<f64> {
        Grid {
            height: self.height,
            width: self.width,
            values: self.plane(c).to_vec(),
        }
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        if top + h > self.height || left + w > self.width {
            return Err(Error::Bounds(format!(
                "window {h}x{w} at ({top},{left}) in {}x{} planes",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for r in top..top + h {
                let s = r * self.width + left;
                data.extend_from_slice(&plane[s..s + w]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height: h,
            width: w,
            data,
        })
    }
}

/// Sentinel-2 L2A bands (B10 is not distributed at L2A).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BandId {
    B01,
    B02,
    B03,
    B04,
    B05,
    B06,
    B07,
    B08,
    B8A,
    B09,
    B11,
    B12,
}

impl BandId {
    pub const ALL: [BandId; 12] = [
        BandId::B01,
        BandId::B02,
        BandId::B03,
        BandId::B04,
        BandId::B05,
        BandId::B06,
        BandId::B07,
        BandId::B08,
        BandId::B8A,
        BandId::B09,
        BandId::B11,
        BandId::B12,
    ];

    /// Native ground sampling distance in meters.
    pub fn native_resolution(self) -> u32 {
        use BandId::*;
        match self {
            B02 | B03 | B04 | B08 => 10,
            B05 | B06 | B07 | B8A | B11 | B12 => 20,
            B01 | B09 => 60,
        }
    }

    /// Nearest-neighbour factor from the native grid to the 10 m grid.
    pub fn upsample_factor(self) -> usize {
        (self.native_resolution() / 10) as usize
    }

    pub fn name(self) -> &'static str {
        use BandId::*;
        match self {
            B01 => "B01",
            B02 => "B02",
            B03 => "B03",
            B04 => "B04",
            B05 => "B05",
            B06 => "B06",
            B07 => "B07",
            B08 => "B08",
            B8A => "B8A",
            B09 => "B09",
            B11 => "B11",
            B12 => "B12",
        }
    }

    pub fn index(self) -> usize {
        BandId::ALL.iter().position(|&b| b == self).unwrap()
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BandId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        BandId::ALL
            .iter()
            .copied()
            .find(|b| b.name() == upper)
            .ok_or_else(|| Error::Argument(format!("unknown band {s:?}")))
    }
}

/// Parses a comma separated band list such as `B02,B03,B8A`.
pub fn parse_band_list(s: &str) -> Result<Vec<BandId>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(BandId::ALL.to_vec());
    }
    let bands = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(BandId::from_str)
        .collect::<Result<Vec<_>>>()?;
    if bands.is_empty() {
        return Err(Error::Argument("empty band list".into()));
    }
    Ok(bands)
}

/// Reflectance bands sharing one pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BandStack {
    bands: BTreeMap<BandId, Grid<f64>>,
    height: usize,
    width: usize,
    pixel_size: f64,
}

impl BandStack {
    pub fn new(pixel_size: f64, bands: impl IntoIterator<Item = (BandId, Grid<f64>)>) -> Result<Self> {
        if !(pixel_size > 0.0) {
            return Err(Error::Argument(format!("pixel size must be > 0, got {pixel_size}")));
        }
        let bands: BTreeMap<_, _> = bands.into_iter().collect();
        let (height, width) = bands
            .values()
            .next()
            .map(Grid::shape)
            .ok_or_else(|| Error::Argument("band stack needs at least one band".into()))?;
        for (id, g) in &bands {
            if g.shape() != (height, width) {
                return Err(Error::Dimension(format!(
                    "band {id} is {}x{}, expected {height}x{width}",
                    g.height(),
                    g.width()
                )));
            }
        }
        Ok(Self {
            bands,
            height,
            width,
            pixel_size,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn band(&self, id: BandId) -> Result<&Grid<f64>> {
        self.bands
            .get(&id)
            .ok_or_else(|| Error::IncompleteScene(vec![id]))
    }

    /// Looks up several bands, reporting every missing one at once.
    pub fn bands_of<const N: usize>(&self, ids: [BandId; N]) -> Result<[&Grid<f64>; N]> {
        let missing: Vec<BandId> = ids.iter().copied().filter(|b| !self.bands.contains_key(b)).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteScene(missing));
        }
        Ok(ids.map(|b| &self.bands[&b]))
    }

    pub fn ids(&self) -> impl Iterator<Item = BandId> + '_ {
        self.bands.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (BandId, &Grid<f64>)> {
        self.bands.iter().map(|(k, v)| (*k, v))
    }

    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self> {
        let bands = self
            .bands
            .iter()
            .map(|(id, g)| Ok((*id, g.crop(top, left, h, w)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self {
            bands,
            height: h,
            width: w,
            pixel_size: self.pixel_size,
        })
    }

    /// Stacks the selected bands, in the given order, into channel planes.
    pub fn to_planes(&self, order: &[BandId]) -> Result<Planes> {
        let missing: Vec<BandId> = order.iter().copied().filter(|b| !self.bands.contains_key(b)).collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteScene(missing));
        }
        let grids: Vec<&Grid<f64>> = order.iter().map(|b| &self.bands[b]).collect();
        Planes::from_grids(&grids)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Delineation,
    Landcover,
    Severity,
    Cloud,
}

impl LabelKind {
    fn allows(self, v: u8) -> bool {
        match self {
            LabelKind::Delineation => v <= 1 || v == IGNORE,
            LabelKind::Cloud => v <= 1,
            LabelKind::Landcover => v <= 10 || v == IGNORE,
            LabelKind::Severity => v <= 3 || v == IGNORE,
        }
    }
}

/// A single-band uint8 label map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRaster {
    pub grid: Grid<u8>,
    pub kind: LabelKind,
}

impl LabelRaster {
    /// Builds a label raster after checking every code against `kind`.
    pub fn new(grid: Grid<u8>, kind: LabelKind) -> Result<Self> {
        if let Some(bad) = grid.values().iter().find(|&&v| !kind.allows(v)) {
            return Err(Error::LabelDomain(format!("code {bad} is not a valid {kind:?} label")));
        }
        Ok(Self { grid, kind })
    }

    /// Wraps a grid without checking its codes (raw land cover, predictions).
    pub fn unchecked(grid: Grid<u8>, kind: LabelKind) -> Self {
        Self { grid, kind }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }
}

/// Affine placement of a north-up raster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoRef {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
    pub crs_code: u32,
}

impl GeoRef {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size_x: f64, pixel_size_y: f64, crs_code: u32) -> Result<Self> {
        if !(pixel_size_x > 0.0) || pixel_size_y == 0.0 || !pixel_size_y.is_finite() {
            return Err(Error::Argument(format!(
                "invalid pixel size ({pixel_size_x}, {pixel_size_y})"
            )));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
            crs_code,
        })
    }

    /// Same placement at a coarser or finer pixel size.
    pub fn rescaled(&self, factor: f64) -> Self {
        Self {
            pixel_size_x: self.pixel_size_x * factor,
            pixel_size_y: self.pixel_size_y * factor,
            ..*self
        }
    }

    /// Placement of the sub-window starting at (`row`, `col`).
    pub fn offset(&self, row: usize, col: usize) -> Self {
        self.translated(row as f64, col as f64)
    }

    /// Origin moved by a (possibly negative) number of pixels.
    pub fn translated(&self, rows: f64, cols: f64) -> Self {
        Self {
            origin_x: self.origin_x + cols * self.pixel_size_x,
            origin_y: self.origin_y + rows * self.pixel_size_y,
            ..*self
        }
    }

    /// Bounding rectangle `[min_x, min_y, max_x, max_y]` of a `height`x`width` raster.
    pub fn bounds(&self, height: usize, width: usize) -> [f64; 4] {
        let x1 = self.origin_x + width as f64 * self.pixel_size_x;
        let y1 = self.origin_y + height as f64 * self.pixel_size_y;
        [
            self.origin_x.min(x1),
            self.origin_y.min(y1),
            self.origin_x.max(x1),
            self.origin_y.max(y1),
        ]
    }
}
