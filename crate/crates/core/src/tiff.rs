//! Minimal GeoTIFF reader and writer.
//!
//! Supported subset: little-endian classic TIFF, a single IFD, uncompressed
//! strips, chunky (contiguous) planar configuration, and samples that are
//! uint8 (labels), uint16 (reflectance digital numbers) or float32.
//! Georeferencing is carried by ModelPixelScale (33550), ModelTiepoint
//! (33922) and the CRS code inside GeoKeyDirectory (34735).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::{GeoRef, Grid};

const TAG_IMAGE_WIDTH: u16 = 256;
const TAG_IMAGE_LENGTH: u16 = 257;
const TAG_BITS_PER_SAMPLE: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_PHOTOMETRIC: u16 = 262;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES_PER_PIXEL: u16 = 277;
const TAG_ROWS_PER_STRIP: u16 = 278;
const TAG_STRIP_BYTE_COUNTS: u16 = 279;
const TAG_PLANAR_CONFIG: u16 = 284;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_MODEL_PIXEL_SCALE: u16 = 33550;
const TAG_MODEL_TIEPOINT: u16 = 33922;
const TAG_GEO_KEY_DIRECTORY: u16 = 34735;

const TYPE_BYTE: u16 = 1;
const TYPE_ASCII: u16 = 2;
const TYPE_SHORT: u16 = 3;
const TYPE_LONG: u16 = 4;
const TYPE_DOUBLE: u16 = 12;

const KEY_MODEL_TYPE: u16 = 1024;
const KEY_RASTER_TYPE: u16 = 1025;
const KEY_GEOGRAPHIC_TYPE: u16 = 2048;
const KEY_PROJECTED_CS_TYPE: u16 = 3072;

/// Upper bound on the size of one written strip.
pub const MAX_STRIP_BYTES: usize = 64 * 1024;

/// Pixel samples, interleaved per pixel when `samples_per_pixel > 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    U16(Vec<u16>),
    F32(Vec<f32>),
}

impl Samples {
    fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::U16(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn bits_per_sample(&self) -> u16 {
        match self {
            Samples::U8(_) => 8,
            Samples::U16(_) => 16,
            Samples::F32(_) => 32,
        }
    }

    pub fn sample_format(&self) -> u16 {
        match self {
            Samples::U8(_) | Samples::U16(_) => 1,
            Samples::F32(_) => 3,
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            Samples::U8(v) => out.extend_from_slice(v),
            Samples::U16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Samples::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiffImage {
    pub width: u32,
    pub height: u32,
    pub samples_per_pixel: u16,
    pub samples: Samples,
    pub geo: Option<GeoRef>,
}

impl TiffImage {
    pub fn new(width: u32, height: u32, samples_per_pixel: u16, samples: Samples, geo: Option<GeoRef>) -> Result<Self> {
        let img = Self {
            width,
            height,
            samples_per_pixel,
            samples,
            geo,
        };
        img.validate()?;
        Ok(img)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.samples_per_pixel == 0 {
            return Err(Error::Dimension(format!(
                "empty image {}x{}x{}",
                self.height, self.width, self.samples_per_pixel
            )));
        }
        let expected = self.width as usize * self.height as usize * self.samples_per_pixel as usize;
        if self.samples.len() != expected {
            return Err(Error::Dimension(format!(
                "{} samples for a {}x{}x{} image",
                self.samples.len(),
                self.height,
                self.width,
                self.samples_per_pixel
            )));
        }
        Ok(())
    }

    pub fn bits_per_sample(&self) -> u16 {
        self.samples.bits_per_sample()
    }

    pub fn sample_format(&self) -> u16 {
        self.samples.sample_format()
    }

    fn row_bytes(&self) -> usize {
        self.width as usize * self.samples_per_pixel as usize * self.bits_per_sample() as usize / 8
    }

    /// Rows per strip such that every strip stays within [`MAX_STRIP_BYTES`].
    pub fn rows_per_strip(&self) -> u32 {
        ((MAX_STRIP_BYTES / self.row_bytes()).max(1) as u32).min(self.height)
    }

    pub fn from_u8(grid: &Grid<u8>, geo: Option<GeoRef>) -> Self {
        Self {
            width: grid.width() as u32,
            height: grid.height() as u32,
            samples_per_pixel: 1,
            samples: Samples::U8(grid.values().to_vec()),
            geo,
        }
    }

    pub fn from_u16(grid: &Grid<u16>, geo: Option<GeoRef>) -> Self {
        Self {
            width: grid.width() as u32,
            height: grid.height() as u32,
            samples_per_pixel: 1,
            samples: Samples::U16(grid.values().to_vec()),
            geo,
        }
    }

    /// Interleaves equally shaped float bands into one multi-sample image.
    pub fn from_f32_bands(bands: &[Grid<f32>], geo: Option<GeoRef>) -> Result<Self> {
        let first = bands
            .first()
            .ok_or_else(|| Error::Argument("no bands to write".into()))?;
        for b in bands {
            first.check_same_shape(b, "float tiff bands")?;
        }
        let n = first.len();
        let mut out = Vec::with_capacity(n * bands.len());
        for i in 0..n {
            for b in bands {
                out.push(b.values()[i]);
            }
        }
        Self::new(
            first.width() as u32,
            first.height() as u32,
            bands.len() as u16,
            Samples::F32(out),
            geo,
        )
    }

    fn extract<T: Copy>(&self, values: &[T], sample: usize) -> Result<Grid<T>> {
        let spp = self.samples_per_pixel as usize;
        if sample >= spp {
            return Err(Error::Argument(format!("sample {sample} of {spp}")));
        }
        let band = values.iter().skip(sample).step_by(spp).copied().collect();
        Grid::new(self.height as usize, self.width as usize, band)
    }

    pub fn band_u8(&self, sample: usize) -> Result<Grid<u8>> {
        match &self.samples {
            Samples::U8(v) => self.extract(v, sample),
            _ => Err(Error::Shape(format!("expected uint8 samples, found {} bit", self.bits_per_sample()))),
        }
    }

    pub fn band_u16(&self, sample: usize) -> Result<Grid<u16>> {
        match &self.samples {
            Samples::U16(v) => self.extract(v, sample),
            _ => Err(Error::Shape(format!("expected uint16 samples, found {} bit", self.bits_per_sample()))),
        }
    }

    pub fn band_f32(&self, sample: usize) -> Result<Grid<f32>> {
        match &self.samples {
            Samples::F32(v) => self.extract(v, sample),
            _ => Err(Error::Shape("expected float32 samples".into())),
        }
    }
}

enum Value {
    Shorts(Vec<u16>),
    Longs(Vec<u32>),
    Doubles(Vec<f64>),
}

impl Value {
    fn type_code(&self) -> u16 {
        match self {
            Value::Shorts(_) => TYPE_SHORT,
            Value::Longs(_) => TYPE_LONG,
            Value::Doubles(_) => TYPE_DOUBLE,
        }
    }

    fn count(&self) -> u32 {
        match self {
            Value::Shorts(v) => v.len() as u32,
            Value::Longs(v) => v.len() as u32,
            Value::Doubles(v) => v.len() as u32,
        }
    }

    fn bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Value::Shorts(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Value::Longs(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Value::Doubles(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }
}

fn geo_keys(geo: &GeoRef) -> Vec<u16> {
    let geographic = (4000..5000).contains(&geo.crs_code);
    let (model, cs_key) = if geographic {
        (2, KEY_GEOGRAPHIC_TYPE)
    } else {
        (1, KEY_PROJECTED_CS_TYPE)
    };
    let code = u16::try_from(geo.crs_code).unwrap_or(32767);
    vec![
        1, 1, 0, 3, //
        KEY_MODEL_TYPE, 0, 1, model, //
        KEY_RASTER_TYPE, 0, 1, 1, //
        cs_key, 0, 1, code,
    ]
}

/// Serializes `image` into TIFF bytes.
pub fn encode_tiff(image: &TiffImage) -> Result<Vec<u8>> {
    image.validate()?;
    let spp = image.samples_per_pixel as usize;
    let rows_per_strip = image.rows_per_strip();
    let n_strips = image.height.div_ceil(rows_per_strip) as usize;
    let row_bytes = image.row_bytes();
    let strip_counts: Vec<u32> = (0..n_strips)
        .map(|i| {
            let first = i as u32 * rows_per_strip;
            let rows = rows_per_strip.min(image.height - first);
            (rows as usize * row_bytes) as u32
        })
        .collect();

    let mut entries: Vec<(u16, Value)> = vec![
        (TAG_IMAGE_WIDTH, Value::Longs(vec![image.width])),
        (TAG_IMAGE_LENGTH, Value::Longs(vec![image.height])),
        (TAG_BITS_PER_SAMPLE, Value::Shorts(vec![image.bits_per_sample(); spp])),
        (TAG_COMPRESSION, Value::Shorts(vec![1])),
        (TAG_PHOTOMETRIC, Value::Shorts(vec![1])),
        // Placeholder, patched once the data layout is known.
        (TAG_STRIP_OFFSETS, Value::Longs(vec![0; n_strips])),
        (TAG_SAMPLES_PER_PIXEL, Value::Shorts(vec![image.samples_per_pixel])),
        (TAG_ROWS_PER_STRIP, Value::Longs(vec![rows_per_strip])),
        (TAG_STRIP_BYTE_COUNTS, Value::Longs(strip_counts.clone())),
        (TAG_SAMPLE_FORMAT, Value::Shorts(vec![image.sample_format(); spp])),
    ];
    if let Some(geo) = &image.geo {
        entries.push((
            TAG_MODEL_PIXEL_SCALE,
            Value::Doubles(vec![geo.pixel_size_x, -geo.pixel_size_y, 0.0]),
        ));
        entries.push((
            TAG_MODEL_TIEPOINT,
            Value::Doubles(vec![0.0, 0.0, 0.0, geo.origin_x, geo.origin_y, 0.0]),
        ));
        entries.push((TAG_GEO_KEY_DIRECTORY, Value::Shorts(geo_keys(geo))));
    }

    let ifd_start = 8usize;
    let ifd_len = 2 + 12 * entries.len() + 4;
    // Out-of-line values follow the IFD; strip data comes last so that any
    // truncation of the file cuts into declared strip bytes.
    let mut cursor = ifd_start + ifd_len;
    let mut out_of_line = Vec::with_capacity(entries.len());
    for (_, v) in &entries {
        let len = v.bytes().len();
        if len > 4 {
            cursor += cursor % 2;
            out_of_line.push(Some(cursor));
            cursor += len;
        } else {
            out_of_line.push(None);
        }
    }
    cursor += cursor % 2;
    let data_start = cursor;
    let mut offsets = Vec::with_capacity(n_strips);
    let mut acc = data_start;
    for &c in &strip_counts {
        offsets.push(u32::try_from(acc).map_err(|_| Error::Argument("image too large for classic TIFF".into()))?);
        acc += c as usize;
    }
    if let Some((_, v)) = entries.iter_mut().find(|(t, _)| *t == TAG_STRIP_OFFSETS) {
        *v = Value::Longs(offsets);
    }

    let mut out = Vec::with_capacity(acc);
    out.extend_from_slice(b"II");
    out.extend_from_slice(&42u16.to_le_bytes());
    out.extend_from_slice(&(ifd_start as u32).to_le_bytes());
    out.extend_from_slice(&(entries.len() as u16).to_le_bytes());
    for ((tag, v), loc) in entries.iter().zip(&out_of_line) {
        out.extend_from_slice(&tag.to_le_bytes());
        out.extend_from_slice(&v.type_code().to_le_bytes());
        out.extend_from_slice(&v.count().to_le_bytes());
        match loc {
            Some(off) => out.extend_from_slice(&(*off as u32).to_le_bytes()),
            None => {
                let mut inline = v.bytes();
                inline.resize(4, 0);
                out.extend_from_slice(&inline);
            }
        }
    }
    out.extend_from_slice(&0u32.to_le_bytes());
    for ((_, v), loc) in entries.iter().zip(&out_of_line) {
        if let Some(off) = loc {
            out.resize(*off, 0);
            out.extend_from_slice(&v.bytes());
        }
    }
    out.resize(data_start, 0);
    image.samples.write_le(&mut out);
    debug_assert_eq!(out.len(), acc);
    Ok(out)
}

pub fn write_tiff(image: &TiffImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tiff(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_tiff(path: impl AsRef<Path>) -> Result<TiffImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tiff(&bytes).map_err(|e| match e {
        Error::CorruptFile(msg) => Error::CorruptFile(format!("{}: {msg}", path.display())),
        other => other,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn slice(&self, offset: usize, len: usize) -> Result<&'a [u8]> {
        offset
            .checked_add(len)
            .filter(|&end| end <= self.buf.len())
            .map(|end| &self.buf[offset..end])
            .ok_or_else(|| {
                Error::CorruptFile(format!(
                    "need bytes {offset}..{} but file has {}",
                    offset.saturating_add(len),
                    self.buf.len()
                ))
            })
    }

    fn u16(&self, offset: usize) -> Result<u16> {
        let b = self.slice(offset, 2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&self, offset: usize) -> Result<u32> {
        let b = self.slice(offset, 4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Entry {
    tag: u16,
    typ: u16,
    count: u32,
    /// Absolute offset of the first value byte.
    at: usize,
}

fn type_size(typ: u16) -> Option<usize> {
    match typ {
        TYPE_BYTE | TYPE_ASCII | 6 | 7 => Some(1),
        TYPE_SHORT | 8 => Some(2),
        TYPE_LONG | 9 | 11 => Some(4),
        5 | 10 | TYPE_DOUBLE => Some(8),
        _ => None,
    }
}

impl Entry {
    fn integers(&self, r: &Reader) -> Result<Vec<u64>> {
        let n = self.count as usize;
        match self.typ {
            TYPE_BYTE => Ok(r.slice(self.at, n)?.iter().map(|&b| b as u64).collect()),
            TYPE_SHORT => (0..n).map(|i| r.u16(self.at + 2 * i).map(u64::from)).collect(),
            TYPE_LONG => (0..n).map(|i| r.u32(self.at + 4 * i).map(u64::from)).collect(),
            t => Err(Error::CorruptFile(format!(
                "tag {} has non-integer type {t}",
                self.tag
            ))),
        }
    }

    fn doubles(&self, r: &Reader) -> Result<Vec<f64>> {
        if self.typ != TYPE_DOUBLE {
            return Err(Error::CorruptFile(format!("tag {} is not DOUBLE", self.tag)));
        }
        let raw = r.slice(self.at, 8 * self.count as usize)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn single(&self, r: &Reader) -> Result<u64> {
        self.integers(r)?
            .first()
            .copied()
            .ok_or_else(|| Error::CorruptFile(format!("tag {} is empty", self.tag)))
    }
}

/// Parses TIFF bytes. Never reads outside `bytes`; malformed input is an error.
pub fn decode_tiff(bytes: &[u8]) -> Result<TiffImage> {
    if bytes.len() < 8 {
        return Err(Error::CorruptFile(format!("{} bytes is too short for a TIFF header", bytes.len())));
    }
    match &bytes[..4] {
        [0x49, 0x49, 0x2A, 0x00] => {}
        [0x4D, 0x4D, 0x00, 0x2A] => return Err(Error::UnsupportedVariant("big-endian TIFF".into())),
        [0x49, 0x49, 0x2B, 0x00] | [0x4D, 0x4D, 0x00, 0x2B] => {
            return Err(Error::UnsupportedVariant("BigTIFF".into()))
        }
        _ => return Err(Error::CorruptFile("not a TIFF file".into())),
    }
    let r = Reader { buf: bytes };
    let ifd = r.u32(4)? as usize;
    let n = r.u16(ifd)? as usize;
    let mut entries = Vec::with_capacity(n);
    for i in 0..n {
        let base = ifd + 2 + 12 * i;
        let tag = r.u16(base)?;
        let typ = r.u16(base + 2)?;
        let count = r.u32(base + 4)?;
        let Some(size) = type_size(typ) else {
            continue;
        };
        let total = size
            .checked_mul(count as usize)
            .ok_or_else(|| Error::CorruptFile(format!("tag {tag} count overflows")))?;
        let at = if total <= 4 { base + 8 } else { r.u32(base + 8)? as usize };
        r.slice(at, total)?;
        entries.push(Entry { tag, typ, count, at });
    }
    let find = |tag: u16| entries.iter().find(|e| e.tag == tag);
    let required = |tag: u16| find(tag).ok_or_else(|| Error::CorruptFile(format!("missing required tag {tag}")));

    if find(TAG_TILE_WIDTH).is_some() {
        return Err(Error::UnsupportedVariant("tiled TIFF".into()));
    }
    let compression = find(TAG_COMPRESSION).map(|e| e.single(&r)).transpose()?.unwrap_or(1);
    if compression != 1 {
        return Err(Error::UnsupportedCompression(compression as u32));
    }
    let width = required(TAG_IMAGE_WIDTH)?.single(&r)?;
    let height = required(TAG_IMAGE_LENGTH)?.single(&r)?;
    let spp = find(TAG_SAMPLES_PER_PIXEL).map(|e| e.single(&r)).transpose()?.unwrap_or(1);
    if width == 0 || height == 0 || spp == 0 || spp > u16::MAX as u64 {
        return Err(Error::CorruptFile(format!("bad dimensions {height}x{width}x{spp}")));
    }
    let planar = find(TAG_PLANAR_CONFIG).map(|e| e.single(&r)).transpose()?.unwrap_or(1);
    if planar != 1 && spp > 1 {
        return Err(Error::UnsupportedVariant(format!("planar configuration {planar}")));
    }
    let bits = match find(TAG_BITS_PER_SAMPLE) {
        Some(e) => e.integers(&r)?,
        None => vec![1],
    };
    let formats = match find(TAG_SAMPLE_FORMAT) {
        Some(e) => e.integers(&r)?,
        None => vec![1],
    };
    let bits_per_sample = bits[0];
    let format = formats[0];
    if bits.iter().any(|&b| b != bits_per_sample) || formats.iter().any(|&f| f != format) {
        return Err(Error::UnsupportedVariant("mixed sample types".into()));
    }
    let sample_bytes = match (bits_per_sample, format) {
        (8, 1) => 1,
        (16, 1) => 2,
        (32, 3) => 4,
        (b, f) => {
            return Err(Error::UnsupportedVariant(format!(
                "{b}-bit samples with sample format {f}"
            )))
        }
    };
    let rows_per_strip = find(TAG_ROWS_PER_STRIP)
        .map(|e| e.single(&r))
        .transpose()?
        .unwrap_or(height)
        .clamp(1, height);
    let offsets = required(TAG_STRIP_OFFSETS)?.integers(&r)?;
    let counts = required(TAG_STRIP_BYTE_COUNTS)?.integers(&r)?;
    let n_strips = height.div_ceil(rows_per_strip) as usize;
    if offsets.len() != n_strips || counts.len() != n_strips {
        return Err(Error::CorruptFile(format!(
            "{} strip offsets and {} byte counts for {n_strips} strips",
            offsets.len(),
            counts.len()
        )));
    }
    let (width, height, spp) = (width as usize, height as usize, spp as usize);
    let row_bytes = width
        .checked_mul(spp)
        .and_then(|v| v.checked_mul(sample_bytes))
        .ok_or_else(|| Error::CorruptFile("row size overflows".into()))?;
    let expected_total = row_bytes
        .checked_mul(height)
        .ok_or_else(|| Error::CorruptFile("image size overflows".into()))?;
    let declared: u64 = counts.iter().sum();
    if declared != expected_total as u64 {
        return Err(Error::CorruptFile(format!(
            "strip byte counts sum to {declared}, expected {expected_total}"
        )));
    }
    if expected_total > r.buf.len() {
        return Err(Error::CorruptFile(format!(
            "image needs {expected_total} data bytes but the file has {}",
            r.buf.len()
        )));
    }
    let mut data = Vec::with_capacity(expected_total);
    for (i, (&off, &cnt)) in offsets.iter().zip(&counts).enumerate() {
        let rows = (rows_per_strip as usize).min(height - i * rows_per_strip as usize);
        if cnt as usize != rows * row_bytes {
            return Err(Error::CorruptFile(format!(
                "strip {i} declares {cnt} bytes, expected {}",
                rows * row_bytes
            )));
        }
        data.extend_from_slice(r.slice(off as usize, cnt as usize)?);
    }
    let samples = match sample_bytes {
        1 => Samples::U8(data),
        2 => Samples::U16(
            data.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        _ => Samples::F32(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    let geo = read_geo(&r, find(TAG_MODEL_PIXEL_SCALE), find(TAG_MODEL_TIEPOINT), find(TAG_GEO_KEY_DIRECTORY))?;
    Ok(TiffImage {
        width: width as u32,
        height: height as u32,
        samples_per_pixel: spp as u16,
        samples,
        geo,
    })
}

fn read_geo(r: &Reader, scale: Option<&Entry>, tie: Option<&Entry>, keys: Option<&Entry>) -> Result<Option<GeoRef>> {
    let (Some(scale), Some(tie)) = (scale, tie) else {
        return Ok(None);
    };
    let s = scale.doubles(r)?;
    let t = tie.doubles(r)?;
    if s.len() < 2 || t.len() < 6 {
        return Err(Error::CorruptFile("short georeferencing tags".into()));
    }
    let mut crs = 0u32;
    if let Some(k) = keys {
        let k = k.integers(r)?;
        let n = k.get(3).copied().unwrap_or(0) as usize;
        for key in k.get(4..).unwrap_or(&[]).chunks_exact(4).take(n) {
            if (key[0] == KEY_PROJECTED_CS_TYPE as u64 || key[0] == KEY_GEOGRAPHIC_TYPE as u64) && key[1] == 0 {
                crs = key[3] as u32;
            }
        }
    }
    // Tiepoint maps raster (I, J) to model (X, Y); shift it back to pixel (0, 0).
    let origin_x = t[3] - t[0] * s[0];
    let origin_y = t[4] + t[1] * s[1];
    GeoRef::new(origin_x, origin_y, s[0], -s[1], crs)
        .map(Some)
        .map_err(|e| Error::CorruptFile(format!("georeferencing: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geo() -> GeoRef {
        GeoRef::new(500_000.0, 4_200_000.0, 10.0, -10.0, 32633).unwrap()
    }

    #[test]
    fn single_pixel_strip_bytes() {
        let img = TiffImage::from_u16(&Grid::new(1, 1, vec![7u16]).unwrap(), None);
        let bytes = encode_tiff(&img).unwrap();
        assert_eq!(&bytes[bytes.len() - 2..], &[0x07, 0x00]);
        assert_eq!(&bytes[..4], &[0x49, 0x49, 0x2A, 0x00]);
    }

    #[test]
    fn strips_respect_size_limit() {
        let g = Grid::from_fn(300, 257, |r, c| (r * 257 + c) as u16);
        let img = TiffImage::from_u16(&g, None);
        assert!(img.rows_per_strip() as usize * 257 * 2 <= MAX_STRIP_BYTES);
        let back = decode_tiff(&encode_tiff(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_big_endian_and_compression() {
        let mut bytes = encode_tiff(&TiffImage::from_u8(&Grid::filled(2, 2, 1u8), None)).unwrap();
        let mut be = bytes.clone();
        be[..4].copy_from_slice(&[0x4D, 0x4D, 0x00, 0x2A]);
        assert!(matches!(decode_tiff(&be), Err(Error::UnsupportedVariant(_))));
        // Compression is the fourth IFD entry; its inline SHORT value sits at byte 8 of the entry.
        let entry = 8 + 2 + 12 * 3;
        assert_eq!(u16::from_le_bytes([bytes[entry], bytes[entry + 1]]), TAG_COMPRESSION);
        bytes[entry + 8] = 5;
        assert!(matches!(decode_tiff(&bytes), Err(Error::UnsupportedCompression(5))));
    }

    #[test]
    fn geo_round_trip() {
        let g = Grid::from_fn(5, 3, |r, c| (r + c) as f32 * 0.5);
        let img = TiffImage::from_f32_bands(&[g.clone(), g], Some(geo())).unwrap();
        let back = decode_tiff(&encode_tiff(&img).unwrap()).unwrap();
        assert_eq!(back.geo, Some(geo()));
        assert_eq!(back, img);
        assert_eq!(back.band_f32(1).unwrap().get(4, 2), &3.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn truncation_is_always_an_error(h in 1usize..40, w in 1usize..40, cut in 0.0f64..1.0) {
            let g = Grid::from_fn(h, w, |r, c| (r * 31 + c * 7) as u16);
            let bytes = encode_tiff(&TiffImage::from_u16(&g, Some(geo()))).unwrap();
            let keep = ((bytes.len() as f64) * cut) as usize;
            prop_assert!(keep < bytes.len());
            let err = decode_tiff(&bytes[..keep]).unwrap_err();
            prop_assert!(matches!(err, Error::CorruptFile(_)), "{err}");
        }

        #[test]
        fn byte_flips_never_panic(pos in 0usize..400, val in any::<u8>()) {
            let g = Grid::from_fn(9, 11, |r, c| (r * c) as u16);
            let mut bytes = encode_tiff(&TiffImage::from_u16(&g, Some(geo()))).unwrap();
            let p = pos % bytes.len();
            bytes[p] = val;
            let _ = decode_tiff(&bytes);
        }
    }
}
