//! Raw scenes as stored on disk: bands at native resolution plus label rasters.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::manifest::{AoiBounds, SceneEntry};
use crate::raster::{BandId, GeoRef, Grid, LabelKind, LabelRaster};
use crate::tiff::{read_tiff, write_tiff, TiffImage};

/// Native-resolution grid shape of `band` for an AoI of `height`x`width` 10 m pixels.
pub fn native_shape(band: BandId, height: usize, width: usize) -> (usize, usize) {
    let f = band.upsample_factor();
    (height.div_ceil(f), width.div_ceil(f))
}

/// One activation before data preparation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub event_date: NaiveDate,
    /// 10 m grid shape of the AoI.
    pub height: usize,
    pub width: usize,
    /// Placement of the 10 m grid.
    pub geo: GeoRef,
    /// Digital numbers at each band's native resolution.
    pub bands: BTreeMap<BandId, Grid<u16>>,
    pub pre_fire_bands: BTreeMap<BandId, Grid<u16>>,
    pub delineation: Option<LabelRaster>,
    pub severity: Option<LabelRaster>,
    /// Raw land-cover codes (ESA WorldCover taxonomy).
    pub landcover: LabelRaster,
    pub cloud: LabelRaster,
}

impl Scene {
    /// Checks band presence, per-band native shapes and label shapes.
    pub fn validate(&self) -> Result<()> {
        let missing: Vec<BandId> = BandId::ALL
            .iter()
            .copied()
            .filter(|b| !self.bands.contains_key(b))
            .collect();
        if !missing.is_empty() {
            return Err(Error::IncompleteScene(missing));
        }
        for (set, bands) in [("post-fire", &self.bands), ("pre-fire", &self.pre_fire_bands)] {
            for (id, g) in bands {
                let want = native_shape(*id, self.height, self.width);
                if g.shape() != want {
                    return Err(Error::ShapeConsistency(format!(
                        "{set} band {id} of scene {} is {}x{}, expected {}x{} for a {}x{} AoI",
                        self.id,
                        g.height(),
                        g.width(),
                        want.0,
                        want.1,
                        self.height,
                        self.width
                    )));
                }
            }
        }
        if self.delineation.is_none() && self.severity.is_none() {
            return Err(Error::IncompleteScene(Vec::new()));
        }
        let labels = [
            Some(&self.landcover),
            Some(&self.cloud),
            self.delineation.as_ref(),
            self.severity.as_ref(),
        ];
        for l in labels.into_iter().flatten() {
            if l.shape() != (self.height, self.width) {
                return Err(Error::ShapeConsistency(format!(
                    "{:?} raster of scene {} is {}x{}, expected {}x{}",
                    l.kind,
                    self.id,
                    l.shape().0,
                    l.shape().1,
                    self.height,
                    self.width
                )));
            }
        }
        Ok(())
    }

    pub fn aoi_bounds(&self) -> AoiBounds {
        let [min_x, min_y, max_x, max_y] = self.geo.bounds(self.height, self.width);
        AoiBounds {
            min_x,
            min_y,
            max_x,
            max_y,
            crs_code: self.geo.crs_code,
        }
    }
}

fn read_band(path: &Path) -> Result<(Grid<u16>, Option<GeoRef>)> {
    let img = read_tiff(path)?;
    if img.samples_per_pixel != 1 {
        return Err(Error::ShapeConsistency(format!(
            "{} has {} samples per pixel, expected 1",
            path.display(),
            img.samples_per_pixel
        )));
    }
    Ok((img.band_u16(0)?, img.geo))
}

fn read_label(path: &Path, kind: LabelKind) -> Result<LabelRaster> {
    let img = read_tiff(path)?;
    let grid = img.band_u8(0)?;
    match kind {
        // Raw land cover uses the source taxonomy; remapping validates it later.
        LabelKind::Landcover => Ok(LabelRaster::unchecked(grid, kind)),
        _ => LabelRaster::new(grid, kind),
    }
}

/// 10 m grid implied by an AoI rectangle.
pub fn aoi_shape(aoi: &AoiBounds) -> Result<(usize, usize)> {
    let h = ((aoi.max_y - aoi.min_y) / 10.0).round();
    let w = ((aoi.max_x - aoi.min_x) / 10.0).round();
    if !(h >= 1.0 && w >= 1.0) {
        return Err(Error::ShapeConsistency(format!("degenerate AoI {aoi:?}")));
    }
    Ok((h as usize, w as usize))
}

/// Loads every file referenced by `entry`; relative paths resolve against `base_dir`.
pub fn load_scene(entry: &SceneEntry, base_dir: &Path) -> Result<Scene> {
    let resolve = |p: &Path| -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };
    let missing: Vec<BandId> = BandId::ALL
        .iter()
        .copied()
        .filter(|b| entry.band_files.get(b).is_none_or(|p| !resolve(p).is_file()))
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteScene(missing));
    }
    let (height, width) = aoi_shape(&entry.aoi_bounds)?;
    let mut bands = BTreeMap::new();
    let mut geo = None;
    for (id, p) in &entry.band_files {
        let (g, band_geo) = read_band(&resolve(p))?;
        if id.native_resolution() == 10 && geo.is_none() {
            geo = band_geo;
        }
        bands.insert(*id, g);
    }
    let mut pre_fire_bands = BTreeMap::new();
    for (id, p) in &entry.pre_fire_band_files {
        pre_fire_bands.insert(*id, read_band(&resolve(p))?.0);
    }
    let geo = match geo {
        Some(g) => g,
        None => GeoRef::new(
            entry.aoi_bounds.min_x,
            entry.aoi_bounds.max_y,
            10.0,
            -10.0,
            entry.aoi_bounds.crs_code,
        )?,
    };
    let scene = Scene {
        id: entry.id.clone(),
        event_date: entry.event_date,
        height,
        width,
        geo,
        bands,
        pre_fire_bands,
        delineation: entry
            .delineation_file
            .as_deref()
            .map(|p| read_label(&resolve(p), LabelKind::Delineation))
            .transpose()?,
        severity: entry
            .severity_file
            .as_deref()
            .map(|p| read_label(&resolve(p), LabelKind::Severity))
            .transpose()?,
        landcover: read_label(&resolve(&entry.landcover_file), LabelKind::Landcover)?,
        cloud: read_label(&resolve(&entry.cloud_file), LabelKind::Cloud)?,
    };
    scene.validate()?;
    Ok(scene)
}

/// Writes a scene under `base_dir/<scene id>/` and returns its manifest entry.
pub fn write_scene(scene: &Scene, base_dir: &Path) -> Result<SceneEntry> {
    scene.validate()?;
    let rel_dir = PathBuf::from(&scene.id);
    let dir = base_dir.join(&rel_dir);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let write_bands = |bands: &BTreeMap<BandId, Grid<u16>>, prefix: &str| -> Result<BTreeMap<BandId, PathBuf>> {
        let mut files = BTreeMap::new();
        for (id, g) in bands {
            let rel = rel_dir.join(format!("{prefix}{id}.tif"));
            let geo = scene.geo.rescaled(id.upsample_factor() as f64);
            write_tiff(&TiffImage::from_u16(g, Some(geo)), base_dir.join(&rel))?;
            files.insert(*id, rel);
        }
        Ok(files)
    };
    let band_files = write_bands(&scene.bands, "")?;
    let pre_fire_band_files = write_bands(&scene.pre_fire_bands, "pre_")?;

    let write_label = |label: &LabelRaster, name: &str| -> Result<PathBuf> {
        let rel = rel_dir.join(format!("{name}.tif"));
        write_tiff(&TiffImage::from_u8(&label.grid, Some(scene.geo)), base_dir.join(&rel))?;
        Ok(rel)
    };
    Ok(SceneEntry {
        id: scene.id.clone(),
        event_date: scene.event_date,
        band_files,
        pre_fire_band_files,
        delineation_file: scene
            .delineation
            .as_ref()
            .map(|l| write_label(l, "delineation"))
            .transpose()?,
        landcover_file: write_label(&scene.landcover, "landcover")?,
        cloud_file: write_label(&scene.cloud, "cloud")?,
        severity_file: scene
            .severity
            .as_ref()
            .map(|l| write_label(l, "severity"))
            .transpose()?,
        aoi_bounds: scene.aoi_bounds(),
    })
}
