use std::path::{Path, PathBuf};

use serde::Serialize;

use burnscar::eval::experiment::{run_experiment, RunSpec};
use burnscar::eval::metrics::{confusion_grids, evaluate, EvalReport};
use burnscar::indices::{compute_index, threshold_classify, IndexKind, Polarity, DEFAULT_DNBR_THRESHOLD};
use burnscar::manifest::{load_manifest, split_counts, DatasetManifest, SceneEntry, Split};
use burnscar::net::checkpoint::load_checkpoint;
use burnscar::net::train::{delineation_confusion, load_split, with_workers, TrainConfig};
use burnscar::net::{predict, AdamWConfig, Mode};
use burnscar::preprocess::{pre_fire_stack, post_fire_stack, prepare};
use burnscar::raster::{parse_band_list, BandId, Grid};
use burnscar::scene::load_scene;
use burnscar::synth::{generate_dataset_with_counts, SynthConfig};
use burnscar::tiff::{read_tiff, write_tiff, TiffImage};
use burnscar::tiler::TilerConfig;

use crate::config::{overlay, write_effective, EFFECTIVE_CONFIG};
use crate::{CliError, EvalArgs, ExperimentArgs, IndexArgs, InferArgs, PreprocessArgs, SynthArgs, TrainArgs, TrainOpts};

type CmdResult = Result<(), CliError>;

fn required<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("the option --{flag} is required (flag, environment or --config)")))
}

fn load_manifest_with_base(path: &Path) -> Result<(DatasetManifest, PathBuf), CliError> {
    let manifest = load_manifest(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((manifest, base))
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Domain(format!("cannot create {}: {e}", dir.display())))
}

fn band_names(bands: &[BandId]) -> String {
    bands.iter().map(|b| b.name()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| CliError::Usage(format!("invalid {what} `{p}`: {e}"))))
        .collect()
}

#[derive(Serialize)]
struct SynthResolved {
    seed: u64,
    scenes: usize,
    counts: String,
    height: usize,
    width: usize,
    train_frac: f64,
    val_frac: f64,
    out: PathBuf,
}

pub fn synth(args: SynthArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "synth")?;
    let defaults = SynthConfig::default();
    let train_frac = a.train_frac.unwrap_or(0.7);
    let val_frac = a.val_frac.unwrap_or(0.1);
    let counts: [usize; 3] = match &a.counts {
        Some(c) => parse_list::<usize>(c, "scene count")?
            .try_into()
            .map_err(|_| CliError::Usage("--counts takes three numbers: train,val,test".into()))?,
        None => split_counts(a.scenes.unwrap_or(10), train_frac, val_frac)?,
    };
    let r = SynthResolved {
        seed: a.seed.unwrap_or(0),
        scenes: counts.iter().sum(),
        counts: counts.map(|c| c.to_string()).join(","),
        height: a.height.unwrap_or(defaults.height),
        width: a.width.unwrap_or(defaults.width),
        train_frac,
        val_frac,
        out: required(a.out, "out")?,
    };
    let config = SynthConfig {
        seed: r.seed,
        height: r.height,
        width: r.width,
        ..defaults
    };
    let manifest = generate_dataset_with_counts(&config, counts, &r.out)?;
    write_effective(&r, "synth", &r.out.join(EFFECTIVE_CONFIG))?;
    eprintln!(
        "wrote {} scenes ({} train / {} val / {} test) to {}",
        manifest.entries.len(),
        counts[0],
        counts[1],
        counts[2],
        r.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PreprocessResolved {
    manifest: PathBuf,
    out: PathBuf,
    workers: usize,
}

#[derive(Serialize)]
struct PreparedRecord {
    id: String,
    scene: String,
    height: usize,
    width: usize,
    offset: (usize, usize),
    bands: String,
    files: Vec<String>,
}

fn write_mask(g: &Grid<bool>, path: &Path, geo: Option<burnscar::raster::GeoRef>) -> burnscar::Result<()> {
    write_tiff(&TiffImage::from_u8(&g.map(|&v| v as u8), geo), path)
}

fn prepare_entry(entry: &SceneEntry, base: &Path, out: &Path) -> burnscar::Result<Vec<PreparedRecord>> {
    let scene = load_scene(entry, base)?;
    let mut records = Vec::new();
    for s in prepare(&scene)? {
        let dir = out.join(&s.id);
        std::fs::create_dir_all(&dir).map_err(|e| burnscar::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let geo = Some(s.geo);
        let bands: Vec<Grid<f32>> = s.x.iter().map(|(_, g)| g.map(|&v| v as f32)).collect();
        write_tiff(&TiffImage::from_f32_bands(&bands, geo)?, dir.join("x.tif"))?;
        write_tiff(&TiffImage::from_u8(&s.y_d.grid, geo), dir.join("y_d.tif"))?;
        write_tiff(&TiffImage::from_u8(&s.y_lc.grid, geo), dir.join("y_lc.tif"))?;
        write_tiff(&TiffImage::from_u8(&s.cloud.grid, geo), dir.join("cloud.tif"))?;
        write_mask(&s.valid_d, &dir.join("valid_d.tif"), geo)?;
        write_mask(&s.valid_lc, &dir.join("valid_lc.tif"), geo)?;
        let (height, width) = s.shape();
        records.push(PreparedRecord {
            id: s.id.clone(),
            scene: entry.id.clone(),
            height,
            width,
            offset: s.offset,
            bands: band_names(&s.x.ids().collect::<Vec<_>>()),
            files: ["x", "y_d", "y_lc", "cloud", "valid_d", "valid_lc"]
                .iter()
                .map(|f| format!("{}/{f}.tif", s.id))
                .collect(),
        });
    }
    Ok(records)
}

pub fn preprocess(args: PreprocessArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "preprocess")?;
    let r = PreprocessResolved {
        manifest: required(a.manifest, "manifest")?,
        out: required(a.out, "out")?,
        workers: a.workers.unwrap_or(0),
    };
    let (manifest, base) = load_manifest_with_base(&r.manifest)?;
    create_dir(&r.out)?;
    let records = with_workers(r.workers, || -> burnscar::Result<Vec<PreparedRecord>> {
        let mut all = Vec::new();
        for entry in &manifest.entries {
            all.extend(prepare_entry(entry, &base, &r.out)?);
        }
        Ok(all)
    })??;
    let path = r.out.join("prepared.json");
    let text = serde_json::to_string_pretty(&records).map_err(|e| CliError::Domain(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| CliError::Domain(format!("cannot write {}: {e}", path.display())))?;
    write_effective(&r, "preprocess", &r.out.join(EFFECTIVE_CONFIG))?;
    eprintln!("prepared {} samples from {} scenes", records.len(), manifest.entries.len());
    Ok(())
}

#[derive(Serialize)]
struct IndexResolved {
    manifest: PathBuf,
    scene: String,
    kind: String,
    out: PathBuf,
    threshold: f64,
    mask_out: Option<PathBuf>,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".config.json");
    path.with_file_name(name)
}

pub fn index(args: IndexArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "index")?;
    let kind_name = a.kind.unwrap_or_else(|| "nbr".into());
    let kind: IndexKind = kind_name.parse().map_err(|e: burnscar::Error| CliError::Usage(e.to_string()))?;
    let r = IndexResolved {
        manifest: required(a.manifest, "manifest")?,
        scene: required(a.scene, "scene")?,
        kind: kind_name.to_ascii_lowercase(),
        out: required(a.out, "out")?,
        threshold: a.threshold.unwrap_or(DEFAULT_DNBR_THRESHOLD),
        mask_out: a.mask_out,
    };
    let (manifest, base) = load_manifest_with_base(&r.manifest)?;
    let entry = manifest
        .entry(&r.scene)
        .ok_or_else(|| CliError::Domain(format!("scene {} is not in {}", r.scene, r.manifest.display())))?;
    let scene = load_scene(entry, &base)?;
    let post = post_fire_stack(&scene)?;
    let pre = pre_fire_stack(&scene)?;
    let map = compute_index(kind, &post, pre.as_ref())?;
    let values = burnscar::raster::map_binary(&map.grid, &map.valid, |&v, &ok| if ok { v as f32 } else { f32::NAN })?;
    write_tiff(&TiffImage::from_f32_bands(&[values], Some(scene.geo))?, &r.out)?;
    if let Some(mask_path) = &r.mask_out {
        let mask = threshold_classify(&map, r.threshold, Polarity::Greater);
        write_tiff(&TiffImage::from_u8(&mask.grid, Some(scene.geo)), mask_path)?;
    }
    write_effective(&r, "index", &sidecar(&r.out))?;
    eprintln!("wrote {} for {}", r.kind, r.scene);
    Ok(())
}

fn train_config(o: &TrainOpts) -> Result<TrainConfig, CliError> {
    let d = TrainConfig::default();
    let bands = match &o.bands {
        Some(b) => parse_band_list(b).map_err(|e| CliError::Usage(e.to_string()))?,
        None => d.bands.clone(),
    };
    Ok(TrainConfig {
        mode: o.mode.unwrap_or(d.mode),
        lambda: o.lambda.unwrap_or(d.lambda),
        epochs: o.epochs.unwrap_or(d.epochs),
        batch_size: o.batch_size.unwrap_or(d.batch_size),
        optimizer: AdamWConfig {
            lr: o.lr.unwrap_or(d.optimizer.lr),
            weight_decay: o.weight_decay.unwrap_or(d.optimizer.weight_decay),
            ..d.optimizer
        },
        seed: o.seed.unwrap_or(d.seed),
        bands,
        crop_size: o.crop_size.unwrap_or(d.crop_size),
        tiler: TilerConfig {
            tile_size: o.tile_size.unwrap_or(d.tiler.tile_size),
            stride: o.stride.unwrap_or(d.tiler.stride),
            taper: o.taper.unwrap_or(d.tiler.taper),
        },
        workers: o.workers.unwrap_or(d.workers),
    })
}

fn resolved_opts(c: &TrainConfig) -> TrainOpts {
    TrainOpts {
        mode: Some(c.mode),
        lambda: Some(c.lambda),
        epochs: Some(c.epochs),
        batch_size: Some(c.batch_size),
        lr: Some(c.optimizer.lr),
        weight_decay: Some(c.optimizer.weight_decay),
        seed: Some(c.seed),
        bands: Some(band_names(&c.bands)),
        crop_size: Some(c.crop_size),
        tile_size: Some(c.tiler.tile_size),
        stride: Some(c.tiler.stride),
        taper: Some(c.tiler.taper),
        workers: Some(c.workers),
    }
}

pub fn train(args: TrainArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "train")?;
    let manifest_path = required(a.manifest.clone(), "manifest")?;
    let out = required(a.out.clone(), "out")?;
    let (manifest, base) = load_manifest_with_base(&manifest_path)?;
    let outcome = match &a.resume {
        Some(ck) => {
            let mut stored = load_checkpoint(ck)?.config;
            if let Some(e) = a.opts.epochs {
                stored.epochs = e;
            }
            write_effective(
                &TrainArgs {
                    manifest: Some(manifest_path.clone()),
                    out: Some(out.clone()),
                    resume: Some(ck.clone()),
                    opts: resolved_opts(&stored),
                },
                "train",
                &out.join(EFFECTIVE_CONFIG),
            )?;
            burnscar::net::resume(&manifest, &base, ck, a.opts.epochs, Some(&out))?
        }
        None => {
            let config = train_config(&a.opts)?;
            config.validate()?;
            write_effective(
                &TrainArgs {
                    manifest: Some(manifest_path.clone()),
                    out: Some(out.clone()),
                    resume: None,
                    opts: resolved_opts(&config),
                },
                "train",
                &out.join(EFFECTIVE_CONFIG),
            )?;
            burnscar::net::train(&manifest, &base, &config, Some(&out))?
        }
    };
    match (outcome.best_epoch, outcome.best_val_f1) {
        (Some(e), Some(f1)) => eprintln!("best validation macro-F1 {f1:.4} at epoch {}", e + 1),
        _ => eprintln!("no validation score was recorded"),
    }
    Ok(())
}

#[derive(Serialize)]
struct InferResolved {
    checkpoint: PathBuf,
    manifest: PathBuf,
    split: Option<String>,
    scene: Option<String>,
    out: PathBuf,
    tile_size: usize,
    stride: usize,
    taper: f64,
    landcover: bool,
}

pub fn infer(args: InferArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "infer")?;
    let checkpoint = required(a.checkpoint, "checkpoint")?;
    let ck = load_checkpoint(&checkpoint)?;
    let t = ck.config.tiler;
    let r = InferResolved {
        checkpoint,
        manifest: required(a.manifest, "manifest")?,
        split: if a.scene.is_some() { None } else { Some(a.split.unwrap_or_else(|| "test".into())) },
        scene: a.scene,
        out: required(a.out, "out")?,
        tile_size: a.tile_size.unwrap_or(t.tile_size),
        stride: a.stride.unwrap_or(t.stride),
        taper: a.taper.unwrap_or(t.taper),
        landcover: a.landcover.unwrap_or(false),
    };
    let tiler = TilerConfig {
        tile_size: r.tile_size,
        stride: r.stride,
        taper: r.taper,
    };
    let (manifest, base) = load_manifest_with_base(&r.manifest)?;
    let entries: Vec<&SceneEntry> = match (&r.scene, &r.split) {
        (Some(id), _) => vec![manifest
            .entry(id)
            .ok_or_else(|| CliError::Domain(format!("scene {id} is not in {}", r.manifest.display())))?],
        (None, Some(split)) => manifest.split_entries(split.parse::<Split>().map_err(|e| CliError::Usage(e.to_string()))?),
        (None, None) => unreachable!("split defaults when no scene is given"),
    };
    create_dir(&r.out)?;
    let bands = &ck.config.bands;
    let mut written = 0;
    for entry in entries {
        let scene = load_scene(entry, &base)?;
        for s in prepare(&scene)? {
            let p = if r.landcover {
                let mut x = s.x.to_planes(bands)?;
                burnscar::net::data::mask_clouds(&mut x, &s.cloud.grid)?;
                burnscar::net::predict_planes(&ck.net, &x, &tiler, true)?
            } else {
                predict(&ck.net, &s, bands, &tiler)?
            };
            let geo = Some(s.geo);
            let prob = p.probability.map(|&v| v as f32);
            write_tiff(&TiffImage::from_f32_bands(&[prob], geo)?, r.out.join(format!("{}_prob.tif", s.id)))?;
            write_tiff(&TiffImage::from_u8(&p.mask, geo), r.out.join(format!("{}_mask.tif", s.id)))?;
            if let Some(lc) = p.landcover_classes() {
                write_tiff(&TiffImage::from_u8(&lc, geo), r.out.join(format!("{}_landcover.tif", s.id)))?;
            }
            written += 1;
        }
    }
    write_effective(&r, "infer", &r.out.join(EFFECTIVE_CONFIG))?;
    eprintln!("wrote predictions for {written} samples to {}", r.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalResolved {
    pred: Option<PathBuf>,
    gt: Option<PathBuf>,
    valid: Option<PathBuf>,
    classes: usize,
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    split: Option<String>,
    out: PathBuf,
}

fn read_u8(path: &Path) -> burnscar::Result<Grid<u8>> {
    read_tiff(path)?.band_u8(0)
}

pub fn eval(args: EvalArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "eval")?;
    let r = EvalResolved {
        classes: a.classes.unwrap_or(2),
        split: a.checkpoint.as_ref().map(|_| a.split.clone().unwrap_or_else(|| "test".into())),
        pred: a.pred,
        gt: a.gt,
        valid: a.valid,
        checkpoint: a.checkpoint,
        manifest: a.manifest,
        out: required(a.out, "out")?,
    };
    let report: EvalReport = match (&r.pred, &r.gt, &r.checkpoint) {
        (Some(pred), Some(gt), None) => {
            let pred = read_u8(pred)?;
            let gt = read_u8(gt)?;
            let valid = match &r.valid {
                Some(v) => read_u8(v)?.map(|&m| m != 0),
                None => Grid::filled(gt.height(), gt.width(), true),
            };
            evaluate(&confusion_grids(&pred, &gt, &valid, r.classes)?)?
        }
        (None, None, Some(ck_path)) => {
            let manifest_path = r
                .manifest
                .as_ref()
                .ok_or_else(|| CliError::Usage("--checkpoint needs --manifest".into()))?;
            let split: Split = r.split.as_deref().unwrap_or("test").parse().map_err(|e: burnscar::Error| CliError::Usage(e.to_string()))?;
            let ck = load_checkpoint(ck_path)?;
            let (manifest, base) = load_manifest_with_base(manifest_path)?;
            let samples = load_split(&manifest, &base, split, &ck.config.bands)?;
            evaluate(&delineation_confusion(&ck.net, &samples, &ck.config.tiler)?)?
        }
        _ => {
            return Err(CliError::Usage(
                "give either --pred and --gt, or --checkpoint with --manifest".into(),
            ))
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Domain(e.to_string()))?;
    std::fs::write(&r.out, &text).map_err(|e| CliError::Domain(format!("cannot write {}: {e}", r.out.display())))?;
    write_effective(&r, "eval", &sidecar(&r.out))?;
    eprintln!(
        "macro F1 {:.4}  macro IoU {:.4}{}  over {} pixels",
        report.macro_f1,
        report.macro_iou,
        report.burned_iou.map_or(String::new(), |b| format!("  burned IoU {b:.4}")),
        report.pixels
    );
    Ok(())
}

pub fn experiment(args: ExperimentArgs, cfg: Option<&Path>) -> CmdResult {
    let a = overlay(args, cfg, "experiment")?;
    let manifest_path = required(a.manifest.clone(), "manifest")?;
    let out = required(a.out.clone(), "out")?;
    let seeds: Vec<u64> = parse_list(a.seeds.as_deref().unwrap_or("1,2,3"), "seed")?;
    let modes: Vec<Mode> = parse_list(a.modes.as_deref().unwrap_or("stl,mtl"), "mode")?;
    let base_config = train_config(&a.opts)?;
    base_config.validate()?;
    let runs: Vec<RunSpec> = modes
        .iter()
        .flat_map(|&mode| seeds.iter().map(move |&seed| RunSpec { mode, seed }))
        .collect();
    let mut opts = resolved_opts(&base_config);
    opts.mode = None;
    opts.seed = None;
    write_effective(
        &ExperimentArgs {
            manifest: Some(manifest_path.clone()),
            out: Some(out.clone()),
            seeds: Some(seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")),
            modes: Some(modes.iter().map(Mode::to_string).collect::<Vec<_>>().join(",")),
            opts,
        },
        "experiment",
        &out.join(EFFECTIVE_CONFIG),
    )?;
    let (manifest, base) = load_manifest_with_base(&manifest_path)?;
    let report = run_experiment(&manifest, &base, &base_config, &runs, Some(&out))?;
    eprint!("{}", report.to_text());
    Ok(())
}
