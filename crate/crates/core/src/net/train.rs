//! Gradient computation over batches and the training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adamw::{AdamW, AdamWConfig};
use super::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use super::data::{CompactSample, TrainingBatch};
use super::loss::{bce_terms, ce_terms, contributing, LossReport};
use super::network::{Gradients, Mode, MtlNetwork};
use super::predict::predict_compact;
use crate::error::{Error, Result};
use crate::eval::metrics::{confusion_grids, evaluate, ConfusionMatrix};
use crate::manifest::{DatasetManifest, Split};
use crate::preprocess::prepare;
use crate::raster::BandId;
use crate::scene::load_scene;
use crate::tiler::{sample_crop_offset, TilerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: Mode,
    /// Weight of the land-cover loss in MTL mode.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub seed: u64,
    pub bands: Vec<BandId>,
    /// Side of the random square training crops.
    pub crop_size: usize,
    /// Tiling used for validation and test inference.
    pub tiler: TilerConfig,
    /// Worker threads for per-item work; 0 uses the global pool. Results do
    /// not depend on this value.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mtl,
            lambda: 1.0,
            epochs: 30,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            seed: 0,
            bands: BandId::ALL.to_vec(),
            crop_size: 512,
            tiler: TilerConfig::default(),
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.bands.is_empty() {
            return bad("at least one band is required");
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(super::SIDE_MULTIPLE) {
            return bad("crop size must be a positive multiple of 8");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and non-negative");
        }
        if !(self.optimizer.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

/// One batch of an epoch plan: (training sample index, crop corner) pairs.
pub type Batch = Vec<(usize, (usize, usize))>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Means over the epoch's batches.
    pub loss_d: f64,
    pub loss_lc: f64,
    pub loss_total: f64,
    pub val_macro_f1: Option<f64>,
    pub val_macro_iou: Option<f64>,
    /// Wall time of the optimization part of the epoch.
    pub train_seconds: f64,
    pub val_seconds: f64,
}

/// Runs `f` on a dedicated pool of `workers` threads (0: the global pool).
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    #[cfg(feature = "parallel")]
    if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        return Ok(pool.install(f));
    }
    let _ = workers;
    Ok(f())
}

fn map_items<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Loss and exact gradient of `loss_D + lambda * loss_LC` over a batch.
///
/// Items may be processed in parallel; their gradients are summed in item
/// order, so the result is the same for any number of workers.
pub fn compute_gradients(net: &MtlNetwork, batch: &TrainingBatch, lambda: f64) -> Result<(LossReport, Gradients)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Config("empty batch".into()));
    }
    if [batch.y_d.len(), batch.y_lc.len(), batch.valid_d.len(), batch.valid_lc.len()] != [n; 4] {
        return Err(Error::Dimension("batch fields have different lengths".into()));
    }
    let mtl = net.has_landcover_head();
    let count_d: usize = (0..n).map(|i| contributing(&batch.y_d[i], &batch.valid_d[i])).sum();
    let count_lc: usize = if mtl {
        (0..n).map(|i| contributing(&batch.y_lc[i], &batch.valid_lc[i])).sum()
    } else {
        0
    };
    let scale_d = if count_d == 0 { 0.0 } else { 1.0 / count_d as f64 };
    let scale_lc = if count_lc == 0 { 0.0 } else { lambda / count_lc as f64 };
    let items = map_items(n, |i| {
        let (out, cache) = net.forward_item(&batch.x[i], mtl)?;
        let (sum_d, grad_d) = bce_terms(&out.logits_d, &batch.y_d[i], &batch.valid_d[i], scale_d)?;
        let (sum_lc, grad_lc) = match &out.logits_lc {
            Some(z) => {
                let (s, g) = ce_terms(z, &batch.y_lc[i], &batch.valid_lc[i], scale_lc)?;
                (s, Some(g))
            }
            None => (0.0, None),
        };
        let grads = net.backward(&cache, &grad_d, grad_lc.as_ref())?;
        Ok((sum_d, sum_lc, grads))
    })?;
    let mut total = Gradients::zeros_like(net);
    let (mut sum_d, mut sum_lc) = (0.0, 0.0);
    for (d, lc, g) in &items {
        sum_d += d;
        sum_lc += lc;
        total.add_assign(g);
    }
    let loss_d = if count_d == 0 { 0.0 } else { sum_d / count_d as f64 };
    let loss_lc = if count_lc == 0 { 0.0 } else { sum_lc / count_lc as f64 };
    let lambda = if mtl { lambda } else { 0.0 };
    Ok((LossReport::new(loss_d, count_d, loss_lc, count_lc, lambda), total))
}

/// One optimizer step on one batch.
pub fn train_step(net: &mut MtlNetwork, opt: &mut AdamW, batch: &TrainingBatch, lambda: f64) -> Result<LossReport> {
    let (report, grads) = compute_gradients(net, batch, lambda)?;
    opt.step_network(net, &grads)?;
    Ok(report)
}

/// Pooled binary confusion of the network's delineation over samples.
pub fn delineation_confusion(net: &MtlNetwork, samples: &[CompactSample], tiler: &TilerConfig) -> Result<ConfusionMatrix> {
    let per = map_items(samples.len(), |i| {
        let s = &samples[i];
        let p = predict_compact(net, s, tiler)?;
        confusion_grids(&p.mask, &s.y_d, &s.valid_d, 2)
    })?;
    let mut cm = ConfusionMatrix::new(2);
    for c in &per {
        cm.add(c)?;
    }
    Ok(cm)
}

/// Loads and prepares the scenes of one split, keeping the selected bands.
pub fn load_split(manifest: &DatasetManifest, base_dir: &Path, split: Split, bands: &[BandId]) -> Result<Vec<CompactSample>> {
    let entries = manifest.split_entries(split);
    let per = map_items(entries.len(), |i| {
        let scene = load_scene(entries[i], base_dir)?;
        prepare(&scene)?
            .iter()
            .map(|s| CompactSample::from_prepared(s, bands))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(per.into_iter().flatten().collect())
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    rng
}

pub struct Trainer<'a> {
    pub config: TrainConfig,
    pub net: MtlNetwork,
    pub optimizer: AdamW,
    pub next_epoch: usize,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    best_net: Option<MtlNetwork>,
    train: &'a [CompactSample],
    val: &'a [CompactSample],
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, train: &'a [CompactSample], val: &'a [CompactSample]) -> Result<Self> {
        let net = MtlNetwork::new(config.bands.len(), config.mode, config.seed);
        let optimizer = AdamW::for_network(config.optimizer, &net);
        Self::assemble(config, net, optimizer, 0, None, None, train, val)
    }

    pub fn from_checkpoint(ck: Checkpoint, train: &'a [CompactSample], val: &'a [CompactSample]) -> Result<Self> {
        let optimizer = ck
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume from".into()))?;
        Self::assemble(ck.config, ck.net, optimizer, ck.next_epoch, ck.best_epoch, ck.best_val_f1, train, val)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        config: TrainConfig,
        net: MtlNetwork,
        optimizer: AdamW,
        next_epoch: usize,
        best_epoch: Option<usize>,
        best_val_f1: Option<f64>,
        train: &'a [CompactSample],
        val: &'a [CompactSample],
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("the train split is empty".into()));
        }
        if val.is_empty() {
            return Err(Error::Config("the val split is empty".into()));
        }
        for s in train.iter().chain(val) {
            if s.channels != config.bands.len() {
                return Err(Error::Config(format!("sample {} has {} bands, config selects {}", s.id, s.channels, config.bands.len())));
            }
        }
        if let Some(s) = train.iter().find(|s| s.height < config.crop_size || s.width < config.crop_size) {
            return Err(Error::Config(format!(
                "sample {} ({}x{}) is smaller than the {} crop",
                s.id, s.height, s.width, config.crop_size
            )));
        }
        Ok(Self {
            best_net: None,
            config,
            net,
            optimizer,
            next_epoch,
            best_epoch,
            best_val_f1,
            train,
            val,
        })
    }

    pub fn finished(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// Batches of the given epoch: a seeded shuffle of the training samples,
    /// each with a seeded crop corner.
    pub fn epoch_plan(&self, epoch: usize) -> Result<Vec<Batch>> {
        let mut rng = epoch_rng(self.config.seed, epoch);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let mut items = Vec::with_capacity(order.len());
        for i in order {
            let s = &self.train[i];
            items.push((i, sample_crop_offset(s.height, s.width, self.config.crop_size, &mut rng)?));
        }
        Ok(items.chunks(self.config.batch_size).map(<[_]>::to_vec).collect())
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.next_epoch;
        let start = Instant::now();
        let plan = self.epoch_plan(epoch)?;
        let (mut sd, mut slc, mut st) = (0.0, 0.0, 0.0);
        for batch_plan in &plan {
            let refs: Vec<_> = batch_plan.iter().map(|&(i, at)| (&self.train[i], at)).collect();
            let batch = TrainingBatch::from_crops(&refs, self.config.crop_size)?;
            let report = train_step(&mut self.net, &mut self.optimizer, &batch, self.config.lambda)?;
            sd += report.loss_d;
            slc += report.loss_lc;
            st += report.loss_total;
        }
        let train_seconds = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let cm = delineation_confusion(&self.net, self.val, &self.config.tiler)?;
        let val = evaluate(&cm).ok();
        let val_seconds = start.elapsed().as_secs_f64();
        let val_f1 = val.as_ref().map(|r| r.macro_f1);
        if let Some(f1) = val_f1 {
            if self.best_val_f1.is_none_or(|b| f1 > b) {
                self.best_val_f1 = Some(f1);
                self.best_epoch = Some(epoch);
                self.best_net = Some(self.net.clone());
            }
        }
        self.next_epoch += 1;
        let steps = plan.len() as f64;
        Ok(EpochRecord {
            epoch,
            steps: plan.len(),
            loss_d: sd / steps,
            loss_lc: slc / steps,
            loss_total: st / steps,
            val_macro_f1: val_f1,
            val_macro_iou: val.map(|r| r.macro_iou),
            train_seconds,
            val_seconds,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            next_epoch: self.next_epoch,
            best_epoch: self.best_epoch,
            best_val_f1: self.best_val_f1,
            net: self.net.clone(),
            optimizer: Some(self.optimizer.clone()),
        }
    }

    /// Best-on-validation network seen by this trainer (the current one if
    /// none was recorded in this session).
    pub fn best_network(&self) -> &MtlNetwork {
        self.best_net.as_ref().unwrap_or(&self.net)
    }

    fn best_checkpoint(&self) -> Option<Checkpoint> {
        self.best_net.as_ref().map(|net| Checkpoint {
            net: net.clone(),
            optimizer: None,
            ..self.checkpoint()
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_f1: Option<f64>,
    pub best: MtlNetwork,
    pub last: MtlNetwork,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.json";

/// Runs the remaining epochs, writing checkpoints and history after each one
/// when `out_dir` is given.
pub fn run_trainer(trainer: &mut Trainer<'_>, mut history: Vec<EpochRecord>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    while !trainer.finished() {
        let record = trainer.run_epoch()?;
        log_epoch(&trainer.config, &record);
        let improved = trainer.best_epoch == Some(record.epoch);
        history.push(record);
        if let Some(dir) = out_dir {
            save_checkpoint(&trainer.checkpoint(), dir.join(LAST_CHECKPOINT))?;
            if improved {
                if let Some(best) = trainer.best_checkpoint() {
                    save_checkpoint(&best, dir.join(BEST_CHECKPOINT))?;
                }
            }
            let path = dir.join(HISTORY_FILE);
            std::fs::write(&path, serde_json::to_vec_pretty(&history)?).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(TrainOutcome {
        history,
        best_epoch: trainer.best_epoch,
        best_val_f1: trainer.best_val_f1,
        best: trainer.best_network().clone(),
        last: trainer.net.clone(),
    })
}

fn log_epoch(cfg: &TrainConfig, r: &EpochRecord) {
    eprintln!(
        "[{} seed {}] epoch {:>3}/{}  loss_d {:.5}  loss_lc {:.5}  val F1 {}  ({:.1}s)",
        cfg.mode,
        cfg.seed,
        r.epoch + 1,
        cfg.epochs,
        r.loss_d,
        r.loss_lc,
        r.val_macro_f1.map_or("n/a".to_string(), |f| format!("{f:.4}")),
        r.train_seconds + r.val_seconds
    );
}

/// Trains from scratch on the manifest's train split, validating on val.
pub fn train(manifest: &DatasetManifest, base_dir: &Path, config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    with_workers(config.workers, || {
        let train = load_split(manifest, base_dir, Split::Train, &config.bands)?;
        let val = load_split(manifest, base_dir, Split::Val, &config.bands)?;
        let mut trainer = Trainer::new(config.clone(), &train, &val)?;
        run_trainer(&mut trainer, Vec::new(), out_dir)
    })?
}

/// Continues a run from its `last.ckpt`, optionally extending the epoch count.
pub fn resume(
    manifest: &DatasetManifest,
    base_dir: &Path,
    checkpoint: &Path,
    epochs: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    let mut ck = load_checkpoint(checkpoint)?;
    if let Some(e) = epochs {
        ck.config.epochs = e;
    }
    let history = match out_dir.map(|d| d.join(HISTORY_FILE)) {
        Some(p) if p.exists() => {
            let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
            let mut h: Vec<EpochRecord> = serde_json::from_slice(&bytes)?;
            h.truncate(ck.next_epoch);
            h
        }
        _ => Vec::new(),
    };
    let workers = ck.config.workers;
    with_workers(workers, || {
        let bands = ck.config.bands.clone();
        let train = load_split(manifest, base_dir, Split::Train, &bands)?;
        let val = load_split(manifest, base_dir, Split::Val, &bands)?;
        let mut trainer = Trainer::from_checkpoint(ck, &train, &val)?;
        run_trainer(&mut trainer, history, out_dir)
    })?
}

/// Default location of the output artifacts of a training run.
pub fn checkpoint_paths(out_dir: &Path) -> (PathBuf, PathBuf) {
    (out_dir.join(LAST_CHECKPOINT), out_dir.join(BEST_CHECKPOINT))
}
