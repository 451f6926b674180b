//! Masked per-pixel losses. Each task's loss is the mean over the pixels that
//! contribute in the whole batch, so an empty mask yields a zero loss and a
//! zero gradient rather than a division by zero.

use serde::{Deserialize, Serialize};

use super::network::LANDCOVER_CLASSES;
use crate::error::{Error, Result};
use crate::raster::{Grid, Planes, IGNORE};

#[derive(Debug, Clone, PartialEq)]
pub struct TaskLoss {
    pub loss: f64,
    /// Contributing pixels across the batch.
    pub count: usize,
    /// d loss / d logits per item.
    pub grads: Vec<Planes>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub loss_d: f64,
    pub loss_lc: f64,
    pub loss_total: f64,
    pub lambda: f64,
    pub count_d: usize,
    pub count_lc: usize,
}

impl LossReport {
    pub fn new(loss_d: f64, count_d: usize, loss_lc: f64, count_lc: usize, lambda: f64) -> Self {
        Self {
            loss_d,
            loss_lc,
            loss_total: loss_d + lambda * loss_lc,
            lambda,
            count_d,
            count_lc,
        }
    }

    pub fn delineation_empty(&self) -> bool {
        self.count_d == 0
    }

    pub fn landcover_empty(&self) -> bool {
        self.count_lc == 0
    }
}

fn check_shapes(logits: &Planes, channels: usize, y: &Grid<u8>, valid: &Grid<bool>) -> Result<()> {
    if logits.channels != channels || (logits.height, logits.width) != y.shape() || y.shape() != valid.shape() {
        return Err(Error::Dimension(format!(
            "logits {}x{}x{}, labels {:?}, mask {:?}",
            logits.channels,
            logits.height,
            logits.width,
            y.shape(),
            valid.shape()
        )));
    }
    Ok(())
}

/// Pixels that contribute to a task: valid and not ignored.
pub fn contributing(y: &Grid<u8>, valid: &Grid<bool>) -> usize {
    y.values().iter().zip(valid.values()).filter(|(&l, &v)| v && l != IGNORE).count()
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross entropy with logits for one item: returns the summed loss
/// over contributing pixels and the gradient scaled by `scale`.
pub fn bce_terms(logits: &Planes, y: &Grid<u8>, valid: &Grid<bool>, scale: f64) -> Result<(f64, Planes)> {
    check_shapes(logits, 1, y, valid)?;
    if let Some(bad) = y.values().iter().find(|&&l| l > 1 && l != IGNORE) {
        return Err(Error::LabelDomain(format!("delineation label {bad} is not 0, 1 or 255")));
    }
    let mut grad = Planes::zeros(1, logits.height, logits.width);
    let mut sum = 0.0;
    for (i, (&z, (&l, &v))) in logits.data.iter().zip(y.values().iter().zip(valid.values())).enumerate() {
        if !v || l == IGNORE {
            continue;
        }
        let t = l as f64;
        // -[t log s(z) + (1 - t) log(1 - s(z))] = softplus(z) - t z
        sum += softplus(z) - t * z;
        grad.data[i] = (sigmoid(z) - t) * scale;
    }
    Ok((sum, grad))
}

/// Softmax cross entropy for one item, as [`bce_terms`].
pub fn ce_terms(logits: &Planes, y: &Grid<u8>, valid: &Grid<bool>, scale: f64) -> Result<(f64, Planes)> {
    let k = LANDCOVER_CLASSES;
    check_shapes(logits, k, y, valid)?;
    if let Some(bad) = y.values().iter().find(|&&l| l as usize >= k && l != IGNORE) {
        return Err(Error::LabelDomain(format!("land-cover label {bad} is outside 0..=10 and not 255")));
    }
    let n = logits.plane_len();
    let mut grad = Planes::zeros(k, logits.height, logits.width);
    let mut sum = 0.0;
    let mut z = [0.0; LANDCOVER_CLASSES];
    for (i, (&l, &v)) in y.values().iter().zip(valid.values()).enumerate() {
        if !v || l == IGNORE {
            continue;
        }
        for (c, zc) in z.iter_mut().enumerate() {
            *zc = logits.data[c * n + i];
        }
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut e = [0.0; LANDCOVER_CLASSES];
        let mut se = 0.0;
        for (ec, &zc) in e.iter_mut().zip(&z) {
            *ec = (zc - m).exp();
            se += *ec;
        }
        sum += m + se.ln() - z[l as usize];
        let inv = scale / se;
        for (c, &ec) in e.iter().enumerate() {
            grad.data[c * n + i] = ec * inv;
        }
        grad.data[l as usize * n + i] -= scale;
    }
    Ok((sum, grad))
}

type TermsFn = fn(&Planes, &Grid<u8>, &Grid<bool>, f64) -> Result<(f64, Planes)>;

fn batch_loss(logits: &[Planes], y: &[&Grid<u8>], valid: &[&Grid<bool>], terms: TermsFn) -> Result<TaskLoss> {
    if logits.len() != y.len() || y.len() != valid.len() {
        return Err(Error::Dimension("batch sizes of logits, labels and masks differ".into()));
    }
    let count: usize = y.iter().zip(valid).map(|(y, v)| contributing(y, v)).sum();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let mut sum = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for ((z, y), v) in logits.iter().zip(y).zip(valid) {
        let (s, g) = terms(z, y, v, scale)?;
        sum += s;
        grads.push(g);
    }
    let loss = if count == 0 { 0.0 } else { sum / count as f64 };
    Ok(TaskLoss { loss, count, grads })
}

pub fn loss_delineation(logits: &[Planes], y: &[&Grid<u8>], valid: &[&Grid<bool>]) -> Result<TaskLoss> {
    batch_loss(logits, y, valid, bce_terms)
}

pub fn loss_landcover(logits: &[Planes], y: &[&Grid<u8>], valid: &[&Grid<bool>]) -> Result<TaskLoss> {
    batch_loss(logits, y, valid, ce_terms)
}
