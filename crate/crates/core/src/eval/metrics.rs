use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Grid, LabelRaster, IGNORE};

/// `counts[g * k + p]`: pixels with ground truth `g` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn add(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension(format!("cannot add {}-class and {}-class matrices", other.k, self.k)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn true_positives(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Ground-truth pixels of class `c`.
    pub fn gt_support(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum()
    }

    /// Pixels predicted as class `c`.
    pub fn pred_support(&self, c: usize) -> u64 {
        (0..self.k).map(|g| self.get(g, c)).sum()
    }
}

/// Counts pixels that are valid and whose ground truth is not the ignore value.
pub fn confusion_grids(pred: &Grid<u8>, gt: &Grid<u8>, valid: &Grid<bool>, k: usize) -> Result<ConfusionMatrix> {
    if pred.shape() != gt.shape() || gt.shape() != valid.shape() {
        return Err(Error::Dimension(format!(
            "prediction {:?}, ground truth {:?}, mask {:?}",
            pred.shape(),
            gt.shape(),
            valid.shape()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for ((&p, &g), &v) in pred.values().iter().zip(gt.values()).zip(valid.values()) {
        if !v || g == IGNORE {
            continue;
        }
        if g as usize >= k || p as usize >= k {
            return Err(Error::LabelDomain(format!("class {} is outside 0..{k}", g.max(p))));
        }
        cm.counts[g as usize * k + p as usize] += 1;
    }
    Ok(cm)
}

pub fn confusion(pred: &LabelRaster, gt: &LabelRaster, valid: &Grid<bool>, k: usize) -> Result<ConfusionMatrix> {
    confusion_grids(&pred.grid, &gt.grid, valid, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub gt_pixels: u64,
    pub pred_pixels: u64,
    /// False when the class is absent from both ground truth and prediction.
    pub included: bool,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.k)
        .map(|c| {
            let tp = cm.true_positives(c);
            let gt = cm.gt_support(c);
            let pred = cm.pred_support(c);
            let (fp, fn_) = (pred - tp, gt - tp);
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = ratio(2 * tp, 2 * tp + fp + fn_);
            ClassMetrics {
                precision,
                recall,
                f1,
                iou: ratio(tp, tp + fp + fn_),
                gt_pixels: gt,
                pred_pixels: pred,
                included: gt + pred > 0,
            }
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Score {
    F1,
    Iou,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `num / den` fractions. The exact rational sum is rounded once when
/// it fits in 53-bit integers, so e.g. the mean of 2/3 and 4/5 is exactly the
/// double nearest 11/15; otherwise the rounded terms are averaged.
fn mean_of_ratios(fracs: &[(u64, u64)]) -> f64 {
    const EXACT: u128 = 1 << 53;
    let exact = fracs.iter().try_fold((0u128, 1u128), |(n, d), &(a, b)| {
        let (a, b) = if b == 0 { (0, 1) } else { (a as u128, b as u128) };
        let num = n.checked_mul(b)?.checked_add(a.checked_mul(d)?)?;
        let den = d.checked_mul(b)?;
        let g = gcd(num, den).max(1);
        Some((num / g, den / g))
    });
    if let Some((n, d)) = exact {
        if let Some(d) = d.checked_mul(fracs.len() as u128) {
            let g = gcd(n, d).max(1);
            let (n, d) = (n / g, d / g);
            if n < EXACT && d < EXACT {
                return n as f64 / d as f64;
            }
        }
    }
    fracs.iter().map(|&(a, b)| ratio(a, b)).sum::<f64>() / fracs.len() as f64
}

fn macro_of(cm: &ConfusionMatrix, score: Score) -> Result<f64> {
    let fracs: Vec<(u64, u64)> = (0..cm.k)
        .filter(|&c| cm.gt_support(c) + cm.pred_support(c) > 0)
        .map(|c| {
            let tp = cm.true_positives(c);
            let wrong = cm.gt_support(c) + cm.pred_support(c) - 2 * tp;
            match score {
                Score::F1 => (2 * tp, 2 * tp + wrong),
                Score::Iou => (tp, tp + wrong),
            }
        })
        .collect();
    if fracs.is_empty() {
        return Err(Error::UndefinedMetric("no class has support in ground truth or prediction".into()));
    }
    Ok(mean_of_ratios(&fracs))
}

pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    macro_of(cm, Score::F1)
}

/// Per-class IoU (`None` for excluded classes) and their macro mean.
pub fn iou(cm: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let per = class_metrics(cm);
    let mean = macro_of(cm, Score::Iou)?;
    Ok((per.iter().map(|m| m.included.then_some(m.iou)).collect(), mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassMetrics>,
    pub macro_f1: f64,
    pub macro_iou: f64,
    /// IoU of class 1 for binary matrices.
    pub burned_iou: Option<f64>,
    pub pixels: u64,
    pub confusion: ConfusionMatrix,
}

pub fn evaluate(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let per_class = class_metrics(cm);
    Ok(EvalReport {
        macro_f1: macro_of(cm, Score::F1)?,
        macro_iou: macro_of(cm, Score::Iou)?,
        burned_iou: (cm.k == 2).then(|| per_class[1].iou),
        pixels: cm.total(),
        per_class,
        confusion: cm.clone(),
    })
}

/// Mean and sample (n - 1) standard deviation over runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self { mean, std, n })
    }

    pub fn single_run(&self) -> bool {
        self.n == 1
    }
}

impl std::fmt::Display for Summary {
    /// Percent points, as in `91.86 ± 0.30`.
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)?;
        if self.single_run() {
            f.write_str(" (single run)")?;
        }
        Ok(())
    }
}
