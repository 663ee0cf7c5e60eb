//! Ranking and thresholded metrics for binary fraud scores.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_DE_PRECISION: f64 = 0.9;
pub const DEFAULT_TARGET_PRECISIONS: [f64; 3] = [0.8, 0.9, 0.95];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Predicts positive when `score >= threshold`.
    pub fn at(scores: &[f64], labels: &[bool], threshold: f64) -> Self {
        let mut c = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= threshold, y) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallAtPrecision {
    pub precision: f64,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsBundle {
    pub auc: f64,
    pub positives: usize,
    pub negatives: usize,
    pub pr_points: Vec<PrPoint>,
    pub recall_at_precision: Vec<RecallAtPrecision>,
    pub threshold: f64,
    pub confusion: Confusion,
    pub f1_at_threshold: f64,
    pub best_f1_threshold: f64,
    pub best_f1: f64,
    pub de_threshold: f64,
    pub de_confusion: Confusion,
    pub detection_expansion: f64,
}

impl MetricsBundle {
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn write_pr_csv<W: Write>(&self, w: W) -> Result<()> {
        write_pr_csv(&self.pr_points, w)
    }
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], mut w: W) -> Result<()> {
    writeln!(w, "threshold,precision,recall")?;
    for p in points {
        writeln!(w, "{},{},{}", p.threshold, p.precision, p.recall)?;
    }
    Ok(())
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::usage(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::usage("scores must not be NaN"));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::usage("metric needs both classes present"));
    }
    Ok((pos, neg))
}

fn descending_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Mann-Whitney AUC: the probability that a random positive outscores a
/// random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the positive rank sum, with tied groups sharing their mean rank
    let mut rank_sum2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k]).count() as u128;
        // ranks i+1..=j have mean (i+1+j)/2
        rank_sum2 += pos_in_group * (i as u128 + 1 + j as u128);
        i = j;
    }
    let u2 = rank_sum2 - (pos as u128) * (pos as u128 + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// One point per distinct score, thresholds descending.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check(scores, labels)?;
    let order = descending_order(scores);
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint { threshold: t, precision: ratio(tp, tp + fp), recall: ratio(tp, pos) });
    }
    Ok(points)
}

fn best_point_at_precision(points: &[PrPoint], target: f64) -> Option<PrPoint> {
    points.iter().filter(|p| p.precision >= target).fold(None, |best: Option<PrPoint>, p| match best {
        Some(b) if b.recall >= p.recall => Some(b),
        _ => Some(*p),
    })
}

/// Largest recall over thresholds whose precision reaches `target`, or 0.
pub fn recall_at_precision(scores: &[f64], labels: &[bool], target: f64) -> Result<f64> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::usage("target precision must be in (0, 1]"));
    }
    let points = pr_curve(scores, labels)?;
    Ok(best_point_at_precision(&points, target).map_or(0.0, |p| p.recall))
}

/// `(FP + TP + FN) / (TP + FN)`: size of the flagged-or-missed set relative
/// to the labeled fraud set.
pub fn detection_expansion(tp: usize, fp: usize, fn_: usize) -> Result<f64> {
    if tp + fn_ == 0 {
        return Err(Error::usage("detection expansion needs at least one positive"));
    }
    Ok((fp + tp + fn_) as f64 / (tp + fn_) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub threshold: f64,
    pub target_precisions: Vec<f64>,
    /// Operating point for detection expansion: the threshold with the
    /// highest recall at this precision, else `threshold`.
    pub de_precision: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            target_precisions: DEFAULT_TARGET_PRECISIONS.to_vec(),
            de_precision: DEFAULT_DE_PRECISION,
        }
    }
}

pub fn evaluate(scores: &[f64], labels: &[bool], config: &EvalConfig) -> Result<MetricsBundle> {
    let (positives, negatives) = check(scores, labels)?;
    let pr_points = pr_curve(scores, labels)?;
    let recall_at_precision = config
        .target_precisions
        .iter()
        .map(|&p| {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::usage("target precision must be in (0, 1]"));
            }
            let recall = best_point_at_precision(&pr_points, p).map_or(0.0, |b| b.recall);
            Ok(RecallAtPrecision { precision: p, recall })
        })
        .collect::<Result<Vec<_>>>()?;
    let confusion = Confusion::at(scores, labels, config.threshold);
    let (mut best_f1, mut best_f1_threshold) = (0.0, config.threshold);
    for p in &pr_points {
        let f1 = Confusion::at(scores, labels, p.threshold).f1();
        if f1 > best_f1 {
            best_f1 = f1;
            best_f1_threshold = p.threshold;
        }
    }
    let de_threshold =
        best_point_at_precision(&pr_points, config.de_precision).map_or(config.threshold, |p| p.threshold);
    let de_confusion = Confusion::at(scores, labels, de_threshold);
    let detection_expansion = detection_expansion(de_confusion.tp, de_confusion.fp, de_confusion.fn_)?;
    Ok(MetricsBundle {
        auc: auc(scores, labels)?,
        positives,
        negatives,
        pr_points,
        recall_at_precision,
        threshold: config.threshold,
        f1_at_threshold: confusion.f1(),
        confusion,
        best_f1_threshold,
        best_f1,
        de_threshold,
        de_confusion,
        detection_expansion,
    })
}
