//! Binary classification metrics.

use super::LearnError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(predictions: &[bool], truth: &[bool]) -> Result<Confusion, LearnError> {
        if predictions.len() != truth.len() {
            return Err(LearnError::LengthMismatch {
                predictions: predictions.len(),
                truth: truth.len(),
            });
        }
        let mut c = Confusion::default();
        for (&p, &t) in predictions.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Support-weighted mean of the positive-class and negative-class F1 scores.
/// A class with no support contributes zero weight.
pub fn weighted_f1(predictions: &[bool], truth: &[bool]) -> Result<f64, LearnError> {
    let c = Confusion::from_pairs(predictions, truth)?;
    Ok(weighted_f1_of(&c))
}

pub fn weighted_f1_of(c: &Confusion) -> f64 {
    let pos_support = c.tp + c.fn_;
    let neg_support = c.tn + c.fp;
    let total = pos_support + neg_support;
    if total == 0 {
        return 0.0;
    }
    // negative-class F1 treats negatives as the positive label
    let f1_pos = f1(c.tp, c.fp, c.fn_);
    let f1_neg = f1(c.tn, c.fn_, c.fp);
    (pos_support as f64 * f1_pos + neg_support as f64 * f1_neg) / total as f64
}
