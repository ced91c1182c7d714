//! Classification scores over a label space.
//!
//! Predictions are `Option<Stance>`: `None` is an unresolved answer. An
//! unresolved prediction, or one outside the label space, is a false
//! negative for the true class and a false positive for no class.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stance::{LabelSpace, Stance};

/// Per-class counts in label-space order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

fn check(predictions: &[Option<Stance>], truths: &[Stance]) -> Result<()> {
    if predictions.len() != truths.len() {
        return Err(Error::Metric(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Metric("no items to score".into()));
    }
    Ok(())
}

pub fn class_counts(predictions: &[Option<Stance>], truths: &[Stance], space: LabelSpace) -> ClassCounts {
    let k = space.len();
    let pos = |s: Stance| space.stances().iter().position(|x| *x == s);
    let mut c = ClassCounts {
        tp: vec![0; k],
        fp: vec![0; k],
        fn_: vec![0; k],
    };
    for (p, t) in predictions.iter().zip(truths) {
        let ti = pos(*t);
        let pi = p.and_then(pos);
        match (pi, ti) {
            (Some(a), Some(b)) if a == b => c.tp[a] += 1,
            (a, b) => {
                if let Some(a) = a {
                    c.fp[a] += 1;
                }
                if let Some(b) = b {
                    c.fn_[b] += 1;
                }
            }
        }
    }
    c
}

/// Unweighted mean of per-class F1 over the whole label space. A class
/// absent from both truths and predictions contributes 0.
pub fn macro_f1(predictions: &[Option<Stance>], truths: &[Stance], space: LabelSpace) -> Result<f64> {
    check(predictions, truths)?;
    let c = class_counts(predictions, truths, space);
    let sum: f64 = (0..space.len())
        .map(|i| {
            let denom = 2 * c.tp[i] + c.fp[i] + c.fn_[i];
            if denom == 0 {
                0.0
            } else {
                2.0 * c.tp[i] as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / space.len() as f64)
}

pub fn accuracy(predictions: &[Option<Stance>], truths: &[Stance]) -> Result<f64> {
    check(predictions, truths)?;
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, t)| **p == Some(**t))
        .count();
    Ok(hits as f64 / truths.len() as f64)
}

/// Recall per class present in the truths; classes with no true instances
/// are left out.
pub fn per_class_recall(
    predictions: &[Option<Stance>],
    truths: &[Stance],
    space: LabelSpace,
) -> Result<BTreeMap<Stance, f64>> {
    check(predictions, truths)?;
    let c = class_counts(predictions, truths, space);
    Ok(space
        .stances()
        .iter()
        .enumerate()
        .filter(|(i, _)| c.tp[*i] + c.fn_[*i] > 0)
        .map(|(i, s)| (*s, c.tp[i] as f64 / (c.tp[i] + c.fn_[i]) as f64))
        .collect())
}

/// Share of Neutral among the truths.
pub fn neutral_base_rate(truths: &[Stance]) -> f64 {
    if truths.is_empty() {
        return 0.0;
    }
    truths.iter().filter(|t| **t == Stance::Neutral).count() as f64 / truths.len() as f64
}

/// Drops items whose truth is Neutral and rescores over Yes/No; a Neutral
/// prediction on a remaining item is wrong. Returns `(macro_f1, accuracy)`.
pub fn drop_neutral_rescore(predictions: &[Option<Stance>], truths: &[Stance]) -> Result<(f64, f64)> {
    check(predictions, truths)?;
    let (p, t): (Vec<Option<Stance>>, Vec<Stance>) = predictions
        .iter()
        .zip(truths)
        .filter(|(_, t)| **t != Stance::Neutral)
        .map(|(p, t)| (*p, *t))
        .unzip();
    if t.is_empty() {
        return Err(Error::Metric("every truth is Neutral".into()));
    }
    Ok((macro_f1(&p, &t, LabelSpace::Binary)?, accuracy(&p, &t)?))
}

/// Counts `[truth][prediction]` over the label space, with a final column
/// for unresolved predictions.
pub fn confusion_matrix(predictions: &[Option<Stance>], truths: &[Stance], space: LabelSpace) -> Vec<Vec<usize>> {
    let k = space.len();
    let pos = |s: Stance| space.stances().iter().position(|x| *x == s);
    let mut m = vec![vec![0; k + 1]; k];
    for (p, t) in predictions.iter().zip(truths) {
        if let Some(ti) = pos(*t) {
            m[ti][p.and_then(pos).unwrap_or(k)] += 1;
        }
    }
    m
}

/// Scores of one evaluation run of one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScores {
    pub unit_id: String,
    pub method: String,
    /// 1-based.
    pub run_index: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub per_class_recall: BTreeMap<Stance, f64>,
    pub neutral_base_rate: f64,
    /// Test question id -> predicted stance.
    #[serde(default)]
    pub predictions: BTreeMap<String, Option<Stance>>,
}

impl RunScores {
    pub fn score(
        unit_id: &str,
        method: &str,
        run_index: usize,
        question_ids: &[&str],
        predictions: &[Option<Stance>],
        truths: &[Stance],
        space: LabelSpace,
    ) -> Result<RunScores> {
        Ok(RunScores {
            unit_id: unit_id.to_string(),
            method: method.to_string(),
            run_index,
            macro_f1: macro_f1(predictions, truths, space)?,
            accuracy: accuracy(predictions, truths)?,
            per_class_recall: per_class_recall(predictions, truths, space)?,
            neutral_base_rate: neutral_base_rate(truths),
            predictions: question_ids
                .iter()
                .map(|q| q.to_string())
                .zip(predictions.iter().copied())
                .collect(),
        })
    }
}
