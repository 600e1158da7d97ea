//! Micro precision/recall/F1 for graphs, BLEU-1 and ROUGE-L for report
//! text, and per-label binary F1.

use std::collections::{BTreeMap, HashMap};
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{RadiologyGraph, RelationType, Uncertainty};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{pred} predictions but {gt} ground-truth samples")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("sample {index} label set differs: {detail}")]
    LabelSetMismatch { index: usize, detail: String },
}

/// Counts with the rates derived from them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    /// Rates from pooled counts. An empty prediction set and an empty
    /// ground truth together score 1; any other undefined rate is 0.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        if tp + fp + fn_ == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
                tp,
                fp,
                fn_,
            };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }
}

/// Running TP/FP/FN totals.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// Multiset match: TP is the sum over keys of `min(pred, gt)`.
    pub fn add_multisets<K: Eq + Hash>(&mut self, pred: impl IntoIterator<Item = K>, gt: impl IntoIterator<Item = K>) {
        let mut pred_counts: HashMap<K, usize> = HashMap::new();
        let mut pred_total = 0;
        for k in pred {
            *pred_counts.entry(k).or_default() += 1;
            pred_total += 1;
        }
        let mut gt_total = 0;
        let mut tp = 0;
        for k in gt {
            gt_total += 1;
            if let Some(c) = pred_counts.get_mut(&k) {
                if *c > 0 {
                    *c -= 1;
                    tp += 1;
                }
            }
        }
        self.tp += tp;
        self.fp += pred_total - tp;
        self.fn_ += gt_total - tp;
    }

    pub fn prf(&self) -> Prf {
        Prf::from_counts(self.tp, self.fp, self.fn_)
    }
}

type EntityKey = (usize, Option<Uncertainty>);

fn entity_keys(g: &RadiologyGraph, with_uncertainty: bool) -> impl Iterator<Item = EntityKey> + '_ {
    g.entities()
        .iter()
        .map(move |e| (e.class_id, with_uncertainty.then_some(e.uncertainty)))
}

fn relation_keys(
    g: &RadiologyGraph,
    with_uncertainty: bool,
) -> impl Iterator<Item = (EntityKey, RelationType, EntityKey)> + '_ {
    g.relations().iter().map(move |r| {
        let key = |id: usize| {
            let e = g.entity(id);
            (e.class_id, with_uncertainty.then_some(e.uncertainty))
        };
        (key(r.head), r.kind, key(r.tail))
    })
}

fn check_lengths<A, B>(pred: &[A], gt: &[B]) -> Result<(), EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    Ok(())
}

/// Entity micro-PRF keyed by `(class, uncertainty)`.
pub fn entity_micro_prf(pred: &[RadiologyGraph], gt: &[RadiologyGraph]) -> Result<Prf, EvalError> {
    check_lengths(pred, gt)?;
    let mut c = Counts::default();
    for (p, g) in pred.iter().zip(gt) {
        c.add_multisets(entity_keys(p, true), entity_keys(g, true));
    }
    Ok(c.prf())
}

/// Relation micro-PRF keyed by `(head, type, tail)`. Endpoints are
/// `(class, uncertainty)` pairs, or the class alone when
/// `class_only` is set.
pub fn relation_micro_prf_with(
    pred: &[RadiologyGraph],
    gt: &[RadiologyGraph],
    class_only: bool,
) -> Result<Prf, EvalError> {
    check_lengths(pred, gt)?;
    let mut c = Counts::default();
    for (p, g) in pred.iter().zip(gt) {
        c.add_multisets(relation_keys(p, !class_only), relation_keys(g, !class_only));
    }
    Ok(c.prf())
}

pub fn relation_micro_prf(pred: &[RadiologyGraph], gt: &[RadiologyGraph]) -> Result<Prf, EvalError> {
    relation_micro_prf_with(pred, gt, false)
}

/// Entity and relation scores of a corpus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub entity: Prf,
    pub relation: Prf,
}

pub fn score_graphs(pred: &[RadiologyGraph], gt: &[RadiologyGraph], class_only: bool) -> Result<GraphReport, EvalError> {
    Ok(GraphReport {
        entity: entity_micro_prf(pred, gt)?,
        relation: relation_micro_prf_with(pred, gt, class_only)?,
    })
}

/// Lowercases, splits on whitespace and strips terminal punctuation from
/// each token; tokens that were pure punctuation are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.to_lowercase().trim_end_matches(|c: char| c.is_ascii_punctuation()).to_string())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Clipped unigram precision times `exp(min(0, 1 - |ref| / |cand|))`.
pub fn bleu1(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() {
        return 0.0;
    }
    let mut c = Counts::default();
    c.add_multisets(cand.iter(), refs.iter());
    let precision = c.tp as f64 / cand.len() as f64;
    let brevity = (1.0 - refs.len() as f64 / cand.len() as f64).min(0.0).exp();
    precision * brevity
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS-based F-measure.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refs = tokenize(reference);
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(&cand, &refs);
    if lcs == 0 {
        return 0.0;
    }
    let r = lcs as f64 / refs.len() as f64;
    let p = lcs as f64 / cand.len() as f64;
    2.0 * p * r / (p + r)
}

/// Positive/negative value per pathology label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelVector(pub BTreeMap<String, bool>);

impl LabelVector {
    pub fn get(&self, label: &str) -> Option<bool> {
        self.0.get(label).copied()
    }
}

/// Binary F1 of one label. `undefined` marks a label with no positives
/// among predictions or among ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    #[serde(flatten)]
    pub prf: Prf,
    pub undefined: bool,
}

pub fn chexpert_label_f1(
    pred: &[LabelVector],
    gt: &[LabelVector],
) -> Result<BTreeMap<String, LabelScore>, EvalError> {
    check_lengths(pred, gt)?;
    let mut counts: BTreeMap<String, Counts> = BTreeMap::new();
    if let Some(first) = gt.first() {
        for label in first.0.keys() {
            counts.insert(label.clone(), Counts::default());
        }
    }
    for (index, (p, g)) in pred.iter().zip(gt).enumerate() {
        let same_keys = p.0.len() == g.0.len() && p.0.keys().all(|k| g.0.contains_key(k));
        let consistent = g.0.len() == counts.len() && g.0.keys().all(|k| counts.contains_key(k));
        if !same_keys || !consistent {
            let names = |v: &LabelVector| v.0.keys().cloned().collect::<Vec<_>>().join(",");
            return Err(EvalError::LabelSetMismatch {
                index,
                detail: format!("predicted [{}] vs ground truth [{}]", names(p), names(g)),
            });
        }
        for (label, &truth) in &g.0 {
            let guess = p.0[label];
            let c = counts.get_mut(label).expect("checked above");
            match (guess, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    Ok(counts
        .into_iter()
        .map(|(label, c)| {
            let undefined = c.tp + c.fp == 0 || c.tp + c.fn_ == 0;
            let prf = if undefined && c.tp + c.fp + c.fn_ == 0 {
                Prf {
                    precision: 0.0,
                    recall: 0.0,
                    f1: 0.0,
                    tp: 0,
                    fp: 0,
                    fn_: 0,
                }
            } else {
                c.prf()
            };
            (label, LabelScore { prf, undefined })
        })
        .collect())
}
