//! Training objectives: focal entity-class loss, uncertainty cross-entropy,
//! node-class supervision on assimilation coefficients, and the stochastic
//! relation loss over sampled edges.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::graph::RadiologyGraph;
use crate::matcher::MatchResult;
use crate::model::{StepScores, NO_RELATION};
use crate::nn::{ordered_pairs, pair_index};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("non-finite {part} loss ({value})")]
    NonFinite { part: &'static str, value: f64 },
}

/// Weights of the three loss groups. The node-class supervision shares the
/// entity-class weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub entity_class: f64,
    pub uncertainty: f64,
    pub relation: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            entity_class: 1.0,
            uncertainty: 1.0,
            relation: 3.0,
        }
    }
}

/// Foreground:background ratio of supervised edges.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeRatio {
    pub foreground: usize,
    pub background: usize,
}

impl Default for EdgeRatio {
    fn default() -> Self {
        Self {
            foreground: 1,
            background: 3,
        }
    }
}

impl EdgeRatio {
    /// Background edges to draw: `ceil(bg/fg * max(n_fg, 1))`, capped by
    /// availability.
    pub fn background_count(self, foreground: usize, available: usize) -> usize {
        let fg = foreground.max(1);
        let wanted = (self.background * fg).div_ceil(self.foreground.max(1));
        wanted.min(available)
    }
}

/// Scalar values of the individual loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub focal: f64,
    pub aecs: f64,
    pub uncertainty: f64,
    pub relation: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights) -> f64 {
        w.entity_class * (self.focal + self.aecs) + w.uncertainty * self.uncertainty + w.relation * self.relation
    }

    fn check_finite(&self) -> Result<(), LossError> {
        for (part, value) in [
            ("focal", self.focal),
            ("aecs", self.aecs),
            ("uncertainty", self.uncertainty),
            ("relation", self.relation),
        ] {
            if !value.is_finite() {
                return Err(LossError::NonFinite { part, value });
            }
        }
        Ok(())
    }
}

/// Differentiable loss terms of one sample.
#[derive(Clone, Copy)]
pub struct LossTerms<'a> {
    pub focal: Var<'a>,
    pub aecs: Var<'a>,
    pub uncertainty: Var<'a>,
    pub relation: Var<'a>,
}

impl<'a> LossTerms<'a> {
    pub fn parts(&self) -> LossParts {
        LossParts {
            focal: self.focal.item(),
            aecs: self.aecs.item(),
            uncertainty: self.uncertainty.item(),
            relation: self.relation.item(),
        }
    }
}

/// `w_cls (focal + aecs) + w_unc unc + w_rel rel`; fails on any non-finite term.
pub fn total_loss<'a>(terms: &LossTerms<'a>, weights: &LossWeights) -> Result<Var<'a>, LossError> {
    terms.parts().check_finite()?;
    Ok(terms
        .focal
        .add(terms.aecs)
        .scale(weights.entity_class)
        .add(terms.uncertainty.scale(weights.uncertainty))
        .add(terms.relation.scale(weights.relation)))
}

/// Log-probabilities of the target column in each row, shape `[rows]`.
fn target_log_probs<'a>(logits: Var<'a>, targets: &[usize]) -> Var<'a> {
    assert_eq!(logits.rows(), targets.len(), "one target per row");
    let cols = logits.cols();
    let index = targets
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            assert!(c < cols, "target {c} out of range for {cols} classes");
            r * cols + c
        })
        .collect();
    logits.log_softmax().gather(index, vec![targets.len()])
}

/// Mean negative log-likelihood of `targets` under row-wise softmax;
/// zero when there are no rows.
pub fn cross_entropy<'a>(logits: Var<'a>, targets: &[usize]) -> Var<'a> {
    target_log_probs(logits, targets).mean().scale(-1.0)
}

/// Mean over rows of `-(1 - p_t)^gamma ln p_t`.
pub fn focal_loss<'a>(logits: Var<'a>, targets: &[usize], gamma: f64) -> Var<'a> {
    assert!(gamma >= 0.0, "focal gamma must be non-negative");
    let log_p = target_log_probs(logits, targets);
    if gamma == 0.0 {
        return log_p.mean().scale(-1.0);
    }
    let modulator = log_p.exp().affine(-1.0, 1.0).powf(gamma);
    modulator.mul(log_p).mean().scale(-1.0)
}

/// Per-token class targets: the matched ground-truth class, or the
/// trailing no-entity class for unmatched tokens.
pub fn entity_class_targets(tokens: usize, background: usize, matching: &MatchResult, gt: &RadiologyGraph) -> Vec<usize> {
    let mut targets = vec![background; tokens];
    for &(tok, ent) in &matching.pairs {
        targets[tok] = gt.entity(ent).class_id;
    }
    targets
}

/// Uncertainty cross-entropy over matched tokens only.
pub fn uncertainty_ce_loss<'a>(uncertainty_logits: Var<'a>, matching: &MatchResult, gt: &RadiologyGraph) -> Var<'a> {
    let rows = matching.tokens_by_entity();
    let targets: Vec<usize> = matching
        .pairs
        .iter()
        .map(|&(_, ent)| gt.entity(ent).uncertainty.index())
        .collect();
    cross_entropy(uncertainty_logits.select_rows(&rows), &targets)
}

/// Cross-entropy of node coefficients against the ground-truth classes of
/// the selected nodes, averaged over nodes and steps. Node `i` of the
/// relation graph is ground-truth entity `i`. Zero when no step has node
/// scores.
pub fn aecs_loss<'a>(t: &'a Tape<'a>, steps: &[StepScores<'a>], gt: &RadiologyGraph) -> Var<'a> {
    let targets: Vec<usize> = gt.entities().iter().map(|e| e.class_id).collect();
    let per_step: Vec<Var<'a>> = steps
        .iter()
        .filter_map(|s| s.nodes)
        .map(|nodes| cross_entropy(nodes, &targets))
        .collect();
    mean_of(t, &per_step)
}

/// Edge class of every ordered pair of ground-truth entities, in
/// row-major pair order. Pairs carrying several relation types use the
/// lowest type index.
pub fn relation_targets(gt: &RadiologyGraph) -> Vec<usize> {
    let k = gt.entities().len();
    let mut targets = vec![NO_RELATION; ordered_pairs(k).len()];
    for r in gt.relations() {
        let slot = &mut targets[pair_index(k, r.head, r.tail)];
        *slot = (*slot).min(r.kind.index());
    }
    targets
}

/// Edge rows supervised by the relation loss: every foreground edge plus
/// a without-replacement sample of background edges, returned in
/// ascending row order.
pub fn sample_relation_edges<R: Rng + ?Sized>(targets: &[usize], ratio: EdgeRatio, rng: &mut R) -> Vec<usize> {
    let (fg, bg): (Vec<usize>, Vec<usize>) = (0..targets.len()).partition(|&i| targets[i] != NO_RELATION);
    let count = ratio.background_count(fg.len(), bg.len());
    let mut picked: Vec<usize> = fg;
    picked.extend(sample(rng, bg.len(), count).into_iter().map(|i| bg[i]));
    picked.sort_unstable();
    picked
}

/// Edge cross-entropy over the supervised rows, averaged over steps.
pub fn stochastic_relation_loss<'a>(
    t: &'a Tape<'a>,
    steps: &[StepScores<'a>],
    targets: &[usize],
    supervised: &[usize],
) -> Var<'a> {
    if supervised.is_empty() {
        return t.scalar(0.0);
    }
    let picked: Vec<usize> = supervised.iter().map(|&i| targets[i]).collect();
    let per_step: Vec<Var<'a>> = steps
        .iter()
        .map(|s| cross_entropy(s.edges.select_rows(supervised), &picked))
        .collect();
    mean_of(t, &per_step)
}

fn mean_of<'a>(t: &'a Tape<'a>, terms: &[Var<'a>]) -> Var<'a> {
    match terms {
        [] => t.scalar(0.0),
        [only] => *only,
        _ => {
            let n = terms.len() as f64;
            let reshaped: Vec<Var<'a>> = terms.iter().map(|v| v.reshape(vec![1, 1])).collect();
            t.concat(&reshaped).sum().scale(1.0 / n)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;
    use crate::graph::{Relation, RelationType, Uncertainty};
    use crate::tensor::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn eval(logits: Vec<Vec<f64>>, f: impl for<'a> Fn(Var<'a>) -> Var<'a>) -> f64 {
        let store = ParamStore::new();
        let t = Tape::new(&store);
        f(t.constant(Array::from_rows(&logits))).item()
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let v = eval(vec![vec![0.0, 0.0]], |x| focal_loss(x, &[1], 0.0));
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn focal_gamma_two() {
        let p: f64 = 0.9;
        let logits = vec![vec![p.ln(), (1.0 - p).ln()]];
        let v = eval(logits, |x| focal_loss(x, &[0], 2.0));
        assert!((v - 0.01 * -(0.9f64.ln())).abs() < 1e-12, "{v}");
        assert!((v - 0.0010536).abs() < 1e-7);
    }

    #[test]
    fn focal_vanishes_when_confident() {
        let v = eval(vec![vec![50.0, 0.0, 0.0]], |x| focal_loss(x, &[0], 2.0));
        assert!(v < 1e-40);
    }

    #[test]
    fn uniform_cross_entropy_is_ln_classes() {
        let v = eval(vec![vec![0.0; 3]; 4], |x| cross_entropy(x, &[0, 1, 2, 0]));
        assert!((v - 3f64.ln()).abs() < 1e-15);
        let v = eval(vec![vec![1.0; 12]], |x| cross_entropy(x, &[7]));
        assert!((v - 12f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn empty_cross_entropy_is_zero() {
        let store = ParamStore::new();
        let t = Tape::new(&store);
        let x = t.constant(Array::zeros(&[0, 3]));
        assert_eq!(cross_entropy(x, &[]).item(), 0.0);
    }

    #[test]
    fn total_applies_weights() {
        let parts = LossParts {
            focal: 0.2,
            aecs: 0.0,
            uncertainty: 0.3,
            relation: 0.1,
        };
        assert!((parts.total(&LossWeights::default()) - 0.8).abs() < 1e-15);
        assert_eq!(LossParts::default().total(&LossWeights::default()), 0.0);
    }

    #[test]
    fn total_rejects_non_finite() {
        let store = ParamStore::new();
        let t = Tape::new(&store);
        let terms = LossTerms {
            focal: t.scalar(0.1),
            aecs: t.scalar(0.0),
            uncertainty: t.scalar(f64::NAN),
            relation: t.scalar(0.0),
        };
        match total_loss(&terms, &LossWeights::default()) {
            Err(LossError::NonFinite { part, .. }) => assert_eq!(part, "uncertainty"),
            _ => panic!("expected non-finite error"),
        }
    }

    #[test]
    fn background_counts() {
        let r = EdgeRatio::default();
        assert_eq!(r.background_count(5, 100), 15);
        assert_eq!(r.background_count(0, 10), 3);
        assert_eq!(r.background_count(2, 3), 3);
    }

    #[test]
    fn relation_targets_and_sampling() {
        let g = RadiologyGraph::new(
            &[
                (0, Uncertainty::DefinitelyPresent),
                (1, Uncertainty::DefinitelyPresent),
                (2, Uncertainty::Uncertain),
            ],
            vec![
                Relation::new(0, 1, RelationType::LocatedAt),
                Relation::new(2, 0, RelationType::SuggestiveOf),
            ],
            3,
        )
        .unwrap();
        // pairs: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        let targets = relation_targets(&g);
        assert_eq!(targets, vec![1, 3, 3, 3, 2, 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picked = sample_relation_edges(&targets, EdgeRatio::default(), &mut rng);
        // 2 fg, 4 bg available, 6 wanted -> everything
        assert_eq!(picked, vec![0, 1, 2, 3, 4, 5]);
    }
}
