//! Turning head outputs and edge coefficients into a [`RadiologyGraph`].

use std::collections::{BTreeSet, HashMap};

use crate::graph::{RadiologyGraph, Relation, RelationType, Uncertainty};
use crate::nn::ordered_pairs;
use crate::tensor::Array;

/// Tokens whose class argmax is not the trailing no-entity column.
pub fn valid_tokens(class_logits: &Array) -> Vec<usize> {
    let background = class_logits.cols() - 1;
    (0..class_logits.rows())
        .filter(|&r| class_logits.argmax_row(r) != background)
        .collect()
}

/// Builds the predicted graph.
///
/// `class_logits` is `[N, C+1]` and `uncertainty_logits` `[N, 3]`.
/// `edge_coefficients` has one row per ordered pair of valid tokens (in
/// row-major order over the valid-token list) with the no-relation class
/// last. Tokens sharing a `(class, uncertainty)` pair collapse into one
/// entity that keeps the union of their relations; self-loops created by
/// the merge and repeated triples are dropped.
pub fn decode_graph(
    class_logits: &Array,
    uncertainty_logits: &Array,
    edge_coefficients: Option<&Array>,
) -> RadiologyGraph {
    let class_count = class_logits.cols() - 1;
    let valid = valid_tokens(class_logits);
    let mut keys: Vec<(usize, Uncertainty)> = Vec::new();
    let mut key_ids: HashMap<(usize, Uncertainty), usize> = HashMap::new();
    let mut node_of = Vec::with_capacity(valid.len());
    for &tok in &valid {
        let class_id = class_logits.argmax_row(tok);
        let unc = Uncertainty::from_index(uncertainty_logits.argmax_row(tok)).expect("three uncertainty columns");
        let id = *key_ids.entry((class_id, unc)).or_insert_with(|| {
            keys.push((class_id, unc));
            keys.len() - 1
        });
        node_of.push(id);
    }

    let mut relations = BTreeSet::new();
    if let Some(coef) = edge_coefficients {
        let pairs = ordered_pairs(valid.len());
        assert_eq!(coef.rows(), pairs.len(), "one coefficient row per ordered valid pair");
        for (row, (i, j)) in pairs.into_iter().enumerate() {
            let Some(kind) = RelationType::from_index(coef.argmax_row(row)) else {
                continue;
            };
            let (h, t) = (node_of[i], node_of[j]);
            if h != t {
                relations.insert(Relation::new(h, t, kind));
            }
        }
    }
    RadiologyGraph::new(&keys, relations.into_iter().collect(), class_count)
        .expect("decoded graph satisfies invariants by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_rows(rows: &[usize], cols: usize) -> Array {
        let mut a = Array::zeros(&[rows.len(), cols]);
        for (r, &c) in rows.iter().enumerate() {
            a.data_mut()[r * cols + c] = 5.0;
        }
        a
    }

    #[test]
    fn all_background_is_empty() {
        let cls = one_hot_rows(&[3, 3, 3], 4);
        let unc = one_hot_rows(&[0, 0, 0], 3);
        assert!(decode_graph(&cls, &unc, None).is_empty());
    }

    #[test]
    fn one_directed_relation() {
        let cls = one_hot_rows(&[0, 3, 1], 4);
        let unc = one_hot_rows(&[0, 0, 1], 3);
        // valid tokens 0 and 2 -> pairs (0,1), (1,0)
        let coef = one_hot_rows(&[1, 3], 4);
        let g = decode_graph(&cls, &unc, Some(&coef));
        assert_eq!(g.entities().len(), 2);
        assert_eq!(g.relations(), &[Relation::new(0, 1, RelationType::LocatedAt)]);
    }

    #[test]
    fn duplicates_merge_with_union_of_edges() {
        // tokens 0 and 2 are both (class 0, DP); token 1 is (class 1, DP)
        let cls = one_hot_rows(&[0, 1, 0], 3);
        let unc = one_hot_rows(&[0, 0, 0], 3);
        // pairs: (0,1) (0,2) (1,0) (1,2) (2,0) (2,1)
        let coef = one_hot_rows(&[1, 0, 3, 2, 3, 0], 4);
        let g = decode_graph(&cls, &unc, Some(&coef));
        assert_eq!(g.entities().len(), 2);
        assert_eq!(
            g.relations(),
            &[
                Relation::new(0, 1, RelationType::Modify),
                Relation::new(0, 1, RelationType::LocatedAt),
                Relation::new(1, 0, RelationType::SuggestiveOf),
            ]
        );
    }
}
