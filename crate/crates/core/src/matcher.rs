//! Optimal bipartite matching between entity tokens and ground-truth entities.

use thiserror::Error;

use crate::graph::RadiologyGraph;
use crate::tensor::Array;

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("{entities} ground-truth entities exceed the {tokens} available tokens")]
    TooManyEntities { entities: usize, tokens: usize },
}

/// Token/ground-truth assignment with its total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// `(token index, ground-truth entity index)`, sorted by entity index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

impl MatchResult {
    /// Token matched to each ground-truth entity, in entity order.
    pub fn tokens_by_entity(&self) -> Vec<usize> {
        self.pairs.iter().map(|&(tok, _)| tok).collect()
    }
}

/// Minimum-cost assignment of every row to a distinct column.
///
/// Shortest augmenting path with row/column potentials, `O(n^2 m)` for an
/// `n x m` matrix. Wide matrices assign every row; tall matrices are
/// solved transposed so every column is assigned. Returns `(row, col)`
/// pairs sorted by row and the total cost.
pub fn linear_assignment(cost: &[Vec<f64>]) -> (Vec<(usize, usize)>, f64) {
    let rows = cost.len();
    if rows == 0 {
        return (Vec::new(), 0.0);
    }
    let cols = cost[0].len();
    assert!(cost.iter().all(|r| r.len() == cols), "ragged cost matrix");
    if cols == 0 {
        return (Vec::new(), 0.0);
    }
    if rows > cols {
        let transposed: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        let (pairs, total) = linear_assignment(&transposed);
        let mut flipped: Vec<(usize, usize)> = pairs.into_iter().map(|(c, r)| (r, c)).collect();
        flipped.sort_unstable();
        return (flipped, total);
    }

    // 1-based potentials; column 0 is a virtual column holding the row
    // currently being inserted.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
    (pairs, total)
}

/// Matches tokens to ground-truth entities with
/// `cost(i, j) = -p_class[i][class_j] - p_uncertainty[i][unc_j]`.
pub fn hungarian_match(
    class_probs: &Array,
    uncertainty_probs: &Array,
    gt: &RadiologyGraph,
) -> Result<MatchResult, MatchError> {
    let tokens = class_probs.rows();
    let entities = gt.entities();
    if entities.len() > tokens {
        return Err(MatchError::TooManyEntities {
            entities: entities.len(),
            tokens,
        });
    }
    let cost: Vec<Vec<f64>> = entities
        .iter()
        .map(|e| {
            (0..tokens)
                .map(|tok| {
                    -class_probs.get(tok, e.class_id) - uncertainty_probs.get(tok, e.uncertainty.index())
                })
                .collect()
        })
        .collect();
    let (pairs, total_cost) = linear_assignment(&cost);
    Ok(MatchResult {
        pairs: pairs.into_iter().map(|(ent, tok)| (tok, ent)).collect(),
        total_cost,
    })
}
