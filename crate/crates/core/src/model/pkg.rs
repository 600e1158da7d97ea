//! Prior-knowledge integration: the initial embedding graph, the graph
//! transformer stack, and schemata-based assimilation.
//!
//! Nodes are the selected entity tokens. Every ordered pair `(i, j)`,
//! `i != j`, gets an edge feature projected from
//! `concat(ent_i, rln, ent_j)`, giving a fully connected bi-directional
//! graph. After the graph transformer layers, each assimilation step lets
//! node (edge) features attend over the per-class node (edge) schemata:
//! the attention coefficients are the classification output of that step
//! and the attended schema values are added back onto the features.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::nn::{dense_edge_index, ordered_pairs, uniform, FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::Array;

use super::decoder::TokenSet;
use super::{ModelError, RELATION_CLASSES};

/// Node and edge features of the embedding graph.
#[derive(Clone, Copy)]
pub struct InitialGraph<'a> {
    /// `[K, d]`
    pub nodes: Var<'a>,
    /// `[K(K-1), d]`, rows in [`ordered_pairs`] order.
    pub edges: Var<'a>,
    pub node_count: usize,
}

/// Classification scores (pre-softmax) for one readout step.
#[derive(Clone, Copy)]
pub struct StepScores<'a> {
    /// `[K, C]`; `None` when the relation path classifies edges only.
    pub nodes: Option<Var<'a>>,
    /// `[K(K-1), 4]`, last column is "no relation".
    pub edges: Var<'a>,
}

impl<'a> StepScores<'a> {
    /// Node attention coefficients (row-stochastic).
    pub fn node_coefficients(&self) -> Option<Var<'a>> {
        self.nodes.map(Var::softmax)
    }

    pub fn edge_coefficients(&self) -> Var<'a> {
        self.edges.softmax()
    }
}

/// `concat(a_i, r, b_j)` for every ordered pair of selected tokens.
pub(crate) fn pair_features<'a>(t: &'a Tape<'a>, tokens: &TokenSet<'a>, selection: &[usize]) -> Var<'a> {
    let pairs = ordered_pairs(selection.len());
    let heads: Vec<usize> = pairs.iter().map(|&(i, _)| selection[i]).collect();
    let tails: Vec<usize> = pairs.iter().map(|&(_, j)| selection[j]).collect();
    let rln = tokens.relation.select_rows(&vec![0; pairs.len()]);
    t.concat(&[tokens.entities.select_rows(&heads), rln, tokens.entities.select_rows(&tails)])
}

/// One graph transformer layer with edge-biased node attention and an edge
/// update from the refreshed endpoint features.
#[derive(Clone, Debug)]
pub struct GraphTransformerLayer {
    attention: MultiHeadAttention,
    edge_key: Linear,
    edge_score: ParamId,
    node_norm: LayerNorm,
    node_ffn: FeedForward,
    node_ffn_norm: LayerNorm,
    edge_input: Linear,
    edge_norm: LayerNorm,
    edge_ffn: FeedForward,
    heads: usize,
}

impl GraphTransformerLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = (3.0 / d as f64).sqrt();
        Self {
            attention: MultiHeadAttention::new(store, &format!("{name}.attention"), d, heads, rng),
            edge_key: Linear::without_bias(store, &format!("{name}.edge_key"), d, d, rng),
            edge_score: store.add(format!("{name}.edge_score"), uniform(rng, &[d], bound)),
            node_norm: LayerNorm::new(store, &format!("{name}.node_norm"), d),
            node_ffn: FeedForward::new(store, &format!("{name}.node_ffn"), d, ffn_dim, d, rng),
            node_ffn_norm: LayerNorm::new(store, &format!("{name}.node_ffn_norm"), d),
            edge_input: Linear::new(store, &format!("{name}.edge_input"), 3 * d, d, rng),
            edge_norm: LayerNorm::new(store, &format!("{name}.edge_norm"), d),
            edge_ffn: FeedForward::new(store, &format!("{name}.edge_ffn"), d, ffn_dim, d, rng),
            heads,
        }
    }

    /// Node scores for pair `(i, j)` are `q_i·k_j/√d_head + w_e·(W_e e_ij)`
    /// per head; self pairs carry no edge term.
    pub fn forward<'a>(&self, t: &'a Tape<'a>, nodes: Var<'a>, edges: Var<'a>, k: usize) -> (Var<'a>, Var<'a>) {
        let d = nodes.cols();
        let dh = d / self.heads;
        let mut head_sum = Array::zeros(&[d, self.heads]);
        for c in 0..d {
            head_sum.data_mut()[c * self.heads + c / dh] = 1.0;
        }
        let per_head = self
            .edge_key
            .forward(t, edges)
            .mul(t.param(self.edge_score))
            .matmul(t.constant(head_sum));
        let bias: Vec<Var<'a>> = (0..self.heads)
            .map(|h| per_head.gather(dense_edge_index(k, self.heads, h), vec![k, k]))
            .collect();
        let att = self.attention.forward(t, nodes, nodes, nodes, Some(&bias));
        let n1 = self.node_norm.forward(t, nodes.add(att.output));
        let n2 = self.node_ffn_norm.forward(t, n1.add(self.node_ffn.forward(t, n1)));

        if k < 2 {
            return (n2, edges);
        }
        let pairs = ordered_pairs(k);
        let heads: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
        let tails: Vec<usize> = pairs.iter().map(|&(_, j)| j).collect();
        let joined = t.concat(&[n2.select_rows(&heads), edges, n2.select_rows(&tails)]);
        let update = self
            .edge_ffn
            .forward(t, self.edge_norm.forward(t, self.edge_input.forward(t, joined)));
        (n2, edges.add(update))
    }
}

/// Attention of features over a set of schema rows.
#[derive(Clone, Debug)]
pub struct Assimilator {
    query: Linear,
    key: Linear,
    value: Linear,
}

impl Assimilator {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::without_bias(store, &format!("{name}.query"), d, d, rng),
            key: Linear::without_bias(store, &format!("{name}.key"), d, d, rng),
            value: Linear::without_bias(store, &format!("{name}.value"), d, d, rng),
        }
    }

    /// Returns `(scores, features')` with
    /// `softmax(scores) = softmax((F Wq)(S Wk)^T / √d)` and
    /// `features' = F + softmax(scores) (S Wv)`.
    pub fn step<'a>(&self, t: &'a Tape<'a>, features: Var<'a>, schemata: Var<'a>) -> (Var<'a>, Var<'a>) {
        let d = features.cols();
        let scores = self
            .query
            .forward(t, features)
            .matmul_t(self.key.forward(t, schemata))
            .scale(1.0 / (d as f64).sqrt());
        let propagated = scores.softmax().matmul(self.value.forward(t, schemata));
        (scores, features.add(propagated))
    }
}

/// Per-class schemata with their node and edge assimilators.
#[derive(Clone, Debug)]
pub struct Assimilation {
    pub node_schemata: ParamId,
    pub edge_schemata: ParamId,
    node: Assimilator,
    edge: Assimilator,
}

#[derive(Clone, Debug)]
enum Readout {
    Assimilation(Assimilation),
    /// Linear classifiers on the graph transformer outputs.
    Linear { node: Linear, edge: Linear },
}

/// The embedding-graph path: edge projection, graph transformers, readout.
#[derive(Clone, Debug)]
pub struct PkgIntegration {
    edge_projection: FeedForward,
    layers: Vec<GraphTransformerLayer>,
    readout: Readout,
    steps: usize,
}

impl PkgIntegration {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        d: usize,
        heads: usize,
        ffn_dim: usize,
        gt_layers: usize,
        classes: usize,
        steps: usize,
        with_schemata: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let edge_projection = FeedForward::new(store, "pkg.edge_projection", 3 * d, d, d, rng);
        let layers = (0..gt_layers)
            .map(|i| GraphTransformerLayer::new(store, &format!("pkg.graph_transformer.{i}"), d, heads, ffn_dim, rng))
            .collect();
        let readout = if with_schemata {
            Readout::Assimilation(Assimilation {
                node_schemata: store.add("pkg.schemata.nodes", uniform(rng, &[classes, d], 3f64.sqrt())),
                edge_schemata: store.add(
                    "pkg.schemata.edges",
                    uniform(rng, &[RELATION_CLASSES, d], 3f64.sqrt()),
                ),
                node: Assimilator::new(store, "pkg.assimilation.nodes", d, rng),
                edge: Assimilator::new(store, "pkg.assimilation.edges", d, rng),
            })
        } else {
            Readout::Linear {
                node: Linear::new(store, "pkg.readout.nodes", d, classes, rng),
                edge: Linear::new(store, "pkg.readout.edges", d, RELATION_CLASSES, rng),
            }
        };
        Self {
            edge_projection,
            layers,
            readout,
            steps: if with_schemata { steps } else { 1 },
        }
    }

    pub fn assimilation(&self) -> Option<&Assimilation> {
        match &self.readout {
            Readout::Assimilation(a) => Some(a),
            Readout::Linear { .. } => None,
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn build_initial_graph<'a>(
        &self,
        t: &'a Tape<'a>,
        tokens: &TokenSet<'a>,
        selection: &[usize],
    ) -> Result<InitialGraph<'a>, ModelError> {
        if selection.is_empty() {
            return Err(ModelError::EmptySelection);
        }
        let n = tokens.entities.rows();
        if let Some(&bad) = selection.iter().find(|&&i| i >= n) {
            return Err(ModelError::SelectionOutOfRange { index: bad, tokens: n });
        }
        Ok(InitialGraph {
            nodes: tokens.entities.select_rows(selection),
            edges: self.edge_projection.forward(t, pair_features(t, tokens, selection)),
            node_count: selection.len(),
        })
    }

    pub fn graph_transformer_step<'a>(
        &self,
        t: &'a Tape<'a>,
        layer: usize,
        nodes: Var<'a>,
        edges: Var<'a>,
        k: usize,
    ) -> (Var<'a>, Var<'a>) {
        self.layers[layer].forward(t, nodes, edges, k)
    }

    /// Runs the graph transformer stack once, then the readout for each
    /// step, carrying features from one step to the next.
    pub fn forward<'a>(&self, t: &'a Tape<'a>, initial: InitialGraph<'a>) -> Vec<StepScores<'a>> {
        self.forward_steps(t, initial, self.steps)
    }

    pub fn forward_steps<'a>(&self, t: &'a Tape<'a>, initial: InitialGraph<'a>, steps: usize) -> Vec<StepScores<'a>> {
        let k = initial.node_count;
        let (mut nodes, mut edges) = (initial.nodes, initial.edges);
        for layer in &self.layers {
            (nodes, edges) = layer.forward(t, nodes, edges, k);
        }
        match &self.readout {
            Readout::Linear { node, edge } => vec![StepScores {
                nodes: Some(node.forward(t, nodes)),
                edges: edge.forward(t, edges),
            }],
            Readout::Assimilation(a) => {
                let node_schemata = t.param(a.node_schemata);
                let edge_schemata = t.param(a.edge_schemata);
                let mut records = Vec::with_capacity(steps);
                for _ in 0..steps {
                    let (ns, n_next) = a.node.step(t, nodes, node_schemata);
                    let (es, e_next) = a.edge.step(t, edges, edge_schemata);
                    nodes = n_next;
                    edges = e_next;
                    records.push(StepScores {
                        nodes: Some(ns),
                        edges: es,
                    });
                }
                records
            }
        }
    }
}

/// Relation classifier over `concat(ent_i, rln, ent_j)` without the
/// embedding graph.
#[derive(Clone, Debug)]
pub struct VanillaRelationHead {
    mlp: FeedForward,
}

impl VanillaRelationHead {
    pub fn new(store: &mut ParamStore, d: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            mlp: FeedForward::new(store, "relation_head", 3 * d, d, RELATION_CLASSES, rng),
        }
    }

    pub fn forward<'a>(&self, t: &'a Tape<'a>, tokens: &TokenSet<'a>, selection: &[usize]) -> StepScores<'a> {
        StepScores {
            nodes: None,
            edges: self.mlp.forward(t, pair_features(t, tokens, selection)),
        }
    }
}
