//! Transformer decoder producing the entity tokens and the relation token.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::nn::{uniform, FeedForward, LayerNorm, MultiHeadAttention};

/// `N` entity tokens and the single shared relation token.
#[derive(Clone, Copy)]
pub struct TokenSet<'a> {
    /// `[N, d]`
    pub entities: Var<'a>,
    /// `[1, d]`
    pub relation: Var<'a>,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    self_attention: MultiHeadAttention,
    cross_attention: MultiHeadAttention,
    feed_forward: FeedForward,
    norm_self: LayerNorm,
    norm_cross: LayerNorm,
    norm_ffn: LayerNorm,
}

/// Post-norm decoder over `N + 1` learned queries; the last query becomes
/// the relation token.
#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    queries: ParamId,
    layers: Vec<DecoderLayer>,
    num_queries: usize,
}

pub struct DecoderOutput<'a> {
    pub tokens: TokenSet<'a>,
    /// Per layer: self-attention heads followed by cross-attention heads.
    pub attention: Vec<Var<'a>>,
}

impl TransformerDecoder {
    pub fn new(
        store: &mut ParamStore,
        num_queries: usize,
        d_model: usize,
        layers: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let queries = store.add(
            "decoder.queries",
            uniform(rng, &[num_queries + 1, d_model], 3f64.sqrt()),
        );
        let layers = (0..layers)
            .map(|i| {
                let p = format!("decoder.layers.{i}");
                DecoderLayer {
                    self_attention: MultiHeadAttention::new(store, &format!("{p}.self_attention"), d_model, heads, rng),
                    cross_attention: MultiHeadAttention::new(store, &format!("{p}.cross_attention"), d_model, heads, rng),
                    feed_forward: FeedForward::new(store, &format!("{p}.feed_forward"), d_model, ffn_dim, d_model, rng),
                    norm_self: LayerNorm::new(store, &format!("{p}.norm_self"), d_model),
                    norm_cross: LayerNorm::new(store, &format!("{p}.norm_cross"), d_model),
                    norm_ffn: LayerNorm::new(store, &format!("{p}.norm_ffn"), d_model),
                }
            })
            .collect();
        Self {
            queries,
            layers,
            num_queries,
        }
    }

    pub fn queries(&self) -> ParamId {
        self.queries
    }

    pub fn forward<'a>(&self, t: &'a Tape<'a>, features: Var<'a>) -> DecoderOutput<'a> {
        let mut x = t.param(self.queries);
        let mut attention = Vec::new();
        for layer in &self.layers {
            let sa = layer.self_attention.forward(t, x, x, x, None);
            x = layer.norm_self.forward(t, x.add(sa.output));
            let ca = layer.cross_attention.forward(t, x, features, features, None);
            x = layer.norm_cross.forward(t, x.add(ca.output));
            let ff = layer.feed_forward.forward(t, x);
            x = layer.norm_ffn.forward(t, x.add(ff));
            attention.extend(sa.weights);
            attention.extend(ca.weights);
        }
        let n = self.num_queries;
        let entity_rows: Vec<usize> = (0..n).collect();
        DecoderOutput {
            tokens: TokenSet {
                entities: x.select_rows(&entity_rows),
                relation: x.select_rows(&[n]),
            },
            attention,
        }
    }
}
