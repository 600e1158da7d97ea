//! The image-to-graph network.
//!
//! `image -> ConvEncoder -> TransformerDecoder -> (entity heads, relation path)`.
//! The relation path is either the vanilla pair classifier or the
//! prior-knowledge integration stack, selected by [`Mode`].

pub mod decode;
pub mod decoder;
pub mod encoder;
pub mod pkg;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::graph::RadiologyGraph;
use crate::image::ImageGrid;
use crate::nn::Linear;

pub use decode::{decode_graph, valid_tokens};
pub use decoder::{TokenSet, TransformerDecoder};
pub use encoder::ConvEncoder;
pub use pkg::{InitialGraph, PkgIntegration, StepScores, VanillaRelationHead};

/// Three relation types plus "no relation".
pub const RELATION_CLASSES: usize = 4;
/// Index of the "no relation" edge class.
pub const NO_RELATION: usize = 3;
pub const UNCERTAINTY_LEVELS: usize = 3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image {height}x{width} is not divisible by patch size {patch}")]
    ImageSize {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("no valid entities selected")]
    EmptySelection,
    #[error("selected token {index} but only {tokens} tokens exist")]
    SelectionOutOfRange { index: usize, tokens: usize },
    #[error("invalid model config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
}

/// Ablation modes of the relation path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Pair classifier over `concat(ent_i, rln, ent_j)`.
    Vanilla,
    /// Graph transformers plus schemata assimilation with node supervision.
    #[default]
    Prior,
    /// Graph transformers with linear readouts instead of assimilation.
    PriorNoPkg,
    /// Assimilation without the additional node-class supervision.
    PriorNoAecs,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Vanilla, Mode::Prior, Mode::PriorNoPkg, Mode::PriorNoAecs];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Prior => "prior",
            Mode::PriorNoPkg => "prior_no_pkg",
            Mode::PriorNoAecs => "prior_no_aecs",
        }
    }

    pub fn uses_graph(self) -> bool {
        self != Mode::Vanilla
    }

    pub fn uses_schemata(self) -> bool {
        matches!(self, Mode::Prior | Mode::PriorNoAecs)
    }

    /// Whether node readouts receive the additional entity-class loss.
    pub fn node_supervision(self) -> bool {
        matches!(self, Mode::Prior | Mode::PriorNoPkg)
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Output channels of each stride-2 convolution block.
    pub encoder_channels: Vec<usize>,
    pub d_model: usize,
    pub num_queries: usize,
    /// Foreground entity classes `C`.
    pub num_classes: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub gt_layers: usize,
    pub assimilation_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            encoder_channels: vec![8, 16, 32],
            d_model: 64,
            num_queries: 16,
            num_classes: 12,
            decoder_layers: 3,
            heads: 4,
            ffn_dim: 128,
            gt_layers: 2,
            assimilation_steps: 2,
        }
    }
}

impl ModelConfig {
    /// The smallest configuration used for full-model gradient checks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            encoder_channels: vec![2, 4, 4],
            d_model: 8,
            num_queries: 4,
            num_classes: 5,
            decoder_layers: 1,
            heads: 2,
            ffn_dim: 8,
            gt_layers: 1,
            assimilation_steps: 2,
        }
    }

    pub fn patch_size(&self) -> usize {
        1 << self.encoder_channels.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut errors = Vec::new();
        if self.d_model == 0 || self.d_model % 4 != 0 {
            errors.push(format!("model.d_model must be a positive multiple of 4, got {}", self.d_model));
        }
        if self.heads == 0 || self.d_model % self.heads.max(1) != 0 {
            errors.push(format!("model.heads ({}) must divide model.d_model ({})", self.heads, self.d_model));
        }
        if self.num_queries == 0 {
            errors.push("model.num_queries must be positive".into());
        }
        if self.num_classes == 0 {
            errors.push("model.num_classes must be positive".into());
        }
        if self.ffn_dim == 0 {
            errors.push("model.ffn_dim must be positive".into());
        }
        if self.assimilation_steps == 0 {
            errors.push("model.assimilation_steps must be at least 1".into());
        }
        if self.encoder_channels.iter().any(|&c| c == 0) {
            errors.push("model.encoder_channels entries must be positive".into());
        }
        if self.image_size == 0 || self.image_size % self.patch_size() != 0 {
            errors.push(format!(
                "model.image_size ({}) must be a positive multiple of the patch size {}",
                self.image_size,
                self.patch_size()
            ));
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ModelError::InvalidConfig(errors))
        }
    }
}

/// Class and uncertainty logits for every entity token.
#[derive(Clone, Copy)]
pub struct EntityHeadOutput<'a> {
    /// `[N, C+1]`, last column is no-entity.
    pub class_logits: Var<'a>,
    /// `[N, 3]`
    pub uncertainty_logits: Var<'a>,
}

#[derive(Clone, Debug)]
pub enum RelationPath {
    Vanilla(VanillaRelationHead),
    Pkg(PkgIntegration),
}

/// Layer structure; all weights live in the owning [`Model`]'s store.
#[derive(Clone, Debug)]
pub struct Network {
    pub encoder: ConvEncoder,
    pub decoder: TransformerDecoder,
    pub class_head: Linear,
    pub uncertainty_head: Linear,
    pub relation: RelationPath,
}

impl Network {
    pub fn encode_image<'a>(&self, t: &'a Tape<'a>, image: &ImageGrid) -> Result<Var<'a>, ModelError> {
        self.encoder.forward(t, image)
    }

    pub fn decode_tokens<'a>(&self, t: &'a Tape<'a>, features: Var<'a>) -> TokenSet<'a> {
        self.decoder.forward(t, features).tokens
    }

    /// Two independent per-token linear heads; the relation token is unused.
    pub fn predict_entity_heads<'a>(&self, t: &'a Tape<'a>, tokens: &TokenSet<'a>) -> EntityHeadOutput<'a> {
        EntityHeadOutput {
            class_logits: self.class_head.forward(t, tokens.entities),
            uncertainty_logits: self.uncertainty_head.forward(t, tokens.entities),
        }
    }

    /// Node/edge classification scores for the selected tokens, one record
    /// per readout step.
    pub fn relation_scores<'a>(
        &self,
        t: &'a Tape<'a>,
        tokens: &TokenSet<'a>,
        selection: &[usize],
    ) -> Result<Vec<StepScores<'a>>, ModelError> {
        match &self.relation {
            RelationPath::Vanilla(head) => {
                if selection.is_empty() {
                    return Err(ModelError::EmptySelection);
                }
                Ok(vec![head.forward(t, tokens, selection)])
            }
            RelationPath::Pkg(pkg) => {
                let initial = pkg.build_initial_graph(t, tokens, selection)?;
                Ok(pkg.forward(t, initial))
            }
        }
    }
}

/// Network structure plus its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    mode: Mode,
    params: ParamStore,
    network: Network,
}

impl Model {
    pub fn new(config: &ModelConfig, mode: Mode, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let encoder = ConvEncoder::new(&mut store, &config.encoder_channels, d, &mut rng);
        let decoder = TransformerDecoder::new(
            &mut store,
            config.num_queries,
            d,
            config.decoder_layers,
            config.heads,
            config.ffn_dim,
            &mut rng,
        );
        let class_head = Linear::new(&mut store, "heads.class", d, config.num_classes + 1, &mut rng);
        let uncertainty_head = Linear::new(&mut store, "heads.uncertainty", d, UNCERTAINTY_LEVELS, &mut rng);
        let relation = if mode.uses_graph() {
            RelationPath::Pkg(PkgIntegration::new(
                &mut store,
                d,
                config.heads,
                config.ffn_dim,
                config.gt_layers,
                config.num_classes,
                config.assimilation_steps,
                mode.uses_schemata(),
                &mut rng,
            ))
        } else {
            RelationPath::Vanilla(VanillaRelationHead::new(&mut store, d, &mut rng))
        };
        Ok(Self {
            config: config.clone(),
            mode,
            params: store,
            network: Network {
                encoder,
                decoder,
                class_head,
                uncertainty_head,
                relation,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Split borrow for code that evaluates the network while mutating
    /// parameters between evaluations.
    pub fn parts_mut(&mut self) -> (&Network, &mut ParamStore) {
        (&self.network, &mut self.params)
    }

    /// Inference: entities from the token heads, relations from the last
    /// readout step over the tokens predicted as valid.
    pub fn predict(&self, image: &ImageGrid) -> Result<RadiologyGraph, ModelError> {
        let t = Tape::new(&self.params);
        let net = &self.network;
        let features = net.encode_image(&t, image)?;
        let tokens = net.decode_tokens(&t, features);
        let heads = net.predict_entity_heads(&t, &tokens);
        let class_logits = heads.class_logits.value();
        let uncertainty_logits = heads.uncertainty_logits.value();
        let valid = valid_tokens(&class_logits);
        if valid.is_empty() {
            return Ok(RadiologyGraph::empty());
        }
        let steps = net.relation_scores(&t, &tokens, &valid)?;
        let last = steps.last().expect("at least one readout step");
        let coefficients = last.edge_coefficients().value();
        Ok(decode_graph(&class_logits, &uncertainty_logits, Some(&coefficients)))
    }
}
