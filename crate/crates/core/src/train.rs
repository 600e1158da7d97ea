//! Set-prediction training: matching, loss assembly, AdamW updates and
//! per-epoch evaluation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Gradients, ParamStore, Tape};
use crate::eval::{score_graphs, GraphReport};
use crate::gradcheck::{finite_difference_check, GradCheckError, GradCheckOptions, GradCheckReport};
use crate::graph::{RadiologyGraph, Relation, RelationType, Uncertainty};
use crate::image::ImageGrid;
use crate::loss::{
    aecs_loss, entity_class_targets, focal_loss, relation_targets, sample_relation_edges, stochastic_relation_loss,
    total_loss, uncertainty_ce_loss, EdgeRatio, LossError, LossParts, LossTerms, LossWeights,
};
use crate::matcher::{hungarian_match, MatchError};
use crate::model::{Mode, Model, ModelConfig, ModelError, Network};
use crate::optim::{AdamW, AdamWConfig};
use crate::tensor::Array;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("sample {index}: {entities} entities exceed the {tokens} entity tokens")]
    TooManyEntities { index: usize, entities: usize, tokens: usize },
    #[error("sample {index}: image is {height}x{width}, model expects {expected}x{expected}")]
    ImageSize {
        index: usize,
        height: usize,
        width: usize,
        expected: usize,
    },
    #[error("sample {index}: class id {class_id} outside the model's {classes} classes")]
    ClassOutOfRange { index: usize, class_id: usize, classes: usize },
    #[error("invalid training config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// One supervised example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageGrid,
    pub graph: RadiologyGraph,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stops after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub focal_gamma: f64,
    pub fg_bg_ratio: EdgeRatio,
    pub loss_weights: LossWeights,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Prior,
            epochs: 10,
            batch_size: 32,
            max_steps: None,
            seed: 0,
            focal_gamma: 2.0,
            fg_bg_ratio: EdgeRatio::default(),
            loss_weights: LossWeights::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let mut errors = Vec::new();
        if self.batch_size == 0 {
            errors.push("train.batch_size must be positive".to_string());
        }
        if !(self.focal_gamma >= 0.0) {
            errors.push(format!("train.focal_gamma must be >= 0, got {}", self.focal_gamma));
        }
        if self.fg_bg_ratio.foreground == 0 {
            errors.push("train.fg_bg_ratio.foreground must be positive".to_string());
        }
        let w = &self.loss_weights;
        if [w.entity_class, w.uncertainty, w.relation].iter().any(|x| !(*x >= 0.0)) {
            errors.push("train.loss_weights must be non-negative".to_string());
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0) {
            errors.push(format!("train.optimizer.learning_rate must be positive, got {}", o.learning_rate));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            errors.push("train.optimizer betas must lie in [0, 1)".to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(TrainError::InvalidConfig(errors))
        }
    }
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub entity_f1: f64,
    pub relation_f1: f64,
}

/// Loss terms of one sample, recorded on `t`.
///
/// Tokens are matched to ground-truth entities on the current head
/// probabilities; the relation path runs over the matched tokens in
/// ground-truth entity order, so node `i` of the relation graph is entity
/// `i`. `supervised_edges` are the edge rows seen by the relation loss.
pub fn sample_loss_terms<'a>(
    t: &'a Tape<'a>,
    net: &Network,
    mode: Mode,
    sample: &Sample,
    supervised_edges: &[usize],
    focal_gamma: f64,
) -> Result<LossTerms<'a>, TrainError> {
    let features = net.encode_image(t, &sample.image)?;
    let tokens = net.decode_tokens(t, features);
    let heads = net.predict_entity_heads(t, &tokens);
    let class_logits = heads.class_logits.value();
    let class_probs = class_logits.softmax_rows();
    let uncertainty_probs = heads.uncertainty_logits.value().softmax_rows();
    let gt = &sample.graph;
    let matching = hungarian_match(&class_probs, &uncertainty_probs, gt)?;

    let background = class_logits.cols() - 1;
    let targets = entity_class_targets(class_logits.rows(), background, &matching, gt);
    let focal = focal_loss(heads.class_logits, &targets, focal_gamma);
    let uncertainty = uncertainty_ce_loss(heads.uncertainty_logits, &matching, gt);
    let (aecs, relation) = if gt.is_empty() {
        (t.scalar(0.0), t.scalar(0.0))
    } else {
        let steps = net.relation_scores(t, &tokens, &matching.tokens_by_entity())?;
        let aecs = if mode.node_supervision() {
            aecs_loss(t, &steps, gt)
        } else {
            t.scalar(0.0)
        };
        let relation = stochastic_relation_loss(t, &steps, &relation_targets(gt), supervised_edges);
        (aecs, relation)
    };
    Ok(LossTerms {
        focal,
        aecs,
        uncertainty,
        relation,
    })
}

/// Loss parts and parameter gradients of one sample.
pub fn sample_loss(
    params: &ParamStore,
    net: &Network,
    mode: Mode,
    sample: &Sample,
    supervised_edges: &[usize],
    config: &TrainConfig,
) -> Result<(LossParts, Gradients), TrainError> {
    let t = Tape::new(params);
    let terms = sample_loss_terms(&t, net, mode, sample, supervised_edges, config.focal_gamma)?;
    let total = total_loss(&terms, &config.loss_weights)?;
    let grads = t.backward(total)?;
    Ok((terms.parts(), grads))
}

/// Rejects samples the model cannot be trained on.
pub fn check_samples(model: &ModelConfig, samples: &[Sample]) -> Result<(), TrainError> {
    for (index, s) in samples.iter().enumerate() {
        let (h, w) = (s.image.height(), s.image.width());
        if h != model.image_size || w != model.image_size {
            return Err(TrainError::ImageSize {
                index,
                height: h,
                width: w,
                expected: model.image_size,
            });
        }
        let entities = s.graph.entities().len();
        if entities > model.num_queries {
            return Err(TrainError::TooManyEntities {
                index,
                entities,
                tokens: model.num_queries,
            });
        }
        if let Some(e) = s.graph.entities().iter().find(|e| e.class_id >= model.num_classes) {
            return Err(TrainError::ClassOutOfRange {
                index,
                class_id: e.class_id,
                classes: model.num_classes,
            });
        }
    }
    Ok(())
}

/// Optimizer state plus the single random stream that drives shuffling
/// and background-edge sampling.
pub struct Trainer {
    model: Model,
    optimizer: AdamW,
    rng: ChaCha8Rng,
    config: TrainConfig,
    steps: usize,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = AdamW::new(config.optimizer, model.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // keep the training stream apart from the one used for initialization
        rng.set_stream(1);
        Ok(Self {
            model,
            optimizer,
            rng,
            config,
            steps: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn step_budget_left(&self) -> bool {
        self.config.max_steps.map_or(true, |m| self.steps < m)
    }

    /// One optimizer step on the mean gradient of `batch`; returns the
    /// mean total loss. Background edges are drawn per sample in batch
    /// order before any forward pass.
    pub fn train_step(&mut self, batch: &[&Sample]) -> Result<f64, TrainError> {
        let ratio = self.config.fg_bg_ratio;
        let edges: Vec<Vec<usize>> = batch
            .iter()
            .map(|s| sample_relation_edges(&relation_targets(&s.graph), ratio, &mut self.rng))
            .collect();
        let mode = self.model.mode();
        let scale = 1.0 / batch.len() as f64;
        let (net, params) = self.model.parts_mut();
        params.zero_grad();
        let mut loss = 0.0;
        for (s, e) in batch.iter().zip(&edges) {
            let (parts, grads) = sample_loss(params, net, mode, s, e, &self.config)?;
            loss += parts.total(&self.config.loss_weights) * scale;
            params.accumulate(&grads, scale);
        }
        self.optimizer.step(params);
        self.steps += 1;
        Ok(loss)
    }

    /// One shuffled pass; returns the mean step loss and whether the step
    /// budget ran out.
    pub fn run_epoch(&mut self, data: &[Sample]) -> Result<(f64, bool), TrainError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut count = 0;
        for chunk in order.chunks(self.config.batch_size) {
            if !self.step_budget_left() {
                break;
            }
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &data[i]).collect();
            total += self.train_step(&batch)?;
            count += 1;
        }
        let mean = if count == 0 { 0.0 } else { total / count as f64 };
        Ok((mean, !self.step_budget_left()))
    }
}

/// Trained model with its per-epoch log.
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<EpochMetrics>,
    /// Optimizer steps taken.
    pub steps: usize,
}

/// Initializes a model from `config.seed` and trains it. Metrics are
/// computed on `validation`, or on the training set when no validation
/// samples are given.
pub fn fit(
    model_config: &ModelConfig,
    train: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let model = Model::new(model_config, config.mode, config.seed)?;
    fit_model(model, train, validation, config)
}

/// [`fit`] starting from an existing model.
pub fn fit_model(
    model: Model,
    train: &[Sample],
    validation: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    if train.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    check_samples(model.config(), train)?;
    check_samples(model.config(), validation)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    let eval_set = if validation.is_empty() { train } else { validation };
    let mut log = Vec::new();
    for epoch in 0..config.epochs {
        if !trainer.step_budget_left() {
            break;
        }
        let (loss, exhausted) = trainer.run_epoch(train)?;
        let report = evaluate(trainer.model(), eval_set)?;
        log.push(EpochMetrics {
            epoch,
            loss,
            entity_f1: report.entity.f1,
            relation_f1: report.relation.f1,
        });
        if exhausted {
            break;
        }
    }
    let steps = trainer.steps();
    Ok(TrainOutcome {
        model: trainer.into_model(),
        log,
        steps,
    })
}

pub fn predict_all(model: &Model, samples: &[Sample]) -> Result<Vec<RadiologyGraph>, ModelError> {
    samples.iter().map(|s| model.predict(&s.image)).collect()
}

pub fn evaluate(model: &Model, samples: &[Sample]) -> Result<GraphReport, TrainError> {
    let pred = predict_all(model, samples)?;
    let gt: Vec<RadiologyGraph> = samples.iter().map(|s| s.graph.clone()).collect();
    Ok(score_graphs(&pred, &gt, false).expect("aligned by construction"))
}

/// A random image with a small fixed graph for gradient checks.
pub fn gradcheck_fixture(config: &ModelConfig, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.image_size;
    let image = ImageGrid::new(n, n, (0..n * n).map(|_| rng.gen::<f64>()).collect());
    let c = config.num_classes;
    let k = config.num_queries.min(3);
    let nodes: Vec<(usize, Uncertainty)> = (0..k)
        .map(|i| (i % c, Uncertainty::ALL[i % Uncertainty::ALL.len()]))
        .collect();
    let mut relations = Vec::new();
    if k >= 2 {
        relations.push(Relation::new(0, 1, RelationType::LocatedAt));
    }
    if k >= 3 {
        relations.push(Relation::new(2, 0, RelationType::SuggestiveOf));
        relations.push(Relation::new(1, 2, RelationType::Modify));
    }
    let graph = RadiologyGraph::new(&nodes, relations, c).expect("fixture graph is valid");
    Sample { image, graph }
}

/// Finite-difference check of the full training loss of `mode` on the
/// fixture sample, with every ordered edge supervised.
pub fn gradcheck_model(
    config: &ModelConfig,
    mode: Mode,
    seed: u64,
    options: &GradCheckOptions,
) -> Result<GradCheckReport, GradCheckError> {
    let mut model = Model::new(config, mode, seed).expect("valid model config");
    let sample = gradcheck_fixture(config, seed);
    let edges: Vec<usize> = (0..relation_targets(&sample.graph).len()).collect();
    let train = TrainConfig::default();
    let (net, params) = model.parts_mut();
    finite_difference_check(
        params,
        |t| {
            let terms = sample_loss_terms(t, net, mode, &sample, &edges, train.focal_gamma).expect("fixture is trainable");
            total_loss(&terms, &train.loss_weights).expect("finite loss")
        },
        options,
    )
}

/// Copies of every parameter value in id order.
pub fn parameter_snapshot(params: &ParamStore) -> Vec<Array> {
    params.ids().map(|id| params.value(id).clone()).collect()
}
