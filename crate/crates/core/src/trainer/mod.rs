//! Deterministic bi-encoder training.
//!
//! One step: for every mention in the batch, encode it, draw negatives,
//! score the proxy set, optionally add the FGSM term, and backpropagate the
//! loss gradient through both towers. The batch loss is the mean over
//! mentions. Gradients are clipped by global norm, then AdamW is applied with
//! a linear warmup/decay learning rate.

mod optim;
mod trace;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datakit::{render_kb, render_mention, KnowledgeBase, MentionRecord, RenderStyle, Vocabulary};
use crate::encoder::{
    BiEncoder, BiEncoderGrads, SimilarityKind, TokenSequence, TowerDims, TowerForward,
    DEFAULT_INIT_SCALE, DEFAULT_MAX_SEQ_LEN,
};
use crate::error::{Error, Result};
use crate::objectives::{
    build_adversarial_set, combined_objective, grad, loss, FgsmHyper, LossKind, PbHyper,
    ScoredProxySet,
};
use crate::sampling::{build_index, sample_negatives, EntityIndex, SamplingPolicy};

pub use optim::{adamw_step, clip_gradients, lr_at, AdamWConfig, OptimizerState};
pub use trace::{sample_variance, GradNormTrace, TraceRow, TRACE_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub max_seq_len: usize,
    pub init_scale: f64,
    /// Start the entity tower as a copy of the mention tower.
    pub shared_init: bool,
    /// Defaults to dot for CE and cosine for Pb when unset.
    pub similarity: Option<SimilarityKind>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            output_dim: 64,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            init_scale: DEFAULT_INIT_SCALE,
            shared_init: true,
            similarity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_proportion: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    pub clip_max_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub pb: PbHyper,
    pub fgsm_enabled: bool,
    pub fgsm: FgsmHyper,
    pub sampling: SamplingPolicy,
    pub seed: u64,
    pub trace_smoothing: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            warmup_proportion: 0.25,
            adam_eps: 1e-6,
            weight_decay: 0.0,
            clip_max_norm: 1.0,
            batch_size: 32,
            epochs: 7,
            loss_kind: LossKind::ProxyBased,
            pb: PbHyper::default(),
            fgsm_enabled: false,
            fgsm: FgsmHyper::default(),
            sampling: SamplingPolicy::default(),
            seed: 0,
            trace_smoothing: 0.98,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("adam_eps", self.adam_eps),
            ("clip_max_norm", self.clip_max_norm),
            ("init_scale", self.model.init_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.warmup_proportion) {
            return Err(Error::Config(format!(
                "warmup_proportion must be in [0, 1], got {}",
                self.warmup_proportion
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.trace_smoothing) {
            return Err(Error::Config(format!("trace_smoothing must be in [0, 1), got {}", self.trace_smoothing)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        let m = &self.model;
        if m.hidden_dim == 0 || m.output_dim == 0 || m.max_seq_len == 0 {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        self.pb.validate().map_err(config_error)?;
        self.fgsm.validate().map_err(config_error)?;
        self.sampling.validate()?;
        Ok(())
    }

    pub fn similarity(&self) -> SimilarityKind {
        self.model.similarity.unwrap_or(match self.loss_kind {
            LossKind::CrossEntropy => SimilarityKind::Dot,
            LossKind::ProxyBased => SimilarityKind::Cosine,
        })
    }

    pub fn tower_dims(&self, vocab_size: usize) -> TowerDims {
        TowerDims {
            vocab_size,
            max_seq_len: self.model.max_seq_len,
            hidden_dim: self.model.hidden_dim,
            output_dim: self.model.output_dim,
        }
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig { eps: self.adam_eps, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }

    /// The seeded initial model.
    pub fn init_model(&self, vocab_size: usize) -> BiEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let (dims, kind, scale) = (self.tower_dims(vocab_size), self.similarity(), self.model.init_scale);
        if self.model.shared_init {
            BiEncoder::random_shared(dims, kind, scale, &mut rng)
        } else {
            BiEncoder::random(dims, kind, scale, &mut rng)
        }
    }
}

fn config_error(e: Error) -> Error {
    match e {
        Error::InvalidArgument(msg) => Error::Config(msg),
        other => other,
    }
}

/// Rendered training inputs. Entities are in KB (id) order and `gold[i]` is
/// the KB position of mention `i`'s entity.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub mentions: Vec<TokenSequence>,
    pub gold: Vec<usize>,
    pub entity_ids: Vec<String>,
    pub entities: Vec<TokenSequence>,
    pub vocab_size: usize,
}

impl TrainingSet {
    pub fn new(
        mentions: Vec<TokenSequence>,
        gold: Vec<usize>,
        entity_ids: Vec<String>,
        entities: Vec<TokenSequence>,
        vocab_size: usize,
    ) -> Result<Self> {
        if mentions.len() != gold.len() {
            return Err(Error::DimensionMismatch { expected: mentions.len(), actual: gold.len() });
        }
        if entity_ids.len() != entities.len() {
            return Err(Error::DimensionMismatch { expected: entity_ids.len(), actual: entities.len() });
        }
        if entities.is_empty() {
            return Err(Error::Empty("entities"));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= entities.len()) {
            return Err(Error::InvalidArgument(format!("gold position {g} outside KB of {}", entities.len())));
        }
        Ok(Self { mentions, gold, entity_ids, entities, vocab_size })
    }

    /// Renders in-KB mentions and the whole KB. NIL-labelled mentions have no
    /// positive proxy and are skipped.
    pub fn from_records(
        mentions: &[MentionRecord],
        kb: &KnowledgeBase,
        vocab: &Vocabulary,
        max_len: usize,
        style: RenderStyle,
    ) -> Result<Self> {
        let mut seqs = Vec::new();
        let mut gold = Vec::new();
        for m in mentions {
            let Some(id) = m.label.entity() else { continue };
            let pos = kb.position(id).ok_or_else(|| Error::UnknownEntity(id.to_string()))?;
            seqs.push(render_mention(m, vocab, max_len)?);
            gold.push(pos);
        }
        let entities = render_kb(kb, vocab, max_len, style)?;
        Self::new(seqs, gold, kb.ids(), entities, vocab.len())
    }

    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn kb_size(&self) -> usize {
        self.entities.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub steps: usize,
    pub mean_loss: f64,
    pub index_refreshed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: BiEncoder,
    pub trace: GradNormTrace,
    pub epochs: Vec<EpochReport>,
}

const SHUFFLE_STREAM: u64 = 1 << 32;
const SAMPLING_STREAM: u64 = 2 << 32;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trains from the seeded initial model. `on_epoch` runs after every epoch
/// with the current parameters (e.g. to write a checkpoint).
pub fn train<F>(data: &TrainingSet, cfg: &TrainConfig, on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport, &BiEncoder) -> Result<()>,
{
    train_from(cfg.init_model(data.vocab_size), data, cfg, on_epoch)
}

/// Trains starting from `model`.
pub fn train_from<F>(mut model: BiEncoder, data: &TrainingSet, cfg: &TrainConfig, mut on_epoch: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochReport, &BiEncoder) -> Result<()>,
{
    cfg.validate()?;
    let dims = model.mention_tower.dims();
    if dims.vocab_size < data.vocab_size {
        return Err(Error::InvalidArgument(format!(
            "model vocabulary {} smaller than data vocabulary {}",
            dims.vocab_size, data.vocab_size
        )));
    }
    if data.kb_size() <= cfg.sampling.n_negatives {
        return Err(Error::InvalidArgument(format!(
            "KB of {} entities cannot supply {} negatives",
            data.kb_size(),
            cfg.sampling.n_negatives
        )));
    }

    let steps_per_epoch = data.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let adamw = cfg.adamw();
    let mut state = OptimizerState::new(&model);
    let mut trace = GradNormTrace::new(cfg.trace_smoothing)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut index: Option<EntityIndex> = None;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        let wrap = |step: usize| move |e: Error| Error::Training { epoch, step, source: Box::new(e) };
        let refresh = cfg.sampling.needs_index() && epoch % cfg.sampling.refresh_every_epochs == 0;
        if refresh {
            index = Some(build_index(&data.entity_ids, &data.entities, &model, step as u64).map_err(wrap(step))?);
        }

        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream_rng(cfg.seed, SHUFFLE_STREAM | epoch as u64));
        let mut sampler = stream_rng(cfg.sampling.rng_seed, SAMPLING_STREAM | epoch as u64);

        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (batch_loss, mut grads) =
                batch_gradients(&model, data, batch, cfg, index.as_ref(), &mut sampler).map_err(wrap(step))?;
            let raw_norm = clip_gradients(&mut grads, cfg.clip_max_norm).map_err(wrap(step))?;
            let lr = lr_at(step, total_steps, cfg.learning_rate, cfg.warmup_proportion);
            adamw_step(&mut model, &grads, &mut state, lr, &adamw).map_err(wrap(step))?;
            trace.record(lr, raw_norm, batch_loss);
            loss_sum += batch_loss * batch.len() as f64;
            step += 1;
        }

        let report = EpochReport {
            epoch,
            steps: steps_per_epoch,
            mean_loss: if data.is_empty() { 0.0 } else { loss_sum / data.len() as f64 },
            index_refreshed: refresh,
        };
        on_epoch(&report, &model)?;
        epochs.push(report);
    }

    Ok(TrainOutcome { model, trace, epochs })
}

/// Mean objective and its parameter gradient over one batch.
pub fn batch_gradients(
    model: &BiEncoder,
    data: &TrainingSet,
    batch: &[usize],
    cfg: &TrainConfig,
    index: Option<&EntityIndex>,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, BiEncoderGrads)> {
    let mut grads = BiEncoderGrads::zeros_like(model);
    let mut total = 0.0;
    for &i in batch {
        total += mention_objective(model, data, i, cfg, index, rng, Some(&mut grads))?;
    }
    let scale = 1.0 / batch.len() as f64;
    grads.scale(scale);
    Ok((total * scale, grads))
}

/// Objective of mention `i`; accumulates its gradient into `grads` if given.
fn mention_objective(
    model: &BiEncoder,
    data: &TrainingSet,
    i: usize,
    cfg: &TrainConfig,
    index: Option<&EntityIndex>,
    rng: &mut ChaCha8Rng,
    grads: Option<&mut BiEncoderGrads>,
) -> Result<f64> {
    let gold = data.gold[i];
    let mention = model.encode_mention(&data.mentions[i])?;
    let negatives = sample_negatives(&cfg.sampling, data.kb_size(), index, &mention.output, gold, rng)?;

    let positive = model.encode_entity(&data.entities[gold])?;
    let negative_fwd: Vec<TowerForward> = negatives
        .iter()
        .map(|&n| model.encode_entity(&data.entities[n]))
        .collect::<Result<_>>()?;
    let base = score_set(model, &mention, &positive, &negative_fwd)?;

    let adversarial = if cfg.fgsm_enabled {
        let adv = build_adversarial_set(model, &mention.output, &positive, &negative_fwd, cfg.fgsm.epsilon)?;
        let adv_positive = model.entity_tower.forward_with_embeddings(&positive.seq, &adv.positive)?;
        let adv_negatives: Vec<TowerForward> = negative_fwd
            .iter()
            .zip(&adv.negatives)
            .map(|(f, z)| model.entity_tower.forward_with_embeddings(&f.seq, z))
            .collect::<Result<_>>()?;
        let scores = score_set(model, &mention, &adv_positive, &adv_negatives)?;
        Some((adv_positive, adv_negatives, scores))
    } else {
        None
    };

    let objective = match &adversarial {
        Some((_, _, adv_scores)) => combined_objective(&base, adv_scores, cfg.loss_kind, &cfg.pb, &cfg.fgsm),
        None => loss(cfg.loss_kind, &base, &cfg.pb),
    };

    if let Some(grads) = grads {
        let g = grad(cfg.loss_kind, &base, &cfg.pb);
        let mut entities: Vec<&TowerForward> = Vec::with_capacity(2 * (negative_fwd.len() + 1));
        let mut upstream = Vec::with_capacity(entities.capacity());
        entities.push(&positive);
        upstream.push(g.positive);
        entities.extend(negative_fwd.iter());
        upstream.extend_from_slice(&g.negatives);
        if let Some((adv_positive, adv_negatives, adv_scores)) = &adversarial {
            let lambda = cfg.fgsm.lambda;
            let ga = grad(cfg.loss_kind, adv_scores, &cfg.pb);
            entities.push(adv_positive);
            upstream.push(lambda * ga.positive);
            entities.extend(adv_negatives.iter());
            upstream.extend(ga.negatives.iter().map(|v| lambda * v));
        }
        model.backward_group(&mention, &entities, &upstream, grads)?;
    }
    Ok(objective)
}

fn score_set(
    model: &BiEncoder,
    mention: &TowerForward,
    positive: &TowerForward,
    negatives: &[TowerForward],
) -> Result<ScoredProxySet> {
    let pos = model.score(mention, positive)?;
    let neg = negatives.iter().map(|n| model.score(mention, n)).collect::<Result<Vec<_>>>()?;
    ScoredProxySet::new(pos, neg)
}

/// Mean training objective of a frozen model over the whole set, with
/// negatives drawn from a fresh stream seeded by `seed` (and a hard-negative
/// index built from `model` when the policy needs one).
pub fn evaluate_loss(model: &BiEncoder, data: &TrainingSet, cfg: &TrainConfig, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let index = if cfg.sampling.needs_index() {
        Some(build_index(&data.entity_ids, &data.entities, model, 0)?)
    } else {
        None
    };
    let mut rng = stream_rng(seed, SAMPLING_STREAM);
    let mut total = 0.0;
    for i in 0..data.len() {
        total += mention_objective(model, data, i, cfg, index.as_ref(), &mut rng, None)?;
    }
    Ok(total / data.len() as f64)
}
