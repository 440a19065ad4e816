//! Desk-scale bi-encoder.
//!
//! Each tower maps a token sequence to a vector in three steps:
//!
//! ```text
//! z_t   = word[token_t] + position[t]          (composite input embedding)
//! p     = mean of z_t over unmasked positions  (mean pooling)
//! y     = p · W + b                            (linear projection, W is d × d_out)
//! ```
//!
//! The mention and entity towers have independent parameters and are compared
//! with either a dot product or cosine similarity. Every gradient is written
//! out by hand; forward passes return explicit [`TowerForward`] caches which
//! the backward passes consume.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, dot_slices, DenseVector, Matrix};

pub const DEFAULT_MAX_SEQ_LEN: usize = 128;

/// Half-width of the uniform initialisation range for embeddings and projections.
pub const DEFAULT_INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    Dot,
    Cosine,
}

/// Token ids plus a pad mask (`true` marks a real token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    token_ids: Vec<u32>,
    pad_mask: Vec<bool>,
}

impl TokenSequence {
    /// A sequence where every position is a real token.
    pub fn new(token_ids: Vec<u32>) -> Result<Self> {
        let pad_mask = vec![true; token_ids.len()];
        Self::with_mask(token_ids, pad_mask)
    }

    pub fn with_mask(token_ids: Vec<u32>, pad_mask: Vec<bool>) -> Result<Self> {
        if token_ids.len() != pad_mask.len() {
            return Err(Error::DimensionMismatch {
                expected: token_ids.len(),
                actual: pad_mask.len(),
            });
        }
        if !pad_mask.iter().any(|&m| m) {
            return Err(Error::AllMasked);
        }
        Ok(Self { token_ids, pad_mask })
    }

    /// Right-pads with `pad_id` to `len`, masking the new positions.
    pub fn padded(&self, len: usize, pad_id: u32) -> Result<Self> {
        if len < self.len() {
            return Err(Error::SequenceTooLong { len: self.len(), max: len });
        }
        let mut ids = self.token_ids.clone();
        let mut mask = self.pad_mask.clone();
        ids.resize(len, pad_id);
        mask.resize(len, false);
        Self::with_mask(ids, mask)
    }

    pub fn ids(&self) -> &[u32] {
        &self.token_ids
    }

    pub fn mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn real_len(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }

    pub fn validate(&self, vocab_size: usize, max_len: usize) -> Result<()> {
        if self.len() > max_len {
            return Err(Error::SequenceTooLong { len: self.len(), max: max_len });
        }
        if let Some((position, &id)) =
            self.token_ids.iter().enumerate().find(|(_, &id)| id as usize >= vocab_size)
        {
            return Err(Error::TokenOutOfRange { position, id, vocab_size });
        }
        Ok(())
    }
}

/// One composite embedding row per sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct InputEmbeddings(Matrix);

impl InputEmbeddings {
    pub fn new(rows: Matrix) -> Result<Self> {
        if rows.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input embeddings"));
        }
        Ok(Self(rows))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.0.as_mut_slice()
    }
}

/// Parameters of one encoder tower. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub word_embeddings: Matrix,
    pub position_embeddings: Matrix,
    pub projection: Matrix,
    pub projection_bias: Vec<f64>,
}

/// Shape of a tower.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TowerDims {
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
}

impl EncoderParams {
    pub fn zeros(dims: TowerDims) -> Self {
        Self {
            word_embeddings: Matrix::zeros(dims.vocab_size, dims.hidden_dim),
            position_embeddings: Matrix::zeros(dims.max_seq_len, dims.hidden_dim),
            projection: Matrix::zeros(dims.hidden_dim, dims.output_dim),
            projection_bias: vec![0.0; dims.output_dim],
        }
    }

    /// Uniform `[-scale, scale]` embeddings and projection, zero bias.
    pub fn random<R: Rng + ?Sized>(dims: TowerDims, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(dims);
        for tensor in [
            &mut p.word_embeddings,
            &mut p.position_embeddings,
            &mut p.projection,
        ] {
            for v in tensor.as_mut_slice() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        p
    }

    pub fn from_parts(
        word_embeddings: Matrix,
        position_embeddings: Matrix,
        projection: Matrix,
        projection_bias: Vec<f64>,
    ) -> Result<Self> {
        let d = word_embeddings.cols();
        if d == 0 || projection.cols() == 0 {
            return Err(Error::InvalidArgument("encoder dimensions must be positive".into()));
        }
        if position_embeddings.cols() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: position_embeddings.cols() });
        }
        if projection.rows() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: projection.rows() });
        }
        if projection_bias.len() != projection.cols() {
            return Err(Error::DimensionMismatch {
                expected: projection.cols(),
                actual: projection_bias.len(),
            });
        }
        let p = Self { word_embeddings, position_embeddings, projection, projection_bias };
        if p.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("encoder parameters"));
        }
        Ok(p)
    }

    pub fn dims(&self) -> TowerDims {
        TowerDims {
            vocab_size: self.word_embeddings.rows(),
            max_seq_len: self.position_embeddings.rows(),
            hidden_dim: self.word_embeddings.cols(),
            output_dim: self.projection.cols(),
        }
    }

    pub fn compose_input_embeddings(&self, seq: &TokenSequence) -> Result<InputEmbeddings> {
        let dims = self.dims();
        seq.validate(dims.vocab_size, dims.max_seq_len)?;
        let mut z = Matrix::zeros(seq.len(), dims.hidden_dim);
        for (t, &id) in seq.ids().iter().enumerate() {
            let word = self.word_embeddings.row(id as usize);
            let pos = self.position_embeddings.row(t);
            for ((out, w), p) in z.row_mut(t).iter_mut().zip(word).zip(pos) {
                *out = w + p;
            }
        }
        InputEmbeddings::new(z)
    }

    /// Mean-pools the unmasked rows of `z` and projects the result.
    pub fn encode(&self, z: &InputEmbeddings, mask: &[bool]) -> Result<DenseVector> {
        let pooled = self.pool(z, mask)?;
        self.project(&pooled)
    }

    /// Composes, pools and projects `seq`, keeping what the backward pass needs.
    pub fn forward(&self, seq: &TokenSequence) -> Result<TowerForward> {
        let dims = self.dims();
        seq.validate(dims.vocab_size, dims.max_seq_len)?;
        let mut pooled = vec![0.0; dims.hidden_dim];
        let mut count = 0usize;
        for (t, (&id, _)) in seq.ids().iter().zip(seq.mask()).enumerate().filter(|(_, (_, &m))| m) {
            let word = self.word_embeddings.row(id as usize);
            let pos = self.position_embeddings.row(t);
            for ((acc, w), p) in pooled.iter_mut().zip(word).zip(pos) {
                *acc += w + p;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let inv = 1.0 / count as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        let output = self.project(&pooled)?;
        Ok(TowerForward { seq: seq.clone(), pooled, output })
    }

    /// Forward pass from explicit input embeddings (e.g. adversarially
    /// perturbed ones). The token ids in `seq` still route parameter gradients.
    pub fn forward_with_embeddings(
        &self,
        seq: &TokenSequence,
        z: &InputEmbeddings,
    ) -> Result<TowerForward> {
        if z.len() != seq.len() {
            return Err(Error::DimensionMismatch { expected: seq.len(), actual: z.len() });
        }
        let pooled = self.pool(z, seq.mask())?;
        let output = self.project(&pooled)?;
        Ok(TowerForward { seq: seq.clone(), pooled, output })
    }

    fn pool(&self, z: &InputEmbeddings, mask: &[bool]) -> Result<Vec<f64>> {
        let d = self.dims().hidden_dim;
        if z.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, actual: z.dim() });
        }
        if mask.len() != z.len() {
            return Err(Error::DimensionMismatch { expected: z.len(), actual: mask.len() });
        }
        let mut pooled = vec![0.0; d];
        let mut count = 0usize;
        for (row, _) in z.matrix().iter_rows().zip(mask).filter(|(_, &m)| m) {
            for (acc, v) in pooled.iter_mut().zip(row) {
                *acc += v;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::AllMasked);
        }
        let inv = 1.0 / count as f64;
        pooled.iter_mut().for_each(|v| *v *= inv);
        Ok(pooled)
    }

    fn project(&self, pooled: &[f64]) -> Result<DenseVector> {
        let mut out = self.projection_bias.clone();
        for (p, row) in pooled.iter().zip(self.projection.iter_rows()) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += p * w;
            }
        }
        DenseVector::new(out)
    }

    /// Gradient of a scalar with respect to the pooled vector, given its
    /// gradient with respect to the tower output.
    fn pooled_gradient(&self, d_output: &[f64]) -> Vec<f64> {
        self.projection.iter_rows().map(|row| dot_slices(row, d_output)).collect()
    }

    /// Accumulates parameter gradients of a scalar whose gradient with respect
    /// to `fwd.output` is `d_output`.
    pub fn backward(&self, fwd: &TowerForward, d_output: &[f64], grads: &mut EncoderParams) {
        for (g, d) in grads.projection_bias.iter_mut().zip(d_output) {
            *g += d;
        }
        for (i, &p) in fwd.pooled.iter().enumerate() {
            if p != 0.0 {
                for (g, d) in grads.projection.row_mut(i).iter_mut().zip(d_output) {
                    *g += p * d;
                }
            }
        }
        let d_row = self.row_gradient(fwd, d_output);
        for (t, (&id, _)) in fwd.seq.ids().iter().zip(fwd.seq.mask()).enumerate().filter(|(_, (_, &m))| m) {
            for (g, d) in grads.word_embeddings.row_mut(id as usize).iter_mut().zip(&d_row) {
                *g += d;
            }
            for (g, d) in grads.position_embeddings.row_mut(t).iter_mut().zip(&d_row) {
                *g += d;
            }
        }
    }

    /// Gradient with respect to each unmasked input-embedding row (they are
    /// all equal under mean pooling).
    fn row_gradient(&self, fwd: &TowerForward, d_output: &[f64]) -> Vec<f64> {
        let inv = 1.0 / fwd.seq.real_len() as f64;
        let mut d = self.pooled_gradient(d_output);
        d.iter_mut().for_each(|v| *v *= inv);
        d
    }

    /// Gradient with respect to the input embedding matrix; pad rows are zero.
    pub fn input_gradient(&self, fwd: &TowerForward, d_output: &[f64]) -> Result<InputEmbeddings> {
        let d = self.dims().hidden_dim;
        let d_row = self.row_gradient(fwd, d_output);
        let mut z = Matrix::zeros(fwd.seq.len(), d);
        for (t, &m) in fwd.seq.mask().iter().enumerate() {
            if m {
                z.row_mut(t).copy_from_slice(&d_row);
            }
        }
        InputEmbeddings::new(z)
    }
}

/// Cached values of one tower forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerForward {
    pub seq: TokenSequence,
    pub pooled: Vec<f64>,
    pub output: DenseVector,
}

pub fn score(m: &DenseVector, e: &DenseVector, kind: SimilarityKind) -> Result<f64> {
    match kind {
        SimilarityKind::Dot => numerics::dot(m, e),
        SimilarityKind::Cosine => numerics::cosine(m, e),
    }
}

/// Similarity together with its gradients `(s, ∂s/∂m, ∂s/∂e)`.
pub fn score_with_gradients(
    m: &DenseVector,
    e: &DenseVector,
    kind: SimilarityKind,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let s = score(m, e, kind)?;
    let (m, e) = (m.as_slice(), e.as_slice());
    match kind {
        SimilarityKind::Dot => Ok((s, e.to_vec(), m.to_vec())),
        SimilarityKind::Cosine => {
            // Unclamped value keeps the gradient consistent with the quotient.
            let nm = numerics::l2_norm(m);
            let ne = numerics::l2_norm(e);
            let raw = dot_slices(m, e) / (nm * ne);
            let dm = m
                .iter()
                .zip(e)
                .map(|(mi, ei)| ei / (nm * ne) - raw * mi / (nm * nm))
                .collect();
            let de = m
                .iter()
                .zip(e)
                .map(|(mi, ei)| mi / (nm * ne) - raw * ei / (ne * ne))
                .collect();
            Ok((s, dm, de))
        }
    }
}

/// Access to every parameter tensor as a flat slice, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|t| dot_slices(t, t))
            .sum::<f64>()
            .sqrt()
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![
            self.word_embeddings.as_slice(),
            self.position_embeddings.as_slice(),
            self.projection.as_slice(),
            &self.projection_bias,
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.word_embeddings.as_mut_slice(),
            self.position_embeddings.as_mut_slice(),
            self.projection.as_mut_slice(),
            &mut self.projection_bias,
        ]
    }
}

impl Parameters for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    pub mention_tower: EncoderParams,
    pub entity_tower: EncoderParams,
    pub similarity: SimilarityKind,
}

/// Gradients for both towers of a [`BiEncoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoderGrads {
    pub mention: EncoderParams,
    pub entity: EncoderParams,
}

impl BiEncoderGrads {
    pub fn zeros_like(model: &BiEncoder) -> Self {
        Self {
            mention: EncoderParams::zeros(model.mention_tower.dims()),
            entity: EncoderParams::zeros(model.entity_tower.dims()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

impl Parameters for BiEncoderGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mention.tensors();
        t.extend(self.entity.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mention.tensors_mut();
        t.extend(self.entity.tensors_mut());
        t
    }
}

impl Parameters for BiEncoder {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.mention_tower.tensors();
        t.extend(self.entity_tower.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.mention_tower.tensors_mut();
        t.extend(self.entity_tower.tensors_mut());
        t
    }
}

/// A mention forward pass paired with one entity forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ScoredPair<'a> {
    pub mention: &'a TowerForward,
    pub entity: &'a TowerForward,
}

impl BiEncoder {
    pub fn new(
        mention_tower: EncoderParams,
        entity_tower: EncoderParams,
        similarity: SimilarityKind,
    ) -> Result<Self> {
        let (m, e) = (mention_tower.dims().output_dim, entity_tower.dims().output_dim);
        if m != e {
            return Err(Error::DimensionMismatch { expected: m, actual: e });
        }
        Ok(Self { mention_tower, entity_tower, similarity })
    }

    /// Independent uniform initialisation of both towers.
    pub fn random<R: Rng + ?Sized>(
        dims: TowerDims,
        similarity: SimilarityKind,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mention_tower = EncoderParams::random(dims, scale, rng);
        let entity_tower = EncoderParams::random(dims, scale, rng);
        Self { mention_tower, entity_tower, similarity }
    }

    /// Both towers start from the same random draw, as two encoders
    /// initialised from one pretrained checkpoint would.
    pub fn random_shared<R: Rng + ?Sized>(
        dims: TowerDims,
        similarity: SimilarityKind,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mention_tower = EncoderParams::random(dims, scale, rng);
        let entity_tower = mention_tower.clone();
        Self { mention_tower, entity_tower, similarity }
    }

    pub fn encode_mention(&self, seq: &TokenSequence) -> Result<TowerForward> {
        self.mention_tower.forward(seq)
    }

    pub fn encode_entity(&self, seq: &TokenSequence) -> Result<TowerForward> {
        self.entity_tower.forward(seq)
    }

    pub fn score(&self, mention: &TowerForward, entity: &TowerForward) -> Result<f64> {
        score(&mention.output, &entity.output, self.similarity)
    }

    /// Parameter gradients of `Σ_i upstream[i] · s(pair_i)`.
    pub fn grad_params(&self, pairs: &[ScoredPair<'_>], upstream: &[f64]) -> Result<BiEncoderGrads> {
        if pairs.len() != upstream.len() {
            return Err(Error::DimensionMismatch { expected: pairs.len(), actual: upstream.len() });
        }
        let mut grads = BiEncoderGrads::zeros_like(self);
        for (pair, &u) in pairs.iter().zip(upstream) {
            self.backward_group(pair.mention, &[pair.entity], &[u], &mut grads)?;
        }
        Ok(grads)
    }

    /// Accumulates gradients of `Σ_i upstream[i] · s(mention, entities[i])`,
    /// running the mention tower backward pass once for the whole group.
    pub fn backward_group(
        &self,
        mention: &TowerForward,
        entities: &[&TowerForward],
        upstream: &[f64],
        grads: &mut BiEncoderGrads,
    ) -> Result<()> {
        if entities.len() != upstream.len() {
            return Err(Error::DimensionMismatch {
                expected: entities.len(),
                actual: upstream.len(),
            });
        }
        let mut d_mention = vec![0.0; mention.output.dim()];
        for (entity, &u) in entities.iter().zip(upstream) {
            if u == 0.0 {
                continue;
            }
            let (_, ds_dm, ds_de) =
                score_with_gradients(&mention.output, &entity.output, self.similarity)?;
            for (acc, g) in d_mention.iter_mut().zip(&ds_dm) {
                *acc += u * g;
            }
            let d_entity: Vec<f64> = ds_de.iter().map(|g| u * g).collect();
            self.entity_tower.backward(entity, &d_entity, &mut grads.entity);
        }
        self.mention_tower.backward(mention, &d_mention, &mut grads.mention);
        Ok(())
    }

    /// `∇_z s(m, e)` for the entity input embeddings `z`.
    pub fn grad_input_embeddings(
        &self,
        mention: &DenseVector,
        entity: &TowerForward,
    ) -> Result<InputEmbeddings> {
        let (_, _, ds_de) = score_with_gradients(mention, &entity.output, self.similarity)?;
        self.entity_tower.input_gradient(entity, &ds_de)
    }
}
