//! Negative sampling and exact hard-negative mining.
//!
//! Entities are addressed by their position in the knowledge base, which is
//! kept sorted by entity id, so "ascending position" and "ascending id" are
//! the same tie-break everywhere.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{BiEncoder, SimilarityKind, TokenSequence};
use crate::error::{Error, Result};
use crate::numerics::{cosine_slices, dot_slices, DenseVector, Matrix};

/// Entity embeddings produced by one pass of the entity tower over the KB.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityIndex {
    pub entity_ids: Vec<String>,
    pub embeddings: Matrix,
    pub similarity: SimilarityKind,
    pub built_at_step: u64,
}

impl EntityIndex {
    pub fn new(
        entity_ids: Vec<String>,
        embeddings: Matrix,
        similarity: SimilarityKind,
        built_at_step: u64,
    ) -> Result<Self> {
        if entity_ids.len() != embeddings.rows() {
            return Err(Error::DimensionMismatch {
                expected: entity_ids.len(),
                actual: embeddings.rows(),
            });
        }
        if entity_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "index entity ids must be unique and sorted".into(),
            ));
        }
        if embeddings.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("index embeddings"));
        }
        Ok(Self { entity_ids, embeddings, similarity, built_at_step })
    }

    pub fn len(&self) -> usize {
        self.entity_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entity_ids.is_empty()
    }

    pub fn embedding(&self, position: usize) -> DenseVector {
        DenseVector::new(self.embeddings.row(position).to_vec()).expect("validated index row")
    }

    /// Similarity of `query` to every indexed entity, in index order.
    pub fn scores(&self, query: &DenseVector) -> Result<Vec<f64>> {
        if query.dim() != self.embeddings.cols() {
            return Err(Error::DimensionMismatch { expected: self.embeddings.cols(), actual: query.dim() });
        }
        let q = query.as_slice();
        self.embeddings
            .iter_rows()
            .enumerate()
            .map(|(i, row)| {
                let s = match self.similarity {
                    SimilarityKind::Dot => Ok(dot_slices(q, row)),
                    SimilarityKind::Cosine => cosine_slices(q, row),
                };
                s.and_then(|s| if s.is_finite() { Ok(s) } else { Err(Error::NonFinite("score")) })
                    .map_err(|e| Error::EntityEncoding { id: self.entity_ids[i].clone(), source: Box::new(e) })
            })
            .collect()
    }

    /// The `k` most similar positions (excluding `exclude`), highest score
    /// first, ties broken by ascending position.
    pub fn query_hard(&self, query: &DenseVector, k: usize, exclude: Option<usize>) -> Result<Vec<usize>> {
        if k >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "requested {k} hard negatives from an index of {} entities",
                self.len()
            )));
        }
        let scores = self.scores(query)?;
        Ok(top_k(&scores, k, exclude))
    }
}

/// Orders `(score, position)` by descending score, then ascending position.
pub(crate) fn rank_order(scores: &[f64], a: usize, b: usize) -> Ordering {
    scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

/// Top-`k` positions of `scores` under [`rank_order`], skipping `exclude`.
pub(crate) fn top_k(scores: &[f64], k: usize, exclude: Option<usize>) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len()).filter(|&i| Some(i) != exclude).collect();
    let k = k.min(candidates.len());
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, |&a, &b| rank_order(scores, a, b));
        candidates.truncate(k);
    }
    candidates.sort_unstable_by(|&a, &b| rank_order(scores, a, b));
    candidates
}

/// Embeds every KB entity with the current entity tower.
pub fn build_index(
    entity_ids: &[String],
    entity_sequences: &[TokenSequence],
    model: &BiEncoder,
    built_at_step: u64,
) -> Result<EntityIndex> {
    if entity_ids.len() != entity_sequences.len() {
        return Err(Error::DimensionMismatch {
            expected: entity_ids.len(),
            actual: entity_sequences.len(),
        });
    }
    let dim = model.entity_tower.dims().output_dim;
    let mut embeddings = Matrix::zeros(entity_ids.len(), dim);
    for (i, (id, seq)) in entity_ids.iter().zip(entity_sequences).enumerate() {
        let fwd = model.encode_entity(seq).map_err(|e| Error::EntityEncoding {
            id: id.clone(),
            source: Box::new(e),
        })?;
        embeddings.row_mut(i).copy_from_slice(fwd.output.as_slice());
    }
    EntityIndex::new(entity_ids.to_vec(), embeddings, model.similarity, built_at_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingKind {
    Random,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplingPolicy {
    pub kind: SamplingKind,
    pub n_negatives: usize,
    /// Fraction of negatives taken from the hard-negative index (mixed only).
    pub hard_fraction: f64,
    pub refresh_every_epochs: usize,
    pub rng_seed: u64,
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self {
            kind: SamplingKind::Random,
            n_negatives: 64,
            hard_fraction: 0.5,
            refresh_every_epochs: 1,
            rng_seed: 0,
        }
    }
}

impl SamplingPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.n_negatives == 0 {
            return Err(Error::Config("n_negatives must be at least 1".into()));
        }
        if self.refresh_every_epochs == 0 {
            return Err(Error::Config("refresh_every_epochs must be at least 1".into()));
        }
        if self.kind == SamplingKind::Mixed && !(self.hard_fraction > 0.0 && self.hard_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "mixed sampling needs hard_fraction in (0, 1], got {}",
                self.hard_fraction
            )));
        }
        Ok(())
    }

    /// Number of hard negatives per mention: `⌈p·n⌉` for mixed sampling.
    pub fn hard_count(&self) -> usize {
        match self.kind {
            SamplingKind::Random => 0,
            SamplingKind::Mixed => {
                let c = (self.hard_fraction * self.n_negatives as f64).ceil() as usize;
                c.min(self.n_negatives)
            }
        }
    }

    pub fn needs_index(&self) -> bool {
        self.hard_count() > 0
    }
}

/// `n` distinct positions drawn uniformly from `0..kb_size`, never `gold`.
pub fn sample_random<R: Rng + ?Sized>(
    kb_size: usize,
    gold: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    sample_excluding(kb_size, &[gold], n, rng)
}

/// `n` distinct positions drawn uniformly from `0..kb_size` minus `excluded`.
pub fn sample_excluding<R: Rng + ?Sized>(
    kb_size: usize,
    excluded: &[usize],
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut excluded: Vec<usize> = excluded.iter().copied().filter(|&e| e < kb_size).collect();
    excluded.sort_unstable();
    excluded.dedup();
    let available = kb_size - excluded.len();
    if n > available {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} negatives from {available} eligible entities"
        )));
    }
    let draws = rand::seq::index::sample(rng, available, n);
    Ok(draws
        .into_iter()
        .map(|mut i| {
            // Map the i-th eligible slot to its position by skipping exclusions.
            for &e in &excluded {
                if e <= i {
                    i += 1;
                } else {
                    break;
                }
            }
            i
        })
        .collect())
}

/// `⌈p·n⌉` hardest negatives followed by uniform random ones.
pub fn sample_mixed<R: Rng + ?Sized>(
    policy: &SamplingPolicy,
    index: &EntityIndex,
    mention: &DenseVector,
    gold: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let hard_n = policy.hard_count();
    let mut chosen = index.query_hard(mention, hard_n, Some(gold))?;
    let mut excluded = chosen.clone();
    excluded.push(gold);
    let rest = sample_excluding(index.len(), &excluded, policy.n_negatives - hard_n, rng)?;
    chosen.extend(rest);
    Ok(chosen)
}

/// Negatives for one mention under `policy`.
pub fn sample_negatives<R: Rng + ?Sized>(
    policy: &SamplingPolicy,
    kb_size: usize,
    index: Option<&EntityIndex>,
    mention: &DenseVector,
    gold: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    match (policy.kind, index) {
        (SamplingKind::Random, _) => sample_random(kb_size, gold, policy.n_negatives, rng),
        (SamplingKind::Mixed, Some(index)) => sample_mixed(policy, index, mention, gold, rng),
        (SamplingKind::Mixed, None) => {
            Err(Error::InvalidArgument("mixed sampling needs an entity index".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::TowerDims;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("E{i:04}")).collect()
    }

    fn random_index(n: usize, dim: usize, kind: SimilarityKind, seed: u64) -> EntityIndex {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        EntityIndex::new(ids(n), Matrix::from_vec(n, dim, data).unwrap(), kind, 0).unwrap()
    }

    fn model(seed: u64) -> BiEncoder {
        let dims = TowerDims { vocab_size: 30, max_seq_len: 8, hidden_dim: 6, output_dim: 5 };
        BiEncoder::random(dims, SimilarityKind::Cosine, 0.1, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn seqs(n: usize) -> Vec<TokenSequence> {
        (0..n)
            .map(|i| TokenSequence::new(vec![(i % 29) as u32 + 1, (i * 7 % 29) as u32 + 1]).unwrap())
            .collect()
    }

    #[test]
    fn index_of_one_entity() {
        let idx = build_index(&ids(1), &seqs(1), &model(1), 0).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.embeddings.rows(), 1);
    }

    #[test]
    fn rebuilding_is_bitwise_identical() {
        let m = model(2);
        let a = build_index(&ids(40), &seqs(40), &m, 3).unwrap();
        let b = build_index(&ids(40), &seqs(40), &m, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn index_rows_match_independent_encoding() {
        let m = model(3);
        let s = seqs(100);
        let idx = build_index(&ids(100), &s, &m, 0).unwrap();
        for (i, seq) in s.iter().enumerate() {
            let direct = m.entity_tower.encode(
                &m.entity_tower.compose_input_embeddings(seq).unwrap(),
                seq.mask(),
            ).unwrap();
            assert_eq!(idx.embeddings.row(i), direct.as_slice());
        }
    }

    #[test]
    fn index_rejects_unsorted_ids() {
        let ids = vec!["b".to_string(), "a".to_string()];
        assert!(EntityIndex::new(ids, Matrix::zeros(2, 2), SimilarityKind::Dot, 0).is_err());
    }

    #[test]
    fn exhaustive_query_returns_every_other_entity() {
        let idx = random_index(12, 4, SimilarityKind::Dot, 4);
        let q = idx.embedding(5);
        let mut got = idx.query_hard(&q, 11, Some(5)).unwrap();
        got.sort_unstable();
        assert_eq!(got, (0..12).filter(|&i| i != 5).collect::<Vec<_>>());
        assert!(idx.query_hard(&q, 12, Some(5)).is_err());
    }

    #[test]
    fn identical_embedding_ranks_first_under_cosine() {
        let idx = random_index(30, 6, SimilarityKind::Cosine, 5);
        let q = idx.embedding(17);
        assert_eq!(idx.query_hard(&q, 3, None).unwrap()[0], 17);
        assert_ne!(idx.query_hard(&q, 3, Some(17)).unwrap()[0], 17);
    }

    #[test]
    fn ties_break_by_position() {
        let idx = EntityIndex::new(ids(4), Matrix::from_vec(4, 1, vec![1.0; 4]).unwrap(), SimilarityKind::Dot, 0).unwrap();
        let q = DenseVector::new(vec![1.0]).unwrap();
        assert_eq!(idx.query_hard(&q, 3, Some(1)).unwrap(), vec![0, 2, 3]);
    }

    #[test]
    fn query_matches_brute_force_sort() {
        for seed in 0..20 {
            let idx = random_index(50, 8, SimilarityKind::Cosine, 100 + seed);
            let q = DenseVector::new((0..8).map(|i| (i as f64 * 0.37 + seed as f64).sin()).collect()).unwrap();
            let gold = (seed as usize * 7) % 50;
            let got = idx.query_hard(&q, 10, Some(gold)).unwrap();

            let mut all: Vec<(f64, usize)> = (0..50)
                .filter(|&i| i != gold)
                .map(|i| (crate::numerics::cosine(&q, &idx.embedding(i)).unwrap(), i))
                .collect();
            all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<usize> = all.iter().take(10).map(|p| p.1).collect();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn random_sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert_eq!(sample_random(2, 0, 1, &mut rng).unwrap(), vec![1]);
        assert_eq!(sample_random(2, 1, 1, &mut rng).unwrap(), vec![0]);
        assert!(sample_random(5, 0, 5, &mut rng).is_err());

        let a = sample_random(100, 7, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_random(100, 7, 20, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_sampling_is_uniform() {
        // 10^5 single draws over the 5 non-gold entities of a 6-entity KB.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000usize;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            counts[sample_random(6, 2, 1, &mut rng).unwrap()[0]] += 1;
        }
        assert_eq!(counts[2], 0);
        let expected = draws as f64 / 5.0;
        let sigma = (draws as f64 * 0.2 * 0.8).sqrt();
        let mut chi2 = 0.0;
        for (i, &c) in counts.iter().enumerate().filter(|(i, _)| *i != 2) {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "id {i}: {c}");
            chi2 += (c as f64 - expected).powi(2) / expected;
        }
        // chi-square with 4 dof, p = 0.001 critical value
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }

    #[test]
    fn mixed_sampling_counts() {
        let idx = random_index(200, 6, SimilarityKind::Cosine, 8);
        let q = idx.embedding(0);
        let policy = SamplingPolicy { kind: SamplingKind::Mixed, n_negatives: 64, hard_fraction: 0.5, ..Default::default() };
        assert_eq!(policy.hard_count(), 32);
        let got = sample_mixed(&policy, &idx, &q, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(got.len(), 64);
        assert_eq!(&got[..32], idx.query_hard(&q, 32, Some(0)).unwrap().as_slice());

        let five = SamplingPolicy { n_negatives: 5, ..policy };
        assert_eq!(five.hard_count(), 3);

        let all_hard = SamplingPolicy { hard_fraction: 1.0, ..policy };
        let got = sample_mixed(&all_hard, &idx, &q, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(got, idx.query_hard(&q, 64, Some(0)).unwrap());
    }

    #[test]
    fn policy_validation() {
        let bad = SamplingPolicy { kind: SamplingKind::Mixed, hard_fraction: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        assert!(SamplingPolicy { n_negatives: 0, ..Default::default() }.validate().is_err());
        assert!(SamplingPolicy::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn negatives_are_distinct_sized_and_exclude_gold(
            kb in 3usize..120,
            gold_seed in 0usize..1000,
            n_seed in 0usize..1000,
            p in 0.05f64..1.0,
            seed in 0u64..1000,
            mixed in any::<bool>(),
        ) {
            let gold = gold_seed % kb;
            let n = 1 + n_seed % (kb - 1);
            let idx = random_index(kb, 4, SimilarityKind::Cosine, seed);
            let policy = SamplingPolicy {
                kind: if mixed { SamplingKind::Mixed } else { SamplingKind::Random },
                n_negatives: n,
                hard_fraction: p,
                ..Default::default()
            };
            let q = idx.embedding((gold + 1) % kb);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let got = sample_negatives(&policy, kb, Some(&idx), &q, gold, &mut rng).unwrap();
            prop_assert_eq!(got.len(), n);
            prop_assert!(!got.contains(&gold));
            let mut sorted = got.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), n);
            prop_assert!(got.iter().all(|&i| i < kb));
        }
    }
}
