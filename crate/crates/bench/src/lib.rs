//! Seeded inputs shared by the benchmarks.

use proxlink::datakit::{build_vocabulary, generate_synthetic};
use proxlink::trainer::ModelConfig;
use proxlink::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A proxy set with `n` negatives, scores uniform in `[-1, 1]`.
pub fn proxy_set(n: usize, seed: u64) -> ScoredProxySet {
    let mut r = rng(seed);
    let negatives = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    ScoredProxySet::new(r.random_range(-1.0..1.0), negatives).expect("finite scores")
}

/// Random token sequence of length `len` over `vocab_size` ids.
pub fn sequence(vocab_size: usize, len: usize, seed: u64) -> TokenSequence {
    let mut r = rng(seed);
    TokenSequence::new((0..len).map(|_| r.random_range(0..vocab_size as u32)).collect()).expect("non-empty")
}

/// Synthetic training set with `n_entities` entities, rendered at length 64.
pub fn training_set(n_entities: usize, n_mentions: usize) -> TrainingSet {
    let d = generate_synthetic(&SynthConfig {
        n_entities,
        n_train_mentions: n_mentions,
        n_validation_mentions: 10,
        n_test_mentions: 10,
        ..Default::default()
    })
    .expect("valid synth config");
    let vocab = build_vocabulary(&d);
    TrainingSet::from_records(&d.train, &d.kb, &vocab, 64, RenderStyle::Zeshel).expect("renderable")
}

pub fn train_config(loss_kind: LossKind, sampling: SamplingKind, fgsm_enabled: bool) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-2,
        loss_kind,
        fgsm_enabled,
        sampling: SamplingPolicy { kind: sampling, ..Default::default() },
        model: ModelConfig { max_seq_len: 64, init_scale: 1.0, ..Default::default() },
        ..Default::default()
    }
}
