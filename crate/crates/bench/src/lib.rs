//! Inputs shared by the benchmarks under `benches/`.

use ketm::model::{Ketm, ModelConfig, PairInput};
use ketm::ParamStore;
use ketm::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Vocabulary size for the model benchmarks. Only the embedding table
/// depends on it.
pub const VOCAB: usize = 2000;

pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}

/// A sentence pair of length `len` with knowledge texts twice as long,
/// drawn from ids that skip `<pad>` and `<unk>`.
pub fn pair(len: usize, seed: u64) -> PairInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids = |n: usize| (0..n).map(|_| rng.gen_range(2..VOCAB)).collect::<Vec<_>>();
    PairInput {
        a: ids(len),
        b: ids(len),
        ka: ids(2 * len),
        kb: ids(2 * len),
    }
}

/// The default architecture at embedding and hidden width `width`.
pub fn model(width: usize) -> (Ketm, ParamStore<f32>) {
    let mut config = ModelConfig::new(VOCAB, 3);
    config.embed_dim = width;
    config.matching.hidden = width;
    config.matching.dropout = 0.0;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Ketm::new(config, &mut store, &mut rng).expect("valid config");
    (model, store)
}
