//! Small configurations and datasets shared by the integration tests.

use nasrec_core::data::{synth_generate, CtrDataset, PlantedStructure, SynthSpec};
use nasrec_core::search_space::SupernetConfig;

/// `nasrec_full` operators with `blocks` blocks and small feature/dim sets.
pub fn tiny_full(blocks: usize) -> SupernetConfig {
    let mut cfg = SupernetConfig::preset("nasrec_full").unwrap();
    cfg.num_blocks = blocks;
    cfg.dense_dims = vec![4, 8];
    cfg.sparse_dims = vec![2, 3];
    cfg.num_dense_features = 3;
    cfg.vocab_sizes = vec![5, 7, 4];
    cfg.embedding_dim = 4;
    cfg
}

/// Same operators as `nasrec_full` at moderate width.
pub fn small_full(blocks: usize, num_dense: usize, vocab: &[usize]) -> SupernetConfig {
    let mut cfg = SupernetConfig::preset("nasrec_full").unwrap();
    cfg.num_blocks = blocks;
    cfg.dense_dims = vec![16, 32, 64];
    cfg.sparse_dims = vec![4, 8];
    cfg.num_dense_features = num_dense;
    cfg.vocab_sizes = vocab.to_vec();
    cfg.embedding_dim = 8;
    cfg
}

pub fn synth(rows: usize, num_dense: usize, num_cat: usize, vocab: usize, seed: u64) -> CtrDataset {
    synth_generate(&SynthSpec {
        n_rows: rows,
        num_dense,
        num_cat,
        vocab,
        structure: PlantedStructure::PairwiseInteraction,
        seed,
    })
    .unwrap()
}

/// Dataset shaped for `tiny_full`.
pub fn tiny_data(rows: usize, seed: u64) -> CtrDataset {
    let mut ds = synth(rows, 3, 3, 7, seed);
    let vocab = [5u32, 7, 4];
    for (i, id) in ds.cat.iter_mut().enumerate() {
        *id %= vocab[i % 3];
    }
    ds.vocab_sizes = vec![5, 7, 4];
    ds
}
