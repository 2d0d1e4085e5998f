//! Supernet training, shared-weight evaluation, head fine-tuning, from-scratch
//! training and top-k selection.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Graph};
use crate::checkpoint::{read_checkpoint, write_checkpoint};
use crate::data::{Batch, CtrDataset};
use crate::error::{NasError, Result};
use crate::metrics::EvalResult;
use crate::network::{ExecMode, Subnet, Supernet, HEAD_BIAS, HEAD_WEIGHT};
use crate::optim::{Adagrad, LrSchedule};
use crate::sampler::{sample_with_warmup, SamplingStrategy, WarmupSchedule};
use crate::search_space::{param_count, Genotype, NetworkLayout, ParamReport, SupernetConfig};
use crate::tensor::{glorot_bound, ParamStore, Tensor};

/// Rows per forward pass during evaluation.
pub const EVAL_BATCH: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Row cap per embedding table; `None` keeps full tables.
    pub embedding_cap: Option<usize>,
    pub strategy: SamplingStrategy,
    pub warmup_fraction: f64,
    pub seed: u64,
    /// Mini-batches used by head fine-tuning.
    pub finetune_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            batch_size: 256,
            base_lr: 0.04,
            embedding_cap: Some(500_000),
            strategy: SamplingStrategy::SingleOpAnyConn,
            warmup_fraction: 0.25,
            seed: 0,
            finetune_steps: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub full_supernet: bool,
}

/// Supernet weights plus optimizer state and progress.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub supernet: Supernet<f32>,
    pub optimizer: Adagrad<f32>,
    pub step: usize,
    pub log: Vec<StepLog>,
}

impl TrainState {
    pub fn new(cfg: &SupernetConfig, tc: &TrainConfig) -> Result<Self> {
        Ok(TrainState {
            supernet: Supernet::new(cfg, tc.embedding_cap, tc.seed)?,
            optimizer: Adagrad::new(tc.base_lr),
            step: 0,
            log: Vec::new(),
        })
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        write_checkpoint(w, &self.supernet.store, Some(&self.optimizer), self.step as u64)
    }

    pub fn load<R: Read>(r: R, cfg: &SupernetConfig, tc: &TrainConfig) -> Result<Self> {
        let ck = read_checkpoint::<f32, _>(r, tc.base_lr)?;
        Ok(TrainState {
            supernet: Supernet::from_store(cfg, tc.embedding_cap, ck.store)?,
            optimizer: ck.optimizer,
            step: ck.step as usize,
            log: Vec::new(),
        })
    }
}

fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size.max(1))
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

fn check_loss(loss: f64, batch: usize, g: &Genotype) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(NasError::NonFiniteLoss {
            loss,
            batch,
            genotype: g.to_json(),
        })
    }
}

/// One pass of path-sampled training per epoch. `on_step` sees every step.
pub fn train_supernet_with(
    cfg: &SupernetConfig,
    tc: &TrainConfig,
    train: &CtrDataset,
    mut on_step: impl FnMut(&StepLog),
) -> Result<TrainState> {
    let mut state = TrainState::new(cfg, tc)?;
    let per_epoch = steps_per_epoch(train.len(), tc.batch_size);
    let total = per_epoch * tc.epochs;
    let sched = LrSchedule::new(tc.base_lr, total)?;
    let warm = WarmupSchedule::new(total, tc.warmup_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let full = Genotype::full(cfg);
    for epoch in 0..tc.epochs {
        for idx in train.batch_indices(tc.batch_size, Some(epoch_seed(tc.seed, epoch))) {
            let batch = train.batch(&idx);
            let g = sample_with_warmup(tc.strategy, &warm, state.step, cfg, &mut rng);
            let lr = sched.cosine_lr(state.step)?;
            let (loss, grads) = {
                let net = &state.supernet;
                let mut graph = net.graph();
                let z = net.forward(&mut graph, &g, &batch, ExecMode::Sliced)?;
                let l = graph.bce_with_logits(z, &batch.labels)?;
                let loss = graph.value(l)[0] as f64;
                check_loss(loss, state.step, &g)?;
                (loss, graph.backward(l)?)
            };
            state.optimizer.step(&mut state.supernet.store, grads.params(), lr)?;
            let entry = StepLog {
                step: state.step,
                epoch,
                lr,
                loss,
                full_supernet: g == full,
            };
            on_step(&entry);
            state.log.push(entry);
            state.step += 1;
        }
    }
    Ok(state)
}

pub fn train_supernet(cfg: &SupernetConfig, tc: &TrainConfig, train: &CtrDataset) -> Result<TrainState> {
    train_supernet_with(cfg, tc, train, |_| {})
}

fn eval_chunks(data: &CtrDataset) -> impl Iterator<Item = Batch> + '_ {
    let idx: Vec<usize> = (0..data.len()).collect();
    let chunks: Vec<Vec<usize>> = idx.chunks(EVAL_BATCH).map(|c| c.to_vec()).collect();
    chunks.into_iter().map(move |c| data.batch(&c))
}

fn labels_f64(data: &CtrDataset) -> Vec<f64> {
    data.labels.iter().map(|&y| y as f64).collect()
}

/// Click probabilities of subnet `g` using shared supernet weights.
pub fn predict_shared(net: &Supernet<f32>, g: &Genotype, data: &CtrDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for batch in eval_chunks(data) {
        let mut graph = net.graph().no_grad();
        let z = net.forward(&mut graph, g, &batch, ExecMode::Sliced)?;
        out.extend(graph.value(z).iter().map(|&v| sigmoid(v as f64)));
    }
    Ok(out)
}

/// Forward-only metrics of `g` with shared weights; never mutates the supernet.
pub fn eval_subnet_shared(net: &Supernet<f32>, g: &Genotype, data: &CtrDataset) -> Result<EvalResult> {
    let probs = predict_shared(net, g, data)?;
    EvalResult::from_probs(&probs, &labels_f64(data))
}

pub fn predict_standalone(sub: &Subnet<f32>, data: &CtrDataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for batch in eval_chunks(data) {
        let mut graph = sub.graph().no_grad();
        let z = sub.forward(&mut graph, &batch)?;
        out.extend(graph.value(z).iter().map(|&v| sigmoid(v as f64)));
    }
    Ok(out)
}

pub fn eval_standalone(sub: &Subnet<f32>, data: &CtrDataset) -> Result<EvalResult> {
    let probs = predict_standalone(sub, data)?;
    EvalResult::from_probs(&probs, &labels_f64(data))
}

fn shared_features(net: &Supernet<f32>, g: &Genotype, batch: &Batch) -> Result<Tensor<f32>> {
    let mut graph = net.graph().no_grad();
    let f = net.features(&mut graph, g, batch, ExecMode::Sliced)?;
    Ok(graph.tensor(f))
}

/// Copy of the head slice read by `g`.
fn head_store(net: &Supernet<f32>, g: &Genotype) -> Result<ParamStore<f32>> {
    let width = NetworkLayout::new(&net.cfg, g).head_width();
    let w = net.store.get(net.store.id(HEAD_WEIGHT).expect("head weight"));
    let b = net.store.get(net.store.id(HEAD_BIAS).expect("head bias"));
    let mut store = ParamStore::new();
    store.add(HEAD_WEIGHT, Tensor::new(&[width, 1], w.data()[..width].to_vec())?)?;
    store.add(HEAD_BIAS, b.clone())?;
    Ok(store)
}

fn head_logits<'p>(graph: &mut Graph<'p, f32>, head: &'p ParamStore<f32>, feats: Tensor<f32>) -> Result<crate::autodiff::Var> {
    let x = graph.constant(feats);
    let w = graph.param(head.id(HEAD_WEIGHT).expect("head weight"));
    let b = graph.param(head.id(HEAD_BIAS).expect("head bias"));
    graph.linear(x, w, Some(b))
}

/// Retrains a private copy of the logit head of `g` for `steps` training
/// mini-batches (fresh Adagrad, constant `base_lr`, every other weight frozen),
/// then reports metrics on `eval`.
pub fn finetune_last_fc(
    net: &Supernet<f32>,
    g: &Genotype,
    steps: usize,
    train: &CtrDataset,
    eval: &CtrDataset,
    tc: &TrainConfig,
) -> Result<EvalResult> {
    if steps == 0 {
        return eval_subnet_shared(net, g, eval);
    }
    g.ensure_valid(&net.cfg)?;
    let mut head = head_store(net, g)?;
    let mut opt = Adagrad::new(tc.base_lr);
    let mut order: Vec<Vec<usize>> = Vec::new();
    let mut epoch = 0;
    for step in 0..steps {
        if order.is_empty() {
            order = train.batch_indices(tc.batch_size, Some(epoch_seed(tc.seed ^ 0x5EED, epoch)));
            order.reverse();
            epoch += 1;
        }
        let idx = order.pop().expect("refilled above");
        let batch = train.batch(&idx);
        let feats = shared_features(net, g, &batch)?;
        let grads = {
            let mut graph = Graph::with_params(&head);
            let z = head_logits(&mut graph, &head, feats)?;
            let l = graph.bce_with_logits(z, &batch.labels)?;
            check_loss(graph.value(l)[0] as f64, step, g)?;
            graph.backward(l)?
        };
        opt.step(&mut head, grads.params(), tc.base_lr)?;
    }
    let mut probs = Vec::with_capacity(eval.len());
    for batch in eval_chunks(eval) {
        let feats = shared_features(net, g, &batch)?;
        let mut graph = Graph::with_params(&head).no_grad();
        let z = head_logits(&mut graph, &head, feats)?;
        probs.extend(graph.value(z).iter().map(|&v| sigmoid(v as f64)));
    }
    EvalResult::from_probs(&probs, &labels_f64(eval))
}

#[derive(Clone, Debug, Serialize)]
pub struct ScratchResult {
    pub val: EvalResult,
    pub test: EvalResult,
    pub params: ParamReport,
    pub final_train_loss: f64,
}

/// Re-initialises every non-embedding tensor of a standalone subnet from its
/// own shape: Glorot weights, zero biases and shifts, unit norm scales.
fn reinitialise(sub: &mut Subnet<f32>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = sub.store.ids().collect();
    for id in ids {
        let name = sub.store.name(id).to_string();
        if name == crate::network::EMBEDDING_TABLE {
            continue;
        }
        let t = sub.store.get_mut(id);
        let shape = t.shape().to_vec();
        *t = if name.ends_with(".ln.g") {
            Tensor::filled(&shape, 1.0)
        } else if shape.len() == 2 {
            Tensor::uniform(&shape, glorot_bound(shape[0], shape[1]), &mut rng)
        } else {
            Tensor::zeros(&shape)
        };
    }
}

/// Trains `g` alone from a fresh initialisation with the supernet recipe
/// (Adagrad, cosine schedule, `tc.epochs` passes), then scores validation and
/// test splits. `full_embeddings` lifts the embedding cap.
pub fn train_from_scratch(
    g: &Genotype,
    cfg: &SupernetConfig,
    tc: &TrainConfig,
    train: &CtrDataset,
    val: &CtrDataset,
    test: &CtrDataset,
    full_embeddings: bool,
) -> Result<ScratchResult> {
    g.ensure_valid(cfg)?;
    let cap = if full_embeddings { None } else { tc.embedding_cap };
    let mut sub = Supernet::<f32>::new(cfg, cap, tc.seed)?.extract_subnet(g)?;
    reinitialise(&mut sub, tc.seed ^ 0xC0FFEE);
    let per_epoch = steps_per_epoch(train.len(), tc.batch_size);
    let sched = LrSchedule::new(tc.base_lr, per_epoch * tc.epochs)?;
    let mut opt = Adagrad::new(tc.base_lr);
    let mut step = 0;
    let mut last = f64::NAN;
    for epoch in 0..tc.epochs {
        for idx in train.batch_indices(tc.batch_size, Some(epoch_seed(tc.seed, epoch))) {
            let batch = train.batch(&idx);
            let grads = {
                let mut graph = sub.graph();
                let z = sub.forward(&mut graph, &batch)?;
                let l = graph.bce_with_logits(z, &batch.labels)?;
                last = graph.value(l)[0] as f64;
                check_loss(last, step, g)?;
                graph.backward(l)?
            };
            opt.step(&mut sub.store, grads.params(), sched.cosine_lr(step)?)?;
            step += 1;
        }
    }
    Ok(ScratchResult {
        val: eval_standalone(&sub, val)?,
        test: eval_standalone(&sub, test)?,
        params: param_count(g, cfg, cap)?,
        final_train_loss: last,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Scored {
    pub genotype: Genotype,
    pub result: EvalResult,
}

/// Scores every candidate by fine-tuned shared-weight log loss on `val` and
/// returns the best `k`, ties broken by genotype JSON.
pub fn select_topk(
    net: &Supernet<f32>,
    candidates: &[Genotype],
    k: usize,
    train: &CtrDataset,
    val: &CtrDataset,
    tc: &TrainConfig,
) -> Result<Vec<Scored>> {
    if k > candidates.len() {
        log::warn!("k = {k} exceeds {} candidates; returning all", candidates.len());
    }
    let mut scored = candidates
        .par_iter()
        .map(|g| {
            finetune_last_fc(net, g, tc.finetune_steps, train, val, tc).map(|r| Scored {
                genotype: g.clone(),
                result: r,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| {
        a.result
            .logloss
            .total_cmp(&b.result.logloss)
            .then_with(|| a.genotype.to_json().cmp(&b.genotype.to_json()))
    });
    scored.truncate(k);
    Ok(scored)
}
