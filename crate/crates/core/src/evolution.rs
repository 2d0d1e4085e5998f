//! Regularized (aging) evolution over genotypes with an adaptive number of
//! mutations per child.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};
use crate::operators::OperatorKind;
use crate::sampler::{nonempty_subset, sample, SamplingStrategy};
use crate::search_space::{Genotype, OpChoice, SupernetConfig};

/// Attempts at drawing a valid initial individual before giving up.
const MAX_INIT_ATTEMPTS: usize = 100;
/// Redraws of a connection subset while looking for a different one.
const MAX_CONN_REDRAWS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationMode {
    /// One uniformly drawn action per mutation.
    Single,
    /// All six actions in their listed order on one block per mutation.
    Sequence,
}

impl FromStr for MutationMode {
    type Err = NasError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(MutationMode::Single),
            "sequence" => Ok(MutationMode::Sequence),
            other => Err(NasError::InvalidArgument(format!("unknown mutation mode {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvoConfig {
    pub population: usize,
    pub iterations: usize,
    pub tournament: usize,
    pub children_per_iter: usize,
    pub initial_mutations: usize,
    pub decay_every: usize,
    pub mutation_mode: MutationMode,
    pub init_strategy: SamplingStrategy,
    pub seed: u64,
    /// Individuals reported in [`EvoResult::top`].
    pub top_k: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 64,
            iterations: 100,
            tournament: 32,
            children_per_iter: 16,
            initial_mutations: 5,
            decay_every: 20,
            mutation_mode: MutationMode::Single,
            init_strategy: SamplingStrategy::SingleOpAnyConn,
            seed: 0,
            top_k: 15,
        }
    }
}

impl EvoConfig {
    pub fn check(&self) -> Result<()> {
        if self.population == 0 || self.tournament == 0 || self.tournament > self.population {
            return Err(NasError::InvalidConfig("need 1 <= tournament <= population".into()));
        }
        if self.initial_mutations == 0 || self.decay_every == 0 {
            return Err(NasError::InvalidConfig(
                "initial_mutations and decay_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `max(1, initial_mutations - iter / decay_every)`.
pub fn mutations_per_child(iter: usize, cfg: &EvoConfig) -> usize {
    cfg.initial_mutations.saturating_sub(iter / cfg.decay_every.max(1)).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MutationAction {
    DenseDim,
    SparseDim,
    DenseOp,
    SparseOp,
    Connections,
    ProjectConcat,
}

impl MutationAction {
    pub const ALL: [MutationAction; 6] = [
        MutationAction::DenseDim,
        MutationAction::SparseDim,
        MutationAction::DenseOp,
        MutationAction::SparseOp,
        MutationAction::Connections,
        MutationAction::ProjectConcat,
    ];
}

impl fmt::Display for MutationAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).map_err(|_| fmt::Error)?;
        f.write_str(v.as_str().unwrap_or("?"))
    }
}

fn other_choice<T: Copy + PartialEq, R: Rng + ?Sized>(menu: &[T], current: T, rng: &mut R) -> T {
    let alts: Vec<T> = menu.iter().copied().filter(|&x| x != current).collect();
    alts.choose(rng).copied().unwrap_or(current)
}

fn mutate_dim<R: Rng + ?Sized>(ops: &mut [OpChoice], dims: &[usize], rng: &mut R) {
    if let Some(op) = ops.choose_mut(rng) {
        op.dim = other_choice(dims, op.dim, rng);
    }
}

fn mutate_op<R: Rng + ?Sized>(ops: &mut Vec<OpChoice>, menu: &[OperatorKind], dims: &[usize], rng: &mut R) {
    if ops.is_empty() {
        return;
    }
    let i = rng.gen_range(0..ops.len());
    let absent: Vec<OperatorKind> = menu
        .iter()
        .copied()
        .filter(|k| !ops.iter().any(|o| o.kind == *k))
        .collect();
    if let Some(&kind) = absent.choose(rng) {
        ops[i] = OpChoice {
            kind,
            dim: *dims.choose(rng).expect("nonempty dims"),
        };
    } else if ops.len() > 1 {
        ops.remove(i);
    }
}

fn mutate_conns<R: Rng + ?Sized>(conns: &mut Vec<usize>, k: usize, rng: &mut R) {
    if k < 2 {
        return;
    }
    let sources: Vec<usize> = (0..k).collect();
    for _ in 0..MAX_CONN_REDRAWS {
        let c = nonempty_subset(&sources, rng);
        if c != *conns {
            *conns = c;
            return;
        }
    }
}

/// Applies `action` to block `k` (1-based). The result differs from `g`
/// whenever the menus leave an alternative.
pub fn apply_action<R: Rng + ?Sized>(
    g: &Genotype,
    cfg: &SupernetConfig,
    action: MutationAction,
    k: usize,
    rng: &mut R,
) -> Result<Genotype> {
    let mut out = g.clone();
    let b = out.block_mut(k);
    match action {
        MutationAction::DenseDim => mutate_dim(&mut b.dense_ops, &cfg.dense_dims, rng),
        MutationAction::SparseDim => mutate_dim(&mut b.sparse_ops, &cfg.sparse_dims, rng),
        MutationAction::DenseOp => mutate_op(&mut b.dense_ops, &cfg.dense_ops, &cfg.dense_dims, rng),
        MutationAction::SparseOp => mutate_op(&mut b.sparse_ops, &cfg.sparse_ops, &cfg.sparse_dims, rng),
        MutationAction::Connections => {
            if rng.gen_bool(0.5) {
                mutate_conns(&mut b.dense_conns, k, rng)
            } else {
                mutate_conns(&mut b.sparse_conns, k, rng)
            }
        }
        MutationAction::ProjectConcat => {
            if cfg.allow_project_concat {
                b.project_concat = !b.project_concat;
            }
        }
    }
    out.canonicalize();
    out.ensure_valid(cfg)?;
    Ok(out)
}

/// One mutation: a uniform action on a uniform block.
#[derive(Clone, Debug, PartialEq)]
pub struct Mutation {
    pub genotype: Genotype,
    pub action: MutationAction,
    pub block: usize,
}

pub fn mutate_once<R: Rng + ?Sized>(g: &Genotype, cfg: &SupernetConfig, rng: &mut R) -> Result<Mutation> {
    let action = *MutationAction::ALL.choose(rng).expect("six actions");
    let block = rng.gen_range(1..=g.num_blocks);
    Ok(Mutation {
        genotype: apply_action(g, cfg, action, block, rng)?,
        action,
        block,
    })
}

/// All six actions, in order, on one uniform block.
pub fn mutate_sequence<R: Rng + ?Sized>(g: &Genotype, cfg: &SupernetConfig, rng: &mut R) -> Result<Genotype> {
    let block = rng.gen_range(1..=g.num_blocks);
    let mut out = g.clone();
    for action in MutationAction::ALL {
        out = apply_action(&out, cfg, action, block, rng)?;
    }
    Ok(out)
}

fn make_child<R: Rng + ?Sized>(
    parent: &Genotype,
    cfg: &SupernetConfig,
    mode: MutationMode,
    n: usize,
    rng: &mut R,
) -> Result<Genotype> {
    let mut g = parent.clone();
    for _ in 0..n {
        g = match mode {
            MutationMode::Single => mutate_once(&g, cfg, rng)?.genotype,
            MutationMode::Sequence => mutate_sequence(&g, cfg, rng)?,
        };
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genotype: Genotype,
    /// Lower is better.
    pub fitness: f64,
    pub birth_step: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub parent: Genotype,
    pub parent_fitness: f64,
    pub mutations: usize,
    pub children: Vec<Genotype>,
    /// `None` where evaluation failed and the child was discarded.
    pub fitnesses: Vec<Option<f64>>,
    /// Birth steps of the individuals aged out this iteration.
    pub removed: Vec<usize>,
    /// Best fitness ever evaluated, up to and including this iteration.
    pub best: f64,
    pub best_genotype: Genotype,
    pub population_size: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvoResult {
    pub history: Vec<IterationLog>,
    pub population: Vec<Individual>,
    /// Best distinct genotypes ever evaluated, ascending fitness.
    pub top: Vec<Individual>,
}

impl EvoResult {
    pub fn best(&self) -> Option<&Individual> {
        self.top.first()
    }
}

fn evaluate_all<F>(gs: &[Genotype], evaluator: &F) -> Vec<Option<f64>>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    gs.par_iter()
        .map(|g| match evaluator(g) {
            Ok(f) if f.is_finite() => Some(f),
            Ok(f) => {
                log::warn!("discarding {}: non-finite fitness {f}", g.to_json());
                None
            }
            Err(e) => {
                log::warn!("discarding {}: {e}", g.to_json());
                None
            }
        })
        .collect()
}

/// Runs aging evolution. `evaluator` maps a genotype to a fitness (lower is
/// better); evaluations of one generation run in parallel and are inserted in
/// child order.
pub fn evolve<F>(cfg: &SupernetConfig, ec: &EvoConfig, evaluator: F) -> Result<EvoResult>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    evolve_with(cfg, ec, evaluator, |_| {})
}

pub fn evolve_with<F>(
    cfg: &SupernetConfig,
    ec: &EvoConfig,
    evaluator: F,
    mut on_iter: impl FnMut(&IterationLog),
) -> Result<EvoResult>
where
    F: Fn(&Genotype) -> Result<f64> + Sync,
{
    ec.check()?;
    cfg.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ec.seed);
    let mut population: VecDeque<Individual> = VecDeque::with_capacity(ec.population + ec.children_per_iter);
    let mut seen: Vec<Individual> = Vec::new();
    let mut births = 0usize;
    let mut attempts = 0usize;
    while population.len() < ec.population {
        let need = ec.population - population.len();
        if attempts >= MAX_INIT_ATTEMPTS * ec.population {
            return Err(NasError::InvalidArgument("evaluator rejected the initial population".into()));
        }
        attempts += need;
        let draws: Vec<Genotype> = (0..need).map(|_| sample(ec.init_strategy, cfg, &mut rng)).collect();
        for (g, f) in draws.iter().zip(evaluate_all(&draws, &evaluator)) {
            if let Some(fitness) = f {
                let ind = Individual {
                    genotype: g.clone(),
                    fitness,
                    birth_step: births,
                };
                births += 1;
                seen.push(ind.clone());
                population.push_back(ind);
            }
        }
    }
    let mut best = seen
        .iter()
        .min_by(|a, b| a.fitness.total_cmp(&b.fitness))
        .cloned()
        .expect("nonempty population");

    let mut history = Vec::with_capacity(ec.iterations);
    for iter in 0..ec.iterations {
        let picks = index::sample(&mut rng, population.len(), ec.tournament.min(population.len()));
        let parent = picks
            .iter()
            .map(|i| &population[i])
            .min_by(|a, b| a.fitness.total_cmp(&b.fitness).then(a.birth_step.cmp(&b.birth_step)))
            .expect("nonempty tournament")
            .clone();
        let m = mutations_per_child(iter, ec);
        let children = (0..ec.children_per_iter)
            .map(|_| make_child(&parent.genotype, cfg, ec.mutation_mode, m, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fitnesses = evaluate_all(&children, &evaluator);
        let mut removed = Vec::new();
        for (g, f) in children.iter().zip(&fitnesses) {
            let Some(fitness) = *f else { continue };
            let ind = Individual {
                genotype: g.clone(),
                fitness,
                birth_step: births,
            };
            births += 1;
            if fitness < best.fitness {
                best = ind.clone();
            }
            seen.push(ind.clone());
            population.push_back(ind);
            if population.len() > ec.population {
                let old = population.pop_front().expect("nonempty");
                removed.push(old.birth_step);
            }
        }
        let entry = IterationLog {
            iter,
            parent: parent.genotype.clone(),
            parent_fitness: parent.fitness,
            mutations: m,
            children,
            fitnesses,
            removed,
            best: best.fitness,
            best_genotype: best.genotype.clone(),
            population_size: population.len(),
        };
        on_iter(&entry);
        history.push(entry);
    }

    seen.sort_by(|a, b| {
        a.fitness
            .total_cmp(&b.fitness)
            .then(a.birth_step.cmp(&b.birth_step))
    });
    let mut top: Vec<Individual> = Vec::new();
    for ind in seen {
        if top.len() >= ec.top_k {
            break;
        }
        if !top.iter().any(|t| t.genotype == ind.genotype) {
            top.push(ind);
        }
    }
    Ok(EvoResult {
        history,
        population: population.into_iter().collect(),
        top,
    })
}
