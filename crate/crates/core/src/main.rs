use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_traits::ToPrimitive;
use serde::Serialize;
use serde_json::json;

use nasrec_core::config::{parse_genotype, RunConfig};
use nasrec_core::data::{load_dataset, save_cache, split, synth_generate, PlantedStructure, Splits, SynthSpec};
use nasrec_core::evolution::{evolve_with, MutationMode};
use nasrec_core::network::Supernet;
use nasrec_core::rank_eval::ranking_experiment;
use nasrec_core::sampler::SamplingStrategy;
use nasrec_core::search_space::{cardinality, flop_count, param_count, CountingConvention, SupernetConfig};
use nasrec_core::trainer::{
    eval_subnet_shared, finetune_last_fc, train_from_scratch, train_supernet_with, TrainState,
};
use nasrec_core::{NasError, Result};

#[derive(Parser)]
#[command(name = "nasrec", version, about = "Weight-sharing architecture search for CTR models")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// TSV file or binary dataset cache.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Output directory (a file path for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    strategy: Option<SamplingStrategy>,
    #[arg(long, global = true)]
    warmup_frac: Option<f64>,
    /// Comma-separated sparse output sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    sparse_dims: Option<Vec<usize>>,
    /// Comma-separated dense output sizes.
    #[arg(long, global = true, value_delimiter = ',')]
    dense_dims: Option<Vec<usize>>,
    #[arg(long, global = true)]
    blocks: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    /// Row cap per embedding table; 0 keeps full tables.
    #[arg(long, global = true)]
    embedding_cap: Option<usize>,
    #[arg(long, global = true)]
    finetune_steps: Option<usize>,
    /// Supernet checkpoint to load instead of training one.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the supernet with path sampling.
    TrainSupernet {
        /// Emit every n-th step.
        #[arg(long, default_value_t = 100)]
        log_every: usize,
    },
    /// Aging evolution over fine-tuned shared-weight validation loss.
    Evolve {
        #[arg(long)]
        population: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        tournament: Option<usize>,
        #[arg(long)]
        children: Option<usize>,
        #[arg(long)]
        init_mutations: Option<usize>,
        #[arg(long)]
        decay_every: Option<usize>,
        #[arg(long)]
        mutation_mode: Option<MutationMode>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Correlate shared-weight and standalone rankings of sampled subnets.
    RankEval {
        #[arg(long)]
        n: Option<usize>,
        /// Fine-tune the head before scoring with shared weights.
        #[arg(long)]
        finetune: bool,
    },
    /// Train one subnet alone from fresh weights.
    TrainScratch {
        #[arg(long)]
        genotype: String,
    },
    /// Score a subnet with shared supernet weights.
    EvalSubnet {
        #[arg(long)]
        genotype: String,
    },
    /// Fine-tune the head of a subnet and score it.
    Finetune {
        #[arg(long)]
        genotype: String,
    },
    /// FLOPs and parameter counts of a subnet.
    Flops {
        #[arg(long, default_value = "full")]
        genotype: String,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
    /// Number of distinct subnets in the search space.
    Cardinality,
    /// Generate a synthetic dataset cache.
    Synth {
        #[arg(long, default_value_t = 100_000)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        num_dense: usize,
        #[arg(long, default_value_t = 8)]
        num_cat: usize,
        #[arg(long, default_value_t = 100)]
        vocab: usize,
        /// `pairwise-interaction` or `logistic-linear`.
        #[arg(long, default_value = "pairwise-interaction")]
        structure: String,
    },
}

/// JSON lines to stdout, mirrored to a file in the output directory.
struct Emitter {
    file: Option<BufWriter<File>>,
}

impl Emitter {
    fn new(out: Option<&Path>, name: &str) -> Result<Self> {
        let file = match out {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(BufWriter::new(File::create(dir.join(name))?))
            }
            None => None,
        };
        Ok(Emitter { file })
    }

    fn emit<S: Serialize>(&mut self, v: &S) -> Result<()> {
        let line = serde_json::to_string(v)?;
        writeln!(io::stdout().lock(), "{line}")?;
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        if let Some(f) = &mut self.file {
            f.flush()?;
        }
        io::stdout().flush()?;
        Ok(())
    }
}

fn run_config(c: &Common) -> Result<RunConfig> {
    let mut rc = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        rc.train.seed = s;
        rc.evo.seed = s;
        rc.rank.seed = s;
        rc.split.seed = s;
        if let Some(sc) = &mut rc.scratch {
            sc.seed = s;
        }
    }
    if let Some(s) = c.strategy {
        rc.train.strategy = s;
        rc.rank.strategy = s;
    }
    let t = &mut rc.train;
    t.warmup_fraction = c.warmup_frac.unwrap_or(t.warmup_fraction);
    t.epochs = c.epochs.unwrap_or(t.epochs);
    t.batch_size = c.batch_size.unwrap_or(t.batch_size);
    t.base_lr = c.lr.unwrap_or(t.base_lr);
    t.finetune_steps = c.finetune_steps.unwrap_or(t.finetune_steps);
    if let Some(cap) = c.embedding_cap {
        t.embedding_cap = (cap > 0).then_some(cap);
    }
    if c.sparse_dims.is_some() || c.dense_dims.is_some() || c.blocks.is_some() {
        let mut space = rc.space_for(None)?;
        if let Some(d) = &c.sparse_dims {
            space.sparse_dims = d.clone();
        }
        if let Some(d) = &c.dense_dims {
            space.dense_dims = d.clone();
        }
        if let Some(b) = c.blocks {
            space.num_blocks = b;
        }
        rc.space = Some(space);
    }
    Ok(rc)
}

fn load_splits(c: &Common, rc: &RunConfig) -> Result<Splits> {
    let path = c
        .dataset
        .as_ref()
        .ok_or_else(|| NasError::InvalidArgument("--dataset is required".into()))?;
    let ds = load_dataset(path, &rc.schema)?;
    log::info!("loaded {} rows from {}", ds.len(), path.display());
    split(&ds, &rc.split)
}

fn obtain_supernet(c: &Common, rc: &RunConfig, cfg: &SupernetConfig, data: &Splits) -> Result<Supernet<f32>> {
    if let Some(p) = &c.checkpoint {
        let state = TrainState::load(io::BufReader::new(File::open(p)?), cfg, &rc.train)?;
        return Ok(state.supernet);
    }
    log::info!("no --checkpoint given; training a supernet first");
    Ok(train_supernet_with(cfg, &rc.train, &data.train, |_| {})?.supernet)
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let rc = run_config(c)?;
    let out = c.out.as_deref();
    match cli.cmd {
        Command::Synth {
            rows,
            num_dense,
            num_cat,
            vocab,
            structure,
        } => {
            let structure: PlantedStructure = serde_json::from_value(json!(structure))
                .map_err(|_| NasError::InvalidArgument(format!("unknown structure {structure}")))?;
            let spec = SynthSpec {
                n_rows: rows,
                num_dense,
                num_cat,
                vocab,
                structure,
                seed: c.seed.unwrap_or(0),
            };
            let ds = synth_generate(&spec)?;
            let path = out.map_or_else(|| PathBuf::from("synth.bin"), Path::to_path_buf);
            save_cache(&path, &ds)?;
            let mut em = Emitter::new(None, "")?;
            em.emit(&json!({
                "path": path,
                "rows": ds.len(),
                "positive_rate": ds.positive_rate(),
                "bayes_logloss": ds.bayes_logloss(),
            }))?;
            em.finish()
        }
        Command::Cardinality => {
            let cfg = rc.space_for(None)?;
            let mut em = Emitter::new(out, "cardinality.jsonl")?;
            for conv in [CountingConvention::PerOperatorDims, CountingConvention::PerBranchDims] {
                let n = cardinality(&cfg, conv);
                em.emit(&json!({
                    "convention": conv,
                    "count": n.to_string(),
                    "log10": n.to_f64().map(f64::log10),
                }))?;
            }
            em.finish()
        }
        Command::Flops { genotype, batch } => {
            let cfg = rc.space_for(None)?;
            let g = parse_genotype(&genotype, &cfg)?;
            let mut em = Emitter::new(out, "flops.jsonl")?;
            em.emit(&json!({
                "flops": flop_count(&g, &cfg, batch)?,
                "params": param_count(&g, &cfg, rc.train.embedding_cap)?,
            }))?;
            em.finish()
        }
        Command::TrainSupernet { log_every } => {
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let mut em = Emitter::new(out, "train.jsonl")?;
            let every = log_every.max(1);
            let mut err = None;
            let state = train_supernet_with(&cfg, &rc.train, &data.train, |s| {
                if s.step % every == 0 {
                    if let Err(e) = em.emit(s) {
                        err.get_or_insert(e);
                    }
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            let full = nasrec_core::search_space::Genotype::full(&cfg);
            em.emit(&json!({
                "steps": state.step,
                "val_full": eval_subnet_shared(&state.supernet, &full, &data.val)?,
            }))?;
            if let Some(dir) = out {
                state.save(BufWriter::new(File::create(dir.join("supernet.ckpt"))?))?;
                fs::write(dir.join("space.json"), serde_json::to_string_pretty(&cfg)?)?;
            }
            em.finish()
        }
        Command::EvalSubnet { genotype } => {
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let g = parse_genotype(&genotype, &cfg)?;
            let net = obtain_supernet(c, &rc, &cfg, &data)?;
            let mut em = Emitter::new(out, "eval.jsonl")?;
            em.emit(&json!({
                "genotype": g,
                "val": eval_subnet_shared(&net, &g, &data.val)?,
                "test": eval_subnet_shared(&net, &g, &data.test)?,
            }))?;
            em.finish()
        }
        Command::Finetune { genotype } => {
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let g = parse_genotype(&genotype, &cfg)?;
            let net = obtain_supernet(c, &rc, &cfg, &data)?;
            let steps = rc.train.finetune_steps;
            let mut em = Emitter::new(out, "finetune.jsonl")?;
            em.emit(&json!({
                "genotype": g,
                "steps": steps,
                "val": finetune_last_fc(&net, &g, steps, &data.train, &data.val, &rc.train)?,
                "test": finetune_last_fc(&net, &g, steps, &data.train, &data.test, &rc.train)?,
            }))?;
            em.finish()
        }
        Command::TrainScratch { genotype } => {
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let g = parse_genotype(&genotype, &cfg)?;
            let sc = rc.scratch_config();
            let r = train_from_scratch(&g, &cfg, &sc, &data.train, &data.val, &data.test, sc.embedding_cap.is_none())?;
            let mut em = Emitter::new(out, "scratch.jsonl")?;
            em.emit(&json!({ "genotype": g, "result": r }))?;
            em.finish()
        }
        Command::Evolve {
            population,
            iters,
            tournament,
            children,
            init_mutations,
            decay_every,
            mutation_mode,
            top_k,
        } => {
            let mut ec = rc.evo.clone();
            ec.population = population.unwrap_or(ec.population);
            ec.iterations = iters.unwrap_or(ec.iterations);
            ec.tournament = tournament.unwrap_or(ec.tournament);
            ec.children_per_iter = children.unwrap_or(ec.children_per_iter);
            ec.initial_mutations = init_mutations.unwrap_or(ec.initial_mutations);
            ec.decay_every = decay_every.unwrap_or(ec.decay_every);
            ec.mutation_mode = mutation_mode.unwrap_or(ec.mutation_mode);
            ec.top_k = top_k.unwrap_or(ec.top_k);
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let net = obtain_supernet(c, &rc, &cfg, &data)?;
            let tc = &rc.train;
            let fitness = |g: &_| {
                let r = if tc.finetune_steps > 0 {
                    finetune_last_fc(&net, g, tc.finetune_steps, &data.train, &data.val, tc)?
                } else {
                    eval_subnet_shared(&net, g, &data.val)?
                };
                Ok(r.logloss)
            };
            let mut em = Emitter::new(out, "history.jsonl")?;
            let mut err = None;
            let res = evolve_with(&cfg, &ec, fitness, |it| {
                let line = json!({
                    "iter": it.iter,
                    "parent": it.parent,
                    "children": it.children,
                    "fitnesses": it.fitnesses,
                    "best": it.best,
                });
                if let Err(e) = em.emit(&line) {
                    err.get_or_insert(e);
                }
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            em.finish()?;
            let mut top = Emitter::new(out, "top.jsonl")?;
            for ind in &res.top {
                top.emit(&json!({ "fitness": ind.fitness, "genotype": ind.genotype }))?;
            }
            top.finish()
        }
        Command::RankEval { n, finetune } => {
            let data = load_splits(c, &rc)?;
            let cfg = rc.space_for(Some(&data.train))?;
            let net = obtain_supernet(c, &rc, &cfg, &data)?;
            let mut spec = rc.rank.clone();
            spec.n_subnets = n.unwrap_or(spec.n_subnets);
            if finetune {
                spec.finetune = true;
            } else if c.config.is_none() {
                spec.finetune = false;
            }
            let report = ranking_experiment(&net, &spec, &rc.train, &rc.scratch_config(), &data.train, &data.val, &data.test)?;
            let mut em = Emitter::new(out, "rank.jsonl")?;
            em.emit(&report)?;
            em.finish()?;
            if let Some(dir) = out {
                report.write_csv(BufWriter::new(File::create(dir.join("scatter.csv"))?))?;
            }
            Ok(())
        }
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        if matches!(&e, NasError::Io(io) if io.kind() == io::ErrorKind::BrokenPipe) {
            return;
        }
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
