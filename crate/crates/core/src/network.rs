//! Supernet weights and the forward pass shared by the supernet and
//! standalone subnets.
//!
//! Every block parameter is stored at its largest ("max-layout") shape. A
//! subnet runs either masked (full tensors, unselected inputs replaced by
//! zeros, operator outputs masked to their width) or sliced (weights gathered
//! down to the active rows and columns). Both modes compute the same values;
//! sliced mode is the fast path used for training and evaluation, and its
//! gathered weights are exactly what [`Supernet::extract_subnet`] copies out.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Var, LAYER_NORM_EPS};
use crate::data::Batch;
use crate::error::{NasError, Result};
use crate::operators::{
    num_pairs, op_attention, op_dot_product, op_embed_fc, op_fc, op_gating, op_sum, pair_index,
    project_concatenate, Affine, DotProductWeights, OperatorKind,
};
use crate::search_space::{
    max_dense_input, max_sparse_input, Genotype, InputLayout, NetworkLayout, OpChoice, SupernetConfig,
};
use crate::tensor::{glorot_bound, ParamStore, Scalar, Tensor};

/// Name of the stacked embedding table.
pub const EMBEDDING_TABLE: &str = "embeddings";
pub const HEAD_WEIGHT: &str = "head.w";
pub const HEAD_BIAS: &str = "head.b";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    /// Full-size tensors with zero inputs and dimension masks.
    Masked,
    /// Weights gathered down to the sampled subnet.
    Sliced,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Glorot(usize, usize),
    Zeros,
    Ones,
}

fn pname(k: usize, kind: OperatorKind, suffix: &str) -> String {
    format!("b{k}.{}.{suffix}", kind.tag())
}

/// Names, max-layout shapes and initialisers of every block and head parameter.
fn param_specs(cfg: &SupernetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let d = cfg.max_dense_dim();
    let s = cfg.max_sparse_rows();
    let e = cfg.embedding_dim;
    let dp = cfg.dot_product();
    let mut out = Vec::new();
    let lin = |out: &mut Vec<_>, prefix: String, i: usize, o: usize| {
        out.push((format!("{prefix}.w"), vec![i, o], Init::Glorot(i, o)));
        out.push((format!("{prefix}.b"), vec![o], Init::Zeros));
    };
    for k in 1..=cfg.num_blocks {
        let w_in = max_dense_input(cfg, k);
        let r_in = max_sparse_input(cfg, k);
        for &kind in &cfg.dense_ops {
            let p = |x: &str| pname(k, kind, x);
            match kind {
                OperatorKind::FC => lin(&mut out, p("fc"), w_in, d),
                OperatorKind::Gating => {
                    lin(&mut out, p("gate"), w_in, d);
                    lin(&mut out, p("proj"), w_in, d);
                }
                OperatorKind::Sum => {
                    lin(&mut out, p("out"), w_in, d);
                    lin(&mut out, p("proj"), w_in, d);
                }
                OperatorKind::DotProduct => {
                    lin(&mut out, p("dproj"), w_in, e);
                    let rows = if dp.balanced {
                        lin(&mut out, p("bal"), 1 + r_in, dp.projection_target);
                        dp.projection_target
                    } else {
                        1 + r_in
                    };
                    lin(&mut out, p("out"), num_pairs(rows), d);
                }
                _ => {}
            }
            if cfg.layer_norm {
                out.push((p("ln.g"), vec![d], Init::Ones));
                out.push((p("ln.b"), vec![d], Init::Zeros));
            }
        }
        for &kind in &cfg.sparse_ops {
            let p = |x: &str| pname(k, kind, x);
            lin(&mut out, p("proj"), r_in, s);
            if cfg.layer_norm {
                out.push((p("ln.g"), vec![e], Init::Ones));
                out.push((p("ln.b"), vec![e], Init::Zeros));
            }
        }
        if cfg.allow_project_concat {
            lin(&mut out, format!("b{k}.pc"), d, e);
        }
    }
    out.push((HEAD_WEIGHT.into(), vec![d, 1], Init::Glorot(d, 1)));
    out.push((HEAD_BIAS.into(), vec![1], Init::Zeros));
    out
}

/// Row offsets of each field inside the stacked embedding table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbeddingIndex {
    pub rows: Vec<usize>,
    pub offsets: Vec<usize>,
}

impl EmbeddingIndex {
    pub fn new(rows: Vec<usize>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len());
        let mut acc = 0;
        for &r in &rows {
            offsets.push(acc);
            acc += r;
        }
        EmbeddingIndex { rows, offsets }
    }

    pub fn total_rows(&self) -> usize {
        self.rows.iter().sum()
    }

    /// Table row of raw id `id` in field `f`: `offset_f + id mod rows_f`.
    pub fn row(&self, f: usize, id: u32) -> usize {
        self.offsets[f] + id as usize % self.rows[f]
    }

    fn lookup(&self, batch: &Batch) -> Result<Vec<usize>> {
        let fc = self.rows.len();
        if batch.num_cat != fc || batch.cat.len() != batch.len * fc {
            return Err(NasError::InvalidArgument(format!(
                "batch has {} categorical fields, network expects {fc}",
                batch.num_cat
            )));
        }
        Ok(batch.cat.iter().enumerate().map(|(i, &id)| self.row(i % fc, id)).collect())
    }
}

/// The weight-sharing supernet.
#[derive(Clone, Debug)]
pub struct Supernet<T: Scalar> {
    pub cfg: SupernetConfig,
    pub store: ParamStore<T>,
    pub embeddings: EmbeddingIndex,
}

/// A subnet with its own compact copy of the sliced weights.
#[derive(Clone, Debug)]
pub struct Subnet<T: Scalar> {
    pub cfg: SupernetConfig,
    pub genotype: Genotype,
    pub store: ParamStore<T>,
    pub embeddings: EmbeddingIndex,
}

impl<T: Scalar> Supernet<T> {
    /// Fresh supernet: Glorot-uniform weights, zero biases, unit norm scales,
    /// embeddings uniform in `±1/√rows` per field.
    pub fn new(cfg: &SupernetConfig, embedding_cap: Option<usize>, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = EmbeddingIndex::new(cfg.embedding_rows(embedding_cap));
        let e = cfg.embedding_dim;
        let mut store = ParamStore::new();
        let mut table = Vec::with_capacity(embeddings.total_rows() * e);
        for &r in &embeddings.rows {
            let bound = (1.0 / r as f64).sqrt();
            table.extend((0..r * e).map(|_| T::of(rng.gen_range(-bound..=bound))));
        }
        store.add(EMBEDDING_TABLE, Tensor::new(&[embeddings.total_rows(), e], table)?)?;
        for (name, shape, init) in param_specs(cfg) {
            let t = match init {
                Init::Glorot(i, o) => Tensor::uniform(&shape, glorot_bound(i, o), &mut rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::filled(&shape, T::one()),
            };
            store.add(name, t)?;
        }
        Ok(Supernet {
            cfg: cfg.clone(),
            store,
            embeddings,
        })
    }

    /// Wraps restored weights after checking every expected tensor is present
    /// with its expected shape.
    pub fn from_store(cfg: &SupernetConfig, embedding_cap: Option<usize>, store: ParamStore<T>) -> Result<Self> {
        cfg.check()?;
        let embeddings = EmbeddingIndex::new(cfg.embedding_rows(embedding_cap));
        let mut expected = param_specs(cfg)
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect::<Vec<_>>();
        expected.push((EMBEDDING_TABLE.into(), vec![embeddings.total_rows(), cfg.embedding_dim]));
        for (name, shape) in &expected {
            let id = store.id(name).ok_or_else(|| NasError::MissingWeights(name.clone()))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(NasError::shape("from_store", store.get(id).shape(), shape));
            }
        }
        if store.len() != expected.len() {
            return Err(NasError::Format(format!(
                "checkpoint has {} tensors, supernet expects {}",
                store.len(),
                expected.len()
            )));
        }
        Ok(Supernet {
            cfg: cfg.clone(),
            store,
            embeddings,
        })
    }

    pub fn graph(&self) -> Graph<'_, T> {
        Graph::with_params(&self.store)
    }

    /// Logits `[B, 1]` of subnet `g` on `batch`. `graph` must be built over `self.store`.
    pub fn forward<'p>(
        &'p self,
        graph: &mut Graph<'p, T>,
        g: &'p Genotype,
        batch: &Batch,
        mode: ExecMode,
    ) -> Result<Var> {
        let f = self.features(graph, g, batch, mode)?;
        self.head(graph, g, f, mode)
    }

    /// Dense output of the last block: `[B, max dim]` masked, `[B, active width]` sliced.
    pub fn features<'p>(
        &'p self,
        graph: &mut Graph<'p, T>,
        g: &'p Genotype,
        batch: &Batch,
        mode: ExecMode,
    ) -> Result<Var> {
        g.ensure_valid(&self.cfg)?;
        let kind = match mode {
            ExecMode::Masked => Source::Masked,
            ExecMode::Sliced => Source::Sliced,
        };
        let mut ctx = Ctx::new(&self.cfg, &self.store, &self.embeddings, g, kind, None);
        ctx.features(graph, batch)
    }

    /// Applies the logit head to [`Supernet::features`] output.
    pub fn head<'p>(&'p self, graph: &mut Graph<'p, T>, g: &'p Genotype, features: Var, mode: ExecMode) -> Result<Var> {
        let kind = match mode {
            ExecMode::Masked => Source::Masked,
            ExecMode::Sliced => Source::Sliced,
        };
        let mut ctx = Ctx::new(&self.cfg, &self.store, &self.embeddings, g, kind, None);
        ctx.head(graph, features)
    }

    /// Standalone copy of subnet `g`: exactly the weight slices its sliced
    /// forward reads, stored at their sliced shapes.
    pub fn extract_subnet(&self, g: &Genotype) -> Result<Subnet<T>> {
        g.ensure_valid(&self.cfg)?;
        let probe = Batch {
            len: 1,
            num_dense: self.cfg.num_dense_features,
            num_cat: self.cfg.num_sparse_features(),
            dense: vec![0.0; self.cfg.num_dense_features],
            cat: vec![0; self.cfg.num_sparse_features()],
            labels: vec![0.0],
        };
        let mut record = Vec::new();
        {
            let mut graph = Graph::with_params(&self.store).no_grad();
            let mut ctx = Ctx::new(
                &self.cfg,
                &self.store,
                &self.embeddings,
                g,
                Source::Sliced,
                Some(&mut record),
            );
            let f = ctx.features(&mut graph, &probe)?;
            ctx.head(&mut graph, f)?;
        }
        let mut store = ParamStore::new();
        for (name, t) in record {
            store.add(name, t)?;
        }
        Ok(Subnet {
            cfg: self.cfg.clone(),
            genotype: g.clone(),
            store,
            embeddings: self.embeddings.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> Supernet<U> {
        let mut store = ParamStore::new();
        for (_, name, t) in self.store.iter() {
            store.add(name, t.cast()).expect("names are unique");
        }
        Supernet {
            cfg: self.cfg.clone(),
            store,
            embeddings: self.embeddings.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }
}

impl<T: Scalar> Subnet<T> {
    pub fn graph(&self) -> Graph<'_, T> {
        Graph::with_params(&self.store)
    }

    pub fn forward<'p>(&'p self, graph: &mut Graph<'p, T>, batch: &Batch) -> Result<Var> {
        let mut ctx = Ctx::new(
            &self.cfg,
            &self.store,
            &self.embeddings,
            &self.genotype,
            Source::Compact,
            None,
        );
        let f = ctx.features(graph, batch)?;
        ctx.head(graph, f)
    }

    pub fn num_params(&self) -> usize {
        self.store.num_elements()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Masked,
    Sliced,
    Compact,
}

struct Ctx<'a, T: Scalar> {
    cfg: &'a SupernetConfig,
    store: &'a ParamStore<T>,
    emb: &'a EmbeddingIndex,
    geno: &'a Genotype,
    layout: NetworkLayout,
    src: Source,
    record: Option<&'a mut Vec<(String, Tensor<T>)>>,
}

impl<'a, T: Scalar> Ctx<'a, T> {
    fn new(
        cfg: &'a SupernetConfig,
        store: &'a ParamStore<T>,
        emb: &'a EmbeddingIndex,
        geno: &'a Genotype,
        src: Source,
        record: Option<&'a mut Vec<(String, Tensor<T>)>>,
    ) -> Self {
        Ctx {
            cfg,
            store,
            emb,
            geno,
            layout: NetworkLayout::new(cfg, geno),
            src,
            record,
        }
    }

    fn masked(&self) -> bool {
        self.src == Source::Masked
    }

    /// Weight `name` restricted to `rows` (all when `None`) and its first `cols` columns.
    fn fetch(&mut self, graph: &mut Graph<'a, T>, name: &str, rows: Option<&[usize]>, cols: usize) -> Result<Var> {
        let id = self
            .store
            .id(name)
            .ok_or_else(|| NasError::MissingWeights(name.to_string()))?;
        let v = graph.param(id);
        let shape = self.store.get(id).shape();
        match self.src {
            Source::Masked => Ok(v),
            Source::Compact => {
                let rows_ok = rows.map_or(true, |r| shape.len() == 2 && shape[0] == r.len());
                if !rows_ok || shape.last() != Some(&cols) {
                    let want = match rows {
                        Some(r) => vec![r.len(), cols],
                        None => vec![cols],
                    };
                    return Err(NasError::shape("subnet weight", shape, &want));
                }
                Ok(v)
            }
            Source::Sliced => {
                let all_rows = rows.map_or(true, |r| {
                    r.len() == shape[0] && r.iter().enumerate().all(|(i, &x)| i == x)
                });
                let out = if all_rows && shape.last() == Some(&cols) {
                    v
                } else if all_rows {
                    graph.gather(v, None, cols)?
                } else {
                    graph.gather(v, rows, cols)?
                };
                if let Some(rec) = self.record.as_deref_mut() {
                    rec.push((name.to_string(), graph.tensor(out)));
                }
                Ok(out)
            }
        }
    }

    fn affine(&mut self, graph: &mut Graph<'a, T>, prefix: &str, rows: Option<&[usize]>, cols: usize) -> Result<Affine> {
        let w = self.fetch(graph, &format!("{prefix}.w"), rows, cols)?;
        let b = self.fetch(graph, &format!("{prefix}.b"), None, cols)?;
        Ok(Affine::new(w, Some(b)))
    }

    fn features(&mut self, graph: &mut Graph<'a, T>, batch: &Batch) -> Result<Var> {
        let fd = self.cfg.num_dense_features;
        let fc = self.cfg.num_sparse_features();
        if batch.num_dense != fd || batch.dense.len() != batch.len * fd {
            return Err(NasError::InvalidArgument(format!(
                "batch has {} dense features, network expects {fd}",
                batch.num_dense
            )));
        }
        let b = batch.len;
        let dense: Vec<T> = batch.dense.iter().map(|&x| T::of(x as f64)).collect();
        let xd0 = graph.constant(Tensor::new(&[b, fd], dense)?);
        let ids = self.emb.lookup(batch)?;
        self.fetch(graph, EMBEDDING_TABLE, None, self.cfg.embedding_dim)?;
        let tid = self.store.id(EMBEDDING_TABLE).expect("fetched above");
        let xs0 = graph.embedding(tid, &ids, b, fc)?;
        let mut dense_out = vec![xd0];
        let mut sparse_out = vec![xs0];
        for k in 1..=self.geno.num_blocks {
            let (yd, ys) = self.block(graph, k, &dense_out, &sparse_out, b)?;
            dense_out.push(yd);
            sparse_out.push(ys);
        }
        Ok(*dense_out.last().expect("at least the raw source"))
    }

    fn head(&mut self, graph: &mut Graph<'a, T>, features: Var) -> Result<Var> {
        let rows: Vec<usize> = (0..self.layout.head_width()).collect();
        let head = self.affine(graph, "head", Some(&rows), 1)?;
        head.apply(graph, features)
    }

    fn block_inputs(
        &mut self,
        graph: &mut Graph<'a, T>,
        k: usize,
        dense_out: &[Var],
        sparse_out: &[Var],
        b: usize,
    ) -> Result<(Var, Var)> {
        let bg = self.geno.block(k);
        let e = self.cfg.embedding_dim;
        let (dense_parts, sparse_parts): (Vec<Var>, Vec<Var>) = if self.masked() {
            let mut dp = Vec::with_capacity(k);
            let mut sp = Vec::with_capacity(k);
            for src in 0..k {
                dp.push(if bg.dense_conns.contains(&src) {
                    dense_out[src]
                } else {
                    graph.constant(Tensor::zeros(&[b, self.layout.dense_max[src]]))
                });
                sp.push(if bg.sparse_conns.contains(&src) {
                    sparse_out[src]
                } else {
                    graph.constant(Tensor::zeros(&[b, self.layout.sparse_max[src], e]))
                });
            }
            (dp, sp)
        } else {
            (
                bg.dense_conns.iter().map(|&s| dense_out[s]).collect(),
                bg.sparse_conns.iter().map(|&s| sparse_out[s]).collect(),
            )
        };
        let xd = if dense_parts.len() == 1 {
            dense_parts[0]
        } else {
            graph.concat_lastdim(&dense_parts)?
        };
        let xs = if sparse_parts.len() == 1 {
            sparse_parts[0]
        } else {
            graph.concat_middim(&sparse_parts)?
        };
        Ok((xd, xs))
    }

    fn block(
        &mut self,
        graph: &mut Graph<'a, T>,
        k: usize,
        dense_out: &[Var],
        sparse_out: &[Var],
        b: usize,
    ) -> Result<(Var, Var)> {
        let (xd, xs) = self.block_inputs(graph, k, dense_out, sparse_out, b)?;
        let input = self.layout.input(self.geno, k);
        let bg = self.geno.block(k);
        let e = self.cfg.embedding_dim;

        let w_d = bg.dense_width();
        let mut yd: Option<Var> = None;
        for op in &bg.dense_ops {
            let mut y = self.dense_op(graph, k, *op, xd, xs, &input)?;
            if self.cfg.layer_norm {
                let gamma = self.fetch(graph, &pname(k, op.kind, "ln.g"), None, op.dim)?;
                let beta = self.fetch(graph, &pname(k, op.kind, "ln.b"), None, op.dim)?;
                y = graph.layer_norm(y, gamma, beta, op.dim, LAYER_NORM_EPS)?;
            }
            y = if self.masked() {
                graph.mask_lastdim(y, op.dim)?
            } else {
                graph.pad_lastdim(y, w_d)?
            };
            yd = Some(match yd {
                None => y,
                Some(a) => graph.add(a, y)?,
            });
        }
        let yd = yd.ok_or_else(|| NasError::InvalidGenotype(format!("block {k}: empty dense branch")))?;

        let w_s = bg.sparse_rows();
        let valid = if self.masked() {
            Some(input.sparse_valid.clone())
        } else {
            None
        };
        let mut ys: Option<Var> = None;
        for op in &bg.sparse_ops {
            let x = match op.kind {
                OperatorKind::Attention => op_attention(graph, xs, valid.as_deref())?,
                OperatorKind::EmbedFC => xs,
                other => return Err(NasError::InvalidGenotype(format!("{other} in sparse branch"))),
            };
            let proj = self.affine(graph, &pname(k, op.kind, "proj"), Some(&input.sparse_idx), op.dim)?;
            let mut y = op_embed_fc(graph, x, proj)?;
            if self.cfg.layer_norm {
                let gamma = self.fetch(graph, &pname(k, op.kind, "ln.g"), None, e)?;
                let beta = self.fetch(graph, &pname(k, op.kind, "ln.b"), None, e)?;
                y = graph.layer_norm(y, gamma, beta, e, LAYER_NORM_EPS)?;
            }
            y = if self.masked() {
                graph.mask_middim(y, op.dim)?
            } else {
                graph.pad_middim(y, w_s)?
            };
            ys = Some(match ys {
                None => y,
                Some(a) => graph.add(a, y)?,
            });
        }
        let mut ys = ys.ok_or_else(|| NasError::InvalidGenotype(format!("block {k}: empty sparse branch")))?;

        if self.cfg.allow_project_concat {
            if bg.project_concat {
                let rows: Vec<usize> = (0..w_d).collect();
                let proj = self.affine(graph, &format!("b{k}.pc"), Some(&rows), e)?;
                ys = project_concatenate(graph, yd, ys, proj)?;
            } else if self.masked() {
                let zero = graph.constant(Tensor::zeros(&[b, 1, e]));
                ys = graph.concat_middim(&[ys, zero])?;
            }
        }
        Ok((yd, ys))
    }

    fn dense_op(
        &mut self,
        graph: &mut Graph<'a, T>,
        k: usize,
        op: OpChoice,
        xd: Var,
        xs: Var,
        input: &InputLayout,
    ) -> Result<Var> {
        let rows = Some(input.dense_idx.as_slice());
        let p = |s: &str| pname(k, op.kind, s);
        match op.kind {
            OperatorKind::FC => {
                let fc = self.affine(graph, &p("fc"), rows, op.dim)?;
                op_fc(graph, xd, fc)
            }
            OperatorKind::Gating => {
                let gate = self.affine(graph, &p("gate"), rows, op.dim)?;
                let proj = self.affine(graph, &p("proj"), rows, op.dim)?;
                op_gating(graph, xd, xd, gate, Some(proj))
            }
            OperatorKind::Sum => {
                let out = self.affine(graph, &p("out"), rows, op.dim)?;
                let proj = self.affine(graph, &p("proj"), rows, op.dim)?;
                let x1 = out.apply(graph, xd)?;
                op_sum(graph, x1, xd, Some(proj))
            }
            OperatorKind::DotProduct => {
                let e = self.cfg.embedding_dim;
                let dp = self.cfg.dot_product();
                let dense_projection = Some(self.affine(graph, &p("dproj"), rows, e)?);
                // Row 0 of the interaction input is the projected dense vector.
                let stacked: Vec<usize> = std::iter::once(0)
                    .chain(input.sparse_idx.iter().map(|&r| r + 1))
                    .collect();
                let (balancing, out_rows) = if dp.balanced {
                    let bal = self.affine(graph, &p("bal"), Some(&stacked), dp.projection_target)?;
                    (Some(bal), None)
                } else {
                    let n = 1 + input.sparse_max_rows;
                    let mut pairs = Vec::with_capacity(num_pairs(stacked.len()));
                    for i in 0..stacked.len() {
                        for j in i + 1..stacked.len() {
                            pairs.push(pair_index(stacked[i], stacked[j], n));
                        }
                    }
                    (None, Some(pairs))
                };
                let output = self.affine(graph, &p("out"), out_rows.as_deref(), op.dim)?;
                let w = DotProductWeights {
                    dense_projection,
                    balancing,
                    output,
                };
                op_dot_product(graph, Some(xd), Some(xs), &w)
            }
            other => Err(NasError::InvalidGenotype(format!("{other} in dense branch"))),
        }
    }
}
