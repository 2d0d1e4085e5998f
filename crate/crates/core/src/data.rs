//! CTR datasets: Criteo-style TSV ingestion, hashing, splits, a binary cache
//! and a synthetic generator with known click probabilities.

use std::fs::File;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{NasError, Result};

pub const CACHE_MAGIC: &[u8; 8] = b"NASRECDS";
pub const CACHE_VERSION: u32 = 1;

/// Row-major CTR table.
#[derive(Clone, Debug, PartialEq)]
pub struct CtrDataset {
    pub num_dense: usize,
    /// Id range of each categorical field.
    pub vocab_sizes: Vec<usize>,
    /// `len × num_dense`, row-major.
    pub dense: Vec<f32>,
    /// `len × num_cat`, row-major.
    pub cat: Vec<u32>,
    pub labels: Vec<f32>,
    /// Generator click probabilities, when known.
    pub true_probs: Option<Vec<f64>>,
}

/// A materialised mini-batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub len: usize,
    pub num_dense: usize,
    pub num_cat: usize,
    pub dense: Vec<f32>,
    pub cat: Vec<u32>,
    pub labels: Vec<f32>,
}

impl CtrDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_cat(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn check(&self) -> Result<()> {
        let n = self.len();
        let bad = |m: &str| Err(NasError::Format(m.into()));
        if self.dense.len() != n * self.num_dense || self.cat.len() != n * self.num_cat() {
            return bad("column lengths disagree with row count");
        }
        if self.labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return bad("labels must be 0 or 1");
        }
        if self.dense.iter().any(|v| !v.is_finite()) {
            return bad("dense values must be finite");
        }
        let f = self.num_cat();
        if self
            .cat
            .iter()
            .enumerate()
            .any(|(i, &id)| id as usize >= self.vocab_sizes[i % f])
        {
            return bad("categorical id outside its vocabulary");
        }
        if let Some(p) = &self.true_probs {
            if p.len() != n {
                return bad("true_probs length disagrees with row count");
            }
        }
        Ok(())
    }

    /// Rows at `idx`, in order.
    pub fn subset(&self, idx: &[usize]) -> CtrDataset {
        let b = self.batch(idx);
        CtrDataset {
            num_dense: self.num_dense,
            vocab_sizes: self.vocab_sizes.clone(),
            dense: b.dense,
            cat: b.cat,
            labels: b.labels,
            true_probs: self.true_probs.as_ref().map(|p| idx.iter().map(|&i| p[i]).collect()),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Batch {
        let (fd, fc) = (self.num_dense, self.num_cat());
        let mut dense = Vec::with_capacity(idx.len() * fd);
        let mut cat = Vec::with_capacity(idx.len() * fc);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            dense.extend_from_slice(&self.dense[i * fd..(i + 1) * fd]);
            cat.extend_from_slice(&self.cat[i * fc..(i + 1) * fc]);
            labels.push(self.labels[i]);
        }
        Batch {
            len: idx.len(),
            num_dense: fd,
            num_cat: fc,
            dense,
            cat,
            labels,
        }
    }

    /// Index chunks of one pass, shuffled by `seed` when given.
    pub fn batch_indices(&self, batch_size: usize, seed: Option<u64>) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        if let Some(s) = seed {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        }
        idx.chunks(batch_size.max(1)).map(|c| c.to_vec()).collect()
    }

    /// Mean log loss of the generator's own probabilities.
    pub fn bayes_logloss(&self) -> Option<f64> {
        let p = self.true_probs.as_ref()?;
        let probs: Vec<f64> = p.clone();
        let labels: Vec<f64> = self.labels.iter().map(|&y| y as f64).collect();
        crate::metrics::logloss(&probs, &labels).ok()
    }

    pub fn positive_rate(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len().max(1) as f64
    }
}

/// Column layout of a TSV file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsvSchema {
    pub num_dense: usize,
    pub num_cat: usize,
    /// Hash buckets per categorical field; id 0 is reserved for missing.
    pub buckets: usize,
}

impl Default for TsvSchema {
    fn default() -> Self {
        TsvSchema {
            num_dense: 13,
            num_cat: 26,
            buckets: 100_000,
        }
    }
}

/// Categorical id of `token` in `field`: `1 + fnv1a64(field, token) mod (buckets - 1)`.
pub fn hash_token(field: usize, token: &str, buckets: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(&(field as u64).to_le_bytes());
    h.write(token.as_bytes());
    (1 + h.finish() % (buckets as u64 - 1)) as u32
}

/// Parses `label \t dense... \t categorical...` rows. Missing dense values
/// become 0; dense values are mapped through `ln(1 + max(0, x))`.
pub fn parse_tsv<R: BufRead>(reader: R, schema: &TsvSchema, path: &str) -> Result<CtrDataset> {
    if schema.buckets < 2 {
        return Err(NasError::InvalidConfig("buckets must be at least 2".into()));
    }
    let cols = 1 + schema.num_dense + schema.num_cat;
    let mut ds = CtrDataset {
        num_dense: schema.num_dense,
        vocab_sizes: vec![schema.buckets; schema.num_cat],
        dense: Vec::new(),
        cat: Vec::new(),
        labels: Vec::new(),
        true_probs: None,
    };
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let err = |msg: String| NasError::Parse {
            path: path.into(),
            line: lineno,
            msg,
        };
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != cols {
            return Err(err(format!("expected {cols} columns, found {}", fields.len())));
        }
        let label = match fields[0].trim() {
            "0" => 0.0,
            "1" => 1.0,
            other => return Err(err(format!("label {other:?} is not 0 or 1"))),
        };
        ds.labels.push(label);
        for tok in &fields[1..=schema.num_dense] {
            let tok = tok.trim();
            let x = if tok.is_empty() {
                0.0
            } else {
                tok.parse::<f64>()
                    .map_err(|_| err(format!("dense value {tok:?} is not a number")))?
            };
            if !x.is_finite() {
                return Err(err(format!("dense value {tok:?} is not finite")));
            }
            ds.dense.push(x.max(0.0).ln_1p() as f32);
        }
        for (f, tok) in fields[1 + schema.num_dense..].iter().enumerate() {
            let tok = tok.trim();
            ds.cat.push(if tok.is_empty() {
                0
            } else {
                hash_token(f, tok, schema.buckets)
            });
        }
    }
    Ok(ds)
}

pub fn load_tsv(path: &Path, schema: &TsvSchema) -> Result<CtrDataset> {
    let f = File::open(path)?;
    parse_tsv(BufReader::new(f), schema, &path.display().to_string())
}

/// Split fractions and shuffle seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: CtrDataset,
    pub val: CtrDataset,
    pub test: CtrDataset,
}

/// Disjoint train/validation/test sets from a seeded permutation.
pub fn split(ds: &CtrDataset, spec: &SplitSpec) -> Result<Splits> {
    let n = ds.len();
    if n < 10 {
        return Err(NasError::InvalidArgument(format!("cannot split {n} rows")));
    }
    let [a, b, c] = spec.fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(NasError::InvalidArgument("split fractions must sum to 1".into()));
    }
    let n_train = (a * n as f64).round() as usize;
    let n_val = (b * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(NasError::InvalidArgument(format!("degenerate split of {n} rows")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok(Splits {
        train: ds.subset(&idx[..n_train]),
        val: ds.subset(&idx[n_train..n_train + n_val]),
        test: ds.subset(&idx[n_train + n_val..]),
    })
}

/// Binary cache: header then one contiguous column per field, little-endian.
pub fn write_cache<W: Write>(mut w: W, ds: &CtrDataset) -> Result<()> {
    ds.check()?;
    w.write_all(CACHE_MAGIC)?;
    w.write_u32::<LittleEndian>(CACHE_VERSION)?;
    w.write_u64::<LittleEndian>(ds.len() as u64)?;
    w.write_u32::<LittleEndian>(ds.num_dense as u32)?;
    w.write_u32::<LittleEndian>(ds.num_cat() as u32)?;
    for &v in &ds.vocab_sizes {
        w.write_u64::<LittleEndian>(v as u64)?;
    }
    w.write_u8(u8::from(ds.true_probs.is_some()))?;
    let n = ds.len();
    for &y in &ds.labels {
        w.write_u8(y as u8)?;
    }
    for j in 0..ds.num_dense {
        for i in 0..n {
            w.write_f32::<LittleEndian>(ds.dense[i * ds.num_dense + j])?;
        }
    }
    let fc = ds.num_cat();
    for j in 0..fc {
        for i in 0..n {
            w.write_u32::<LittleEndian>(ds.cat[i * fc + j])?;
        }
    }
    if let Some(p) = &ds.true_probs {
        for &v in p {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

pub fn read_cache<R: Read>(mut r: R) -> Result<CtrDataset> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(NasError::Format("not a dataset cache".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != CACHE_VERSION {
        return Err(NasError::Format(format!("unsupported cache version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()? as usize;
    let fd = r.read_u32::<LittleEndian>()? as usize;
    let fc = r.read_u32::<LittleEndian>()? as usize;
    let vocab_sizes = (0..fc)
        .map(|_| r.read_u64::<LittleEndian>().map(|v| v as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let has_probs = r.read_u8()? != 0;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.read_u8()? as f32);
    }
    let mut dense = vec![0f32; n * fd];
    for j in 0..fd {
        for i in 0..n {
            dense[i * fd + j] = r.read_f32::<LittleEndian>()?;
        }
    }
    let mut cat = vec![0u32; n * fc];
    for j in 0..fc {
        for i in 0..n {
            cat[i * fc + j] = r.read_u32::<LittleEndian>()?;
        }
    }
    let true_probs = if has_probs {
        Some((0..n).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?)
    } else {
        None
    };
    let ds = CtrDataset {
        num_dense: fd,
        vocab_sizes,
        dense,
        cat,
        labels,
        true_probs,
    };
    ds.check()?;
    Ok(ds)
}

pub fn save_cache(path: &Path, ds: &CtrDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_cache(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

/// Loads a binary cache, or parses TSV with `schema` when the file does not
/// start with the cache magic.
pub fn load_dataset(path: &Path, schema: &TsvSchema) -> Result<CtrDataset> {
    let mut f = File::open(path)?;
    let mut magic = [0u8; 8];
    let is_cache = f.read_exact(&mut magic).is_ok() && &magic == CACHE_MAGIC;
    if is_cache {
        read_cache(BufReader::new(File::open(path)?))
    } else {
        load_tsv(path, schema)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlantedStructure {
    /// Logit linear in dense values plus one weight per categorical id.
    LogisticLinear,
    /// Logit dominated by dot products of latent vectors of selected field pairs.
    PairwiseInteraction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_rows: usize,
    pub num_dense: usize,
    pub num_cat: usize,
    pub vocab: usize,
    pub structure: PlantedStructure,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_rows: 100_000,
            num_dense: 8,
            num_cat: 8,
            vocab: 100,
            structure: PlantedStructure::PairwiseInteraction,
            seed: 0,
        }
    }
}

const LATENT_DIM: usize = 4;

/// Draws a dataset whose labels are Bernoulli of a planted logit.
pub fn synth_generate(spec: &SynthSpec) -> Result<CtrDataset> {
    if spec.num_dense == 0 || spec.num_cat == 0 || spec.vocab == 0 {
        return Err(NasError::InvalidArgument("synthetic data needs dense and categorical fields".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let (fd, fc, v) = (spec.num_dense, spec.num_cat, spec.vocab);
    let dense_w: Vec<f64> = (0..fd).map(|_| std.sample(&mut rng) / (fd as f64).sqrt()).collect();
    let bias = -0.5;
    let id_w: Vec<f64> = (0..fc * v).map(|_| 0.5 * std.sample(&mut rng)).collect();
    let latent: Vec<f64> = (0..fc * v * LATENT_DIM)
        .map(|_| std.sample(&mut rng) / (LATENT_DIM as f64).sqrt())
        .collect();
    let mut pairs = Vec::new();
    for a in 0..fc {
        for b in a + 1..fc {
            pairs.push((a, b));
        }
    }
    pairs.shuffle(&mut rng);
    pairs.truncate(fc.max(1));
    let pair_scale = 1.5 / (pairs.len() as f64).sqrt();

    let mut ds = CtrDataset {
        num_dense: fd,
        vocab_sizes: vec![v; fc],
        dense: Vec::with_capacity(spec.n_rows * fd),
        cat: Vec::with_capacity(spec.n_rows * fc),
        labels: Vec::with_capacity(spec.n_rows),
        true_probs: Some(Vec::with_capacity(spec.n_rows)),
    };
    let mut x = vec![0f64; fd];
    let mut ids = vec![0usize; fc];
    for _ in 0..spec.n_rows {
        for xi in x.iter_mut() {
            *xi = std.sample(&mut rng);
        }
        for id in ids.iter_mut() {
            *id = rng.gen_range(0..v);
        }
        let mut z = bias + x.iter().zip(&dense_w).map(|(a, b)| a * b).sum::<f64>();
        match spec.structure {
            PlantedStructure::LogisticLinear => {
                z += ids.iter().enumerate().map(|(f, &id)| id_w[f * v + id]).sum::<f64>();
            }
            PlantedStructure::PairwiseInteraction => {
                for &(a, b) in &pairs {
                    let va = &latent[(a * v + ids[a]) * LATENT_DIM..][..LATENT_DIM];
                    let vb = &latent[(b * v + ids[b]) * LATENT_DIM..][..LATENT_DIM];
                    z += pair_scale * 2.0 * va.iter().zip(vb).map(|(p, q)| p * q).sum::<f64>();
                }
            }
        }
        let p = 1.0 / (1.0 + (-z).exp());
        let y = rng.gen_bool(p.clamp(0.0, 1.0));
        ds.dense.extend(x.iter().map(|&a| a as f32));
        ds.cat.extend(ids.iter().map(|&i| i as u32));
        ds.labels.push(if y { 1.0 } else { 0.0 });
        if let Some(tp) = ds.true_probs.as_mut() {
            tp.push(p);
        }
    }
    Ok(ds)
}
