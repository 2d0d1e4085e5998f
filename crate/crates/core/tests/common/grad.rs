//! Central finite-difference gradient checks at 64-bit precision.

use super::fixtures;
use nasrec_core::autodiff::{Graph, ParamGrad, Var};
use nasrec_core::network::{ExecMode, Supernet};
use nasrec_core::sampler::{sample, SamplingStrategy};
use nasrec_core::operators::{
    op_attention, op_dot_product, op_embed_fc, op_fc, op_gating, op_sum, project_concatenate, Affine,
    DotProductWeights,
};
use nasrec_core::tensor::{ParamId, ParamStore, Tensor};
use nasrec_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Seeds per case.
pub const SEEDS: u64 = 20;
/// Denominator floor of the relative error: gradients smaller than this are
/// compared on absolute error scaled by it.
pub const FLOOR: f64 = 1e-6;
/// Floor for whole-network checks, where central-difference roundoff on an
/// O(1) loss reaches ~1e-10 on gradients that are exactly zero.
pub const NETWORK_FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    rel_err_floor(analytic, numeric, FLOOR)
}

pub fn rel_err_floor(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Like [`rand_tensor`] but every entry at least `gap` away from zero.
pub fn rand_away_from_zero(shape: &[usize], gap: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut t = rand_tensor(shape, rng);
    for v in t.data_mut() {
        *v = v.signum() * (v.abs() + gap);
    }
    t
}

/// `sum(y ⊙ r)` for fixed random weights `r`, so every output entry matters.
fn weighted_sum<'p>(g: &mut Graph<'p, f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = shape.iter().product();
    let r: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(0.5..1.5) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let r = g.constant(Tensor::new(&shape, r)?);
    let p = g.elementwise_mul(y, r)?;
    Ok(g.sum(p))
}

/// Largest relative error between backward and central differences over
/// every entry of every input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: for<'g> Fn(&mut Graph<'g, f64>, &[Var]) -> Result<Var>,
{
    let loss_of = |ts: &[Tensor<f64>], grad: bool| {
        let mut g = Graph::new();
        if !grad {
            g = g.no_grad();
        }
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone(), grad)).collect();
        let y = f(&mut g, &vars).expect("forward");
        let l = weighted_sum(&mut g, y, seed).expect("loss");
        (g, vars, l)
    };
    let (g, vars, l) = loss_of(inputs, true);
    let grads = g.backward(l).expect("backward");
    let mut worst: f64 = 0.0;
    for (i, t) in inputs.iter().enumerate() {
        let analytic = grads
            .wrt(vars[i])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; t.len()]);
        for j in 0..t.len() {
            let eval = |delta: f64| {
                let mut ts = inputs.to_vec();
                ts[i].data_mut()[j] += delta;
                let (g, _, l) = loss_of(&ts, false);
                g.value(l)[0]
            };
            let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

fn dense_grad(g: Option<&ParamGrad<f64>>, len: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    match g {
        Some(ParamGrad::Dense(v)) => out.copy_from_slice(v),
        Some(ParamGrad::Rows(rows)) => {
            for (&r, v) in rows {
                out[r * cols..(r + 1) * cols].copy_from_slice(v);
            }
        }
        None => {}
    }
    out
}

/// Gradient check of a graph built over a parameter store.
pub fn check_store<F>(store: &ParamStore<f64>, ids: &[ParamId], entries: Option<usize>, seed: u64, f: F) -> f64
where
    F: for<'p> Fn(&mut Graph<'p, f64>) -> Result<Var>,
{
    let loss_of = |s: &ParamStore<f64>| {
        let mut g = Graph::with_params(s).no_grad();
        let y = f(&mut g).expect("forward");
        let l = weighted_sum(&mut g, y, seed).expect("loss");
        g.value(l)[0]
    };
    let mut g = Graph::with_params(store);
    let y = f(&mut g).expect("forward");
    let l = weighted_sum(&mut g, y, seed).expect("loss");
    let grads = g.backward(l).expect("backward");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut work = store.clone();
    for &id in ids {
        let t = store.get(id);
        let cols = *t.shape().last().unwrap();
        let analytic = dense_grad(grads.param(id), t.len(), cols);
        let picks: Vec<usize> = match entries {
            Some(n) if n < t.len() => (0..n).map(|_| rng.gen_range(0..t.len())).collect(),
            _ => (0..t.len()).collect(),
        };
        for j in picks {
            let orig = t.data()[j];
            work.get_mut(id).data_mut()[j] = orig + STEP;
            let up = loss_of(&work);
            work.get_mut(id).data_mut()[j] = orig - STEP;
            let down = loss_of(&work);
            work.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_err(analytic[j], (up - down) / (2.0 * STEP)));
        }
    }
    worst
}

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

fn z_clear(z: &[f64]) -> bool {
    z.iter().all(|v| v.abs() > 1e-3)
}

fn affine_value(x: &[f64], w: &[f64], b: &[f64], rows: usize, i: usize, o: usize) -> Vec<f64> {
    let mut z = vec![0.0; rows * o];
    for r in 0..rows {
        for c in 0..o {
            z[r * o + c] = b[c] + (0..i).map(|k| x[r * i + k] * w[k * o + c]).sum::<f64>();
        }
    }
    z
}

/// One randomized case: returns the worst relative error for `seed`.
pub type Case = fn(u64) -> f64;

fn linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6), dims(&mut rng, 1, 5));
    let ts = [
        rand_tensor(&[b, i], &mut rng),
        rand_tensor(&[i, o], &mut rng),
        rand_tensor(&[o], &mut rng),
    ];
    check_inputs(&ts, seed, |g, v| g.linear(v[0], v[1], Some(v[2])))
}

fn mid_linear(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, m, e) = (
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
    );
    let ts = [
        rand_tensor(&[b, n, e], &mut rng),
        rand_tensor(&[n, m], &mut rng),
        rand_tensor(&[m], &mut rng),
    ];
    check_inputs(&ts, seed, |g, v| g.mid_linear(v[0], v[1], Some(v[2])))
}

fn relu(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6));
    let ts = [rand_away_from_zero(&[b, d], 1e-2, &mut rng)];
    check_inputs(&ts, seed, |g, v| Ok(g.relu(v[0])))
}

fn sigmoid(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6));
    let mut t = rand_tensor(&[b, d], &mut rng);
    t.data_mut().iter_mut().for_each(|x| *x *= 4.0);
    check_inputs(&[t], seed, |g, v| Ok(g.sigmoid(v[0])))
}

fn softmax(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, d) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 1, 6));
    let mask: Option<Vec<bool>> = if rng.gen_bool(0.5) {
        Some((0..d).map(|_| rng.gen_bool(0.6)).collect())
    } else {
        None
    };
    let ts = [rand_tensor(&[b, n, d], &mut rng)];
    check_inputs(&ts, seed, move |g, v| g.softmax_lastdim(v[0], mask.as_deref()))
}

fn layer_norm(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d) = (dims(&mut rng, 1, 4), dims(&mut rng, 2, 6));
    let width = dims(&mut rng, 2, d);
    let three = rng.gen_bool(0.5);
    let shape = if three { vec![b, 2, d] } else { vec![b, d] };
    let ts = [
        rand_tensor(&shape, &mut rng),
        rand_tensor(&[d], &mut rng),
        rand_tensor(&[d], &mut rng),
    ];
    check_inputs(&ts, seed, move |g, v| g.layer_norm(v[0], v[1], v[2], width, 1e-5))
}

fn concat_lastdim(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = dims(&mut rng, 1, 4);
    let ts: Vec<_> = (0..dims(&mut rng, 1, 4))
        .map(|_| {
            let w = dims(&mut rng, 1, 4);
            rand_tensor(&[b, w], &mut rng)
        })
        .collect();
    check_inputs(&ts, seed, |g, v| g.concat_lastdim(v))
}

fn concat_middim(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, e) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4));
    let ts: Vec<_> = (0..dims(&mut rng, 1, 4))
        .map(|_| {
            let n = dims(&mut rng, 1, 3);
            rand_tensor(&[b, n, e], &mut rng)
        })
        .collect();
    check_inputs(&ts, seed, |g, v| g.concat_middim(v))
}

fn add_mul_scale(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6));
    let c = rng.gen_range(-2.0..2.0);
    let ts = [rand_tensor(&[b, d], &mut rng), rand_tensor(&[b, d], &mut rng)];
    check_inputs(&ts, seed, move |g, v| {
        let s = g.add(v[0], v[1])?;
        let p = g.elementwise_mul(s, v[0])?;
        Ok(g.scale(p, c))
    })
}

fn batched_matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, m, k, n) = (
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
    );
    let t = rng.gen_bool(0.5);
    let bs = if t { [b, n, k] } else { [b, k, n] };
    let ts = [rand_tensor(&[b, m, k], &mut rng), rand_tensor(&bs, &mut rng)];
    check_inputs(&ts, seed, move |g, v| g.batched_matmul(v[0], v[1], t))
}

fn self_matmul(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, e) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
    let ts = [rand_tensor(&[b, n, e], &mut rng)];
    check_inputs(&ts, seed, |g, v| g.batched_matmul(v[0], v[0], true))
}

fn masks(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, e) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
    let (dn, de) = (dims(&mut rng, 1, n), dims(&mut rng, 1, e));
    let keep: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
    let ts = [rand_tensor(&[b, n, e], &mut rng), rand_tensor(&[b, e], &mut rng)];
    check_inputs(&ts, seed, move |g, v| {
        let a = g.mask_middim(v[0], dn)?;
        let a = g.mask_rows(a, &keep)?;
        let d = g.mask_lastdim(v[1], de)?;
        let d = g.reshape(d, &[b, 1, e])?;
        g.concat_middim(&[a, d])
    })
}

fn pads(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, e) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 3), dims(&mut rng, 1, 4));
    let (pn, pe) = (n + dims(&mut rng, 0, 2), e + dims(&mut rng, 0, 2));
    let ts = [rand_tensor(&[b, n, e], &mut rng), rand_tensor(&[b, e], &mut rng)];
    check_inputs(&ts, seed, move |g, v| {
        let a = g.pad_middim(v[0], pn)?;
        let a = g.reshape(a, &[b, pn * e])?;
        let d = g.pad_lastdim(v[1], pe)?;
        g.concat_lastdim(&[a, d])
    })
}

fn triu_flatten(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, k) = (dims(&mut rng, 1, 3), dims(&mut rng, 2, 5));
    let ts = [rand_tensor(&[b, k, k], &mut rng)];
    check_inputs(&ts, seed, |g, v| g.triu_flatten(v[0]))
}

fn gather(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r, c) = (dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
    let cols = dims(&mut rng, 1, c);
    let rows: Option<Vec<usize>> = if rng.gen_bool(0.7) {
        Some((0..dims(&mut rng, 1, 6)).map(|_| rng.gen_range(0..r)).collect())
    } else {
        None
    };
    let ts = [rand_tensor(&[r, c], &mut rng), rand_tensor(&[c], &mut rng)];
    check_inputs(&ts, seed, move |g, v| {
        let m = g.gather(v[0], rows.as_deref(), cols)?;
        let n = g.shape(m)[0];
        let vcol = g.gather(v[1], None, cols)?;
        let vcol = g.reshape(vcol, &[1, cols])?;
        let parts: Vec<Var> = std::iter::once(m).chain(std::iter::repeat(vcol).take(n)).collect();
        let flat: Vec<Var> = parts
            .iter()
            .map(|&p| {
                let s = g.shape(p).to_vec();
                g.reshape(p, &[1, s[0] * s[1]])
            })
            .collect::<Result<_>>()?;
        g.concat_lastdim(&flat)
    })
}

fn reductions_and_bce(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = dims(&mut rng, 1, 6);
    let labels: Vec<f64> = (0..b).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect();
    let mut z = rand_tensor(&[b, 1], &mut rng);
    z.data_mut().iter_mut().for_each(|x| *x *= 3.0);
    let y = rand_tensor(&[b, 2], &mut rng);
    check_inputs(&[z, y], seed, move |g, v| {
        let l = g.bce_with_logits(v[0], &labels)?;
        let m = g.mean(v[1]);
        let s = g.sum(v[1]);
        let a = g.add(l, m)?;
        g.add(a, s)
    })
}

fn embedding(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, e, b, f) = (
        dims(&mut rng, 1, 6),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 3),
    );
    let ids: Vec<usize> = (0..b * f).map(|_| rng.gen_range(0..rows)).collect();
    let mut store = ParamStore::new();
    let table = store.add("t", rand_tensor(&[rows, e], &mut rng)).unwrap();
    let w = store.add("w", rand_tensor(&[e, 2], &mut rng)).unwrap();
    check_store(&store, &[table, w], None, seed, move |g| {
        let x = g.embedding(table, &ids, b, f)?;
        let x = g.reshape(x, &[b * f, e])?;
        let wv = g.param(w);
        g.linear(x, wv, None)
    })
}

fn fc(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 6), dims(&mut rng, 1, 5));
    let ts = loop {
        let ts = [
            rand_tensor(&[b, i], &mut rng),
            rand_tensor(&[i, o], &mut rng),
            rand_tensor(&[o], &mut rng),
        ];
        if z_clear(&affine_value(ts[0].data(), ts[1].data(), ts[2].data(), b, i, o)) {
            break ts;
        }
    };
    check_inputs(&ts, seed, |g, v| op_fc(g, v[0], Affine::new(v[1], Some(v[2]))))
}

fn gating(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, i, o) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 5), dims(&mut rng, 1, 5));
    let project = rng.gen_bool(0.5);
    let i2 = if project { dims(&mut rng, 1, 5) } else { o };
    let ts = [
        rand_tensor(&[b, i], &mut rng),
        rand_tensor(&[b, i2], &mut rng),
        rand_tensor(&[i, o], &mut rng),
        rand_tensor(&[o], &mut rng),
        rand_tensor(&[i2, o], &mut rng),
        rand_tensor(&[o], &mut rng),
    ];
    check_inputs(&ts, seed, move |g, v| {
        let proj = project.then(|| Affine::new(v[4], Some(v[5])));
        op_gating(g, v[0], v[1], Affine::new(v[2], Some(v[3])), proj)
    })
}

fn sum_op(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, o) = (dims(&mut rng, 1, 4), dims(&mut rng, 1, 5));
    let project = rng.gen_bool(0.5);
    let i2 = if project { dims(&mut rng, 1, 5) } else { o };
    let ts = [
        rand_tensor(&[b, o], &mut rng),
        rand_tensor(&[b, i2], &mut rng),
        rand_tensor(&[i2, o], &mut rng),
        rand_tensor(&[o], &mut rng),
    ];
    check_inputs(&ts, seed, move |g, v| {
        let proj = project.then(|| Affine::new(v[2], Some(v[3])));
        op_sum(g, v[0], v[1], proj)
    })
}

fn dot_product(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, e, n, wd, out) = (
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 5),
        dims(&mut rng, 1, 4),
    );
    let (has_dense, has_sparse) = match rng.gen_range(0..3) {
        0 => (true, true),
        1 => (true, false),
        _ => (false, true),
    };
    let balanced = rng.gen_bool(0.5);
    let target = dims(&mut rng, 2, 4);
    let k = n * usize::from(has_sparse) + usize::from(has_dense);
    let rows = if balanced { target } else { k };
    let pairs = rows * (rows - 1) / 2;
    if pairs == 0 {
        return dot_product(seed.wrapping_add(1_000_003));
    }
    let ts = vec![
        rand_tensor(&[b, wd], &mut rng),
        rand_tensor(&[b, n, e], &mut rng),
        rand_tensor(&[wd, e], &mut rng),
        rand_tensor(&[e], &mut rng),
        rand_tensor(&[k, target], &mut rng),
        rand_tensor(&[target], &mut rng),
        rand_tensor(&[pairs, out], &mut rng),
        rand_tensor(&[out], &mut rng),
    ];
    check_inputs(&ts, seed, move |g, v| {
        let w = DotProductWeights {
            dense_projection: has_dense.then(|| Affine::new(v[2], Some(v[3]))),
            balancing: balanced.then(|| Affine::new(v[4], Some(v[5]))),
            output: Affine::new(v[6], Some(v[7])),
        };
        op_dot_product(g, has_dense.then_some(v[0]), has_sparse.then_some(v[1]), &w)
    })
}

fn embed_fc(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, m, e) = (
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
        dims(&mut rng, 1, 4),
    );
    let ts = [
        rand_tensor(&[b, n, e], &mut rng),
        rand_tensor(&[n, m], &mut rng),
        rand_tensor(&[m], &mut rng),
    ];
    check_inputs(&ts, seed, |g, v| op_embed_fc(g, v[0], Affine::new(v[1], Some(v[2]))))
}

fn attention(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, n, e) = (dims(&mut rng, 1, 3), dims(&mut rng, 1, 4), dims(&mut rng, 1, 4));
    let valid: Option<Vec<bool>> = rng
        .gen_bool(0.5)
        .then(|| (0..n).map(|_| rng.gen_bool(0.7)).collect());
    let ts = [rand_tensor(&[b, n, e], &mut rng)];
    check_inputs(&ts, seed, move |g, v| op_attention(g, v[0], valid.as_deref()))
}

fn project_concat(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, d, n, e) = (
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 5),
        dims(&mut rng, 1, 3),
        dims(&mut rng, 1, 4),
    );
    let ts = [
        rand_tensor(&[b, d], &mut rng),
        rand_tensor(&[b, n, e], &mut rng),
        rand_tensor(&[d, e], &mut rng),
        rand_tensor(&[e], &mut rng),
    ];
    check_inputs(&ts, seed, |g, v| project_concatenate(g, v[0], v[1], Affine::new(v[2], Some(v[3]))))
}

/// Every kernel and operator case, by name.
pub const CASES: &[(&str, Case)] = &[
    ("linear", linear),
    ("mid_linear", mid_linear),
    ("relu", relu),
    ("sigmoid", sigmoid),
    ("softmax_lastdim", softmax),
    ("layer_norm", layer_norm),
    ("concat_lastdim", concat_lastdim),
    ("concat_middim", concat_middim),
    ("add_mul_scale", add_mul_scale),
    ("batched_matmul", batched_matmul),
    ("batched_matmul_self", self_matmul),
    ("masks", masks),
    ("pads_reshape", pads),
    ("triu_flatten", triu_flatten),
    ("gather", gather),
    ("sum_mean_bce", reductions_and_bce),
    ("embedding", embedding),
    ("op_fc", fc),
    ("op_gating", gating),
    ("op_sum", sum_op),
    ("op_dot_product", dot_product),
    ("op_embed_fc", embed_fc),
    ("op_attention", attention),
    ("project_concatenate", project_concat),
];

/// Worst error of `case` over [`SEEDS`] seeds.
pub fn run(case: Case) -> f64 {
    (0..SEEDS).map(case).fold(0.0, f64::max)
}

pub fn case(name: &str) -> Case {
    CASES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .unwrap_or_else(|| panic!("no case {name}"))
}

/// Whole-network check: a random subnet of a small supernet, every parameter
/// tensor probed at `per_param` random entries.
pub fn network(seed: u64, mode: ExecMode, per_param: usize) -> f64 {
    let cfg = fixtures::tiny_full(3);
    let net = Supernet::<f64>::new(&cfg, None, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = sample(SamplingStrategy::AnyOpAnyConn, &cfg, &mut rng);
    let data = fixtures::tiny_data(4, seed);
    let batch = data.batch(&[0, 1, 2, 3]);
    let logits = |n: &Supernet<f64>, grad: bool| -> Vec<f64> {
        let mut graph = n.graph();
        if !grad {
            graph = graph.no_grad();
        }
        let y = n.forward(&mut graph, &g, &batch, mode).expect("forward");
        graph.value(y).to_vec()
    };
    let weights: Vec<f64> = (0..batch.len).map(|_| rng.gen_range(0.5..1.5)).collect();
    let loss = |n: &Supernet<f64>| -> f64 { logits(n, false).iter().zip(&weights).map(|(a, b)| a * b).sum() };

    let mut graph = net.graph();
    let y = net.forward(&mut graph, &g, &batch, mode).unwrap();
    let r = graph.constant(Tensor::new(&[batch.len, 1], weights.clone()).unwrap());
    let p = graph.elementwise_mul(y, r).unwrap();
    let l = graph.sum(p);
    let grads = graph.backward(l).unwrap();

    let mut work = net.clone();
    let mut worst: f64 = 0.0;
    for id in net.store.ids() {
        let t = net.store.get(id);
        let cols = *t.shape().last().unwrap();
        let analytic = dense_grad(grads.param(id), t.len(), cols);
        for _ in 0..per_param.min(t.len()) {
            let j = rng.gen_range(0..t.len());
            let orig = t.data()[j];
            work.store.get_mut(id).data_mut()[j] = orig + STEP;
            let up = loss(&work);
            work.store.get_mut(id).data_mut()[j] = orig - STEP;
            let down = loss(&work);
            work.store.get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_err_floor(analytic[j], (up - down) / (2.0 * STEP), NETWORK_FLOOR));
        }
    }
    worst
}
