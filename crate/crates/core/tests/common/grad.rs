//! Central finite-difference checks of every differentiable operation and of
//! the model-level composites.
//!
//! Each trial draws fresh inputs, reduces the output to a scalar with a random
//! fixed weighting, and compares the analytic gradient of the inputs with
//! `(f(x + h) - f(x - h)) / 2h`, `h = 1e-5`. The error of a trial is
//! `||analytic - numeric|| / (||analytic|| + ||numeric||)` over the probed
//! coordinates. A coordinate whose one-sided differences disagree sits on a
//! ReLU or clamp kink and is skipped; skips must stay rare.

use mojito::attention::{EncoderSpec, Mode};
use mojito::config::AttentionMode;
use mojito::data::{ContextKind, ContextSchema, ContextTuple, PaddedSequence};
use mojito::embedding::{EmbeddingSpec, ITEM_TABLE};
use mojito::long_term::{self, USER_TABLE};
use mojito::model::{bce_pair_loss, MojitoModel, ScoreKind, TrainingExample};
use mojito::tensor::{Graph, ParameterStore, Tensor, Var};
use mojito::MojitoConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: usize = 50;
/// Coordinates probed per parameter and trial for the large composites.
const MAX_COORDS: usize = 10;

/// Something that owns the parameters under test.
trait Params: Clone {
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
}

impl Params for ParameterStore {
    fn store(&self) -> &ParameterStore {
        self
    }
    fn store_mut(&mut self) -> &mut ParameterStore {
        self
    }
}

impl Params for MojitoModel {
    fn store(&self) -> &ParameterStore {
        &self.store
    }
    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }
}

/// Row 0 of a table read through `Graph::embedding` is frozen.
fn frozen_prefix(name: &str, t: &Tensor) -> usize {
    match name {
        ITEM_TABLE | USER_TABLE | "table" => t.shape()[1],
        _ => 0,
    }
}

/// Entries uniform on `[-2, 2]`.
fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.values_mut()
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-2.0..=2.0));
    t
}

/// Weighted sum of all entries of `y` with fixed weights drawn from `seed`.
fn reduce(g: &mut Graph<'_>, y: Var, seed: u64) -> Var {
    let (m, n) = g.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let w = g.constant_from(m, n, w).unwrap();
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn eval<T, F>(state: &T, f: &F) -> f64
where
    F: for<'p> Fn(&mut Graph<'p>, &'p T) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, state);
    g.scalar_value(out)
}

#[derive(Default)]
struct Tally {
    probed: usize,
    kinks: usize,
}

fn trial_error<T: Params, F>(
    state: &T,
    f: &F,
    rng: &mut ChaCha8Rng,
    max_coords: usize,
    tally: &mut Tally,
) -> f64
where
    F: for<'p> Fn(&mut Graph<'p>, &'p T) -> Var,
{
    let mut g = Graph::new();
    let out = f(&mut g, state);
    let base = g.scalar_value(out);
    g.backward(out).unwrap();
    let grads = g.into_param_grads();
    let (mut diff2, mut norm_a, mut norm_n) = (0.0, 0.0, 0.0);
    let names: Vec<String> = state.store().names().map(str::to_string).collect();
    for name in names {
        let t = state.store().get(&name).unwrap();
        let skip = frozen_prefix(&name, t);
        let len = t.len();
        if len <= skip {
            continue;
        }
        let analytic = grads
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; len]);
        let coords: Vec<usize> = if len - skip <= max_coords {
            (skip..len).collect()
        } else {
            rand::seq::index::sample(rng, len - skip, max_coords)
                .into_iter()
                .map(|i| i + skip)
                .collect()
        };
        for i in coords {
            let mut plus = state.clone();
            plus.store_mut().get_mut(&name).unwrap().values_mut()[i] += H;
            let mut minus = state.clone();
            minus.store_mut().get_mut(&name).unwrap().values_mut()[i] -= H;
            let (fp, fm) = (eval(&plus, f), eval(&minus, f));
            tally.probed += 1;
            let (fwd, bwd) = ((fp - base) / H, (base - fm) / H);
            if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs()) + 1e-6 {
                tally.kinks += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * H);
            diff2 += (analytic[i] - numeric).powi(2);
            norm_a += analytic[i].powi(2);
            norm_n += numeric.powi(2);
        }
    }
    let denom = norm_a.sqrt() + norm_n.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        diff2.sqrt() / denom
    }
}

/// Runs `TRIALS` trials; `setup` draws the parameters and the loss builder.
fn run<T: Params, S, F>(
    name: &str,
    seed: u64,
    max_coords: usize,
    mut setup: S,
) -> Result<(), String>
where
    S: FnMut(&mut ChaCha8Rng) -> (T, F),
    F: for<'p> Fn(&mut Graph<'p>, &'p T) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut tally = Tally::default();
    for _ in 0..TRIALS {
        let (state, f) = setup(&mut rng);
        worst = worst.max(trial_error(&state, &f, &mut rng, max_coords, &mut tally));
    }
    if worst >= TOL {
        return Err(format!("{name}: worst relative error {worst:e}"));
    }
    if tally.kinks * 50 > tally.probed {
        return Err(format!(
            "{name}: {} of {} coordinates on a kink",
            tally.kinks, tally.probed
        ));
    }
    Ok(())
}

fn store_of(entries: Vec<(&str, Tensor)>) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (n, t) in entries {
        s.insert(n, t).unwrap();
    }
    s
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.random_range(1..5),
        rng.random_range(1..5),
        rng.random_range(1..5),
    )
}

pub fn matmul() -> Result<(), String> {
    run("matmul", 1, usize::MAX, |rng| {
        let (m, k, n) = dims(rng);
        let s = store_of(vec![("a", randn(&[m, k], rng)), ("b", randn(&[k, n], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let a = g.param(s, "a").unwrap();
            let b = g.param(s, "b").unwrap();
            let y = g.matmul(a, b).unwrap();
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn matmul_transposed() -> Result<(), String> {
    run("matmul_t", 2, usize::MAX, |rng| {
        let (m, k, n) = dims(rng);
        let s = store_of(vec![("a", randn(&[m, k], rng)), ("b", randn(&[n, k], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let a = g.param(s, "a").unwrap();
            let b = g.param(s, "b").unwrap();
            let y = g.matmul_t(a, b).unwrap();
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn masked_softmax() -> Result<(), String> {
    run("softmax_rows", 3, usize::MAX, |rng| {
        let (m, _, n) = dims(rng);
        let n = n + 1;
        let s = store_of(vec![("x", randn(&[m, n], rng))]);
        let mut mask: Vec<bool> = (0..m * n).map(|_| rng.random_bool(0.7)).collect();
        for r in 0..m {
            mask[r * n + rng.random_range(0..n)] = true;
        }
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let y = g.softmax_rows(x, Some(&mask)).unwrap();
            reduce(g, y, seed)
        })
    })?;
    run("softmax_rows_or_zero", 4, usize::MAX, |rng| {
        let (m, _, n) = dims(rng);
        let s = store_of(vec![("x", randn(&[m, n], rng))]);
        let mask: Vec<bool> = (0..m * n).map(|_| rng.random_bool(0.5)).collect();
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let y = g.softmax_rows_or_zero(x, Some(&mask)).unwrap();
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn smooth_elementwise() -> Result<(), String> {
    run("sigmoid/log/exp", 5, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let s = store_of(vec![("x", randn(&[m, n], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let a = g.sigmoid(x);
            let b = g.log_clamped(a, 1e-12);
            let c = g.exp(x);
            let y = g.add(b, c).unwrap();
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn relu_away_from_kink() -> Result<(), String> {
    run("relu", 6, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let mut x = randn(&[m, n], rng);
        x.values_mut()
            .iter_mut()
            .for_each(|v| *v += 0.1 * v.signum());
        let s = store_of(vec![("x", x)]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let y = g.relu(x);
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn arithmetic_and_broadcasts() -> Result<(), String> {
    run("add/sub/mul/row/scale", 7, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let s = store_of(vec![
            ("a", randn(&[m, n], rng)),
            ("b", randn(&[m, n], rng)),
            ("c", randn(&[1, 1], rng)),
            ("r", randn(&[1, n], rng)),
        ]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let a = g.param(s, "a").unwrap();
            let b = g.param(s, "b").unwrap();
            let c = g.param(s, "c").unwrap();
            let r = g.param(s, "r").unwrap();
            let x = g.mul(a, b).unwrap();
            let x = g.sub(x, a).unwrap();
            let x = g.mul(x, c).unwrap();
            let x = g.mul(c, x).unwrap();
            let x = g.add(x, c).unwrap();
            let x = g.add(c, x).unwrap();
            let x = g.add_row(x, r).unwrap();
            let x = g.mul_row(x, r).unwrap();
            let x = g.scale_shift(x, 0.7, -0.2);
            reduce(g, x, seed)
        })
    })?;
    Ok(())
}

pub fn reductions() -> Result<(), String> {
    run("sum/row_sums/row_dots", 8, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let s = store_of(vec![("a", randn(&[m, n], rng)), ("b", randn(&[m, n], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let a = g.param(s, "a").unwrap();
            let b = g.param(s, "b").unwrap();
            let d = g.row_dots(a, b).unwrap();
            let r = g.row_sums(a);
            let y = g.mul(d, r).unwrap();
            let y = reduce(g, y, seed);
            let t = g.sum(b);
            g.mul(y, t).unwrap()
        })
    })?;
    Ok(())
}

pub fn concat_and_slices() -> Result<(), String> {
    run("concat/split/slice", 9, usize::MAX, |rng| {
        let (m, a, b) = dims(rng);
        let s = store_of(vec![("a", randn(&[m, a], rng)), ("b", randn(&[m, b], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "a").unwrap();
            let y = g.param(s, "b").unwrap();
            let c = g.concat_cols(&[y, x, y]).unwrap();
            let parts = g.split_cols(c, &[b, a + b]).unwrap();
            let t = g.exp(parts[1]);
            let z = g.concat_cols(&[t, parts[0]]).unwrap();
            let w = g.slice_cols(z, 1, a + 2 * b - 1).unwrap();
            reduce(g, w, seed)
        })
    })?;
    Ok(())
}

pub fn gathers() -> Result<(), String> {
    run("embedding/gather_rows", 10, usize::MAX, |rng| {
        let (v, d, _) = dims(rng);
        let v = v + 1;
        let s = store_of(vec![("table", randn(&[v, d], rng))]);
        let ids: Vec<usize> = (0..rng.random_range(1..6))
            .map(|_| rng.random_range(0..v))
            .collect();
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let t = g.param(s, "table").unwrap();
            let e = g.embedding(t, &ids).unwrap();
            let y = g.gather_rows(e, &[0, 0]).unwrap();
            let e = reduce(g, e, seed);
            let y = reduce(g, y, seed ^ 1);
            g.add(e, y).unwrap()
        })
    })?;
    Ok(())
}

pub fn gaussian_reparameterization() -> Result<(), String> {
    run("gaussian_reparam", 11, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let lv: f64 = rng.random_range(-2.0..1.0);
        let s = store_of(vec![
            ("mu", randn(&[m, n], rng)),
            ("lv", Tensor::scalar(lv)),
        ]);
        let seed: u64 = rng.random();
        let noise: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let mu = g.param(s, "mu").unwrap();
            let lv = g.param(s, "lv").unwrap();
            let half = g.scale(lv, 0.5);
            let sigma = g.exp(half);
            let y = g
                .gaussian_reparam(mu, sigma, &mut ChaCha8Rng::seed_from_u64(noise))
                .unwrap();
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

pub fn layer_norm() -> Result<(), String> {
    run("layer_norm_rows", 12, usize::MAX, |rng| {
        let (m, n, _) = dims(rng);
        let s = store_of(vec![("x", randn(&[m, n + 2], rng))]);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let y = g.layer_norm_rows(x, 1e-8);
            reduce(g, y, seed)
        })
    })?;
    Ok(())
}

fn random_schema(rng: &mut ChaCha8Rng) -> ContextSchema {
    let k = rng.random_range(1..=4);
    let mut kinds: Vec<ContextKind> = rand::seq::index::sample(rng, 4, k)
        .into_iter()
        .map(|i| ContextKind::ALL[i])
        .collect();
    kinds.sort_by_key(|k| ContextKind::ALL.iter().position(|x| x == k));
    ContextSchema::new(kinds).unwrap()
}

fn random_contexts(schema: &ContextSchema, n: usize, rng: &mut ChaCha8Rng) -> Vec<ContextTuple> {
    (0..n)
        .map(|_| {
            schema
                .cardinalities()
                .iter()
                .map(|&c| rng.random_range(0..c) as _)
                .collect()
        })
        .collect()
}

fn embedding_params(rng: &mut ChaCha8Rng) -> (EmbeddingSpec, ParameterStore) {
    let spec = EmbeddingSpec {
        d: rng.random_range(3..7),
        seq_len: rng.random_range(1..5),
        schema: random_schema(rng),
        no_context: false,
    };
    let mut s = ParameterStore::new();
    spec.init_params(&mut s, 6, rng).unwrap();
    // move amplitudes away from their structured initial values
    for name in s.names().map(str::to_string).collect::<Vec<_>>() {
        if name.ends_with(".amp") {
            let t = s.get_mut(&name).unwrap();
            t.values_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    (spec, s)
}

pub fn mercer_context_embedding() -> Result<(), String> {
    run("mercer_embed", 13, usize::MAX, |rng| {
        let (spec, s) = embedding_params(rng);
        let kind = spec.schema.kinds()[0];
        let values: Vec<usize> = (0..rng.random_range(1..5))
            .map(|_| rng.random_range(0..kind.cardinality()))
            .collect();
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let e = spec.mercer_embed(g, s, kind, &values).unwrap();
            reduce(g, e, seed)
        })
    })?;
    Ok(())
}

pub fn context_fusion() -> Result<(), String> {
    run("fuse_context", 14, MAX_COORDS, |rng| {
        let (spec, s) = embedding_params(rng);
        let ctx = random_contexts(&spec.schema, rng.random_range(1..4), rng);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let e = spec.fuse_context(g, s, &ctx).unwrap();
            reduce(g, e, seed)
        })
    })?;
    Ok(())
}

pub fn encoder_input() -> Result<(), String> {
    run("build_input", 15, MAX_COORDS, |rng| {
        let (spec, s) = embedding_params(rng);
        let items: Vec<usize> = (0..spec.seq_len).map(|_| rng.random_range(0..7)).collect();
        let ctx = random_contexts(&spec.schema, spec.seq_len, rng);
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = spec.build_input(g, s, &items, &ctx).unwrap();
            reduce(g, x, seed)
        })
    })?;
    Ok(())
}

fn self_attention(mode: AttentionMode, seed: u64) -> Result<(), String> {
    run("self-attention block", seed, MAX_COORDS, |rng| {
        let d = rng.random_range(2..4);
        let spec = EncoderSpec {
            d,
            blocks: rng.random_range(1..3),
            heads: rng.random_range(1..4),
            mode,
            dropout: 0.3,
            no_context: false,
        };
        let mut s = ParameterStore::new();
        spec.init_params(&mut s, rng).unwrap();
        // larger noise scale so the variance gradient is exercised
        for b in 0..spec.blocks {
            let lv = s.get_mut(&format!("block{b}.logvar")).unwrap();
            lv.values_mut()
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-3.0..0.0));
        }
        let len = rng.random_range(1..5);
        s.insert("x", randn(&[len, 2 * d], rng)).unwrap();
        let seed: u64 = rng.random();
        let noise: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let x = g.param(s, "x").unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(noise);
            let e = spec.encode(g, s, x, &mut r, Mode::Train).unwrap();
            let a = reduce(g, e.output, seed);
            let b = reduce(g, e.last_heads[0], seed ^ 7);
            g.add(a, b).unwrap()
        })
    })?;
    Ok(())
}

pub fn self_attention_literal() -> Result<(), String> {
    self_attention(AttentionMode::Literal, 16)
}

pub fn self_attention_compat() -> Result<(), String> {
    self_attention(AttentionMode::Compat, 17)
}

fn model_case(
    rng: &mut ChaCha8Rng,
    lambda: f64,
    mode: AttentionMode,
) -> (MojitoModel, TrainingExample) {
    let schema = random_schema(rng);
    let cfg = MojitoConfig {
        d: rng.random_range(2..4),
        seq_len: rng.random_range(2..5),
        blocks: rng.random_range(1..3),
        heads: rng.random_range(1..3),
        fism_items: rng.random_range(1..4),
        lambda,
        schema: schema.clone(),
        attention_mode: mode,
        seed: rng.random(),
        ..MojitoConfig::default()
    };
    let n_items = 8;
    let mut model = MojitoModel::new(cfg.clone(), 3, n_items).unwrap();
    // embeddings at a scale where the score is not vanishingly small
    for name in [ITEM_TABLE, USER_TABLE] {
        let t = model.store.get_mut(name).unwrap();
        let d = t.shape()[1];
        t.values_mut()[d..]
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-2.0..=2.0));
    }
    let len = cfg.seq_len;
    let n_targets = rng.random_range(1..=len);
    let pad = len - n_targets;
    let mut items = vec![0; pad];
    items.extend((0..n_targets).map(|_| rng.random_range(1..=n_items)));
    let mut contexts = random_contexts(&schema, len, rng);
    contexts
        .iter_mut()
        .take(pad)
        .for_each(|c| *c = schema.padding());
    let ex = TrainingExample {
        user: rng.random_range(1..=3),
        input: PaddedSequence { items, contexts },
        rows: (pad..len).collect(),
        positives: (0..n_targets)
            .map(|_| rng.random_range(1..=n_items))
            .collect(),
        positive_contexts: random_contexts(&schema, n_targets, rng),
        negatives: (0..n_targets)
            .map(|_| rng.random_range(1..=n_items))
            .collect(),
        fism: (0..cfg.fism_items)
            .map(|_| rng.random_range(1..=n_items))
            .collect(),
    };
    (model, ex)
}

pub fn short_term_score() -> Result<(), String> {
    run("short-term score", 18, MAX_COORDS, |rng| {
        let (model, ex) = model_case(rng, 1.0, AttentionMode::Literal);
        let seed: u64 = rng.random();
        let noise: u64 = rng.random();
        (model, move |g: &mut Graph<'_>, m: &MojitoModel| {
            let mut r = ChaCha8Rng::seed_from_u64(noise);
            let enc = m.forward(g, &ex.input, &mut r, Mode::Train).unwrap();
            let sc = m
                .short_term_paired(
                    g,
                    enc.output,
                    &ex.rows,
                    &ex.positives,
                    &ex.positive_contexts,
                )
                .unwrap();
            reduce(g, sc, seed)
        })
    })?;
    Ok(())
}

pub fn long_term_representation() -> Result<(), String> {
    run("fism_user_repr", 19, usize::MAX, |rng| {
        let (model, ex) = model_case(rng, 0.0, AttentionMode::Literal);
        let mut s = ParameterStore::new();
        for name in [ITEM_TABLE, USER_TABLE] {
            s.insert(name, model.store.get(name).unwrap().clone())
                .unwrap();
        }
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let lt = long_term::fism_user_repr(g, s, ex.user, &ex.fism, &ex.positives).unwrap();
            reduce(g, lt.repr, seed)
        })
    })?;
    Ok(())
}

pub fn long_term_score() -> Result<(), String> {
    run("long_term_scores", 20, usize::MAX, |rng| {
        let (model, ex) = model_case(rng, 0.0, AttentionMode::Literal);
        let mut s = ParameterStore::new();
        for name in [ITEM_TABLE, USER_TABLE] {
            s.insert(name, model.store.get(name).unwrap().clone())
                .unwrap();
        }
        let seed: u64 = rng.random();
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let (sc, _) =
                long_term::long_term_scores(g, s, ex.user, &ex.fism, &ex.negatives).unwrap();
            reduce(g, sc, seed)
        })
    })?;
    Ok(())
}

pub fn pair_loss() -> Result<(), String> {
    run("bce_pair_loss", 21, usize::MAX, |rng| {
        let n = rng.random_range(1..5);
        let s = store_of(vec![("p", randn(&[n, 1], rng)), ("q", randn(&[n, 1], rng))]);
        (s, move |g: &mut Graph<'_>, s: &ParameterStore| {
            let p = g.param(s, "p").unwrap();
            let q = g.param(s, "q").unwrap();
            bce_pair_loss(g, p, q)
        })
    })?;
    Ok(())
}

pub fn sequence_losses() -> Result<(), String> {
    for (kind, seed) in [(ScoreKind::Short, 22), (ScoreKind::Long, 23)] {
        run("sequence_loss", seed, MAX_COORDS, |rng| {
            let (model, ex) = model_case(rng, 0.5, AttentionMode::Literal);
            let noise: u64 = rng.random();
            (model, move |g: &mut Graph<'_>, m: &MojitoModel| {
                let mut r = ChaCha8Rng::seed_from_u64(noise);
                m.sequence_loss(g, &ex, kind, &mut r).unwrap()
            })
        })?;
    }
    Ok(())
}

pub fn combined_loss() -> Result<(), String> {
    for (mode, seed) in [(AttentionMode::Literal, 24), (AttentionMode::Compat, 25)] {
        run("combined_loss", seed, MAX_COORDS, |rng| {
            let lambda = rng.random_range(0.0..1.0);
            let (model, ex) = model_case(rng, lambda, mode);
            let noise: u64 = rng.random();
            (model, move |g: &mut Graph<'_>, m: &MojitoModel| {
                let mut r = ChaCha8Rng::seed_from_u64(noise);
                m.combined_loss(g, &ex, &mut r).unwrap()
            })
        })?;
    }
    Ok(())
}

pub type Check = (&'static str, fn() -> Result<(), String>);

/// Every check, in dependency order.
pub const SUITE: &[Check] = &[
    ("matmul", matmul),
    ("matmul_t", matmul_transposed),
    ("softmax", masked_softmax),
    ("sigmoid/exp/log", smooth_elementwise),
    ("relu", relu_away_from_kink),
    ("add/mul/broadcast", arithmetic_and_broadcasts),
    ("sum/row_sums/row_dots", reductions),
    ("concat/split", concat_and_slices),
    ("embedding lookup", gathers),
    ("gaussian_reparam", gaussian_reparameterization),
    ("layer_norm", layer_norm),
    ("mercer embedding", mercer_context_embedding),
    ("context fusion", context_fusion),
    ("encoder input", encoder_input),
    ("SAB literal", self_attention_literal),
    ("SAB compat", self_attention_compat),
    ("short-term score", short_term_score),
    ("long-term representation", long_term_representation),
    ("long-term score", long_term_score),
    ("pair loss", pair_loss),
    ("sequence losses", sequence_losses),
    ("combined loss", combined_loss),
];
