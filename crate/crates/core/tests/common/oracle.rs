//! Brute-force reference implementations and the comparisons against them.

use std::collections::HashMap;

use mojito::attention::{param_name, EncoderSpec, Mode};
use mojito::config::AttentionMode;
use mojito::data::{
    k_core_filter, leave_one_out_split, sample_eval_negatives, ContextSchema, Dataset, RawEvent,
    SplitDataset,
};
use mojito::eval::{
    evaluate, hr_at_k, ndcg_at_k, rank_of, user_rng, EvalCase, EvalSplit, Scorer, CUTOFF,
};
use mojito::tensor::{Graph, ParameterStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Alternating prune until nothing changes, recounting from scratch each round.
pub fn brute_k_core(events: &[RawEvent], k_user: usize, k_item: usize) -> Vec<RawEvent> {
    let mut cur = events.to_vec();
    loop {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        for e in &cur {
            *users.entry(&e.user_id).or_default() += 1;
            *items.entry(&e.item_id).or_default() += 1;
        }
        let next: Vec<RawEvent> = cur
            .iter()
            .filter(|e| users[e.user_id.as_str()] >= k_user && items[e.item_id.as_str()] >= k_item)
            .cloned()
            .collect();
        if next.len() == cur.len() {
            return next;
        }
        cur = next;
    }
}

pub fn random_events(rng: &mut ChaCha8Rng, max_users: usize, max_items: usize) -> Vec<RawEvent> {
    let nu = rng.random_range(1..=max_users);
    let ni = rng.random_range(1..=max_items);
    let n = rng.random_range(0..=nu * ni);
    (0..n)
        .map(|t| {
            RawEvent::new(
                format!("u{}", rng.random_range(0..nu)),
                format!("i{}", rng.random_range(0..ni)),
                t as i64,
            )
        })
        .collect()
}

/// `instances` random problems of at most 30 users and 30 items.
pub fn k_core_vs_brute_force(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 0..instances {
        let events = random_events(&mut rng, 30, 30);
        let (ku, ki) = (rng.random_range(1..6), rng.random_range(1..6));
        let fast = k_core_filter(&events, ku, ki)
            .map_err(|e| e.to_string())?
            .events;
        let slow = brute_k_core(&events, ku, ki);
        if fast != slow {
            return Err(format!(
                "instance {n} (k_user {ku}, k_item {ki}): {} vs {} events",
                fast.len(),
                slow.len()
            ));
        }
    }
    Ok(())
}

/// Full sort by descending score, ties to the smaller item id.
pub fn brute_rank(target: usize, candidates: &[usize], scores: &[f64]) -> usize {
    let mut order: Vec<(f64, usize)> = scores
        .iter()
        .copied()
        .zip(candidates.iter().copied())
        .collect();
    order.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    order.iter().position(|&(_, c)| c == target).unwrap() + 1
}

pub fn brute_hr(rank: usize) -> f64 {
    if rank <= CUTOFF {
        1.0
    } else {
        0.0
    }
}

pub fn brute_ndcg(rank: usize) -> f64 {
    if rank <= CUTOFF {
        std::f64::consts::LN_2 / ((rank + 1) as f64).ln()
    } else {
        0.0
    }
}

/// Coarse scores with many ties, a pure function of user and item.
pub struct TieScorer;

impl TieScorer {
    pub fn of(user: usize, item: usize) -> f64 {
        ((user * 31 + item * 17) % 5) as f64
    }
}

impl Scorer for TieScorer {
    fn score(
        &self,
        case: &EvalCase<'_>,
        candidates: &[usize],
        _: &mut ChaCha8Rng,
    ) -> mojito::Result<Vec<f64>> {
        Ok(candidates.iter().map(|&c| Self::of(case.user, c)).collect())
    }
}

fn small_split(rng: &mut ChaCha8Rng) -> SplitDataset {
    let users = rng.random_range(1..8);
    let items = rng.random_range(5..40);
    let mut events = Vec::new();
    for u in 0..users {
        for t in 0..rng.random_range(3..12) {
            events.push(RawEvent::new(
                format!("u{u}"),
                format!("i{}", rng.random_range(0..items)),
                t,
            ));
        }
    }
    leave_one_out_split(&Dataset::from_events(&events, ContextSchema::default()))
}

/// `rank_of`, the metric functions and `evaluate` against full sorting.
pub fn metrics_vs_brute_force(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 0..instances {
        let len = rng.random_range(1..60);
        let mut candidates: Vec<usize> = (1..=200).collect();
        candidates.shuffle(&mut rng);
        candidates.truncate(len);
        let scores: Vec<f64> = (0..len).map(|_| rng.random_range(0..4) as f64).collect();
        let target = candidates[rng.random_range(0..len)];
        let fast = rank_of(target, &candidates, &scores).map_err(|e| e.to_string())?;
        let slow = brute_rank(target, &candidates, &scores);
        if fast != slow {
            return Err(format!("instance {n}: rank {fast} vs {slow}"));
        }
        let hr = hr_at_k(Some(fast), CUTOFF).unwrap();
        let ndcg = ndcg_at_k(Some(fast), CUTOFF).unwrap();
        if hr != brute_hr(slow) || (ndcg - brute_ndcg(slow)).abs() > 1e-15 {
            return Err(format!("instance {n}: metrics at rank {fast}"));
        }

        let split = small_split(&mut rng);
        let negs = rng.random_range(1..30);
        let eval_seed: u64 = rng.random();
        let out = evaluate(&TieScorer, &split, EvalSplit::Test, eval_seed, negs)
            .map_err(|e| e.to_string())?;
        let (mut hr, mut ndcg) = (0.0, 0.0);
        for u in &split.users {
            let mut r = user_rng(eval_seed, u.user);
            let neg = sample_eval_negatives(&mut r, &u.history, split.n_items, negs);
            let mut cands = vec![u.test.item];
            cands.extend(neg.items);
            let scores: Vec<f64> = cands.iter().map(|&c| TieScorer::of(u.user, c)).collect();
            let rank = brute_rank(u.test.item, &cands, &scores);
            hr += brute_hr(rank);
            ndcg += brute_ndcg(rank);
        }
        let k = split.users.len() as f64;
        if (out.hr10 - hr / k).abs() > 1e-12 || (out.ndcg10 - ndcg / k).abs() > 1e-12 {
            return Err(format!(
                "instance {n}: evaluate gives HR {} NDCG {}, oracle {} {}",
                out.hr10,
                out.ndcg10,
                hr / k,
                ndcg / k
            ));
        }
    }
    Ok(())
}

fn mat(store: &ParameterStore, name: &str) -> (Vec<f64>, usize, usize) {
    let t = store.get(name).unwrap();
    (t.values().to_vec(), t.shape()[0], t.shape()[1])
}

/// `a[m×k] · b[k×n]`
fn mm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

/// One literal-mode block that attends on the item half only, written with
/// plain loops.
pub fn reference_block(
    store: &ParameterStore,
    b: usize,
    x: &[f64],
    len: usize,
    d: usize,
    heads: usize,
) -> Vec<f64> {
    let w = 2 * d;
    let item: Vec<f64> = (0..len)
        .flat_map(|r| x[r * w..r * w + d].to_vec())
        .collect();
    let (wq, _, _) = mat(store, &param_name(b, "wq_it"));
    let (wk, _, _) = mat(store, &param_name(b, "wk_it"));
    let q = mm(&item, &wq, len, d, d);
    let k = mm(&item, &wk, len, d, d);
    let (wv, _, _) = mat(store, &param_name(b, "wv"));
    let v = mm(x, &wv, len, w, w);
    let mut head = vec![0.0; len * w];
    for t in 0..len {
        let logits: Vec<f64> = (0..=t)
            .map(|s| (0..d).map(|c| q[t * d + c] * k[s * d + c]).sum::<f64>() / (d as f64).sqrt())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (s, l) in logits.iter().enumerate() {
            let a = (l - max).exp() / z;
            for c in 0..w {
                head[t * w + c] += a * v[s * w + c];
            }
        }
    }
    let mut cat = Vec::with_capacity(len * w * heads);
    for t in 0..len {
        for _ in 0..heads {
            cat.extend_from_slice(&head[t * w..(t + 1) * w]);
        }
    }
    let (wo, _, _) = mat(store, &param_name(b, "wo"));
    let sal = mm(&cat, &wo, len, heads * w, w);
    let (w1, _, _) = mat(store, &param_name(b, "w1"));
    let (b1, _, _) = mat(store, &param_name(b, "b1"));
    let (w2, _, _) = mat(store, &param_name(b, "w2"));
    let (b2, _, _) = mat(store, &param_name(b, "b2"));
    let mut h = mm(&sal, &w1, len, w, w);
    for t in 0..len {
        for c in 0..w {
            h[t * w + c] = (h[t * w + c] + b1[c]).max(0.0);
        }
    }
    let mut out = mm(&h, &w2, len, w, w);
    for t in 0..len {
        for c in 0..w {
            out[t * w + c] += b2[c];
        }
    }
    out
}

/// Encoder with every head pinned to the item component and zero noise,
/// against [`reference_block`]. Returns the largest absolute difference.
pub fn degenerate_mixture_vs_reference(instances: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..=4);
        let len = rng.random_range(1..=8);
        let spec = EncoderSpec {
            d,
            blocks: rng.random_range(1..=2),
            heads: rng.random_range(1..=3),
            mode: AttentionMode::Literal,
            dropout: 0.0,
            no_context: false,
        };
        let mut store = ParameterStore::new();
        spec.init_params(&mut store, &mut rng)
            .map_err(|e| e.to_string())?;
        for b in 0..spec.blocks {
            // softmax([0, -1e4]) is exactly [1, 0]; exp(-5e3) is exactly 0
            let mix = store.get_mut(&param_name(b, "mix")).unwrap();
            mix.values_mut().chunks_mut(2).for_each(|r| {
                r[0] = 0.0;
                r[1] = -1e4;
            });
            let lv = store.get_mut(&param_name(b, "logvar")).unwrap();
            lv.values_mut().iter_mut().for_each(|v| *v = -1e4);
        }
        let xv: Vec<f64> = (0..len * 2 * d)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let x = Tensor::new(vec![len, 2 * d], xv.clone()).unwrap();
        let mut g = Graph::new();
        let xg = g.constant(&x).unwrap();
        let enc = spec
            .encode(&mut g, &store, xg, &mut rng, Mode::Train)
            .map_err(|e| e.to_string())?;
        let got = g.value(enc.output).to_vec();
        let mut want = xv;
        for b in 0..spec.blocks {
            want = reference_block(&store, b, &want, len, d, spec.heads);
        }
        for (a, b) in got.iter().zip(&want) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst < 1e-10 {
        Ok(worst)
    } else {
        Err(format!("max abs diff {worst:e}"))
    }
}
