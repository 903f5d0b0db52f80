//! Leave-one-out ranking evaluation with sampled negatives, and the
//! head-redundancy diagnostic.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::Mode;
use crate::data::{
    sample_eval_negatives, sample_fism_items, Event, ItemSet, PaddedSequence, SplitDataset,
    UserSplit,
};
use crate::error::{Error, Result};
use crate::model::{distinct_items, MojitoModel};
use crate::tensor::Graph;

pub const CUTOFF: usize = 10;

/// `1/log2(rank+1)` inside the cutoff, 0 outside or on a miss (`None`).
pub fn ndcg_at_k(rank: Option<usize>, k: usize) -> Result<f64> {
    match rank {
        Some(0) => Err(Error::Contract("ranks are 1-based".into())),
        Some(r) if r <= k => Ok(1.0 / ((r + 1) as f64).log2()),
        _ => Ok(0.0),
    }
}

pub fn hr_at_k(rank: Option<usize>, k: usize) -> Result<f64> {
    match rank {
        Some(0) => Err(Error::Contract("ranks are 1-based".into())),
        Some(r) if r <= k => Ok(1.0),
        _ => Ok(0.0),
    }
}

/// 1-based rank of `target` among `candidates` by descending score, ties
/// going to the smaller item id.
pub fn rank_of(target: usize, candidates: &[usize], scores: &[f64]) -> Result<usize> {
    let pos = candidates
        .iter()
        .position(|&c| c == target)
        .ok_or_else(|| Error::Contract(format!("target {target} is not a candidate")))?;
    let ts = scores[pos];
    let ahead = candidates
        .iter()
        .zip(scores)
        .filter(|&(&c, &s)| s > ts || (s == ts && c < target))
        .count();
    Ok(ahead + 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    /// Penultimate event, predicted from the train events.
    Validation,
    /// Last event, predicted from train plus validation events.
    Test,
    /// Last train event, predicted from the earlier train events.
    TrainLast,
}

impl std::str::FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "val" | "validation" => Ok(Self::Validation),
            "test" => Ok(Self::Test),
            "train" | "train_last" => Ok(Self::TrainLast),
            other => Err(Error::Format(format!(
                "unknown split {other:?} (val, test, train)"
            ))),
        }
    }
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Validation => "val",
            Self::Test => "test",
            Self::TrainLast => "train",
        }
    }
}

/// One user's prediction problem.
#[derive(Debug, Clone)]
pub struct EvalCase<'a> {
    pub user: usize,
    pub preceding: Vec<Event>,
    pub target: &'a Event,
    pub history: &'a ItemSet,
}

impl<'a> EvalCase<'a> {
    pub fn new(u: &'a UserSplit, split: EvalSplit) -> Option<Self> {
        let (preceding, target) = match split {
            EvalSplit::Validation => (u.train.clone(), &u.validation),
            EvalSplit::Test => (u.test_input(), &u.test),
            EvalSplit::TrainLast => {
                let (last, rest) = u.train.split_last()?;
                (rest.to_vec(), last)
            }
        };
        if preceding.is_empty() {
            return None;
        }
        Some(Self {
            user: u.user,
            preceding,
            target,
            history: &u.history,
        })
    }
}

/// Anything that assigns relevance scores to candidate items.
pub trait Scorer: Sync {
    fn score(
        &self,
        case: &EvalCase<'_>,
        candidates: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>>;
}

impl Scorer for MojitoModel {
    fn score(
        &self,
        case: &EvalCase<'_>,
        candidates: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let fism = sample_fism_items(
            rng,
            &distinct_items(&case.preceding),
            self.config.fism_items,
        )?;
        self.score_candidates(
            case.user,
            &case.preceding,
            &case.target.context,
            &fism,
            candidates,
        )
    }
}

/// Scores candidates by training-set interaction count.
#[derive(Debug, Clone)]
pub struct PopularityScorer {
    counts: HashMap<usize, usize>,
}

impl PopularityScorer {
    pub fn fit(split: &SplitDataset) -> Self {
        let mut counts = HashMap::new();
        for e in split.users.iter().flat_map(|u| &u.train) {
            *counts.entry(e.item).or_insert(0) += 1;
        }
        Self { counts }
    }

    pub fn count(&self, item: usize) -> usize {
        self.counts.get(&item).copied().unwrap_or(0)
    }
}

impl Scorer for PopularityScorer {
    fn score(
        &self,
        _case: &EvalCase<'_>,
        candidates: &[usize],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|&c| self.count(c) as f64).collect())
    }
}

/// Independent uniform scores.
#[derive(Debug, Clone, Copy, Default)]
pub struct RandomScorer;

impl Scorer for RandomScorer {
    fn score(
        &self,
        _case: &EvalCase<'_>,
        candidates: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        Ok(candidates.iter().map(|_| rng.random::<f64>()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub hr10: f64,
    pub ndcg10: f64,
    /// `(user, rank)` in user order.
    pub ranks: Vec<(usize, usize)>,
    /// Users whose negative pool had fewer than the requested items.
    pub exhausted: usize,
}

impl EvalOutcome {
    pub fn n_users(&self) -> usize {
        self.ranks.len()
    }
}

/// Thread count for evaluation: `MOJITO_THREADS` if set, else rayon's default.
pub fn eval_threads() -> usize {
    std::env::var("MOJITO_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Runs `f` on a pool capped by [`eval_threads`].
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads())
        .build()
    {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Per-user generator, independent of evaluation order.
pub fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64);
    rng
}

/// Ranks each user's target among itself plus `n_negatives` sampled items
/// the user never interacted with.
pub fn evaluate<S: Scorer + ?Sized>(
    scorer: &S,
    split: &SplitDataset,
    which: EvalSplit,
    seed: u64,
    n_negatives: usize,
) -> Result<EvalOutcome> {
    let per_user = with_pool(|| {
        split
            .users
            .par_iter()
            .filter_map(|u| EvalCase::new(u, which))
            .map(|case| {
                let mut rng = user_rng(seed, case.user);
                let neg = sample_eval_negatives(&mut rng, case.history, split.n_items, n_negatives);
                let mut candidates = Vec::with_capacity(neg.items.len() + 1);
                candidates.push(case.target.item);
                candidates.extend(neg.items);
                let scores = scorer.score(&case, &candidates, &mut rng)?;
                if scores.len() != candidates.len() {
                    return Err(Error::Contract(
                        "scorer returned the wrong number of scores".into(),
                    ));
                }
                if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "score {s} for user {}",
                        case.user
                    )));
                }
                Ok((
                    case.user,
                    rank_of(case.target.item, &candidates, &scores)?,
                    neg.exhausted,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if per_user.is_empty() {
        return Err(Error::Domain(format!(
            "no users to evaluate on the {} split",
            which.as_str()
        )));
    }
    let mut hr = 0.0;
    let mut ndcg = 0.0;
    for &(_, r, _) in &per_user {
        hr += hr_at_k(Some(r), CUTOFF)?;
        ndcg += ndcg_at_k(Some(r), CUTOFF)?;
    }
    let n = per_user.len() as f64;
    let exhausted = per_user.iter().filter(|p| p.2).count();
    if exhausted > 0 {
        log::info!("{exhausted} users had fewer than {n_negatives} eligible negatives");
    }
    Ok(EvalOutcome {
        hr10: hr / n,
        ndcg10: ndcg / n,
        ranks: per_user.into_iter().map(|(u, r, _)| (u, r)).collect(),
        exhausted,
    })
}

/// Serialized evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub hr10: f64,
    pub ndcg10: f64,
    pub head_redundancy_mean: Option<f64>,
    pub head_redundancy_std: Option<f64>,
    pub n_users: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Pairwise distances between head outputs, each divided by
/// `sqrt(vector length)`.
pub fn pairwise_head_distances(heads: &[Vec<f64>]) -> Result<Vec<f64>> {
    if heads.len() < 2 {
        return Err(Error::Contract(
            "head redundancy needs at least two heads".into(),
        ));
    }
    let mut out = Vec::new();
    for a in 0..heads.len() {
        for b in a + 1..heads.len() {
            let d2: f64 = heads[a]
                .iter()
                .zip(&heads[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum();
            out.push(d2.sqrt() / (heads[a].len() as f64).sqrt());
        }
    }
    Ok(out)
}

/// Mean and std of normalized pairwise L2 distances between last-block head
/// outputs, over all head pairs and probe sequences (inference mode).
pub fn head_redundancy(model: &MojitoModel, probes: &[PaddedSequence]) -> Result<(f64, f64)> {
    if model.config.heads < 2 {
        return Err(Error::Contract("head redundancy needs H >= 2".into()));
    }
    if probes.is_empty() {
        return Err(Error::Contract(
            "head redundancy needs at least one probe".into(),
        ));
    }
    let mut all = Vec::new();
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    for p in probes {
        let mut g = Graph::new();
        let enc = model.forward(&mut g, p, &mut unused, Mode::Inference)?;
        let heads: Vec<Vec<f64>> = enc
            .last_heads
            .iter()
            .map(|&h| g.value(h).to_vec())
            .collect();
        all.extend(pairwise_head_distances(&heads)?);
    }
    Ok(mean_std(&all))
}

pub fn format_redundancy(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Test-input probes for `n` users drawn with `seed` (all users if fewer).
pub fn probe_sequences(
    model: &MojitoModel,
    split: &SplitDataset,
    n: usize,
    seed: u64,
) -> Vec<PaddedSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<&UserSplit> = if split.users.len() <= n {
        split.users.iter().collect()
    } else {
        rand::seq::index::sample(&mut rng, split.users.len(), n)
            .into_iter()
            .map(|i| &split.users[i])
            .collect()
    };
    picked
        .into_iter()
        .map(|u| {
            PaddedSequence::from_events(&u.test_input(), model.config.seq_len, &model.config.schema)
        })
        .collect()
}
