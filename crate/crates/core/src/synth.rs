//! Synthetic event streams with known structure: context-driven item pools
//! or a deterministic item-to-item successor.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ContextKind, Dataset, RawEvent};
use crate::error::{Error, Result};
use crate::eval::{EvalCase, Scorer};

const DAY: i64 = 86_400;

/// Monday 2021-01-04 00:00 UTC.
pub const DEFAULT_START: i64 = 1_609_718_400;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthMode {
    /// Item drawn from the pool of the current driver context value.
    Context,
    /// Item is the fixed successor of the previous item.
    Markov,
}

/// How consecutive timestamps of a user are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// `stride` plus a uniform extra gap in `0..=jitter`.
    Stride,
    /// Every event lands at a uniformly random time of day. A morning event
    /// is followed by an afternoon event on the same day, an afternoon event
    /// by an event on the next day.
    HalfDay,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub events_per_user: usize,
    pub driver: ContextKind,
    /// Context value -> items (1-based). Empty means an even contiguous
    /// partition of all items over the driver's values.
    pub pools: BTreeMap<usize, Vec<usize>>,
    pub noise: f64,
    pub seed: u64,
    pub mode: SynthMode,
    pub timing: Timing,
    pub start: i64,
    /// Seconds between consecutive events of a user.
    pub stride: i64,
    /// Extra gap drawn uniformly from `0..=jitter` seconds per event.
    pub jitter: i64,
    /// Each user's first event is shifted by `0..offset` seconds.
    pub offset: i64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 200,
            events_per_user: 100,
            driver: ContextKind::DayOfWeek,
            pools: BTreeMap::new(),
            noise: 0.1,
            seed: 0,
            mode: SynthMode::Context,
            timing: Timing::Stride,
            start: DEFAULT_START,
            stride: 6 * 3600,
            jitter: 0,
            offset: 0,
        }
    }
}

pub fn item_name(item: usize) -> String {
    format!("i{item}")
}

pub fn user_name(user: usize) -> String {
    format!("u{user}")
}

impl SyntheticSpec {
    /// Parses `key=value` lines; every bad key is reported.
    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        let mut errors = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, raw)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key=value", n + 1));
                continue;
            };
            let (key, raw) = (key.trim(), raw.trim());
            let bad =
                |errors: &mut Vec<String>| errors.push(format!("{key}: cannot parse {raw:?}"));
            macro_rules! set {
                ($field:expr) => {
                    match raw.parse() {
                        Ok(v) => $field = v,
                        Err(_) => bad(&mut errors),
                    }
                };
            }
            match key {
                "n_users" => set!(s.n_users),
                "n_items" => set!(s.n_items),
                "events_per_user" => set!(s.events_per_user),
                "noise" => set!(s.noise),
                "seed" => set!(s.seed),
                "start" => set!(s.start),
                "stride" => set!(s.stride),
                "jitter" => set!(s.jitter),
                "offset" => set!(s.offset),
                "driver" => match raw.parse() {
                    Ok(k) => s.driver = k,
                    Err(e) => errors.push(format!("driver: {e}")),
                },
                "mode" => match raw {
                    "context" => s.mode = SynthMode::Context,
                    "markov" => s.mode = SynthMode::Markov,
                    _ => errors.push(format!("mode must be context or markov, got {raw:?}")),
                },
                "timing" => match raw {
                    "stride" => s.timing = Timing::Stride,
                    "halfday" => s.timing = Timing::HalfDay,
                    _ => errors.push(format!("timing must be stride or halfday, got {raw:?}")),
                },
                k if k.starts_with("pool.") => {
                    let value = k["pool.".len()..].parse::<usize>();
                    let items: std::result::Result<Vec<usize>, _> =
                        raw.split(',').map(|t| t.trim().parse::<usize>()).collect();
                    match (value, items) {
                        (Ok(v), Ok(items)) => {
                            s.pools.insert(v, items);
                        }
                        _ => bad(&mut errors),
                    }
                }
                _ => errors.push(format!("{key}: unknown key")),
            }
        }
        errors.extend(s.problems());
        if errors.is_empty() {
            Ok(s)
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_users == 0 {
            out.push("n_users must be >= 1".into());
        }
        if self.n_items == 0 {
            out.push("n_items must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.noise) {
            out.push("noise must be in [0,1]".into());
        }
        if self.stride <= 0 {
            out.push("stride must be positive".into());
        }
        if self.jitter < 0 || self.offset < 0 {
            out.push("jitter and offset must be >= 0".into());
        }
        let period = self.driver.cardinality();
        if self.mode == SynthMode::Context && self.pools.is_empty() && self.n_items < period {
            out.push(format!(
                "n_items must be >= {period} to partition over {}",
                self.driver
            ));
        }
        let mut owner = HashMap::new();
        for (&v, items) in &self.pools {
            if v >= period {
                out.push(format!("pool.{v}: {} has values 0..{period}", self.driver));
            }
            if items.is_empty() {
                out.push(format!("pool.{v}: empty pool"));
            }
            for &i in items {
                if i == 0 || i > self.n_items {
                    out.push(format!("pool.{v}: item {i} outside 1..={}", self.n_items));
                } else if let Some(w) = owner.insert(i, v) {
                    out.push(format!("pool.{v}: item {i} already in pool.{w}"));
                }
            }
        }
        if self.mode == SynthMode::Context && !self.pools.is_empty() {
            for v in 0..period {
                if !self.pools.contains_key(&v) {
                    out.push(format!("pool.{v}: missing"));
                }
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mode = match self.mode {
            SynthMode::Context => "context",
            SynthMode::Markov => "markov",
        };
        for (k, v) in [
            ("n_users", self.n_users.to_string()),
            ("n_items", self.n_items.to_string()),
            ("events_per_user", self.events_per_user.to_string()),
            ("driver", self.driver.to_string()),
            ("noise", format!("{:?}", self.noise)),
            ("seed", self.seed.to_string()),
            ("mode", mode.into()),
            (
                "timing",
                match self.timing {
                    Timing::Stride => "stride",
                    Timing::HalfDay => "halfday",
                }
                .into(),
            ),
            ("start", self.start.to_string()),
            ("stride", self.stride.to_string()),
            ("jitter", self.jitter.to_string()),
            ("offset", self.offset.to_string()),
        ] {
            writeln!(out, "{k}={v}").expect("write");
        }
        for (v, items) in &self.pools {
            let list: Vec<String> = items.iter().map(|i| i.to_string()).collect();
            writeln!(out, "pool.{v}={}", list.join(",")).expect("write");
        }
        out
    }

    /// Explicit pools, or the default contiguous partition.
    pub fn resolved_pools(&self) -> BTreeMap<usize, Vec<usize>> {
        if !self.pools.is_empty() {
            return self.pools.clone();
        }
        let p = self.driver.cardinality();
        (0..p)
            .map(|v| {
                let lo = v * self.n_items / p;
                let hi = (v + 1) * self.n_items / p;
                (v, (lo + 1..=hi).collect())
            })
            .collect()
    }

    fn user_rng(&self, user: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(user as u64);
        rng
    }

    fn timestamps<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<i64> {
        let mut t = self.start
            + if self.offset > 0 {
                rng.random_range(0..self.offset)
            } else {
                0
            };
        let mut out = Vec::with_capacity(self.events_per_user);
        for _ in 0..self.events_per_user {
            out.push(t);
            t = match self.timing {
                Timing::Stride => {
                    t + self.stride
                        + if self.jitter > 0 {
                            rng.random_range(0..=self.jitter)
                        } else {
                            0
                        }
                }
                Timing::HalfDay => {
                    let day = t.div_euclid(DAY);
                    if t.rem_euclid(DAY) < DAY / 2 {
                        day * DAY + DAY / 2 + rng.random_range(0..DAY / 2)
                    } else {
                        (day + 1) * DAY + rng.random_range(0..DAY)
                    }
                }
            };
        }
        out
    }

    /// Single-cycle successor map over `1..=n_items` (index 0 unused).
    pub fn successor(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (1..=self.n_items).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed));
        let mut succ = vec![0; self.n_items + 1];
        for k in 0..order.len() {
            succ[order[k]] = order[(k + 1) % order.len()];
        }
        succ
    }
}

/// Generates events for the spec's mode.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<RawEvent>> {
    let problems = spec.problems();
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    match spec.mode {
        SynthMode::Context => Ok(generate_context(spec)),
        SynthMode::Markov => Ok(markov_variant(spec)),
    }
}

fn generate_context(spec: &SyntheticSpec) -> Vec<RawEvent> {
    let pools = spec.resolved_pools();
    let mut out = Vec::with_capacity(spec.n_users * spec.events_per_user);
    for u in 1..=spec.n_users {
        let mut rng = spec.user_rng(u);
        for ts in spec.timestamps(&mut rng) {
            let pool = &pools[&spec.driver.value(ts)];
            let item = if rng.random::<f64>() < spec.noise {
                rng.random_range(1..=spec.n_items)
            } else {
                pool[rng.random_range(0..pool.len())]
            };
            out.push(RawEvent::new(user_name(u), item_name(item), ts));
        }
    }
    out
}

/// Next item is the successor of the previous one, replaced by a uniform
/// item with probability `noise`.
pub fn markov_variant(spec: &SyntheticSpec) -> Vec<RawEvent> {
    let succ = spec.successor();
    let mut out = Vec::with_capacity(spec.n_users * spec.events_per_user);
    for u in 1..=spec.n_users {
        let mut rng = spec.user_rng(u);
        let mut item = rng.random_range(1..=spec.n_items);
        for (k, ts) in spec.timestamps(&mut rng).into_iter().enumerate() {
            if k > 0 {
                item = if rng.random::<f64>() < spec.noise {
                    rng.random_range(1..=spec.n_items)
                } else {
                    succ[item]
                };
            }
            out.push(RawEvent::new(user_name(u), item_name(item), ts));
        }
    }
    out
}

/// Scores a candidate by its generating probability given the target
/// timestamp: the context-aware Bayes scorer for pool data.
#[derive(Debug, Clone)]
pub struct PoolOracle {
    driver: ContextKind,
    noise: f64,
    n_items: usize,
    /// dataset item index -> pool value
    pool_of: HashMap<usize, usize>,
    pool_size: HashMap<usize, usize>,
}

impl PoolOracle {
    pub fn new(spec: &SyntheticSpec, dataset: &Dataset) -> Self {
        let mut by_name = HashMap::new();
        let mut pool_size = HashMap::new();
        for (v, items) in spec.resolved_pools() {
            pool_size.insert(v, items.len());
            for i in items {
                by_name.insert(item_name(i), v);
            }
        }
        let pool_of = dataset
            .item_ids
            .iter()
            .enumerate()
            .filter_map(|(k, name)| by_name.get(name).map(|&v| (k + 1, v)))
            .collect();
        Self {
            driver: spec.driver,
            noise: spec.noise,
            n_items: spec.n_items,
            pool_of,
            pool_size,
        }
    }
}

impl Scorer for PoolOracle {
    fn score(
        &self,
        case: &EvalCase<'_>,
        candidates: &[usize],
        _rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let v = self.driver.value(case.target.timestamp);
        let in_pool = (1.0 - self.noise) / self.pool_size[&v] as f64;
        let base = self.noise / self.n_items as f64;
        Ok(candidates
            .iter()
            .map(|c| {
                base + if self.pool_of.get(c) == Some(&v) {
                    in_pool
                } else {
                    0.0
                }
            })
            .collect())
    }
}
