use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::context::{ContextSchema, ContextTuple};
use super::events::RawEvent;
use crate::error::{io_err, Error, Result};

/// Reserved item index for padded positions.
pub const PADDING_ITEM: usize = 0;

/// An indexed interaction with its calendar context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub item: usize,
    pub timestamp: i64,
    pub context: ContextTuple,
}

/// Sorted, deduplicated item indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemSet(Vec<usize>);

impl ItemSet {
    pub fn from_items(items: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = items.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn contains(&self, item: usize) -> bool {
        self.0.binary_search(&item).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Indexed interactions. Users and items are numbered from 1 in order of
/// first appearance in the input; item 0 is padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: ContextSchema,
    /// `user_ids[u - 1]` is the external id of user `u`.
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// `sequences[u - 1]`: events of user `u`, sorted by timestamp (stable).
    pub sequences: Vec<Vec<Event>>,
}

impl Dataset {
    pub fn from_events(events: &[RawEvent], schema: ContextSchema) -> Self {
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut sequences: Vec<Vec<Event>> = Vec::new();
        for e in events {
            let u = *users.entry(&e.user_id).or_insert_with(|| {
                user_ids.push(e.user_id.clone());
                sequences.push(Vec::new());
                user_ids.len()
            });
            let i = *items.entry(&e.item_id).or_insert_with(|| {
                item_ids.push(e.item_id.clone());
                item_ids.len()
            });
            sequences[u - 1].push(Event {
                item: i,
                timestamp: e.timestamp,
                context: schema.derive(e.timestamp),
            });
        }
        for s in &mut sequences {
            s.sort_by_key(|e| e.timestamp);
        }
        Self {
            schema,
            user_ids,
            item_ids,
            sequences,
        }
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    pub fn n_events(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// Content hash over schema, indices and sequences.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.schema.to_string().as_bytes());
        h.update(self.items_text().as_bytes());
        h.update(self.users_text().as_bytes());
        h.update(self.sequences_text().as_bytes());
        hex(&h.finalize())
    }

    fn items_text(&self) -> String {
        index_text(&self.item_ids)
    }

    fn users_text(&self) -> String {
        index_text(&self.user_ids)
    }

    fn sequences_text(&self) -> String {
        let mut out = String::new();
        for (u, seq) in self.sequences.iter().enumerate() {
            write!(out, "{}\t", u + 1).expect("write");
            for (k, e) in seq.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                write!(out, "{}:{}", e.item, e.timestamp).expect("write");
            }
            out.push('\n');
        }
        out
    }

    /// Writes `items.tsv`, `users.tsv`, `sequences.tsv` and `stats.txt`.
    /// `stats` lines are appended to the stats file after the schema line.
    pub fn save(&self, dir: &Path, stats: &[(String, String)]) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_err(p))
        };
        put("items.tsv", self.items_text())?;
        put("users.tsv", self.users_text())?;
        put("sequences.tsv", self.sequences_text())?;
        let mut s = format!("schema={}\n", self.schema);
        for (k, v) in stats {
            writeln!(s, "{k}={v}").expect("write");
        }
        put("stats.txt", s)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(io_err(p))
        };
        let stats = parse_stats(&read("stats.txt")?);
        let schema: ContextSchema = stats
            .get("schema")
            .ok_or_else(|| Error::Format("stats.txt has no schema line".into()))?
            .parse()?;
        let item_ids = parse_index(&read("items.tsv")?, "items.tsv")?;
        let user_ids = parse_index(&read("users.tsv")?, "users.tsv")?;
        let mut sequences = vec![Vec::new(); user_ids.len()];
        for (n, line) in read("sequences.tsv")?.lines().enumerate() {
            let bad = || Error::Format(format!("sequences.tsv line {}: {line:?}", n + 1));
            let (u, rest) = line.split_once('\t').ok_or_else(bad)?;
            let u: usize = u.parse().map_err(|_| bad())?;
            if u == 0 || u > user_ids.len() {
                return Err(bad());
            }
            for tok in rest.split(',').filter(|t| !t.is_empty()) {
                let (i, ts) = tok.split_once(':').ok_or_else(bad)?;
                let item: usize = i.parse().map_err(|_| bad())?;
                let timestamp: i64 = ts.parse().map_err(|_| bad())?;
                if item == PADDING_ITEM || item > item_ids.len() || timestamp < 0 {
                    return Err(bad());
                }
                sequences[u - 1].push(Event {
                    item,
                    timestamp,
                    context: schema.derive(timestamp),
                });
            }
        }
        Ok(Self {
            schema,
            user_ids,
            item_ids,
            sequences,
        })
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").expect("write");
        s
    })
}

fn index_text(ids: &[String]) -> String {
    let mut out = String::new();
    for (k, id) in ids.iter().enumerate() {
        writeln!(out, "{}\t{id}", k + 1).expect("write");
    }
    out
}

fn parse_index(text: &str, name: &str) -> Result<Vec<String>> {
    text.lines()
        .enumerate()
        .map(|(k, line)| {
            let (idx, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{name} line {}: {line:?}", k + 1)))?;
            if idx.parse::<usize>().ok() != Some(k + 1) {
                return Err(Error::Format(format!(
                    "{name} line {}: index out of order",
                    k + 1
                )));
            }
            Ok(id.to_string())
        })
        .collect()
}

pub fn parse_stats(text: &str) -> HashMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

/// Fixed-length model input: right-aligned, left-padded with item 0 and the
/// all-zeros context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaddedSequence {
    pub items: Vec<usize>,
    pub contexts: Vec<ContextTuple>,
}

impl PaddedSequence {
    /// Keeps the most recent `len` events.
    pub fn from_events(events: &[Event], len: usize, schema: &ContextSchema) -> Self {
        let keep = &events[events.len().saturating_sub(len)..];
        let pad = len - keep.len();
        let mut items = vec![PADDING_ITEM; pad];
        let mut contexts = vec![schema.padding(); pad];
        for e in keep {
            items.push(e.item);
            contexts.push(e.context.clone());
        }
        Self { items, contexts }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Number of leading padding positions.
    pub fn padding_len(&self) -> usize {
        self.items
            .iter()
            .take_while(|&&i| i == PADDING_ITEM)
            .count()
    }
}

/// Per-user leave-one-out partition.
#[derive(Debug, Clone, PartialEq)]
pub struct UserSplit {
    pub user: usize,
    pub train: Vec<Event>,
    pub validation: Event,
    pub test: Event,
    /// Every item the user interacted with.
    pub history: ItemSet,
}

impl UserSplit {
    /// Events preceding the validation target.
    pub fn validation_input(&self) -> &[Event] {
        &self.train
    }

    /// Events preceding the test target (train plus validation).
    pub fn test_input(&self) -> Vec<Event> {
        let mut v = self.train.clone();
        v.push(self.validation.clone());
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub schema: ContextSchema,
    pub n_users: usize,
    pub n_items: usize,
    pub users: Vec<UserSplit>,
    /// Users dropped for having fewer than three events.
    pub dropped_users: usize,
}

/// Holds out the last event for test and the penultimate for validation.
pub fn leave_one_out_split(dataset: &Dataset) -> SplitDataset {
    let mut users = Vec::with_capacity(dataset.n_users());
    let mut dropped = 0;
    for (k, seq) in dataset.sequences.iter().enumerate() {
        let n = seq.len();
        if n < 3 {
            dropped += 1;
            continue;
        }
        users.push(UserSplit {
            user: k + 1,
            train: seq[..n - 2].to_vec(),
            validation: seq[n - 2].clone(),
            test: seq[n - 1].clone(),
            history: ItemSet::from_items(seq.iter().map(|e| e.item)),
        });
    }
    if dropped > 0 {
        log::warn!("leave-one-out: dropped {dropped} users with fewer than 3 events");
    }
    SplitDataset {
        schema: dataset.schema.clone(),
        n_users: dataset.n_users(),
        n_items: dataset.n_items(),
        users,
        dropped_users: dropped,
    }
}

/// Padded training windows, one per user with at least one train event.
/// Returns the sequences and the number of users excluded.
pub fn build_sequences(
    split: &SplitDataset,
    len: usize,
) -> Result<(Vec<(usize, PaddedSequence)>, usize)> {
    if len < 2 {
        return Err(Error::Domain(format!(
            "sequence length must be >= 2, got {len}"
        )));
    }
    let mut out = Vec::with_capacity(split.users.len());
    let mut excluded = 0;
    for u in &split.users {
        if u.train.is_empty() {
            excluded += 1;
            continue;
        }
        out.push((
            u.user,
            PaddedSequence::from_events(&u.train, len, &split.schema),
        ));
    }
    if excluded > 0 {
        log::warn!("build_sequences: excluded {excluded} users without train events");
    }
    Ok((out, excluded))
}
