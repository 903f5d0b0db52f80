//! The full recommender: embeddings, encoder, long-term module, scores and
//! per-sequence losses.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{Encoded, EncoderSpec, Mode};
use crate::config::MojitoConfig;
use crate::data::{sample_fism_items, ContextTuple, Event, ItemSet, PaddedSequence, PADDING_ITEM};
use crate::embedding::{EmbeddingSpec, ITEM_TABLE};
use crate::error::{Error, Result};
use crate::long_term::{self, long_term_scores};
use crate::tensor::{Checkpoint, Graph, ParamGrads, ParameterStore, Var};

/// Which relevance score a loss term is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreKind {
    Short,
    Long,
}

/// One training window: inputs left-padded to `L`, one target per
/// non-padding input position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub user: usize,
    pub input: PaddedSequence,
    /// Row index into the encoder output for each target.
    pub rows: Vec<usize>,
    pub positives: Vec<usize>,
    pub positive_contexts: Vec<ContextTuple>,
    pub negatives: Vec<usize>,
    /// Sampled history items for the long-term term.
    pub fism: Vec<usize>,
}

impl TrainingExample {
    /// Builds the example from a user's training events (most recent `L+1`
    /// are used). Returns `None` when there is no target.
    pub fn from_events<R: Rng + ?Sized>(
        user: usize,
        train: &[Event],
        history: &ItemSet,
        config: &MojitoConfig,
        n_items: usize,
        rng: &mut R,
    ) -> Result<Option<Self>> {
        let len = config.seq_len;
        if train.len() < 2 {
            return Ok(None);
        }
        let window = &train[train.len().saturating_sub(len + 1)..];
        let inputs = &window[..window.len() - 1];
        let targets = &window[1..];
        let input = PaddedSequence::from_events(inputs, len, &config.schema);
        let first = len - inputs.len();
        let rows: Vec<usize> = (first..len).collect();
        let positives = targets.iter().map(|e| e.item).collect();
        let positive_contexts = targets.iter().map(|e| e.context.clone()).collect();
        let negatives = targets
            .iter()
            .map(|_| crate::data::sample_negative(rng, history, n_items))
            .collect::<Result<Vec<_>>>()?;
        let fism = sample_fism_items(rng, &distinct_items(train), config.fism_items)?;
        Ok(Some(Self {
            user,
            input,
            rows,
            positives,
            positive_contexts,
            negatives,
            fism,
        }))
    }
}

/// Distinct items of a sequence in ascending order.
pub fn distinct_items(events: &[Event]) -> Vec<usize> {
    ItemSet::from_items(events.iter().map(|e| e.item))
        .as_slice()
        .to_vec()
}

/// `-Σ [log σ(pos) + log(1 - σ(neg))]` over paired `n×1` score columns.
pub fn bce_pair_loss<'p>(g: &mut Graph<'p>, pos: Var, neg: Var) -> Var {
    let sp = g.sigmoid(pos);
    let lp = g.log_clamped(sp, 1e-12);
    let flipped = g.scale(neg, -1.0);
    let sn = g.sigmoid(flipped);
    let ln = g.log_clamped(sn, 1e-12);
    let s = g.add(lp, ln).expect("paired columns");
    let total = g.sum(s);
    g.scale(total, -1.0)
}

#[derive(Debug, Clone)]
pub struct MojitoModel {
    pub config: MojitoConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub store: ParameterStore,
}

impl MojitoModel {
    /// Fresh model with parameters drawn from `config.seed`.
    pub fn new(config: MojitoConfig, n_users: usize, n_items: usize) -> Result<Self> {
        config.validate()?;
        if n_items == 0 || n_users == 0 {
            return Err(Error::Domain(
                "model needs at least one user and one item".into(),
            ));
        }
        let mut model = Self {
            config,
            n_users,
            n_items,
            store: ParameterStore::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
        model
            .embedding_spec()
            .init_params(&mut model.store, n_items, &mut rng)?;
        model
            .encoder_spec()
            .init_params(&mut model.store, &mut rng)?;
        long_term::init_params(&mut model.store, n_users, model.config.d, &mut rng)?;
        Ok(model)
    }

    pub fn embedding_spec(&self) -> EmbeddingSpec {
        EmbeddingSpec {
            d: self.config.d,
            seq_len: self.config.seq_len,
            schema: self.config.schema.clone(),
            no_context: self.config.no_context,
        }
    }

    pub fn encoder_spec(&self) -> EncoderSpec {
        EncoderSpec {
            d: self.config.d,
            blocks: self.config.blocks,
            heads: self.config.heads,
            mode: self.config.attention_mode,
            dropout: self.config.dropout,
            no_context: self.config.no_context,
        }
    }

    /// Builds `X^(0)` and runs the encoder.
    pub fn forward<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p>,
        input: &PaddedSequence,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Encoded> {
        let x0 =
            self.embedding_spec()
                .build_input(g, &self.store, &input.items, &input.contexts)?;
        self.encoder_spec().encode(g, &self.store, x0, rng, mode)
    }

    /// `[m_v ; m^C_c]` rows for paired items and contexts.
    fn candidate_rows<'p>(
        &'p self,
        g: &mut Graph<'p>,
        items: &[usize],
        contexts: &[ContextTuple],
    ) -> Result<Var> {
        if items.contains(&PADDING_ITEM) {
            return Err(Error::Contract("padding item cannot be scored".into()));
        }
        let table = g.param(&self.store, ITEM_TABLE)?;
        let m = g.embedding(table, items)?;
        let c = self
            .embedding_spec()
            .fuse_context(g, &self.store, contexts)?;
        Ok(g.concat_cols(&[m, c])?)
    }

    /// Short-term scores `x_rowᵀ [m_v; m^C_c]` for paired
    /// `(rows[t], items[t], contexts[t])`, as an `n×1` column.
    pub fn short_term_paired<'p>(
        &'p self,
        g: &mut Graph<'p>,
        encoded: Var,
        rows: &[usize],
        items: &[usize],
        contexts: &[ContextTuple],
    ) -> Result<Var> {
        let x = g.gather_rows(encoded, rows)?;
        let e = self.candidate_rows(g, items, contexts)?;
        Ok(g.row_dots(x, e)?)
    }

    /// Short-term scores of many candidates against the last encoder row,
    /// all sharing the next-event context.
    pub fn short_term_candidates<'p>(
        &'p self,
        g: &mut Graph<'p>,
        encoded: Var,
        candidates: &[usize],
        next_context: &ContextTuple,
    ) -> Result<Var> {
        let last = g.shape(encoded).0 - 1;
        let x = g.gather_rows(encoded, &[last])?;
        let ctx = vec![next_context.clone(); candidates.len()];
        let e = self.candidate_rows(g, candidates, &ctx)?;
        Ok(g.matmul_t(e, x)?)
    }

    /// Endpoint-aware blend `λ·short + (1-λ)·long`.
    pub fn combine(&self, short: f64, long: f64) -> f64 {
        let l = self.config.lambda;
        if l == 1.0 {
            short
        } else if l == 0.0 {
            long
        } else {
            l * short + (1.0 - l) * long
        }
    }

    /// Loss of one example for one score kind.
    pub fn sequence_loss<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p>,
        ex: &TrainingExample,
        kind: ScoreKind,
        rng: &mut R,
    ) -> Result<Var> {
        match kind {
            ScoreKind::Short => {
                let enc = self.forward(g, &ex.input, rng, Mode::Train)?;
                let pos = self.short_term_paired(
                    g,
                    enc.output,
                    &ex.rows,
                    &ex.positives,
                    &ex.positive_contexts,
                )?;
                let neg = self.short_term_paired(
                    g,
                    enc.output,
                    &ex.rows,
                    &ex.negatives,
                    &ex.positive_contexts,
                )?;
                Ok(bce_pair_loss(g, pos, neg))
            }
            ScoreKind::Long => {
                let (pos, _) = long_term_scores(g, &self.store, ex.user, &ex.fism, &ex.positives)?;
                let (neg, _) = long_term_scores(g, &self.store, ex.user, &ex.fism, &ex.negatives)?;
                Ok(bce_pair_loss(g, pos, neg))
            }
        }
    }

    /// `λ·L_short + (1-λ)·L_long` for one example. A term whose weight is
    /// exactly zero is not built, so its parameters get no gradient at all.
    pub fn combined_loss<'p, R: Rng + ?Sized>(
        &'p self,
        g: &mut Graph<'p>,
        ex: &TrainingExample,
        rng: &mut R,
    ) -> Result<Var> {
        let l = self.config.lambda;
        let mut total = None;
        for (kind, w) in [(ScoreKind::Short, l), (ScoreKind::Long, 1.0 - l)] {
            if w == 0.0 {
                continue;
            }
            let loss = self.sequence_loss(g, ex, kind, rng)?;
            let weighted = g.scale(loss, w);
            total = Some(match total {
                None => weighted,
                Some(t) => g.add(t, weighted)?,
            });
        }
        Ok(total.expect("lambda in [0,1] keeps at least one term"))
    }

    /// Loss value and parameter gradients of one example.
    pub fn example_gradients<R: Rng + ?Sized>(
        &self,
        ex: &TrainingExample,
        rng: &mut R,
    ) -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new();
        let loss = self.combined_loss(&mut g, ex, rng)?;
        let value = g.scalar_value(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {value} for user {} (positives {:?}, negatives {:?})",
                ex.user, ex.positives, ex.negatives
            )));
        }
        g.backward(loss)?;
        Ok((value, g.into_param_grads()))
    }

    /// Inference-mode combined scores of `candidates` given the events before
    /// the target, the target's context and a long-term sample.
    pub fn score_candidates(
        &self,
        user: usize,
        preceding: &[Event],
        next_context: &ContextTuple,
        fism: &[usize],
        candidates: &[usize],
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::Contract("no candidates to score".into()));
        }
        let l = self.config.lambda;
        let mut g = Graph::new();
        let mut short = vec![0.0; candidates.len()];
        let mut long = vec![0.0; candidates.len()];
        if l != 0.0 {
            let input =
                PaddedSequence::from_events(preceding, self.config.seq_len, &self.config.schema);
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let enc = self.forward(&mut g, &input, &mut unused, Mode::Inference)?;
            let s = self.short_term_candidates(&mut g, enc.output, candidates, next_context)?;
            short.copy_from_slice(g.value(s));
        }
        if l != 1.0 {
            let (s, _) = long_term_scores(&mut g, &self.store, user, fism, candidates)?;
            long.copy_from_slice(g.value(s));
        }
        Ok(short
            .iter()
            .zip(&long)
            .map(|(&s, &lt)| self.combine(s, lt))
            .collect())
    }

    /// Top `k` candidates by combined score, ties by ascending item id.
    pub fn predict_topk(
        &self,
        user: usize,
        preceding: &[Event],
        next_context: &ContextTuple,
        fism: &[usize],
        candidates: &[usize],
        k: usize,
    ) -> Result<Vec<usize>> {
        let scores = self.score_candidates(user, preceding, next_context, fism, candidates)?;
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .total_cmp(&scores[a])
                .then(candidates[a].cmp(&candidates[b]))
        });
        Ok(order.into_iter().take(k).map(|i| candidates[i]).collect())
    }

    /// Metadata embedded in checkpoints.
    pub fn meta(&self, dataset_fingerprint: &str) -> BTreeMap<String, String> {
        let mut meta: BTreeMap<String, String> = self
            .config
            .pairs()
            .into_iter()
            .map(|(k, v)| (format!("config.{k}"), v))
            .collect();
        meta.insert("config_hash".into(), self.config.hash());
        meta.insert("dataset".into(), dataset_fingerprint.into());
        meta.insert("n_users".into(), self.n_users.to_string());
        meta.insert("n_items".into(), self.n_items.to_string());
        meta
    }

    pub fn to_checkpoint(&self, dataset_fingerprint: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(self.store.clone());
        ck.meta = self.meta(dataset_fingerprint);
        ck
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        let text: String = ck
            .meta
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("config.").map(|k| format!("{k}={v}\n")))
            .collect();
        let (config, _) = MojitoConfig::parse(&text)?;
        let get = |key: &str| -> Result<usize> {
            ck.meta
                .get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("checkpoint meta lacks {key}")))
        };
        let (n_users, n_items) = (get("n_users")?, get("n_items")?);
        if let Some(h) = ck.meta.get("config_hash") {
            if *h != config.hash() {
                return Err(Error::Format(format!(
                    "checkpoint config hash {h} does not match its config ({})",
                    config.hash()
                )));
            }
        }
        let model = Self {
            config,
            n_users,
            n_items,
            store: ck.store,
        };
        let fresh = Self::new(model.config.clone(), n_users, n_items)?;
        for (name, p) in fresh.store.iter() {
            let got = model
                .store
                .get(name)
                .map_err(|_| Error::Format(format!("checkpoint lacks parameter {name}")))?;
            if got.shape() != p.tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    got.shape(),
                    p.tensor.shape()
                )));
            }
        }
        Ok(model)
    }
}
