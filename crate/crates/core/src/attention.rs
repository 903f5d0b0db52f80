//! Self-attention encoder whose per-head attention matrix mixes an
//! item-based and a context-based query-key product.
//!
//! Each block owns one query/key pair per component (`it` reads the item half
//! of its input, `c` the context half), shared by all heads. Head `j` blends
//! the two products with weights `p_j = softmax(mix[j])`; in training mode each
//! component is perturbed by Gaussian noise with a learned per-component
//! variance before blending.

use rand::Rng;

use crate::config::AttentionMode;
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

/// Mixture components, in column order of the `mix` and `logvar` parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Item,
    Context,
}

impl Component {
    pub const ALL: [Component; 2] = [Component::Item, Component::Context];

    fn index(self) -> usize {
        self as usize
    }

    fn suffix(self) -> &'static str {
        match self {
            Self::Item => "it",
            Self::Context => "c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Noisy attention, dropout in compat mode.
    Train,
    /// Mixture mean, deterministic.
    Inference,
}

pub fn param_name(block: usize, what: &str) -> String {
    format!("block{block}.{what}")
}

fn query_name(block: usize, k: Component) -> String {
    param_name(block, &format!("wq_{}", k.suffix()))
}

fn key_name(block: usize, k: Component) -> String {
    param_name(block, &format!("wk_{}", k.suffix()))
}

/// Initial log-variance of both attention noise components.
pub const INIT_LOGVAR: f64 = -4.605170185988091; // ln 0.01

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSpec {
    pub d: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mode: AttentionMode,
    pub dropout: f64,
    /// Ablation: every head uses the item component only.
    pub no_context: bool,
}

/// Output of [`EncoderSpec::encode`].
#[derive(Debug, Clone)]
pub struct Encoded {
    /// `X^(B)`, `L×2d`.
    pub output: Var,
    /// Per-head outputs of the last block, each `L×2d`.
    pub last_heads: Vec<Var>,
}

fn causal_mask(len: usize) -> Vec<bool> {
    (0..len * len).map(|i| i % len <= i / len).collect()
}

impl EncoderSpec {
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        store: &mut ParameterStore,
        rng: &mut R,
    ) -> Result<()> {
        let (d, w) = (self.d, 2 * self.d);
        for b in 0..self.blocks {
            for k in Component::ALL {
                store.insert(query_name(b, k), init::scaled_uniform(d, d, 1.0, rng))?;
                store.insert(key_name(b, k), init::scaled_uniform(d, d, 1.0, rng))?;
            }
            store.insert(param_name(b, "wv"), init::scaled_uniform(w, w, 1.0, rng))?;
            store.insert(
                param_name(b, "wo"),
                init::scaled_uniform(self.heads * w, w, 1.0, rng),
            )?;
            store.insert(
                param_name(b, "mix"),
                init::normal(&[self.heads, 2], 1.0, rng),
            )?;
            store.insert(param_name(b, "logvar"), Tensor::full(&[1, 2], INIT_LOGVAR))?;
            store.insert(param_name(b, "w1"), init::scaled_uniform(w, w, 1.0, rng))?;
            store.insert(param_name(b, "b1"), Tensor::zeros(&[1, w]))?;
            store.insert(param_name(b, "w2"), init::scaled_uniform(w, w, 2.0, rng))?;
            store.insert(param_name(b, "b2"), Tensor::zeros(&[1, w]))?;
        }
        Ok(())
    }

    fn check_width<'p>(&self, g: &Graph<'p>, x: Var) -> Result<()> {
        let (_, w) = g.shape(x);
        if w != 2 * self.d {
            return Err(Error::Contract(format!(
                "encoder input has width {w}, expected 2d = {}",
                2 * self.d
            )));
        }
        Ok(())
    }

    /// Unmasked `Q_k K_kᵀ` for one component.
    fn component_scores<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        x: Var,
        block: usize,
        k: Component,
    ) -> Result<Var> {
        self.check_width(g, x)?;
        let half = g.slice_cols(x, k.index() * self.d, self.d)?;
        let wq = g.param(store, &query_name(block, k))?;
        let wk = g.param(store, &key_name(block, k))?;
        let q = g.matmul(half, wq)?;
        let kk = g.matmul(half, wk)?;
        Ok(g.matmul_t(q, kk)?)
    }

    /// `Q_k K_kᵀ` with `-inf` above the diagonal, as a plain tensor.
    pub fn component_logits(
        &self,
        store: &ParameterStore,
        x: &Tensor,
        block: usize,
        k: Component,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let xv = g.constant(x)?;
        let s = self.component_scores(&mut g, store, xv, block, k)?;
        let mut t = g.tensor(s);
        let (len, _) = t.dims2()?;
        for (i, v) in t.values_mut().iter_mut().enumerate() {
            if i % len > i / len {
                *v = f64::NEG_INFINITY;
            }
        }
        Ok(t)
    }

    /// Mixture weights as a `H×2` variable (rows on the simplex).
    fn mixture<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        block: usize,
    ) -> Result<Var> {
        if self.no_context {
            let mut pinned = vec![0.0; self.heads * 2];
            pinned.iter_mut().step_by(2).for_each(|v| *v = 1.0);
            return Ok(g.constant_from(self.heads, 2, pinned)?);
        }
        let mix = g.param(store, &param_name(block, "mix"))?;
        Ok(g.softmax_rows(mix, None)?)
    }

    /// Attention output of head `j`: `softmax(A_j / sqrt(d)) · V`.
    #[allow(clippy::too_many_arguments)]
    fn head<'p, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'p>,
        scores: [Var; 2],
        sigmas: [Var; 2],
        p: Var,
        j: usize,
        v: Var,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Var> {
        let len = g.shape(v).0;
        let p_row = g.gather_rows(p, &[j])?;
        let mut blend = None;
        for k in Component::ALL {
            let weight = g.slice_cols(p_row, k.index(), 1)?;
            let s = match mode {
                Mode::Train => g.gaussian_reparam(scores[k.index()], sigmas[k.index()], rng)?,
                Mode::Inference => scores[k.index()],
            };
            let term = g.mul(s, weight)?;
            blend = Some(match blend {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let a = blend.expect("two components");
        let a = g.scale(a, 1.0 / (self.d as f64).sqrt());
        let att = g.softmax_rows(a, Some(&causal_mask(len)))?;
        Ok(g.matmul(att, v)?)
    }

    fn dropout<'p, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'p>,
        x: Var,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Var> {
        if mode == Mode::Inference || self.dropout == 0.0 {
            return Ok(x);
        }
        let (m, n) = g.shape(x);
        let keep = 1.0 - self.dropout;
        let mask = (0..m * n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        let mask = g.constant_from(m, n, mask)?;
        Ok(g.mul(x, mask)?)
    }

    /// One block; returns the block output and the per-head outputs.
    pub fn sab_forward<'p, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        x: Var,
        block: usize,
        rng: &mut R,
        mode: Mode,
    ) -> Result<(Var, Vec<Var>)> {
        self.check_width(g, x)?;
        let scores = [
            self.component_scores(g, store, x, block, Component::Item)?,
            self.component_scores(g, store, x, block, Component::Context)?,
        ];
        let logvar = g.param(store, &param_name(block, "logvar"))?;
        let mut sigmas = [logvar; 2];
        for k in Component::ALL {
            let lv = g.slice_cols(logvar, k.index(), 1)?;
            let half = g.scale(lv, 0.5);
            sigmas[k.index()] = g.exp(half);
        }
        let p = self.mixture(g, store, block)?;
        let wv = g.param(store, &param_name(block, "wv"))?;
        let v = g.matmul(x, wv)?;
        let heads = (0..self.heads)
            .map(|j| self.head(g, scores, sigmas, p, j, v, rng, mode))
            .collect::<Result<Vec<_>>>()?;
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let wo = g.param(store, &param_name(block, "wo"))?;
        let mut sal = g.matmul(cat, wo)?;
        if self.mode == AttentionMode::Compat {
            let dropped = self.dropout(g, sal, rng, mode)?;
            let res = g.add(x, dropped)?;
            sal = g.layer_norm_rows(res, 1e-8);
        }
        let w1 = g.param(store, &param_name(block, "w1"))?;
        let b1 = g.param(store, &param_name(block, "b1"))?;
        let w2 = g.param(store, &param_name(block, "w2"))?;
        let b2 = g.param(store, &param_name(block, "b2"))?;
        let h = g.matmul(sal, w1)?;
        let h = g.add_row(h, b1)?;
        let h = g.relu(h);
        let h = g.matmul(h, w2)?;
        let mut out = g.add_row(h, b2)?;
        if self.mode == AttentionMode::Compat {
            let dropped = self.dropout(g, out, rng, mode)?;
            let res = g.add(sal, dropped)?;
            out = g.layer_norm_rows(res, 1e-8);
        }
        Ok((out, heads))
    }

    /// Applies all blocks in sequence.
    pub fn encode<'p, R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        x: Var,
        rng: &mut R,
        mode: Mode,
    ) -> Result<Encoded> {
        if self.blocks == 0 || self.heads == 0 {
            return Err(Error::Contract(
                "encoder needs at least one block and one head".into(),
            ));
        }
        let mut cur = x;
        let mut last_heads = Vec::new();
        for b in 0..self.blocks {
            let (out, heads) = self.sab_forward(g, store, cur, b, rng, mode)?;
            cur = out;
            last_heads = heads;
        }
        Ok(Encoded {
            output: cur,
            last_heads,
        })
    }

    /// Current `[p_it, p_c]` per head of a block.
    pub fn mixture_weights(&self, store: &ParameterStore, block: usize) -> Result<Vec<[f64; 2]>> {
        let mut g = Graph::new();
        let p = self.mixture(&mut g, store, block)?;
        Ok(g.value(p).chunks(2).map(|r| [r[0], r[1]]).collect())
    }

    /// Current `[sigma_it, sigma_c]` of a block.
    pub fn sigmas(&self, store: &ParameterStore, block: usize) -> Result<[f64; 2]> {
        let lv = store.get(&param_name(block, "logvar"))?.values();
        Ok([(0.5 * lv[0]).exp(), (0.5 * lv[1]).exp()])
    }
}
