//! Model input: item embeddings, periodic (Mercer) context embeddings fused
//! by a linear layer, and learnable position embeddings.
//!
//! A context value `c` of a type with period `P` is embedded through the
//! truncated Fourier feature map
//!
//! ```text
//! phi(c) = [a_0, a_1 cos(2πc/P), a_1 sin(2πc/P), ..., a_K cos(2πKc/P), a_K sin(2πKc/P)]
//! ```
//!
//! whose inner products `a_0² + Σ a_k² cos(2πk(c - c')/P)` depend only on the
//! circular difference `c - c'`. A learnable `(2K+1)×d` projection maps the
//! features to width `d`.

use std::f64::consts::PI;

use rand::Rng;

use crate::data::{ContextKind, ContextSchema, ContextTuple};
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{Graph, ParameterStore, Tensor, Var};

pub const ITEM_TABLE: &str = "emb.item";
pub const POSITION_TABLE: &str = "emb.pos";
pub const FUSE_WEIGHT: &str = "ctx.fuse.w";
pub const FUSE_BIAS: &str = "ctx.fuse.b";

pub fn amplitude_name(kind: ContextKind) -> String {
    format!("ctx.{}.amp", kind.name())
}

pub fn projection_name(kind: ContextKind) -> String {
    format!("ctx.{}.proj", kind.name())
}

/// Number of Fourier frequencies for a context period, capped at 8 and so
/// that `2K + 1 <= d`.
pub fn num_frequencies(period: usize, d: usize) -> usize {
    8.min((period - 1) / 2).min(d.saturating_sub(1) / 2)
}

/// Unscaled feature row `[1, cos(2πkc/P), sin(2πkc/P)]_{k=1..K}`.
pub fn fourier_basis(value: usize, period: usize, k_max: usize) -> Vec<f64> {
    let mut row = Vec::with_capacity(2 * k_max + 1);
    row.push(1.0);
    for k in 1..=k_max {
        let angle = 2.0 * PI * (k * (value % period)) as f64 / period as f64;
        row.push(angle.cos());
        row.push(angle.sin());
    }
    row
}

/// Raw feature vector with explicit amplitudes (no projection).
pub fn raw_features(value: usize, period: usize, amplitudes: &[f64]) -> Vec<f64> {
    let k_max = amplitudes.len() - 1;
    let mut f = fourier_basis(value, period, k_max);
    f[0] *= amplitudes[0];
    for k in 1..=k_max {
        f[2 * k - 1] *= amplitudes[k];
        f[2 * k] *= amplitudes[k];
    }
    f
}

/// Shapes and switches shared by the embedding routines.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpec {
    pub d: usize,
    pub seq_len: usize,
    pub schema: ContextSchema,
    /// Ablation: context embeddings are identically zero.
    pub no_context: bool,
}

impl EmbeddingSpec {
    pub fn frequencies(&self, kind: ContextKind) -> usize {
        num_frequencies(kind.cardinality(), self.d)
    }

    /// Registers all embedding parameters with their initial values.
    pub fn init_params<R: Rng + ?Sized>(
        &self,
        store: &mut ParameterStore,
        n_items: usize,
        rng: &mut R,
    ) -> Result<()> {
        let d = self.d;
        let mut items = init::normal(&[n_items + 1, d], 0.01, rng);
        items.values_mut()[..d].iter_mut().for_each(|v| *v = 0.0);
        store.insert(ITEM_TABLE, items)?;
        store.insert(
            POSITION_TABLE,
            init::normal(&[self.seq_len, 2 * d], 0.01, rng),
        )?;
        for &kind in self.schema.kinds() {
            let k = self.frequencies(kind);
            let amps: Vec<f64> = (0..=k)
                .map(|j| if j == 0 { 1.0 } else { 1.0 / j as f64 })
                .collect();
            store.insert(amplitude_name(kind), Tensor::new(vec![1, k + 1], amps)?)?;
            store.insert(
                projection_name(kind),
                init::fan_in_uniform(2 * k + 1, d, rng),
            )?;
        }
        let c = self.schema.len();
        store.insert(FUSE_WEIGHT, init::fan_in_uniform(c * d, d, rng))?;
        let bound = 1.0 / ((c * d) as f64).sqrt();
        store.insert(FUSE_BIAS, init::uniform(&[1, d], bound, rng))?;
        Ok(())
    }

    /// Embeds values of one context type: `n` values -> `n×d`.
    pub fn mercer_embed<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        kind: ContextKind,
        values: &[usize],
    ) -> Result<Var> {
        let period = kind.cardinality();
        if let Some(&bad) = values.iter().find(|&&c| c >= period) {
            return Err(crate::tensor::TensorError::Index {
                id: bad,
                len: period,
            }
            .into());
        }
        let k = self.frequencies(kind);
        let width = 2 * k + 1;
        let basis: Vec<f64> = values
            .iter()
            .flat_map(|&c| fourier_basis(c, period, k))
            .collect();
        let basis = g.constant_from(values.len(), width, basis)?;
        // (K+1) amplitudes -> 2K+1 feature scales
        let mut expand = vec![0.0; (k + 1) * width];
        expand[0] = 1.0;
        for j in 1..=k {
            expand[j * width + 2 * j - 1] = 1.0;
            expand[j * width + 2 * j] = 1.0;
        }
        let expand = g.constant_from(k + 1, width, expand)?;
        let amps = g.param(store, &amplitude_name(kind))?;
        let scales = g.matmul(amps, expand)?;
        let raw = g.mul_row(basis, scales)?;
        let proj = g.param(store, &projection_name(kind))?;
        Ok(g.matmul(raw, proj)?)
    }

    /// Fused context embedding `g([m_c1; ...; m_cC])`: `n` tuples -> `n×d`.
    pub fn fuse_context<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        contexts: &[ContextTuple],
    ) -> Result<Var> {
        let c = self.schema.len();
        if let Some(bad) = contexts.iter().find(|t| t.len() != c) {
            return Err(Error::Contract(format!(
                "context tuple {bad:?} does not match schema {}",
                self.schema
            )));
        }
        if self.no_context {
            return Ok(g.constant(&Tensor::zeros(&[contexts.len(), self.d]))?);
        }
        let mut parts = Vec::with_capacity(c);
        for (j, &kind) in self.schema.kinds().iter().enumerate() {
            let values: Vec<usize> = contexts.iter().map(|t| t[j] as usize).collect();
            parts.push(self.mercer_embed(g, store, kind, &values)?);
        }
        let cat = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)?
        };
        let w = g.param(store, FUSE_WEIGHT)?;
        let b = g.param(store, FUSE_BIAS)?;
        let lin = g.matmul(cat, w)?;
        Ok(g.add_row(lin, b)?)
    }

    /// `X⁽⁰⁾`: row `l` is `[m_item; m_context] + p_l`, shape `L×2d`.
    pub fn build_input<'p>(
        &self,
        g: &mut Graph<'p>,
        store: &'p ParameterStore,
        items: &[usize],
        contexts: &[ContextTuple],
    ) -> Result<Var> {
        if items.len() != self.seq_len || contexts.len() != self.seq_len {
            return Err(Error::Contract(format!(
                "input has {} items and {} contexts, expected {}",
                items.len(),
                contexts.len(),
                self.seq_len
            )));
        }
        let table = g.param(store, ITEM_TABLE)?;
        let item_emb = g.embedding(table, items)?;
        let ctx_emb = self.fuse_context(g, store, contexts)?;
        let e = g.concat_cols(&[item_emb, ctx_emb])?;
        let pos = g.param(store, POSITION_TABLE)?;
        Ok(g.add(e, pos)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(schema: &str, d: usize, l: usize) -> (EmbeddingSpec, ParameterStore) {
        let spec = EmbeddingSpec {
            d,
            seq_len: l,
            schema: schema.parse().unwrap(),
            no_context: false,
        };
        let mut store = ParameterStore::new();
        spec.init_params(&mut store, 10, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        (spec, store)
    }

    #[test]
    fn frequency_counts() {
        assert_eq!(num_frequencies(7, 64), 3);
        assert_eq!(num_frequencies(12, 64), 5);
        assert_eq!(num_frequencies(24, 64), 8);
        assert_eq!(num_frequencies(31, 64), 8);
        assert_eq!(num_frequencies(24, 8), 3);
    }

    #[test]
    fn periodic_in_value() {
        let (spec, store) = spec("day_of_week", 8, 4);
        let mut g = Graph::new();
        let a = spec
            .mercer_embed(&mut g, &store, ContextKind::DayOfWeek, &[2])
            .unwrap();
        let a = g.value(a).to_vec();
        for c in 0..7 {
            assert_eq!(fourier_basis(c, 7, 3), fourier_basis(c + 7, 7, 3));
        }
        let b = fourier_basis(9, 7, 3);
        assert_eq!(b, fourier_basis(2, 7, 3));
        assert!(spec
            .mercer_embed(&mut g, &store, ContextKind::DayOfWeek, &[7])
            .is_err());
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn zero_amplitudes_give_zero_embedding() {
        let (spec, mut store) = spec("hour", 8, 4);
        store
            .get_mut(&amplitude_name(ContextKind::Hour))
            .unwrap()
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let e = spec
            .mercer_embed(&mut g, &store, ContextKind::Hour, &[5, 17])
            .unwrap();
        assert!(g.value(e).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_fusion_layer_gives_zero_vector() {
        let (spec, mut store) = spec("month,hour", 8, 4);
        for name in [FUSE_WEIGHT, FUSE_BIAS] {
            store
                .get_mut(name)
                .unwrap()
                .values_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let e = spec
            .fuse_context(&mut g, &store, &[vec![3, 4], vec![0, 0]])
            .unwrap();
        assert!(g.value(e).iter().all(|&v| v == 0.0));
        assert!(spec.fuse_context(&mut g, &store, &[vec![3]]).is_err());
    }

    #[test]
    fn input_shape_and_padding_rows() {
        let (spec, mut store) = spec("day_of_week", 4, 3);
        store
            .get_mut(POSITION_TABLE)
            .unwrap()
            .values_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
        let mut g = Graph::new();
        let x = spec
            .build_input(&mut g, &store, &[0, 0, 0], &vec![vec![0]; 3])
            .unwrap();
        assert_eq!(g.shape(x), (3, 8));
        let ctx = spec.fuse_context(&mut g, &store, &[vec![0]]).unwrap();
        let ctx = g.value(ctx).to_vec();
        for r in 0..3 {
            assert_eq!(&g.value(x)[r * 8..r * 8 + 4], &[0.0; 4]);
            assert_eq!(&g.value(x)[r * 8 + 4..r * 8 + 8], ctx.as_slice());
        }
        assert!(spec
            .build_input(&mut g, &store, &[0, 0], &vec![vec![0]; 2])
            .is_err());
    }
}
