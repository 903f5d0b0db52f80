//! Long-term preference: a user vector plus an attention-weighted sum of the
//! embeddings of sampled history items, scored against the candidate item.
//! No context input is involved.

use rand::Rng;

use crate::embedding::ITEM_TABLE;
use crate::error::{Error, Result};
use crate::init;
use crate::tensor::{Graph, ParameterStore, Var};

pub const USER_TABLE: &str = "emb.user";

pub fn init_params<R: Rng + ?Sized>(
    store: &mut ParameterStore,
    n_users: usize,
    d: usize,
    rng: &mut R,
) -> Result<()> {
    let mut users = init::normal(&[n_users + 1, d], 0.01, rng);
    users.values_mut()[..d].iter_mut().for_each(|v| *v = 0.0);
    store.insert(USER_TABLE, users)?;
    Ok(())
}

/// User representations for several targets at once.
#[derive(Debug, Clone, Copy)]
pub struct LongTerm {
    /// `n×d`, row `t` is the representation against `targets[t]`.
    pub repr: Var,
    /// `n×d` target embeddings.
    pub targets: Var,
    /// Targets for which every sampled item equals the target, so the
    /// representation fell back to the bare user vector.
    pub fallbacks: usize,
}

/// `m_u + Σ_{f ∈ F, f ≠ v} softmax(m_fᵀ m_v) m_f` for every `v` in `targets`.
pub fn fism_user_repr<'p>(
    g: &mut Graph<'p>,
    store: &'p ParameterStore,
    user: usize,
    fism: &[usize],
    targets: &[usize],
) -> Result<LongTerm> {
    if fism.is_empty() {
        return Err(Error::Contract("long-term sample F is empty".into()));
    }
    if targets.contains(&0) {
        return Err(Error::Contract(
            "padding item cannot be a long-term target".into(),
        ));
    }
    let items = g.param(store, ITEM_TABLE)?;
    let users = g.param(store, USER_TABLE)?;
    let m_f = g.embedding(items, fism)?;
    let m_t = g.embedding(items, targets)?;
    let sims = g.matmul_t(m_t, m_f)?;
    let mask: Vec<bool> = targets
        .iter()
        .flat_map(|&v| fism.iter().map(move |&f| f != v))
        .collect();
    let fallbacks = targets
        .iter()
        .filter(|&&v| fism.iter().all(|&f| f == v))
        .count();
    let weights = g.softmax_rows_or_zero(sims, Some(&mask))?;
    let agg = g.matmul(weights, m_f)?;
    let m_u = g.embedding(users, &[user])?;
    let repr = g.add_row(agg, m_u)?;
    Ok(LongTerm {
        repr,
        targets: m_t,
        fallbacks,
    })
}

/// `n×1` long-term scores `m_vᵀ m̃_u(v)`.
pub fn long_term_scores<'p>(
    g: &mut Graph<'p>,
    store: &'p ParameterStore,
    user: usize,
    fism: &[usize],
    targets: &[usize],
) -> Result<(Var, usize)> {
    let lt = fism_user_repr(g, store, user, fism, targets)?;
    let scores = g.row_dots(lt.repr, lt.targets)?;
    Ok((scores, lt.fallbacks))
}
