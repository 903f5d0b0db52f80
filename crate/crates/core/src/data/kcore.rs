use std::collections::HashMap;

use super::events::RawEvent;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KCoreReport {
    pub events: Vec<RawEvent>,
    pub removed_events: usize,
    pub users_before: usize,
    pub items_before: usize,
    pub users_after: usize,
    pub items_after: usize,
}

fn intern<'a>(keys: impl Iterator<Item = &'a str>) -> (Vec<usize>, usize) {
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let idx = keys
        .map(|k| {
            let n = ids.len();
            *ids.entry(k).or_insert(n)
        })
        .collect();
    (idx, ids.len())
}

/// Keeps the largest subset of events in which every user has at least
/// `k_user` events and every item at least `k_item`. Input order is kept.
///
/// Pruning is queue-driven: removing a user decrements its items' counts and
/// may push them below threshold, and vice versa, until nothing changes.
pub fn k_core_filter(events: &[RawEvent], k_user: usize, k_item: usize) -> Result<KCoreReport> {
    if k_user == 0 || k_item == 0 {
        return Err(Error::Domain("k-core thresholds must be >= 1".into()));
    }
    let (user_of, n_users) = intern(events.iter().map(|e| e.user_id.as_str()));
    let (item_of, n_items) = intern(events.iter().map(|e| e.item_id.as_str()));

    let mut by_user = vec![Vec::new(); n_users];
    let mut by_item = vec![Vec::new(); n_items];
    for (e, (&u, &i)) in user_of.iter().zip(&item_of).enumerate() {
        by_user[u].push(e);
        by_item[i].push(e);
    }
    let mut user_count: Vec<usize> = by_user.iter().map(Vec::len).collect();
    let mut item_count: Vec<usize> = by_item.iter().map(Vec::len).collect();
    let mut alive = vec![true; events.len()];

    enum Node {
        User(usize),
        Item(usize),
    }
    let mut queue: Vec<Node> = Vec::new();
    let mut user_gone = vec![false; n_users];
    let mut item_gone = vec![false; n_items];
    for u in 0..n_users {
        if user_count[u] < k_user {
            user_gone[u] = true;
            queue.push(Node::User(u));
        }
    }
    for i in 0..n_items {
        if item_count[i] < k_item {
            item_gone[i] = true;
            queue.push(Node::Item(i));
        }
    }
    while let Some(node) = queue.pop() {
        let incident = match node {
            Node::User(u) => &by_user[u],
            Node::Item(i) => &by_item[i],
        };
        for &e in incident {
            if !alive[e] {
                continue;
            }
            alive[e] = false;
            let (u, i) = (user_of[e], item_of[e]);
            user_count[u] -= 1;
            item_count[i] -= 1;
            if !user_gone[u] && user_count[u] < k_user {
                user_gone[u] = true;
                queue.push(Node::User(u));
            }
            if !item_gone[i] && item_count[i] < k_item {
                item_gone[i] = true;
                queue.push(Node::Item(i));
            }
        }
    }

    let kept: Vec<RawEvent> = events
        .iter()
        .zip(&alive)
        .filter(|(_, &a)| a)
        .map(|(e, _)| e.clone())
        .collect();
    let users_after = user_count.iter().filter(|&&c| c > 0).count();
    let items_after = item_count.iter().filter(|&&c| c > 0).count();
    if kept.is_empty() && !events.is_empty() {
        log::warn!("k-core ({k_user}, {k_item}) removed every event");
    }
    Ok(KCoreReport {
        removed_events: events.len() - kept.len(),
        events: kept,
        users_before: n_users,
        items_before: n_items,
        users_after,
        items_after,
    })
}
