//! Path-level subgraph augmentations for the contrastive course.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::subgraph::{merge_paths, HeteroSubgraph, MultiSlotSequence, PathInstance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Removal,
    Insertion,
    Substitution,
}

pub const STRATEGIES: [Strategy; 3] = [Strategy::Removal, Strategy::Insertion, Strategy::Substitution];

#[derive(Clone, Debug, PartialEq)]
pub struct Augmented {
    pub graph: HeteroSubgraph,
    /// The requested strategy could not be applied as asked (nothing to
    /// remove, or an empty pool).
    pub flagged: bool,
}

fn remove<R: Rng>(paths: &mut Vec<PathInstance>, count: usize, rng: &mut R) {
    let mut drop: Vec<usize> = sample(rng, paths.len(), count).into_vec();
    drop.sort_unstable_by(|a, b| b.cmp(a));
    for i in drop {
        paths.remove(i);
    }
}

fn insert<R: Rng>(paths: &mut Vec<PathInstance>, pool: &[PathInstance], count: usize, rng: &mut R) {
    let mut picks: Vec<usize> = sample(rng, pool.len(), count).into_vec();
    picks.sort_unstable();
    paths.extend(picks.into_iter().map(|i| pool[i].clone()));
}

/// Apply one augmentation with `ceil(ratio * |paths|)` affected paths.
/// Removal never drops every path; insertion with an empty pool falls back to
/// removal. Both cases are flagged.
pub fn augment_subgraph(
    g: &HeteroSubgraph,
    strategy: Strategy,
    ratio: f64,
    pool: &[PathInstance],
    seed: u64,
) -> Result<Augmented> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Contract(format!("augmentation ratio {ratio} outside (0, 1)")));
    }
    let pool: Vec<PathInstance> = pool
        .iter()
        .filter(|p| !g.paths.iter().any(|q| q.metapath == p.metapath && q.nodes == p.nodes))
        .cloned()
        .collect();
    let mut r = rng::stream(seed, &[rng::tag::AUGMENT]);
    let count = (ratio * g.paths.len() as f64).ceil() as usize;
    let mut paths = g.paths.clone();
    let mut flagged = false;
    let strategy = if strategy != Strategy::Removal && pool.is_empty() {
        flagged = true;
        Strategy::Removal
    } else {
        strategy
    };
    match strategy {
        Strategy::Removal => {
            let c = count.min(paths.len().saturating_sub(1));
            if c < count {
                flagged = true;
            }
            remove(&mut paths, c, &mut r);
        }
        Strategy::Insertion => {
            let c = count.min(pool.len());
            flagged |= c < count;
            insert(&mut paths, &pool, c, &mut r);
        }
        Strategy::Substitution => {
            let c = count.min(pool.len());
            flagged |= c < count;
            remove(&mut paths, c, &mut r);
            insert(&mut paths, &pool, c, &mut r);
        }
    }
    Ok(Augmented {
        graph: merge_paths(g.user, g.item, &paths)?,
        flagged,
    })
}

/// An anchor subgraph, its augmented positive view and negatives that share
/// the user but not the item.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedPair {
    pub anchor: MultiSlotSequence,
    pub positive: MultiSlotSequence,
    pub negatives: Vec<MultiSlotSequence>,
    pub strategy: Strategy,
}

impl AugmentedPair {
    pub fn check(&self) -> Result<()> {
        let (u, i) = (self.anchor.user(), self.anchor.item());
        if self.positive.user() != u || self.positive.item() != i {
            return Err(Error::Contract("positive view must share the anchor pair".into()));
        }
        for n in &self.negatives {
            if n.user() != u || n.item() == i {
                return Err(Error::Contract("negative must share the user and differ in item".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::Node;

    fn p(nodes: &[Node]) -> PathInstance {
        PathInstance { nodes: nodes.to_vec(), metapath: 0, score: 0.0 }
    }

    fn n(ty: u8, id: u32) -> Node {
        Node::new(ty, id)
    }

    #[test]
    fn removal_never_empties() {
        let (u, i) = (n(0, 0), n(1, 0));
        let g = merge_paths(u, i, &[p(&[u, n(2, 0), i])]).unwrap();
        let a = augment_subgraph(&g, Strategy::Removal, 0.2, &[], 1).unwrap();
        assert!(a.flagged);
        assert_eq!(a.graph, g);
    }

    #[test]
    fn counts_follow_strategy() {
        let (u, i) = (n(0, 0), n(1, 0));
        let paths: Vec<_> = (0..5).map(|k| p(&[u, n(2, k), i])).collect();
        let pool: Vec<_> = (5..9).map(|k| p(&[u, n(2, k), i])).collect();
        let g = merge_paths(u, i, &paths).unwrap();
        let rem = augment_subgraph(&g, Strategy::Removal, 0.2, &pool, 3).unwrap();
        assert_eq!(rem.graph.paths.len(), 4);
        let ins = augment_subgraph(&g, Strategy::Insertion, 0.2, &pool, 3).unwrap();
        assert_eq!(ins.graph.paths.len(), 6);
        assert_eq!(ins.graph.nodes.len(), g.nodes.len() + 1);
        let sub = augment_subgraph(&g, Strategy::Substitution, 0.5, &pool, 3).unwrap();
        assert_eq!(sub.graph.paths.len(), 5);
        assert_ne!(sub.graph.paths, g.paths);
        let fallback = augment_subgraph(&g, Strategy::Insertion, 0.2, &[], 3).unwrap();
        assert!(fallback.flagged);
        assert_eq!(fallback.graph.paths.len(), 4);
        assert_eq!(augment_subgraph(&g, Strategy::Substitution, 0.5, &pool, 3).unwrap(), sub);
    }
}
