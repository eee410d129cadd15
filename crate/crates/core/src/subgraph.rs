//! Interaction-specific subgraphs and their multi-slot sequence encoding.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::Node;

/// A concrete path following one meta-path from the target user to the
/// target item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathInstance {
    pub nodes: Vec<Node>,
    pub metapath: usize,
    pub score: f64,
}

impl PathInstance {
    pub fn user(&self) -> Node {
        self.nodes[0]
    }

    pub fn item(&self) -> Node {
        *self.nodes.last().unwrap()
    }
}

/// Ranking used everywhere paths are ordered: score descending, then node
/// ids lexicographically ascending.
pub fn path_order(a: &PathInstance, b: &PathInstance) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.nodes.cmp(&b.nodes))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroSubgraph {
    pub user: Node,
    pub item: Node,
    pub paths: Vec<PathInstance>,
    pub nodes: BTreeSet<Node>,
    /// Directed along walk order, user side first.
    pub edges: BTreeSet<(Node, Node)>,
}

/// Merge path instances connecting `(user, item)` into one subgraph. Paths
/// are deduplicated and kept in meta-path order, then ranking order.
pub fn merge_paths(user: Node, item: Node, paths: &[PathInstance]) -> Result<HeteroSubgraph> {
    for p in paths {
        if p.nodes.len() < 2 || p.user() != user || p.item() != item {
            return Err(Error::Contract(format!(
                "path {:?} does not connect {user:?} to {item:?}",
                p.nodes
            )));
        }
    }
    let mut kept: Vec<PathInstance> = Vec::with_capacity(paths.len());
    for p in paths {
        if !kept.iter().any(|q| q.metapath == p.metapath && q.nodes == p.nodes) {
            kept.push(p.clone());
        }
    }
    kept.sort_by(|a, b| a.metapath.cmp(&b.metapath).then_with(|| path_order(a, b)));
    let mut nodes = BTreeSet::new();
    let mut edges = BTreeSet::new();
    nodes.insert(user);
    nodes.insert(item);
    for p in &kept {
        nodes.extend(p.nodes.iter().copied());
        edges.extend(p.nodes.windows(2).map(|w| (w[0], w[1])));
    }
    Ok(HeteroSubgraph {
        user,
        item,
        paths: kept,
        nodes,
        edges,
    })
}

impl HeteroSubgraph {
    /// Per meta-path flag: does at least one stored path follow it.
    pub fn metapath_labels(&self, num_metapaths: usize) -> Vec<bool> {
        let mut labels = vec![false; num_metapaths];
        for p in &self.paths {
            if p.metapath < num_metapaths {
                labels[p.metapath] = true;
            }
        }
        labels
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqElement {
    pub node: Node,
    pub slot: u16,
    /// Positions of the elements that immediately precede this one on some
    /// path, sorted ascending.
    pub precursors: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiSlotSequence {
    pub elements: Vec<SeqElement>,
    pub user_pos: usize,
    pub item_pos: usize,
}

impl MultiSlotSequence {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Two-element sequence for a pair with no connecting path: the user at
    /// slot 0 and the item at slot 1, preceded by the user.
    pub fn fallback(user: Node, item: Node) -> Self {
        MultiSlotSequence {
            elements: vec![
                SeqElement { node: user, slot: 0, precursors: vec![] },
                SeqElement { node: item, slot: 1, precursors: vec![0] },
            ],
            user_pos: 0,
            item_pos: 1,
        }
    }

    pub fn user(&self) -> Node {
        self.elements[self.user_pos].node
    }

    pub fn item(&self) -> Node {
        self.elements[self.item_pos].node
    }

    pub fn max_slot(&self) -> u16 {
        self.elements.iter().map(|e| e.slot).max().unwrap_or(0)
    }

    /// All (precursor, successor) position pairs.
    pub fn links(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.elements
            .iter()
            .enumerate()
            .flat_map(|(k, e)| e.precursors.iter().map(move |&j| (j as usize, k)))
    }

    pub fn num_links(&self) -> usize {
        self.elements.iter().map(|e| e.precursors.len()).sum()
    }

    /// Structural invariants; used by tests and on corpus load.
    pub fn check(&self) -> Result<()> {
        let n = self.elements.len();
        let bad = |m: String| Err(Error::Contract(m));
        if self.user_pos >= n || self.item_pos >= n {
            return bad("endpoint position out of range".into());
        }
        let u = &self.elements[self.user_pos];
        if u.slot != 0 || !u.precursors.is_empty() {
            return bad("user element must sit at slot 0 without precursors".into());
        }
        if self.elements[self.item_pos].slot != self.max_slot() {
            return bad("item element must hold the maximal slot".into());
        }
        for (k, e) in self.elements.iter().enumerate() {
            for &p in &e.precursors {
                let p = p as usize;
                if p >= n {
                    return bad(format!("element {k}: precursor {p} out of range"));
                }
                if self.elements[p].slot + 1 != e.slot && k != self.item_pos {
                    return bad(format!("element {k}: precursor {p} is not one slot earlier"));
                }
            }
        }
        Ok(())
    }
}

/// Linearize a subgraph: one element per distinct (node, hop distance from
/// the user) pair, ordered by slot and then first appearance. The target
/// item is a single element at the largest slot, whatever the path length.
pub fn to_multislot(g: &HeteroSubgraph) -> Result<MultiSlotSequence> {
    if g.paths.is_empty() {
        return Err(Error::Contract("subgraph has no paths".into()));
    }
    let item_slot = g.paths.iter().map(|p| p.nodes.len() - 1).max().unwrap() as u16;
    let slot_of = |p: &PathInstance, k: usize| -> u16 {
        if k == p.nodes.len() - 1 {
            item_slot
        } else {
            k as u16
        }
    };

    // first-appearance order of each (node, slot)
    let mut keys: Vec<(Node, u16)> = Vec::new();
    let mut seen: HashMap<(Node, u16), usize> = HashMap::new();
    for p in &g.paths {
        for k in 0..p.nodes.len() {
            let key = (p.nodes[k], slot_of(p, k));
            seen.entry(key).or_insert_with(|| {
                keys.push(key);
                keys.len() - 1
            });
        }
    }
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by_key(|&i| (keys[i].1, i));
    let mut position = HashMap::with_capacity(keys.len());
    for (pos, &i) in order.iter().enumerate() {
        position.insert(keys[i], pos);
    }

    let mut elements: Vec<SeqElement> = order
        .iter()
        .map(|&i| SeqElement {
            node: keys[i].0,
            slot: keys[i].1,
            precursors: Vec::new(),
        })
        .collect();
    for p in &g.paths {
        for k in 1..p.nodes.len() {
            let prev = position[&(p.nodes[k - 1], slot_of(p, k - 1))];
            let cur = position[&(p.nodes[k], slot_of(p, k))];
            elements[cur].precursors.push(prev as u16);
        }
    }
    for e in &mut elements {
        e.precursors.sort_unstable();
        e.precursors.dedup();
    }
    let user_pos = position[&(g.user, 0)];
    let item_pos = position[&(g.item, item_slot)];
    Ok(MultiSlotSequence {
        elements,
        user_pos,
        item_pos,
    })
}
