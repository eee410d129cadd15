//! Priority-guided path sampling between a user and an item.
//!
//! Each walk step moves to a type-valid neighbor with probability
//! proportional to `max(cos(incoming, candidate), floor)`. The step before
//! the item is restricted to neighbors adjacent to the item, so every
//! completed walk ends at the target. Paths never revisit a node.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::hin::{Dir, Hin, Node};
use crate::metapath::{MetaPath, Step};
use crate::priority::{priority_score, NodeVectors};
use crate::rng::{self, StreamRng};
use crate::subgraph::{path_order, PathInstance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    /// Paths kept per meta-path.
    pub k: usize,
    /// Candidate walks drawn per meta-path = `k * pool_multiplier`.
    pub pool_multiplier: usize,
    /// Lower bound on the (cosine) step weight.
    pub floor: f64,
    /// Ranked leftovers kept per meta-path for path insertion.
    pub pool_keep: usize,
    /// Redraws allowed when a step lands on an already visited node.
    pub max_retries: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            k: 5,
            pool_multiplier: 4,
            floor: 1e-3,
            pool_keep: 5,
            max_retries: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplingMode {
    /// Draw `k * pool_multiplier` priority-guided walks.
    Probabilistic,
    /// Use every instance as the candidate pool.
    Exhaustive,
}

/// Paths chosen for one (user, item) pair: the kept top-K per meta-path and
/// the next-ranked leftovers available for insertion.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPaths {
    pub paths: Vec<PathInstance>,
    pub pool: Vec<PathInstance>,
}

pub struct PathSampler<'a> {
    hin: &'a Hin,
    vectors: &'a NodeVectors,
    unit: NodeVectors,
    metapaths: Vec<MetaPath>,
    cfg: SamplerConfig,
    /// Alias tables per (edge, dir), indexed by source node id.
    tables: HashMap<(usize, Dir), Vec<Option<AliasTable>>>,
}

impl<'a> PathSampler<'a> {
    pub fn new(
        hin: &'a Hin,
        vectors: &'a NodeVectors,
        metapaths: Vec<MetaPath>,
        cfg: SamplerConfig,
    ) -> Result<Self> {
        if cfg.k == 0 || cfg.pool_multiplier == 0 {
            return Err(Error::Contract("k and pool_multiplier must be positive".into()));
        }
        for mp in &metapaths {
            mp.check_against(hin)?;
        }
        let unit = vectors.normalized();
        let mut tables = HashMap::new();
        for mp in &metapaths {
            // Only the steps that pick a node before the penultimate one
            // draw from a fixed neighbor distribution.
            for s in 0..mp.len().saturating_sub(3) {
                let step = mp.steps[s];
                let key = (step.edge, step.dir);
                if tables.contains_key(&key) {
                    continue;
                }
                let from_ty = mp.types[s];
                let to_ty = mp.types[s + 1];
                let per_node = (0..hin.count(from_ty) as u32)
                    .map(|id| {
                        let cur = Node::new(from_ty, id);
                        let nbrs = hin.neighbors_dir(cur, step.edge, step.dir);
                        let w: Vec<f64> = nbrs
                            .iter()
                            .map(|&v| {
                                dot(unit.get(cur), unit.get(Node::new(to_ty, v))).max(cfg.floor)
                            })
                            .collect();
                        AliasTable::new(&w)
                    })
                    .collect();
                tables.insert(key, per_node);
            }
        }
        Ok(PathSampler {
            hin,
            vectors,
            unit,
            metapaths,
            cfg,
            tables,
        })
    }

    pub fn metapaths(&self) -> &[MetaPath] {
        &self.metapaths
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn hin(&self) -> &Hin {
        self.hin
    }

    fn instance(&self, mp: usize, nodes: Vec<Node>) -> PathInstance {
        let score = priority_score(&nodes, self.vectors);
        PathInstance {
            nodes,
            metapath: mp,
            score,
        }
    }

    /// All distinct candidates for `(user, item)` under meta-path `mp`,
    /// ranked best first.
    pub fn sample_ranked(
        &self,
        user: u32,
        item: u32,
        mp: usize,
        seed: u64,
        mode: SamplingMode,
    ) -> Vec<PathInstance> {
        let meta = &self.metapaths[mp];
        let u = Node::new(meta.types[0], user);
        let i = Node::new(*meta.types.last().unwrap(), item);
        let raw: Vec<Vec<Node>> = match mode {
            SamplingMode::Exhaustive => {
                let mut out = Vec::new();
                let mut stack = vec![u];
                self.dfs(meta, i, &mut stack, &mut out);
                out
            }
            SamplingMode::Probabilistic => {
                let mut rng =
                    rng::stream(seed, &[rng::tag::SAMPLE, user as u64, item as u64, mp as u64]);
                let mut cache = HashMap::new();
                let mut seen = HashSet::new();
                let mut out = Vec::new();
                for _ in 0..self.cfg.k * self.cfg.pool_multiplier {
                    if let Some(p) = self.walk(meta, u, i, &mut rng, &mut cache) {
                        if seen.insert(p.clone()) {
                            out.push(p);
                        }
                    }
                }
                out
            }
        };
        let mut ranked: Vec<PathInstance> = raw.into_iter().map(|p| self.instance(mp, p)).collect();
        ranked.sort_by(path_order);
        ranked
    }

    /// Top-K paths for one meta-path.
    pub fn sample_top_k_paths(
        &self,
        user: u32,
        item: u32,
        mp: usize,
        seed: u64,
        mode: SamplingMode,
    ) -> Vec<PathInstance> {
        let mut ranked = self.sample_ranked(user, item, mp, seed, mode);
        ranked.truncate(self.cfg.k);
        ranked
    }

    /// Top-K per meta-path plus the insertion pool for one pair.
    pub fn sample_pair(&self, user: u32, item: u32, seed: u64) -> SampledPaths {
        let mut paths = Vec::new();
        let mut pool = Vec::new();
        for mp in 0..self.metapaths.len() {
            let ranked = self.sample_ranked(user, item, mp, seed, SamplingMode::Probabilistic);
            let k = self.cfg.k.min(ranked.len());
            paths.extend_from_slice(&ranked[..k]);
            pool.extend(ranked.into_iter().skip(k).take(self.cfg.pool_keep));
        }
        SampledPaths { paths, pool }
    }

    fn dfs(&self, mp: &MetaPath, item: Node, stack: &mut Vec<Node>, out: &mut Vec<Vec<Node>>) {
        let depth = stack.len();
        let cur = *stack.last().unwrap();
        if depth == mp.len() {
            if cur == item {
                out.push(stack.clone());
            }
            return;
        }
        let step = mp.steps[depth - 1];
        let ty = mp.types[depth];
        for &v in self.hin.neighbors_dir(cur, step.edge, step.dir) {
            let next = Node::new(ty, v);
            let last = depth + 1 == mp.len();
            if (last && next != item) || (!last && next == item) || stack.contains(&next) {
                continue;
            }
            stack.push(next);
            self.dfs(mp, item, stack, out);
            stack.pop();
        }
    }

    fn walk(
        &self,
        mp: &MetaPath,
        u: Node,
        i: Node,
        rng: &mut StreamRng,
        cache: &mut HashMap<(usize, u32), Option<(Vec<u32>, AliasTable)>>,
    ) -> Option<Vec<Node>> {
        let len = mp.len();
        let mut nodes = Vec::with_capacity(len);
        nodes.push(u);
        let last_step = mp.steps[len - 2];
        for s in 0..len - 1 {
            let cur = *nodes.last().unwrap();
            let step: Step = mp.steps[s];
            let ty = mp.types[s + 1];
            if s + 2 == len {
                // Final hop: must land on the item.
                if !self.hin.has_edge(cur, step.edge, step.dir, i.id) {
                    return None;
                }
                nodes.push(i);
            } else if s + 3 == len {
                // Penultimate node: restricted to neighbors adjacent to the item.
                let entry = cache.entry((s, cur.id)).or_insert_with(|| {
                    let a = self.hin.neighbors_dir(cur, step.edge, step.dir);
                    let back = match last_step.dir {
                        Dir::Forward => Dir::Backward,
                        Dir::Backward => Dir::Forward,
                    };
                    let b = self.hin.neighbors_dir(i, last_step.edge, back);
                    let both = intersect_sorted(a, b);
                    let w: Vec<f64> = both
                        .iter()
                        .map(|&v| dot(self.unit.get(cur), self.unit.get(Node::new(ty, v))).max(self.cfg.floor))
                        .collect();
                    AliasTable::new(&w).map(|t| (both, t))
                });
                let (cands, table) = entry.as_ref()?;
                let next = self.draw(rng, &nodes, i, ty, |r| cands[table.sample(r)])?;
                nodes.push(next);
            } else {
                let table = self.tables[&(step.edge, step.dir)][cur.id as usize].as_ref()?;
                let nbrs = self.hin.neighbors_dir(cur, step.edge, step.dir);
                let next = self.draw(rng, &nodes, i, ty, |r| nbrs[table.sample(r)])?;
                nodes.push(next);
            }
        }
        Some(nodes)
    }

    fn draw(
        &self,
        rng: &mut StreamRng,
        visited: &[Node],
        item: Node,
        ty: u8,
        mut pick: impl FnMut(&mut StreamRng) -> u32,
    ) -> Option<Node> {
        for _ in 0..=self.cfg.max_retries {
            let next = Node::new(ty, pick(rng));
            if next != item && !visited.contains(&next) {
                return Some(next);
            }
        }
        None
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64) * (*y as f64)).sum()
}

fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}

/// Every simple instance of `mp` from `user` to `item`, found by brute
/// force over all node combinations of the interior types. Meant for small
/// graphs; fails once more than `cap` instances are found or the search
/// space itself exceeds `cap * 1000` combinations.
pub fn enumerate_paths_exhaustive(
    hin: &Hin,
    vectors: &NodeVectors,
    user: u32,
    item: u32,
    mp_index: usize,
    mp: &MetaPath,
    cap: usize,
) -> Result<Vec<PathInstance>> {
    let u = Node::new(mp.types[0], user);
    let i = Node::new(*mp.types.last().unwrap(), item);
    let interior = &mp.types[1..mp.len() - 1];
    let space: u128 = interior.iter().map(|&t| hin.count(t) as u128).product();
    if space > cap as u128 * 1000 {
        return Err(Error::Overflow { cap });
    }
    let mut out = Vec::new();
    let mut idx = vec![0u32; interior.len()];
    'outer: loop {
        let mut nodes = Vec::with_capacity(mp.len());
        nodes.push(u);
        nodes.extend(interior.iter().zip(&idx).map(|(&t, &id)| Node::new(t, id)));
        nodes.push(i);
        let simple = (0..nodes.len()).all(|a| (a + 1..nodes.len()).all(|b| nodes[a] != nodes[b]));
        let connected = nodes
            .windows(2)
            .zip(&mp.steps)
            .all(|(w, s)| hin.has_edge(w[0], s.edge, s.dir, w[1].id));
        if simple && connected {
            if out.len() == cap {
                return Err(Error::Overflow { cap });
            }
            let score = priority_score(&nodes, vectors);
            out.push(PathInstance {
                nodes,
                metapath: mp_index,
                score,
            });
        }
        // odometer increment
        for (d, &t) in interior.iter().enumerate().rev() {
            idx[d] += 1;
            if (idx[d] as usize) < hin.count(t) {
                continue 'outer;
            }
            idx[d] = 0;
        }
        break;
    }
    Ok(out)
}
