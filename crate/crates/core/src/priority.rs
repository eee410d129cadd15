//! Meta-path guided random walks and skip-gram node vectors.
//!
//! The vectors learned here only feed the priority score used to rank and
//! sample path instances; the recommender never sees them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::alias::AliasTable;
use crate::error::{Error, Result};
use crate::hin::{Hin, Node};
use crate::metapath::MetaPath;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Walk {
    pub nodes: Vec<Node>,
}

/// Walks from every user node, `walks_per_node` per meta-path. A walk cycles
/// the meta-path pattern until `walk_length` nodes or a dead end; walks that
/// never leave their start node are dropped.
pub fn generate_walks(
    hin: &Hin,
    metapaths: &[MetaPath],
    walks_per_node: usize,
    walk_length: usize,
    seed: u64,
) -> Result<Vec<Walk>> {
    if walk_length < 2 {
        return Err(Error::Contract("walk_length must be at least 2".into()));
    }
    for mp in metapaths {
        mp.check_against(hin)?;
    }
    let user_ty = hin.user_type();
    let users = hin.num_users() as u32;
    let mut out = Vec::new();
    for (mi, mp) in metapaths.iter().enumerate() {
        let wrap = mp.wrap_step(hin.schema());
        let per_user: Vec<Vec<Walk>> = (0..users)
            .into_par_iter()
            .map(|u| {
                (0..walks_per_node)
                    .filter_map(|w| {
                        let mut rng =
                            rng::stream(seed, &[rng::tag::EMBED, mi as u64, u as u64, w as u64]);
                        let walk = walk_once(hin, mp, wrap, Node::new(user_ty, u), walk_length, &mut rng);
                        (walk.nodes.len() >= 2).then_some(walk)
                    })
                    .collect()
            })
            .collect();
        out.extend(per_user.into_iter().flatten());
    }
    Ok(out)
}

fn walk_once<R: Rng>(
    hin: &Hin,
    mp: &MetaPath,
    wrap: Option<crate::metapath::Step>,
    start: Node,
    walk_length: usize,
    rng: &mut R,
) -> Walk {
    let mut nodes = Vec::with_capacity(walk_length);
    nodes.push(start);
    let mut pos = 0usize;
    while nodes.len() < walk_length {
        let (step, next_pos) = if pos + 1 < mp.len() {
            (mp.steps[pos], pos + 1)
        } else {
            match wrap {
                Some(s) => (s, 0),
                None => break,
            }
        };
        let cur = *nodes.last().unwrap();
        let nbrs = hin.neighbors_dir(cur, step.edge, step.dir);
        if nbrs.is_empty() {
            break;
        }
        let next = nbrs[rng.gen_range(0..nbrs.len())];
        nodes.push(Node::new(mp.types[next_pos], next));
        pos = next_pos;
    }
    Walk { nodes }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 64,
            window: 2,
            negatives: 5,
            epochs: 5,
            learning_rate: 0.025,
            seed: 0,
        }
    }
}

/// Dense per-node vectors over all node types.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeVectors {
    dim: usize,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    data: Vec<f32>,
    /// Whether the node appeared in any training walk.
    visited: Vec<bool>,
}

impl NodeVectors {
    fn new(dim: usize, counts: Vec<usize>, data: Vec<f32>, visited: Vec<bool>) -> Self {
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        debug_assert_eq!(data.len(), offsets.last().unwrap() * dim);
        NodeVectors {
            dim,
            counts,
            offsets,
            data,
            visited,
        }
    }

    /// Seeded uniform vectors in `[-0.5/d, 0.5/d]` for every node.
    pub fn random(hin: &Hin, dim: usize, seed: u64) -> Self {
        let counts: Vec<usize> = (0..hin.num_types()).map(|t| hin.count(t as u8)).collect();
        let total: usize = counts.iter().sum();
        let mut rng = rng::stream(seed, &[rng::tag::EMBED, 0x1417]);
        let scale = 0.5 / dim as f32;
        let data = (0..total * dim).map(|_| rng.gen_range(-scale..scale)).collect();
        Self::new(dim, counts, data, vec![false; total])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.visited.len()
    }

    #[inline]
    fn index(&self, node: Node) -> usize {
        self.offsets[node.ty as usize] + node.id as usize
    }

    #[inline]
    pub fn get(&self, node: Node) -> &[f32] {
        let i = self.index(node);
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn visited(&self, node: Node) -> bool {
        self.visited[self.index(node)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy with every row scaled to unit length (zero rows stay zero), so
    /// cosine similarity becomes a dot product.
    pub fn normalized(&self) -> NodeVectors {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.dim) {
            let norm = row.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x = (*x as f64 / norm) as f32;
                }
            }
        }
        NodeVectors::new(self.dim, self.counts.clone(), data, self.visited.clone())
    }

    const MAGIC: &'static [u8; 8] = b"CHSTVEC1";

    /// Binary layout: magic, d, type count, per-type counts (u64 LE), then
    /// row-major f32 LE vectors, then one visited byte per node.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(Self::MAGIC);
        buf.extend_from_slice(&(self.dim as u32).to_le_bytes());
        buf.extend_from_slice(&(self.counts.len() as u32).to_le_bytes());
        for &c in &self.counts {
            buf.extend_from_slice(&(c as u64).to_le_bytes());
        }
        for x in &self.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        buf.extend(self.visited.iter().map(|&v| v as u8));
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        BufReader::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let corrupt = |m: &str| Error::Corrupt(format!("{}: {m}", path.display()));
        let mut r = ByteReader::new(&bytes);
        if r.take(8).ok_or_else(|| corrupt("truncated header"))? != Self::MAGIC {
            return Err(corrupt("bad magic"));
        }
        let dim = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        let ntypes = r.u32().ok_or_else(|| corrupt("truncated header"))? as usize;
        let counts = (0..ntypes)
            .map(|_| r.u64().map(|c| c as usize))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| corrupt("truncated header"))?;
        let total: usize = counts.iter().sum();
        let raw = r.take(total * dim * 4).ok_or_else(|| corrupt("truncated vectors"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let visited = r
            .take(total)
            .ok_or_else(|| corrupt("truncated flags"))?
            .iter()
            .map(|&b| b != 0)
            .collect();
        if !r.is_empty() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self::new(dim, counts, data, visited))
    }

    /// Plain-text export: `type<TAB>id<TAB>visited<TAB>x1 x2 ...`.
    pub fn export_text(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (ty, &count) in self.counts.iter().enumerate() {
            for id in 0..count {
                let node = Node::new(ty as u8, id as u32);
                let v: Vec<String> = self.get(node).iter().map(|x| format!("{x:.6}")).collect();
                writeln!(w, "{ty}\t{id}\t{}\t{}", self.visited(node) as u8, v.join(" "))
                    .map_err(|e| Error::io(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    pub(crate) fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    #[allow(dead_code)]
    pub(crate) fn f32(&mut self) -> Option<f32> {
        self.take(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x.clamp(-30.0, 30.0)).exp())
}

/// Skip-gram with negative sampling over the walks. Negatives for a context
/// node are drawn from the unigram^0.75 distribution of its own type.
///
/// Returns the input vectors and the mean loss per epoch.
pub fn train_skipgram(hin: &Hin, walks: &[Walk], cfg: &SkipGramConfig) -> (NodeVectors, Vec<f64>) {
    let dim = cfg.dim.max(1);
    let mut vectors = NodeVectors::random(hin, dim, cfg.seed);
    let n = vectors.num_nodes();
    let mut output = vec![0f32; n * dim];

    let mut freq = vec![0u64; n];
    for w in walks {
        for &node in &w.nodes {
            freq[hin.global(node)] += 1;
        }
    }
    for (v, f) in vectors.visited.iter_mut().zip(&freq) {
        *v = *f > 0;
    }
    let unvisited = vectors.visited.iter().filter(|v| !**v).count();
    if unvisited > 0 {
        debug!("{unvisited} nodes never visited by walks keep their random vector");
    }

    // Per-type negative sampling tables over global indices.
    let type_tables: Vec<Option<(usize, AliasTable)>> = (0..hin.num_types())
        .map(|t| {
            let off = vectors.offsets[t];
            let cnt = vectors.counts[t];
            let w: Vec<f64> = freq[off..off + cnt].iter().map(|&f| (f as f64).powf(0.75)).collect();
            AliasTable::new(&w).map(|a| (off, a))
        })
        .collect();

    let mut order: Vec<usize> = (0..walks.len()).collect();
    let mut rng = rng::stream(cfg.seed, &[rng::tag::EMBED, 0x5347]);
    let tokens: usize = walks.iter().map(|w| w.nodes.len()).sum();
    let total_steps = (tokens * cfg.epochs).max(1) as f32;
    let mut done = 0usize;
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut grad = vec![0f32; dim];

    for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0f64;
        let mut pairs = 0usize;
        for &wi in &order {
            let nodes = &walks[wi].nodes;
            for t in 0..nodes.len() {
                let lr = (cfg.learning_rate * (1.0 - done as f32 / total_steps))
                    .max(cfg.learning_rate * 1e-4);
                done += 1;
                let center = hin.global(nodes[t]);
                let lo = t.saturating_sub(cfg.window);
                let hi = (t + cfg.window + 1).min(nodes.len());
                for c in lo..hi {
                    if c == t {
                        continue;
                    }
                    let ctx_node = nodes[c];
                    let ctx = hin.global(ctx_node);
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let cvec = center * dim..(center + 1) * dim;
                    let mut pair_loss = 0f64;
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (ctx, 1.0f32)
                        } else {
                            let Some((off, table)) = &type_tables[ctx_node.ty as usize] else {
                                break;
                            };
                            let cand = off + table.sample(&mut rng);
                            if cand == ctx {
                                continue;
                            }
                            (cand, 0.0)
                        };
                        let ovec = target * dim..(target + 1) * dim;
                        let dot: f32 = vectors.data[cvec.clone()]
                            .iter()
                            .zip(&output[ovec.clone()])
                            .map(|(a, b)| a * b)
                            .sum();
                        let p = sigmoid(dot);
                        pair_loss -= if label > 0.5 {
                            (p.max(1e-7) as f64).ln()
                        } else {
                            ((1.0 - p).max(1e-7) as f64).ln()
                        };
                        let g = (label - p) * lr;
                        for ((gr, o), x) in grad
                            .iter_mut()
                            .zip(&mut output[ovec])
                            .zip(&vectors.data[cvec.clone()])
                        {
                            *gr += g * *o;
                            *o += g * x;
                        }
                    }
                    for (x, g) in vectors.data[cvec].iter_mut().zip(&grad) {
                        *x += g;
                    }
                    loss_sum += pair_loss;
                    pairs += 1;
                }
            }
        }
        losses.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
        debug!("skip-gram epoch {}: loss {:.4}", losses.len(), losses.last().unwrap());
    }
    (vectors, losses)
}

/// Cosine similarity; a zero-norm side yields 0.
#[inline]
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0f64;
    let mut na = 0f64;
    let mut nb = 0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// Mean cosine similarity between consecutive nodes of a path.
pub fn priority_score(path: &[Node], vectors: &NodeVectors) -> f64 {
    assert!(path.len() >= 2, "a path needs at least two nodes");
    let mut sum = 0f64;
    for w in path.windows(2) {
        let (a, b) = (vectors.get(w[0]), vectors.get(w[1]));
        let c = cosine(a, b);
        if c == 0.0 && (a.iter().all(|x| *x == 0.0) || b.iter().all(|x| *x == 0.0)) {
            warn!("zero-norm vector on pair {:?}-{:?}; cosine taken as 0", w[0], w[1]);
        }
        sum += c;
    }
    sum / (path.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::tests::toy_schema;

    fn vecs(rows: Vec<Vec<f32>>) -> NodeVectors {
        let dim = rows[0].len();
        let n = rows.len();
        NodeVectors::new(dim, vec![n], rows.concat(), vec![true; n])
    }

    #[test]
    fn score_identical_orthogonal_mean() {
        let v = vecs(vec![vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        let p = [Node::new(0, 0), Node::new(0, 1), Node::new(0, 2)];
        assert!((priority_score(&p, &v) - 1.0).abs() < 1e-12);

        let v = vecs(vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert_eq!(priority_score(&p, &v), 0.0);

        // cos(a,b) = 0.5, cos(b,c) = 1.0
        let s = 3f32.sqrt();
        let v = vecs(vec![vec![1.0, 0.0], vec![0.5, s / 2.0], vec![1.0, s]]);
        assert!((priority_score(&p, &v) - 0.75).abs() < 1e-7);
    }

    #[test]
    fn zero_vector_counts_as_zero() {
        let v = vecs(vec![vec![0.0, 0.0], vec![1.0, 0.0]]);
        assert_eq!(priority_score(&[Node::new(0, 0), Node::new(0, 1)], &v), 0.0);
    }

    #[test]
    fn walks_follow_pattern_and_are_deterministic() {
        let hin = Hin::from_raw(&toy_schema(), vec![vec![(0, 0), (0, 1), (1, 1)]]).unwrap();
        let mp = MetaPath::parse("UMUM", hin.schema()).unwrap();
        let walks = generate_walks(&hin, std::slice::from_ref(&mp), 3, 4, 9).unwrap();
        // user 2 is isolated: its walks are dropped
        assert_eq!(walks.len(), 6);
        for w in &walks {
            assert_eq!(w.nodes.len(), 4);
            for (k, pair) in w.nodes.windows(2).enumerate() {
                assert_eq!(pair[0].ty, mp.types[k % 4]);
                let step = mp.steps[k % 3];
                assert!(hin.has_edge(pair[0], step.edge, step.dir, pair[1].id));
            }
        }
        assert_eq!(walks, generate_walks(&hin, &[mp], 3, 4, 9).unwrap());
    }

    #[test]
    fn zero_epochs_keeps_init_and_runs_repeat() {
        let hin = Hin::from_raw(&toy_schema(), vec![vec![(0, 0), (0, 1), (1, 1)]]).unwrap();
        let mp = MetaPath::parse("UMUM", hin.schema()).unwrap();
        let walks = generate_walks(&hin, &[mp], 2, 6, 1).unwrap();
        let cfg = SkipGramConfig { dim: 8, epochs: 0, seed: 5, ..Default::default() };
        let (v, losses) = train_skipgram(&hin, &walks, &cfg);
        assert!(losses.is_empty());
        assert_eq!(v.data, NodeVectors::random(&hin, 8, 5).data);

        let cfg = SkipGramConfig { dim: 8, epochs: 3, seed: 5, ..Default::default() };
        let a = train_skipgram(&hin, &walks, &cfg);
        let b = train_skipgram(&hin, &walks, &cfg);
        assert_eq!(a.0.data, b.0.data);
        assert!(!a.0.visited(Node::new(0, 2)));
    }

    #[test]
    fn save_load_roundtrip_and_truncation() {
        let hin = Hin::from_raw(&toy_schema(), vec![vec![(0, 0), (0, 1), (1, 1)]]).unwrap();
        let v = NodeVectors::random(&hin, 4, 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        v.save(&p).unwrap();
        assert_eq!(NodeVectors::load(&p).unwrap(), v);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(NodeVectors::load(&p), Err(Error::Corrupt(_))));
        v.export_text(&dir.path().join("v.txt")).unwrap();
    }
}
