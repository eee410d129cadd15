//! Typed node/edge store for a heterogeneous information network.
//!
//! Node ids are dense per type. Original ids from the relation files are
//! remapped by ascending rank at load time and kept in a sidecar so the
//! network can be written back out unchanged.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Index of a node type inside a [`Schema`].
pub type TypeId = u8;

/// A node: its type and its dense id within that type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Node {
    pub ty: TypeId,
    pub id: u32,
}

impl Node {
    pub fn new(ty: TypeId, id: u32) -> Self {
        Node { ty, id }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeType {
    pub name: String,
    pub src: String,
    pub dst: String,
    #[serde(default)]
    pub symmetric: bool,
    /// Relation file, relative to the schema file. Only used by
    /// [`Schema::relation_files`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

/// Node and edge type declarations. The `interaction` edge type is the
/// user–item relation; its source type is the user type and its
/// destination type the item type.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub node_types: Vec<NodeType>,
    pub edge_types: Vec<EdgeType>,
    pub interaction: String,
    /// Default meta-paths for this dataset, e.g. `UMUM`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metapaths: Vec<String>,
}

#[derive(Clone, Copy, Debug)]
struct ResolvedEdge {
    src: TypeId,
    dst: TypeId,
    symmetric: bool,
}

impl Schema {
    pub fn from_json_file(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Schema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_types.len() < 2 {
            return Err(Error::Schema("a HIN needs at least two node types".into()));
        }
        if self.node_types.len() > TypeId::MAX as usize {
            return Err(Error::Schema("too many node types".into()));
        }
        let mut names = BTreeSet::new();
        for t in &self.node_types {
            if !names.insert(t.name.as_str()) {
                return Err(Error::Schema(format!("duplicate node type {:?}", t.name)));
            }
        }
        let mut edge_names = BTreeSet::new();
        for e in &self.edge_types {
            if !edge_names.insert(e.name.as_str()) {
                return Err(Error::Schema(format!("duplicate edge type {:?}", e.name)));
            }
            self.type_id(&e.src)?;
            self.type_id(&e.dst)?;
        }
        let inter = self.edge_index(&self.interaction)?;
        let e = &self.edge_types[inter];
        if e.src == e.dst {
            return Err(Error::Schema(
                "the interaction relation must connect two distinct types".into(),
            ));
        }
        Ok(())
    }

    pub fn type_id(&self, name: &str) -> Result<TypeId> {
        self.node_types
            .iter()
            .position(|t| t.name == name)
            .map(|i| i as TypeId)
            .ok_or_else(|| Error::Schema(format!("unknown node type {name:?}")))
    }

    pub fn edge_index(&self, name: &str) -> Result<usize> {
        self.edge_types
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::Schema(format!("dangling edge type {name:?}")))
    }

    /// Relation files declared inline, resolved against `base`.
    pub fn relation_files(&self, base: &Path) -> Result<Vec<(String, PathBuf)>> {
        self.edge_types
            .iter()
            .map(|e| {
                let file = e.file.as_ref().ok_or_else(|| {
                    Error::Schema(format!("edge type {:?} declares no file", e.name))
                })?;
                Ok((e.name.clone(), base.join(file)))
            })
            .collect()
    }

    fn resolve(&self, idx: usize) -> ResolvedEdge {
        let e = &self.edge_types[idx];
        ResolvedEdge {
            src: self.type_id(&e.src).expect("validated"),
            dst: self.type_id(&e.dst).expect("validated"),
            symmetric: e.symmetric,
        }
    }
}

/// Direction in which a meta-path step traverses an edge type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Dir {
    Forward,
    Backward,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<u32>,
}

impl Csr {
    /// Build from (row, col) pairs; rows are `0..rows`. Output rows are
    /// sorted and duplicate-free.
    fn build(rows: usize, pairs: &[(u32, u32)]) -> Csr {
        let mut counts = vec![0usize; rows + 1];
        for &(r, _) in pairs {
            counts[r as usize + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut targets = vec![0u32; pairs.len()];
        for &(r, c) in pairs {
            targets[fill[r as usize]] = c;
            fill[r as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut out = Vec::with_capacity(targets.len());
        offsets.push(0);
        for r in 0..rows {
            let row = &mut targets[counts[r]..counts[r + 1]];
            row.sort_unstable();
            let mut last = None;
            for &t in row.iter() {
                if last != Some(t) {
                    out.push(t);
                    last = Some(t);
                }
            }
            offsets.push(out.len());
        }
        Csr {
            offsets,
            targets: out,
        }
    }

    #[inline]
    fn row(&self, r: u32) -> &[u32] {
        let r = r as usize;
        &self.targets[self.offsets[r]..self.offsets[r + 1]]
    }

    fn nnz(&self) -> usize {
        self.targets.len()
    }

    fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.offsets.len() - 1)
            .flat_map(move |r| self.row(r as u32).iter().map(move |&c| (r as u32, c)))
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Relation {
    forward: Csr,
    /// Reverse adjacency. For symmetric same-type relations `forward`
    /// already holds both directions and this is identical to it.
    backward: Csr,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RelationStats {
    pub name: String,
    pub src_count: usize,
    pub dst_count: usize,
    pub edges: usize,
}

/// The loaded network. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Hin {
    schema: Schema,
    resolved: Vec<ResolvedEdge>,
    counts: Vec<usize>,
    offsets: Vec<usize>,
    relations: Vec<Relation>,
    original_ids: Vec<Vec<u64>>,
    interaction: usize,
}

impl PartialEq for ResolvedEdge {
    fn eq(&self, o: &Self) -> bool {
        self.src == o.src && self.dst == o.dst && self.symmetric == o.symmetric
    }
}

fn parse_relation_file(path: &Path) -> Result<Vec<(u64, u64)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut fields = trimmed.split(['\t', ' ']).filter(|f| !f.is_empty());
        let mut next_id = |what: &str| -> Result<u64> {
            let f = fields.next().ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: format!("missing {what} id"),
            })?;
            f.parse::<u64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: no + 1,
                msg: format!("{what} id {f:?} is not a non-negative integer"),
            })
        };
        let src = next_id("source")?;
        let dst = next_id("destination")?;
        // Remaining columns (ratings, timestamps) are discarded.
        out.push((src, dst));
    }
    Ok(out)
}

impl Hin {
    /// Load relation files for `schema`. Every edge type of the schema must
    /// be given exactly one file.
    pub fn load(schema: &Schema, relation_files: &[(String, PathBuf)]) -> Result<Hin> {
        schema.validate()?;
        let mut raw: Vec<Option<Vec<(u64, u64)>>> = vec![None; schema.edge_types.len()];
        for (name, path) in relation_files {
            let idx = schema.edge_index(name)?;
            if raw[idx].is_some() {
                return Err(Error::Schema(format!("relation {name:?} given twice")));
            }
            let pairs = parse_relation_file(path)?;
            if pairs.is_empty() {
                warn!("relation {name:?} ({}) is empty", path.display());
            }
            raw[idx] = Some(pairs);
        }
        let raw = raw
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                r.ok_or_else(|| {
                    Error::Schema(format!(
                        "no file given for edge type {:?}",
                        schema.edge_types[i].name
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_raw(schema, raw)
    }

    /// Build from in-memory edge lists in original-id space, one list per
    /// schema edge type.
    pub fn from_raw(schema: &Schema, raw: Vec<Vec<(u64, u64)>>) -> Result<Hin> {
        schema.validate()?;
        if raw.len() != schema.edge_types.len() {
            return Err(Error::Schema("one edge list per edge type expected".into()));
        }
        let resolved: Vec<ResolvedEdge> =
            (0..schema.edge_types.len()).map(|i| schema.resolve(i)).collect();

        let ntypes = schema.node_types.len();
        let mut seen: Vec<Vec<u64>> = vec![Vec::new(); ntypes];
        for (pairs, r) in raw.iter().zip(&resolved) {
            for &(s, d) in pairs {
                seen[r.src as usize].push(s);
                seen[r.dst as usize].push(d);
            }
        }
        let mut original_ids = Vec::with_capacity(ntypes);
        for (t, mut ids) in seen.into_iter().enumerate() {
            ids.sort_unstable();
            ids.dedup();
            let declared = schema.node_types[t].count;
            if ids.len() > declared {
                return Err(Error::Schema(format!(
                    "node type {:?} declares {} nodes but relations reference {} distinct ids \
                     (id out of declared range)",
                    schema.node_types[t].name,
                    declared,
                    ids.len()
                )));
            }
            original_ids.push(ids);
        }
        let counts: Vec<usize> = schema.node_types.iter().map(|t| t.count).collect();
        let mut offsets = Vec::with_capacity(ntypes + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }

        let remap = |t: TypeId, id: u64| -> u32 {
            original_ids[t as usize].binary_search(&id).expect("collected above") as u32
        };

        let mut relations = Vec::with_capacity(raw.len());
        for (idx, (pairs, r)) in raw.iter().zip(&resolved).enumerate() {
            let same_type = r.src == r.dst;
            let mut dense = Vec::with_capacity(pairs.len() * if r.symmetric { 2 } else { 1 });
            let mut loops = 0usize;
            for &(s, d) in pairs {
                let (s, d) = (remap(r.src, s), remap(r.dst, d));
                if same_type && s == d {
                    loops += 1;
                    continue;
                }
                dense.push((s, d));
                if same_type && r.symmetric {
                    dense.push((d, s));
                }
            }
            if loops > 0 {
                warn!(
                    "relation {:?}: dropped {loops} self-loops",
                    schema.edge_types[idx].name
                );
            }
            let forward = Csr::build(counts[r.src as usize], &dense);
            let backward = if same_type && r.symmetric {
                forward.clone()
            } else {
                let rev: Vec<(u32, u32)> = forward.pairs().map(|(s, d)| (d, s)).collect();
                Csr::build(counts[r.dst as usize], &rev)
            };
            relations.push(Relation { forward, backward });
        }

        let interaction = schema.edge_index(&schema.interaction)?;
        let hin = Hin {
            schema: schema.clone(),
            resolved,
            counts,
            offsets,
            relations,
            original_ids,
            interaction,
        };
        for s in hin.stats() {
            info!(
                "relation {}: {} x {} nodes, {} edges",
                s.name, s.src_count, s.dst_count, s.edges
            );
        }
        Ok(hin)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_types(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, ty: TypeId) -> usize {
        self.counts[ty as usize]
    }

    /// Total number of nodes over all types.
    pub fn num_nodes(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Position of `node` in a single global index over all types.
    #[inline]
    pub fn global(&self, node: Node) -> usize {
        self.offsets[node.ty as usize] + node.id as usize
    }

    pub fn from_global(&self, g: usize) -> Node {
        let ty = self.offsets[1..].iter().position(|&o| g < o).expect("global index in range");
        Node::new(ty as TypeId, (g - self.offsets[ty]) as u32)
    }

    pub fn contains(&self, node: Node) -> bool {
        (node.ty as usize) < self.counts.len() && (node.id as usize) < self.counts[node.ty as usize]
    }

    pub fn user_type(&self) -> TypeId {
        self.resolved[self.interaction].src
    }

    pub fn item_type(&self) -> TypeId {
        self.resolved[self.interaction].dst
    }

    pub fn num_users(&self) -> usize {
        self.count(self.user_type())
    }

    pub fn num_items(&self) -> usize {
        self.count(self.item_type())
    }

    pub fn interaction_edge(&self) -> usize {
        self.interaction
    }

    pub fn edge_endpoints(&self, edge: usize) -> (TypeId, TypeId) {
        let r = &self.resolved[edge];
        (r.src, r.dst)
    }

    /// Items the user interacted with, sorted ascending.
    pub fn user_items(&self, user: u32) -> &[u32] {
        self.relations[self.interaction].forward.row(user)
    }

    /// Neighbors of `node` across `edge` in the given direction.
    #[inline]
    pub fn neighbors_dir(&self, node: Node, edge: usize, dir: Dir) -> &[u32] {
        let rel = &self.relations[edge];
        match dir {
            Dir::Forward => rel.forward.row(node.id),
            Dir::Backward => rel.backward.row(node.id),
        }
    }

    /// Neighbors of `node` across `edge`, from whichever side of the edge
    /// type the node sits on.
    pub fn neighbors(&self, node: Node, edge: usize) -> Result<&[u32]> {
        let r = self
            .resolved
            .get(edge)
            .ok_or_else(|| Error::Schema(format!("no edge type with index {edge}")))?;
        if !self.contains(node) {
            return Err(Error::Schema(format!("node {node:?} does not exist")));
        }
        if node.ty == r.src {
            Ok(self.neighbors_dir(node, edge, Dir::Forward))
        } else if node.ty == r.dst {
            Ok(self.neighbors_dir(node, edge, Dir::Backward))
        } else {
            Err(Error::Schema(format!(
                "edge type {:?} is not incident to node type {:?}",
                self.schema.edge_types[edge].name, self.schema.node_types[node.ty as usize].name
            )))
        }
    }

    pub fn has_edge(&self, from: Node, edge: usize, dir: Dir, to: u32) -> bool {
        self.neighbors_dir(from, edge, dir).binary_search(&to).is_ok()
    }

    pub fn stats(&self) -> Vec<RelationStats> {
        self.schema
            .edge_types
            .iter()
            .zip(&self.resolved)
            .zip(&self.relations)
            .map(|((e, r), rel)| RelationStats {
                name: e.name.clone(),
                src_count: self.counts[r.src as usize],
                dst_count: self.counts[r.dst as usize],
                edges: if r.src == r.dst && r.symmetric {
                    rel.forward.nnz() / 2
                } else {
                    rel.forward.nnz()
                },
            })
            .collect()
    }

    pub fn original_id(&self, node: Node) -> Option<u64> {
        self.original_ids[node.ty as usize].get(node.id as usize).copied()
    }

    /// Copy of this network whose interaction relation holds only `pairs`
    /// (dense ids). Used to hide held-out interactions from path sampling.
    pub fn with_interactions(&self, pairs: impl IntoIterator<Item = (u32, u32)>) -> Hin {
        let r = self.resolved[self.interaction];
        let dense: Vec<(u32, u32)> = pairs.into_iter().collect();
        let forward = Csr::build(self.counts[r.src as usize], &dense);
        let rev: Vec<(u32, u32)> = forward.pairs().map(|(s, d)| (d, s)).collect();
        let backward = Csr::build(self.counts[r.dst as usize], &rev);
        let mut out = self.clone();
        out.relations[self.interaction] = Relation { forward, backward };
        out
    }

    /// Write every relation back out with original ids, one file per edge
    /// type named after the edge type. Returns the (edge type, path) list
    /// accepted by [`Hin::load`].
    pub fn write_relations(&self, dir: &Path) -> Result<Vec<(String, PathBuf)>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        for (idx, e) in self.schema.edge_types.iter().enumerate() {
            let path = dir.join(format!("{}.tsv", e.name));
            let file = File::create(&path).map_err(|err| Error::io(&path, err))?;
            let mut w = BufWriter::new(file);
            let r = self.resolved[idx];
            for (s, d) in self.relations[idx].forward.pairs() {
                if r.src == r.dst && r.symmetric && s > d {
                    continue;
                }
                let so = self.original_ids[r.src as usize][s as usize];
                let dst_o = self.original_ids[r.dst as usize][d as usize];
                writeln!(w, "{so}\t{dst_o}").map_err(|err| Error::io(&path, err))?;
            }
            w.flush().map_err(|err| Error::io(&path, err))?;
            out.push((e.name.clone(), path));
        }
        Ok(out)
    }
}

/// Leave-one-out split of the interaction relation, indexed by user.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSplit {
    pub train: Vec<Vec<u32>>,
    pub valid: Vec<Option<u32>>,
    pub test: Vec<Option<u32>>,
    pub seed: u64,
}

impl InteractionSplit {
    pub fn num_users(&self) -> usize {
        self.train.len()
    }

    /// Users with a held-out test item.
    pub fn evaluable(&self, user: u32) -> bool {
        self.test[user as usize].is_some()
    }

    pub fn evaluable_users(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.num_users() as u32).filter(|&u| self.evaluable(u))
    }

    pub fn train_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.train
            .iter()
            .enumerate()
            .flat_map(|(u, items)| items.iter().map(move |&i| (u as u32, i)))
    }

    pub fn num_train(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Hold out one test and one validation interaction per user with at least
/// three interactions. Users with fewer keep everything in train and are not
/// evaluated.
pub fn split_leave_one_out(hin: &Hin, seed: u64) -> InteractionSplit {
    let users = hin.num_users();
    let mut train = Vec::with_capacity(users);
    let mut valid = Vec::with_capacity(users);
    let mut test = Vec::with_capacity(users);
    for u in 0..users as u32 {
        let mut items = hin.user_items(u).to_vec();
        if items.len() < 3 {
            train.push(items);
            valid.push(None);
            test.push(None);
            continue;
        }
        let mut rng = rng::stream(seed, &[rng::tag::SPLIT, u as u64]);
        items.shuffle(&mut rng);
        let t = items.pop().unwrap();
        let v = items.pop().unwrap();
        items.sort_unstable();
        train.push(items);
        valid.push(Some(v));
        test.push(Some(t));
    }
    InteractionSplit {
        train,
        valid,
        test,
        seed,
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn toy_schema() -> Schema {
        Schema {
            node_types: vec![
                NodeType { name: "U".into(), count: 3 },
                NodeType { name: "M".into(), count: 3 },
            ],
            edge_types: vec![EdgeType {
                name: "UM".into(),
                src: "U".into(),
                dst: "M".into(),
                symmetric: false,
                file: None,
            }],
            interaction: "UM".into(),
            metapaths: vec![],
        }
    }

    fn toy() -> Hin {
        Hin::from_raw(&toy_schema(), vec![vec![(0, 0), (0, 1), (1, 1)]]).unwrap()
    }

    #[test]
    fn toy_adjacency() {
        let hin = toy();
        assert_eq!(hin.neighbors(Node::new(0, 0), 0).unwrap(), &[0, 1]);
        assert_eq!(hin.neighbors(Node::new(0, 1), 0).unwrap(), &[1]);
        assert_eq!(hin.neighbors(Node::new(1, 1), 0).unwrap(), &[0, 1]);
        // user 2 is declared but isolated
        assert!(hin.neighbors(Node::new(0, 2), 0).unwrap().is_empty());
    }

    #[test]
    fn neighbors_rejects_foreign_type() {
        let mut schema = toy_schema();
        schema.node_types.push(NodeType { name: "G".into(), count: 1 });
        let hin = Hin::from_raw(&schema, vec![vec![(0, 0)]]).unwrap();
        assert!(matches!(hin.neighbors(Node::new(2, 0), 0), Err(Error::Schema(_))));
    }

    #[test]
    fn too_many_ids_is_schema_error() {
        let err = Hin::from_raw(&toy_schema(), vec![vec![(0, 0), (1, 0), (2, 0), (3, 0)]]);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn symmetric_same_type_relation() {
        let schema = Schema {
            node_types: vec![
                NodeType { name: "U".into(), count: 1 },
                NodeType { name: "M".into(), count: 3 },
            ],
            edge_types: vec![
                EdgeType { name: "UM".into(), src: "U".into(), dst: "M".into(), symmetric: false, file: None },
                EdgeType { name: "MM".into(), src: "M".into(), dst: "M".into(), symmetric: true, file: None },
            ],
            interaction: "UM".into(),
            metapaths: vec![],
        };
        let hin =
            Hin::from_raw(&schema, vec![vec![(0, 0)], vec![(0, 1), (1, 2), (2, 2), (1, 0)]]).unwrap();
        assert_eq!(hin.neighbors(Node::new(1, 0), 1).unwrap(), &[1]);
        assert_eq!(hin.neighbors(Node::new(1, 1), 1).unwrap(), &[0, 2]);
        assert_eq!(hin.neighbors(Node::new(1, 2), 1).unwrap(), &[1]);
        assert_eq!(hin.stats()[1].edges, 2);
    }

    #[test]
    fn split_rules() {
        let schema = Schema {
            node_types: vec![
                NodeType { name: "U".into(), count: 2 },
                NodeType { name: "M".into(), count: 4 },
            ],
            edge_types: toy_schema().edge_types,
            interaction: "UM".into(),
            metapaths: vec![],
        };
        let hin = Hin::from_raw(
            &schema,
            vec![vec![(0, 0), (0, 1), (0, 2), (0, 3), (1, 0), (1, 2)]],
        )
        .unwrap();
        let s = split_leave_one_out(&hin, 11);
        assert_eq!(s.train[0].len(), 2);
        assert!(s.valid[0].is_some() && s.test[0].is_some());
        assert_ne!(s.valid[0], s.test[0]);
        let mut all: Vec<u32> = s.train[0].clone();
        all.extend(s.valid[0]);
        all.extend(s.test[0]);
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3]);
        assert_eq!(s.train[1], vec![0, 2]);
        assert!(!s.evaluable(1));
        assert_eq!(s, split_leave_one_out(&hin, 11));
    }
}
