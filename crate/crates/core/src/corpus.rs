//! Persisted store of per-pair subgraphs.
//!
//! File layout (all integers little endian):
//!
//! ```text
//! magic "CHSTCRP\0" | version u32 | k u32 | pool_multiplier u32 | seed u64
//! | metapath count u16 | per metapath: name len u16, utf-8 bytes
//! | entry count u64 | block count u32
//! | per block: payload len u32, crc32 u32, payload
//! ```
//!
//! A block payload holds up to [`BLOCK_ENTRIES`] entries. Each entry stores
//! user, item, the kept paths, the insertion pool and the multi-slot
//! element list with one precursor bitmap per element.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use log::info;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hin::Node;
use crate::priority::ByteReader;
use crate::sampler::PathSampler;
use crate::subgraph::{merge_paths, to_multislot, HeteroSubgraph, MultiSlotSequence, PathInstance, SeqElement};

const MAGIC: &[u8; 8] = b"CHSTCRP\0";
const VERSION: u32 = 1;
pub const BLOCK_ENTRIES: usize = 1024;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub user: Node,
    pub item: Node,
    pub paths: Vec<PathInstance>,
    pub pool: Vec<PathInstance>,
    pub sequence: MultiSlotSequence,
}

impl CorpusEntry {
    pub fn subgraph(&self) -> HeteroSubgraph {
        merge_paths(self.user, self.item, &self.paths).expect("stored paths share endpoints")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusMeta {
    pub k: usize,
    pub pool_multiplier: usize,
    pub metapaths: Vec<String>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgraphCorpus {
    pub meta: CorpusMeta,
    entries: BTreeMap<(u32, u32), CorpusEntry>,
}

/// Sample the subgraph of one pair and encode it. Pairs with no connecting
/// path get the two-element fallback sequence.
pub fn build_entry(sampler: &PathSampler<'_>, user: u32, item: u32, seed: u64) -> CorpusEntry {
    let hin = sampler.hin();
    let u = Node::new(hin.user_type(), user);
    let i = Node::new(hin.item_type(), item);
    let sampled = sampler.sample_pair(user, item, seed);
    let sequence = if sampled.paths.is_empty() {
        MultiSlotSequence::fallback(u, i)
    } else {
        let g = merge_paths(u, i, &sampled.paths).expect("sampler paths share endpoints");
        to_multislot(&g).expect("non-empty subgraph")
    };
    CorpusEntry {
        user: u,
        item: i,
        paths: sampled.paths,
        pool: sampled.pool,
        sequence,
    }
}

impl SubgraphCorpus {
    pub fn new(meta: CorpusMeta) -> Self {
        SubgraphCorpus {
            meta,
            entries: BTreeMap::new(),
        }
    }

    /// Build entries for all `pairs` in parallel. Each pair draws from its own
    /// seeded stream, so the result does not depend on scheduling.
    pub fn build(sampler: &PathSampler<'_>, pairs: &[(u32, u32)], seed: u64) -> Self {
        let cfg = sampler.config();
        let meta = CorpusMeta {
            k: cfg.k,
            pool_multiplier: cfg.pool_multiplier,
            metapaths: sampler.metapaths().iter().map(|m| m.name.clone()).collect(),
            seed,
        };
        let built: Vec<CorpusEntry> = pairs
            .par_iter()
            .map(|&(u, i)| build_entry(sampler, u, i, seed))
            .collect();
        let mut corpus = Self::new(meta);
        for e in built {
            corpus.insert(e);
        }
        info!("built {} subgraphs", corpus.len());
        corpus
    }

    pub fn insert(&mut self, entry: CorpusEntry) {
        self.entries.insert((entry.user.id, entry.item.id), entry);
    }

    pub fn get(&self, user: u32, item: u32) -> Option<&CorpusEntry> {
        self.entries.get(&(user, item))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &CorpusEntry> {
        self.entries.values()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.meta.pool_multiplier as u32).to_le_bytes());
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&(self.meta.metapaths.len() as u16).to_le_bytes());
        for name in &self.meta.metapaths {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        let entries: Vec<&CorpusEntry> = self.entries.values().collect();
        let blocks: Vec<&[&CorpusEntry]> = entries.chunks(BLOCK_ENTRIES).collect();
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for block in blocks {
            let mut payload = Vec::new();
            for e in block {
                encode_entry(e, &mut payload);
            }
            out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
            out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        w.write_all(&out).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|m| Error::Corrupt(format!("{}: {m}", path.display())))
    }

    fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = ByteReader::new(bytes);
        let trunc = || "truncated header".to_string();
        if r.take(8).ok_or_else(trunc)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = r.u32().ok_or_else(trunc)?;
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let k = r.u32().ok_or_else(trunc)? as usize;
        let pool_multiplier = r.u32().ok_or_else(trunc)? as usize;
        let seed = r.u64().ok_or_else(trunc)?;
        let nmp = r.u16().ok_or_else(trunc)?;
        let mut metapaths = Vec::with_capacity(nmp as usize);
        for _ in 0..nmp {
            let len = r.u16().ok_or_else(trunc)? as usize;
            let name = r.take(len).ok_or_else(trunc)?;
            metapaths.push(String::from_utf8(name.to_vec()).map_err(|_| "bad meta-path name")?);
        }
        let count = r.u64().ok_or_else(trunc)? as usize;
        let nblocks = r.u32().ok_or_else(trunc)?;
        let mut corpus = Self::new(CorpusMeta {
            k,
            pool_multiplier,
            metapaths,
            seed,
        });
        for b in 0..nblocks {
            let len = r.u32().ok_or_else(|| format!("block {b}: truncated"))? as usize;
            let crc = r.u32().ok_or_else(|| format!("block {b}: truncated"))?;
            let payload = r.take(len).ok_or_else(|| format!("block {b}: truncated"))?;
            if crc32fast::hash(payload) != crc {
                return Err(format!("block {b}: checksum mismatch"));
            }
            let mut br = ByteReader::new(payload);
            while !br.is_empty() {
                let e = decode_entry(&mut br).ok_or_else(|| format!("block {b}: malformed entry"))?;
                e.sequence.check().map_err(|err| format!("block {b}: {err}"))?;
                corpus.insert(e);
            }
        }
        if !r.is_empty() {
            return Err("trailing bytes".into());
        }
        if corpus.len() != count {
            return Err(format!("expected {count} entries, found {}", corpus.len()));
        }
        Ok(corpus)
    }
}

/// Subgraphs for arbitrary pairs: stored corpus entries first, otherwise
/// sampled on demand with the corpus seed (so results are deterministic per
/// pair) and kept in a bounded cache.
pub struct SubgraphSource<'a> {
    sampler: &'a PathSampler<'a>,
    corpus: &'a SubgraphCorpus,
    cache: Mutex<HashMap<(u32, u32), CorpusEntry>>,
    cap: usize,
}

impl<'a> SubgraphSource<'a> {
    pub fn new(sampler: &'a PathSampler<'a>, corpus: &'a SubgraphCorpus) -> Self {
        SubgraphSource {
            sampler,
            corpus,
            cache: Mutex::new(HashMap::new()),
            cap: 200_000,
        }
    }

    pub fn sampler(&self) -> &PathSampler<'a> {
        self.sampler
    }

    pub fn corpus(&self) -> &SubgraphCorpus {
        self.corpus
    }

    pub fn entry(&self, user: u32, item: u32) -> Cow<'a, CorpusEntry> {
        if let Some(e) = self.corpus.get(user, item) {
            return Cow::Borrowed(e);
        }
        if let Some(e) = self.cache.lock().unwrap().get(&(user, item)) {
            return Cow::Owned(e.clone());
        }
        let e = build_entry(self.sampler, user, item, self.corpus.meta.seed);
        let mut cache = self.cache.lock().unwrap();
        if cache.len() >= self.cap {
            cache.clear();
        }
        cache.insert((user, item), e.clone());
        Cow::Owned(e)
    }
}

fn encode_paths(paths: &[PathInstance], out: &mut Vec<u8>) {
    out.extend_from_slice(&(paths.len() as u16).to_le_bytes());
    for p in paths {
        out.push(p.metapath as u8);
        out.push(p.nodes.len() as u8);
        out.extend_from_slice(&p.score.to_le_bytes());
        for n in &p.nodes {
            out.push(n.ty);
            out.extend_from_slice(&n.id.to_le_bytes());
        }
    }
}

fn decode_paths(r: &mut ByteReader<'_>) -> Option<Vec<PathInstance>> {
    let n = r.u16()?;
    (0..n)
        .map(|_| {
            let metapath = r.u8()? as usize;
            let len = r.u8()? as usize;
            let score = r.f64()?;
            let nodes = (0..len)
                .map(|_| Some(Node::new(r.u8()?, r.u32()?)))
                .collect::<Option<Vec<_>>>()?;
            Some(PathInstance {
                nodes,
                metapath,
                score,
            })
        })
        .collect()
}

fn encode_entry(e: &CorpusEntry, out: &mut Vec<u8>) {
    out.extend_from_slice(&e.user.id.to_le_bytes());
    out.extend_from_slice(&e.item.id.to_le_bytes());
    out.push(e.user.ty);
    out.push(e.item.ty);
    encode_paths(&e.paths, out);
    encode_paths(&e.pool, out);
    let s = &e.sequence;
    let n = s.elements.len();
    out.extend_from_slice(&(n as u16).to_le_bytes());
    out.extend_from_slice(&(s.user_pos as u16).to_le_bytes());
    out.extend_from_slice(&(s.item_pos as u16).to_le_bytes());
    let bitmap_len = n.div_ceil(8);
    for el in &s.elements {
        out.push(el.node.ty);
        out.extend_from_slice(&el.node.id.to_le_bytes());
        out.extend_from_slice(&el.slot.to_le_bytes());
        let mut bits = vec![0u8; bitmap_len];
        for &p in &el.precursors {
            bits[p as usize / 8] |= 1 << (p % 8);
        }
        out.extend_from_slice(&bits);
    }
}

fn decode_entry(r: &mut ByteReader<'_>) -> Option<CorpusEntry> {
    let uid = r.u32()?;
    let iid = r.u32()?;
    let uty = r.u8()?;
    let ity = r.u8()?;
    let paths = decode_paths(r)?;
    let pool = decode_paths(r)?;
    let n = r.u16()? as usize;
    let user_pos = r.u16()? as usize;
    let item_pos = r.u16()? as usize;
    let bitmap_len = n.div_ceil(8);
    let mut elements = Vec::with_capacity(n);
    for _ in 0..n {
        let node = Node::new(r.u8()?, r.u32()?);
        let slot = r.u16()?;
        let bits = r.take(bitmap_len)?;
        let precursors = (0..n as u16)
            .filter(|&p| bits[p as usize / 8] & (1 << (p % 8)) != 0)
            .collect();
        elements.push(SeqElement {
            node,
            slot,
            precursors,
        });
    }
    Some(CorpusEntry {
        user: Node::new(uty, uid),
        item: Node::new(ity, iid),
        paths,
        pool,
        sequence: MultiSlotSequence {
            elements,
            user_pos,
            item_pos,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> CorpusMeta {
        CorpusMeta {
            k: 5,
            pool_multiplier: 4,
            metapaths: vec!["UMUM".into(), "UMGM".into()],
            seed: 42,
        }
    }

    fn entry(u: u32, i: u32) -> CorpusEntry {
        let un = Node::new(0, u);
        let inode = Node::new(1, i);
        let p = PathInstance {
            nodes: vec![un, Node::new(1, i + 1), Node::new(0, u + 1), inode],
            metapath: 0,
            score: 0.25,
        };
        let g = merge_paths(un, inode, std::slice::from_ref(&p)).unwrap();
        CorpusEntry {
            user: un,
            item: inode,
            paths: vec![p.clone()],
            pool: vec![PathInstance { score: 0.1, ..p }],
            sequence: to_multislot(&g).unwrap(),
        }
    }

    #[test]
    fn roundtrip_empty_and_full() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let empty = SubgraphCorpus::new(meta());
        empty.save(&path).unwrap();
        assert_eq!(SubgraphCorpus::load(&path).unwrap(), empty);

        let mut c = SubgraphCorpus::new(meta());
        for u in 0..2500 {
            c.insert(entry(u, u % 7));
        }
        c.save(&path).unwrap();
        assert_eq!(SubgraphCorpus::load(&path).unwrap(), c);
    }

    #[test]
    fn truncation_and_bitflips_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        let mut c = SubgraphCorpus::new(meta());
        for u in 0..10 {
            c.insert(entry(u, 3));
        }
        c.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(SubgraphCorpus::load(&path), Err(Error::Corrupt(_))));
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x40;
        std::fs::write(&path, &flipped).unwrap();
        assert!(matches!(SubgraphCorpus::load(&path), Err(Error::Corrupt(_))));
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        std::fs::write(&path, &wrong_version).unwrap();
        assert!(matches!(SubgraphCorpus::load(&path), Err(Error::Corrupt(_))));
    }
}
