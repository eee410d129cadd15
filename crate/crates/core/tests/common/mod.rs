#![allow(dead_code)]

use chest::hin::{EdgeType, Hin, Node, NodeType, Schema};
use chest::metapath::MetaPath;
use chest::model::{EncoderInput, ModelDims};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn nt(name: &str, count: usize) -> NodeType {
    NodeType { name: name.into(), count }
}

pub fn et(name: &str, src: &str, dst: &str, symmetric: bool) -> EdgeType {
    EdgeType {
        name: name.into(),
        src: src.into(),
        dst: dst.into(),
        symmetric,
        file: None,
    }
}

/// Users, items and attributes with user-item, item-attribute and
/// item-item relations.
pub fn uia_schema(users: usize, items: usize, attrs: usize) -> Schema {
    Schema {
        node_types: vec![nt("U", users), nt("I", items), nt("A", attrs)],
        edge_types: vec![
            et("UI", "U", "I", false),
            et("IA", "I", "A", false),
            et("II", "I", "I", true),
        ],
        interaction: "UI".into(),
        metapaths: vec![],
    }
}

/// A random network with at most 20 nodes. Every node id is used at least
/// once so the declared counts are exact.
pub fn random_hin(seed: u64) -> Hin {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let users = r.gen_range(2..=6);
    let items = r.gen_range(3..=8);
    let attrs = r.gen_range(1..=20 - users - items).min(5);
    let density = r.gen_range(0.3..0.8);
    let mut ui = Vec::new();
    for u in 0..users as u64 {
        for i in 0..items as u64 {
            if r.gen_bool(density) {
                ui.push((u, i));
            }
        }
        ui.push((u, r.gen_range(0..items as u64)));
    }
    for i in 0..items as u64 {
        ui.push((r.gen_range(0..users as u64), i));
    }
    let mut ia: Vec<(u64, u64)> = (0..attrs as u64).map(|a| (r.gen_range(0..items as u64), a)).collect();
    for i in 0..items as u64 {
        for a in 0..attrs as u64 {
            if r.gen_bool(0.3) {
                ia.push((i, a));
            }
        }
    }
    let mut ii = Vec::new();
    for a in 0..items as u64 {
        for b in a + 1..items as u64 {
            if r.gen_bool(0.25) {
                ii.push((a, b));
            }
        }
    }
    ui.sort_unstable();
    ui.dedup();
    ia.sort_unstable();
    ia.dedup();
    Hin::from_raw(&uia_schema(users, items, attrs), vec![ui, ia, ii]).unwrap()
}

pub fn uia_metapaths(hin: &Hin) -> Vec<MetaPath> {
    ["UIUI", "UIAI", "UIII", "UI"]
        .iter()
        .map(|s| MetaPath::parse(s, hin.schema()).unwrap())
        .collect()
}

/// The three-path example network: u1 reaches i1 through i2-u2 and through
/// i3 with two attributes a1, a2. Dense ids: u1 = 0, u2 = 1, i1 = 0, i2 = 1,
/// i3 = 2, a1 = 0, a2 = 1.
pub fn example_hin() -> Hin {
    let schema = Schema {
        node_types: vec![nt("U", 2), nt("I", 3), nt("A", 2)],
        edge_types: vec![et("UI", "U", "I", false), et("IA", "I", "A", false)],
        interaction: "UI".into(),
        metapaths: vec!["UIUI".into(), "UIAI".into()],
    };
    // u1-i2, u1-i3, u2-i2, u2-i1; i3-a1, i3-a2, i1-a1, i1-a2
    let ui = vec![(0, 1), (0, 2), (1, 1), (1, 0)];
    let ia = vec![(2, 0), (2, 1), (0, 0), (0, 1)];
    Hin::from_raw(&schema, vec![ui, ia]).unwrap()
}

pub fn u(id: u32) -> Node {
    Node::new(0, id)
}

pub fn i(id: u32) -> Node {
    Node::new(1, id)
}

pub fn a(id: u32) -> Node {
    Node::new(2, id)
}

/// d = 8, h = 2, L = 1 over 10 nodes of 3 types.
pub fn small_dims() -> ModelDims {
    ModelDims {
        d: 8,
        heads: 2,
        layers: 1,
        d_ff: 16,
        num_nodes: 10,
        num_types: 3,
        num_slots: 4,
        max_positions: 8,
        num_metapaths: 2,
        layer_norm: true,
    }
}

/// A six-element sequence over `small_dims`; `shift` varies two node ids.
pub fn six_element_input(shift: u32) -> EncoderInput {
    EncoderInput {
        ids: vec![Some(0), Some(3 + shift), Some(5), Some(1), Some(7), Some(2 + shift)],
        types: vec![0, 1, 2, 0, 2, 1],
        slots: vec![0, 1, 1, 2, 2, 3],
        precursors: vec![vec![], vec![0], vec![0], vec![1, 2], vec![2], vec![3, 4]],
        user_pos: 0,
        item_pos: 5,
    }
}
