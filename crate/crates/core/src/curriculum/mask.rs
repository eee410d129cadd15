//! Node and edge masking for the elementary course.

use rand::Rng;

use crate::hin::{Hin, Node};
use crate::model::{EncoderInput, MepTarget, MnpTarget};
use crate::rng;

/// Masked positions and links of one sequence with their sampled negatives.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MaskSpec {
    pub nodes: Vec<MnpTarget>,
    pub edges: Vec<MepTarget>,
}

impl MaskSpec {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty() && self.edges.is_empty()
    }
}

/// Draws are redone when nothing was masked; after this many attempts one
/// candidate is picked uniformly instead.
const MAX_REDRAWS: usize = 64;

fn draw_mask<R: Rng>(n: usize, prob: f64, rng: &mut R) -> Vec<usize> {
    for _ in 0..MAX_REDRAWS {
        let picked: Vec<usize> = (0..n).filter(|_| rng.gen_bool(prob)).collect();
        if !picked.is_empty() {
            return picked;
        }
    }
    vec![rng.gen_range(0..n)]
}

/// Mask each non-endpoint position independently with probability `prob`
/// (at least one). Each masked node gets a uniformly drawn negative of the
/// same type. Returns `None` when no position can be masked.
pub fn mask_nodes(input: &EncoderInput, prob: f64, hin: &Hin, seed: u64) -> Option<(EncoderInput, Vec<MnpTarget>)> {
    assert!(prob > 0.0 && prob < 1.0, "mask probability must be in (0, 1)");
    let maskable: Vec<usize> = (0..input.len())
        .filter(|&t| t != input.user_pos && t != input.item_pos && input.ids[t].is_some())
        .filter(|&t| hin.count(input.types[t]) > 1)
        .collect();
    if maskable.is_empty() {
        return None;
    }
    let mut r = rng::stream(seed, &[rng::tag::MASK, 0]);
    let picked = draw_mask(maskable.len(), prob, &mut r);
    let mut out = input.clone();
    let targets = picked
        .into_iter()
        .map(|k| {
            let pos = maskable[k];
            let node = input.ids[pos].unwrap();
            let local = hin.from_global(node as usize);
            let count = hin.count(local.ty) as u32;
            let mut neg = r.gen_range(0..count - 1);
            if neg >= local.id {
                neg += 1;
            }
            out.ids[pos] = None;
            MnpTarget {
                pos,
                node,
                negative: hin.global(Node::new(local.ty, neg)) as u32,
            }
        })
        .collect();
    Some((out, targets))
}

/// Mask each precursor link independently with probability `prob` (at least
/// one), removing it from the successor's precursor set. The negative for a
/// masked link `j -> k` is a position not adjacent to `j`; if every position
/// is adjacent, any position other than `j` and `k`. Returns `None` when the
/// sequence has no link or no possible negative.
pub fn mask_edges(input: &EncoderInput, prob: f64, seed: u64) -> Option<(EncoderInput, Vec<MepTarget>)> {
    assert!(prob > 0.0 && prob < 1.0, "mask probability must be in (0, 1)");
    let n = input.len();
    let links: Vec<(usize, usize)> = (0..n)
        .flat_map(|k| input.precursors[k].iter().map(move |&j| (j as usize, k)))
        .collect();
    if links.is_empty() || n < 3 {
        return None;
    }
    let adjacent = |a: usize, b: usize| {
        input.precursors[b].contains(&(a as u16)) || input.precursors[a].contains(&(b as u16))
    };
    let mut r = rng::stream(seed, &[rng::tag::MASK, 1]);
    let picked = draw_mask(links.len(), prob, &mut r);
    let mut out = input.clone();
    let mut targets = Vec::with_capacity(picked.len());
    for idx in picked {
        let (j, k) = links[idx];
        let far: Vec<usize> = (0..n).filter(|&x| x != j && !adjacent(j, x)).collect();
        let pool: Vec<usize> = if far.is_empty() {
            (0..n).filter(|&x| x != j && x != k).collect()
        } else {
            far
        };
        let negative = pool[r.gen_range(0..pool.len())];
        out.precursors[k].retain(|&p| p as usize != j);
        targets.push(MepTarget { from: j, to: k, negative });
    }
    Some((out, targets))
}
