//! Leave-one-out ranking evaluation with sampled negatives.

use std::collections::HashSet;
use std::fmt::Write as _;

use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::hin::InteractionSplit;
use crate::rng;

/// Which held-out interaction a candidate list is built around.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Holdout {
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub user: u32,
    pub ground_truth: u32,
    pub negatives: Vec<u32>,
    /// Fewer than the requested negatives were available.
    pub capped: bool,
}

impl CandidateList {
    pub fn items(&self) -> impl Iterator<Item = u32> + '_ {
        std::iter::once(self.ground_truth).chain(self.negatives.iter().copied())
    }
}

/// One list per evaluable user: the held-out item plus `n_neg` distinct
/// items the user never interacted with (train, valid or test).
pub fn build_candidates(
    num_items: usize,
    split: &InteractionSplit,
    holdout: Holdout,
    n_neg: usize,
    seed: u64,
) -> Vec<CandidateList> {
    let tag = match holdout {
        Holdout::Valid => 1,
        Holdout::Test => 2,
    };
    let lists: Vec<CandidateList> = split
        .evaluable_users()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&u| {
            let gt = match holdout {
                Holdout::Valid => split.valid[u as usize],
                Holdout::Test => split.test[u as usize],
            }
            .expect("evaluable user");
            let mut seen: HashSet<u32> = split.train[u as usize].iter().copied().collect();
            seen.extend(split.valid[u as usize]);
            seen.extend(split.test[u as usize]);
            let available = num_items.saturating_sub(seen.len());
            let mut negatives = Vec::with_capacity(n_neg.min(available));
            if available <= n_neg {
                negatives.extend((0..num_items as u32).filter(|i| !seen.contains(i)));
            } else {
                let mut r = rng::stream(seed, &[rng::tag::EVAL, tag, u as u64]);
                while negatives.len() < n_neg {
                    let i = r.gen_range(0..num_items as u32);
                    if seen.insert(i) {
                        negatives.push(i);
                    }
                }
            }
            CandidateList {
                user: u,
                ground_truth: gt,
                capped: negatives.len() < n_neg,
                negatives,
            }
        })
        .collect();
    let capped = lists.iter().filter(|l| l.capped).count();
    if capped > 0 {
        warn!("{capped} users have fewer than {n_neg} non-interacted items; took all available");
    }
    lists
}

/// Sort candidates by score descending, ties by item id ascending.
pub fn rank_candidates(cand: &CandidateList, mut score: impl FnMut(u32) -> Result<f64>) -> Result<Vec<u32>> {
    let mut scored: Vec<(f64, u32)> = cand.items().map(|i| Ok((score(i)?, i))).collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}

/// 1-based rank of `gt` in `ranked`, if present.
pub fn rank_of(ranked: &[u32], gt: u32) -> Option<usize> {
    ranked.iter().position(|&i| i == gt).map(|p| p + 1)
}

/// Fraction of users whose top-k contains the ground truth.
pub fn hit_rate_at_k(ranked: &[Vec<u32>], truths: &[u32], k: usize) -> f64 {
    assert!(k >= 1 && ranked.len() == truths.len());
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .zip(truths)
        .filter(|(r, &t)| matches!(rank_of(r, t), Some(p) if p <= k))
        .count();
    hits as f64 / ranked.len() as f64
}

/// Mean NDCG@k with one ground truth per user (ideal DCG = 1).
pub fn ndcg_at_k(ranked: &[Vec<u32>], truths: &[u32], k: usize) -> f64 {
    assert!(k >= 1 && ranked.len() == truths.len());
    if ranked.is_empty() {
        return 0.0;
    }
    let total: f64 = ranked
        .iter()
        .zip(truths)
        .map(|(r, &t)| match rank_of(r, t) {
            Some(p) if p <= k => 1.0 / ((p + 1) as f64).log2(),
            _ => 0.0,
        })
        .sum();
    total / ranked.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cutoffs: Vec<CutoffMetrics>,
    pub users: usize,
    pub capped_users: usize,
    pub config_hash: String,
}

pub const CSV_HEADER: &str = "dataset,run,hr@10,ndcg@10,hr@20,ndcg@20,users,config_hash";

impl MetricsReport {
    pub fn from_ranks(ranks: &[Option<usize>], ks: &[usize], capped_users: usize, config_hash: &str) -> Self {
        let n = ranks.len().max(1) as f64;
        let cutoffs = ks
            .iter()
            .map(|&k| {
                let mut hr = 0.0;
                let mut ndcg = 0.0;
                for r in ranks.iter().flatten() {
                    if *r <= k {
                        hr += 1.0;
                        ndcg += 1.0 / ((r + 1) as f64).log2();
                    }
                }
                CutoffMetrics {
                    k,
                    hr: hr / n,
                    ndcg: ndcg / n,
                }
            })
            .collect();
        MetricsReport {
            cutoffs,
            users: ranks.len(),
            capped_users,
            config_hash: config_hash.to_string(),
        }
    }

    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.cutoffs.iter().find(|c| c.k == k)
    }

    pub fn hr(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |c| c.hr)
    }

    pub fn ndcg(&self, k: usize) -> f64 {
        self.at(k).map_or(f64::NAN, |c| c.ndcg)
    }

    /// Row matching [`CSV_HEADER`].
    pub fn csv_row(&self, dataset: &str, run: &str) -> String {
        format!(
            "{dataset},{run},{:.4},{:.4},{:.4},{:.4},{},{}",
            self.hr(10),
            self.ndcg(10),
            self.hr(20),
            self.ndcg(20),
            self.users,
            self.config_hash
        )
    }
}

/// Fixed-width table of several runs.
pub fn pretty_table(rows: &[(String, &MetricsReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(3).max(3);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>6}",
        "run", "HR@10", "NDCG@10", "HR@20", "NDCG@20", "users"
    );
    for (name, r) in rows {
        let _ = writeln!(
            s,
            "{:<width$}  {:>7.4}  {:>7.4}  {:>7.4}  {:>7.4}  {:>6}",
            name,
            r.hr(10),
            r.ndcg(10),
            r.hr(20),
            r.ndcg(20),
            r.users
        );
    }
    s
}

/// Rank every list with `score(user, item)` and report HR/NDCG at `ks`.
/// Lists are scored in parallel; the reduction runs in list order.
pub fn evaluate<S>(lists: &[CandidateList], ks: &[usize], config_hash: &str, score: S) -> Result<(MetricsReport, Vec<Vec<u32>>)>
where
    S: Fn(u32, u32) -> Result<f64> + Sync,
{
    let ranked: Vec<Vec<u32>> = lists
        .par_iter()
        .map(|c| rank_candidates(c, |i| score(c.user, i)))
        .collect::<Result<_>>()?;
    let ranks: Vec<Option<usize>> = ranked.iter().zip(lists).map(|(r, c)| rank_of(r, c.ground_truth)).collect();
    let capped = lists.iter().filter(|l| l.capped).count();
    Ok((MetricsReport::from_ranks(&ranks, ks, capped, config_hash), ranked))
}
