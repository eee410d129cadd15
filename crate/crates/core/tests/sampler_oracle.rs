mod common;

use std::collections::HashSet;

use chest::hin::Node;
use chest::priority::NodeVectors;
use chest::sampler::{enumerate_paths_exhaustive, PathSampler, SamplerConfig, SamplingMode};
use common::{random_hin, uia_metapaths};

fn cfg(k: usize) -> SamplerConfig {
    SamplerConfig {
        k,
        ..SamplerConfig::default()
    }
}

#[test]
fn exhaustive_mode_matches_brute_force_on_random_networks() {
    let mut compared = 0;
    for seed in 0..30u64 {
        let hin = random_hin(seed);
        assert!(hin.num_nodes() <= 20);
        let vectors = NodeVectors::random(&hin, 4, seed + 100);
        let mps = uia_metapaths(&hin);
        for k in [1, 3, 5] {
            let sampler = PathSampler::new(&hin, &vectors, mps.clone(), cfg(k)).unwrap();
            for user in 0..hin.num_users() as u32 {
                for item in 0..hin.num_items() as u32 {
                    for (m, mp) in mps.iter().enumerate() {
                        let got = sampler.sample_top_k_paths(user, item, m, 0, SamplingMode::Exhaustive);
                        let mut all = enumerate_paths_exhaustive(&hin, &vectors, user, item, m, mp, 10_000).unwrap();
                        all.sort_by(chest::subgraph::path_order);
                        all.truncate(k);
                        assert_eq!(got, all, "seed {seed} k {k} pair ({user},{item}) {}", mp.name);
                        compared += 1;
                    }
                }
            }
        }
    }
    assert!(compared > 1000);
}

#[test]
fn probabilistic_paths_are_exhaustive_instances() {
    for seed in 0..25u64 {
        let hin = random_hin(seed);
        let vectors = NodeVectors::random(&hin, 4, seed);
        let mps = uia_metapaths(&hin);
        let sampler = PathSampler::new(&hin, &vectors, mps.clone(), cfg(3)).unwrap();
        for user in 0..hin.num_users() as u32 {
            for item in 0..hin.num_items() as u32 {
                for (m, mp) in mps.iter().enumerate() {
                    let all: HashSet<Vec<Node>> = enumerate_paths_exhaustive(&hin, &vectors, user, item, m, mp, 10_000)
                        .unwrap()
                        .into_iter()
                        .map(|p| p.nodes)
                        .collect();
                    for s in 0..3 {
                        let ranked = sampler.sample_ranked(user, item, m, s, SamplingMode::Probabilistic);
                        for p in &ranked {
                            assert!(all.contains(&p.nodes), "seed {seed}: {:?} not an instance of {}", p.nodes, mp.name);
                        }
                        assert!(ranked.windows(2).all(|w| chest::subgraph::path_order(&w[0], &w[1]).is_lt()));
                    }
                }
            }
        }
    }
}

#[test]
fn pair_sampling_is_deterministic_and_pool_is_disjoint() {
    let hin = random_hin(7);
    let vectors = NodeVectors::random(&hin, 4, 7);
    let sampler = PathSampler::new(&hin, &vectors, uia_metapaths(&hin), cfg(2)).unwrap();
    for user in 0..hin.num_users() as u32 {
        for item in 0..hin.num_items() as u32 {
            let a = sampler.sample_pair(user, item, 11);
            assert_eq!(a, sampler.sample_pair(user, item, 11));
            for p in &a.pool {
                assert!(!a.paths.iter().any(|q| q.metapath == p.metapath && q.nodes == p.nodes));
            }
        }
    }
}
