mod common;

use common::*;
use plr_core::clustering::{dbscan, kmeans, kmeans_run, DbscanParams, NOISE};
use plr_core::distance::{pairwise_distances, self_distances, DistanceMatrix, Metric};
use plr_core::metrics::evaluate;
use plr_core::rerank::{jaccard_distances, k_reciprocal_rerank, RerankParams};
use proptest::prelude::*;
use rand::Rng;

fn dbscan_params(eps: f64, min_samples: usize) -> DbscanParams {
    DbscanParams {
        eps,
        min_samples,
        metric: Metric::Euclidean,
    }
}

#[test]
fn dbscan_matches_naive_reference_on_blobs() {
    for seed in 0..50 {
        let fs = blobs_2d(seed);
        for (eps, min_s) in [(0.05, 4), (0.1, 5), (0.02, 3)] {
            let ca = dbscan(&fs, &dbscan_params(eps, min_s)).unwrap();
            let (noise, groups) = naive_dbscan(&fs, eps, min_s);
            let got_noise: Vec<bool> = ca.labels.iter().map(|&l| l == NOISE).collect();
            assert_eq!(got_noise, noise, "seed {seed} eps {eps}");
            assert_eq!(partition_of(&ca.labels), groups, "seed {seed} eps {eps}");
        }
    }
}

#[test]
fn dbscan_is_permutation_stable() {
    let fs = blobs_2d(7);
    let params = dbscan_params(0.05, 4);
    let base = dbscan(&fs, &params).unwrap();
    let mut r = rng(1);
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..fs.len()).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut r);
        let shuffled = fs.subset(&perm).unwrap();
        let ca = dbscan(&shuffled, &params).unwrap();
        let mut back = vec![0i32; fs.len()];
        for (pos, &orig) in perm.iter().enumerate() {
            back[orig] = ca.labels[pos];
        }
        assert_eq!(partition_of(&back), partition_of(&base.labels));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dbscan_noise_shrinks_as_eps_grows(seed in 0u64..1000, a in 0.005f64..0.2, b in 0.005f64..0.2) {
        let fs = blobs_2d(seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let n_lo = dbscan(&fs, &dbscan_params(lo, 4)).unwrap().n_noise();
        let n_hi = dbscan(&fs, &dbscan_params(hi, 4)).unwrap().n_noise();
        prop_assert!(n_hi <= n_lo);
    }
}

fn separated_clusters(seed: u64, k: usize, per: usize, dim: usize) -> (plr_core::FeatureSet, Vec<i32>) {
    let mut r = rng(seed);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for c in 0..k {
        let mut center = vec![0.0; dim];
        center[c % dim] = if c < dim { 1.0 } else { -1.0 };
        for _ in 0..per {
            rows.push(center.iter().map(|&m| m + 0.02 * normal(&mut r)).collect());
            truth.push(c as i32);
        }
    }
    let cams = vec![0u32; rows.len()];
    (feature_set(&rows, &cams, None), truth)
}

#[test]
fn kmeans_matches_exhaustive_restart_reference() {
    for seed in 0..20 {
        let (fs, truth) = separated_clusters(seed, 3, 25, 4);
        let reference = reference_kmeans(&fs, 3, 100, seed);
        let ca = kmeans(&fs, 3, seed).unwrap();
        assert_eq!(rand_index(&ca.labels, &reference), 1.0, "seed {seed}");
        assert_eq!(rand_index(&ca.labels, &truth), 1.0, "seed {seed}");
    }
}

#[test]
fn kmeans_objective_never_increases() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let rows: Vec<Vec<f64>> = (0..150).map(|_| (0..5).map(|_| normal(&mut r)).collect()).collect();
        let fs = feature_set(&rows, &vec![0; 150], None);
        let run = kmeans_run(&fs, 7, seed).unwrap();
        for w in run.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", run.objective_trace);
        }
    }
}

#[test]
fn kmeans_is_deterministic_per_seed() {
    let (fs, _) = separated_clusters(9, 5, 10, 6);
    assert_eq!(kmeans(&fs, 4, 42).unwrap().labels, kmeans(&fs, 4, 42).unwrap().labels);
}

fn naive_distances(a: &plr_core::FeatureSet, b: &plr_core::FeatureSet, cosine: bool) -> Vec<Vec<f64>> {
    let (ua, ub) = (unit_rows(a), unit_rows(b));
    ua.iter()
        .map(|x| {
            ub.iter()
                .map(|y| {
                    if cosine {
                        (1.0 - x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).max(0.0)
                    } else {
                        euclid(x, y)
                    }
                })
                .collect()
        })
        .collect()
}

fn random_set(seed: u64, n: usize, dim: usize) -> plr_core::FeatureSet {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| normal(&mut r)).collect()).collect();
    let cams: Vec<u32> = (0..n).map(|_| r.random_range(0..3)).collect();
    feature_set(&rows, &cams, None)
}

#[test]
fn distances_match_naive_loops() {
    let a = random_set(1, 50, 16);
    let b = random_set(2, 70, 16);
    for (metric, cosine) in [(Metric::Euclidean, false), (Metric::Cosine, true)] {
        let got = pairwise_distances(&a, &b, metric).unwrap();
        let want = naive_distances(&a, &b, cosine);
        for i in 0..50 {
            for j in 0..70 {
                assert!((got.get(i, j) as f64 - want[i][j]).abs() <= 1e-6, "{metric} ({i},{j})");
            }
        }
    }
    let s = self_distances(&a, Metric::Euclidean).unwrap();
    let want = naive_distances(&a, &a, false);
    for i in 0..50 {
        assert_eq!(s.get(i, i), 0.0);
        for j in 0..50 {
            assert_eq!(s.get(i, j), s.get(j, i));
            assert!((s.get(i, j) as f64 - want[i][j]).abs() <= 1e-6);
        }
    }
}

fn to_matrix(dist: &[Vec<f64>]) -> DistanceMatrix {
    let values = dist.iter().flatten().map(|&v| v as f32).collect();
    DistanceMatrix::from_values(dist.len(), dist[0].len(), Metric::Euclidean, values)
}

#[test]
fn evaluation_matches_brute_force() {
    for seed in 0..20 {
        let inst = eval_instance(seed, 100, 500);
        let got = evaluate(&to_matrix(&inst.dist), &inst.qp, &inst.qc, &inst.gp, &inst.gc, 10).unwrap();
        let (cmc, map) = naive_eval(&inst.dist, &inst.qp, &inst.qc, &inst.gp, &inst.gc, 10);
        for r in [1, 5, 10] {
            assert!((got.rank(r) - cmc[r - 1]).abs() <= 1e-6, "seed {seed} rank {r}");
        }
        assert!((got.map - map).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn evaluation_invariant_to_gallery_order_and_monotone_maps() {
    let inst = eval_instance(5, 40, 200);
    let base = evaluate(&to_matrix(&inst.dist), &inst.qp, &inst.qc, &inst.gp, &inst.gc, 10).unwrap();

    let mut perm: Vec<usize> = (0..200).collect();
    rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng(8));
    let dist: Vec<Vec<f64>> = inst.dist.iter().map(|row| perm.iter().map(|&j| row[j]).collect()).collect();
    let gp: Vec<i64> = perm.iter().map(|&j| inst.gp[j]).collect();
    let gc: Vec<u32> = perm.iter().map(|&j| inst.gc[j]).collect();
    let permuted = evaluate(&to_matrix(&dist), &inst.qp, &inst.qc, &gp, &gc, 10).unwrap();
    assert_eq!(base, permuted);

    let squashed: Vec<Vec<f64>> = inst.dist.iter().map(|row| row.iter().map(|&v| (3.0 * v).exp()).collect()).collect();
    let mapped = evaluate(&to_matrix(&squashed), &inst.qp, &inst.qc, &inst.gp, &inst.gc, 10).unwrap();
    assert_eq!(base, mapped);
}

#[test]
fn rerank_lambda_one_is_identity() {
    let q = random_set(11, 30, 12);
    let g = random_set(12, 80, 12);
    let original = pairwise_distances(&q, &g, Metric::Euclidean).unwrap();
    let params = RerankParams {
        lambda: 1.0,
        ..RerankParams::default()
    };
    let got = k_reciprocal_rerank(&q, &g, &params).unwrap();
    for (a, b) in got.values().iter().zip(original.values()) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn jaccard_matches_hand_enumerated_sets() {
    let (q, g) = rerank_fixture();
    let params = RerankParams {
        k1: 3,
        k2: 2,
        lambda: 0.0,
    };
    let got = jaccard_distances(&q, &g, &params).unwrap();
    let all = unit_rows(&q.concat(&g).unwrap());
    let want = rerank_oracle(&all);
    for i in 0..3 {
        for j in 0..8 {
            assert!((got.get(i, j) as f64 - want[i][j]).abs() <= 1e-6, "({i},{j}) {} vs {}", got.get(i, j), want[i][j]);
        }
    }
    // cross-group pairs share nothing
    assert_eq!(got.get(0, 3), 1.0);
    assert!(got.get(0, 0) < 1.0);
}
