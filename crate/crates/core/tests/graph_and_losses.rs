use dclust_core::autodiff::{Graph, NORM_GUARD};
use dclust_core::data::{make_blobs, BlobSpec};
use dclust_core::knn::{build_knn_graph, extract_anchors, AnchorSet};
use dclust_core::losses::{
    between_cluster_loss, discriminative_loss, oracle_discriminative_loss, within_cluster_loss,
    PairWeights,
};
use dclust_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..1.0)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    d / (na * nb)
}

#[test]
fn knn_matches_brute_force_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..20 {
        let x = random_matrix(&mut rng, 50, 7, 0.0);
        let k = 1 + trial % 6;
        let graph = build_knn_graph(&x, k).unwrap();
        for i in 0..50 {
            let mut all: Vec<(f64, usize)> = (0..50)
                .filter(|&j| j != i)
                .map(|j| (cosine(x.row(i), x.row(j)), j))
                .collect();
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expect: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            let got: Vec<usize> = graph.neighbors(i).map(|e| e.to).collect();
            assert_eq!(got, expect, "trial {trial}, node {i}");
        }
    }
}

#[test]
fn knn_is_independent_of_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_matrix(&mut rng, 40, 5, 0.0);
    let mut perm: Vec<usize> = (0..40).collect();
    for i in (1..40).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    let y = x.select_rows(&perm);
    let gx = build_knn_graph(&x, 4).unwrap().undirected();
    let gy = build_knn_graph(&y, 4).unwrap().undirected();
    let mapped: std::collections::BTreeSet<(usize, usize)> = gy
        .keys()
        .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
        .collect();
    let original: std::collections::BTreeSet<(usize, usize)> = gx.keys().copied().collect();
    assert_eq!(mapped, original);
}

fn anchor_purity(seed: u64, separation: f64, dim: usize, per_cluster: usize, fraction: f64) -> f64 {
    let data = make_blobs(&BlobSpec {
        k: 5,
        per_cluster,
        dim,
        separation,
        sigma: 1.0,
        seed,
    })
    .unwrap();
    let labels = data.labels.as_ref().unwrap();
    let graph = build_knn_graph(&data.features, 5).unwrap();
    let anchors = extract_anchors(&graph, fraction).unwrap();
    let edges = graph.undirected();
    assert!(!anchors.is_empty());
    let mut pure = 0;
    for &(i, j) in &anchors.pairs {
        assert!(edges.contains_key(&(i, j)));
        pure += usize::from(labels[i] == labels[j]);
    }
    pure as f64 / anchors.len() as f64
}

#[test]
fn anchors_are_pure_on_separated_blobs() {
    for seed in 1..=3 {
        for fraction in [0.01, 0.02, 0.05] {
            assert_eq!(anchor_purity(seed, 6.0, 6, 100, fraction), 1.0, "6σ seed {seed} fraction {fraction}");
            assert_eq!(anchor_purity(seed, 8.0, 50, 200, fraction), 1.0, "8σ seed {seed} fraction {fraction}");
        }
    }
}

#[test]
fn anchor_purity_degrades_gracefully_in_high_dimension() {
    // in-cluster pair distance √(2p)·σ exceeds a 6σ center spacing at p = 50,
    // so a few cross-cluster pairs reach the top of the ranking
    for seed in 1..=3 {
        let p = anchor_purity(seed, 6.0, 50, 200, 0.05);
        assert!(p >= 0.9, "seed {seed}: {p}");
    }
}

#[test]
fn one_nearest_neighbor_agrees_on_blobs() {
    let data = make_blobs(&BlobSpec {
        k: 5,
        per_cluster: 400,
        dim: 50,
        separation: 8.0,
        sigma: 1.0,
        seed: 1,
    })
    .unwrap();
    let labels = data.labels.as_ref().unwrap();
    let graph = build_knn_graph(&data.features, 1).unwrap();
    let agree = (0..data.len())
        .filter(|&i| labels[graph.neighbors(i).next().unwrap().to] == labels[i])
        .count();
    assert!(agree as f64 / data.len() as f64 >= 0.99, "{agree}");
}

fn unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    let data = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(n, d, data).unwrap().normalize_rows(NORM_GUARD).unwrap()
}

fn ld_value(z: &Matrix, anchors: &AnchorSet, alpha: f64) -> f64 {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let sims = g.gram(zv);
    let w = PairWeights::new(z.rows(), anchors, alpha).unwrap();
    let l = discriminative_loss(&mut g, sims, &w).unwrap();
    g.scalar(l)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn discriminative_loss_is_permutation_invariant(seed in any::<u64>(), n in 4usize..12, alpha in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, n, 3);
        let mut pairs = Vec::new();
        for _ in 0..3 {
            let i = rng.random_range(0..n);
            let j = (i + 1 + rng.random_range(0..n - 1)) % n;
            pairs.push((i.min(j), i.max(j)));
        }
        pairs.sort();
        pairs.dedup();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // row r of the permuted batch is original row perm[r]
        let mut inverse = vec![0; n];
        for (r, &p) in perm.iter().enumerate() {
            inverse[p] = r;
        }
        let moved: Vec<(usize, usize)> = pairs
            .iter()
            .map(|&(i, j)| (inverse[i].min(inverse[j]), inverse[i].max(inverse[j])))
            .collect();
        let a = ld_value(&z, &AnchorSet::new(pairs), alpha);
        let b = ld_value(&z.select_rows(&perm), &AnchorSet::new(moved), alpha);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn discriminative_loss_bounds(seed in any::<u64>(), n in 3usize..12, alpha in 0.05f64..0.95) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, n, 4);
        let free = ld_value(&z, &AnchorSet::new(vec![]), alpha);
        let upper = (n * n - n) as f64 / (n * n) as f64;
        prop_assert!(free >= 0.0 && free <= upper + 1e-12);
        let anchored = ld_value(&z, &AnchorSet::new(vec![(0, 1), (1, 2)]), alpha);
        prop_assert!(anchored >= -(1.0 - alpha) - 1e-12);
    }

    #[test]
    fn cluster_losses_stay_in_range(seed in any::<u64>(), n in 4usize..14) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, n, 3);
        let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let mut g = Graph::new();
        let zv = g.constant(z);
        let sims = g.gram(zv);
        let lb = between_cluster_loss(&mut g, sims, &labels, 3).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&g.scalar(lb)));
        let lw = within_cluster_loss(&mut g, sims, &labels, 3).unwrap();
        let clusters = labels.iter().collect::<std::collections::BTreeSet<_>>().len() as f64;
        prop_assert!(g.scalar(lw) <= clusters + 1e-12);
        // each per-cluster term is ‖Σ z̃‖² / |C|², so non-negative
        prop_assert!(g.scalar(lw) >= -1e-12);
    }

    #[test]
    fn gram_is_symmetric_and_bounded(seed in any::<u64>(), n in 1usize..10, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = unit_rows(&mut rng, n, d);
        let c = z.gram();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(c[(i, j)].to_bits(), c[(j, i)].to_bits());
                prop_assert!(c[(i, j)].abs() <= 1.0 + 1e-12);
            }
        }
        let again = z.normalize_rows(NORM_GUARD).unwrap();
        for (a, b) in z.as_slice().iter().zip(again.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}

/// Block embeddings: orthogonal axis per group, small in-group jitter.
fn block_embedding(groups: &[usize], rng: &mut ChaCha8Rng) -> Matrix {
    let k = groups.iter().max().unwrap() + 1;
    let mut rows = Vec::new();
    for &gi in groups {
        let mut row = vec![0.05; k];
        row[gi] = 1.0;
        for v in &mut row {
            *v += rng.random_range(0.0..0.02);
        }
        rows.push(row);
    }
    Matrix::from_rows(&rows).unwrap().normalize_rows(NORM_GUARD).unwrap()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    out.push(p.clone());
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            out.push(p.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

#[test]
fn oracle_loss_is_minimized_by_true_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for truth in [vec![0, 0, 1, 1, 2, 2], vec![0, 0, 0, 1, 1, 2, 2], vec![0, 0, 0, 1, 1, 1, 2, 2]] {
        let z = block_embedding(&truth, &mut rng);
        let mut g = Graph::new();
        let zv = g.constant(z);
        let sims = g.gram(zv);
        let value = |labels: &[usize], g: &mut Graph| {
            let l = oracle_discriminative_loss(g, sims, labels).unwrap();
            g.scalar(l)
        };
        let best = value(&truth, &mut g);
        let same_partition = |a: &[usize], b: &[usize]| {
            (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
        };
        for perm in permutations(truth.len()) {
            let candidate: Vec<usize> = perm.iter().map(|&p| truth[p]).collect();
            let v = value(&candidate, &mut g);
            if same_partition(&candidate, &truth) {
                assert!((v - best).abs() < 1e-12);
            } else {
                assert!(v > best, "{candidate:?}: {v} <= {best}");
            }
        }
    }
}
