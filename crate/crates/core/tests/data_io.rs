use std::collections::BTreeSet;
use std::fs;

use dclust_core::data::{
    epoch_batches, load_csv, load_idx, load_labels, make_blobs, min_batch_len, write_idx_images,
    write_idx_labels, BlobSpec, LabelColumn,
};
use dclust_core::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn csv_scaling_inverts(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 3), 2..20)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let text: String = rows
            .iter()
            .map(|r| r.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",") + "\n")
            .collect();
        fs::write(&path, text).unwrap();
        let ds = load_csv(&path, None).unwrap();
        for v in ds.features.as_slice() {
            prop_assert!((0.0..=1.0).contains(v));
        }
        let back = ds.scaling.as_ref().unwrap().inverse(&ds.features);
        for (r, row) in rows.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                let (lo, hi) = rows.iter().map(|x| x[c]).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
                if hi > lo {
                    prop_assert!((back[(r, c)] - v).abs() <= 1e-12 * v.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn idx_round_trip(n in 1usize..6, rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let images: Vec<Vec<u8>> = (0..n).map(|_| (0..rows * cols).map(|_| rng.random()).collect()).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..10)).collect();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("i"), dir.path().join("l"));
        write_idx_images(&ip, rows, cols, &images).unwrap();
        write_idx_labels(&lp, &labels).unwrap();
        let ds = load_idx(&ip, &lp).unwrap();
        prop_assert_eq!(ds.features.shape(), (n, rows * cols));
        for (r, img) in images.iter().enumerate() {
            for (c, &px) in img.iter().enumerate() {
                prop_assert_eq!(ds.features[(r, c)], px as f64 / 255.0);
            }
        }
        let expect: Vec<usize> = labels.iter().map(|&l| l as usize).collect();
        prop_assert_eq!(ds.labels.unwrap(), expect);
    }

    #[test]
    fn batches_cover_all_but_the_dropped_tail(n in 12usize..300, size in 12usize..100, seed in any::<u64>(), epoch in 0u64..5) {
        prop_assume!(size <= n);
        let min = min_batch_len(5, 3);
        let batches = epoch_batches(n, size, seed, epoch, min).unwrap();
        let seen: Vec<usize> = batches.iter().flatten().copied().collect();
        let unique: BTreeSet<usize> = seen.iter().copied().collect();
        prop_assert_eq!(unique.len(), seen.len());
        let tail = n % size;
        let dropped = if tail > 0 && tail < min { tail } else { 0 };
        prop_assert_eq!(seen.len(), n - dropped);
        for b in &batches {
            prop_assert!(b.len() >= min);
        }
    }
}

#[test]
fn csv_header_labels_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.tsv");
    fs::write(&path, "a\tb\tclass\n1\t5\t0\n3\t5\t1\n2\t5\t1\n").unwrap();
    let ds = load_csv(&path, Some(&LabelColumn::Name("class".into()))).unwrap();
    assert_eq!(ds.labels.as_deref(), Some(&[0, 1, 1][..]));
    assert_eq!(ds.features.row(0), &[0.0, 0.0]);
    assert_eq!(ds.features.row(1), &[1.0, 0.0]);
    assert_eq!(ds.features.row(2), &[0.5, 0.0]);

    fs::write(&path, "1,2\n3\n").unwrap();
    assert!(matches!(load_csv(&path, None), Err(Error::Parse { line: 2, .. })));
    fs::write(&path, "1,2\n3,x\n").unwrap();
    assert!(matches!(load_csv(&path, None), Err(Error::Parse { line: 2, .. })));

    fs::write(&path, "label\n2\n0\n").unwrap();
    assert_eq!(load_labels(&path).unwrap(), vec![2, 0]);
}

#[test]
fn blobs_are_balanced_and_seeded() {
    let spec = BlobSpec {
        k: 4,
        per_cluster: 30,
        dim: 6,
        separation: 8.0,
        sigma: 0.5,
        seed: 3,
    };
    let a = make_blobs(&spec).unwrap();
    assert_eq!(a, make_blobs(&spec).unwrap());
    assert_ne!(a.features, make_blobs(&BlobSpec { seed: 4, ..spec }).unwrap().features);
    assert_eq!(a.len(), 120);
    let labels = a.labels.as_ref().unwrap();
    for c in 0..4 {
        assert_eq!(labels.iter().filter(|&&l| l == c).count(), 30);
    }
    let lo = a.features.as_slice().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = a.features.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((lo, hi), (0.0, 1.0));
    assert!(matches!(make_blobs(&BlobSpec { dim: 3, ..spec }), Err(Error::Config(_))));
}
