use std::collections::BTreeSet;

use eegmobile::bench::{distance, naive_baseline, Metric};
use eegmobile::data::{
    filter_valid_labels, generate_synthetic, grid_positions, read_container, split, split_indices, write_container,
    Dataset, SplitSpec, SyntheticSpec, HEADER_LEN,
};
use eegmobile::Error;
use nalgebra::{DMatrix, DVector};

fn labelled(labels: &[[f32; 2]], participants: Option<Vec<u32>>) -> Dataset {
    let n = labels.len();
    let eeg = (0..n * 2 * 3).map(|i| i as f32).collect();
    Dataset::new(2, 3, eeg, labels.iter().flatten().copied().collect(), participants).unwrap()
}

fn small_synthetic(n: usize, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        n_samples: n,
        seed,
        channels: 40,
        timesteps: 64,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

#[test]
fn container_file_round_trip_and_header_size() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("two.eegt");
    let d = generate_synthetic(&SyntheticSpec {
        n_samples: 2,
        participants: 2,
        ..SyntheticSpec::default()
    })
    .unwrap();
    write_container(&path, &d).unwrap();
    let back = read_container(&path).unwrap();
    assert_eq!(back, d);
    assert!(back.eeg().iter().zip(d.eeg()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(HEADER_LEN, 4 + 4 + 8 + 4 + 4 + 4 + 1);
    let len = std::fs::metadata(&path).unwrap().len() as usize;
    assert_eq!(len, 29 + 2 * 129 * 500 * 4 + 2 * 2 * 4 + 2 * 4);
}

#[test]
fn container_rejects_bad_magic_with_offset() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.eegt");
    write_container(&path, &labelled(&[[1.0, 2.0]], None)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[..4].copy_from_slice(b"XXXX");
    std::fs::write(&path, &bytes).unwrap();
    match read_container(&path) {
        Err(Error::Format { offset, .. }) => assert_eq!(offset, 0),
        other => panic!("expected a format error, got {other:?}"),
    }
    bytes.truncate(HEADER_LEN - 3);
    bytes[..4].copy_from_slice(b"EEGT");
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_container(&path), Err(Error::Format { offset: 24, .. })));
}

#[test]
fn filter_uses_inclusive_screen_bounds() {
    let d = labelled(
        &[
            [801.0, 300.0],
            [400.0, 300.0],
            [800.0, 600.0],
            [0.0, 0.0],
            [-0.5, 10.0],
            [10.0, 600.5],
        ],
        Some(vec![1, 2, 3, 4, 5, 6]),
    );
    let f = filter_valid_labels(&d);
    assert_eq!(f.labels(), &[400.0, 300.0, 800.0, 600.0, 0.0, 0.0]);
    assert_eq!(f.participants(), Some(&[2, 3, 4][..]));
    assert_eq!(f.sample(0), d.sample(1));
    assert_eq!(filter_valid_labels(&f), f);
}

fn grid_labels(n: usize) -> Vec<[f32; 2]> {
    (0..n).map(|i| [(i % 800) as f32, (i % 600) as f32]).collect()
}

#[test]
fn sample_split_sizes_and_partition() {
    for (n, sizes) in [
        (100, (70, 15, 15)),
        (1000, (700, 150, 150)),
        (101, (71, 15, 15)),
        (7, (5, 1, 1)),
    ] {
        let d = labelled(&grid_labels(n), None);
        let idx = split_indices(&d, &SplitSpec::default()).unwrap();
        assert_eq!((idx.train.len(), idx.val.len(), idx.test.len()), sizes, "n = {n}");
        let all: BTreeSet<usize> = idx.train.iter().chain(&idx.val).chain(&idx.test).copied().collect();
        assert_eq!(all.len(), n);
        assert_eq!(all, (0..n).collect());
    }
    let d = labelled(&grid_labels(100), None);
    let spec = SplitSpec {
        seed: 3,
        ..SplitSpec::default()
    };
    assert_eq!(split_indices(&d, &spec).unwrap(), split_indices(&d, &spec).unwrap());
    let other = SplitSpec {
        seed: 4,
        ..SplitSpec::default()
    };
    assert_ne!(split_indices(&d, &spec).unwrap(), split_indices(&d, &other).unwrap());
    let parts = split(&d, &spec).unwrap();
    assert_eq!(parts.train.len() + parts.val.len() + parts.test.len(), 100);
}

#[test]
fn grouped_split_keeps_participants_apart() {
    let n = 200;
    let ids: Vec<u32> = (0..n as u32).map(|i| (i * 7) % 10).collect();
    let d = labelled(&grid_labels(n), Some(ids.clone()));
    let spec = SplitSpec {
        group_by_participant: true,
        seed: 11,
        ..SplitSpec::default()
    };
    let idx = split_indices(&d, &spec).unwrap();
    let people = |v: &[usize]| v.iter().map(|&i| ids[i]).collect::<BTreeSet<u32>>();
    let (tr, va, te) = (people(&idx.train), people(&idx.val), people(&idx.test));
    assert!(tr.is_disjoint(&va) && tr.is_disjoint(&te) && va.is_disjoint(&te));
    assert_eq!((tr.len(), va.len(), te.len()), (8, 1, 1));
    assert_eq!(idx.train.len() + idx.val.len() + idx.test.len(), n);

    let anonymous = labelled(&grid_labels(10), None);
    assert!(matches!(split_indices(&anonymous, &spec), Err(Error::Config(_))));
    let bad = SplitSpec {
        train: 0.8,
        ..SplitSpec::default()
    };
    assert!(matches!(split_indices(&anonymous, &bad), Err(Error::Config(_))));
}

#[test]
fn synthetic_labels_are_grid_points_on_screen() {
    let d = small_synthetic(300, 5);
    let grid = grid_positions();
    assert_eq!(grid.len(), 25);
    assert_eq!(grid[0], [0.0, 0.0]);
    assert_eq!(grid[24], [800.0, 600.0]);
    for i in 0..d.len() {
        assert!(grid.contains(&d.label(i)));
    }
    assert_eq!(filter_valid_labels(&d), d);
    let seen: BTreeSet<(u32, u32)> = (0..d.len())
        .map(|i| (d.label(i)[0] as u32, d.label(i)[1] as u32))
        .collect();
    assert_eq!(seen.len(), 25);
}

#[test]
fn synthetic_is_a_pure_function_of_its_spec() {
    let a = small_synthetic(20, 9);
    let b = small_synthetic(20, 9);
    assert!(a.eeg().iter().zip(b.eeg()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.labels(), b.labels());
    assert_ne!(small_synthetic(20, 10).eeg(), a.eeg());
    let bad = SyntheticSpec {
        noise_std: -1.0,
        ..SyntheticSpec::default()
    };
    assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
}

#[test]
fn synthetic_noise_has_unit_variance_without_signal() {
    let d = generate_synthetic(&SyntheticSpec {
        n_samples: 40,
        signal_gain: 0.0,
        channels: 40,
        timesteps: 200,
        seed: 2,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let n = d.eeg().len() as f64;
    let mean = d.eeg().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = d.eeg().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() < 0.05, "{mean}");
    assert!((var - 1.0).abs() < 0.05, "{var}");
}

/// Closed-form ridge regression on per-channel time averages.
fn ridge_oracle(train: &Dataset, test: &Dataset, alpha: f64) -> f64 {
    let features = |d: &Dataset| {
        let (c, t) = (d.channels(), d.timesteps());
        DMatrix::from_fn(d.len(), c + 1, |i, j| {
            if j == c {
                1.0
            } else {
                d.sample(i)[j * t..(j + 1) * t].iter().map(|&v| v as f64).sum::<f64>() / t as f64
            }
        })
    };
    let (xtr, xte) = (features(train), features(test));
    let mut gram = xtr.transpose() * &xtr;
    for j in 0..gram.nrows() - 1 {
        gram[(j, j)] += alpha;
    }
    let lu = gram.lu();
    let mut pred = vec![0.0f32; 2 * test.len()];
    for k in 0..2 {
        let y = DVector::from_fn(train.len(), |i, _| train.label(i)[k] as f64);
        let beta = lu.solve(&(xtr.transpose() * y)).unwrap();
        let p = &xte * beta;
        for i in 0..test.len() {
            pred[2 * i + k] = p[i] as f32;
        }
    }
    distance(&pred, test.labels(), 1.0, Metric::MeanEuclidean).unwrap()
}

#[test]
fn synthetic_signal_is_linearly_learnable() {
    let d = generate_synthetic(&SyntheticSpec {
        n_samples: 1000,
        seed: 7,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let parts = split(
        &d,
        &SplitSpec {
            seed: 7,
            ..SplitSpec::default()
        },
    )
    .unwrap();
    let naive = naive_baseline(&parts.train, &parts.test, 1.0, Metric::MeanEuclidean).unwrap();
    let ridge = ridge_oracle(&parts.train, &parts.test, 1.0);
    assert!(ridge <= 0.7 * naive, "ridge {ridge} vs naive {naive}");
}
