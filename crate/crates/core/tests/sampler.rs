use ialgca::data::{sample_test_indices, sample_train_indices, segment_bounds};
use ialgca::init::rng_for;

/// Independent statement of the partition: segment k starts at
/// k·⌊n/U⌋ + min(k, n mod U).
fn expected_start(n: usize, u: usize, k: usize) -> usize {
    k * (n / u) + k.min(n % u)
}

fn all_cases() -> impl Iterator<Item = (usize, usize, usize)> {
    (1..=64).flat_map(|n| (1..=n).flat_map(move |u| (1..=4).map(move |v| (n, u, v))))
}

#[test]
fn partition_covers_every_frame_once() {
    for n in 1..=64 {
        for u in 1..=n {
            let segs = segment_bounds(n, u);
            assert_eq!(segs.len(), u);
            let mut next = 0;
            for (k, &(s, e)) in segs.iter().enumerate() {
                assert_eq!(s, next, "gap or overlap at n={n} u={u} k={k}");
                assert_eq!(s, expected_start(n, u, k));
                assert!(e > s);
                next = e;
            }
            assert_eq!(next, n);
            let lens: Vec<usize> = segs.iter().map(|(s, e)| e - s).collect();
            assert!(lens.windows(2).all(|w| w[0] >= w[1] && w[0] - w[1] <= 1), "{lens:?}");
        }
    }
}

#[test]
fn train_sampler_contract() {
    for (n, u, v) in all_cases() {
        let segs = segment_bounds(n, u);
        for seed in 0..3 {
            let mut rng = rng_for(seed, &format!("{n}/{u}/{v}"));
            let idx = sample_train_indices(n, u, v, &mut rng);
            assert_eq!(idx.len(), u * v);
            assert!(idx.windows(2).all(|w| w[0] <= w[1]), "unsorted {idx:?}");
            for (chunk, &(s, e)) in idx.chunks(v).zip(&segs) {
                assert!(chunk.iter().all(|&i| s <= i && i < e), "n={n} u={u} v={v}: {chunk:?} not in [{s},{e})");
                if e - s >= v {
                    assert!(chunk.windows(2).all(|w| w[0] < w[1]), "repeat without need: {chunk:?}");
                }
            }
        }
    }
}

#[test]
fn test_sampler_centering_rule() {
    for (n, u, v) in all_cases() {
        let idx = sample_test_indices(n, u, v);
        assert_eq!(idx, sample_test_indices(n, u, v));
        let mut want = Vec::new();
        for (s, e) in segment_bounds(n, u) {
            let len = e - s;
            if len >= v {
                want.extend((0..v).map(|j| s + (len - v) / 2 + j));
            } else {
                want.extend(std::iter::repeat_n(s + (len - 1) / 2, v));
            }
        }
        assert_eq!(idx, want, "n={n} u={u} v={v}");
    }
}

#[test]
fn segment_bounds_hold_over_many_seeds() {
    let segs = segment_bounds(100, 8);
    for seed in 0..1000 {
        let idx = sample_train_indices(100, 8, 2, &mut rng_for(seed, "n100"));
        for (chunk, &(s, e)) in idx.chunks(2).zip(&segs) {
            assert!(chunk.iter().all(|&i| s <= i && i < e));
        }
    }
}

#[test]
fn clip_length_sixteen_under_both_presets() {
    let mut rng = rng_for(0, "presets");
    assert_eq!(sample_train_indices(16, 16, 1, &mut rng), (0..16).collect::<Vec<_>>());
    let twice: Vec<usize> = (0..8).flat_map(|i| [i, i]).collect();
    assert_eq!(sample_train_indices(8, 8, 2, &mut rng), twice);
    for n in [16, 24, 40, 77] {
        assert_eq!(sample_train_indices(n, 8, 2, &mut rng).len(), 16);
        assert_eq!(sample_test_indices(n, 16, 1).len(), 16);
    }
    assert_eq!(sample_test_indices(24, 8, 2), vec![0, 1, 3, 4, 6, 7, 9, 10, 12, 13, 15, 16, 18, 19, 21, 22]);
    assert_eq!(&sample_test_indices(16, 8, 2)[..2], &[0, 1]);
}
