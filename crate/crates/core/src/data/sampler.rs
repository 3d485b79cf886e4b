use rand::seq::index;
use rand::Rng;

/// `[start, end)` of each of `u` contiguous segments over `n` frames. Lengths
/// differ by at most one and earlier segments take the remainder. When
/// `u > n`, segment `k` is the single frame `⌊k·n/u⌋`.
pub fn segment_bounds(n: usize, u: usize) -> Vec<(usize, usize)> {
    assert!(n >= 1 && u >= 1, "segment_bounds needs n ≥ 1 and u ≥ 1");
    if u > n {
        return (0..u).map(|k| (k * n / u, k * n / u + 1)).collect();
    }
    let (base, rem) = (n / u, n % u);
    let mut start = 0;
    (0..u)
        .map(|k| {
            let len = base + usize::from(k < rem);
            let seg = (start, start + len);
            start += len;
            seg
        })
        .collect()
}

/// `v` random frames from each of `u` segments, sorted. Draws without
/// replacement when a segment holds at least `v` frames, with replacement
/// otherwise.
pub fn sample_train_indices<R: Rng + ?Sized>(n: usize, u: usize, v: usize, rng: &mut R) -> Vec<usize> {
    assert!(v >= 1, "sample_train_indices needs v ≥ 1");
    let mut out = Vec::with_capacity(u * v);
    for (start, end) in segment_bounds(n, u) {
        let len = end - start;
        let mut picks: Vec<usize> = if len >= v {
            index::sample(rng, len, v).into_vec()
        } else {
            (0..v).map(|_| rng.random_range(0..len)).collect()
        };
        picks.sort_unstable();
        out.extend(picks.into_iter().map(|i| start + i));
    }
    out
}

/// The centered window of `v` frames in each segment. A segment shorter than
/// `v` repeats its middle frame.
pub fn sample_test_indices(n: usize, u: usize, v: usize) -> Vec<usize> {
    assert!(v >= 1, "sample_test_indices needs v ≥ 1");
    let mut out = Vec::with_capacity(u * v);
    for (start, end) in segment_bounds(n, u) {
        let len = end - start;
        if len >= v {
            let first = start + (len - v) / 2;
            out.extend(first..first + v);
        } else {
            out.extend(std::iter::repeat_n(start + (len - 1) / 2, v));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_frame_per_segment_is_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_train_indices(16, 16, 1, &mut rng), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn short_segments_duplicate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let idx = sample_train_indices(8, 8, 2, &mut rng);
        let want: Vec<usize> = (0..8).flat_map(|i| [i, i]).collect();
        assert_eq!(idx, want);
    }

    #[test]
    fn remainder_goes_to_early_segments() {
        assert_eq!(segment_bounds(10, 4), vec![(0, 3), (3, 6), (6, 8), (8, 10)]);
        assert_eq!(segment_bounds(100, 8)[0], (0, 13));
        assert_eq!(segment_bounds(100, 8)[7], (88, 100));
    }

    #[test]
    fn test_sampler_centering() {
        assert_eq!(&sample_test_indices(16, 8, 2)[..2], &[0, 1]);
        assert_eq!(sample_test_indices(24, 8, 2), vec![0, 1, 3, 4, 6, 7, 9, 10, 12, 13, 15, 16, 18, 19, 21, 22]);
        assert_eq!(sample_test_indices(5, 1, 2), vec![1, 2]);
        assert_eq!(sample_test_indices(4, 2, 3), vec![0, 0, 0, 2, 2, 2]);
    }

    #[test]
    fn more_segments_than_frames() {
        assert_eq!(segment_bounds(2, 4), vec![(0, 1), (0, 1), (1, 2), (1, 2)]);
        assert_eq!(sample_test_indices(2, 4, 1), vec![0, 0, 1, 1]);
    }
}
