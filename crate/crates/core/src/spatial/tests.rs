use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn cloud(n: usize, rng: &mut impl Rng) -> Vec<Point> {
    (0..n).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect()
}

/// O(n log n) per query: full sort by (distance², index).
fn brute_knn(query: &[Point], reference: &[Point], k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for q in query {
        let mut all: Vec<(f32, usize)> = reference.iter().enumerate().map(|(i, p)| (dist2(q, p), i)).collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for r in 0..k {
            out.push(all.get(r).unwrap_or(&all[0]).1);
        }
    }
    out
}

/// Greedy farthest-point oracle recomputing every minimum from scratch.
fn brute_fps(points: &[Point], m: usize, start: usize) -> Vec<usize> {
    let mut picked = vec![start];
    while picked.len() < m {
        let mut best = (f32::NEG_INFINITY, usize::MAX);
        for i in 0..points.len() {
            if picked.contains(&i) {
                continue;
            }
            let d = picked.iter().map(|&p| dist2(&points[i], &points[p])).fold(f32::INFINITY, f32::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        picked.push(best.1);
    }
    picked
}

fn min_pairwise(points: &[Point], idx: &[usize]) -> f32 {
    let mut best = f32::INFINITY;
    for a in 0..idx.len() {
        for b in a + 1..idx.len() {
            best = best.min(dist2(&points[idx[a]], &points[idx[b]]).sqrt());
        }
    }
    best
}

#[test]
fn fps_examples() {
    let line = [[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.9, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let s = fps(&line, 2, 0).unwrap();
    assert_eq!(s.indices, vec![0, 3]);
    assert_eq!(s.positions, vec![line[0], line[3]]);

    assert_eq!(fps(&line, 1, 2).unwrap().indices, vec![2]);

    let mut all = fps(&line, 4, 1).unwrap().indices;
    all.sort_unstable();
    assert_eq!(all, vec![0, 1, 2, 3]);

    assert!(matches!(fps(&line, 5, 0), Err(Error::Size(_))));
    assert!(matches!(fps(&line, 2, 9), Err(Error::Index { .. })));
}

#[test]
fn fps_handles_duplicates_without_repeating() {
    let pts = vec![[0.0, 0.0, 0.0]; 6];
    let mut got = fps(&pts, 6, 3).unwrap().indices;
    got.sort_unstable();
    assert_eq!(got, (0..6).collect::<Vec<_>>());
}

#[test]
fn fps_matches_greedy_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for trial in 0..20 {
        let n = rng.gen_range(1..=256);
        let pts = cloud(n, &mut rng);
        let m = rng.gen_range(1..=n.min(40));
        let start = rng.gen_range(0..n);
        assert_eq!(fps(&pts, m, start).unwrap().indices, brute_fps(&pts, m, start), "trial {trial}");
    }
}

#[test]
fn fps_spreads_better_than_random_subsets() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let pts = cloud(300, &mut rng);
    let m = 16;
    let ours = min_pairwise(&pts, &fps(&pts, m, 0).unwrap().indices);
    let mut total = 0.0;
    for _ in 0..100 {
        total += min_pairwise(&pts, &random_sample(&pts, m, &mut rng).unwrap().indices);
    }
    assert!(ours >= total / 100.0, "fps {ours} vs random mean {}", total / 100.0);
}

#[test]
fn random_sample_is_distinct_and_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let pts = cloud(50, &mut rng);
    let a = random_sample(&pts, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = random_sample(&pts, 20, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(a, b);
    let mut idx = a.indices.clone();
    idx.sort_unstable();
    idx.dedup();
    assert_eq!(idx.len(), 20);
}

#[test]
fn knn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let pts = cloud(40, &mut rng);
    let own = knn(&pts, &pts, 1).unwrap();
    assert_eq!(own.as_slice(), (0..40).collect::<Vec<_>>().as_slice());

    let line = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
    assert_eq!(knn(&[[0.6, 0.0, 0.0]], &line, 2).unwrap().as_slice(), &[1, 0]);

    let two = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
    let padded = knn(&[[0.9, 0.0, 0.0]], &two, 4).unwrap();
    assert_eq!(padded.as_slice(), &[1, 0, 1, 1]);

    assert!(matches!(knn(&line, &[], 2), Err(Error::Size(_))));
}

#[test]
fn dilated_knn_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let pts = cloud(60, &mut rng);
    assert_eq!(dilated_knn(&pts, &pts, 5, 1).unwrap(), knn(&pts, &pts, 5).unwrap());

    let line: Vec<Point> = (0..6).map(|i| [i as f32, 0.0, 0.0]).collect();
    let origin = [[0.0, 0.0, 0.0]];
    assert_eq!(dilated_knn(&origin, &line, 2, 2).unwrap().as_slice(), &[0, 2]);
    assert_eq!(dilated_knn(&origin, &line, 1, 2).unwrap().as_slice(), &[0]);
}

#[test]
fn interpolation_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let high = cloud(20, &mut rng);
    let single = nn_interpolate(&[[0.0; 3]], &[1.5, -2.0], 2, &high).unwrap();
    assert!(single.chunks(2).all(|r| r == [1.5, -2.0]));

    let feats: Vec<f32> = (0..40).map(|v| v as f32).collect();
    assert_eq!(nn_interpolate(&high, &feats, 2, &high).unwrap(), feats);

    let low = cloud(8, &mut rng);
    let low_feat: Vec<f32> = (0..24).map(|v| v as f32 * 0.5).collect();
    let got = nn_interpolate(&low, &low_feat, 3, &high).unwrap();
    let nearest = brute_knn(&high, &low, 1);
    for (i, &j) in nearest.iter().enumerate() {
        assert_eq!(&got[i * 3..i * 3 + 3], &low_feat[j * 3..j * 3 + 3]);
    }
    // idempotent at fixed positions
    let again = nn_interpolate(&high, &got, 3, &high).unwrap();
    assert_eq!(again, got);

    assert!(nn_interpolate(&[], &[], 1, &high).is_err());
}

#[test]
fn neighborhood_stats_examples() {
    let centroid = [0.0, 0.0, 0.0];
    let reference = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let idx = NeighborIndex::new(vec![0, 1], 2).unwrap();
    let s = neighborhood_stats(&centroid, 3, &idx, &reference, None).unwrap();
    assert_eq!(s, NeighborhoodStats { mean_dist: 0.0, variance: 0.0 });

    let reference = [1.0, 0.0, 0.0, -1.0, 0.0, 0.0];
    let s = neighborhood_stats(&centroid, 3, &idx, &reference, None).unwrap();
    assert!((s.mean_dist - 1.0).abs() < 1e-12);
    assert!((s.variance - 1.0).abs() < 1e-12);

    // shifted values override the reference lookup
    let shifted = [0.5, 0.0, 0.0, -0.5, 0.0, 0.0];
    let s = neighborhood_stats(&centroid, 3, &idx, &reference, Some(&shifted)).unwrap();
    assert!((s.mean_dist - 0.5).abs() < 1e-12);
}

#[test]
fn neighborhood_stats_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let (n, k, dim) = (7, 4, 5);
    let reference: Vec<f32> = (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let idx: Vec<usize> = (0..n * k).map(|_| rng.gen_range(0..n)).collect();
    let idx = NeighborIndex::new(idx, k).unwrap();
    let got = neighborhood_stats(&reference, dim, &idx, &reference, None).unwrap();

    let mut dist = 0.0f64;
    let mut var = 0.0f64;
    for i in 0..n {
        let rows: Vec<&[f32]> = idx.row(i).iter().map(|&r| &reference[r * dim..(r + 1) * dim]).collect();
        for r in &rows {
            let mut s = 0.0f64;
            for c in 0..dim {
                s += ((r[c] - reference[i * dim + c]) as f64).powi(2);
            }
            dist += s.sqrt();
        }
        let mut v = 0.0f64;
        for c in 0..dim {
            let m: f64 = rows.iter().map(|r| r[c] as f64).sum::<f64>() / k as f64;
            v += rows.iter().map(|r| (r[c] as f64 - m).powi(2)).sum::<f64>() / k as f64;
        }
        var += v;
    }
    assert!((got.mean_dist - dist / (n * k) as f64).abs() < 1e-6);
    assert!((got.variance - var / n as f64).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn knn_equals_brute_force(seed in any::<u64>(), n in 1usize..512, k in 1usize..20, grid in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // integer grids create plenty of exact distance ties
        let pts: Vec<Point> = if grid {
            (0..n).map(|_| [rng.gen_range(0..4) as f32, rng.gen_range(0..4) as f32, rng.gen_range(0..4) as f32]).collect()
        } else {
            cloud(n, &mut rng)
        };
        let queries = cloud(16, &mut rng);
        prop_assert_eq!(knn(&pts, &pts, k).unwrap().as_slice().to_vec(), brute_knn(&pts, &pts, k));
        prop_assert_eq!(knn(&queries, &pts, k).unwrap().as_slice().to_vec(), brute_knn(&queries, &pts, k));
    }
}
