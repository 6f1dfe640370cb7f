//! Distance-based metrics over embeddings.

use rand::seq::{index, SliceRandom};

use crate::error::{Error, Result};
use crate::linalg::euclidean;
use crate::rng::Rng;

/// Unordered pair `k` of `n` items in lexicographic order.
fn decode_pair(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    while k >= n - 1 - i {
        k -= n - 1 - i;
        i += 1;
    }
    (i, i + 1 + k)
}

/// Up to `count` distinct unordered pairs; every pair when `count` covers them all.
fn sample_pairs(n: usize, count: usize, rng: &mut Rng) -> Vec<(usize, usize)> {
    let total = n * (n - 1) / 2;
    if count >= total {
        return (0..total).map(|k| decode_pair(k, n)).collect();
    }
    index::sample(rng, total, count).into_iter().map(|k| decode_pair(k, n)).collect()
}

fn mean_pair_distance(set: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| euclidean(&set[i], &set[j])).sum::<f64>() / pairs.len() as f64
}

/// Mean distance over `pair_count` distinct random pairs of embeddings.
pub fn diversity(embeddings: &[Vec<f64>], pair_count: usize, rng: &mut Rng) -> Result<f64> {
    if embeddings.len() < 2 || pair_count == 0 {
        return Err(Error::InvalidInput(format!(
            "diversity needs at least 2 embeddings and 1 pair, got {} and {pair_count}",
            embeddings.len()
        )));
    }
    Ok(mean_pair_distance(embeddings, &sample_pairs(embeddings.len(), pair_count, rng)))
}

/// Mean distance between each text embedding and its paired motion embedding.
pub fn mm_dist(text: &[Vec<f64>], motion: &[Vec<f64>]) -> Result<f64> {
    if text.len() != motion.len() || text.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} text and {} motion embeddings",
            text.len(),
            motion.len()
        )));
    }
    Ok(text.iter().zip(motion).map(|(a, b)| euclidean(a, b)).sum::<f64>() / text.len() as f64)
}

/// Top-1 through top-`max_k` retrieval accuracy within shuffled batches of
/// `batch_size` pairs. A sample scores at `k` when fewer than `k` motions in
/// its batch are strictly closer to its text than its own motion. The
/// trailing incomplete batch is dropped.
pub fn r_precision_curve(
    text: &[Vec<f64>],
    motion: &[Vec<f64>],
    max_k: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    if text.len() != motion.len() {
        return Err(Error::InvalidInput(format!("{} text and {} motion embeddings", text.len(), motion.len())));
    }
    if max_k == 0 || max_k >= batch_size {
        return Err(Error::InvalidInput(format!("k = {max_k} must lie in 1..{batch_size}")));
    }
    if text.len() < batch_size {
        return Err(Error::InvalidInput(format!("need at least {batch_size} pairs, got {}", text.len())));
    }
    let mut order: Vec<usize> = (0..text.len()).collect();
    order.shuffle(rng);
    let mut hits = vec![0usize; max_k];
    let mut total = 0usize;
    for batch in order.chunks_exact(batch_size) {
        for &i in batch {
            let own = euclidean(&text[i], &motion[i]);
            let rank = batch.iter().filter(|&&j| euclidean(&text[i], &motion[j]) < own).count();
            for (k, h) in hits.iter_mut().enumerate() {
                if rank < k + 1 {
                    *h += 1;
                }
            }
            total += 1;
        }
    }
    Ok(hits.into_iter().map(|h| h as f64 / total as f64).collect())
}

pub fn r_precision(text: &[Vec<f64>], motion: &[Vec<f64>], k: usize, batch_size: usize, rng: &mut Rng) -> Result<f64> {
    Ok(r_precision_curve(text, motion, k, batch_size, rng)?[k - 1])
}

/// Mean within-group distance over up to `pairs_per_group` distinct pairs
/// per group, averaged over groups.
pub fn mmodality(groups: &[Vec<Vec<f64>>], pairs_per_group: usize, rng: &mut Rng) -> Result<f64> {
    if groups.is_empty() || pairs_per_group == 0 {
        return Err(Error::InvalidInput("mmodality needs groups and pairs".into()));
    }
    let mut total = 0.0;
    for (g, set) in groups.iter().enumerate() {
        if set.len() < 2 {
            return Err(Error::InvalidInput(format!("group {g} has {} samples, need 2", set.len())));
        }
        total += mean_pair_distance(set, &sample_pairs(set.len(), pairs_per_group, rng));
    }
    Ok(total / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_set(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::seeded(seed);
        (0..n).map(|_| (0..d).map(|_| r.gen_range(-1.0..1.0)).collect()).collect()
    }

    fn exhaustive_mean(set: &[Vec<f64>]) -> f64 {
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..set.len() {
            for j in i + 1..set.len() {
                sum += set[i].iter().zip(&set[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                count += 1;
            }
        }
        sum / count as f64
    }

    #[test]
    fn pair_decoding_enumerates_all_pairs() {
        for n in 2..8 {
            let pairs: Vec<_> = (0..n * (n - 1) / 2).map(|k| decode_pair(k, n)).collect();
            let mut want = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    want.push((i, j));
                }
            }
            assert_eq!(pairs, want);
        }
    }

    #[test]
    fn diversity_examples() {
        let mut r = rng::seeded(0);
        assert_eq!(diversity(&vec![vec![1.0, 2.0]; 6], 10, &mut r).unwrap(), 0.0);
        assert_eq!(diversity(&[vec![0.0, 0.0], vec![3.0, 4.0]], 5, &mut r).unwrap(), 5.0);
        let set = random_set(9, 4, 3);
        let got = diversity(&set, 1000, &mut rng::seeded(1)).unwrap();
        assert!((got - exhaustive_mean(&set)).abs() < 1e-12);
        let a = diversity(&set, 10, &mut rng::seeded(5)).unwrap();
        let b = diversity(&set, 10, &mut rng::seeded(5)).unwrap();
        assert_eq!(a, b);
        assert!(diversity(&set[..1], 3, &mut r).is_err());
    }

    #[test]
    fn mm_dist_examples() {
        let a = random_set(5, 3, 1);
        assert_eq!(mm_dist(&a, &a).unwrap(), 0.0);
        let t = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        let m = vec![vec![3.0, 0.0], vec![1.0, 5.0]];
        assert_eq!(mm_dist(&t, &m).unwrap(), 3.5);
        assert!(mm_dist(&t, &m[..1]).is_err());
        let (t, m) = (random_set(20, 4, 2), random_set(20, 4, 3));
        let mut want = 0.0;
        for i in 0..20 {
            let mut s = 0.0;
            for c in 0..4 {
                s += (t[i][c] - m[i][c]).powi(2);
            }
            want += s.sqrt();
        }
        assert!((mm_dist(&t, &m).unwrap() - want / 20.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_pairs_score_one() {
        let set = random_set(64, 5, 4);
        let curve = r_precision_curve(&set, &set, 3, 32, &mut rng::seeded(0)).unwrap();
        assert_eq!(curve, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn unrelated_pairs_score_near_chance() {
        // Independent text and motion draws: the true motion's rank is uniform
        // over the batch, so top-3 accuracy is 3/32 in expectation.
        let mut r = rng::seeded(9);
        let mut sum = 0.0;
        let trials = 200;
        for _ in 0..trials {
            let t = random_set(64, 6, r.gen());
            let m = random_set(64, 6, r.gen());
            sum += r_precision(&t, &m, 3, 32, &mut r).unwrap();
        }
        let mean = sum / trials as f64;
        assert!((mean - 3.0 / 32.0).abs() < 0.015, "{mean}");
    }

    #[test]
    fn matches_brute_force_ranking() {
        let t = random_set(70, 3, 10);
        let m = random_set(70, 3, 11);
        let mut r1 = rng::seeded(12);
        let curve = r_precision_curve(&t, &m, 31, 32, &mut r1).unwrap();
        let mut order: Vec<usize> = (0..70).collect();
        order.shuffle(&mut rng::seeded(12));
        for k in [1usize, 5, 31] {
            let mut hits = 0;
            for batch in order.chunks(32).take(2) {
                for &i in batch {
                    let mut d: Vec<(f64, usize)> = batch
                        .iter()
                        .map(|&j| ((0..3).map(|c| (t[i][c] - m[j][c]).powi(2)).sum::<f64>().sqrt(), j))
                        .collect();
                    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    if d[..k].iter().any(|&(_, j)| j == i) {
                        hits += 1;
                    }
                }
            }
            assert!((curve[k - 1] - hits as f64 / 64.0).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn r_precision_errors() {
        let s = random_set(40, 2, 0);
        let mut r = rng::seeded(0);
        assert!(r_precision(&s, &s, 32, 32, &mut r).is_err());
        assert!(r_precision(&s[..20], &s[..20], 1, 32, &mut r).is_err());
        assert!(r_precision(&s, &s[..39], 1, 32, &mut r).is_err());
    }

    #[test]
    fn mmodality_examples() {
        let mut r = rng::seeded(0);
        let same = vec![vec![vec![1.0, 1.0]; 5], vec![vec![-2.0, 0.0]; 3]];
        assert_eq!(mmodality(&same, 10, &mut r).unwrap(), 0.0);
        let two = vec![vec![vec![0.0], vec![2.0]], vec![vec![1.0], vec![3.0]]];
        assert_eq!(mmodality(&two, 10, &mut r).unwrap(), 2.0);
        let groups = vec![random_set(6, 3, 1), random_set(4, 3, 2)];
        let want = (exhaustive_mean(&groups[0]) + exhaustive_mean(&groups[1])) / 2.0;
        assert!((mmodality(&groups, 100, &mut r).unwrap() - want).abs() < 1e-12);
        assert!(mmodality(&[vec![vec![0.0]]], 10, &mut r).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn r_precision_is_monotone_in_k(seed in 0u64..10_000) {
            let t = random_set(64, 3, seed);
            let m = random_set(64, 3, seed + 1);
            let curve = r_precision_curve(&t, &m, 31, 32, &mut rng::seeded(seed)).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
