//! Kendall tau-b by exhaustive enumeration of ordered label pairs, with tie
//! counts taken from tie-group sizes.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sign(x: i64) -> i64 {
    x.signum()
}

/// Tau-b over the union of both lists; a missing label ranks `k + 1`.
pub fn tau_oracle(a: &[usize], b: &[usize]) -> Option<f64> {
    let k = a.len() as i64;
    let mut ranks: BTreeMap<usize, (i64, i64)> = BTreeMap::new();
    for &label in a.iter().chain(b) {
        ranks.insert(label, (k + 1, k + 1));
    }
    for (i, &label) in a.iter().enumerate() {
        ranks.get_mut(&label).unwrap().0 = i as i64 + 1;
    }
    for (i, &label) in b.iter().enumerate() {
        ranks.get_mut(&label).unwrap().1 = i as i64 + 1;
    }
    let pts: Vec<(i64, i64)> = ranks.into_values().collect();
    let n = pts.len() as i64;

    // Ordered pairs count each unordered pair twice.
    let mut twice_s = 0i64;
    for (i, p) in pts.iter().enumerate() {
        for (j, q) in pts.iter().enumerate() {
            if i != j {
                twice_s += sign(p.0 - q.0) * sign(p.1 - q.1);
            }
        }
    }
    let tie_pairs = |proj: fn(&(i64, i64)) -> i64| -> i64 {
        let mut groups: BTreeMap<i64, i64> = BTreeMap::new();
        for p in &pts {
            *groups.entry(proj(p)).or_default() += 1;
        }
        groups.values().map(|t| t * (t - 1) / 2).sum()
    };
    let n0 = n * (n - 1) / 2;
    let (n1, n2) = (tie_pairs(|p| p.0), tie_pairs(|p| p.1));
    let denom = (((n0 - n1) * (n0 - n2)) as f64).sqrt();
    (denom > 0.0).then(|| (twice_s / 2) as f64 / denom)
}

/// Two top-`k` lists of distinct labels drawn from a pool whose size varies,
/// so overlap ranges from identical sets to disjoint ones.
pub fn random_topk_pair(rng: &mut ChaCha8Rng, k: usize) -> (Vec<usize>, Vec<usize>) {
    let pool = rng.random_range(k..=3 * k);
    let mut labels: Vec<usize> = (0..pool).collect();
    labels.shuffle(rng);
    let a = labels[..k].to_vec();
    labels.shuffle(rng);
    let b = labels[..k].to_vec();
    (a, b)
}

pub fn pair_stream(seed: u64, n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| random_topk_pair(&mut rng, k)).collect()
}
