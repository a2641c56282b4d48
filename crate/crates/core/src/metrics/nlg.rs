//! BLEU and ROUGE-L over token-id sequences.

use std::collections::HashMap;

/// Modified n-gram precision numerator/denominator for one order.
fn ngram_hits(candidate: &[u32], reference: &[u32], n: usize) -> (usize, usize) {
    if candidate.len() < n {
        return (0, 0);
    }
    fn count<'a>(tokens: &'a [u32], n: usize) -> HashMap<&'a [u32], usize> {
        let mut map: HashMap<&[u32], usize> = HashMap::new();
        for window in tokens.windows(n) {
            *map.entry(window).or_insert(0) += 1;
        }
        map
    }
    let cand = count(candidate, n);
    let refs = count(reference, n);
    let total: usize = cand.values().sum();
    let mut hits = 0usize;
    for (gram, &c) in &cand {
        if let Some(&r) = refs.get(gram) {
            hits += c.min(r);
        }
    }
    (hits, total)
}

/// BLEU-n: geometric mean of modified i-gram precisions for i = 1..=n with
/// add-epsilon smoothing, times a brevity penalty `exp(1 - |ref|/|cand|)`
/// applied when the candidate is shorter than the reference.
///
/// An empty candidate scores 0 by convention.
pub fn bleu_n(candidate: &[u32], reference: &[u32], n: usize) -> f64 {
    assert!((1..=4).contains(&n), "bleu order must be 1..=4");
    assert!(!reference.is_empty(), "bleu reference must be non-empty");
    if candidate.is_empty() {
        return 0.0;
    }
    const EPS: f64 = 1e-9;
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (hits, total) = ngram_hits(candidate, reference, order);
        let precision = if total == 0 {
            EPS
        } else if hits == 0 {
            EPS / total as f64
        } else {
            hits as f64 / total as f64
        };
        log_sum += precision.ln();
    }
    let geo = (log_sum / n as f64).exp();
    let bp = if candidate.len() < reference.len() {
        (1.0 - reference.len() as f64 / candidate.len() as f64).exp()
    } else {
        1.0
    };
    (geo * bp).clamp(0.0, 1.0)
}

fn lcs_len(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let m = b.len();
    let mut prev = vec![0usize; m + 1];
    let mut curr = vec![0usize; m + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[m]
}

/// ROUGE-L F1 (beta = 1): harmonic mean of LCS precision and recall.
/// An empty candidate scores 0.
pub fn rouge_l(candidate: &[u32], reference: &[u32]) -> f64 {
    assert!(!reference.is_empty(), "rouge reference must be non-empty");
    if candidate.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(candidate, reference) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / candidate.len() as f64;
    let r = lcs / reference.len() as f64;
    2.0 * p * r / (p + r)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: literal n-gram enumeration with Vec scans, no
    // hashing, plus the textbook BLEU formula written out longhand.
    fn oracle_bleu(cand: &[u32], refr: &[u32], n: usize) -> f64 {
        if cand.is_empty() {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for order in 1..=n {
            let grams = |s: &[u32]| -> Vec<Vec<u32>> {
                if s.len() < order {
                    Vec::new()
                } else {
                    (0..=s.len() - order).map(|i| s[i..i + order].to_vec()).collect()
                }
            };
            let cg = grams(cand);
            let rg = grams(refr);
            let mut hits = 0usize;
            let mut used = vec![false; rg.len()];
            for g in &cg {
                for (i, r) in rg.iter().enumerate() {
                    if !used[i] && r == g {
                        used[i] = true;
                        hits += 1;
                        break;
                    }
                }
            }
            let total = cg.len();
            let p = if total == 0 {
                1e-9
            } else if hits == 0 {
                1e-9 / total as f64
            } else {
                hits as f64 / total as f64
            };
            log_sum += p.ln();
        }
        let geo = (log_sum / n as f64).exp();
        let bp = if cand.len() < refr.len() {
            (1.0 - refr.len() as f64 / cand.len() as f64).exp()
        } else {
            1.0
        };
        geo * bp
    }

    // Independent oracle: recursive LCS with memoization over indices.
    fn oracle_lcs(a: &[u32], b: &[u32]) -> usize {
        fn go(a: &[u32], b: &[u32], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
            if i == a.len() || j == b.len() {
                return 0;
            }
            if let Some(v) = memo[i][j] {
                return v;
            }
            let v = if a[i] == b[j] {
                1 + go(a, b, i + 1, j + 1, memo)
            } else {
                go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
            };
            memo[i][j] = Some(v);
            v
        }
        let mut memo = vec![vec![None; b.len()]; a.len()];
        go(a, b, 0, 0, &mut memo)
    }

    #[test]
    fn bleu_identity_is_one() {
        let s = [5u32, 6, 7, 8, 9];
        for n in 1..=4 {
            assert!((bleu_n(&s, &s, n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn bleu_disjoint_is_near_zero() {
        let c = [1u32, 2, 3];
        let r = [4u32, 5, 6];
        assert!(bleu_n(&c, &r, 1) <= 1e-6);
    }

    #[test]
    fn bleu_brevity_penalty_hand_case() {
        // cand "the cat sat" vs ref "the cat sat down": p1 = 1, BP = exp(1 - 4/3)
        let c = [10u32, 11, 12];
        let r = [10u32, 11, 12, 13];
        let expected = (1.0f64 - 4.0 / 3.0).exp();
        assert!((bleu_n(&c, &r, 1) - expected).abs() < 1e-9);
        assert!((expected - 0.7165313105737893).abs() < 1e-12);
    }

    #[test]
    fn bleu_empty_candidate_is_zero() {
        assert_eq!(bleu_n(&[], &[1, 2], 2), 0.0);
    }

    #[test]
    fn bleu_matches_enumeration_oracle_on_many_cases() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for case in 0..50 {
            let cl = rng.gen_range(1..12);
            let rl = rng.gen_range(1..12);
            let c: Vec<u32> = (0..cl).map(|_| rng.gen_range(0..6)).collect();
            let r: Vec<u32> = (0..rl).map(|_| rng.gen_range(0..6)).collect();
            for n in 1..=4 {
                let got = bleu_n(&c, &r, n);
                let want = oracle_bleu(&c, &r, n).clamp(0.0, 1.0);
                assert!(
                    (got - want).abs() < 1e-9,
                    "case {case} n {n}: {got} vs {want} (c={c:?}, r={r:?})"
                );
            }
        }
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let s = [3u32, 1, 4, 1, 5];
        assert!((rouge_l(&s, &s) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&[1, 2], &[3, 4]), 0.0);
    }

    #[test]
    fn rouge_hand_case() {
        // cand "a b c d", ref "a c d e": LCS 3, P = R = 3/4, F = 0.75
        let c = [1u32, 2, 3, 4];
        let r = [1u32, 3, 4, 5];
        assert!((rouge_l(&c, &r) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn rouge_matches_recursive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        for _ in 0..50 {
            let cl = rng.gen_range(1..15);
            let rl = rng.gen_range(1..15);
            let c: Vec<u32> = (0..cl).map(|_| rng.gen_range(0..5)).collect();
            let r: Vec<u32> = (0..rl).map(|_| rng.gen_range(0..5)).collect();
            let lcs = oracle_lcs(&c, &r) as f64;
            let want = if lcs == 0.0 {
                0.0
            } else {
                let p = lcs / c.len() as f64;
                let rr = lcs / r.len() as f64;
                2.0 * p * rr / (p + rr)
            };
            assert!((rouge_l(&c, &r) - want).abs() < 1e-9);
        }
    }

    #[test]
    fn relabeling_invariance() {
        // Consistent token-id relabeling must not change either metric.
        let c = [0u32, 1, 2, 1];
        let r = [0u32, 2, 1, 3];
        let map = |t: u32| t * 7 + 100;
        let c2: Vec<u32> = c.iter().map(|&t| map(t)).collect();
        let r2: Vec<u32> = r.iter().map(|&t| map(t)).collect();
        for n in 1..=4 {
            assert!((bleu_n(&c, &r, n) - bleu_n(&c2, &r2, n)).abs() < 1e-12);
        }
        assert!((rouge_l(&c, &r) - rouge_l(&c2, &r2)).abs() < 1e-12);
    }
}
