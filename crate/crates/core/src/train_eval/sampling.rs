//! Negative sampling for implicit feedback.

use rand::seq::index::sample;
use rand::Rng;

/// Draws up to `k` distinct items uniformly from `0..n_items` minus the
/// sorted `positives`. When fewer than `k` negatives exist, all of them
/// are returned (in ascending order) and a debug message is logged.
pub fn negative_sample<R: Rng + ?Sized>(positives: &[usize], n_items: usize, k: usize, rng: &mut R) -> Vec<usize> {
    debug_assert!(positives.windows(2).all(|w| w[0] < w[1]));
    let available = n_items - positives.iter().filter(|&&p| p < n_items).count();
    if k >= available {
        if k > available {
            log::debug!("requested {k} negatives but only {available} exist");
        }
        return (0..n_items).filter(|i| positives.binary_search(i).is_err()).collect();
    }
    // Map a draw from 0..available onto the complement of the positives.
    sample(rng, available, k)
        .into_iter()
        .map(|mut j| {
            for &p in positives {
                if p <= j {
                    j += 1;
                } else {
                    break;
                }
            }
            j
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    use super::*;
    use crate::rng::Rng as ChaCha;

    #[test]
    fn single_remaining_item() {
        let mut r = ChaCha::seed_from_u64(0);
        assert_eq!(negative_sample(&[0, 1, 3], 4, 1, &mut r), vec![2]);
        assert_eq!(negative_sample(&[0, 1, 3], 4, 5, &mut r), vec![2]);
    }

    #[test]
    fn never_returns_positives_and_no_duplicates() {
        let mut r = ChaCha::seed_from_u64(1);
        let pos = [2, 3, 7, 11, 12];
        for _ in 0..10_000 {
            let s = negative_sample(&pos, 15, 4, &mut r);
            assert_eq!(s.len(), 4);
            assert!(s.iter().all(|x| !pos.contains(x) && *x < 15));
            let mut d = s.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 4);
        }
    }

    #[test]
    fn frequencies_are_uniform() {
        let mut r = ChaCha::seed_from_u64(2);
        let pos = [0, 4, 5, 9];
        let n = 20;
        let mut counts = vec![0usize; n];
        let draws = 100_000;
        for _ in 0..draws {
            for i in negative_sample(&pos, n, 1, &mut r) {
                counts[i] += 1;
            }
        }
        let cells: Vec<usize> = (0..n).filter(|i| !pos.contains(i)).collect();
        let expected = draws as f64 / cells.len() as f64;
        let chi2: f64 = cells
            .iter()
            .map(|&i| (counts[i] as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }
}
