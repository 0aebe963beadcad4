use rand::seq::{index, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

/// Draws `s` distinct row indices from `0..n` uniformly without replacement.
pub fn subsample_indices<R: Rng + ?Sized>(n: usize, s: usize, rng: &mut R) -> Result<Vec<usize>> {
    if s > n {
        return Err(Error::InvalidInput(format!(
            "cannot draw {s} rows without replacement from {n}"
        )));
    }
    Ok(index::sample(rng, n, s).into_vec())
}

/// Randomly splits `indices` into a training half and an estimation half of
/// equal size.
pub fn honest_split<R: Rng + ?Sized>(
    indices: &[usize],
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if indices.len() % 2 != 0 {
        return Err(Error::InvalidInput(format!(
            "honest split needs an even number of rows, got {}",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);
    let est = shuffled.split_off(indices.len() / 2);
    Ok((shuffled, est))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use std::collections::BTreeSet;

    #[test]
    fn full_draw_is_whole_set() {
        let mut rng = seed::rng_from(1);
        let mut s = subsample_indices(5, 5, &mut rng).unwrap();
        s.sort_unstable();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(subsample_indices(3, 4, &mut rng).is_err());
    }

    #[test]
    fn draws_are_reproducible() {
        let a = subsample_indices(100, 10, &mut seed::rng_from(9)).unwrap();
        let b = subsample_indices(100, 10, &mut seed::rng_from(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<BTreeSet<_>>().len(), 10);
    }

    #[test]
    fn inclusion_frequency_is_s_over_n() {
        let mut rng = seed::rng_from(2);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for i in subsample_indices(10, 2, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 0.02, "{freq}");
        }
    }

    #[test]
    fn halves_partition_input() {
        let mut rng = seed::rng_from(3);
        let (a, b) = honest_split(&[1, 2], &mut rng).unwrap();
        assert!((a == vec![1] && b == vec![2]) || (a == vec![2] && b == vec![1]));

        let input: Vec<usize> = (0..40).collect();
        let (tr, est) = honest_split(&input, &mut rng).unwrap();
        assert_eq!((tr.len(), est.len()), (20, 20));
        let union: BTreeSet<_> = tr.iter().chain(&est).copied().collect();
        assert_eq!(union.len(), 40);

        assert!(honest_split(&[1, 2, 3], &mut rng).is_err());
    }

    #[test]
    fn each_row_lands_in_train_half_with_probability_half() {
        let mut rng = seed::rng_from(4);
        let mut counts = [0usize; 4];
        let trials = 10_000;
        for _ in 0..trials {
            let (tr, _) = honest_split(&[0, 1, 2, 3], &mut rng).unwrap();
            for i in tr {
                counts[i] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 0.5).abs() <= 0.02);
        }
    }
}
