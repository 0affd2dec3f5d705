use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DataTable;

/// Row indices of each split, each list in ascending order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test_id: Vec<usize>,
    pub test_ood: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: DataTable,
    pub test_id: DataTable,
    pub test_ood: DataTable,
    pub indices: SplitIndices,
}

/// OOD holds the 10% of rows with the largest key (ties broken by row
/// order); a seeded shuffle of the rest gives 10% in-domain test rows, and
/// everything else trains.
pub fn split_indices(keys: &[f64], seed: u64) -> SplitIndices {
    let n = keys.len();
    let n_ood = n / 10;
    let n_id = n / 10;
    let mut by_key: Vec<usize> = (0..n).collect();
    by_key.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(b.cmp(&a)));
    let mut test_ood: Vec<usize> = by_key[..n_ood].to_vec();
    let mut rest: Vec<usize> = by_key[n_ood..].to_vec();
    rest.sort_unstable();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let mut test_id = rest[..n_id].to_vec();
    let mut train = rest[n_id..].to_vec();
    test_ood.sort_unstable();
    test_id.sort_unstable();
    train.sort_unstable();
    SplitIndices {
        train,
        test_id,
        test_ood,
    }
}

/// Split on the input column `key_column` (0-based among the inputs).
pub fn make_splits(table: &DataTable, key_column: usize, seed: u64) -> SplitSet {
    let keys = table.column(key_column + 1);
    let indices = split_indices(&keys, seed);
    SplitSet {
        train: table.select(&indices.train),
        test_id: table.select(&indices.test_id),
        test_ood: table.select(&indices.test_ood),
        indices,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_sizes() {
        let keys: Vec<f64> = (0..5000).map(|i| i as f64 * 0.012).collect();
        let s = split_indices(&keys, 7);
        assert_eq!((s.train.len(), s.test_id.len(), s.test_ood.len()), (4000, 500, 500));
        let min_ood = s.test_ood.iter().map(|&i| keys[i]).fold(f64::INFINITY, f64::min);
        assert!(s.train.iter().chain(&s.test_id).all(|&i| keys[i] <= min_ood));
        assert_eq!(s, split_indices(&keys, 7));
        assert_ne!(s.test_id, split_indices(&keys, 8).test_id);
    }

    #[test]
    fn ties_at_the_boundary_follow_row_order() {
        let keys = vec![1.0; 20];
        let s = split_indices(&keys, 0);
        assert_eq!(s.test_ood, vec![18, 19]);
    }
}
