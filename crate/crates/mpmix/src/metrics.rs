//! Partition-agreement metrics: contingency tables and the adjusted
//! Rand index (ARI), plus block-structure recovery for variable
//! assignments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cross-tabulation of two labelings of the same items. Labels are
/// compacted to dense indices in order of first appearance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub row_totals: Vec<u64>,
    pub col_totals: Vec<u64>,
    pub n: u64,
}

fn compact(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<usize> = Vec::new();
    labels
        .iter()
        .map(|&l| match map.iter().position(|&m| m == l) {
            Some(i) => i,
            None => {
                map.push(l);
                map.len() - 1
            }
        })
        .collect()
}

pub fn cross_tabulate(a: &[usize], b: &[usize]) -> Result<ContingencyTable> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("labelings must be non-empty".into()));
    }
    let ra = compact(a);
    let rb = compact(b);
    let nr = ra.iter().max().unwrap() + 1;
    let nc = rb.iter().max().unwrap() + 1;
    let mut counts = vec![vec![0u64; nc]; nr];
    for (&i, &j) in ra.iter().zip(&rb) {
        counts[i][j] += 1;
    }
    let row_totals: Vec<u64> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..nc).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    Ok(ContingencyTable { counts, row_totals, col_totals, n: a.len() as u64 })
}

fn choose2(x: u64) -> f64 {
    (x as f64) * (x as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings. When the adjustment
/// denominator is zero (e.g. both partitions put everything in one
/// cluster, or both fully separate every item) the partitions carry the
/// same grouping information and the index is defined as 1.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    let table = cross_tabulate(a, b)?;
    let sum_cells: f64 = table.counts.iter().flatten().map(|&c| choose2(c)).sum();
    let sum_rows: f64 = table.row_totals.iter().map(|&c| choose2(c)).sum();
    let sum_cols: f64 = table.col_totals.iter().map(|&c| choose2(c)).sum();
    let total = choose2(table.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / denom)
}

/// ARI between two variable-to-block assignments: how well the grouping
/// of variables into blocks was recovered, ignoring block labels.
pub fn block_recovery_ari(estimated: &[usize], truth: &[usize]) -> Result<f64> {
    adjusted_rand_index(estimated, truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// ARI from explicit pair counting: agreements on joined/separated
    /// pairs, adjusted for chance.
    fn ari_pairs(a: &[usize], b: &[usize]) -> f64 {
        let n = a.len();
        let (mut n11, mut n00, mut n10, mut n01) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in (i + 1)..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                match (sa, sb) {
                    (true, true) => n11 += 1.0,
                    (false, false) => n00 += 1.0,
                    (true, false) => n10 += 1.0,
                    (false, true) => n01 += 1.0,
                }
            }
        }
        let total = n11 + n00 + n10 + n01;
        let expected = (n11 + n10) * (n11 + n01) / total;
        let max_index = 0.5 * ((n11 + n10) + (n11 + n01));
        let denom = max_index - expected;
        if denom == 0.0 {
            return 1.0;
        }
        (n11 - expected) / denom
    }

    #[test]
    fn identical_partitions_score_one() {
        let z = vec![0, 0, 1, 1, 2];
        assert_relative_eq!(adjusted_rand_index(&z, &z).unwrap(), 1.0);
    }

    #[test]
    fn label_permutation_is_ignored() {
        let a = vec![0, 0, 1, 1, 2, 2];
        let b = vec![5, 5, 9, 9, 0, 0];
        assert_relative_eq!(adjusted_rand_index(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn crossed_pairs_give_negative_value() {
        let a = vec![0, 0, 1, 1];
        let b = vec![0, 1, 0, 1];
        assert_relative_eq!(adjusted_rand_index(&a, &b).unwrap(), -0.5);
    }

    #[test]
    fn degenerate_cases_return_one() {
        assert_relative_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert_relative_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        assert_relative_eq!(adjusted_rand_index(&[0], &[0]).unwrap(), 1.0);
    }

    #[test]
    fn half_agreement_value() {
        // Known value: ARI((0,0,1,1,2,2),(0,0,1,2,2,2)) from the
        // contingency table: cell pairs 1+0+0+1=2; row pairs 1+1+1=3;
        // column pairs 1+0+3=4 -> (2 - 12/15) / (3.5 - 12/15) = 4/9.
        let a = vec![0, 0, 1, 1, 2, 2];
        let b = vec![0, 0, 1, 2, 2, 2];
        let expect = 4.0 / 9.0;
        assert_relative_eq!(adjusted_rand_index(&a, &b).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
        assert!(adjusted_rand_index(&[], &[]).is_err());
    }

    #[test]
    fn contingency_table_totals() {
        let t = cross_tabulate(&[0, 0, 1, 1, 1], &[1, 0, 1, 1, 0]).unwrap();
        assert_eq!(t.n, 5);
        assert_eq!(t.row_totals, vec![2, 3]);
        assert_eq!(t.col_totals, vec![3, 2]);
        let sum: u64 = t.counts.iter().flatten().sum();
        assert_eq!(sum, 5);
    }

    #[test]
    fn matches_pair_counting_on_random_labelings() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let n = rng.gen_range(2..30);
            let ka = rng.gen_range(1..6);
            let kb = rng.gen_range(1..6);
            let a: Vec<usize> = (0..n).map(|_| rng.gen_range(0..ka)).collect();
            let b: Vec<usize> = (0..n).map(|_| rng.gen_range(0..kb)).collect();
            let fast = adjusted_rand_index(&a, &b).unwrap();
            let slow = ari_pairs(&a, &b);
            assert_relative_eq!(fast, slow, epsilon = 1e-12);
        }
    }

    #[test]
    fn block_recovery_uses_ari() {
        let est = vec![1, 1, 0, 0, 2];
        let truth = vec![0, 0, 1, 1, 2];
        assert_relative_eq!(block_recovery_ari(&est, &truth).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(labels in proptest::collection::vec((0usize..4, 0usize..4), 2..40)) {
            let a: Vec<usize> = labels.iter().map(|p| p.0).collect();
            let b: Vec<usize> = labels.iter().map(|p| p.1).collect();
            let ab = adjusted_rand_index(&a, &b).unwrap();
            let ba = adjusted_rand_index(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab <= 1.0 + 1e-12);
            let aa = adjusted_rand_index(&a, &a).unwrap();
            prop_assert!((aa - 1.0).abs() < 1e-12);
        }
    }
}
