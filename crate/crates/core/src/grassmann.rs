//! Morse data of the subspace reconstruction loss on `Gr_k(ℝ^m)`.
//!
//! The critical points are the `C(m, k)` principal subspaces `span(U_I)`.
//! Their Morse index counts the pairs `(i, j)` with `i ∈ I`, `j ∉ I`,
//! `j < i`: one descending direction for each way of rotating an included
//! principal direction toward an excluded one of larger singular value.
//! Trajectory counts between adjacent indices come from the same rotation
//! picture (two rotation senses per plane), not from integrating the flow.

use std::collections::HashMap;

use itertools::Itertools;

use crate::data::DataMatrix;
use crate::error::{invalid, Error, Result};
use crate::landscape::IndexSet;
use crate::spectra::Matrix;

/// Enumeration guard rail.
pub const MAX_DIM: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct MorseCell {
    pub index_set: IndexSet,
    pub morse_index: usize,
    pub critical_value: f64,
}

/// `Σ_j (i_j − j)` over the (0-based, increasing) indices; valid for any size.
pub fn descending_pairs(index_set: &IndexSet) -> usize {
    index_set.as_slice().iter().enumerate().map(|(j, i)| i - j).sum()
}

pub fn morse_index(index_set: &IndexSet, k: usize) -> Result<usize> {
    if index_set.len() != k {
        return Err(invalid(format!(
            "index set {index_set} has {} elements, expected k = {k}",
            index_set.len()
        )));
    }
    Ok(descending_pairs(index_set))
}

fn check_dims(m: usize, k: usize) -> Result<()> {
    if k > m {
        return Err(invalid(format!("k = {k} exceeds m = {m}")));
    }
    if m > MAX_DIM {
        return Err(invalid(format!("m = {m} exceeds the enumeration limit {MAX_DIM}")));
    }
    Ok(())
}

/// All `k`-subsets of `0..m` in lexicographic order.
pub fn index_sets(m: usize, k: usize) -> impl Iterator<Item = IndexSet> {
    (0..m).combinations(k).map(IndexSet::from_sorted_unchecked)
}

pub fn enumerate_cells(data: &DataMatrix, k: usize) -> Result<Vec<MorseCell>> {
    let m = data.m();
    check_dims(m, k)?;
    if let Some((first, second)) = data.repeated_singular_values(1e-9) {
        return Err(Error::RepeatedSpectrum { first: first + 1, second: second + 1 });
    }
    let s2 = data.sigma_squared();
    let total: f64 = s2.iter().sum();
    Ok(index_sets(m, k)
        .map(|set| {
            let kept: f64 = set.as_slice().iter().map(|i| s2[*i]).sum();
            MorseCell {
                morse_index: descending_pairs(&set),
                critical_value: (total - kept).max(0.0),
                index_set: set,
            }
        })
        .collect())
}

/// Sum of squared distances from the data points to `span(basis)`.
pub fn loss_on_plane(data: &DataMatrix, basis: &Matrix) -> Result<f64> {
    if basis.nrows() != data.m() {
        return Err(Error::ShapeMismatch(format!("basis has {} rows, data has m = {}", basis.nrows(), data.m())));
    }
    let k = basis.ncols();
    if (basis.transpose() * basis - Matrix::identity(k, k)).amax() > 1e-8 {
        return Err(invalid("basis columns are not orthonormal"));
    }
    let projected = data.x() - basis * (basis.transpose() * data.x());
    Ok(projected.norm_squared())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub upper: IndexSet,
    pub lower: IndexSet,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct ParityReport {
    pub m: usize,
    pub k: usize,
    /// Every pair of cells with indices `(d, d − 1)` joined by at least one trajectory.
    pub connections: Vec<Trajectory>,
    /// Number of cell pairs with adjacent indices (connected or not).
    pub adjacent_pairs: usize,
    pub all_even: bool,
    /// Cells per Morse index `0..=k(m−k)`.
    pub cells_per_index: Vec<usize>,
    /// Coefficients of the Gaussian binomial `[m choose k]_q`.
    pub q_binomial: Vec<usize>,
}

impl ParityReport {
    pub fn counts_match(&self) -> bool {
        self.cells_per_index == self.q_binomial
    }

    /// The 𝔽₂ boundary vanishes iff every trajectory count is even.
    pub fn f2_boundary_is_zero(&self) -> bool {
        self.all_even
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.cells_per_index
            .iter()
            .enumerate()
            .map(|(d, c)| if d % 2 == 0 { *c as i64 } else { -(*c as i64) })
            .sum()
    }
}

pub fn boundary_parity(m: usize, k: usize) -> Result<ParityReport> {
    check_dims(m, k)?;
    let cells: Vec<(IndexSet, usize)> = index_sets(m, k).map(|s| {
        let d = descending_pairs(&s);
        (s, d)
    }).collect();
    let by_set: HashMap<&IndexSet, usize> = cells.iter().map(|(s, d)| (s, *d)).collect();

    let top = k * (m - k);
    let mut cells_per_index = vec![0usize; top + 1];
    for (_, d) in &cells {
        cells_per_index[*d] += 1;
    }
    let adjacent_pairs = (1..=top).map(|d| cells_per_index[d] * cells_per_index[d - 1]).sum();

    // Each single replacement i -> j (i ∈ I, j ∉ I) lowering the index by one
    // is a rotation in the (u_i, u_j) plane; it can be performed in two senses.
    let mut counts: HashMap<(IndexSet, IndexSet), usize> = HashMap::new();
    for (upper, d) in &cells {
        for &i in upper.as_slice() {
            for j in (0..m).filter(|j| !upper.contains(*j)) {
                let mut swapped: Vec<usize> = upper.as_slice().iter().map(|&x| if x == i { j } else { x }).collect();
                swapped.sort_unstable();
                let lower = IndexSet::from_sorted_unchecked(swapped);
                if by_set[&lower] + 1 == *d {
                    *counts.entry((upper.clone(), lower)).or_insert(0) += 2;
                }
            }
        }
    }
    let mut connections: Vec<Trajectory> =
        counts.into_iter().map(|((upper, lower), count)| Trajectory { upper, lower, count }).collect();
    connections.sort_by(|a, b| a.upper.cmp(&b.upper).then_with(|| a.lower.cmp(&b.lower)));
    let all_even = connections.iter().all(|t| t.count % 2 == 0);

    Ok(ParityReport {
        m,
        k,
        connections,
        adjacent_pairs,
        all_even,
        cells_per_index,
        q_binomial: gaussian_binomial(m, k),
    })
}

/// Coefficients of `[m choose k]_q` via `[m, k] = [m−1, k−1] + q^k [m−1, k]`.
pub fn gaussian_binomial(m: usize, k: usize) -> Vec<usize> {
    if k > m {
        return Vec::new();
    }
    // table[j] holds [row choose j] for the current row.
    let mut table: Vec<Vec<usize>> = vec![vec![1]];
    for row in 1..=m {
        let mut next: Vec<Vec<usize>> = Vec::with_capacity(row + 1);
        for j in 0..=row {
            if j == 0 || j == row {
                next.push(vec![1]);
                continue;
            }
            let a = &table[j - 1];
            let b = &table[j];
            let mut poly = vec![0usize; (a.len()).max(b.len() + j)];
            for (d, c) in a.iter().enumerate() {
                poly[d] += c;
            }
            for (d, c) in b.iter().enumerate() {
                poly[d + j] += c;
            }
            next.push(poly);
        }
        table = next;
    }
    table.swap_remove(k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{descending_spectrum, synthetic};
    use crate::spectra::haar_orthogonal;

    fn set(one_based: &[usize]) -> IndexSet {
        IndexSet::from_one_based(one_based).unwrap()
    }

    fn excluded_below(index_set: &IndexSet, m: usize) -> usize {
        let s = index_set.as_slice();
        s.iter().map(|&i| (0..m).filter(|j| *j < i && !s.contains(j)).count()).sum()
    }

    #[test]
    fn morse_index_examples() {
        assert_eq!(morse_index(&set(&[1, 2]), 2).unwrap(), 0);
        assert_eq!(morse_index(&set(&[2, 4]), 2).unwrap(), 3);
        assert_eq!(morse_index(&set(&[3, 4]), 2).unwrap(), 4);
        assert!(morse_index(&set(&[1]), 2).is_err());
    }

    #[test]
    fn morse_index_counts_rotation_pairs() {
        for m in 1..=7 {
            for k in 0..=m {
                for s in index_sets(m, k) {
                    assert_eq!(descending_pairs(&s), excluded_below(&s, m));
                }
            }
        }
    }

    #[test]
    fn gr24_table() {
        let d = synthetic(4, 4, &[4.0, 3.0, 2.0, 1.0], 0).unwrap();
        let cells = enumerate_cells(&d, 2).unwrap();
        assert_eq!(cells.len(), 6);
        let mut idx: Vec<usize> = cells.iter().map(|c| c.morse_index).collect();
        idx.sort_unstable();
        assert_eq!(idx, vec![0, 1, 2, 2, 3, 4]);
        let min = cells.iter().find(|c| c.morse_index == 0).unwrap();
        assert_eq!(min.index_set, set(&[1, 2]));
        assert!((min.critical_value - 5.0).abs() < 1e-9);
        assert!(cells.iter().filter(|c| c.morse_index != 0).all(|c| c.critical_value > min.critical_value));
    }

    #[test]
    fn lines_in_the_plane() {
        let d = synthetic(2, 2, &[2.0, 1.0], 3).unwrap();
        let cells = enumerate_cells(&d, 1).unwrap();
        assert_eq!(cells[0].index_set, set(&[1]));
        assert_eq!(cells[0].morse_index, 0);
        assert!((cells[0].critical_value - 1.0).abs() < 1e-9);
        assert_eq!(cells[1].morse_index, 1);
        assert!((cells[1].critical_value - 4.0).abs() < 1e-9);
    }

    #[test]
    fn full_subspace_is_a_single_zero_cell() {
        let d = synthetic(3, 3, &[3.0, 2.0, 1.0], 1).unwrap();
        let cells = enumerate_cells(&d, 3).unwrap();
        assert_eq!(cells.len(), 1);
        assert_eq!(cells[0].morse_index, 0);
        assert!(cells[0].critical_value.abs() < 1e-9);
    }

    #[test]
    fn guards() {
        let repeated = DataMatrix::new(Matrix::identity(3, 3)).unwrap();
        assert!(matches!(enumerate_cells(&repeated, 1), Err(Error::RepeatedSpectrum { .. })));
        assert!(boundary_parity(21, 2).is_err());
        assert!(boundary_parity(3, 4).is_err());
    }

    #[test]
    fn plane_loss_matches_cells() {
        let d = synthetic(5, 7, &[5.0, 4.0, 3.0, 2.0, 1.0], 9).unwrap();
        let u = &d.svd().left;
        for cell in enumerate_cells(&d, 2).unwrap() {
            let cols: Vec<usize> = cell.index_set.as_slice().to_vec();
            let basis = u.select_columns(&cols);
            let v = loss_on_plane(&d, &basis).unwrap();
            assert!((v - cell.critical_value).abs() <= 1e-9 * cell.critical_value.max(1.0));
        }
        let top = u.columns(0, 2).into_owned();
        assert!((loss_on_plane(&d, &top).unwrap() - (9.0 + 4.0 + 1.0)).abs() < 1e-9);
        assert!(loss_on_plane(&d, &Matrix::identity(5, 5)).unwrap() < 1e-9);
        assert!(loss_on_plane(&d, &(top * 2.0)).is_err());
    }

    #[test]
    fn random_lines_lie_between_extremes() {
        let d = synthetic(3, 4, &[3.0, 2.0, 1.0], 2).unwrap();
        // seeds disjoint from the data seed, whose first Haar column is u_1 itself
        for seed in 100..150 {
            let basis = haar_orthogonal(3, seed).unwrap().columns(0, 1).into_owned();
            let v = loss_on_plane(&d, &basis).unwrap();
            assert!(v > 4.0 + 1.0 && v < 9.0 + 4.0, "{seed} {v}");
        }
    }

    #[test]
    fn plane_loss_descends_to_the_grassmannian() {
        let d = synthetic(5, 5, &descending_spectrum(5), 4).unwrap();
        let basis = haar_orthogonal(5, 10).unwrap().columns(0, 3).into_owned();
        let r = haar_orthogonal(3, 11).unwrap();
        let a = loss_on_plane(&d, &basis).unwrap();
        let b = loss_on_plane(&d, &(&basis * r)).unwrap();
        assert!((a - b).abs() < 1e-10 * a);
    }

    #[test]
    fn parity_small_cases() {
        let r = boundary_parity(2, 1).unwrap();
        assert_eq!(r.connections, vec![Trajectory { upper: set(&[2]), lower: set(&[1]), count: 2 }]);
        assert!(r.all_even && r.counts_match());

        let r = boundary_parity(3, 1).unwrap();
        let pairs: Vec<(Vec<usize>, Vec<usize>, usize)> =
            r.connections.iter().map(|t| (t.upper.one_based(), t.lower.one_based(), t.count)).collect();
        assert_eq!(pairs, vec![(vec![2], vec![1], 2), (vec![3], vec![2], 2)]);

        let r = boundary_parity(4, 2).unwrap();
        assert!(r.connections.iter().all(|t| t.count == 2 || t.count == 0));
        assert!(r.f2_boundary_is_zero());
        assert_eq!(r.cells_per_index, vec![1, 1, 2, 1, 1]);
        assert!(r.counts_match());
    }

    #[test]
    fn gaussian_binomials() {
        assert_eq!(gaussian_binomial(4, 2), vec![1, 1, 2, 1, 1]);
        assert_eq!(gaussian_binomial(5, 0), vec![1]);
        assert_eq!(gaussian_binomial(3, 1), vec![1, 1, 1]);
        for m in 1..=10 {
            for k in 0..=m {
                let total: usize = gaussian_binomial(m, k).iter().sum();
                assert_eq!(total, index_sets(m, k).count());
            }
        }
    }

    #[test]
    fn combinatorics_do_not_see_the_spectrum() {
        for (m, k) in [(4, 2), (5, 2), (6, 3), (7, 1)] {
            let r = boundary_parity(m, k).unwrap();
            assert!(r.all_even && r.counts_match());
            let binom = index_sets(m, k).count();
            assert_eq!(r.cells_per_index.iter().sum::<usize>(), binom);
            // χ(Gr_k(ℝ^m)) = 0 for m even, k odd; otherwise C(⌊m/2⌋, ⌊k/2⌋).
            let chi = if m % 2 == 0 && k % 2 == 1 { 0 } else { index_sets(m / 2, k / 2).count() as i64 };
            assert_eq!(r.euler_characteristic(), chi);
            // a pair (i ∉ I, j ∈ I) is a descending pair of exactly one of I and its complement
            for s in index_sets(m, k) {
                let complement = IndexSet::from_sorted_unchecked((0..m).filter(|j| !s.contains(*j)).collect());
                assert_eq!(descending_pairs(&s) + descending_pairs(&complement), k * (m - k));
            }
        }
    }
}
