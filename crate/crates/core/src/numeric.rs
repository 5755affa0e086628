//! Singular-value rank decisions with an explicit inconclusive band.

use nalgebra::DMatrix;

/// Relative singular values below this are zero.
pub const RANK_ZERO: f64 = 1e-8;
/// Relative singular values above this are nonzero; in between is inconclusive.
pub const RANK_NONZERO: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct RankDecision {
    /// Singular values certainly nonzero.
    pub definite: usize,
    /// Singular values not certainly zero.
    pub possible: usize,
    pub singular_values: Vec<f64>,
}

impl RankDecision {
    pub fn rank(&self) -> Option<usize> {
        (self.definite == self.possible).then_some(self.definite)
    }

    pub fn is_conclusive(&self) -> bool {
        self.definite == self.possible
    }

    /// Smallest relative singular value among those counted as nonzero.
    pub fn margin(&self) -> f64 {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        if max == 0.0 || self.definite == 0 {
            return 0.0;
        }
        self.singular_values[self.definite - 1] / max
    }
}

pub fn rank(rows: &[Vec<f64>]) -> RankDecision {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return RankDecision {
            definite: 0,
            possible: 0,
            singular_values: vec![],
        };
    }
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    let max = sv[0];
    if max == 0.0 || !max.is_finite() {
        return RankDecision {
            definite: 0,
            possible: 0,
            singular_values: sv,
        };
    }
    let definite = sv.iter().filter(|s| **s / max > RANK_NONZERO).count();
    let possible = sv.iter().filter(|s| **s / max >= RANK_ZERO).count();
    RankDecision {
        definite,
        possible,
        singular_values: sv,
    }
}

/// Null-space direction of least singular value (unit vector).
pub fn smallest_right_singular_vector(rows: &[Vec<f64>], ncols: usize) -> Vec<f64> {
    let nrows = rows.len().max(ncols);
    let m = DMatrix::from_fn(nrows, ncols, |i, j| rows.get(i).map_or(0.0, |r| r[j]));
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
        .expect("non-empty");
    v_t.row(idx).iter().copied().collect()
}

/// Least-squares solution of `A x = b`.
pub fn least_squares(rows: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return None;
    }
    let a = DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]);
    let b = nalgebra::DVector::from_column_slice(rhs);
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-12).ok().map(|x| x.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_dependent_rows() {
        let r = rank(&[vec![1.0, 2.0], vec![2.0, 4.0], vec![0.0, 1.0]]);
        assert_eq!(r.rank(), Some(2));
        let r = rank(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        assert_eq!(r.rank(), Some(1));
    }

    #[test]
    fn near_singular_is_inconclusive() {
        let r = rank(&[vec![1.0, 0.0], vec![0.0, 1e-6]]);
        assert!(!r.is_conclusive());
    }
}
