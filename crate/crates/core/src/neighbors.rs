//! Brute-force Euclidean nearest neighbours over the columns of a matrix.

use rayon::prelude::*;

use crate::linalg::Matrix;

/// Column `j` of a `p × n` matrix as a contiguous point, for each `j`.
pub(crate) fn points(x: &Matrix) -> Vec<Vec<f64>> {
    let t = x.transpose();
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

/// The `k` nearest other points of every point as `(index, distance)`,
/// ascending by distance with ties broken by lower index.
pub(crate) fn knn(pts: &[Vec<f64>], k: usize) -> Vec<Vec<(usize, f64)>> {
    pts.par_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
            for (j, b) in pts.iter().enumerate() {
                if j == i {
                    continue;
                }
                let d = sq_dist(a, b);
                if best.len() == k && d >= best[k - 1].1 {
                    continue;
                }
                let pos = best.partition_point(|&(_, e)| e <= d);
                best.insert(pos, (j, d));
                best.truncate(k);
            }
            best.into_iter().map(|(j, d)| (j, d.sqrt())).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knn_on_a_line_breaks_ties_by_index() {
        let pts: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 4.0].iter().map(|&v| vec![v]).collect();
        let nn = knn(&pts, 2);
        assert_eq!(nn[1], vec![(0, 1.0), (2, 1.0)]);
        assert_eq!(nn[3], vec![(2, 2.0), (1, 3.0)]);
        assert_eq!(knn(&pts, 1)[1], vec![(0, 1.0)]);
    }
}
