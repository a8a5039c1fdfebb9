//! Post-hoc estimators on trained models: latent variances, the cumulative
//! variance dimension estimate, the Levina–Bickel MLE, interpolation and the
//! interpolation smoothness score.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::Matrix;
use crate::neighbors;
use crate::network::MlpModel;

/// Relative slack when comparing a cumulative fraction against `τ`.
const FRACTION_TOL: f64 = 1e-12;

pub const DEFAULT_SMOOTHNESS_PAIRS: usize = 100;
pub const DEFAULT_SMOOTHNESS_STEPS: usize = 10;

/// Population variance of every row of `z` (one latent coordinate per row).
pub fn row_variances(z: &Matrix) -> Result<Vec<f64>> {
    let n = z.cols();
    if n < 2 {
        return Err(invalid("variance needs at least 2 samples"));
    }
    let nf = n as f64;
    Ok((0..z.rows())
        .map(|r| {
            let row = z.row(r);
            let mean = row.iter().sum::<f64>() / nf;
            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nf
        })
        .collect())
}

/// Per-coordinate population variance of the codes of all columns of `x`.
pub fn latent_variances(model: &MlpModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.cols() < 2 {
        return Err(invalid("variance needs at least 2 samples"));
    }
    row_variances(&model.encode(x)?)
}

/// Order in which coordinates are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumvarOrder {
    /// Coordinates as they come; for models whose latents are already ranked.
    #[default]
    Index,
    /// Largest variance first; for models without an intrinsic ordering.
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimEstimate {
    pub k: usize,
    pub tau: f64,
    #[serde(rename = "variances")]
    pub variance_profile: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub order: CumvarOrder,
}

/// Smallest `k` whose first `k` variances (in index order) reach the
/// fraction `τ` of the total.
pub fn estimate_dim_cumvar(variances: &[f64], tau: f64) -> Result<DimEstimate> {
    estimate_dim_cumvar_ordered(variances, tau, CumvarOrder::Index)
}

pub fn estimate_dim_cumvar_ordered(variances: &[f64], tau: f64, order: CumvarOrder) -> Result<DimEstimate> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(invalid(format!("tau must lie in (0, 1), got {tau}")));
    }
    if variances.is_empty() {
        return Err(invalid("no variances"));
    }
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(invalid(format!("variance {v} is not a finite nonnegative value")));
    }
    let mut profile = variances.to_vec();
    if order == CumvarOrder::Descending {
        profile.sort_by(|a, b| b.total_cmp(a));
    }
    let cumulative: Vec<f64> = profile
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    let total = *cumulative.last().expect("non-empty");
    if total == 0.0 {
        return Err(Error::AllZeroVariances);
    }
    let k = cumulative
        .iter()
        .position(|c| c / total >= tau - FRACTION_TOL)
        .map_or(profile.len(), |i| i + 1);
    Ok(DimEstimate { k, tau, variance_profile: profile, cumulative, order })
}

/// Levina–Bickel maximum-likelihood intrinsic dimension with `k` neighbours,
/// aggregated by averaging the per-point inverse estimates (MacKay and
/// Ghahramani). Zero neighbour distances are skipped.
pub fn mle_dim(x: &Matrix, k_neighbors: usize) -> Result<f64> {
    let n = x.cols();
    if k_neighbors < 3 {
        return Err(invalid("the MLE needs at least 3 neighbours"));
    }
    if n <= k_neighbors {
        return Err(invalid(format!("{n} samples is too few for {k_neighbors} neighbours")));
    }
    let pts = neighbors::points(x);
    let nn = neighbors::knn(&pts, k_neighbors);
    let mut skipped = 0usize;
    let mut inv_sum = 0.0;
    let mut used = 0usize;
    for row in &nn {
        let tk = row[k_neighbors - 1].1;
        if tk == 0.0 {
            skipped += k_neighbors - 1;
            continue;
        }
        let mut s = 0.0;
        let mut terms = 0usize;
        for &(_, tj) in &row[..k_neighbors - 1] {
            if tj == 0.0 {
                skipped += 1;
                continue;
            }
            s += (tk / tj).ln();
            terms += 1;
        }
        if terms == 0 {
            continue;
        }
        inv_sum += s / terms as f64;
        used += 1;
    }
    if skipped > 0 {
        log::warn!("MLE skipped {skipped} zero neighbour distances (duplicate points)");
    }
    if used == 0 || inv_sum <= 0.0 {
        return Err(Error::Numerical("no usable neighbour distances for the MLE".into()));
    }
    Ok(used as f64 / inv_sum)
}

/// `m + 1` equally spaced codes from `z_a` to `z_b`, endpoints included.
pub fn interpolate(z_a: &[f64], z_b: &[f64], m: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(invalid("interpolation needs at least one step"));
    }
    if z_a.len() != z_b.len() {
        return Err(mismatch(format!("endpoints of length {} and {}", z_a.len(), z_b.len())));
    }
    Ok((0..=m)
        .map(|t| {
            let s = t as f64 / m as f64;
            z_a.iter().zip(z_b).map(|(a, b)| (1.0 - s) * a + s * b).collect()
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessReport {
    pub score: f64,
    pub pair_count: usize,
    pub steps: usize,
    pub pairs: Vec<(usize, usize)>,
    pub per_pair_variances: Vec<f64>,
}

/// `N` random pairs of distinct columns.
pub fn random_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    if n < 2 {
        return Err(invalid("need at least 2 samples to form pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            (i, j)
        })
        .collect())
}

/// Interpolation smoothness over `N` random pairs of columns of `x`.
pub fn smoothness(model: &MlpModel, x: &Matrix, n_pairs: usize, m: usize, seed: u64) -> Result<SmoothnessReport> {
    if n_pairs == 0 {
        return Err(invalid("smoothness needs at least one pair"));
    }
    let pairs = random_pairs(x.cols(), n_pairs, seed)?;
    smoothness_on_pairs(model, x, &pairs, m)
}

/// For each pair: encode both endpoints, interpolate `m` steps in latent
/// space, decode, take the Euclidean gaps between consecutive decodings and
/// their population variance. The score is the mean over pairs.
pub fn smoothness_on_pairs(model: &MlpModel, x: &Matrix, pairs: &[(usize, usize)], m: usize) -> Result<SmoothnessReport> {
    if m < 2 {
        return Err(invalid("smoothness needs at least 2 interpolation steps"));
    }
    if pairs.is_empty() {
        return Err(invalid("smoothness needs at least one pair"));
    }
    for &(i, j) in pairs {
        for idx in [i, j] {
            if idx >= x.cols() {
                return Err(Error::OutOfRange { index: idx, len: x.cols() });
            }
        }
    }
    let per_pair_variances = pairs
        .par_iter()
        .map(|&(i, j)| {
            let ends = model.encode(&x.select_columns(&[i, j]))?;
            let path = interpolate(&ends.column(0), &ends.column(1), m)?;
            let decoded = model.decode(&Matrix::from_columns(&path)?)?;
            let cols = neighbors::points(&decoded);
            let gaps: Vec<f64> = cols.windows(2).map(|w| neighbors::dist(&w[1], &w[0])).collect();
            let mean = gaps.iter().sum::<f64>() / m as f64;
            Ok(gaps.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / m as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let score = per_pair_variances.iter().sum::<f64>() / pairs.len() as f64;
    Ok(SmoothnessReport {
        score,
        pair_count: pairs.len(),
        steps: m,
        pairs: pairs.to_vec(),
        per_pair_variances,
    })
}

/// `index,variance,cumulative_fraction` rows for plotting.
pub fn write_variance_csv(path: &Path, variances: &[f64]) -> Result<()> {
    let total: f64 = variances.iter().sum();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "variance", "cumulative_fraction"])?;
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        let frac = if total > 0.0 { acc / total } else { 0.0 };
        w.write_record([(i + 1).to_string(), v.to_string(), frac.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_disc, gen_segment};
    use crate::network::{init_model, Activation, Layer, Mlp};

    fn linear(w: Matrix) -> Mlp {
        let r = w.rows();
        Mlp::new(vec![Layer::new(w, vec![0.0; r], Activation::Identity).unwrap()]).unwrap()
    }

    #[test]
    fn cumvar_examples() {
        assert_eq!(estimate_dim_cumvar(&[1.0, 0.0, 0.0], 0.99).unwrap().k, 1);
        assert_eq!(estimate_dim_cumvar(&[0.5, 0.3, 0.15, 0.04, 0.01], 0.99).unwrap().k, 4);
        assert!(matches!(estimate_dim_cumvar(&[0.0; 3], 0.99), Err(Error::AllZeroVariances)));
        assert!(estimate_dim_cumvar(&[1.0], 1.0).is_err());
        assert!(estimate_dim_cumvar(&[1.0, -0.1], 0.5).is_err());
    }

    #[test]
    fn cumvar_order_modes() {
        let v = [0.01, 0.5, 0.0, 0.49];
        assert_eq!(estimate_dim_cumvar(&v, 0.9).unwrap().k, 4);
        let e = estimate_dim_cumvar_ordered(&v, 0.9, CumvarOrder::Descending).unwrap();
        assert_eq!(e.k, 2);
        assert_eq!(e.variance_profile, vec![0.5, 0.49, 0.01, 0.0]);
    }

    #[test]
    fn cumvar_json_shape() {
        let e = estimate_dim_cumvar(&[2.0, 1.0], 0.5).unwrap();
        let v: serde_json::Value = serde_json::to_value(&e).unwrap();
        assert_eq!(v["k"], 1);
        assert_eq!(v["tau"], 0.5);
        assert_eq!(v["variances"][1], 1.0);
    }

    #[test]
    fn variances_of_constant_and_identity_encoders() {
        let x = Matrix::random_normal(2, 500, &mut ChaCha8Rng::seed_from_u64(1));
        let zero = MlpModel::from_parts(linear(Matrix::zeros(3, 2)), linear(Matrix::zeros(2, 3)), 0).unwrap();
        assert_eq!(latent_variances(&zero, &x).unwrap(), vec![0.0; 3]);

        let id = MlpModel::from_parts(linear(Matrix::identity(2)), linear(Matrix::identity(2)), 0).unwrap();
        let v = latent_variances(&id, &x).unwrap();
        assert!(v.iter().all(|s| (s - 1.0).abs() < 0.15), "{v:?}");

        let xc = crate::datasets::center(&x);
        let tr = xc.matmul_t(&xc).unwrap().trace() / 500.0;
        assert!((v.iter().sum::<f64>() - tr).abs() < 1e-12);
        assert!(latent_variances(&id, &x.select_columns(&[0])).is_err());
    }

    #[test]
    fn mle_on_known_manifolds() {
        let seg = gen_segment(2000, 3, 1).unwrap();
        let d = mle_dim(&seg.samples, 10).unwrap();
        assert!((0.8..=1.2).contains(&d), "segment {d}");
        let disc = gen_disc(2000, 5, 2).unwrap();
        let d = mle_dim(&disc.samples, 10).unwrap();
        assert!((1.7..=2.3).contains(&d), "disc {d}");
        assert!(mle_dim(&seg.samples, 2).is_err());
        assert!(mle_dim(&seg.samples.select_columns(&[0, 1, 2]), 3).is_err());
    }

    #[test]
    fn mle_tolerates_duplicates() {
        let seg = gen_segment(400, 3, 1).unwrap();
        let idx: Vec<usize> = (0..400).chain(0..20).collect();
        let d = mle_dim(&seg.samples.select_columns(&idx), 10).unwrap();
        assert!(d.is_finite() && d > 0.0);
    }

    #[test]
    fn interpolation_examples() {
        let p = interpolate(&[1.0, 2.0], &[3.0, -1.0], 1).unwrap();
        assert_eq!(p, vec![vec![1.0, 2.0], vec![3.0, -1.0]]);
        let p = interpolate(&[0.0, 0.0], &[2.0, 0.0], 2).unwrap();
        assert_eq!(p[1], vec![1.0, 0.0]);
        let (a, b) = ([0.3, -1.2, 4.0], [2.0, 0.5, -3.0]);
        let p = interpolate(&a, &b, 7).unwrap();
        assert_eq!(p[0], a.to_vec());
        assert_eq!(p[7], b.to_vec());
        let total = neighbors::dist(&a, &b);
        for w in p.windows(2) {
            assert!((neighbors::dist(&w[0], &w[1]) - total / 7.0).abs() < 1e-12);
        }
        assert!(interpolate(&a, &b, 0).is_err());
        assert!(interpolate(&a, &b[..2], 2).is_err());
    }

    #[test]
    fn linear_model_is_perfectly_smooth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Matrix::random_normal(3, 5, &mut rng);
        let dec = Matrix::random_normal(5, 3, &mut rng);
        let m = MlpModel::from_parts(linear(enc), linear(dec), 0).unwrap();
        let x = Matrix::random_normal(5, 50, &mut rng);
        let r = smoothness(&m, &x, 20, 10, 1).unwrap();
        assert!(r.score < 1e-10, "{}", r.score);
        assert_eq!(r.per_pair_variances.len(), 20);
    }

    #[test]
    fn identical_endpoints_score_zero() {
        let m = init_model(&[4, 8, 2], &[2, 8, 4], 1).unwrap();
        let x = Matrix::random_normal(4, 5, &mut ChaCha8Rng::seed_from_u64(1));
        let x2 = x.select_columns(&[2, 2]);
        let r = smoothness_on_pairs(&m, &x2, &[(0, 1)], 10).unwrap();
        assert_eq!(r.score, 0.0);
    }

    #[test]
    fn smoothness_is_symmetric_in_pair_order() {
        let m = init_model(&[4, 16, 2], &[2, 16, 4], 2).unwrap();
        let x = Matrix::random_normal(4, 10, &mut ChaCha8Rng::seed_from_u64(2));
        let a = smoothness_on_pairs(&m, &x, &[(1, 7)], 10).unwrap().score;
        let b = smoothness_on_pairs(&m, &x, &[(7, 1)], 10).unwrap().score;
        assert!((a - b).abs() < 1e-12 * (1.0 + a));
        assert!(smoothness_on_pairs(&m, &x, &[(1, 7)], 1).is_err());
        assert!(smoothness(&m, &x.select_columns(&[0]), 3, 10, 0).is_err());
    }

    #[test]
    fn random_pairs_are_distinct() {
        for (i, j) in random_pairs(3, 200, 4).unwrap() {
            assert_ne!(i, j);
            assert!(i < 3 && j < 3);
        }
    }

    #[test]
    fn variance_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_variance_csv(&p, &[3.0, 1.0]).unwrap();
        let s = std::fs::read_to_string(&p).unwrap();
        assert_eq!(s, "index,variance,cumulative_fraction\n1,3,0.75\n2,1,1\n");
    }
}
