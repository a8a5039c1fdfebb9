//! Synthetic manifolds with known intrinsic dimension, CSV ingestion,
//! centering and deterministic train/validation/test splits.
//!
//! Every generator returns samples as columns of a `p × n` matrix, centered so
//! each ambient coordinate has zero sample mean.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Error, Result};
use crate::linalg::{random_orthonormal, Matrix};

/// A sample matrix plus whatever ground truth the generator knows.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// `p × n`, one sample per column.
    pub samples: Matrix,
    /// `d_true × n` generative coordinates, when known.
    pub factors: Option<Matrix>,
    pub intrinsic_dim: Option<usize>,
    pub seed: u64,
    pub generator: String,
}

/// Sidecar metadata written next to a dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub intrinsic_dim: Option<usize>,
    pub seed: u64,
    pub generator: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.cols() == 0
    }

    /// Ambient dimension `p`.
    pub fn dim(&self) -> usize {
        self.samples.rows()
    }

    /// Sub-dataset made of the given sample columns. The result is not
    /// re-centered.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            samples: self.samples.select_columns(idx),
            factors: self.factors.as_ref().map(|f| f.select_columns(idx)),
            intrinsic_dim: self.intrinsic_dim,
            seed: self.seed,
            generator: self.generator.clone(),
        }
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            intrinsic_dim: self.intrinsic_dim,
            seed: self.seed,
            generator: self.generator.clone(),
        }
    }

    /// Writes `x1,...,xp` header and one sample per line. Values use the
    /// shortest representation that round-trips exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let p = self.dim();
        w.write_record((1..=p).map(|i| format!("x{i}")))?;
        let mut record = Vec::with_capacity(p);
        for j in 0..self.len() {
            record.clear();
            record.extend((0..p).map(|i| format!("{}", self.samples[(i, j)])));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_metadata(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.meta())? + "\n")?;
        Ok(())
    }

    /// Loads a CSV written by [`Dataset::write_csv`] (or any headed numeric
    /// CSV), centering unless `center_rows` is false. The metadata sidecar is
    /// read when present.
    pub fn read_csv(path: &Path, center_rows: bool) -> Result<Dataset> {
        let mut r = csv::Reader::from_path(path)?;
        let p = r.headers()?.len();
        if p == 0 {
            return Err(Error::Format { path: path.into(), reason: "empty header".into() });
        }
        let mut columns: Vec<Vec<f64>> = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != p {
                return Err(Error::Format {
                    path: path.into(),
                    reason: format!("record {} has {} fields, header has {p}", line + 1, rec.len()),
                });
            }
            let col = rec
                .iter()
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format {
                    path: path.into(),
                    reason: format!("record {}: {e}", line + 1),
                })?;
            columns.push(col);
        }
        if columns.len() < 2 {
            return Err(Error::Format { path: path.into(), reason: "need at least 2 samples".into() });
        }
        let mut samples = Matrix::from_columns(&columns)?;
        if center_rows {
            samples = center(&samples);
        }
        let meta_path = metadata_path(path);
        let meta = if meta_path.exists() {
            Some(serde_json::from_str::<DatasetMeta>(&std::fs::read_to_string(&meta_path)?)?)
        } else {
            None
        };
        Ok(Dataset {
            samples,
            factors: None,
            intrinsic_dim: meta.as_ref().and_then(|m| m.intrinsic_dim),
            seed: meta.as_ref().map_or(0, |m| m.seed),
            generator: meta.map_or_else(|| "csv".to_string(), |m| m.generator),
        })
    }
}

/// `data.csv` → `data.meta.json`
pub fn metadata_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Subtracts each row's mean.
pub fn center(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let n = x.cols();
    if n == 0 {
        return out;
    }
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn add_noise(x: &mut Matrix, noise_sd: f64, rng: &mut ChaCha8Rng) {
    if noise_sd > 0.0 {
        let normal = Normal::new(0.0, noise_sd).expect("positive sd");
        x.as_mut_slice().iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}

fn check_noise(noise_sd: f64) -> Result<()> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(invalid(format!("noise sd must be finite and non-negative, got {noise_sd}")));
    }
    Ok(())
}

/// Swiss roll `(t cos t, h, t sin t)` with `t ~ U[1.5π, 4.5π]`,
/// `h ~ U[0, 21]`.
pub fn gen_swiss_roll(n: usize, noise_sd: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(invalid(format!("swiss roll needs n >= 10, got {n}")));
    }
    check_noise(noise_sd)?;
    let mut rng = stream_rng(seed, 0);
    let mut x = Matrix::zeros(3, n);
    let mut f = Matrix::zeros(2, n);
    for j in 0..n {
        let t = rng.random_range(1.5 * PI..4.5 * PI);
        let h = rng.random_range(0.0..21.0);
        x[(0, j)] = t * t.cos();
        x[(1, j)] = h;
        x[(2, j)] = t * t.sin();
        f[(0, j)] = t;
        f[(1, j)] = h;
    }
    add_noise(&mut x, noise_sd, &mut rng);
    Ok(Dataset {
        samples: center(&x),
        factors: Some(f),
        intrinsic_dim: Some(2),
        seed,
        generator: "swiss_roll".into(),
    })
}

/// The fixed smooth map behind [`gen_factor_manifold`]: a random orthonormal
/// injection `Q ∈ R^{p×d}` followed by `u ↦ u + 0.1 u³` on every ambient
/// coordinate.
#[derive(Debug, Clone)]
pub struct FactorMap {
    pub injection: Matrix,
}

impl FactorMap {
    /// The map used by [`gen_factor_manifold`] for the same `(d, p, seed)`.
    pub fn new(d_true: usize, p: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, 1);
        Self { injection: random_orthonormal(p, d_true, &mut rng) }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let q = &self.injection;
        (0..q.rows())
            .map(|i| {
                let u: f64 = q.row(i).iter().zip(z).map(|(a, b)| a * b).sum();
                u + 0.1 * u * u * u
            })
            .collect()
    }

    /// Applies the map to every column of a `d × n` factor matrix.
    pub fn apply_columns(&self, z: &Matrix) -> Matrix {
        let mut u = self.injection.matmul(z).expect("factor rows match injection");
        u.as_mut_slice().iter_mut().for_each(|v| *v += 0.1 * *v * *v * *v);
        u
    }
}

/// `d_true` independent uniform factors with the given variances, pushed
/// through [`FactorMap`] into `R^p`.
pub fn gen_factor_manifold(
    d_true: usize,
    p: usize,
    n: usize,
    variance_profile: &[f64],
    seed: u64,
) -> Result<Dataset> {
    gen_factor_manifold_noisy(d_true, p, n, variance_profile, 0.0, seed)
}

/// [`gen_factor_manifold`] with isotropic Gaussian noise added in ambient
/// space after the nonlinearity.
pub fn gen_factor_manifold_noisy(
    d_true: usize,
    p: usize,
    n: usize,
    variance_profile: &[f64],
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if d_true == 0 || d_true >= p {
        return Err(invalid(format!("need 1 <= d_true < p, got d_true={d_true}, p={p}")));
    }
    if n < 2 {
        return Err(invalid("need at least 2 samples"));
    }
    if variance_profile.len() != d_true {
        return Err(mismatch(format!(
            "variance profile has {} entries for d_true={d_true}",
            variance_profile.len()
        )));
    }
    if variance_profile.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(invalid("variance profile entries must be positive"));
    }
    if variance_profile.windows(2).any(|w| w[1] > w[0]) {
        return Err(invalid("variance profile must be descending"));
    }
    check_noise(noise_sd)?;
    let map = FactorMap::new(d_true, p, seed);
    let mut rng = stream_rng(seed, 2);
    // U[-a, a] has variance a²/3
    let half_widths: Vec<f64> = variance_profile.iter().map(|v| (3.0 * v).sqrt()).collect();
    let mut z = Matrix::zeros(d_true, n);
    for j in 0..n {
        for (i, &a) in half_widths.iter().enumerate() {
            z[(i, j)] = rng.random_range(-a..a);
        }
    }
    let mut x = map.apply_columns(&z);
    add_noise(&mut x, noise_sd, &mut rng);
    Ok(Dataset {
        samples: center(&x),
        factors: Some(z),
        intrinsic_dim: Some(d_true),
        seed,
        generator: "factor_manifold".into(),
    })
}

/// Half cylinder of radius 1 and height `height`, isometric to the rectangle
/// `[0, π] × [0, height]`. Factors are the rectangle coordinates, so their
/// Euclidean distances are the exact geodesic distances.
pub fn gen_flat_strip(n: usize, height: f64, seed: u64) -> Result<Dataset> {
    if n < 10 {
        return Err(invalid(format!("flat strip needs n >= 10, got {n}")));
    }
    if !(height > 0.0) {
        return Err(invalid("strip height must be positive"));
    }
    let mut rng = stream_rng(seed, 0);
    let mut x = Matrix::zeros(3, n);
    let mut f = Matrix::zeros(2, n);
    for j in 0..n {
        let u = rng.random_range(0.0..PI);
        let v = rng.random_range(0.0..height);
        x[(0, j)] = u.cos();
        x[(1, j)] = v;
        x[(2, j)] = u.sin();
        f[(0, j)] = u;
        f[(1, j)] = v;
    }
    Ok(Dataset {
        samples: center(&x),
        factors: Some(f),
        intrinsic_dim: Some(2),
        seed,
        generator: "flat_strip".into(),
    })
}

/// Uniform samples on a unit-length segment along a random direction of
/// `R^ambient`.
pub fn gen_segment(n: usize, ambient: usize, seed: u64) -> Result<Dataset> {
    gen_linear_chart(n, ambient, 1, seed, "segment", |rng| vec![rng.random_range(0.0..1.0)])
}

/// Uniform samples on a unit disc spanning a random plane of `R^ambient`.
pub fn gen_disc(n: usize, ambient: usize, seed: u64) -> Result<Dataset> {
    gen_linear_chart(n, ambient, 2, seed, "disc", |rng| loop {
        let a: f64 = rng.random_range(-1.0..1.0);
        let b: f64 = rng.random_range(-1.0..1.0);
        if a * a + b * b <= 1.0 {
            break vec![a, b];
        }
    })
}

fn gen_linear_chart(
    n: usize,
    ambient: usize,
    d: usize,
    seed: u64,
    name: &str,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
) -> Result<Dataset> {
    if ambient < d || n < 2 {
        return Err(invalid(format!("{name}: need ambient >= {d} and n >= 2")));
    }
    let mut rng = stream_rng(seed, 0);
    let q = random_orthonormal(ambient, d, &mut rng);
    let cols: Vec<Vec<f64>> = (0..n).map(|_| draw(&mut rng)).collect();
    let f = Matrix::from_columns(&cols)?;
    Ok(Dataset {
        samples: center(&q.matmul(&f)?),
        factors: Some(f),
        intrinsic_dim: Some(d),
        seed,
        generator: name.into(),
    })
}

/// Fractions of a three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl SplitSpec {
    pub fn new(train_frac: f64, val_frac: f64, test_frac: f64) -> Result<Self> {
        let fr = [train_frac, val_frac, test_frac];
        if fr.iter().any(|&f| !(f > 0.0)) {
            return Err(invalid("split fractions must be positive"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(invalid("split fractions must sum to 1"));
        }
        Ok(Self { train_frac, val_frac, test_frac })
    }

    /// Split sizes for `n` samples. Validation and test sizes are rounded to
    /// nearest (halves round down); training takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let round = |x: f64| (x - 0.5).ceil().max(0.0) as usize;
        let val = round(n as f64 * self.val_frac);
        let test = round(n as f64 * self.test_frac);
        (n.saturating_sub(val + test), val, test)
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_frac: 0.7, val_frac: 0.15, test_frac: 0.15 }
    }
}

/// Disjoint random column partition into train/validation/test. Indices in
/// each part keep their original order.
pub fn split(ds: &Dataset, spec: &SplitSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [a, b, c] = split_indices(ds.len(), spec, seed)?;
    Ok((ds.select(&a), ds.select(&b), ds.select(&c)))
}

/// Index sets used by [`split`], for callers that need the mapping.
pub fn split_indices(n: usize, spec: &SplitSpec, seed: u64) -> Result<[Vec<usize>; 3]> {
    let (tr, va, te) = spec.sizes(n);
    if tr == 0 || va == 0 || te == 0 {
        return Err(invalid(format!("split of {n} samples leaves an empty part ({tr}, {va}, {te})")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 3));
    let mut parts = [perm[..tr].to_vec(), perm[tr..tr + va].to_vec(), perm[tr + va..].to_vec()];
    parts.iter_mut().for_each(|p| p.sort_unstable());
    Ok(parts)
}
