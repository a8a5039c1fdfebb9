#![allow(dead_code)]

use pcae::linalg::Matrix;
use pcae::network::{init_model, Activation, Layer, MlpModel};
use pcae::objective::{
    hae_loss, hae_loss_and_grads, iso_elementwise, iso_loss, pcae_loss, recon_loss, weighted_variance_loss,
    IsoVariant, PairBatch, Terms,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_psd(p: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let a = Matrix::random_normal(p, p, rng);
    a.matmul_t(&a).unwrap()
}

/// `p` sorted draws from `U(0, max)`, redrawn until strictly ascending.
pub fn ascending_gammas(p: usize, max: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..p).map(|_| rng.random_range(0.0..max)).collect();
        g.sort_by(f64::total_cmp);
        if g.windows(2).all(|w| w[0] < w[1]) && g[0] > 0.0 {
            return g;
        }
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + FD_STEP;
            let up = f(&probe);
            probe[i] = orig - FD_STEP;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn reshape(rows: usize, cols: usize, v: &[f64]) -> Matrix {
    Matrix::new(rows, cols, v.to_vec()).unwrap()
}

fn sq_col_dist(z: &Matrix, i: usize, j: usize) -> f64 {
    (0..z.rows()).map(|r| (z[(r, i)] - z[(r, j)]).powi(2)).sum()
}

/// One random pairing of `n` columns with targets scattered around the
/// current latent distances; pairs at or near the `|·|` kink are dropped.
pub fn random_batch(z: &Matrix, rng: &mut ChaCha8Rng) -> PairBatch {
    let mut order: Vec<usize> = (0..z.cols()).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    let mut targets = Vec::new();
    for c in order.chunks_exact(2) {
        let dhat = sq_col_dist(z, c[0], c[1]).sqrt();
        let d = dhat * rng.random_range(0.5..1.5);
        if (d * d - dhat * dhat).abs() < 1e-3 {
            continue;
        }
        pairs.push((c[0], c[1]));
        targets.push(d);
    }
    PairBatch::new(pairs, targets).unwrap()
}

pub fn check_recon(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = Matrix::random_normal(3, 10, &mut r);
    let xhat = Matrix::random_normal(3, 10, &mut r);
    let (_, g) = recon_loss(&x, &xhat).unwrap();
    let num = numeric_grad(|v| recon_loss(&x, &reshape(3, 10, v)).unwrap().0, xhat.as_slice());
    rel_err(g.as_slice(), &num)
}

pub fn check_variance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let z = Matrix::random_normal(4, 12, &mut r);
    let gam = ascending_gammas(4, 2.0, &mut r);
    let (_, g) = weighted_variance_loss(&z, &gam).unwrap();
    let num = numeric_grad(|v| weighted_variance_loss(&reshape(4, 12, v), &gam).unwrap().0, z.as_slice());
    rel_err(g.as_slice(), &num)
}

pub fn check_iso(seed: u64, variant: IsoVariant) -> f64 {
    let mut r = rng(seed);
    let z = Matrix::random_normal(3, 14, &mut r);
    let batch = random_batch(&z, &mut r);
    let (_, g) = iso_loss(&z, &batch, variant).unwrap();
    let num = numeric_grad(|v| iso_loss(&reshape(3, 14, v), &batch, variant).unwrap().0, z.as_slice());
    rel_err(g.as_slice(), &num)
}

/// He-initialized, then every parameter (biases included) jittered so no
/// ReLU sits exactly at its kink.
fn small_model(seed: u64) -> MlpModel {
    let mut m = init_model(&[5, 8, 7, 3], &[3, 7, 8, 5], seed).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let jittered: Vec<f64> = m.flatten().iter().map(|v| v + r.random_range(-0.1..0.1)).collect();
    m.set_flat(&jittered).unwrap();
    m
}

/// Full objective differentiated through the network parameters.
pub fn check_pcae_params(seed: u64, variant: IsoVariant) -> f64 {
    let mut r = rng(seed);
    let model = small_model(seed);
    let x = Matrix::random_normal(5, 12, &mut r);
    let z = model.encode(&x).unwrap();
    let batch = random_batch(&z, &mut r);
    let gam = ascending_gammas(3, 2.0, &mut r);
    let beta = 0.3;
    let loss_at = |m: &MlpModel| -> f64 {
        let (z, xhat) = m.forward(&x).unwrap();
        pcae_loss(&x, &z, &xhat, Some(&batch), &gam, beta, variant, Terms::default()).unwrap().0.total
    };
    let cache = model.forward_cached(&x).unwrap();
    let (_, g) = pcae_loss(&x, cache.z(), cache.xhat(), Some(&batch), &gam, beta, variant, Terms::default()).unwrap();
    let analytic = model.backward(&cache, Some(&g.z), Some(&g.xhat)).unwrap().flatten();
    let num = numeric_grad(
        |v| {
            let mut m = model.clone();
            m.set_flat(v).unwrap();
            loss_at(&m)
        },
        &model.flatten(),
    );
    rel_err(&analytic, &num)
}

pub fn check_hae_params(seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = small_model(seed);
    let x = Matrix::random_normal(5, 9, &mut r);
    let alpha: Vec<f64> = (0..3).map(|_| r.random_range(0.2..1.5)).collect();
    let (_, g) = hae_loss_and_grads(&x, &model, &alpha).unwrap();
    let num = numeric_grad(
        |v| {
            let mut m = model.clone();
            m.set_flat(v).unwrap();
            hae_loss(&x, &m, &alpha).unwrap()
        },
        &model.flatten(),
    );
    rel_err(&g.flatten(), &num)
}

/// Slopes from `iso_elementwise` against differences in `d̂²`.
pub fn check_elementwise(seed: u64, variant: IsoVariant) -> f64 {
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d: f64 = r.random_range(0.1..3.0);
        let dhat: f64 = r.random_range(0.1..3.0);
        if (d * d - dhat * dhat).abs() < 1e-3 {
            continue;
        }
        let (_, slope) = iso_elementwise(d, dhat, variant).unwrap();
        let num = numeric_grad(|s| iso_elementwise(d, s[0].sqrt(), variant).unwrap().0, &[dhat * dhat]);
        worst = worst.max(rel_err(&[slope], &num));
    }
    worst
}

/// Evaluates a layer stack one sample at a time with plain loops.
pub fn naive_forward(layers: &[Layer], v: &[f64]) -> Vec<f64> {
    let mut h = v.to_vec();
    for l in layers {
        let mut out = vec![0.0; l.out_width()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = l.bias[i];
            for (j, hj) in h.iter().enumerate() {
                s += l.weight[(i, j)] * hj;
            }
            *o = if l.activation == Activation::Relu && s < 0.0 { 0.0 } else { s };
        }
        h = out;
    }
    h
}

/// Interpolation smoothness written out step by step, independent of the
/// library's batched implementation.
pub fn brute_smoothness(model: &MlpModel, x: &Matrix, pairs: &[(usize, usize)], m: usize) -> f64 {
    let mut total = 0.0;
    for &(a, b) in pairs {
        let za = naive_forward(&model.encoder.layers, &x.column(a));
        let zb = naive_forward(&model.encoder.layers, &x.column(b));
        let mut decoded = Vec::new();
        for t in 0..=m {
            let s = t as f64 / m as f64;
            let z: Vec<f64> = za.iter().zip(&zb).map(|(p, q)| (1.0 - s) * p + s * q).collect();
            decoded.push(naive_forward(&model.decoder.layers, &z));
        }
        let mut gaps = Vec::new();
        for t in 1..=m {
            let g: f64 = decoded[t].iter().zip(&decoded[t - 1]).map(|(p, q)| (p - q).powi(2)).sum();
            gaps.push(g.sqrt());
        }
        let mean = gaps.iter().sum::<f64>() / m as f64;
        total += gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / m as f64;
    }
    total / pairs.len() as f64
}

pub fn linear_model(enc: Matrix, dec: Matrix) -> MlpModel {
    let stack = |w: Matrix| {
        let r = w.rows();
        pcae::network::Mlp::new(vec![Layer::new(w, vec![0.0; r], Activation::Identity).unwrap()]).unwrap()
    };
    MlpModel::from_parts(stack(enc), stack(dec), 0).unwrap()
}
