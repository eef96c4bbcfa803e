//! Straight-line re-implementations of both objectives, compared against the
//! tape-based versions.

use lible_core::model::{loss_lib, loss_lib_gap, ModelDims, ModelParams, ObjectiveKind};
use lible_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn splus(v: f64) -> f64 {
    (1.0 + v.exp()).ln()
}

#[derive(Clone, Copy)]
enum Out {
    Linear,
    Sigmoid,
    Positive,
    Softmax,
}

/// One instance through `{prefix}.{k}.weight/bias` layers.
fn stack(p: &ModelParams, prefix: &str, input: &[f64], out: Out) -> Vec<f64> {
    let mut v = input.to_vec();
    let mut k = 0;
    while p.blocks.contains(&format!("{prefix}.{k}.weight")) {
        let w = p.blocks.get(&format!("{prefix}.{k}.weight")).unwrap();
        let b = p.blocks.get(&format!("{prefix}.{k}.bias")).unwrap();
        let mut next = vec![0.0; w.cols()];
        for (j, nj) in next.iter_mut().enumerate() {
            let mut acc = b.get(0, j);
            for (i, vi) in v.iter().enumerate() {
                acc += vi * w.get(i, j);
            }
            *nj = acc;
        }
        k += 1;
        let last = !p.blocks.contains(&format!("{prefix}.{k}.weight"));
        if !last {
            next.iter_mut().for_each(|x| *x = sig(*x));
        }
        v = next;
    }
    match out {
        Out::Linear => v,
        Out::Sigmoid => v.into_iter().map(sig).collect(),
        Out::Positive => v.into_iter().map(|x| splus(x) + 1e-6).collect(),
        Out::Softmax => {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|x| x / s).collect()
        }
    }
}

fn gap_term(l: &[f64], d_hat: &[f64], sd: &[f64]) -> f64 {
    let mut quad = 0.0;
    let mut log_det = 0.0;
    for j in 0..l.len() {
        let delta = l[j] - d_hat[j];
        quad += delta * delta / (sd[j] * sd[j]);
        log_det += (sd[j] * sd[j]).ln();
    }
    0.5 * quad + log_det
}

/// (assignment, gap, kl), each a per-instance mean.
fn oracle_lib(p: &ModelParams, x: &Matrix, l: &Matrix, seed: u64) -> (f64, f64, f64) {
    let n = x.rows();
    let z = p.dims.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<f64> = (0..n * z).map(|_| StandardNormal.sample(&mut rng)).collect();
    let (mut a, mut g, mut k) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let hid = stack(p, "encoder", x.row(i), Out::Sigmoid);
        let mu = stack(p, "encoder_mu", &hid, Out::Linear);
        let sd = stack(p, "encoder_sigma", &hid, Out::Positive);
        let h: Vec<f64> = (0..z).map(|j| mu[j] + sd[j] * eps[i * z + j]).collect();
        let mu_l = stack(p, "decoder", &h, Out::Linear);
        let sd_gap = stack(p, "gap", &h, Out::Positive);
        let d_hat = stack(p, "ld", &h, Out::Softmax);
        let li = l.row(i);
        a += 0.5 * mu_l.iter().zip(li).map(|(m, t)| (m - t) * (m - t)).sum::<f64>();
        g += gap_term(li, &d_hat, &sd_gap);
        k += 0.5
            * (0..z)
                .map(|j| mu[j] * mu[j] + sd[j] * sd[j] - (sd[j] * sd[j]).ln())
                .sum::<f64>();
    }
    let n = n as f64;
    (a / n, g / n, k / n)
}

fn oracle_lib_gap(p: &ModelParams, x: &Matrix, l: &Matrix) -> f64 {
    let mut g = 0.0;
    for i in 0..x.rows() {
        let sd = stack(p, "gap", x.row(i), Out::Positive);
        let d_hat = stack(p, "ld", x.row(i), Out::Softmax);
        g += gap_term(l.row(i), &d_hat, &sd);
    }
    g / x.rows() as f64
}

fn fixture() -> (Matrix, Matrix) {
    let x = Matrix::from_rows(&[
        vec![0.3, -1.2, 0.8],
        vec![-0.5, 0.1, 1.9],
        vec![1.4, 0.6, -0.7],
        vec![-0.9, -0.4, 0.2],
    ])
    .unwrap();
    let l = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![1.0, 0.0]]).unwrap();
    (x, l)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn lib_loss_matches_straight_line_oracle() {
    let (x, l) = fixture();
    let dims = ModelDims {
        input_dim: 3,
        hidden_dim: 3,
        latent_dim: 2,
        n_labels: 2,
    };
    for seed in 0..5 {
        let p = ModelParams::init(ObjectiveKind::Lib, dims, 100 + seed).unwrap();
        let (alpha, beta) = (0.7, 0.3);
        let got = loss_lib(&p, &x, &l, seed, alpha, beta).unwrap();
        let (a, g, k) = oracle_lib(&p, &x, &l, seed);
        assert!(close(got.assignment_term, a), "{} vs {a}", got.assignment_term);
        assert!(close(got.gap_term, g), "{} vs {g}", got.gap_term);
        assert!(close(got.kl_term, k), "{} vs {k}", got.kl_term);
        assert!(close(got.total, a + alpha * g + beta * k));
    }
}

#[test]
fn lib_gap_loss_matches_straight_line_oracle() {
    let (x, l) = fixture();
    let dims = ModelDims {
        input_dim: 3,
        hidden_dim: 4,
        latent_dim: 2,
        n_labels: 2,
    };
    for seed in 0..5 {
        let p = ModelParams::init(ObjectiveKind::LibGap, dims, seed).unwrap();
        let got = loss_lib_gap(&p, &x, &l).unwrap();
        let want = oracle_lib_gap(&p, &x, &l);
        assert!(close(got, want), "{got} vs {want}");
    }
}

#[test]
fn lib_loss_is_a_pure_function_of_seed() {
    let (x, l) = fixture();
    let dims = ModelDims {
        input_dim: 3,
        hidden_dim: 4,
        latent_dim: 3,
        n_labels: 2,
    };
    let p = ModelParams::init(ObjectiveKind::Lib, dims, 9).unwrap();
    let a = loss_lib(&p, &x, &l, 5, 1.0, 0.1).unwrap();
    let b = loss_lib(&p, &x, &l, 5, 1.0, 0.1).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    let c = loss_lib(&p, &x, &l, 6, 1.0, 0.1).unwrap();
    assert_ne!(a.total, c.total);
}
