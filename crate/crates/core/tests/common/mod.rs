#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize, dim: usize, spread: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-spread..spread)).collect())
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for i in 0..n {
            if i != c {
                let f = a[i][c];
                for j in 0..n {
                    a[i][j] -= f * a[c][j];
                    inv[i][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

pub fn kernel(u: &[f64], v: &[f64], g: f64) -> f64 {
    (-g * u.iter().zip(v).map(|(a, b)| (a - b).abs()).sum::<f64>()).exp()
}

/// Prediction through alpha = (K + lambda I)^-1 Y formed explicitly.
pub fn oracle_predict(x: &[Vec<f64>], y: &[[f64; 3]], lambda: f64, gamma: f64, q: &[f64]) -> [f64; 3] {
    let n = x.len();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| kernel(&x[i], &x[j], gamma)).collect()).collect();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    let inv = invert(a);
    let mut out = [0.0; 3];
    for i in 0..n {
        let ki = kernel(q, &x[i], gamma);
        for j in 0..n {
            for c in 0..3 {
                out[c] += ki * inv[i][j] * y[j][c];
            }
        }
    }
    out
}

/// Dual of the bias-augmented soft-margin SVM: max sum(a) - a'Qa/2 over the
/// box [0, C]^n, with Q_ij = y_i y_j (x_i.x_j + 1). Every optimum has each
/// coordinate at 0, at C, or free with a zero gradient, so enumerating those
/// assignments and solving the free block finds it exactly.
pub fn dual_by_enumeration(x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = x.len();
    let q = |i: usize, j: usize| y[i] * y[j] * (x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>() + 1.0);
    let dual = |a: &[f64]| {
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += a[i] * a[j] * q(i, j);
            }
        }
        a.iter().sum::<f64>() - 0.5 * quad
    };
    let mut best = f64::NEG_INFINITY;
    let total = 3usize.pow(n as u32);
    for code in 0..total {
        let mut state = vec![0u8; n];
        let mut k = code;
        for s in state.iter_mut() {
            *s = (k % 3) as u8;
            k /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut a: Vec<f64> = state.iter().map(|&s| if s == 1 { c } else { 0.0 }).collect();
        if !free.is_empty() {
            // Q_FF a_F = 1 - Q_FB a_B.
            let m: Vec<Vec<f64>> = free.iter().map(|&i| free.iter().map(|&j| q(i, j)).collect()).collect();
            let rhs: Vec<f64> = free
                .iter()
                .map(|&i| 1.0 - (0..n).filter(|j| state[*j] == 1).map(|j| q(i, j) * c).sum::<f64>())
                .collect();
            let inv = invert(m);
            if inv.iter().flatten().any(|v| !v.is_finite()) {
                continue;
            }
            for (r, &i) in free.iter().enumerate() {
                a[i] = inv[r].iter().zip(&rhs).map(|(u, v)| u * v).sum();
            }
            if free.iter().any(|&i| a[i] < -1e-12 || a[i] > c + 1e-12) {
                continue;
            }
        }
        best = best.max(dual(&a));
    }
    best
}

/// The same dual by projected gradient ascent, run far past convergence.
pub fn dual_by_projected_gradient(x: &[Vec<f64>], y: &[f64], c: f64) -> f64 {
    let n = x.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * (x[i].iter().zip(&x[j]).map(|(a, b)| a * b).sum::<f64>() + 1.0)).collect())
        .collect();
    let lip: f64 = q.iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut a = vec![0.0; n];
    for _ in 0..200_000 {
        let g: Vec<f64> = (0..n).map(|i| 1.0 - q[i].iter().zip(&a).map(|(u, v)| u * v).sum::<f64>()).collect();
        for i in 0..n {
            a[i] = (a[i] + g[i] / lip).clamp(0.0, c);
        }
    }
    let quad: f64 = (0..n).map(|i| a[i] * q[i].iter().zip(&a).map(|(u, v)| u * v).sum::<f64>()).sum();
    a.iter().sum::<f64>() - 0.5 * quad
}

pub fn blobs(rng: &mut ChaCha8Rng, n: usize, dim: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n {
        let label = if i % 2 == 0 { 1.0 } else { -1.0 };
        x.push((0..dim).map(|k| rng.random_range(-1.0..1.0) + if k == 0 { label * gap } else { 0.0 }).collect());
        y.push(label);
    }
    (x, y)
}
