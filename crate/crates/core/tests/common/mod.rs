//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn complex_gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<Complex64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    })
}

/// Worst violation of the LASSO optimality conditions for
/// `‖y − Dw‖² + λ‖w‖₁` over all atoms.
pub fn kkt_residual(d: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = &y - &d.dot(&w);
    let g = d.t().dot(&r);
    let half = 0.5 * lambda;
    let mut worst = 0.0f64;
    for j in 0..w.len() {
        let v = if w[j] == 0.0 {
            (g[j].abs() - half).max(0.0)
        } else {
            (g[j] - half * w[j].signum()).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Cyclic Jacobi eigensolver for a real symmetric matrix. Returns
/// eigenvalues (unsorted) and eigenvectors as columns.
pub fn jacobi_symmetric(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut a = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[[i, i]]).collect(), v)
}

/// Orthogonal projector onto the span of the eigenvectors of Hermitian `r`
/// belonging to its `n − k` smallest eigenvalues, computed through the real
/// symmetric embedding `[[Re, −Im], [Im, Re]]` and Jacobi rotations.
pub fn noise_projector_oracle(r: &Array2<Complex64>, k: usize) -> Array2<Complex64> {
    let n = r.nrows();
    let mut big = Array2::<f64>::zeros((2 * n, 2 * n));
    for i in 0..n {
        for j in 0..n {
            big[[i, j]] = r[[i, j]].re;
            big[[i, j + n]] = -r[[i, j]].im;
            big[[i + n, j]] = r[[i, j]].im;
            big[[i + n, j + n]] = r[[i, j]].re;
        }
    }
    let (vals, vecs) = jacobi_symmetric(&big);
    let mut order: Vec<usize> = (0..2 * n).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    // each complex eigenvector appears twice in the embedding; keep the
    // 2(n − k) smallest and orthonormalize them as complex vectors
    let mut basis: Vec<Array1<Complex64>> = Vec::new();
    for &idx in order.iter().take(2 * (n - k)) {
        let mut z: Array1<Complex64> = (0..n).map(|i| Complex64::new(vecs[[i, idx]], vecs[[i + n, idx]])).collect();
        for b in &basis {
            let proj: Complex64 = b.iter().zip(z.iter()).map(|(x, y)| x.conj() * y).sum();
            z = &z - &b.mapv(|x| x * proj);
        }
        let norm = z.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(z.mapv(|x| x / norm));
        }
        if basis.len() == n - k {
            break;
        }
    }
    let mut p = Array2::<Complex64>::zeros((n, n));
    for b in &basis {
        for i in 0..n {
            for j in 0..n {
                p[[i, j]] += b[i] * b[j].conj();
            }
        }
    }
    p
}

/// `(1/P) Σ_p y_p y_pᴴ` by explicit summation.
pub fn covariance_oracle(y: &Array2<Complex64>) -> Array2<Complex64> {
    let (n, p) = y.dim();
    let mut r = Array2::<Complex64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..p {
                acc += y[[i, t]] * y[[j, t]].conj();
            }
            r[[i, j]] = acc / p as f64;
        }
    }
    r
}

/// Exhaustive LASSO over all supports of size ≤ `max_support`: for each
/// support and sign pattern, solve the smooth problem and keep the
/// feasible solution with the lowest objective.
pub fn lasso_brute_force(d: &Array2<f64>, y: ArrayView1<f64>, lambda: f64, max_support: usize) -> (Array1<f64>, f64) {
    let l = d.ncols();
    let objective = |w: &Array1<f64>| {
        let r = &y - &d.dot(w);
        r.dot(&r) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
    };
    let mut best = Array1::<f64>::zeros(l);
    let mut best_f = objective(&best);
    let mut supports: Vec<Vec<usize>> = (0..l).map(|j| vec![j]).collect();
    if max_support >= 2 {
        for a in 0..l {
            for b in a + 1..l {
                supports.push(vec![a, b]);
            }
        }
    }
    for s in supports {
        let k = s.len();
        for mask in 0..(1u32 << k) {
            let signs: Vec<f64> = (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            // (D_Sᵀ D_S) w = D_Sᵀ y − (λ/2) s
            let mut g = vec![vec![0.0; k]; k];
            let mut rhs = vec![0.0; k];
            for i in 0..k {
                for j in 0..k {
                    g[i][j] = d.column(s[i]).dot(&d.column(s[j]));
                }
                rhs[i] = d.column(s[i]).dot(&y) - 0.5 * lambda * signs[i];
            }
            let sol = match k {
                1 => vec![rhs[0] / g[0][0]],
                _ => {
                    let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
                    if det.abs() < 1e-14 {
                        continue;
                    }
                    vec![
                        (rhs[0] * g[1][1] - g[0][1] * rhs[1]) / det,
                        (g[0][0] * rhs[1] - g[1][0] * rhs[0]) / det,
                    ]
                }
            };
            if sol.iter().zip(&signs).any(|(v, s)| v * s <= 0.0) {
                continue;
            }
            let mut w = Array1::<f64>::zeros(l);
            for (i, &j) in s.iter().enumerate() {
                w[j] = sol[i];
            }
            let f = objective(&w);
            if f < best_f {
                best_f = f;
                best = w;
            }
        }
    }
    (best, best_f)
}
