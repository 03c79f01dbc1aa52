//! Reference implementations shared by the integration tests. Each one is
//! written directly from the definition, independently of the library code.

#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

use kinship_core::imaging::Plane;

pub fn rng(seed: u64) -> Pcg32 {
    Pcg32::seed_from_u64(seed)
}

pub fn random_plane(rng: &mut Pcg32, w: usize, h: usize, max: f64) -> Plane {
    Plane::from_fn(w, h, |_, _| rng.random_range(0.0..max)).unwrap()
}

/// Index into `0..n` after mirroring about the half-sample boundaries.
fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D convolution with the sampled, normalized Gaussian over the full
/// `(2r+1)²` support.
pub fn brute_gaussian(plane: &Plane, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let g: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (w, h) = (plane.width() as i64, plane.height() as i64);
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let v = plane.get(mirror(x + dx, w), mirror(y + dy, h));
                    acc += g[(dy + r) as usize] * g[(dx + r) as usize] * v;
                }
            }
            out.push(acc / norm);
        }
    }
    out
}

/// Pre-stretch retinex response of one plane, straight from the definition.
pub fn reference_msr(plane: &Plane, scales: &[f64], weights: &[f64], eps: f64) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; plane.data().len()];
    for (&s, &wt) in scales.iter().zip(weights) {
        let blur = brute_gaussian(plane, s);
        for ((o, &v), &b) in out.iter_mut().zip(plane.data()).zip(&blur) {
            *o += wt / total * ((v + eps).ln() - (b + eps).ln());
        }
    }
    out
}

/// LPQ codes (no decorrelation) from a per-pixel complex DFT over the
/// `R×R` window at frequencies (a,0), (0,a), (a,a), (a,−a).
pub fn dft_lpq_codes(plane: &Plane, r: usize) -> Vec<u8> {
    let a = 1.0 / r as f64;
    let lo = -((r / 2) as i64);
    let freqs = [(a, 0.0), (0.0, a), (a, a), (a, -a)];
    let (w, h) = (plane.width(), plane.height());
    let mut codes = Vec::new();
    for cy in (r / 2)..(h - r + 1 + r / 2) {
        for cx in (r / 2)..(w - r + 1 + r / 2) {
            let mut code = 0u8;
            for (k, &(u, v)) in freqs.iter().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for dy in lo..lo + r as i64 {
                    for dx in lo..lo + r as i64 {
                        let f = plane.get((cx as i64 + dx) as usize, (cy as i64 + dy) as usize);
                        let phase = -2.0 * PI * (u * dx as f64 + v * dy as f64);
                        re += f * phase.cos();
                        im += f * phase.sin();
                    }
                }
                if re > 0.0 {
                    code |= 1 << (2 * k);
                }
                if im > 0.0 {
                    code |= 1 << (2 * k + 1);
                }
            }
            codes.push(code);
        }
    }
    codes
}

/// Mean outer product of the listed differences.
pub fn mean_outer(diffs: &[DVector<f64>]) -> DMatrix<f64> {
    let n = diffs[0].len();
    let mut m = DMatrix::zeros(n, n);
    for d in diffs {
        m += d * d.transpose();
    }
    m / diffs.len() as f64
}

/// Leading `k` eigenvectors of `B^{-1/2} A B^{-1/2}`, mapped back through
/// `B^{-1/2}`: the top generalized eigen-subspace of `(A, B)`.
pub fn dense_generalized_top(a: &DMatrix<f64>, b: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let eb = SymmetricEigen::new(b.clone());
    let inv_sqrt = &eb.eigenvectors
        * DMatrix::from_diagonal(&eb.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eb.eigenvectors.transpose();
    let c = &inv_sqrt * a * &inv_sqrt;
    let c = (&c + c.transpose()) * 0.5;
    let ec = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..ec.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| ec.eigenvalues[j].total_cmp(&ec.eigenvalues[i]));
    let top = DMatrix::from_fn(a.nrows(), k, |r, c| ec.eigenvectors[(r, order[c])]);
    inv_sqrt * top
}

/// Orthonormal basis by modified Gram-Schmidt.
fn gram_schmidt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        for i in 0..j {
            let proj = q.column(i).dot(&q.column(j));
            let qi = q.column(i).into_owned();
            q.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let n = q.column(j).norm();
        q.column_mut(j).scale_mut(1.0 / n);
    }
    q
}

/// Largest principal angle (radians) between two column spaces of equal
/// dimension.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (qa, qb) = (gram_schmidt(a), gram_schmidt(b));
    let s = (qa.transpose() * qb).singular_values();
    let smallest = s.iter().copied().fold(f64::INFINITY, f64::min).min(1.0);
    (1.0 - smallest * smallest).max(0.0).sqrt().asin()
}

/// Average per-family covariance over families with two or more vectors.
pub fn within_family_covariance(vectors: &[DVector<f64>], families: &[usize]) -> DMatrix<f64> {
    let n = vectors[0].len();
    let mut ids: Vec<usize> = families.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut total = DMatrix::zeros(n, n);
    let mut count = 0;
    for f in ids {
        let members: Vec<&DVector<f64>> = vectors.iter().zip(families).filter(|(_, &g)| g == f).map(|(v, _)| v).collect();
        if members.len() < 2 {
            continue;
        }
        let mean = members.iter().fold(DVector::zeros(n), |acc, v| acc + *v) / members.len() as f64;
        let mut c = DMatrix::zeros(n, n);
        for v in &members {
            let d = *v - &mean;
            c += &d * d.transpose();
        }
        total += c / members.len() as f64;
        count += 1;
    }
    total / count as f64
}

/// Plain gradient ascent with backtracking on the L2-penalized logistic
/// log-likelihood (intercept first, unpenalized).
pub fn ascend_logistic(x: &[Vec<f64>], y: &[bool], lambda: f64, iters: usize) -> Vec<f64> {
    let d = x[0].len() + 1;
    let objective = |p: &[f64]| {
        let mut ll = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let eta = p[0] + xi.iter().zip(&p[1..]).map(|(a, b)| a * b).sum::<f64>();
            // log σ(η) and log(1 − σ(η)) in stable form
            let log1pexp = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            ll += if yi { eta - log1pexp } else { -log1pexp };
        }
        ll - 0.5 * lambda * p[1..].iter().map(|b| b * b).sum::<f64>()
    };
    let gradient = |p: &[f64]| {
        let mut g = vec![0.0; d];
        for (xi, &yi) in x.iter().zip(y) {
            let eta = p[0] + xi.iter().zip(&p[1..]).map(|(a, b)| a * b).sum::<f64>();
            let r = f64::from(u8::from(yi)) - 1.0 / (1.0 + (-eta).exp());
            g[0] += r;
            for j in 1..d {
                g[j] += r * xi[j - 1];
            }
        }
        for j in 1..d {
            g[j] -= lambda * p[j];
        }
        g
    };
    let mut p = vec![0.0; d];
    let mut step = 1.0;
    for _ in 0..iters {
        let g = gradient(&p);
        let f0 = objective(&p);
        let gg: f64 = g.iter().map(|v| v * v).sum();
        if gg < 1e-30 {
            break;
        }
        step *= 2.0;
        loop {
            let cand: Vec<f64> = p.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            if objective(&cand) >= f0 + 0.25 * step * gg {
                p = cand;
                break;
            }
            step *= 0.5;
            if step < 1e-16 {
                return p;
            }
        }
    }
    p
}
