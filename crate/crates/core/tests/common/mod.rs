//! Independent oracles and model builders shared by the integration tests.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use phrates::bond::ShortRateModel;
use phrates::io::{read_model_file, read_product_file};
use phrates::life::{PaymentSpec, ProductModel};
use phrates::matrix::{Matrix, PiecewiseMatrix, Vector};
use rand::Rng;

pub fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

/// The disability product combined with the printed four-state rate model.
pub fn disability_model() -> ProductModel {
    let prod = read_product_file(&data("disability_product.json"))
        .unwrap()
        .to_product()
        .unwrap();
    let rm = read_model_file(&data("rate_model_p4.json")).unwrap();
    prod.with_rate_model(&rm).unwrap()
}

pub fn max_abs(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).amax()
}

/// `Σ_{j<terms} A^j / j!`, summed naively.
pub fn taylor_exp(a: &Matrix, terms: usize) -> Matrix {
    let n = a.nrows();
    let mut term = Matrix::identity(n, n);
    let mut acc = term.clone();
    for j in 1..terms {
        term = &term * a / j as f64;
        acc += &term;
    }
    acc
}

/// Composite Simpson rule with `2m` panels on `[lo, hi]`.
pub fn simpson<F: Fn(f64) -> Matrix>(f: F, lo: f64, hi: f64, m: usize) -> Matrix {
    let n = 2 * m;
    let h = (hi - lo) / n as f64;
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(lo + h * i as f64) * w;
    }
    acc * (h / 3.0)
}

/// Gauss–Jacobi nodes on `[−1, 1]` and probability weights for the weight
/// `(1 − z)^α (1 + z)^β`, by Golub–Welsch.
pub fn gauss_jacobi(n: usize, alpha: f64, beta: f64) -> (Vec<f64>, Vec<f64>) {
    let s = alpha + beta;
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let d = 2.0 * kf + s;
        j[(k, k)] = if k == 0 {
            (beta - alpha) / (s + 2.0)
        } else {
            (beta * beta - alpha * alpha) / (d * (d + 2.0))
        };
        if k + 1 < n {
            let m = kf + 1.0;
            let dm = 2.0 * m + s;
            let b2 = 4.0 * m * (m + alpha) * (m + beta) * (m + s) / (dm * dm * (dm + 1.0) * (dm - 1.0));
            j[(k, k + 1)] = b2.sqrt();
            j[(k + 1, k)] = b2.sqrt();
        }
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Random intensity matrix with off-diagonals in `[0, scale)`.
pub fn random_intensity<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Matrix {
    let mut m = Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { rng.random::<f64>() * scale });
    for i in 0..n {
        let s: f64 = m.row(i).sum();
        m[(i, i)] = -s;
    }
    m
}

pub fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
}

pub fn random_probability<R: Rng>(rng: &mut R, n: usize) -> Vector {
    let v = Vector::from_fn(n, |_, _| rng.random::<f64>() + 0.05);
    let s = v.sum();
    v / s
}

/// Piecewise function with the given breakpoints and a fresh value per cell.
pub fn piecewise<R: Rng, F: FnMut(&mut R) -> Matrix>(rng: &mut R, breaks: &[f64], mut f: F) -> PiecewiseMatrix {
    let values = (0..breaks.len() - 1).map(|_| f(rng)).collect();
    PiecewiseMatrix::new(breaks.to_vec(), values).unwrap()
}

/// Random independent biometric × rate model with continuous payments and
/// transition lumps, piecewise constant on two cells.
pub fn random_product<R: Rng>(rng: &mut R, q: usize, p: usize, horizon: f64) -> ProductModel {
    let breaks = [0.0, horizon * rng.random_range(0.2..0.8), horizon];
    let lambda = piecewise(rng, &breaks, |r| random_intensity(r, q, 1.0));
    let rates = piecewise(rng, &breaks, |r| random_matrix(r, q, 1, 1.0));
    let lumps = piecewise(rng, &breaks, |r| {
        let mut b = random_matrix(r, q, q, 1.0);
        b.fill_diagonal(0.0);
        b
    });
    // Λ¹ = u • Λ off the diagonal
    let frac: Vec<Matrix> = (0..2).map(|_| Matrix::from_fn(q, q, |i, j| if i == j { 0.0 } else { rng.random() })).collect();
    let l1 = PiecewiseMatrix::new(
        breaks.to_vec(),
        lambda.values().iter().zip(&frac).map(|(l, f)| l.component_mul(f)).collect(),
    )
    .unwrap();
    let pay = PaymentSpec::new(rates, lumps, l1).unwrap();
    let rate_model = ShortRateModel::homogeneous(
        random_intensity(rng, p, 0.5),
        DVector::from_fn(p, |_, _| rng.random_range(0.0..0.1)),
        random_probability(rng, p),
        0.0,
    )
    .unwrap();
    ProductModel::independent(&lambda, &pay, &rate_model, horizon).unwrap()
}
