//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn stats(x: &[Vec<f64>], dim: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.len() as f64;
    let mut mu = DVector::zeros(dim);
    for v in x {
        mu += DVector::from_column_slice(v);
    }
    mu /= n;
    let mut cov = DMatrix::zeros(dim, dim);
    for v in x {
        let d = DVector::from_column_slice(v) - &mu;
        cov += &d * d.transpose();
    }
    cov /= n - 1.0;
    (mu, cov)
}

/// Square root of a symmetric positive semi-definite matrix, eigenvalues floored at 0.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let e = sym.symmetric_eigen();
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2 (Σ_a Σ_b)^{1/2})`.
///
/// The cross term uses `Tr((Σ_a Σ_b)^{1/2}) = Tr((A Σ_b A)^{1/2})` with
/// `A = Σ_a^{1/2}`, which keeps every decomposition symmetric.
pub fn frechet_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let dim = a.first().map(Vec::len).unwrap_or(0);
    if dim == 0 {
        return Err(Error::Validation("empty feature set".into()));
    }
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::Shape("feature vectors differ in length".into()));
    }
    for (name, x) in [("first", a), ("second", b)] {
        if x.len() < dim + 1 {
            return Err(Error::Validation(format!("{name} set has {} samples, needs at least {}", x.len(), dim + 1)));
        }
    }
    let (mu_a, cov_a) = stats(a, dim);
    let (mu_b, cov_b) = stats(b, dim);
    let root_a = sym_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = inner.symmetric_eigen().eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let d = (&mu_a - &mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}
