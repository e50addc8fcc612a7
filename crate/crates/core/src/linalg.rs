//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest singular value.
pub fn spectral_norm(p: &DMatrix<f64>) -> f64 {
    if p.is_empty() {
        return 0.0;
    }
    if p.nrows() == 1 && p.ncols() == 1 {
        return p[(0, 0)].abs();
    }
    p.singular_values().max()
}

/// 2-norm condition number `σ_max / σ_min`; infinite for singular input.
pub fn condition_number(p: &DMatrix<f64>) -> f64 {
    let sv = p.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Largest eigenvalue of the symmetric part `(P + Pᵀ)/2`.
pub fn max_symmetric_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Smallest eigenvalue of the symmetric part `(P + Pᵀ)/2`.
pub fn min_symmetric_eigenvalue(p: &DMatrix<f64>) -> f64 {
    let sym = (p + p.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn is_symmetric(p: &DMatrix<f64>, tol: f64) -> bool {
    let scale = p.amax().max(1.0);
    (p - p.transpose()).amax() <= tol * scale
}

/// Real eigendecomposition `B = P Λ P⁻¹` of a diagonalizable matrix with real spectrum.
#[derive(Debug, Clone)]
pub struct RealEigen {
    pub eigenvalues: Vec<f64>,
    /// Unit-norm eigenvectors stored column-wise.
    pub vectors: DMatrix<f64>,
}

impl RealEigen {
    /// `cond₂(P)` of the eigenvector matrix.
    pub fn condition(&self) -> f64 {
        condition_number(&self.vectors)
    }
}

/// Eigendecomposition through the symmetric solver when `b` is symmetric,
/// otherwise through the real Schur form plus null-space extraction by SVD.
///
/// Complex eigenvalues and defective matrices are reported as hypothesis
/// violations: callers need a real diagonalization.
pub fn real_eigen(b: &DMatrix<f64>) -> Result<RealEigen> {
    let n = b.nrows();
    if n != b.ncols() {
        return Err(Error::Shape {
            what: "square matrix columns",
            expected: n,
            got: b.ncols(),
        });
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("matrix has non-finite entries".into()));
    }
    if is_symmetric(b, 1e-13) {
        let se = SymmetricEigen::new((b + b.transpose()) * 0.5);
        return Ok(RealEigen {
            eigenvalues: se.eigenvalues.iter().copied().collect(),
            vectors: se.eigenvectors,
        });
    }

    let scale = b.amax().max(1e-300);
    let complex = b.complex_eigenvalues();
    let mut values = Vec::with_capacity(n);
    for z in complex.iter() {
        if z.im.abs() > 1e-10 * scale {
            return Err(Error::Hypothesis(format!(
                "matrix has a complex eigenvalue {} {:+}i",
                z.re, z.im
            )));
        }
        values.push(z.re);
    }
    values.sort_by(|a, b| a.total_cmp(b));

    // Group numerically equal eigenvalues so repeated ones get a full eigenspace.
    let tol = 1e-8 * scale;
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for v in values {
        match groups.last_mut() {
            Some((mean, count)) if (v - *mean).abs() <= tol => {
                *mean = (*mean * *count as f64 + v) / (*count as f64 + 1.0);
                *count += 1;
            }
            _ => groups.push((v, 1)),
        }
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut vectors = DMatrix::zeros(n, n);
    let mut col = 0;
    for (lambda, mult) in groups {
        let shifted = b - DMatrix::identity(n, n) * lambda;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
        for &k in order.iter().take(mult) {
            if svd.singular_values[k] > 1e-6 * scale {
                return Err(Error::Hypothesis(format!(
                    "matrix is not diagonalizable at eigenvalue {lambda}"
                )));
            }
            let v = v_t.row(k).transpose();
            let norm = v.norm();
            vectors.set_column(col, &(v / norm));
            eigenvalues.push(lambda);
            col += 1;
        }
    }
    let out = RealEigen {
        eigenvalues,
        vectors,
    };
    if !out.condition().is_finite() || out.condition() > 1e12 {
        return Err(Error::Hypothesis(
            "eigenvector matrix is numerically singular".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_of_diagonal() {
        let p = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert!((spectral_norm(&p) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_of_nonsymmetric_matrix_reconstructs() {
        let b = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 3.0]);
        let e = real_eigen(&b).unwrap();
        let lambda = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.eigenvalues.clone()));
        let inv = e.vectors.clone().try_inverse().unwrap();
        let rebuilt = &e.vectors * lambda * inv;
        assert!((rebuilt - &b).amax() < 1e-10);
        assert!(e.condition() > 1.0);
    }

    #[test]
    fn eigen_of_identity_is_well_conditioned() {
        let e = real_eigen(&DMatrix::identity(3, 3)).unwrap();
        assert!((e.condition() - 1.0).abs() < 1e-12);
        assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
    }

    #[test]
    fn rotation_has_complex_spectrum() {
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert!(matches!(real_eigen(&b), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn jordan_block_is_defective() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(real_eigen(&b), Err(Error::Hypothesis(_))));
    }
}
