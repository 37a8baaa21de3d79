//! Dense complex linear-algebra helpers shared across the engine.
//!
//! Everything operates on dynamically sized `nalgebra` matrices over
//! `Complex<f64>`. Hermitian factorizations go through the symmetric
//! eigendecomposition so that whitened bases can be exposed explicitly.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::{Result, SimError};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Relative singular-value cutoff used when deciding numerical rank.
pub const RANK_CUTOFF: f64 = 1e-9;

pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

pub fn cr(re: f64) -> C64 {
    Complex::new(re, 0.0)
}

/// Hermitian part (A + Aᴴ)/2; cheap guard against rounding drift.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * cr(0.5)
}

pub fn is_hermitian(a: &CMat, tol: f64) -> bool {
    if a.nrows() != a.ncols() {
        return false;
    }
    (a - a.adjoint()).norm() <= tol * (1.0 + a.norm())
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues ascending.
pub struct HermitianEigen {
    pub vectors: CMat,
    pub values: DVector<f64>,
}

pub fn hermitian_eigen(a: &CMat) -> HermitianEigen {
    let se = nalgebra::SymmetricEigen::new(hermitian_part(a));
    let n = se.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let values = DVector::from_iterator(n, order.iter().map(|&i| se.eigenvalues[i]));
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &se.eigenvectors.column(src));
    }
    HermitianEigen { vectors, values }
}

pub fn min_eigenvalue(a: &CMat) -> f64 {
    hermitian_eigen(a).values[0]
}

/// Hermitian square root with negative eigenvalues clipped at zero.
pub fn hermitian_sqrt(a: &CMat) -> CMat {
    let eig = hermitian_eigen(a);
    scaled_outer(&eig.vectors, &eig.values.map(|v| v.max(0.0).sqrt()))
}

/// Inverse Hermitian square root; eigenvalues below `floor` are clamped.
pub fn hermitian_inv_sqrt(a: &CMat, floor: f64) -> Result<CMat> {
    let eig = hermitian_eigen(a);
    if eig.values[0] <= 0.0 && floor <= 0.0 {
        return Err(SimError::Numerical(
            "inverse square root of a singular Hermitian matrix".into(),
        ));
    }
    Ok(scaled_outer(
        &eig.vectors,
        &eig.values.map(|v| 1.0 / v.max(floor).sqrt()),
    ))
}

/// Projects onto the PSD cone by clipping negative eigenvalues.
pub fn psd_project(a: &CMat) -> CMat {
    let eig = hermitian_eigen(a);
    if eig.values[0] >= 0.0 {
        return hermitian_part(a);
    }
    scaled_outer(&eig.vectors, &eig.values.map(|v| v.max(0.0)))
}

/// V · diag(s) · Vᴴ for a real scaling vector.
pub fn scaled_outer(vectors: &CMat, scales: &DVector<f64>) -> CMat {
    let mut scaled = vectors.clone();
    for (j, s) in scales.iter().enumerate() {
        scaled.column_mut(j).scale_mut(*s);
    }
    &scaled * vectors.adjoint()
}

/// Moore–Penrose pseudo-inverse of a small Hermitian PSD matrix together
/// with its numerical rank. The relative eigenvalue cutoff sits well above
/// the eigensolver's noise floor (~1e-16 relative): spurious zero modes
/// must be dropped or they amplify rounding noise by their inverse.
pub fn pinv_hermitian(a: &CMat) -> (CMat, usize) {
    let eig = hermitian_eigen(a);
    let max = eig.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
    let cut = max * 1e-12;
    let mut rank = 0;
    let inv = eig.values.map(|v| {
        if v > cut && v > 0.0 {
            rank += 1;
            1.0 / v
        } else {
            0.0
        }
    });
    (scaled_outer(&eig.vectors, &inv), rank)
}

/// Solves A·x = b for Hermitian positive definite A.
pub fn solve_hermitian(a: &CMat, b: &CMat) -> Result<CMat> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| SimError::Numerical("Cholesky failed: matrix not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn frobenius(a: &CMat) -> f64 {
    a.norm()
}

/// ‖a − b‖_F / ‖b‖_F.
pub fn rel_frobenius_err(a: &CMat, b: &CMat) -> f64 {
    let denom = b.norm();
    if denom == 0.0 {
        a.norm()
    } else {
        (a - b).norm() / denom
    }
}

/// Real part of tr(A·B); exact for Hermitian A, B where the trace is real.
pub fn trace_product_re(a: &CMat, b: &CMat) -> f64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += (a[(i, k)] * b[(k, i)]).re;
        }
    }
    acc
}

/// tr(A·B) as a complex number.
pub fn trace_product(a: &CMat, b: &CMat) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Gauss–Hermite nodes and weights (weight function e^{-x²}) via the
/// Golub–Welsch tridiagonal eigenvalue method.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1);
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for i in 1..order {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = off;
        jacobi[(i, i - 1)] = off;
    }
    let se = nalgebra::SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|j| {
            let node = se.eigenvalues[j];
            let w = se.eigenvectors[(0, j)].powi(2) * std::f64::consts::PI.sqrt();
            (node, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pairs.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, seed: u64) -> CMat {
        let mut rng = crate::rng::substream(seed, &[0]);
        let a = crate::rng::complex_gaussian_mat(&mut rng, n, n);
        &a * a.adjoint() + CMat::identity(n, n) * cr(0.1)
    }

    #[test]
    fn sqrt_squares_back() {
        let a = random_psd(6, 7);
        let s = hermitian_sqrt(&a);
        assert!(rel_frobenius_err(&(&s * &s), &a) < 1e-10);
    }

    #[test]
    fn inv_sqrt_whitens() {
        let a = random_psd(5, 11);
        let w = hermitian_inv_sqrt(&a, 0.0).unwrap();
        let eye = &w * &a * &w;
        assert!(rel_frobenius_err(&eye, &CMat::identity(5, 5)) < 1e-9);
    }

    #[test]
    fn psd_projection_clips_negative_modes() {
        let mut a = random_psd(4, 3);
        a -= CMat::identity(4, 4) * cr(5.0);
        let p = psd_project(&a);
        assert!(min_eigenvalue(&p) >= -1e-12);
    }

    #[test]
    fn pinv_recovers_inverse_on_full_rank() {
        let a = random_psd(4, 5);
        let (p, rank) = pinv_hermitian(&a);
        assert_eq!(rank, 4);
        assert!(rel_frobenius_err(&(&p * &a), &CMat::identity(4, 4)) < 1e-9);
    }

    #[test]
    fn gauss_hermite_integrates_moments() {
        let (nodes, weights) = gauss_hermite(24);
        let total: f64 = weights.iter().sum();
        assert!((total - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        // ∫ x² e^{-x²} dx = √π / 2
        let second: f64 = nodes
            .iter()
            .zip(&weights)
            .map(|(x, w)| w * x * x)
            .sum();
        assert!((second - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-10);
    }

    #[test]
    fn trace_product_matches_direct() {
        let a = random_psd(3, 1);
        let b = random_psd(3, 2);
        let direct = (&a * &b).trace();
        let fast = trace_product(&a, &b);
        assert!((direct - fast).norm() < 1e-12 * (1.0 + direct.norm()));
        assert!((trace_product_re(&a, &b) - direct.re).abs() < 1e-12 * (1.0 + direct.re.abs()));
    }
}
