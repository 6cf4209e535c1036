//! Dense complex linear algebra kernel: Hermitian eigendecomposition, tensor
//! products, matrix functions, trace norm and fidelity.
//!
//! Every operation is a pure function of immutable values; results are safe to
//! share across threads. Any operation that materializes a matrix checks the
//! global dimension cap (default 2^14, overridable via `QMEMCAP_DIM_CAP` or
//! [`set_dim_cap`]) so accidental exponential blowup becomes a clean error.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::{tol, Error, Result};

/// Dense complex matrix, the carrier for all operators in this crate.
pub type CMatrix = DMatrix<Complex64>;
/// Dense complex vector (kets).
pub type CVector = DVector<Complex64>;

/// Default cap on the dimension of any materialized matrix.
pub const DEFAULT_DIM_CAP: usize = 1 << 14;

static DIM_CAP: OnceLock<AtomicUsize> = OnceLock::new();

fn dim_cap_cell() -> &'static AtomicUsize {
    DIM_CAP.get_or_init(|| {
        let from_env = std::env::var("QMEMCAP_DIM_CAP")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&v| v > 0);
        AtomicUsize::new(from_env.unwrap_or(DEFAULT_DIM_CAP))
    })
}

/// Current cap on materialized matrix dimension.
pub fn dim_cap() -> usize {
    dim_cap_cell().load(Ordering::Relaxed)
}

/// Overrides the materialization cap for this process.
pub fn set_dim_cap(cap: usize) {
    dim_cap_cell().store(cap.max(1), Ordering::Relaxed);
}

/// Errors unless `dim` fits under the materialization cap.
pub fn check_dim(dim: u128) -> Result<usize> {
    let cap = dim_cap();
    if dim == 0 || dim > cap as u128 {
        return Err(Error::SizeLimit {
            requested: dim,
            cap,
        });
    }
    Ok(dim as usize)
}

fn all_finite(m: &CMatrix) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Max |entry| of a complex matrix.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Tr(AB) for Hermitian A, B of equal dimension, evaluated as the Frobenius
/// inner product so no matrix product is formed. The result is real for
/// Hermitian inputs; the imaginary part is discarded.
pub fn trace_product(a: &HermitianOperator, b: &HermitianOperator) -> f64 {
    debug_assert_eq!(a.dim(), b.dim());
    let mut acc = 0.0f64;
    for (x, y) in a.mat.iter().zip(b.mat.iter()) {
        // sum_{ij} A_ij conj(B_ij) = Tr(A B) for Hermitian B
        acc += x.re * y.re + x.im * y.im;
    }
    acc
}

/// Hermitian operator stored in exactly Hermitian form: the constructor
/// rejects inputs with |A - A^†| above [`tol::HERMITICITY`] and stores the
/// symmetrization (A + A^†)/2 so downstream eigensolvers receive exactly
/// Hermitian input.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    mat: CMatrix,
}

impl HermitianOperator {
    pub fn new(mat: CMatrix) -> Result<Self> {
        if mat.nrows() != mat.ncols() {
            return Err(Error::DimensionMismatch {
                expected: mat.nrows(),
                got: mat.ncols(),
            });
        }
        if !all_finite(&mat) {
            return Err(Error::NonFinite);
        }
        let adj = mat.adjoint();
        let deviation = max_abs(&(&mat - &adj));
        if deviation > tol::HERMITICITY {
            return Err(Error::NotHermitian { deviation });
        }
        let sym = (mat + adj).scale(0.5);
        Ok(HermitianOperator { mat: sym })
    }

    pub fn identity(dim: usize) -> Self {
        HermitianOperator {
            mat: CMatrix::identity(dim, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        HermitianOperator {
            mat: CMatrix::zeros(dim, dim),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Self {
        let d = diag.len();
        let mut mat = CMatrix::zeros(d, d);
        for (k, &v) in diag.iter().enumerate() {
            mat[(k, k)] = Complex64::new(v, 0.0);
        }
        HermitianOperator { mat }
    }

    /// |ψ⟩⟨ψ| for a (not necessarily normalized) ket.
    pub fn outer(ket: &CVector) -> Self {
        let mat = ket * ket.adjoint();
        HermitianOperator { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn trace(&self) -> f64 {
        self.mat.trace().re
    }

    pub fn scale(&self, factor: f64) -> Self {
        HermitianOperator {
            mat: self.mat.scale(factor),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Ok(HermitianOperator {
            mat: &self.mat + &other.mat,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_dim(other)?;
        Ok(HermitianOperator {
            mat: &self.mat - &other.mat,
        })
    }

    pub fn neg(&self) -> Self {
        HermitianOperator { mat: -&self.mat }
    }

    /// Kronecker product, cap-checked.
    pub fn tensor(&self, other: &Self) -> Result<Self> {
        let m = tensor(&self.mat, &other.mat)?;
        Ok(HermitianOperator { mat: m })
    }

    /// m-fold Kronecker power, cap-checked before any allocation.
    pub fn tensor_pow(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Ok(HermitianOperator::identity(1));
        }
        check_dim((self.dim() as u128).checked_pow(m as u32).ok_or(
            Error::SizeLimit {
                requested: u128::MAX,
                cap: dim_cap(),
            },
        )?)?;
        let mut acc = self.mat.clone();
        for _ in 1..m {
            acc = acc.kronecker(&self.mat);
        }
        Ok(HermitianOperator { mat: acc })
    }

    /// A · B · A for Hermitian A, B (the result is Hermitian).
    pub fn sandwich(&self, inner: &Self) -> Result<Self> {
        self.check_same_dim(inner)?;
        let prod = &self.mat * &inner.mat * &self.mat;
        // Hermitian by symmetry of the product; symmetrize away rounding.
        let adj = prod.adjoint();
        Ok(HermitianOperator {
            mat: (prod + adj).scale(0.5),
        })
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }

    fn check_same_dim(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(())
    }

    pub(crate) fn from_symmetrized(mat: CMatrix) -> Self {
        debug_assert!(mat.nrows() == mat.ncols());
        let adj = mat.adjoint();
        HermitianOperator {
            mat: (mat + adj).scale(0.5),
        }
    }
}

/// Eigendecomposition of a Hermitian operator: real eigenvalues in descending
/// order with matching orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct Spectrum {
    eigenvalues: Vec<f64>,
    eigenvectors: CMatrix,
}

impl Spectrum {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &CMatrix {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// V f(Λ) V^† by spectral functional calculus.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64) -> HermitianOperator {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..d {
            let fv = Complex64::new(f(self.eigenvalues[k]), 0.0);
            for r in 0..d {
                scaled[(r, k)] *= fv;
            }
        }
        let mat = &scaled * self.eigenvectors.adjoint();
        HermitianOperator::from_symmetrized(mat)
    }

    /// Projector onto eigenvectors selected by `keep(eigenvalue, index)`.
    pub fn projector_where(&self, keep: impl Fn(f64, usize) -> bool) -> HermitianOperator {
        self.apply_fn_indexed(|v, k| if keep(v, k) { 1.0 } else { 0.0 })
    }

    fn apply_fn_indexed(&self, f: impl Fn(f64, usize) -> f64) -> HermitianOperator {
        let d = self.dim();
        let mut scaled = self.eigenvectors.clone();
        for k in 0..d {
            let fv = Complex64::new(f(self.eigenvalues[k], k), 0.0);
            for r in 0..d {
                scaled[(r, k)] *= fv;
            }
        }
        let mat = &scaled * self.eigenvectors.adjoint();
        HermitianOperator::from_symmetrized(mat)
    }

    /// V Λ V^†, for reconstruction checks.
    pub fn reconstruct(&self) -> HermitianOperator {
        self.apply_fn(|v| v)
    }
}

/// Hermitian eigendecomposition with eigenvalues sorted descending.
///
/// A tridiagonalization-based warm start is polished by cyclic complex Jacobi
/// sweeps on the rotated matrix. The warm start alone can return mixed
/// eigenvectors on matrices with strongly clustered spectra (tensor-power
/// differences are the repeat offender); the polish is a full Jacobi solve of
/// the rotated matrix, so the final residual is at rounding level no matter
/// how the warm start behaved.
pub fn eig_hermitian(a: &HermitianOperator) -> Result<Spectrum> {
    let dim = a.dim();
    if dim == 0 {
        return Err(Error::Empty { what: "matrix" });
    }
    let warm_iters = 30 * dim.max(8) + 1000;
    let (mut basis, mut rotated) =
        match nalgebra::SymmetricEigen::try_new(a.mat.clone(), f64::EPSILON, warm_iters) {
            Some(se) => {
                let m = se.eigenvectors.adjoint() * &a.mat * &se.eigenvectors;
                (se.eigenvectors, m)
            }
            None => (CMatrix::identity(dim, dim), a.mat.clone()),
        };
    jacobi_diagonalize(&mut rotated, &mut basis).ok_or(Error::EigFailed { dim })?;
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| {
        rotated[(j, j)]
            .re
            .partial_cmp(&rotated[(i, i)].re)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&k| rotated[(k, k)].re).collect();
    let mut eigenvectors = CMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &basis.column(src));
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors,
    })
}

/// Cyclic complex Jacobi diagonalization of a Hermitian matrix, accumulating
/// rotations into `basis`. Returns `None` if the sweep budget runs out before
/// the off-diagonal mass reaches rounding level.
fn jacobi_diagonalize(m: &mut CMatrix, basis: &mut CMatrix) -> Option<()> {
    let n = m.nrows();
    if n <= 1 {
        return Some(());
    }
    let frob = m.norm().max(f64::MIN_POSITIVE);
    let target = 1e-14 * frob;
    const MAX_SWEEPS: usize = 60;
    for _ in 0..MAX_SWEEPS {
        let mut off_sq = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off_sq += m[(p, q)].norm_sqr();
            }
        }
        if off_sq.sqrt() <= target {
            return Some(());
        }
        let skip_threshold = target / n as f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let beta = apq.norm();
                if beta <= skip_threshold {
                    continue;
                }
                // Phase out the coupling, then a real Jacobi rotation:
                // U = diag(1, e^{-iφ}) · R(θ) restricted to the (p, q) plane.
                let phase = apq / Complex64::new(beta, 0.0);
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * beta);
                let t = if tau >= 0.0 {
                    -1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let u_pp = Complex64::new(c, 0.0);
                let u_qp = phase.conj() * s;
                let u_pq = Complex64::new(-s, 0.0);
                let u_qq = phase.conj() * c;
                // Column update M <- M U on columns p, q.
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = mkp * u_pp + mkq * u_qp;
                    m[(k, q)] = mkp * u_pq + mkq * u_qq;
                }
                // Row update M <- U^† M on rows p, q.
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = u_pp.conj() * mpk + u_qp.conj() * mqk;
                    m[(q, k)] = u_pq.conj() * mpk + u_qq.conj() * mqk;
                }
                // Keep the worked entries exactly Hermitian.
                m[(p, q)] = Complex64::new(0.0, 0.0);
                m[(q, p)] = Complex64::new(0.0, 0.0);
                m[(p, p)] = Complex64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = Complex64::new(m[(q, q)].re, 0.0);
                // Accumulate into the basis.
                for k in 0..basis.nrows() {
                    let bkp = basis[(k, p)];
                    let bkq = basis[(k, q)];
                    basis[(k, p)] = bkp * u_pp + bkq * u_qp;
                    basis[(k, q)] = bkp * u_pq + bkq * u_qq;
                }
            }
        }
    }
    None
}

/// Kronecker product with output-dimension cap check.
pub fn tensor(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    let rows = a.nrows() as u128 * b.nrows() as u128;
    let cols = a.ncols() as u128 * b.ncols() as u128;
    check_dim(rows.max(cols))?;
    Ok(a.kronecker(b))
}

/// Sum of absolute eigenvalues, ‖A‖₁.
pub fn trace_norm(a: &HermitianOperator) -> Result<f64> {
    let spec = eig_hermitian(a)?;
    Ok(spec.eigenvalues().iter().map(|v| v.abs()).sum())
}

/// Matrix square root of a PSD operator by spectral calculus. Eigenvalues in
/// [-PSD_EIG, 0) are clipped to zero; anything below is a domain error.
pub fn mat_sqrt(a: &HermitianOperator) -> Result<HermitianOperator> {
    let spec = eig_hermitian(a)?;
    check_psd(&spec)?;
    Ok(spec.apply_fn(|v| if v <= 0.0 { 0.0 } else { v.sqrt() }))
}

/// Base-2 matrix logarithm of a PSD operator. Eigenvalues at or below the
/// entropy floor map to 0 on the null eigenspace (0·log 0 = 0 convention).
pub fn mat_log2(a: &HermitianOperator) -> Result<HermitianOperator> {
    let spec = eig_hermitian(a)?;
    check_psd(&spec)?;
    Ok(spec.apply_fn(|v| if v <= tol::ENTROPY_FLOOR { 0.0 } else { v.log2() }))
}

fn check_psd(spec: &Spectrum) -> Result<()> {
    if let Some(&min) = spec
        .eigenvalues()
        .iter()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        if min < -tol::PSD_EIG {
            return Err(Error::NotPositive {
                min_eigenvalue: min,
            });
        }
    }
    Ok(())
}

/// Projector onto the eigenspaces with eigenvalue ≥ -ZERO_EIG. The zero
/// eigenspace counts as non-negative, so Π⁺ + Π⁻ = I and Π⁺Π⁻ = 0 hold by
/// construction with Π⁻ = I - Π⁺.
pub fn positive_projector(a: &HermitianOperator) -> Result<HermitianOperator> {
    let spec = eig_hermitian(a)?;
    Ok(spec.projector_where(|v, _| v >= -tol::ZERO_EIG))
}

/// Complement of [`positive_projector`]: eigenvalues below -ZERO_EIG.
pub fn negative_projector(a: &HermitianOperator) -> Result<HermitianOperator> {
    let plus = positive_projector(a)?;
    HermitianOperator::identity(a.dim()).sub(&plus)
}

/// Fidelity F(A, B) = Tr √(√A B √A) for positive operators. For density
/// matrices the value lands in [0, 1]; general positive operators can exceed 1.
pub fn fidelity(a: &HermitianOperator, b: &HermitianOperator) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let ra = mat_sqrt(a)?;
    let inner = ra.sandwich(b)?;
    let spec = eig_hermitian(&inner)?;
    Ok(spec
        .eigenvalues()
        .iter()
        .map(|&v| if v > 0.0 { v.sqrt() } else { 0.0 })
        .sum())
}

/// Computational basis ket |k⟩.
pub fn basis_ket(dim: usize, k: usize) -> CVector {
    let mut v = CVector::zeros(dim);
    v[k] = Complex64::new(1.0, 0.0);
    v
}

/// Standard normal via Box-Muller.
pub(crate) fn gaussian(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Haar-random pure-state ket.
pub(crate) fn haar_ket(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> CVector {
    loop {
        let v = CVector::from_fn(dim, |_, _| Complex64::new(gaussian(rng), gaussian(rng)));
        let norm = v.norm();
        if norm > 1e-8 {
            return v.unscale(norm);
        }
    }
}

/// Simultaneous eigenbasis of two commuting Hermitian operators.
#[derive(Debug, Clone)]
pub struct JointEigen {
    pub basis: CMatrix,
    pub diag_a: Vec<f64>,
    pub diag_b: Vec<f64>,
}

/// Attempts to diagonalize `a` and `b` in a common orthonormal basis.
/// Returns `None` when they do not commute (or the verified residual is too
/// large), in which case callers fall back to dense evaluation.
pub fn simultaneous_diag(
    a: &HermitianOperator,
    b: &HermitianOperator,
) -> Result<Option<JointEigen>> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let d = a.dim();
    let scale = 1.0f64.max(a.max_abs()).max(b.max_abs());
    let comm = a.matrix() * b.matrix() - b.matrix() * a.matrix();
    if max_abs(&comm) > 1e-10 * scale {
        return Ok(None);
    }
    let spec_a = eig_hermitian(a)?;
    let mut basis = spec_a.eigenvectors().clone();
    // Rotate inside (near-)degenerate eigenspaces of `a` to diagonalize `b`.
    let gap = 1e-9 * scale;
    let vals = spec_a.eigenvalues();
    let mut start = 0;
    while start < d {
        let mut end = start + 1;
        while end < d && (vals[end - 1] - vals[end]).abs() <= gap {
            end += 1;
        }
        if end - start > 1 {
            let block = basis.columns(start, end - start).into_owned();
            let sub = block.adjoint() * b.matrix() * &block;
            let sub_h = HermitianOperator::from_symmetrized(sub);
            let sub_spec = eig_hermitian(&sub_h)?;
            let rotated = block * sub_spec.eigenvectors();
            for (off, col) in (start..end).enumerate() {
                basis.set_column(col, &rotated.column(off));
            }
        }
        start = end;
    }
    let diag_of = |m: &CMatrix| -> Vec<f64> {
        (0..d)
            .map(|k| {
                let col = basis.column(k);
                (col.adjoint() * m * col)[(0, 0)].re
            })
            .collect()
    };
    let diag_a = diag_of(a.matrix());
    let diag_b = diag_of(b.matrix());
    // Verify both are actually diagonal in the constructed basis.
    let resid = |m: &CMatrix, diag: &[f64]| -> f64 {
        let mut t = basis.adjoint() * m * &basis;
        for k in 0..d {
            t[(k, k)] -= Complex64::new(diag[k], 0.0);
        }
        max_abs(&t)
    };
    if resid(a.matrix(), &diag_a) > 1e-8 * scale || resid(b.matrix(), &diag_b) > 1e-8 * scale {
        return Ok(None);
    }
    Ok(Some(JointEigen {
        basis,
        diag_a,
        diag_b,
    }))
}
