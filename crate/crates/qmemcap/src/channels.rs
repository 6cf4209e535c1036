//! Quantum states, Kraus-represented CPT maps, the branch-mixture memory
//! channel, entropies and Holevo quantities.
//!
//! Product states are kept in factored form; materialization is an explicit,
//! cap-checked operation so the factorwise constructions never exhaust memory
//! by accident.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::matcore::{self, eig_hermitian, CMatrix, CVector, HermitianOperator};
use crate::{tol, Error, Result};

/// Positive semidefinite unit-trace operator.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    op: HermitianOperator,
}

impl DensityMatrix {
    /// Validates trace = 1 within [`tol::UNIT_TRACE`] and smallest eigenvalue
    /// ≥ -[`tol::PSD_EIG`].
    pub fn new(op: HermitianOperator) -> Result<Self> {
        let trace = op.trace();
        if (trace - 1.0).abs() > tol::UNIT_TRACE {
            return Err(Error::NotUnitTrace { trace });
        }
        let spec = eig_hermitian(&op)?;
        let min = spec
            .eigenvalues()
            .last()
            .copied()
            .ok_or(Error::Empty { what: "operator" })?;
        if min < -tol::PSD_EIG {
            return Err(Error::NotPositive {
                min_eigenvalue: min,
            });
        }
        Ok(DensityMatrix { op })
    }

    /// Constructor for operators that are valid by construction (channel
    /// outputs, tensor products of valid states). Skips the eigenvalue check.
    pub(crate) fn trusting(op: HermitianOperator) -> Self {
        debug_assert!((op.trace() - 1.0).abs() < 1e-6);
        DensityMatrix { op }
    }

    /// Pure state |ψ⟩⟨ψ| from amplitudes; normalizes the ket.
    pub fn pure(amplitudes: &[Complex64]) -> Result<Self> {
        let ket = CVector::from_column_slice(amplitudes);
        let norm = ket.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidProbabilities {
                reason: "pure-state amplitudes have zero or non-finite norm".into(),
            });
        }
        let ket = ket.unscale(norm);
        Ok(DensityMatrix {
            op: HermitianOperator::outer(&ket),
        })
    }

    /// Computational basis state |k⟩⟨k|.
    pub fn basis(dim: usize, k: usize) -> Self {
        let mut diag = vec![0.0; dim];
        diag[k] = 1.0;
        DensityMatrix {
            op: HermitianOperator::from_real_diagonal(&diag),
        }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix {
            op: HermitianOperator::identity(dim).scale(1.0 / dim as f64),
        }
    }

    pub fn from_real_diagonal(diag: &[f64]) -> Result<Self> {
        DensityMatrix::new(HermitianOperator::from_real_diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn op(&self) -> &HermitianOperator {
        &self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn tensor(&self, other: &Self) -> Result<Self> {
        Ok(DensityMatrix::trusting(self.op.tensor(&other.op)?))
    }

    /// Fidelity clamped to [0, 1].
    pub fn fidelity(&self, other: &Self) -> Result<f64> {
        Ok(matcore::fidelity(&self.op, &other.op)?.clamp(0.0, 1.0))
    }
}

/// CPT map given by Kraus operators; completeness Σ K^†K = I is validated at
/// construction (complete positivity is automatic from the Kraus form).
#[derive(Debug, Clone, PartialEq)]
pub struct KrausChannel {
    dim_in: usize,
    dim_out: usize,
    kraus: Vec<CMatrix>,
}

impl KrausChannel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let first = kraus.first().ok_or(Error::Empty {
            what: "Kraus operator list",
        })?;
        let (dim_out, dim_in) = (first.nrows(), first.ncols());
        for k in &kraus {
            if k.nrows() != dim_out || k.ncols() != dim_in {
                return Err(Error::DimensionMismatch {
                    expected: dim_out,
                    got: k.nrows(),
                });
            }
            if !k.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        let mut completeness = CMatrix::zeros(dim_in, dim_in);
        for k in &kraus {
            completeness += k.adjoint() * k;
        }
        let deviation = matcore::max_abs(&(completeness - CMatrix::identity(dim_in, dim_in)));
        if deviation > tol::KRAUS_COMPLETENESS {
            return Err(Error::KrausIncomplete { deviation });
        }
        Ok(KrausChannel {
            dim_in,
            dim_out,
            kraus,
        })
    }

    pub fn identity(dim: usize) -> Self {
        KrausChannel {
            dim_in: dim,
            dim_out: dim,
            kraus: vec![CMatrix::identity(dim, dim)],
        }
    }

    /// Channel ρ ↦ UρU^† for unitary U (unitarity validated via completeness).
    pub fn unitary(u: CMatrix) -> Result<Self> {
        KrausChannel::new(vec![u])
    }

    /// Qubit depolarizing channel with Kraus set
    /// {√(1-3p/4)·I, √(p/4)·X, √(p/4)·Y, √(p/4)·Z}. `p = 1` is fully
    /// depolarizing: every input maps to I/2.
    pub fn depolarizing_qubit(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter {
                name: "p",
                message: format!("depolarizing probability must lie in [0,1], got {p}"),
            });
        }
        let c = |re: f64, im: f64| Complex64::new(re, im);
        let s0 = (1.0 - 3.0 * p / 4.0).sqrt();
        let s = (p / 4.0).sqrt();
        let i = CMatrix::from_row_slice(2, 2, &[c(s0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(s0, 0.0)]);
        let x = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(s, 0.0), c(s, 0.0), c(0.0, 0.0)]);
        let y = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -s), c(0.0, s), c(0.0, 0.0)]);
        let z = CMatrix::from_row_slice(2, 2, &[c(s, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-s, 0.0)]);
        KrausChannel::new(vec![i, x, y, z])
    }

    /// Qubit dephasing channel {√(1-p)·I, √p·Z}: destroys X/Y coherences and
    /// fixes the computational basis.
    pub fn dephasing_qubit(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter {
                name: "p",
                message: format!("dephasing probability must lie in [0,1], got {p}"),
            });
        }
        let c = |re: f64| Complex64::new(re, 0.0);
        let a = (1.0 - p).sqrt();
        let b = p.sqrt();
        let i = CMatrix::from_row_slice(2, 2, &[c(a), c(0.0), c(0.0), c(a)]);
        let z = CMatrix::from_row_slice(2, 2, &[c(b), c(0.0), c(0.0), c(-b)]);
        KrausChannel::new(vec![i, z])
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn kraus_ops(&self) -> &[CMatrix] {
        &self.kraus
    }

    /// Σ K ρ K^†.
    pub fn apply(&self, rho: &DensityMatrix) -> Result<DensityMatrix> {
        let out = self.apply_raw(rho.matrix())?;
        Ok(DensityMatrix::trusting(HermitianOperator::from_symmetrized(
            out,
        )))
    }

    /// Linear extension of the channel to arbitrary matrices.
    pub fn apply_raw(&self, m: &CMatrix) -> Result<CMatrix> {
        if m.nrows() != self.dim_in || m.ncols() != self.dim_in {
            return Err(Error::DimensionMismatch {
                expected: self.dim_in,
                got: m.nrows(),
            });
        }
        let mut out = CMatrix::zeros(self.dim_out, self.dim_out);
        for k in &self.kraus {
            out += k * m * k.adjoint();
        }
        Ok(out)
    }

    /// True when the two channels act identically on a spanning matrix basis.
    pub fn same_map(&self, other: &Self) -> bool {
        if self.dim_in != other.dim_in || self.dim_out != other.dim_out {
            return false;
        }
        let d = self.dim_in;
        for r in 0..d {
            for c in 0..d {
                let mut e = CMatrix::zeros(d, d);
                e[(r, c)] = Complex64::new(1.0, 0.0);
                let a = self.apply_raw(&e).unwrap();
                let b = other.apply_raw(&e).unwrap();
                if matcore::max_abs(&(a - b)) > 1e-10 {
                    return false;
                }
            }
        }
        true
    }
}

/// Convex combination of product channels: weights γ_i > 0 summing to 1 and
/// branches Φ_i with common input/output dimensions. The n-use channel is
/// Φ⁽ⁿ⁾(ρ) = Σ_i γ_i Φ_i⊗ⁿ(ρ).
#[derive(Debug, Clone)]
pub struct BranchMixture {
    gammas: Vec<f64>,
    branches: Vec<KrausChannel>,
}

impl BranchMixture {
    pub fn new(gammas: Vec<f64>, branches: Vec<KrausChannel>) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::Empty { what: "branch list" });
        }
        if gammas.len() != branches.len() {
            return Err(Error::InvalidProbabilities {
                reason: format!(
                    "{} gammas for {} branches",
                    gammas.len(),
                    branches.len()
                ),
            });
        }
        if gammas.iter().any(|&g| !g.is_finite() || g <= 0.0) {
            return Err(Error::InvalidProbabilities {
                reason: "all branch weights must be strictly positive".into(),
            });
        }
        let sum: f64 = gammas.iter().sum();
        if (sum - 1.0).abs() > tol::PROB_SUM {
            return Err(Error::InvalidProbabilities {
                reason: format!("branch weights sum to {sum}, expected 1"),
            });
        }
        let (din, dout) = (branches[0].dim_in(), branches[0].dim_out());
        for b in &branches {
            if b.dim_in() != din || b.dim_out() != dout {
                return Err(Error::DimensionMismatch {
                    expected: din,
                    got: b.dim_in(),
                });
            }
        }
        Ok(BranchMixture { gammas, branches })
    }

    pub fn single(channel: KrausChannel) -> Self {
        BranchMixture {
            gammas: vec![1.0],
            branches: vec![channel],
        }
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    pub fn branches(&self) -> &[KrausChannel] {
        &self.branches
    }

    pub fn branch(&self, i: usize) -> &KrausChannel {
        &self.branches[i]
    }

    pub fn dim_in(&self) -> usize {
        self.branches[0].dim_in()
    }

    pub fn dim_out(&self) -> usize {
        self.branches[0].dim_out()
    }
}

/// Probabilities p_j with matching input states ρ_j.
#[derive(Debug, Clone)]
pub struct Ensemble {
    probs: Vec<f64>,
    states: Vec<DensityMatrix>,
}

impl Ensemble {
    pub fn new(probs: Vec<f64>, states: Vec<DensityMatrix>) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::Empty { what: "ensemble" });
        }
        if probs.len() != states.len() {
            return Err(Error::InvalidProbabilities {
                reason: format!("{} probabilities for {} states", probs.len(), states.len()),
            });
        }
        if probs.iter().any(|&p| p < 0.0 || !p.is_finite()) {
            return Err(Error::InvalidProbabilities {
                reason: "ensemble probabilities must be non-negative".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tol::PROB_SUM {
            return Err(Error::InvalidProbabilities {
                reason: format!("ensemble probabilities sum to {sum}, expected 1"),
            });
        }
        let dim = states[0].dim();
        for s in &states {
            if s.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: s.dim(),
                });
            }
        }
        Ok(Ensemble { probs, states })
    }

    pub fn uniform(states: Vec<DensityMatrix>) -> Result<Self> {
        let n = states.len();
        if n == 0 {
            return Err(Error::Empty { what: "ensemble" });
        }
        Ensemble::new(vec![1.0 / n as f64; n], states)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn states(&self) -> &[DensityMatrix] {
        &self.states
    }

    pub fn state(&self, j: usize) -> &DensityMatrix {
        &self.states[j]
    }

    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    /// Σ p_j ρ_j.
    pub fn average_state(&self) -> DensityMatrix {
        let dim = self.dim();
        let mut acc = CMatrix::zeros(dim, dim);
        for (p, s) in self.probs.iter().zip(&self.states) {
            acc += s.matrix().scale(*p);
        }
        DensityMatrix::trusting(HermitianOperator::from_symmetrized(acc))
    }

    /// Pushes every state through the channel, keeping probabilities.
    pub fn through_channel(&self, channel: &KrausChannel) -> Result<Ensemble> {
        let states = self
            .states
            .iter()
            .map(|s| channel.apply(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Ensemble {
            probs: self.probs.clone(),
            states,
        })
    }
}

/// Tensor product of states kept in factored form.
#[derive(Debug, Clone)]
pub struct ProductState {
    factors: Vec<DensityMatrix>,
}

impl ProductState {
    pub fn new(factors: Vec<DensityMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::Empty {
                what: "product-state factor list",
            });
        }
        let dim = factors[0].dim();
        for f in &factors {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: f.dim(),
                });
            }
        }
        Ok(ProductState { factors })
    }

    pub fn power(factor: DensityMatrix, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty {
                what: "product-state factor list",
            });
        }
        Ok(ProductState {
            factors: vec![factor; n],
        })
    }

    pub fn factors(&self) -> &[DensityMatrix] {
        &self.factors
    }

    pub fn copies(&self) -> usize {
        self.factors.len()
    }

    pub fn factor_dim(&self) -> usize {
        self.factors[0].dim()
    }

    pub fn total_dim(&self) -> u128 {
        let mut acc: u128 = 1;
        for f in &self.factors {
            acc = acc.saturating_mul(f.dim() as u128);
        }
        acc
    }

    /// Materializes the full tensor product, cap-checked.
    pub fn materialize(&self) -> Result<DensityMatrix> {
        matcore::check_dim(self.total_dim())?;
        let mut acc = self.factors[0].op().clone();
        for f in &self.factors[1..] {
            acc = acc.tensor(f.op())?;
        }
        Ok(DensityMatrix::trusting(acc))
    }

    /// Applies one channel to each factor.
    pub fn map_factors(&self, channel: &KrausChannel) -> Result<ProductState> {
        let factors = self
            .factors
            .iter()
            .map(|f| channel.apply(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(ProductState { factors })
    }
}

/// Lazy image of a product state under a branch mixture: branch i's output is
/// the factorwise image under Φ_i, weighted by γ_i. Materialized on demand.
#[derive(Debug, Clone)]
pub struct MixtureImage {
    pub gammas: Vec<f64>,
    pub branch_outputs: Vec<ProductState>,
}

impl MixtureImage {
    /// Σ γ_i ⊗_r Φ_i(ρ_r), cap-checked.
    pub fn materialize(&self) -> Result<DensityMatrix> {
        let mut acc: Option<CMatrix> = None;
        for (g, out) in self.gammas.iter().zip(&self.branch_outputs) {
            let m = out.materialize()?;
            let scaled = m.matrix().scale(*g);
            acc = Some(match acc {
                None => scaled,
                Some(a) => a + scaled,
            });
        }
        Ok(DensityMatrix::trusting(HermitianOperator::from_symmetrized(
            acc.expect("mixture has at least one branch"),
        )))
    }
}

/// Factorwise image of a product state under every branch of the mixture.
pub fn apply_mixture(mix: &BranchMixture, input: &ProductState) -> Result<MixtureImage> {
    if input.factor_dim() != mix.dim_in() {
        return Err(Error::DimensionMismatch {
            expected: mix.dim_in(),
            got: input.factor_dim(),
        });
    }
    let branch_outputs = mix
        .branches()
        .iter()
        .map(|b| input.map_factors(b))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureImage {
        gammas: mix.gammas().to_vec(),
        branch_outputs,
    })
}

/// Von Neumann entropy S(ρ) = -Tr ρ log₂ ρ in bits, with eigenvalues at or
/// below the entropy floor treated as exactly zero.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> Result<f64> {
    let spec = eig_hermitian(rho.op())?;
    Ok(entropy_of_spectrum(spec.eigenvalues()))
}

pub(crate) fn entropy_of_spectrum(eigenvalues: &[f64]) -> f64 {
    let mut s = 0.0;
    for &v in eigenvalues {
        if v > tol::ENTROPY_FLOOR {
            s -= v * v.log2();
        }
    }
    s.max(0.0)
}

/// Relative entropy S(ω‖ρ) in bits, with the support condition made explicit:
/// eigendirections of ρ below [`tol::SUPPORT_RHO`] may carry at most
/// [`tol::SUPPORT_OMEGA`] of ω's weight, otherwise the value is reported as
/// +infinity with the violation flag set.
#[derive(Debug, Clone, Copy)]
pub struct RelativeEntropy {
    pub bits: f64,
    pub support_violated: bool,
}

pub fn relative_entropy(omega: &DensityMatrix, rho: &DensityMatrix) -> Result<RelativeEntropy> {
    if omega.dim() != rho.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho.dim(),
            got: omega.dim(),
        });
    }
    let rho_spec = eig_hermitian(rho.op())?;
    let mut cross = 0.0; // Tr ω log₂ ρ
    for (k, &mu) in rho_spec.eigenvalues().iter().enumerate() {
        let col = rho_spec.eigenvectors().column(k);
        let weight = (col.adjoint() * omega.matrix() * col)[(0, 0)].re.max(0.0);
        if mu < tol::SUPPORT_RHO {
            if weight > tol::SUPPORT_OMEGA {
                return Ok(RelativeEntropy {
                    bits: f64::INFINITY,
                    support_violated: true,
                });
            }
            // Negligible weight on the null support contributes nothing.
        } else {
            cross += weight * mu.log2();
        }
    }
    let s_omega = von_neumann_entropy(omega)?;
    let mut bits = -s_omega - cross;
    if bits < 0.0 && bits > -1e-9 {
        bits = 0.0;
    }
    Ok(RelativeEntropy {
        bits,
        support_violated: false,
    })
}

/// Holevo quantity χ({p_j, ρ_j}) = S(Σ p_j ρ_j) - Σ p_j S(ρ_j) in bits.
pub fn holevo_chi(ensemble: &Ensemble) -> Result<f64> {
    let avg = ensemble.average_state();
    let mut chi = von_neumann_entropy(&avg)?;
    for (p, s) in ensemble.probs().iter().zip(ensemble.states()) {
        if *p > 0.0 {
            chi -= p * von_neumann_entropy(s)?;
        }
    }
    Ok(chi.max(0.0))
}

/// χ of the ensemble pushed through the channel.
pub fn chi_through(channel: &KrausChannel, ensemble: &Ensemble) -> Result<f64> {
    holevo_chi(&ensemble.through_channel(channel)?)
}

// ---------------------------------------------------------------------------
// JSON wire schema for channels and mixtures.
// ---------------------------------------------------------------------------

/// Channel spec wire format: row-major Kraus matrices with [re, im] entries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub dim_in: usize,
    pub dim_out: usize,
    pub kraus: Vec<Vec<[f64; 2]>>,
}

/// Mixture spec wire format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub gammas: Vec<f64>,
    pub branches: Vec<ChannelSpec>,
}

pub(crate) fn matrix_to_wire(m: &CMatrix) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            let z = m[(r, c)];
            out.push([z.re, z.im]);
        }
    }
    out
}

pub(crate) fn matrix_from_wire(rows: usize, cols: usize, data: &[[f64; 2]]) -> Result<CMatrix> {
    if data.len() != rows * cols {
        return Err(Error::InvalidParameter {
            name: "kraus",
            message: format!(
                "matrix payload has {} entries, expected {}x{}",
                data.len(),
                rows,
                cols
            ),
        });
    }
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let [re, im] = data[r * cols + c];
            m[(r, c)] = Complex64::new(re, im);
        }
    }
    Ok(m)
}

impl ChannelSpec {
    pub fn to_channel(&self) -> Result<KrausChannel> {
        let kraus = self
            .kraus
            .iter()
            .map(|k| matrix_from_wire(self.dim_out, self.dim_in, k))
            .collect::<Result<Vec<_>>>()?;
        KrausChannel::new(kraus)
    }

    pub fn from_channel(ch: &KrausChannel) -> Self {
        ChannelSpec {
            dim_in: ch.dim_in(),
            dim_out: ch.dim_out(),
            kraus: ch.kraus_ops().iter().map(matrix_to_wire).collect(),
        }
    }
}

impl MixtureSpec {
    pub fn to_mixture(&self) -> Result<BranchMixture> {
        let branches = self
            .branches
            .iter()
            .map(|b| b.to_channel())
            .collect::<Result<Vec<_>>>()?;
        BranchMixture::new(self.gammas.clone(), branches)
    }

    pub fn from_mixture(mix: &BranchMixture) -> Self {
        MixtureSpec {
            gammas: mix.gammas().to_vec(),
            branches: mix.branches().iter().map(ChannelSpec::from_channel).collect(),
        }
    }
}
