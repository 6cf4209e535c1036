//! Helstrom two-hypothesis measurements, pairwise difference operators,
//! composite branch-identification projectors and the discrimination preamble.
//!
//! A pairwise discriminator splits the spectrum of the weighted difference
//! operator A = γ_i σ_i⊗m - γ_j σ_j⊗m into its non-negative and negative
//! eigenspaces. Two evaluation paths exist behind the same surface: a dense
//! path that materializes A (cap-checked), and a classical path for commuting
//! state pairs that reduces every trace to a type-class sum over the joint
//! eigenbasis, which is how m far beyond the materialization cap stays exact.
//!
//! The composite projectors Π̃_i over K^(mL) are never materialized; every
//! trace against them factorizes over the pairs.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channels::{BranchMixture, DensityMatrix, KrausChannel};
use crate::comb::{for_each_composition, LnFactorials};
use crate::matcore::{
    self, basis_ket, eig_hermitian, gaussian, haar_ket, simultaneous_diag, trace_product,
    CVector, HermitianOperator, JointEigen,
};
use crate::{tol, Error, Result};

/// Helstrom measurement for one ordered branch pair (i < j).
#[derive(Debug, Clone)]
pub struct PairwiseDiscriminator {
    pub i: usize,
    pub j: usize,
    /// Probe state ω_{i,j} fed to both branches; absent when the
    /// discriminator was built directly from output states.
    pub probe: Option<DensityMatrix>,
    pub m: usize,
    pub gamma_i: f64,
    pub gamma_j: f64,
    /// Single-copy output of the first branch on the probe.
    pub sigma_i: DensityMatrix,
    pub sigma_j: DensityMatrix,
    /// F(σ_i, σ_j) on a single copy.
    pub pairwise_fidelity: f64,
    /// Tr|A| = ‖γ_i σ_i⊗m - γ_j σ_j⊗m‖₁.
    pub trace_abs_a: f64,
    /// Tr[Π⁺ σ_i⊗m], cached at build time.
    pub tr_plus_sigma_i: f64,
    /// Tr[Π⁻ σ_j⊗m], cached at build time.
    pub tr_minus_sigma_j: f64,
    kind: DiscriminatorKind,
}

/// Zero tie-break for the m-copy difference operator. Product eigenvalues
/// shrink like 2^(-mS), so the near-zero band scales with the per-sequence
/// magnitudes γ_i·a + γ_j·b rather than sitting at an absolute threshold;
/// exact zeros (both products vanish, or σ_i = σ_j) still land in Π⁺.
fn classify_plus(eig: f64, gamma_i: f64, a_seq: f64, gamma_j: f64, b_seq: f64) -> bool {
    let scale = gamma_i * a_seq + gamma_j * b_seq;
    eig >= -tol::ZERO_EIG * scale
}

#[derive(Debug, Clone)]
enum DiscriminatorKind {
    Dense {
        pi_plus: HermitianOperator,
        pi_minus: HermitianOperator,
    },
    /// σ_i and σ_j share the eigenbasis `joint.basis`; A is diagonal in the
    /// m-fold product basis and every product eigenvalue depends only on the
    /// type class of its index sequence.
    Classical { joint: JointEigen },
}

/// Verification report for the Π± lemma: with the measured
/// δ = |Tr|A| - (γ_i + γ_j)|, both branch traces sit within δ/(2γ) of 1.
#[derive(Debug, Clone, Copy)]
pub struct LpiReport {
    pub delta: f64,
    pub bound_i: f64,
    pub bound_j: f64,
    pub tr_plus_i: f64,
    pub tr_minus_j: f64,
    pub holds: bool,
}

/// Probe search knobs; all randomness derives from `seed`.
#[derive(Debug, Clone)]
pub struct ProbeSearchConfig {
    pub seed: u64,
    pub starts: usize,
    pub iters: usize,
}

impl Default for ProbeSearchConfig {
    fn default() -> Self {
        ProbeSearchConfig {
            seed: 0,
            starts: 12,
            iters: 60,
        }
    }
}

/// Builds the Helstrom discriminator for γ_i σ_i⊗m vs γ_j σ_j⊗m. Commuting
/// state pairs take the classical path and support any m; otherwise the
/// difference operator is materialized under the dimension cap.
pub fn helstrom_pair(
    gamma_i: f64,
    sigma_i: &DensityMatrix,
    gamma_j: f64,
    sigma_j: &DensityMatrix,
    m: usize,
) -> Result<PairwiseDiscriminator> {
    helstrom_pair_mode(gamma_i, sigma_i, gamma_j, sigma_j, m, false)
}

pub(crate) fn helstrom_pair_mode(
    gamma_i: f64,
    sigma_i: &DensityMatrix,
    gamma_j: f64,
    sigma_j: &DensityMatrix,
    m: usize,
    force_dense: bool,
) -> Result<PairwiseDiscriminator> {
    if m == 0 {
        return Err(Error::InvalidParameter {
            name: "m",
            message: "copy count must be at least 1".into(),
        });
    }
    if !gamma_i.is_finite() || !gamma_j.is_finite() || gamma_i <= 0.0 || gamma_j <= 0.0 {
        return Err(Error::InvalidProbabilities {
            reason: "pair weights must be strictly positive".into(),
        });
    }
    if sigma_i.dim() != sigma_j.dim() {
        return Err(Error::DimensionMismatch {
            expected: sigma_i.dim(),
            got: sigma_j.dim(),
        });
    }
    let fidelity = sigma_i.fidelity(sigma_j)?;
    let joint = if force_dense {
        None
    } else {
        simultaneous_diag(sigma_i.op(), sigma_j.op())?
    };
    let kind = match joint {
        Some(joint) => DiscriminatorKind::Classical { joint },
        None => {
            let t_i = sigma_i.op().tensor_pow(m)?;
            let t_j = sigma_j.op().tensor_pow(m)?;
            let a = t_i.scale(gamma_i).sub(&t_j.scale(gamma_j))?;
            let spec = eig_hermitian(&a)?;
            let pi_plus = spec.projector_where(|v, _| v >= -tol::ZERO_EIG);
            let pi_minus = HermitianOperator::identity(a.dim()).sub(&pi_plus)?;
            DiscriminatorKind::Dense { pi_plus, pi_minus }
        }
    };
    let mut disc = PairwiseDiscriminator {
        i: 0,
        j: 1,
        probe: None,
        m,
        gamma_i,
        gamma_j,
        sigma_i: sigma_i.clone(),
        sigma_j: sigma_j.clone(),
        pairwise_fidelity: fidelity,
        trace_abs_a: 0.0,
        tr_plus_sigma_i: 0.0,
        tr_minus_sigma_j: 0.0,
        kind,
    };
    disc.trace_abs_a = disc.compute_trace_abs()?;
    disc.tr_plus_sigma_i = disc.tr_plus(sigma_i)?;
    disc.tr_minus_sigma_j = disc.tr_minus(sigma_j)?;
    Ok(disc)
}

impl PairwiseDiscriminator {
    fn compute_trace_abs(&self) -> Result<f64> {
        match &self.kind {
            DiscriminatorKind::Dense { .. } => {
                let t_i = self.sigma_i.op().tensor_pow(self.m)?;
                let t_j = self.sigma_j.op().tensor_pow(self.m)?;
                let a = t_i.scale(self.gamma_i).sub(&t_j.scale(self.gamma_j))?;
                matcore::trace_norm(&a)
            }
            DiscriminatorKind::Classical { joint } => {
                let mut acc = 0.0;
                self.for_each_class(joint, |_, ln_mult, a_seq, b_seq| {
                    // Class masses γ·exp(ln_mult)·prod stay in [0,1] each, so
                    // the magnitudes never overflow no matter how large m is.
                    let a_mass = class_mass(ln_mult, a_seq);
                    let b_mass = class_mass(ln_mult, b_seq);
                    acc += (self.gamma_i * a_mass - self.gamma_j * b_mass).abs();
                });
                Ok(acc)
            }
        }
    }

    /// Tr[Π⁺ ς⊗m] for an arbitrary single-copy state ς.
    pub fn tr_plus(&self, state: &DensityMatrix) -> Result<f64> {
        self.trace_against(state, true)
    }

    /// Tr[Π⁻ ς⊗m].
    pub fn tr_minus(&self, state: &DensityMatrix) -> Result<f64> {
        self.trace_against(state, false)
    }

    fn trace_against(&self, state: &DensityMatrix, plus: bool) -> Result<f64> {
        if state.dim() != self.sigma_i.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.sigma_i.dim(),
                got: state.dim(),
            });
        }
        match &self.kind {
            DiscriminatorKind::Dense { pi_plus, pi_minus } => {
                let t = state.op().tensor_pow(self.m)?;
                let proj = if plus { pi_plus } else { pi_minus };
                Ok(trace_product(proj, &t))
            }
            DiscriminatorKind::Classical { joint } => {
                // Π± is diagonal in the product eigenbasis, so only the
                // diagonal of ς in that basis enters the trace.
                let d = state.dim();
                let mut q = Vec::with_capacity(d);
                for k in 0..d {
                    let col = joint.basis.column(k);
                    q.push((col.adjoint() * state.matrix() * col)[(0, 0)].re.max(0.0));
                }
                let ln_q: Vec<f64> = q.iter().map(|&x| x.ln()).collect();
                let mut acc = 0.0;
                self.for_each_class(joint, |counts, ln_mult, a_seq, b_seq| {
                    let eig = self.gamma_i * a_seq - self.gamma_j * b_seq;
                    let in_plus = classify_plus(eig, self.gamma_i, a_seq, self.gamma_j, b_seq);
                    if in_plus != plus {
                        return;
                    }
                    let mut ln_term = ln_mult;
                    for (k, &c) in counts.iter().enumerate() {
                        if c > 0 {
                            ln_term += c as f64 * ln_q[k];
                        }
                    }
                    acc += ln_term.exp();
                });
                Ok(acc)
            }
        }
    }

    /// Visits every type class with its log-multinomial and the per-sequence
    /// eigenvalue products of σ_i and σ_j.
    fn for_each_class(&self, joint: &JointEigen, mut f: impl FnMut(&[usize], f64, f64, f64)) {
        let d = joint.diag_a.len();
        let lf = LnFactorials::up_to(self.m);
        let clamp = |v: f64| v.max(0.0);
        let ln_a: Vec<f64> = joint.diag_a.iter().map(|&v| clamp(v).ln()).collect();
        let ln_b: Vec<f64> = joint.diag_b.iter().map(|&v| clamp(v).ln()).collect();
        for_each_composition(self.m, d, |counts| {
            let mut la = 0.0;
            let mut lb = 0.0;
            for (k, &c) in counts.iter().enumerate() {
                if c > 0 {
                    la += c as f64 * ln_a[k];
                    lb += c as f64 * ln_b[k];
                }
            }
            let ln_mult = lf.ln_multinomial(self.m, counts);
            f(counts, ln_mult, la.exp(), lb.exp());
        });
    }

    /// Success probability of the optimal two-hypothesis measurement with
    /// priors γ_i, γ_j (normalized over the pair):
    /// (γ_i Tr[Π⁺σ_i⊗m] + γ_j Tr[Π⁻σ_j⊗m]) / (γ_i + γ_j).
    pub fn success_probability(&self) -> f64 {
        (self.gamma_i * self.tr_plus_sigma_i + self.gamma_j * self.tr_minus_sigma_j)
            / (self.gamma_i + self.gamma_j)
    }

    /// Materialized Π⁺, cap-checked in the classical representation.
    pub fn pi_plus(&self) -> Result<HermitianOperator> {
        self.materialize_projector(true)
    }

    /// Materialized Π⁻.
    pub fn pi_minus(&self) -> Result<HermitianOperator> {
        self.materialize_projector(false)
    }

    fn materialize_projector(&self, plus: bool) -> Result<HermitianOperator> {
        match &self.kind {
            DiscriminatorKind::Dense { pi_plus, pi_minus } => {
                Ok(if plus { pi_plus.clone() } else { pi_minus.clone() })
            }
            DiscriminatorKind::Classical { joint } => {
                let d = joint.diag_a.len();
                let total = (d as u128)
                    .checked_pow(self.m as u32)
                    .ok_or(Error::SizeLimit {
                        requested: u128::MAX,
                        cap: matcore::dim_cap(),
                    })?;
                let dim = matcore::check_dim(total)?;
                // Product basis = m-fold Kronecker power of the joint basis.
                let mut basis = joint.basis.clone();
                for _ in 1..self.m {
                    basis = matcore::tensor(&basis, &joint.basis)?;
                }
                let mut indicator = vec![0.0f64; dim];
                for (idx, slot) in indicator.iter_mut().enumerate() {
                    let mut rem = idx;
                    let mut a_seq = 1.0f64;
                    let mut b_seq = 1.0f64;
                    for _ in 0..self.m {
                        let k = rem % d;
                        rem /= d;
                        a_seq *= joint.diag_a[k].max(0.0);
                        b_seq *= joint.diag_b[k].max(0.0);
                    }
                    let eig = self.gamma_i * a_seq - self.gamma_j * b_seq;
                    let in_plus = classify_plus(eig, self.gamma_i, a_seq, self.gamma_j, b_seq);
                    if in_plus == plus {
                        *slot = 1.0;
                    }
                }
                let diag = HermitianOperator::from_real_diagonal(&indicator);
                let mat = &basis * diag.matrix() * basis.adjoint();
                Ok(HermitianOperator::from_symmetrized(mat))
            }
        }
    }

    /// True when the projector pair is stored densely.
    pub fn is_dense(&self) -> bool {
        matches!(self.kind, DiscriminatorKind::Dense { .. })
    }
}

fn class_mass(ln_mult: f64, seq: f64) -> f64 {
    if seq <= 0.0 {
        0.0
    } else {
        (ln_mult + seq.ln()).exp()
    }
}

/// Checks the Π± lemma numerically with the measured δ. This is a theorem
/// check: `holds` must come back true for every valid discriminator.
pub fn verify_lpi(disc: &PairwiseDiscriminator) -> LpiReport {
    let delta = (disc.trace_abs_a - (disc.gamma_i + disc.gamma_j)).abs();
    let bound_i = delta / (2.0 * disc.gamma_i);
    let bound_j = delta / (2.0 * disc.gamma_j);
    let tr_plus_i = disc.tr_plus_sigma_i;
    let tr_minus_j = disc.tr_minus_sigma_j;
    let holds =
        (tr_plus_i - 1.0).abs() <= bound_i + 1e-9 && (tr_minus_j - 1.0).abs() <= bound_j + 1e-9;
    LpiReport {
        delta,
        bound_i,
        bound_j,
        tr_plus_i,
        tr_minus_j,
        holds,
    }
}

/// Searches for a pure probe state minimizing the output fidelity
/// F(Φ_i(ω), Φ_j(ω)). Errors with [`Error::IdenticalBranches`] when no probe
/// separates the branches below fidelity 1 - [`tol::DISTINCT_BRANCH`].
pub fn choose_probe(
    phi_i: &KrausChannel,
    phi_j: &KrausChannel,
    cfg: &ProbeSearchConfig,
) -> Result<DensityMatrix> {
    if phi_i.same_map(phi_j) {
        return Err(Error::IdenticalBranches { fidelity: 1.0 });
    }
    let d = phi_i.dim_in();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let objective = |ket: &CVector| -> Result<f64> {
        let state = DensityMatrix::new(HermitianOperator::outer(ket))?;
        phi_i.apply(&state)?.fidelity(&phi_j.apply(&state)?)
    };

    let mut starts: Vec<CVector> = (0..d).map(|k| basis_ket(d, k)).collect();
    for a in 0..d {
        for b in (a + 1)..d {
            let mut v = CVector::zeros(d);
            v[a] = num_complex::Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            v[b] = num_complex::Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            starts.push(v.clone());
            v[b] = num_complex::Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
            starts.push(v);
        }
    }
    while starts.len() < cfg.starts.max(d) {
        starts.push(haar_ket(&mut rng, d));
    }

    let mut best: Option<(f64, CVector)> = None;
    for start in starts {
        let mut ket = start;
        let mut f = objective(&ket)?;
        let mut scale = 0.5f64;
        let mut fails = 0u32;
        for _ in 0..cfg.iters {
            let noise = CVector::from_fn(d, |_, _| {
                num_complex::Complex64::new(gaussian(&mut rng), gaussian(&mut rng))
            });
            let cand = &ket + noise.scale(scale);
            let norm = cand.norm();
            if norm < 1e-10 {
                continue;
            }
            let cand = cand.unscale(norm);
            let fc = objective(&cand)?;
            if fc < f {
                ket = cand;
                f = fc;
                fails = 0;
            } else {
                fails += 1;
                if fails >= 8 {
                    scale *= 0.5;
                    fails = 0;
                }
            }
        }
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, ket));
        }
    }
    let (f, ket) = best.expect("at least one start");
    if f >= 1.0 - tol::DISTINCT_BRANCH {
        return Err(Error::IdenticalBranches { fidelity: f });
    }
    DensityMatrix::new(HermitianOperator::outer(&ket))
}

/// Ordered pairwise discriminators making up the branch-identification
/// preamble ω^(mL); the composite projectors Π̃_i stay factored per pair.
#[derive(Debug, Clone)]
pub struct Preamble {
    pairs: Vec<PairwiseDiscriminator>,
    pub m: usize,
    pub branch_count: usize,
    /// Max single-copy pairwise fidelity over all pairs; strictly below 1.
    pub f_max: f64,
}

impl Preamble {
    /// Assembles a preamble from prebuilt pair discriminators (deserialized
    /// probes, for instance). Pairs must come in lexicographic (i, j) order
    /// with i < j, covering every pair of `branch_count` branches at a common
    /// copy count.
    pub fn from_parts(
        pairs: Vec<PairwiseDiscriminator>,
        m: usize,
        branch_count: usize,
    ) -> Result<Self> {
        let expected = branch_count * branch_count.saturating_sub(1) / 2;
        if pairs.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: pairs.len(),
            });
        }
        let mut iter = pairs.iter();
        for i in 0..branch_count {
            for j in (i + 1)..branch_count {
                let pair = iter.next().expect("length checked");
                if pair.i != i || pair.j != j || pair.m != m {
                    return Err(Error::InvalidParameter {
                        name: "pairs",
                        message: format!(
                            "expected pair ({i},{j}) at m={m}, got ({},{}) at m={}",
                            pair.i, pair.j, pair.m
                        ),
                    });
                }
            }
        }
        let f_max = pairs
            .iter()
            .map(|p| p.pairwise_fidelity)
            .fold(0.0f64, f64::max);
        Ok(Preamble {
            pairs,
            m,
            branch_count,
            f_max,
        })
    }

    pub fn pairs(&self) -> &[PairwiseDiscriminator] {
        &self.pairs
    }

    /// L = M(M-1)/2 pairs.
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Total preamble copies mL.
    pub fn total_copies(&self) -> usize {
        self.m * self.pairs.len()
    }

    /// t[i][k] = Tr[Π̃_k Φ_i⊗mL(ω^(mL))], evaluated factorwise: only pairs
    /// containing k contribute a non-unit factor.
    pub fn trace_matrix(&self, mix: &BranchMixture) -> Result<Vec<Vec<f64>>> {
        let m_branches = mix.len();
        if m_branches != self.branch_count {
            return Err(Error::DimensionMismatch {
                expected: self.branch_count,
                got: m_branches,
            });
        }
        let mut t = vec![vec![1.0f64; m_branches]; m_branches];
        for pair in &self.pairs {
            let probe = pair.probe.as_ref().ok_or(Error::Empty {
                what: "preamble probe",
            })?;
            for (i, row) in t.iter_mut().enumerate() {
                let out = mix.branch(i).apply(probe)?;
                row[pair.i] *= pair.tr_plus(&out)?;
                row[pair.j] *= pair.tr_minus(&out)?;
            }
        }
        Ok(t)
    }

    /// Per-branch identification success Tr[Π̃_i Φ_i⊗mL(ω^(mL))].
    pub fn branch_success(&self, mix: &BranchMixture) -> Result<Vec<f64>> {
        let t = self.trace_matrix(mix)?;
        Ok((0..self.branch_count).map(|i| t[i][i]).collect())
    }

    /// Lemma lower bound (1 - f^m/γ_i)^(M-1) per branch, with the measured
    /// f_max. A negative base is reported as-is (vacuous bound) rather than
    /// raised to an even power.
    pub fn success_lower_bounds(&self, mix: &BranchMixture) -> Vec<f64> {
        let fm = self.f_max.powi(self.m as i32);
        mix.gammas()
            .iter()
            .map(|g| {
                let base = 1.0 - fm / g;
                if base <= 0.0 {
                    base
                } else {
                    base.powi(self.branch_count as i32 - 1)
                }
            })
            .collect()
    }

    /// Factorwise disjointness and completeness of each pair's projectors:
    /// Π⁺Π⁻ = 0 and Π⁺ + Π⁻ = I within 1e-9 (immediate in the classical
    /// representation, checked densely when materialized).
    pub fn verify_factorwise_disjointness(&self) -> Result<bool> {
        for pair in &self.pairs {
            if pair.is_dense() {
                let plus = pair.pi_plus()?;
                let minus = pair.pi_minus()?;
                let prod = plus.matrix() * minus.matrix();
                if matcore::max_abs(&prod) > 1e-9 {
                    return Ok(false);
                }
                let sum = plus.add(&minus)?;
                if sum
                    .sub(&HermitianOperator::identity(sum.dim()))?
                    .max_abs()
                    > 1e-9
                {
                    return Ok(false);
                }
            } else {
                // Classification partitions the type classes by construction;
                // verify the masses complement on both branch states.
                let total_i = pair.tr_plus(&pair.sigma_i)? + pair.tr_minus(&pair.sigma_i)?;
                let total_j = pair.tr_plus(&pair.sigma_j)? + pair.tr_minus(&pair.sigma_j)?;
                if (total_i - 1.0).abs() > 1e-9 || (total_j - 1.0).abs() > 1e-9 {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

/// Chooses probes once per pair, then builds the pair discriminators for any
/// requested m. The probes and the shared eigenbases are m-independent, so an
/// incremental m search only redoes the cheap classification step.
#[derive(Debug, Clone)]
pub struct PreambleBuilder {
    contexts: Vec<PairContext>,
    branch_count: usize,
}

#[derive(Debug, Clone)]
struct PairContext {
    i: usize,
    j: usize,
    gamma_i: f64,
    gamma_j: f64,
    probe: DensityMatrix,
    sigma_i: DensityMatrix,
    sigma_j: DensityMatrix,
}

impl PreambleBuilder {
    /// Runs the probe search for every branch pair (lexicographic order).
    pub fn new(mix: &BranchMixture, cfg: &ProbeSearchConfig) -> Result<Self> {
        let m_branches = mix.len();
        let mut contexts = Vec::new();
        let mut pair_index = 0u64;
        for i in 0..m_branches {
            for j in (i + 1)..m_branches {
                let pair_cfg = ProbeSearchConfig {
                    seed: cfg.seed.wrapping_add(pair_index),
                    ..cfg.clone()
                };
                pair_index += 1;
                let probe = choose_probe(mix.branch(i), mix.branch(j), &pair_cfg)?;
                let sigma_i = mix.branch(i).apply(&probe)?;
                let sigma_j = mix.branch(j).apply(&probe)?;
                contexts.push(PairContext {
                    i,
                    j,
                    gamma_i: mix.gammas()[i],
                    gamma_j: mix.gammas()[j],
                    probe,
                    sigma_i,
                    sigma_j,
                });
            }
        }
        Ok(PreambleBuilder {
            contexts,
            branch_count: m_branches,
        })
    }

    /// Builds the preamble at copy count m.
    pub fn at_m(&self, m: usize) -> Result<Preamble> {
        let mut pairs = Vec::with_capacity(self.contexts.len());
        let mut f_max = 0.0f64;
        for ctx in &self.contexts {
            let mut disc =
                helstrom_pair(ctx.gamma_i, &ctx.sigma_i, ctx.gamma_j, &ctx.sigma_j, m)?;
            disc.i = ctx.i;
            disc.j = ctx.j;
            disc.probe = Some(ctx.probe.clone());
            f_max = f_max.max(disc.pairwise_fidelity);
            pairs.push(disc);
        }
        Ok(Preamble {
            pairs,
            m,
            branch_count: self.branch_count,
            f_max,
        })
    }
}

/// Probe search plus discriminators for all L = M(M-1)/2 pairs at copy
/// count m. M = 1 yields the empty preamble.
pub fn build_preamble(
    mix: &BranchMixture,
    m: usize,
    cfg: &ProbeSearchConfig,
) -> Result<Preamble> {
    PreambleBuilder::new(mix, cfg)?.at_m(m)
}

/// Per-branch identification success probabilities, computed as products of
/// per-pair traces without materializing K^(mL).
pub fn branch_id_success(preamble: &Preamble, mix: &BranchMixture) -> Result<Vec<f64>> {
    preamble.branch_success(mix)
}

/// Smallest m ≤ m_max with Tr[Π̃_i Φ_i⊗mL(ω^(mL))] > 1 - δ for every branch,
/// by incremental search over m with probes fixed once.
pub fn select_m(
    builder: &PreambleBuilder,
    mix: &BranchMixture,
    delta: f64,
    m_max: usize,
) -> Result<(usize, Preamble)> {
    if !delta.is_finite() || delta <= 0.0 || delta >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "delta",
            message: format!("delta must lie in (0,1), got {delta}"),
        });
    }
    let mut best = 0.0f64;
    for m in 1..=m_max {
        let preamble = builder.at_m(m)?;
        let success = preamble.branch_success(mix)?;
        let min = success.iter().copied().fold(f64::INFINITY, f64::min);
        if min > 1.0 - delta {
            return Ok((m, preamble));
        }
        best = best.max(min);
    }
    Err(Error::BoundNotReached {
        best,
        limit: m_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matcore::CMatrix;
    use approx::assert_abs_diff_eq;
    use num_complex::Complex64;

    fn plus_state() -> DensityMatrix {
        DensityMatrix::pure(&[Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)]).unwrap()
    }

    fn depol_pair() -> BranchMixture {
        BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.2).unwrap(),
                KrausChannel::depolarizing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn equal_states_give_trivial_split() {
        let s = DensityMatrix::from_real_diagonal(&[0.6, 0.4]).unwrap();
        let d = helstrom_pair(0.5, &s, 0.5, &s, 1).unwrap();
        // A = 0: the zero eigenspace counts as non-negative, so Π⁺ = I.
        assert_abs_diff_eq!(d.trace_abs_a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.tr_plus_sigma_i, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.tr_minus_sigma_j, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.success_probability(), 0.5, epsilon = 1e-12);
        let lpi = verify_lpi(&d);
        assert_abs_diff_eq!(lpi.delta, 1.0, epsilon = 1e-12);
        assert!(lpi.holds);
    }

    #[test]
    fn orthogonal_pure_states_discriminate_perfectly() {
        let d = helstrom_pair(
            0.5,
            &DensityMatrix::basis(2, 0),
            0.5,
            &DensityMatrix::basis(2, 1),
            1,
        )
        .unwrap();
        assert_abs_diff_eq!(d.success_probability(), 1.0, epsilon = 1e-12);
        let lpi = verify_lpi(&d);
        assert_abs_diff_eq!(lpi.delta, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lpi.tr_plus_i, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(lpi.tr_minus_j, 1.0, epsilon = 1e-12);
        assert!(lpi.holds);
    }

    #[test]
    fn zero_vs_plus_matches_closed_form() {
        // ½(1 + ½‖σ₀ - σ₊‖₁) = ½(1 + √2/2).
        let d = helstrom_pair(0.5, &DensityMatrix::basis(2, 0), 0.5, &plus_state(), 1).unwrap();
        assert_abs_diff_eq!(
            d.success_probability(),
            0.5 * (1.0 + std::f64::consts::SQRT_2 / 2.0),
            epsilon = 1e-10
        );
    }

    #[test]
    fn classical_and_dense_paths_agree() {
        let a = DensityMatrix::from_real_diagonal(&[0.9, 0.1]).unwrap();
        let b = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        for m in 1..=4 {
            let classical = helstrom_pair_mode(0.5, &a, 0.5, &b, m, false).unwrap();
            let dense = helstrom_pair_mode(0.5, &a, 0.5, &b, m, true).unwrap();
            assert!(!classical.is_dense());
            assert!(dense.is_dense());
            assert_abs_diff_eq!(classical.trace_abs_a, dense.trace_abs_a, epsilon = 1e-10);
            assert_abs_diff_eq!(
                classical.tr_plus_sigma_i,
                dense.tr_plus_sigma_i,
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                classical.tr_minus_sigma_j,
                dense.tr_minus_sigma_j,
                epsilon = 1e-10
            );
            // Cross traces on a third state agree too.
            let probe = DensityMatrix::from_real_diagonal(&[0.3, 0.7]).unwrap();
            assert_abs_diff_eq!(
                classical.tr_plus(&probe).unwrap(),
                dense.tr_plus(&probe).unwrap(),
                epsilon = 1e-10
            );
            // Materialized projectors agree.
            let pc = classical.pi_plus().unwrap();
            let pd = dense.pi_plus().unwrap();
            assert!(pc.sub(&pd).unwrap().max_abs() <= 1e-9);
        }
    }

    #[test]
    fn lpi_bound_via_fidelity_chain() {
        // diag(0.9,0.1) vs diag(0.75,0.25) at m=4: δ ≤ 2f^m with
        // f = √(0.9·0.75) + √(0.1·0.25).
        let a = DensityMatrix::from_real_diagonal(&[0.9, 0.1]).unwrap();
        let b = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        let d = helstrom_pair(0.5, &a, 0.5, &b, 4).unwrap();
        let f = (0.9f64 * 0.75).sqrt() + (0.1f64 * 0.25).sqrt();
        assert_abs_diff_eq!(d.pairwise_fidelity, f, epsilon = 1e-10);
        let lpi = verify_lpi(&d);
        assert!(lpi.delta <= 2.0 * f.powi(4) + 1e-9);
        assert!(lpi.holds);
    }

    #[test]
    fn trace_abs_respects_triangle_bounds() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let x: f64 = rng.gen_range(0.0..1.0);
            let y: f64 = rng.gen_range(0.0..1.0);
            let a = DensityMatrix::from_real_diagonal(&[x, 1.0 - x]).unwrap();
            let b = DensityMatrix::from_real_diagonal(&[y, 1.0 - y]).unwrap();
            let gi = rng.gen_range(0.1..0.9);
            let gj = 1.0 - gi;
            let m = rng.gen_range(1..=3);
            let d = helstrom_pair(gi, &a, gj, &b, m).unwrap();
            assert!(d.trace_abs_a >= (gi - gj).abs() - 1e-10);
            assert!(d.trace_abs_a <= gi + gj + 1e-10);
        }
    }

    #[test]
    fn probe_separates_identity_from_bit_flip() {
        let x = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let flip = KrausChannel::unitary(x).unwrap();
        let probe = choose_probe(&KrausChannel::identity(2), &flip, &ProbeSearchConfig::default())
            .unwrap();
        let out_i = KrausChannel::identity(2).apply(&probe).unwrap();
        let out_j = flip.apply(&probe).unwrap();
        assert!(out_i.fidelity(&out_j).unwrap() < 1e-6);
    }

    #[test]
    fn identical_branches_are_rejected() {
        let ch = KrausChannel::depolarizing_qubit(0.3).unwrap();
        let err = choose_probe(&ch, &ch.clone(), &ProbeSearchConfig::default());
        assert!(matches!(err, Err(Error::IdenticalBranches { .. })));

        let mix = BranchMixture::new(vec![0.5, 0.5], vec![ch.clone(), ch]).unwrap();
        let err = build_preamble(&mix, 1, &ProbeSearchConfig::default());
        assert!(matches!(err, Err(Error::IdenticalBranches { .. })));
    }

    #[test]
    fn depolarizing_probe_fidelity_matches_symmetry() {
        // Any pure probe gives F = √((1-p/2)(1-q/2)) + √((p/2)(q/2)).
        let probe = choose_probe(
            &KrausChannel::depolarizing_qubit(0.2).unwrap(),
            &KrausChannel::depolarizing_qubit(0.5).unwrap(),
            &ProbeSearchConfig::default(),
        )
        .unwrap();
        let f_expect = (0.9f64 * 0.75).sqrt() + (0.1f64 * 0.25).sqrt();
        let out_i = KrausChannel::depolarizing_qubit(0.2)
            .unwrap()
            .apply(&probe)
            .unwrap();
        let out_j = KrausChannel::depolarizing_qubit(0.5)
            .unwrap()
            .apply(&probe)
            .unwrap();
        assert_abs_diff_eq!(out_i.fidelity(&out_j).unwrap(), f_expect, epsilon = 1e-6);
    }

    #[test]
    fn single_branch_preamble_is_empty() {
        let mix = BranchMixture::single(KrausChannel::depolarizing_qubit(0.2).unwrap());
        let pre = build_preamble(&mix, 3, &ProbeSearchConfig::default()).unwrap();
        assert_eq!(pre.pair_count(), 0);
        assert_eq!(pre.total_copies(), 0);
        let success = branch_id_success(&pre, &mix).unwrap();
        assert_eq!(success, vec![1.0]);
    }

    #[test]
    fn two_branch_preamble_has_single_pair() {
        let mix = depol_pair();
        let pre = build_preamble(&mix, 2, &ProbeSearchConfig::default()).unwrap();
        assert_eq!(pre.pair_count(), 1);
        assert!(pre.f_max < 1.0);
        assert!(pre.verify_factorwise_disjointness().unwrap());
        let success = branch_id_success(&pre, &mix).unwrap();
        let bounds = pre.success_lower_bounds(&mix);
        for (s, b) in success.iter().zip(&bounds) {
            assert!(*s <= 1.0 + 1e-12);
            assert!(s >= b);
        }
    }

    #[test]
    fn orthogonal_output_branches_identify_immediately() {
        let x = CMatrix::from_row_slice(
            2,
            2,
            &[
                Complex64::new(0.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(1.0, 0.0),
                Complex64::new(0.0, 0.0),
            ],
        );
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![KrausChannel::identity(2), KrausChannel::unitary(x).unwrap()],
        )
        .unwrap();
        let builder = PreambleBuilder::new(&mix, &ProbeSearchConfig::default()).unwrap();
        let pre = builder.at_m(1).unwrap();
        let success = branch_id_success(&pre, &mix).unwrap();
        assert_abs_diff_eq!(success[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(success[1], 1.0, epsilon = 1e-9);
        let (m, _) = select_m(&builder, &mix, 0.1, 10).unwrap();
        assert_eq!(m, 1);
    }

    #[test]
    fn three_branch_preamble_is_disjoint_and_bounded() {
        let mix = BranchMixture::new(
            vec![0.3, 0.3, 0.4],
            vec![
                KrausChannel::depolarizing_qubit(0.1).unwrap(),
                KrausChannel::depolarizing_qubit(0.4).unwrap(),
                KrausChannel::depolarizing_qubit(0.7).unwrap(),
            ],
        )
        .unwrap();
        let pre = build_preamble(&mix, 3, &ProbeSearchConfig::default()).unwrap();
        assert_eq!(pre.pair_count(), 3);
        assert!(pre.verify_factorwise_disjointness().unwrap());
        let t = pre.trace_matrix(&mix).unwrap();
        // Sub-resolution: each row of preamble traces sums to at most 1.
        for row in &t {
            let sum: f64 = row.iter().sum();
            assert!(sum <= 1.0 + 1e-9, "row sum {sum}");
        }
        let success = branch_id_success(&pre, &mix).unwrap();
        let bounds = pre.success_lower_bounds(&mix);
        for (s, b) in success.iter().zip(&bounds) {
            assert!(s >= b);
        }
    }

    #[test]
    fn select_m_on_depolarizing_pair() {
        let mix = depol_pair();
        let builder = PreambleBuilder::new(&mix, &ProbeSearchConfig::default()).unwrap();
        let (m, pre) = select_m(&builder, &mix, 0.05, 400).unwrap();
        let success = branch_id_success(&pre, &mix).unwrap();
        assert!(success.iter().all(|&s| s > 0.95));
        // The analytic bound needs m = ceil(log(0.025)/log f) = 181; the
        // exact per-pair traces get there sooner.
        assert!(m < 181, "selected m = {m}");
        if m > 1 {
            let prev = builder.at_m(m - 1).unwrap();
            let prev_success = branch_id_success(&prev, &mix).unwrap();
            assert!(prev_success.iter().copied().fold(f64::INFINITY, f64::min) <= 0.95);
        }
    }

    #[test]
    fn select_m_reports_best_when_unreachable() {
        let mix = depol_pair();
        let builder = PreambleBuilder::new(&mix, &ProbeSearchConfig::default()).unwrap();
        let err = select_m(&builder, &mix, 0.05, 3);
        match err {
            Err(Error::BoundNotReached { best, limit }) => {
                assert_eq!(limit, 3);
                assert!(best < 0.95);
            }
            other => panic!("expected BoundNotReached, got {other:?}"),
        }
    }

    #[test]
    fn pair_success_monotone_and_branch_success_converges() {
        // The pair Helstrom success ½(1 + Tr|A|) is nondecreasing in m
        // (partial trace shrinks the trace norm). Per-branch identification
        // success is not monotone at small m: the positive type-class set
        // shifts with m. It does converge to 1.
        let mix = depol_pair();
        let builder = PreambleBuilder::new(&mix, &ProbeSearchConfig::default()).unwrap();
        let mut last_pair = 0.0f64;
        for m in 1..=40 {
            let pre = builder.at_m(m).unwrap();
            let pair = &pre.pairs()[0];
            assert!(
                pair.success_probability() >= last_pair - 1e-12,
                "pair success decreased at m={m}"
            );
            last_pair = pair.success_probability();
        }
        let s = branch_id_success(&builder.at_m(250).unwrap(), &mix).unwrap();
        assert!(s.iter().all(|&x| x > 0.99), "success at m=250: {s:?}");
    }
}
