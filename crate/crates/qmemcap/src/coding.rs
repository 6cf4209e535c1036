//! Explicit small-n code construction by greedy maximal packing, exact code
//! evaluation, and the Fano weak-converse check.
//!
//! The memoryless packer walks candidate sequences j̲ over the ensemble
//! alphabet in lexicographic order. For each candidate it forms
//! V = (P̄ - Q)^(1/2) P̄ P_j̲ P̄ (P̄ - Q)^(1/2), where P̄ is the average-state
//! typical projector, P_j̲ the candidate's conditional typical projector and
//! Q the sum of POVM elements accepted so far, and accepts the candidate when
//! the detection probability clears 1 - ε while the average-state leakage
//! stays under the 2^(-n·exponent) threshold. The memory packer runs the same
//! loop with per-branch projectors and γ-weighted acceptance sums that
//! include the preamble identification factors; preamble traces always enter
//! factorwise, so only the n-copy output space is materialized.

use crate::channels::{
    relative_entropy, BranchMixture, DensityMatrix, Ensemble, KrausChannel, ProductState,
};
use crate::discrimination::Preamble;
use crate::matcore::{
    self, eig_hermitian, trace_product, CMatrix, HermitianOperator, Spectrum,
};
use crate::typicality::in_window;
use crate::{tol, Error, Result};

/// Binary entropy h(p) = -p log₂ p - (1-p) log₂(1-p), endpoints 0.
pub fn binary_entropy(p: f64) -> Result<f64> {
    if !(-1e-12..=1.0 + 1e-12).contains(&p) {
        return Err(Error::InvalidParameter {
            name: "p",
            message: format!("binary entropy argument must lie in [0,1], got {p}"),
        });
    }
    let p = p.clamp(0.0, 1.0);
    if p == 0.0 || p == 1.0 {
        return Ok(0.0);
    }
    Ok(-p * p.log2() - (1.0 - p) * (1.0 - p).log2())
}

/// Parameters of one packing run. The proof-schedule parameters must satisfy
/// η > δ² + 2δ, η' > δ² + 3δ and η, η' < ε/3.
#[derive(Debug, Clone)]
pub struct PackingConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub eta: f64,
    pub eta_prime: f64,
    /// Input ensemble whose sequences are the codeword candidates.
    pub ensemble: Ensemble,
    /// Block length (codeword copies, preamble excluded).
    pub n: usize,
    /// Override for the condition-(iii) exponent; defaults to
    /// S(σ̄) - S̄ - ⅔ε (memoryless) or min_i χ_i - ¾ε (memory).
    pub threshold_exponent: Option<f64>,
    /// Override for the typicality window width; defaults to ε/3
    /// (memoryless) or ε/4 (memory).
    pub typical_width: Option<f64>,
}

impl PackingConfig {
    /// Defaults honoring the schedule relations with margin:
    /// δ = ε/16, η = ε/4, η' = (δ² + 3δ + ε/3)/2.
    pub fn new(epsilon: f64, ensemble: Ensemble, n: usize) -> Result<Self> {
        let delta = epsilon / 16.0;
        let cfg = PackingConfig {
            epsilon,
            delta,
            eta: epsilon / 4.0,
            eta_prime: (delta * delta + 3.0 * delta + epsilon / 3.0) / 2.0,
            ensemble,
            n,
            threshold_exponent: None,
            typical_width: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |name: &'static str, message: String| Error::InvalidParameter { name, message };
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 || self.epsilon >= 1.0 {
            return Err(fail("epsilon", format!("must lie in (0,1), got {}", self.epsilon)));
        }
        if self.n == 0 {
            return Err(fail("n", "block length must be at least 1".into()));
        }
        if !self.delta.is_finite() || self.delta <= 0.0 {
            return Err(fail("delta", format!("must be positive, got {}", self.delta)));
        }
        let d2 = self.delta * self.delta;
        if self.eta <= d2 + 2.0 * self.delta {
            return Err(fail(
                "eta",
                format!("must exceed delta^2 + 2 delta = {}", d2 + 2.0 * self.delta),
            ));
        }
        if self.eta_prime <= d2 + 3.0 * self.delta {
            return Err(fail(
                "eta_prime",
                format!("must exceed delta^2 + 3 delta = {}", d2 + 3.0 * self.delta),
            ));
        }
        if self.eta >= self.epsilon / 3.0 {
            return Err(fail("eta", format!("must be below epsilon/3 = {}", self.epsilon / 3.0)));
        }
        if self.eta_prime >= self.epsilon / 3.0 {
            return Err(fail(
                "eta_prime",
                format!("must be below epsilon/3 = {}", self.epsilon / 3.0),
            ));
        }
        Ok(())
    }
}

/// Decoder of a packed or hand-built code. Branched POVMs carry one
/// component per branch for every codeword; the acting element is
/// Σ_i Π̃_i ⊗ E_{k,i} with the preamble projectors never materialized.
#[derive(Debug, Clone)]
pub enum CodePovm {
    Plain(Vec<HermitianOperator>),
    Branched(Vec<Vec<HermitianOperator>>),
}

impl CodePovm {
    pub fn len(&self) -> usize {
        match self {
            CodePovm::Plain(e) => e.len(),
            CodePovm::Branched(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Block code: product-state codewords on the input space, an optional shared
/// discrimination preamble, and the decoding POVM on the output space.
#[derive(Debug, Clone)]
pub struct Code {
    pub codewords: Vec<ProductState>,
    pub preamble: Option<Preamble>,
    pub povm: CodePovm,
    pub n: usize,
    /// log₂(N) / (n + preamble copies).
    pub rate: f64,
}

impl Code {
    pub fn new(
        codewords: Vec<ProductState>,
        preamble: Option<Preamble>,
        povm: CodePovm,
        n: usize,
    ) -> Result<Self> {
        if codewords.len() != povm.len() {
            return Err(Error::DimensionMismatch {
                expected: codewords.len(),
                got: povm.len(),
            });
        }
        match (&povm, &preamble) {
            (CodePovm::Plain(_), Some(_)) => {
                return Err(Error::InvalidParameter {
                    name: "povm",
                    message: "plain POVM cannot carry a preamble".into(),
                })
            }
            (CodePovm::Branched(_), None) => {
                return Err(Error::InvalidParameter {
                    name: "povm",
                    message: "branched POVM requires a preamble".into(),
                })
            }
            _ => {}
        }
        for cw in &codewords {
            if cw.copies() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: cw.copies(),
                });
            }
        }
        let n_total = n + preamble.as_ref().map_or(0, |p| p.total_copies());
        let rate = if codewords.is_empty() {
            0.0
        } else {
            (codewords.len() as f64).log2() / n_total as f64
        };
        Ok(Code {
            codewords,
            preamble,
            povm,
            n,
            rate,
        })
    }

    pub fn size(&self) -> usize {
        self.codewords.len()
    }

    pub fn n_total(&self) -> usize {
        self.n + self.preamble.as_ref().map_or(0, |p| p.total_copies())
    }

    /// POVM sanity: every element PSD and each (per-branch) element sum ≤ I,
    /// within 1e-9 on eigenvalues.
    pub fn validate_povm(&self) -> Result<()> {
        let check_family = |elements: &[&HermitianOperator]| -> Result<()> {
            if elements.is_empty() {
                return Ok(());
            }
            let dim = elements[0].dim();
            let mut sum = HermitianOperator::zeros(dim);
            for e in elements {
                let low = eig_hermitian(e)?
                    .eigenvalues()
                    .last()
                    .copied()
                    .unwrap_or(0.0);
                if low < -1e-9 {
                    return Err(Error::NotPositive {
                        min_eigenvalue: low,
                    });
                }
                sum = sum.add(e)?;
            }
            let slack = HermitianOperator::identity(dim).sub(&sum)?;
            let low = eig_hermitian(&slack)?
                .eigenvalues()
                .last()
                .copied()
                .unwrap_or(0.0);
            if low < -1e-9 {
                return Err(Error::NotPositive {
                    min_eigenvalue: low,
                });
            }
            Ok(())
        };
        match &self.povm {
            CodePovm::Plain(elements) => check_family(&elements.iter().collect::<Vec<_>>()),
            CodePovm::Branched(per_codeword) => {
                if per_codeword.is_empty() {
                    return Ok(());
                }
                let branches = per_codeword[0].len();
                for i in 0..branches {
                    let family: Vec<&HermitianOperator> =
                        per_codeword.iter().map(|row| &row[i]).collect();
                    check_family(&family)?;
                }
                Ok(())
            }
        }
    }
}

/// A packed code plus the packing-time diagnostics needed to audit it.
#[derive(Debug, Clone)]
pub struct PackOutcome {
    pub code: Code,
    /// Ensemble indices of each accepted codeword's factors.
    pub codeword_indices: Vec<Vec<usize>>,
    /// Condition-(ii) detection values at acceptance time.
    pub per_codeword_success: Vec<f64>,
    /// Condition-(iii) average-state leakage values at acceptance time.
    pub sigma_bar_traces: Vec<f64>,
    pub threshold: f64,
    pub threshold_exponent: f64,
    pub candidates_tested: usize,
    /// min_i χ_i of the packing ensemble through the branches.
    pub chi_at_ensemble: f64,
}

struct FactorSpectra {
    vectors: CMatrix,
    /// log₂ eigenvalues, -inf on the null eigenspace.
    logs: Vec<f64>,
}

impl FactorSpectra {
    fn from_spectrum(spec: &Spectrum) -> Self {
        FactorSpectra {
            vectors: spec.eigenvectors().clone(),
            logs: spec
                .eigenvalues()
                .iter()
                .map(|&v| {
                    if v > tol::ENTROPY_FLOOR {
                        v.log2()
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect(),
        }
    }
}

/// Projector onto the span of product eigenvectors whose per-copy average
/// log-eigenvalue sits within `width` of -center. Shares the typicality
/// window rule (half-open, slack toward inclusion).
fn typical_projector(
    factors: &[&FactorSpectra],
    center: f64,
    width: f64,
) -> Result<HermitianOperator> {
    let n = factors.len();
    let d = factors[0].logs.len();
    let total = (d as u128).pow(n as u32);
    let dim = matcore::check_dim(total)?;
    let mut basis = factors[0].vectors.clone();
    for f in &factors[1..] {
        basis = matcore::tensor(&basis, &f.vectors)?;
    }
    let mut indicator = vec![0.0f64; dim];
    for (idx, slot) in indicator.iter_mut().enumerate() {
        let mut rem = idx;
        let mut logsum = 0.0f64;
        // kron puts the first factor in the most significant digit.
        for r in (0..n).rev() {
            let k = rem % d;
            rem /= d;
            logsum += factors[r].logs[k];
        }
        let t = logsum / n as f64 + center;
        if in_window(t, width) {
            *slot = 1.0;
        }
    }
    let diag = HermitianOperator::from_real_diagonal(&indicator);
    let mat = &basis * diag.matrix() * basis.adjoint();
    Ok(HermitianOperator::from_symmetrized(mat))
}

/// (X)^(1/2) after clipping eigenvalues in [-1e-10, 0) to zero; eigenvalues
/// below the clip tolerance are a genuine positivity failure.
fn sqrt_psd_clipped(x: &HermitianOperator) -> Result<HermitianOperator> {
    let spec = eig_hermitian(x)?;
    if let Some(&low) = spec
        .eigenvalues()
        .iter()
        .min_by(|a, b| a.partial_cmp(b).unwrap())
    {
        if low < -tol::PSD_EIG {
            return Err(Error::NotPositive {
                min_eigenvalue: low,
            });
        }
    }
    Ok(spec.apply_fn(|v| if v > 0.0 { v.sqrt() } else { 0.0 }))
}

/// Iterates sequences j̲ ∈ Jⁿ in lexicographic order, j₁ most significant.
fn for_each_sequence(j: usize, n: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    let mut digits = vec![0usize; n];
    loop {
        f(&digits)?;
        let mut pos = n;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < j {
                break;
            }
            digits[pos] = 0;
        }
    }
}

/// Greedy maximal packing for a memoryless channel.
pub fn pack_memoryless(channel: &KrausChannel, cfg: &PackingConfig) -> Result<PackOutcome> {
    cfg.validate()?;
    let ens = &cfg.ensemble;
    let n = cfg.n;
    let outputs = ens.through_channel(channel)?;
    let sigma_bar = outputs.average_state();
    let bar_spec = eig_hermitian(sigma_bar.op())?;
    let s_bar_entropy = crate::channels::entropy_of_spectrum(bar_spec.eigenvalues());
    let mut s_cond = 0.0;
    let mut out_spectra = Vec::with_capacity(ens.len());
    for (p, state) in outputs.probs().iter().zip(outputs.states()) {
        let spec = eig_hermitian(state.op())?;
        s_cond += p * crate::channels::entropy_of_spectrum(spec.eigenvalues());
        out_spectra.push(FactorSpectra::from_spectrum(&spec));
    }
    let width = cfg.typical_width.unwrap_or(cfg.epsilon / 3.0);
    let exponent = cfg
        .threshold_exponent
        .unwrap_or(s_bar_entropy - s_cond - 2.0 * cfg.epsilon / 3.0);
    let threshold = (2.0f64).powf(-(n as f64) * exponent);

    let bar_factors = FactorSpectra::from_spectrum(&bar_spec);
    let p_bar = typical_projector(&vec![&bar_factors; n], s_bar_entropy, width)?;
    let sigma_bar_n = sigma_bar.op().tensor_pow(n)?;

    let mut q = HermitianOperator::zeros(p_bar.dim());
    let mut root = sqrt_psd_clipped(&p_bar)?;
    let mut accepted: Vec<Vec<usize>> = Vec::new();
    let mut elements: Vec<HermitianOperator> = Vec::new();
    let mut successes = Vec::new();
    let mut leakages = Vec::new();
    let mut candidates_tested = 0usize;

    for_each_sequence(ens.len(), n, |seq| {
        candidates_tested += 1;
        let seq_factors: Vec<&FactorSpectra> = seq.iter().map(|&j| &out_spectra[j]).collect();
        let p_seq = typical_projector(&seq_factors, s_cond, width)?;
        let inner = p_bar.matrix() * p_seq.matrix() * p_bar.matrix();
        let v_mat = root.matrix() * inner * root.matrix();
        let v = HermitianOperator::from_symmetrized(v_mat);
        let out_state = ProductState::new(
            seq.iter().map(|&j| outputs.state(j).clone()).collect(),
        )?
        .materialize()?;
        let success = trace_product(out_state.op(), &v);
        let leakage = trace_product(&sigma_bar_n, &v);
        if success > 1.0 - cfg.epsilon && leakage <= threshold * (1.0 + 1e-9) {
            accepted.push(seq.to_vec());
            successes.push(success);
            leakages.push(leakage);
            q = q.add(&v)?;
            elements.push(v);
            let projected = p_bar.sandwich(&q)?;
            root = sqrt_psd_clipped(&p_bar.sub(&projected)?)?;
        }
        Ok(())
    })?;

    let codewords = accepted
        .iter()
        .map(|seq| {
            ProductState::new(seq.iter().map(|&j| ens.state(j).clone()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let code = Code::new(codewords, None, CodePovm::Plain(elements), n)?;
    Ok(PackOutcome {
        code,
        codeword_indices: accepted,
        per_codeword_success: successes,
        sigma_bar_traces: leakages,
        threshold,
        threshold_exponent: exponent,
        candidates_tested,
        chi_at_ensemble: s_bar_entropy - s_cond,
    })
}

/// Greedy maximal packing for a branch mixture with a discrimination
/// preamble. Acceptance sums are γ-weighted over branches and include the
/// preamble identification factors Tr[Π̃_i Φ_i⊗mL(ω^(mL))].
pub fn pack_memory(
    mix: &BranchMixture,
    preamble: &Preamble,
    cfg: &PackingConfig,
) -> Result<PackOutcome> {
    cfg.validate()?;
    if preamble.branch_count != mix.len() {
        return Err(Error::DimensionMismatch {
            expected: mix.len(),
            got: preamble.branch_count,
        });
    }
    let ens = &cfg.ensemble;
    let n = cfg.n;
    let m_branches = mix.len();
    let width = cfg.typical_width.unwrap_or(cfg.epsilon / 4.0);
    let id_factors = preamble.branch_success(mix)?;

    struct BranchCtx {
        outputs: Ensemble,
        out_spectra: Vec<FactorSpectra>,
        s_cond: f64,
        p_bar: HermitianOperator,
        sigma_bar_n: HermitianOperator,
        q: HermitianOperator,
        root: HermitianOperator,
    }

    let mut chi_min = f64::INFINITY;
    let mut branches = Vec::with_capacity(m_branches);
    for branch in mix.branches() {
        let outputs = ens.through_channel(branch)?;
        let sigma_bar = outputs.average_state();
        let bar_spec = eig_hermitian(sigma_bar.op())?;
        let s_bar = crate::channels::entropy_of_spectrum(bar_spec.eigenvalues());
        let mut s_cond = 0.0;
        let mut out_spectra = Vec::with_capacity(ens.len());
        for (p, state) in outputs.probs().iter().zip(outputs.states()) {
            let spec = eig_hermitian(state.op())?;
            s_cond += p * crate::channels::entropy_of_spectrum(spec.eigenvalues());
            out_spectra.push(FactorSpectra::from_spectrum(&spec));
        }
        chi_min = chi_min.min(s_bar - s_cond);
        let bar_factors = FactorSpectra::from_spectrum(&bar_spec);
        let p_bar = typical_projector(&vec![&bar_factors; n], s_bar, width)?;
        let sigma_bar_n = sigma_bar.op().tensor_pow(n)?;
        let root = sqrt_psd_clipped(&p_bar)?;
        let q = HermitianOperator::zeros(p_bar.dim());
        branches.push(BranchCtx {
            outputs,
            out_spectra,
            s_cond,
            p_bar,
            sigma_bar_n,
            q,
            root,
        });
    }

    let exponent = cfg
        .threshold_exponent
        .unwrap_or(chi_min - 0.75 * cfg.epsilon);
    let threshold = (2.0f64).powf(-(n as f64) * exponent);

    let mut accepted: Vec<Vec<usize>> = Vec::new();
    let mut per_codeword: Vec<Vec<HermitianOperator>> = Vec::new();
    let mut successes = Vec::new();
    let mut leakages = Vec::new();
    let mut candidates_tested = 0usize;

    for_each_sequence(ens.len(), n, |seq| {
        candidates_tested += 1;
        let mut vs = Vec::with_capacity(m_branches);
        let mut success = 0.0;
        let mut leakage = 0.0;
        for (i, ctx) in branches.iter().enumerate() {
            let seq_factors: Vec<&FactorSpectra> =
                seq.iter().map(|&j| &ctx.out_spectra[j]).collect();
            let p_seq = typical_projector(&seq_factors, ctx.s_cond, width)?;
            let inner = ctx.p_bar.matrix() * p_seq.matrix() * ctx.p_bar.matrix();
            let v_mat = ctx.root.matrix() * inner * ctx.root.matrix();
            let v = HermitianOperator::from_symmetrized(v_mat);
            let out_state = ProductState::new(
                seq.iter().map(|&j| ctx.outputs.state(j).clone()).collect(),
            )?
            .materialize()?;
            let weight = mix.gammas()[i] * id_factors[i];
            success += weight * trace_product(out_state.op(), &v);
            leakage += weight * trace_product(&ctx.sigma_bar_n, &v);
            vs.push(v);
        }
        if success > 1.0 - cfg.epsilon && leakage <= threshold * (1.0 + 1e-9) {
            accepted.push(seq.to_vec());
            successes.push(success);
            leakages.push(leakage);
            for (ctx, v) in branches.iter_mut().zip(&vs) {
                ctx.q = ctx.q.add(v)?;
                let projected = ctx.p_bar.sandwich(&ctx.q)?;
                ctx.root = sqrt_psd_clipped(&ctx.p_bar.sub(&projected)?)?;
            }
            per_codeword.push(vs);
        }
        Ok(())
    })?;

    let codewords = accepted
        .iter()
        .map(|seq| {
            ProductState::new(seq.iter().map(|&j| ens.state(j).clone()).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    let code = Code::new(
        codewords,
        Some(preamble.clone()),
        CodePovm::Branched(per_codeword),
        n,
    )?;
    Ok(PackOutcome {
        code,
        codeword_indices: accepted,
        per_codeword_success: successes,
        sigma_bar_traces: leakages,
        threshold,
        threshold_exponent: exponent,
        candidates_tested,
        chi_at_ensemble: chi_min,
    })
}

/// Exact decode probability Tr[Φ⁽ⁿ⁾(ρ_k) E_k] per codeword, with the mixture
/// expanded as a γ-weighted branch sum and preamble factors multiplied in
/// factorwise.
pub fn per_codeword_success(code: &Code, mix: &BranchMixture) -> Result<Vec<f64>> {
    let n_cw = code.size();
    let mut result = Vec::with_capacity(n_cw);
    match &code.povm {
        CodePovm::Plain(elements) => {
            for (cw, e) in code.codewords.iter().zip(elements) {
                let mut success = 0.0;
                for (gamma, branch) in mix.gammas().iter().zip(mix.branches()) {
                    let out = cw.map_factors(branch)?.materialize()?;
                    success += gamma * trace_product(out.op(), e);
                }
                result.push(success);
            }
        }
        CodePovm::Branched(per_codeword) => {
            let preamble = code.preamble.as_ref().ok_or(Error::Empty {
                what: "preamble on branched code",
            })?;
            let t = preamble.trace_matrix(mix)?;
            for (cw, es) in code.codewords.iter().zip(per_codeword) {
                let mut success = 0.0;
                for (i, (gamma, branch)) in
                    mix.gammas().iter().zip(mix.branches()).enumerate()
                {
                    let out = cw.map_factors(branch)?.materialize()?;
                    for (j_prime, e) in es.iter().enumerate() {
                        success += gamma * t[i][j_prime] * trace_product(out.op(), e);
                    }
                }
                result.push(success);
            }
        }
    }
    Ok(result)
}

/// Average probability of error 1 - (1/N) Σ_k Tr[Φ⁽ⁿ⁾(ρ_k) E_k].
pub fn evaluate_error(code: &Code, mix: &BranchMixture) -> Result<f64> {
    if code.size() == 0 {
        return Err(Error::Empty { what: "code" });
    }
    let successes = per_codeword_success(code, mix)?;
    Ok(1.0 - successes.iter().sum::<f64>() / successes.len() as f64)
}

/// Weak-converse report: per-branch errors, induced-channel mutual
/// informations, Fano checks, and the rate-based error lower bound.
#[derive(Debug, Clone)]
pub struct ConverseReport {
    pub per_branch_error: Vec<f64>,
    pub average_error: f64,
    /// (1 - (C + 1/n_total)/R) · min_i γ_i; vacuous when non-positive.
    pub fano_lower_bound: f64,
    pub bound_vacuous: bool,
    pub rate: f64,
    pub capacity_used: f64,
    /// I(X : Y_i) in bits for the induced classical channel of each branch.
    pub per_branch_mutual_info: Vec<f64>,
    /// Per-copy Holevo χ_i of the induced single-copy codeword ensemble.
    pub per_branch_chi_induced: Vec<f64>,
    /// Fano's inequality in the abstention-robust form
    /// h(p̄) + p̄·log₂ N ≥ log₂ N - I, per branch. (The log₂(N-1) textbook
    /// variant assumes an estimator without abstention and fails when the
    /// decoder's failure outcome counts as an error.)
    pub fano_holds: Vec<bool>,
    /// Holevo-bound chain I(X:Y_i) ≤ n·χ_i(induced), per branch.
    pub holevo_chain_holds: Vec<bool>,
    pub min_gamma: f64,
}

/// Evaluates the weak-converse quantities of a code against a mixture, with
/// `capacity` supplied by the capacity optimizer (or analytically).
pub fn converse_check(
    code: &Code,
    mix: &BranchMixture,
    capacity: f64,
) -> Result<ConverseReport> {
    let n_cw = code.size();
    if n_cw == 0 {
        return Err(Error::Empty { what: "code" });
    }
    let m_branches = mix.len();
    let preamble_t = match (&code.povm, &code.preamble) {
        (CodePovm::Branched(_), Some(pre)) => Some(pre.trace_matrix(mix)?),
        (CodePovm::Plain(_), None) => None,
        _ => {
            return Err(Error::InvalidParameter {
                name: "code",
                message: "POVM kind inconsistent with preamble presence".into(),
            })
        }
    };

    // Induced classical channel per branch: rows over sent codewords α,
    // columns over decoder outcomes β plus the implicit failure outcome.
    let mut conditional: Vec<Vec<Vec<f64>>> =
        vec![vec![vec![0.0; n_cw + 1]; n_cw]; m_branches];
    for (alpha, cw) in code.codewords.iter().enumerate() {
        for (i, branch) in mix.branches().iter().enumerate() {
            let out = cw.map_factors(branch)?.materialize()?;
            let mut row_sum = 0.0;
            for beta in 0..n_cw {
                let p = match &code.povm {
                    CodePovm::Plain(elements) => trace_product(out.op(), &elements[beta]),
                    CodePovm::Branched(per_codeword) => {
                        let t = preamble_t.as_ref().expect("checked above");
                        per_codeword[beta]
                            .iter()
                            .enumerate()
                            .map(|(jp, e)| t[i][jp] * trace_product(out.op(), e))
                            .sum()
                    }
                };
                let p = p.clamp(0.0, 1.0);
                conditional[i][alpha][beta] = p;
                row_sum += p;
            }
            conditional[i][alpha][n_cw] = (1.0 - row_sum).max(0.0);
        }
    }

    let mut per_branch_error = Vec::with_capacity(m_branches);
    let mut per_branch_mutual_info = Vec::with_capacity(m_branches);
    let mut fano_holds = Vec::with_capacity(m_branches);
    for rows in &conditional {
        let correct: f64 = rows
            .iter()
            .enumerate()
            .map(|(alpha, row)| row[alpha])
            .sum::<f64>()
            / n_cw as f64;
        let p_err = 1.0 - correct;
        per_branch_error.push(p_err);

        // I(X:Y) = H(Y) - H(Y|X) with X uniform.
        let mut marginal = vec![0.0f64; n_cw + 1];
        let mut h_y_given_x = 0.0;
        for row in rows {
            for (b, &p) in row.iter().enumerate() {
                marginal[b] += p / n_cw as f64;
            }
            h_y_given_x += shannon_entropy(row) / n_cw as f64;
        }
        let info = (shannon_entropy(&marginal) - h_y_given_x).max(0.0);
        per_branch_mutual_info.push(info);

        let log_n = (n_cw as f64).log2();
        let lhs = binary_entropy(p_err.clamp(0.0, 1.0))? + p_err * log_n;
        fano_holds.push(lhs + 1e-9 >= log_n - info);
    }

    let average_error = mix
        .gammas()
        .iter()
        .zip(&per_branch_error)
        .map(|(g, e)| g * e)
        .sum::<f64>();

    // Induced single-copy ensemble: every codeword factor with weight
    // 1/(n·N); per-branch χ of it bounds I(X:Y_i)/n by the Holevo chain.
    let mut factor_states = Vec::with_capacity(n_cw * code.n);
    for cw in &code.codewords {
        for f in cw.factors() {
            factor_states.push(f.clone());
        }
    }
    let induced = Ensemble::uniform(factor_states)?;
    let per_branch_chi_induced = crate::capacity::chi_vector(mix, &induced)?;
    let holevo_chain_holds: Vec<bool> = per_branch_mutual_info
        .iter()
        .zip(&per_branch_chi_induced)
        .map(|(i, chi)| *i <= code.n as f64 * chi + 1e-9)
        .collect();

    let rate = code.rate;
    let min_gamma = mix.gammas().iter().copied().fold(f64::INFINITY, f64::min);
    let n_total = code.n_total() as f64;
    let fano_lower_bound = if rate > 0.0 {
        (1.0 - (capacity + 1.0 / n_total) / rate) * min_gamma
    } else {
        f64::NEG_INFINITY
    };
    Ok(ConverseReport {
        per_branch_error,
        average_error,
        fano_lower_bound,
        bound_vacuous: fano_lower_bound <= 0.0,
        rate,
        capacity_used: capacity,
        per_branch_mutual_info,
        per_branch_chi_induced,
        fano_holds,
        holevo_chain_holds,
        min_gamma,
    })
}

fn shannon_entropy(probs: &[f64]) -> f64 {
    let mut h = 0.0;
    for &p in probs {
        if p > tol::ENTROPY_FLOOR {
            h -= p * p.log2();
        }
    }
    h
}

/// Donald's identity Σ p_j S(ω_j‖ρ) = Σ p_j S(ω_j‖ω̄) + S(ω̄‖ρ), used to
/// recenter average relative entropies. Returns (lhs, rhs) for inspection.
pub fn donald_identity_sides(
    probs: &[f64],
    states: &[DensityMatrix],
    rho: &DensityMatrix,
) -> Result<(f64, f64)> {
    let ens = Ensemble::new(probs.to_vec(), states.to_vec())?;
    let avg = ens.average_state();
    let mut lhs = 0.0;
    let mut centered = 0.0;
    for (p, s) in probs.iter().zip(states) {
        lhs += p * relative_entropy(s, rho)?.bits;
        centered += p * relative_entropy(s, &avg)?.bits;
    }
    let rhs = centered + relative_entropy(&avg, rho)?.bits;
    Ok((lhs, rhs))
}
