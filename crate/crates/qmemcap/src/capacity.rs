//! Optimizers for the memoryless Holevo capacity χ*(Φ) and the maximin
//! product-state capacity C(Φ) = sup over ensembles of min_i χ_i.
//!
//! The search alternates two levels. The outer level proposes pure-state
//! support updates by seeded random perturbation, accepting on certified
//! improvement. The inner level reweights probabilities over a fixed support:
//! each χ_i is concave in p, so min_i χ_i is a concave program over the
//! simplex. It is solved by a soft-min annealed mirror ascent followed by a
//! minimax-dual pass whose evaluations are Blahut-Arimoto iterations on the
//! branch-weighted objective Σ μ_i χ_i (for M = 1 this IS the
//! classical-quantum Blahut-Arimoto algorithm). Every reported value is
//! re-certified with the exact minimum at the returned ensemble, so results
//! are lower bounds that verify themselves.
//!
//! The maximin objective never reads the branch weights γ: the capacity
//! formula contains no γ.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channels::{
    chi_through, BranchMixture, DensityMatrix, Ensemble, KrausChannel,
};
use crate::matcore::{
    basis_ket, eig_hermitian, gaussian, haar_ket, trace_product, CMatrix, CVector,
    HermitianOperator,
};
use crate::{tol, Error, Result};

/// Tuning knobs for the capacity search; all stochastic choices derive from
/// `seed` so runs are reproducible.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub seed: u64,
    /// Objective improvement below this counts as stagnation.
    pub tol: f64,
    /// Consecutive stagnant rounds before the search stops as converged.
    pub patience: u32,
    /// Hard cap on outer rounds; exhausting it yields `converged = false`.
    pub max_iterations: u32,
    /// Max ensemble support size; defaults to d² when absent.
    pub support_cap: Option<usize>,
    /// Worker threads for proposal evaluation; results are identical for any
    /// value because the batch reduce is index-ordered.
    pub threads: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            seed: 0,
            tol: 1e-7,
            patience: 25,
            max_iterations: 5000,
            support_cap: None,
            threads: 1,
        }
    }
}

/// Certified capacity lower bound: re-evaluating per-branch χ on
/// `argmax_ensemble` reproduces `per_branch_chi`, and `value` is its minimum.
#[derive(Debug, Clone)]
pub struct CapacityResult {
    pub value: f64,
    pub argmax_ensemble: Ensemble,
    pub per_branch_chi: Vec<f64>,
    pub iterations: u32,
    pub converged: bool,
    pub support_cap: usize,
}

/// Per-branch Holevo quantities χ_i({p_j, Φ_i(ρ_j)}).
pub fn chi_vector(mix: &BranchMixture, ensemble: &Ensemble) -> Result<Vec<f64>> {
    mix.branches()
        .iter()
        .map(|branch| chi_through(branch, ensemble))
        .collect()
}

/// Holevo capacity χ*(Φ) of a single memoryless channel.
pub fn holevo_capacity(channel: &KrausChannel, cfg: &OptimizerConfig) -> Result<CapacityResult> {
    maximin_capacity(&BranchMixture::single(channel.clone()), cfg)
}

/// Maximin product-state capacity C(Φ) = sup over ensembles of min_i χ_i.
pub fn maximin_capacity(mix: &BranchMixture, cfg: &OptimizerConfig) -> Result<CapacityResult> {
    let d = mix.dim_in();
    let support_cap = cfg.support_cap.unwrap_or(d * d).max(2);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let init: Vec<CVector> = (0..d.min(support_cap)).map(|k| basis_ket(d, k)).collect();
    let mut best = evaluate_support(mix, &init, &InnerBudget::FULL)?;

    let mut iterations = 0u32;
    let mut stagnant = 0u32;
    while iterations < cfg.max_iterations && stagnant < cfg.patience {
        iterations += 1;
        let round_start = best.value;
        let proposals: Vec<Vec<CVector>> = (0..PROPOSALS_PER_ROUND)
            .map(|_| mutate_support(&best.kets, &mut rng, support_cap, d))
            .collect();
        let evals = evaluate_batch(mix, &proposals, cfg.threads)?;
        if let Some(candidate) = evals
            .into_iter()
            .max_by(|a, b| a.value.partial_cmp(&b.value).unwrap())
        {
            // Cheap evaluations under-estimate; only promising candidates get
            // the full treatment.
            if candidate.value > best.value - 1e-6 {
                let full = evaluate_support(mix, &candidate.kets, &InnerBudget::FULL)?;
                if full.value > best.value {
                    best = full;
                }
            }
        }
        if best.value - round_start > cfg.tol {
            stagnant = 0;
        } else {
            stagnant += 1;
        }
    }

    Ok(CapacityResult {
        value: best.value,
        argmax_ensemble: best.ensemble,
        per_branch_chi: best.per_branch_chi,
        iterations,
        converged: stagnant >= cfg.patience,
        support_cap,
    })
}

const PROPOSALS_PER_ROUND: usize = 4;

/// Effort levels for the inner probability solver.
#[derive(Debug, Clone, Copy)]
pub struct InnerBudget {
    pub ba_steps: usize,
    pub ba_tol: f64,
    pub dual_iters: usize,
    pub anneal: bool,
}

impl InnerBudget {
    pub const FULL: InnerBudget = InnerBudget {
        ba_steps: 2000,
        ba_tol: 1e-13,
        dual_iters: 70,
        anneal: true,
    };
    pub const CHEAP: InnerBudget = InnerBudget {
        ba_steps: 150,
        ba_tol: 1e-9,
        dual_iters: 20,
        anneal: false,
    };
}

/// Result of the inner concave maximin over the probability simplex.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub probs: Vec<f64>,
    /// Exact min_i χ_i at `probs`.
    pub value: f64,
    pub per_branch_chi: Vec<f64>,
}

/// Optimizes probabilities over a fixed support. `outputs[i][j]` is the
/// output of branch i on support state j. Exposed so the concavity of the
/// inner program can be checked by random restarts.
pub fn optimize_probs(
    outputs: &[Vec<DensityMatrix>],
    p0: &[f64],
    budget: &InnerBudget,
) -> Result<InnerSolution> {
    let eval = ChiEval::new(outputs)?;
    solve_inner(&eval, p0, budget)
}

// ---------------------------------------------------------------------------
// Inner solver
// ---------------------------------------------------------------------------

struct ChiEval<'a> {
    outputs: &'a [Vec<DensityMatrix>],
    /// S(σ_ij) per branch and support state.
    s_out: Vec<Vec<f64>>,
    branches: usize,
    support: usize,
    dim_out: usize,
}

struct ChiStats {
    /// χ_i(p) per branch, in bits.
    chi: Vec<f64>,
    /// D[i][j] = S(σ_ij ‖ σ̄_i(p)) in bits.
    d: Vec<Vec<f64>>,
}

impl<'a> ChiEval<'a> {
    fn new(outputs: &'a [Vec<DensityMatrix>]) -> Result<Self> {
        let branches = outputs.len();
        if branches == 0 || outputs[0].is_empty() {
            return Err(Error::Empty {
                what: "branch outputs",
            });
        }
        let support = outputs[0].len();
        let dim_out = outputs[0][0].dim();
        let mut s_out = Vec::with_capacity(branches);
        for row in outputs {
            if row.len() != support {
                return Err(Error::DimensionMismatch {
                    expected: support,
                    got: row.len(),
                });
            }
            let mut s_row = Vec::with_capacity(support);
            for state in row {
                let spec = eig_hermitian(state.op())?;
                s_row.push(crate::channels::entropy_of_spectrum(spec.eigenvalues()));
            }
            s_out.push(s_row);
        }
        Ok(ChiEval {
            outputs,
            s_out,
            branches,
            support,
            dim_out,
        })
    }

    // Indexed loops: the simplex math walks several parallel arrays at once.
    #[allow(clippy::needless_range_loop)]
    fn stats(&self, p: &[f64]) -> Result<ChiStats> {
        let mut chi = Vec::with_capacity(self.branches);
        let mut d = Vec::with_capacity(self.branches);
        for i in 0..self.branches {
            let mut avg = CMatrix::zeros(self.dim_out, self.dim_out);
            for (pj, s) in p.iter().zip(&self.outputs[i]) {
                if *pj > 0.0 {
                    avg += s.matrix().scale(*pj);
                }
            }
            let avg = HermitianOperator::from_symmetrized(avg);
            let spec = eig_hermitian(&avg)?;
            let s_avg = crate::channels::entropy_of_spectrum(spec.eigenvalues());
            let log_avg =
                spec.apply_fn(|v| if v <= tol::ENTROPY_FLOOR { 0.0 } else { v.log2() });
            let mut chi_i = s_avg;
            let mut d_row = Vec::with_capacity(self.support);
            for j in 0..self.support {
                chi_i -= p[j] * self.s_out[i][j];
                let cross = trace_product(self.outputs[i][j].op(), &log_avg);
                d_row.push((-self.s_out[i][j] - cross).max(0.0));
            }
            chi.push(chi_i.max(0.0));
            d.push(d_row);
        }
        Ok(ChiStats { chi, d })
    }
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Blahut-Arimoto iteration for the branch-weighted objective Σ_i μ_i χ_i(p),
/// which is the capacity objective of the direct-sum classical-quantum
/// channel. Stops on the standard duality-gap certificate
/// max_j Σ_i μ_i D_ij - V < tol.
#[allow(clippy::needless_range_loop)]
fn ba_weighted(
    eval: &ChiEval,
    mu: &[f64],
    p0: &[f64],
    steps: usize,
    gap_tol: f64,
) -> Result<Vec<f64>> {
    let mut p = p0.to_vec();
    for _ in 0..steps {
        let stats = eval.stats(&p)?;
        let value: f64 = mu.iter().zip(&stats.chi).map(|(m, c)| m * c).sum();
        let mut exponent = vec![0.0f64; eval.support];
        for (i, m) in mu.iter().enumerate() {
            if *m > 0.0 {
                for j in 0..eval.support {
                    exponent[j] += m * stats.d[i][j];
                }
            }
        }
        let gap = exponent
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            - value;
        if gap < gap_tol {
            break;
        }
        let mut total = 0.0;
        for j in 0..eval.support {
            p[j] *= (exponent[j] * std::f64::consts::LN_2).exp();
            total += p[j];
        }
        if !(total > 0.0 && total.is_finite()) {
            break;
        }
        for pj in &mut p {
            *pj /= total;
        }
    }
    Ok(p)
}

#[allow(clippy::needless_range_loop)]
fn solve_inner(eval: &ChiEval, p0: &[f64], budget: &InnerBudget) -> Result<InnerSolution> {
    let m = eval.branches;
    let mut best: Option<InnerSolution> = None;
    let observe = |p: &[f64], eval: &ChiEval, best: &mut Option<InnerSolution>| -> Result<()> {
        let stats = eval.stats(p)?;
        let value = min_of(&stats.chi);
        if best.as_ref().is_none_or(|b| value > b.value) {
            *best = Some(InnerSolution {
                probs: p.to_vec(),
                value,
                per_branch_chi: stats.chi,
            });
        }
        Ok(())
    };

    if m == 1 {
        let p = ba_weighted(eval, &[1.0], p0, budget.ba_steps, budget.ba_tol)?;
        observe(&p, eval, &mut best)?;
        return Ok(best.expect("observed at least once"));
    }

    observe(p0, eval, &mut best)?;

    if budget.anneal {
        // Soft-min annealed mirror ascent: softmax weights over branches with
        // decreasing temperature, multiplicative update on p.
        let mut p = p0.to_vec();
        for tau in [0.5, 0.15, 0.05, 0.015, 0.005] {
            for _ in 0..30 {
                let stats = eval.stats(&p)?;
                let min_chi = min_of(&stats.chi);
                let mut w: Vec<f64> = stats
                    .chi
                    .iter()
                    .map(|c| (-(c - min_chi) / tau).exp())
                    .collect();
                let wsum: f64 = w.iter().sum();
                for wi in &mut w {
                    *wi /= wsum;
                }
                let mut total = 0.0;
                for j in 0..eval.support {
                    let mut e = 0.0;
                    for i in 0..m {
                        e += w[i] * stats.d[i][j];
                    }
                    p[j] *= (e * std::f64::consts::LN_2).exp();
                    total += p[j];
                }
                for pj in &mut p {
                    *pj /= total;
                }
            }
            observe(&p, eval, &mut best)?;
        }
    }

    // Minimax dual pass: C = min_μ max_p Σ μ_i χ_i(p); g(μ) is convex, each
    // evaluation is one BA solve, and every solve contributes a primal
    // candidate.
    let warm = best.as_ref().map(|b| b.probs.clone()).unwrap_or_else(|| {
        vec![1.0 / eval.support as f64; eval.support]
    });
    // Strictly interior warm start so BA can revive any support state.
    let warm: Vec<f64> = {
        let floor = 1e-6;
        let mut w: Vec<f64> = warm.iter().map(|&x| x.max(floor)).collect();
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= s);
        w
    };
    if m == 2 {
        // Golden-section on μ = (1-t, t).
        let probe = |t: f64, best: &mut Option<InnerSolution>| -> Result<f64> {
            let mu = [1.0 - t, t];
            let p = ba_weighted(eval, &mu, &warm, budget.ba_steps, budget.ba_tol)?;
            let stats = eval.stats(&p)?;
            observe(&p, eval, best)?;
            Ok(mu[0] * stats.chi[0] + mu[1] * stats.chi[1])
        };
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut t1 = hi - phi * (hi - lo);
        let mut t2 = lo + phi * (hi - lo);
        let mut g1 = probe(t1, &mut best)?;
        let mut g2 = probe(t2, &mut best)?;
        for _ in 0..budget.dual_iters {
            if g1 <= g2 {
                hi = t2;
                t2 = t1;
                g2 = g1;
                t1 = hi - phi * (hi - lo);
                g1 = probe(t1, &mut best)?;
            } else {
                lo = t1;
                t1 = t2;
                g1 = g2;
                t2 = lo + phi * (hi - lo);
                g2 = probe(t2, &mut best)?;
            }
        }
        probe(0.0, &mut best)?;
        probe(1.0, &mut best)?;
    } else {
        // Mirror descent on μ with diminishing steps.
        let mut mu = vec![1.0 / m as f64; m];
        for t in 0..budget.dual_iters.max(1) {
            let p = ba_weighted(eval, &mu, &warm, budget.ba_steps, budget.ba_tol)?;
            let stats = eval.stats(&p)?;
            observe(&p, eval, &mut best)?;
            let eta = 2.0 / ((t + 1) as f64).sqrt();
            let mut total = 0.0;
            for i in 0..m {
                mu[i] *= (-eta * stats.chi[i]).exp();
                total += mu[i];
            }
            for mi in &mut mu {
                *mi /= total;
            }
        }
    }

    Ok(best.expect("observed at least once"))
}

// ---------------------------------------------------------------------------
// Outer support search
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct SupportEval {
    kets: Vec<CVector>,
    ensemble: Ensemble,
    per_branch_chi: Vec<f64>,
    value: f64,
}

fn mutate_support(
    kets: &[CVector],
    rng: &mut ChaCha8Rng,
    support_cap: usize,
    dim: usize,
) -> Vec<CVector> {
    let mut out = kets.to_vec();
    let roll: f64 = rng.gen();
    if roll < 0.55 || (roll >= 0.85 && out.len() <= 2) {
        // Perturb one state with a log-uniform step size.
        let j = rng.gen_range(0..out.len());
        let scale = 10f64.powf(rng.gen_range(-4.0..-0.3));
        let noise = CVector::from_fn(dim, |_, _| {
            num_complex::Complex64::new(gaussian(rng), gaussian(rng))
        });
        let cand = &out[j] + noise.scale(scale);
        let norm = cand.norm();
        if norm > 1e-10 {
            out[j] = cand.unscale(norm);
        }
    } else if roll < 0.70 {
        let j = rng.gen_range(0..out.len());
        out[j] = haar_ket(rng, dim);
    } else if roll < 0.85 {
        if out.len() < support_cap {
            out.push(haar_ket(rng, dim));
        } else {
            let j = rng.gen_range(0..out.len());
            out[j] = haar_ket(rng, dim);
        }
    } else {
        let j = rng.gen_range(0..out.len());
        out.remove(j);
    }
    out
}

fn branch_outputs(mix: &BranchMixture, kets: &[CVector]) -> Result<Vec<Vec<DensityMatrix>>> {
    let states: Vec<DensityMatrix> = kets
        .iter()
        .map(|k| DensityMatrix::new(HermitianOperator::outer(k)))
        .collect::<Result<Vec<_>>>()?;
    mix.branches()
        .iter()
        .map(|b| states.iter().map(|s| b.apply(s)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Full pipeline for one support: inner solve, prune negligible weights, then
/// certify with the exact per-branch χ of the final ensemble.
fn evaluate_support(
    mix: &BranchMixture,
    kets: &[CVector],
    budget: &InnerBudget,
) -> Result<SupportEval> {
    let outputs = branch_outputs(mix, kets)?;
    let p0 = vec![1.0 / kets.len() as f64; kets.len()];
    let inner = optimize_probs(&outputs, &p0, budget)?;

    // Prune support states that ended with negligible weight.
    let mut kept_kets = Vec::new();
    let mut kept_probs = Vec::new();
    for (ket, &p) in kets.iter().zip(&inner.probs) {
        if p > 1e-12 {
            kept_kets.push(ket.clone());
            kept_probs.push(p);
        }
    }
    if kept_kets.is_empty() {
        kept_kets.push(kets[0].clone());
        kept_probs.push(1.0);
    }
    let total: f64 = kept_probs.iter().sum();
    for p in &mut kept_probs {
        *p /= total;
    }
    let states = kept_kets
        .iter()
        .map(|k| DensityMatrix::new(HermitianOperator::outer(k)))
        .collect::<Result<Vec<_>>>()?;
    let ensemble = Ensemble::new(kept_probs, states)?;
    let per_branch_chi = chi_vector(mix, &ensemble)?;
    let value = min_of(&per_branch_chi);
    Ok(SupportEval {
        kets: kept_kets,
        ensemble,
        per_branch_chi,
        value,
    })
}

fn evaluate_batch(
    mix: &BranchMixture,
    proposals: &[Vec<CVector>],
    threads: usize,
) -> Result<Vec<SupportEval>> {
    if threads <= 1 {
        proposals
            .iter()
            .map(|kets| evaluate_support(mix, kets, &InnerBudget::CHEAP))
            .collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParameter {
                name: "threads",
                message: e.to_string(),
            })?;
        pool.install(|| {
            proposals
                .par_iter()
                .map(|kets| evaluate_support(mix, kets, &InnerBudget::CHEAP))
                .collect()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn h(p: f64) -> f64 {
        if p <= 0.0 || p >= 1.0 {
            0.0
        } else {
            -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
        }
    }

    fn quick_cfg(seed: u64) -> OptimizerConfig {
        OptimizerConfig {
            seed,
            max_iterations: 60,
            ..OptimizerConfig::default()
        }
    }

    #[test]
    fn identity_qubit_yields_one_bit() {
        let r = holevo_capacity(&KrausChannel::identity(2), &quick_cfg(1)).unwrap();
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-6);
        assert!(r.argmax_ensemble.len() <= 4);
    }

    #[test]
    fn fully_depolarizing_yields_zero() {
        let ch = KrausChannel::depolarizing_qubit(1.0).unwrap();
        let r = holevo_capacity(&ch, &quick_cfg(2)).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn depolarizing_half_matches_formula() {
        let ch = KrausChannel::depolarizing_qubit(0.5).unwrap();
        let r = holevo_capacity(&ch, &quick_cfg(3)).unwrap();
        assert_abs_diff_eq!(r.value, 1.0 - h(0.25), epsilon = 1e-4);
    }

    #[test]
    fn maximin_single_branch_reduces_to_holevo() {
        let ch = KrausChannel::depolarizing_qubit(0.3).unwrap();
        let single = holevo_capacity(&ch, &quick_cfg(4)).unwrap();
        let mix = BranchMixture::single(ch);
        let maximin = maximin_capacity(&mix, &quick_cfg(4)).unwrap();
        assert_abs_diff_eq!(single.value, maximin.value, epsilon = 1e-6);
        assert_eq!(maximin.per_branch_chi.len(), 1);
    }

    #[test]
    fn maximin_with_dead_branch_is_zero() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::identity(2),
                KrausChannel::depolarizing_qubit(1.0).unwrap(),
            ],
        )
        .unwrap();
        let r = maximin_capacity(&mix, &quick_cfg(5)).unwrap();
        assert_abs_diff_eq!(r.value, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn maximin_depolarizing_pair_equals_weaker_branch() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.2).unwrap(),
                KrausChannel::depolarizing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap();
        let r = maximin_capacity(&mix, &quick_cfg(6)).unwrap();
        assert_abs_diff_eq!(r.value, 1.0 - h(0.25), epsilon = 1e-3);
        // min over per-branch χ is the certified value.
        assert_abs_diff_eq!(
            r.value,
            r.per_branch_chi.iter().copied().fold(f64::INFINITY, f64::min),
            epsilon = 1e-9
        );
    }

    #[test]
    fn thread_count_does_not_change_results() {
        // Proposal batches are generated sequentially and reduced in index
        // order, so the certified value is bit-identical for any worker
        // count.
        let mix = BranchMixture::new(
            vec![0.4, 0.6],
            vec![
                KrausChannel::depolarizing_qubit(0.25).unwrap(),
                KrausChannel::dephasing_qubit(0.6).unwrap(),
            ],
        )
        .unwrap();
        let base = OptimizerConfig {
            seed: 19,
            max_iterations: 12,
            ..OptimizerConfig::default()
        };
        let lone = maximin_capacity(&mix, &base).unwrap();
        let pooled = maximin_capacity(
            &mix,
            &OptimizerConfig {
                threads: 3,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(lone.value.to_bits(), pooled.value.to_bits());
        assert_eq!(lone.argmax_ensemble.probs(), pooled.argmax_ensemble.probs());
    }

    #[test]
    fn gamma_invariance_bitwise() {
        let branches = vec![
            KrausChannel::depolarizing_qubit(0.2).unwrap(),
            KrausChannel::depolarizing_qubit(0.5).unwrap(),
        ];
        let values: Vec<f64> = [[0.5, 0.5], [0.9, 0.1], [0.01, 0.99]]
            .iter()
            .map(|g| {
                let mix = BranchMixture::new(g.to_vec(), branches.clone()).unwrap();
                maximin_capacity(&mix, &quick_cfg(7)).unwrap().value
            })
            .collect();
        assert!((values[0] - values[1]).abs() <= 1e-9);
        assert!((values[0] - values[2]).abs() <= 1e-9);
    }

    #[test]
    fn chi_vector_examples() {
        let bit = Ensemble::uniform(vec![DensityMatrix::basis(2, 0), DensityMatrix::basis(2, 1)])
            .unwrap();
        // Identical branches give a constant vector.
        let ch = KrausChannel::depolarizing_qubit(0.3).unwrap();
        let mix = BranchMixture::new(vec![0.4, 0.6], vec![ch.clone(), ch]).unwrap();
        let v = chi_vector(&mix, &bit).unwrap();
        assert_abs_diff_eq!(v[0], v[1], epsilon = 1e-12);

        // Single-state ensemble: zero vector.
        let single = Ensemble::new(vec![1.0], vec![DensityMatrix::basis(2, 0)]).unwrap();
        let v = chi_vector(&mix, &single).unwrap();
        assert!(v.iter().all(|&x| x.abs() < 1e-12));

        // {identity, dephasing}: computational-basis states are fixed points
        // of both branches, so both χ values are 1.
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::identity(2),
                KrausChannel::dephasing_qubit(0.8).unwrap(),
            ],
        )
        .unwrap();
        let v = chi_vector(&mix, &bit).unwrap();
        assert_abs_diff_eq!(v[0], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(v[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn certified_value_is_self_verifying() {
        let mix = BranchMixture::new(
            vec![0.3, 0.7],
            vec![
                KrausChannel::depolarizing_qubit(0.25).unwrap(),
                KrausChannel::dephasing_qubit(0.35).unwrap(),
            ],
        )
        .unwrap();
        let r = maximin_capacity(&mix, &quick_cfg(8)).unwrap();
        let again = chi_vector(&mix, &r.argmax_ensemble).unwrap();
        for (a, b) in r.per_branch_chi.iter().zip(&again) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(
            r.value,
            again.iter().copied().fold(f64::INFINITY, f64::min),
            epsilon = 1e-9
        );
    }

    #[test]
    fn budget_monotonicity_keeps_best() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.15).unwrap(),
                KrausChannel::dephasing_qubit(0.4).unwrap(),
            ],
        )
        .unwrap();
        let short = maximin_capacity(
            &mix,
            &OptimizerConfig {
                seed: 9,
                max_iterations: 5,
                ..OptimizerConfig::default()
            },
        )
        .unwrap();
        let long = maximin_capacity(
            &mix,
            &OptimizerConfig {
                seed: 9,
                max_iterations: 40,
                ..OptimizerConfig::default()
            },
        )
        .unwrap();
        assert!(long.value >= short.value - 1e-12);
    }

    #[test]
    fn inner_solver_restarts_agree() {
        // Fixed support: the inner problem is concave, so random restarts
        // must agree.
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.2).unwrap(),
                KrausChannel::dephasing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap();
        let kets = vec![
            basis_ket(2, 0),
            basis_ket(2, 1),
            haar_ket(&mut ChaCha8Rng::seed_from_u64(11), 2),
        ];
        let outputs = branch_outputs(&mix, &kets).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut values = Vec::new();
        for _ in 0..5 {
            let raw: Vec<f64> = (0..3).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p0: Vec<f64> = raw.iter().map(|x| x / total).collect();
            let sol = optimize_probs(&outputs, &p0, &InnerBudget::FULL).unwrap();
            values.push(sol.value);
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1e-7, "restart spread {}", hi - lo);
    }

    #[test]
    fn support_never_exceeds_cap() {
        let ch = KrausChannel::depolarizing_qubit(0.1).unwrap();
        let r = holevo_capacity(&ch, &quick_cfg(13)).unwrap();
        assert!(r.argmax_ensemble.len() <= r.support_cap);
        assert_eq!(r.support_cap, 4);
    }
}
