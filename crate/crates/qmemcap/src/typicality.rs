//! Exact typical-subspace quantities via type-class dynamic programming.
//!
//! Nothing here materializes a 2^n-dimensional matrix: a spectrum is reduced
//! to per-copy letters (weight, log₂ eigenvalue), letters with equal log value
//! are merged with multiplicity, and masses/dimensions are summed over count
//! vectors. Type-class enumeration costs O(n^(L-1)) for L distinct letters;
//! larger alphabets fall back to Monte-Carlo with reported confidence.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channels::{DensityMatrix, Ensemble};
use crate::comb::{composition_count, for_each_composition, LnFactorials};
use crate::matcore::eig_hermitian;
use crate::{tol, Error, Result};

/// Class enumeration limit before the Monte-Carlo fallback kicks in.
const MAX_CLASSES: u128 = 20_000_000;
const FALLBACK_TRIALS: usize = 200_000;
const FALLBACK_SEED: u64 = 0x5eed_717c;

/// Typicality window rule shared by this module and the coding projectors:
/// half-open window [-ε - slack, ε + slack) with the slack biased toward
/// inclusion so boundary classes classify deterministically.
pub(crate) fn in_window(t: f64, epsilon: f64) -> bool {
    t >= -epsilon - tol::WINDOW_SLACK && t < epsilon + tol::WINDOW_SLACK
}

#[derive(Debug, Clone, Copy)]
struct Letter {
    /// Probability weight of the letter (λ̄_k, or p_j·λ_{j,k}).
    weight: f64,
    /// log₂ of the eigenvalue the letter stands for.
    log2_value: f64,
    /// Weight counting eigenvectors: multiplicity for the average case,
    /// Σ p_j over merged letters for the conditional case.
    dim_weight: f64,
}

/// Per-copy spectrum, copy count and window width for one typicality query.
#[derive(Debug, Clone)]
pub struct TypicalSpec {
    letters: Vec<Letter>,
    pub n: usize,
    pub epsilon: f64,
    /// Expected -log₂ eigenvalue per copy: S(σ̄) for the average case, S̄ for
    /// the conditional case.
    pub center_entropy: f64,
}

/// Exact (or flagged Monte-Carlo) mass and dimension of a typical subspace.
#[derive(Debug, Clone, Copy)]
pub struct TypicalReport {
    pub probability_mass: f64,
    /// log₂ of the typical dimension (expected dimension in the conditional
    /// case); NaN when the Monte-Carlo fallback was used.
    pub log2_dimension: f64,
    pub n: usize,
    pub epsilon: f64,
    pub center_entropy: f64,
    /// False when the mass comes from the Monte-Carlo fallback.
    pub exact: bool,
    /// 95% confidence half-width of the fallback estimate.
    pub half_width: Option<f64>,
}

/// Monte-Carlo estimate of a typicality mass.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mass: f64,
    pub half_width: f64,
    pub trials: usize,
}

impl TypicalSpec {
    /// Spec for the average-state typical subspace of σ̄⊗ⁿ: letters are the
    /// eigenvalues of σ̄, the center is S(σ̄). Zero eigenvalues are dropped
    /// from the alphabet (they carry no mass and no log value).
    pub fn average(state: &DensityMatrix, n: usize, epsilon: f64) -> Result<Self> {
        let spec = eig_hermitian(state.op())?;
        let raw: Vec<(f64, f64, f64)> = spec
            .eigenvalues()
            .iter()
            .filter(|&&v| v > tol::ENTROPY_FLOOR)
            .map(|&v| (v, v.log2(), 1.0))
            .collect();
        Self::from_raw(raw, n, epsilon)
    }

    /// Spec for the conditional typical projectors: letters are pairs (j, k)
    /// with weight p_j·λ_{j,k} and value λ_{j,k}, centered at the average
    /// output entropy S̄ = Σ p_j S(σ_j). `outputs` is the ensemble already
    /// pushed through the channel branch of interest.
    pub fn conditional(outputs: &Ensemble, n: usize, epsilon: f64) -> Result<Self> {
        let mut raw = Vec::new();
        for (p, state) in outputs.probs().iter().zip(outputs.states()) {
            if *p <= 0.0 {
                continue;
            }
            let spec = eig_hermitian(state.op())?;
            for &v in spec.eigenvalues() {
                if v > tol::ENTROPY_FLOOR {
                    raw.push((p * v, v.log2(), *p));
                }
            }
        }
        Self::from_raw(raw, n, epsilon)
    }

    fn from_raw(mut raw: Vec<(f64, f64, f64)>, n: usize, epsilon: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                message: "copy count must be at least 1".into(),
            });
        }
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                message: format!("window width must be positive, got {epsilon}"),
            });
        }
        if raw.is_empty() {
            return Err(Error::Empty {
                what: "typicality alphabet",
            });
        }
        let total: f64 = raw.iter().map(|r| r.0).sum();
        if (total - 1.0).abs() > tol::UNIT_TRACE {
            return Err(Error::InvalidProbabilities {
                reason: format!("per-copy letter weights sum to {total}, expected 1"),
            });
        }
        // Merge letters with equal log values; by the multinomial theorem the
        // merged enumeration reproduces the unmerged sums exactly.
        raw.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let mut letters: Vec<Letter> = Vec::new();
        for (w, l, dw) in raw {
            match letters.last_mut() {
                Some(prev) if (prev.log2_value - l).abs() <= 1e-12 => {
                    prev.weight += w;
                    prev.dim_weight += dw;
                }
                _ => letters.push(Letter {
                    weight: w,
                    log2_value: l,
                    dim_weight: dw,
                }),
            }
        }
        for letter in &mut letters {
            letter.weight /= total;
        }
        let center_entropy = -letters
            .iter()
            .map(|l| l.weight * l.log2_value)
            .sum::<f64>();
        Ok(TypicalSpec {
            letters,
            n,
            epsilon,
            center_entropy,
        })
    }

    fn class_count(&self) -> u128 {
        composition_count(self.n, self.letters.len())
    }

    /// Exact mass and log-dimension by type-class enumeration, falling back
    /// to a flagged Monte-Carlo estimate when the class count is impractical.
    pub fn report(&self) -> TypicalReport {
        if self.class_count() > MAX_CLASSES {
            let mc = self.sample_mass(FALLBACK_SEED, FALLBACK_TRIALS);
            return TypicalReport {
                probability_mass: mc.mass,
                log2_dimension: f64::NAN,
                n: self.n,
                epsilon: self.epsilon,
                center_entropy: self.center_entropy,
                exact: false,
                half_width: Some(mc.half_width),
            };
        }
        let lf = LnFactorials::up_to(self.n);
        let ln_w: Vec<f64> = self.letters.iter().map(|l| l.weight.ln()).collect();
        let ln_d: Vec<f64> = self.letters.iter().map(|l| l.dim_weight.ln()).collect();
        let mut mass = 0.0f64;
        // The dimension is typically ~2^n, so it accumulates in log space.
        let mut dim_terms: Vec<f64> = Vec::new();
        let mut dim_max = f64::NEG_INFINITY;
        for_each_composition(self.n, self.letters.len(), |counts| {
            let mut logsum = 0.0;
            for (c, l) in counts.iter().zip(&self.letters) {
                logsum += *c as f64 * l.log2_value;
            }
            let t = logsum / self.n as f64 + self.center_entropy;
            if !in_window(t, self.epsilon) {
                return;
            }
            let ln_mult = lf.ln_multinomial(self.n, counts);
            let mut ln_mass = ln_mult;
            let mut ln_dim = ln_mult;
            for (k, &c) in counts.iter().enumerate() {
                if c > 0 {
                    ln_mass += c as f64 * ln_w[k];
                    ln_dim += c as f64 * ln_d[k];
                }
            }
            mass += ln_mass.exp();
            dim_max = dim_max.max(ln_dim);
            dim_terms.push(ln_dim);
        });
        let log2_dimension = if dim_terms.is_empty() {
            f64::NEG_INFINITY
        } else {
            let sum: f64 = dim_terms.iter().map(|&t| (t - dim_max).exp()).sum();
            (dim_max + sum.ln()) / std::f64::consts::LN_2
        };
        TypicalReport {
            probability_mass: mass.min(1.0),
            log2_dimension,
            n: self.n,
            epsilon: self.epsilon,
            center_entropy: self.center_entropy,
            exact: true,
            half_width: None,
        }
    }

    /// i.i.d. Monte-Carlo estimate of the typical mass with a 95% confidence
    /// half-width.
    pub fn sample_mass(&self, seed: u64, trials: usize) -> McEstimate {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cumulative: Vec<f64> = self
            .letters
            .iter()
            .scan(0.0, |acc, l| {
                *acc += l.weight;
                Some(*acc)
            })
            .collect();
        let mut hits = 0usize;
        for _ in 0..trials {
            let mut logsum = 0.0;
            for _ in 0..self.n {
                let u: f64 = rng.gen();
                let idx = cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(self.letters.len() - 1);
                logsum += self.letters[idx].log2_value;
            }
            let t = logsum / self.n as f64 + self.center_entropy;
            if in_window(t, self.epsilon) {
                hits += 1;
            }
        }
        let p = hits as f64 / trials as f64;
        McEstimate {
            mass: p,
            half_width: 1.96 * (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
        }
    }
}

/// Typical-subspace mass and dimension for σ̄⊗ⁿ.
pub fn average_typical(state: &DensityMatrix, n: usize, epsilon: f64) -> Result<TypicalReport> {
    Ok(TypicalSpec::average(state, n, epsilon)?.report())
}

/// Expected conditional typical mass E Tr(σ_j̲ P_j̲) over i.i.d. sequences
/// drawn from the ensemble, computed exactly over the joint (j, k) alphabet.
pub fn conditional_typical(outputs: &Ensemble, n: usize, epsilon: f64) -> Result<TypicalReport> {
    Ok(TypicalSpec::conditional(outputs, n, epsilon)?.report())
}

/// Smallest n ≤ n_max whose typical mass exceeds `target_mass`, by
/// incremental scan with the builder supplying the spec at each n.
pub fn min_n_for_mass(
    mut spec_builder: impl FnMut(usize) -> Result<TypicalSpec>,
    target_mass: f64,
    n_max: usize,
) -> Result<usize> {
    if !target_mass.is_finite() || target_mass <= 0.0 || target_mass >= 1.0 {
        return Err(Error::InvalidParameter {
            name: "target_mass",
            message: format!("target mass must lie in (0,1), got {target_mass}"),
        });
    }
    let mut best = 0.0f64;
    for n in 1..=n_max {
        let report = spec_builder(n)?.report();
        if report.probability_mass > target_mass {
            return Ok(n);
        }
        best = best.max(report.probability_mass);
    }
    Err(Error::BoundNotReached { best, limit: n_max })
}

/// Monte-Carlo cross-validation of the DP mass.
pub fn sample_typical_membership(spec: &TypicalSpec, seed: u64, trials: usize) -> McEstimate {
    spec.sample_mass(seed, trials)
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

    /// Independent ten-line binomial oracle for a two-letter alphabet.
    fn binomial_oracle(lam0: f64, lam1: f64, n: usize, epsilon: f64) -> (f64, f64) {
        let s = -(lam0 * lam0.log2() + lam1 * lam1.log2());
        let (mut mass, mut dim) = (0.0f64, 0.0f64);
        let mut binom = 1.0f64;
        for k in 0..=n {
            let t = ((n - k) as f64 * lam0.log2() + k as f64 * lam1.log2()) / n as f64 + s;
            if in_window(t, epsilon) {
                mass += binom * lam0.powi((n - k) as i32) * lam1.powi(k as i32);
                dim += binom;
            }
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
        (mass, dim.log2())
    }

    #[test]
    fn degenerate_spectrum_has_full_mass_and_dimension() {
        let spec = TypicalSpec::average(&DensityMatrix::maximally_mixed(2), 12, 0.05).unwrap();
        let report = spec.report();
        assert_abs_diff_eq!(report.probability_mass, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.log2_dimension, 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(report.center_entropy, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pure_state_has_mass_one_and_zero_entropy() {
        let report = average_typical(&DensityMatrix::basis(2, 0), 7, 0.2).unwrap();
        assert_abs_diff_eq!(report.probability_mass, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.center_entropy, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.log2_dimension, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn binary_dp_matches_independent_oracle() {
        let state = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        let report = average_typical(&state, 50, 0.1).unwrap();
        let (mass, log2dim) = binomial_oracle(0.75, 0.25, 50, 0.1);
        assert_abs_diff_eq!(report.probability_mass, mass, epsilon = 1e-12);
        assert_abs_diff_eq!(report.log2_dimension, log2dim, epsilon = 1e-9);
        assert!(report.exact);
    }

    #[test]
    fn dimension_bound_holds() {
        let state = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        for n in [1usize, 5, 20, 50, 200] {
            for eps in [0.02, 0.1, 0.3] {
                let r = average_typical(&state, n, eps).unwrap();
                assert!(
                    r.log2_dimension <= n as f64 * (r.center_entropy + eps) + 1e-9,
                    "dimension bound violated at n={n}, eps={eps}"
                );
            }
        }
    }

    #[test]
    fn mass_is_nondecreasing_in_epsilon() {
        let state = DensityMatrix::from_real_diagonal(&[0.6, 0.3, 0.1]).unwrap();
        let mut last = 0.0;
        for eps in [0.01, 0.05, 0.1, 0.2, 0.4, 0.8] {
            let r = average_typical(&state, 30, eps).unwrap();
            assert!(r.probability_mass >= last - 1e-15);
            last = r.probability_mass;
        }
    }

    #[test]
    fn conditional_reduces_to_average_for_single_state() {
        let state = DensityMatrix::from_real_diagonal(&[0.9, 0.1]).unwrap();
        let ens = Ensemble::new(vec![1.0], vec![state.clone()]).unwrap();
        let a = average_typical(&state, 25, 0.12).unwrap();
        let c = conditional_typical(&ens, 25, 0.12).unwrap();
        assert_abs_diff_eq!(a.probability_mass, c.probability_mass, epsilon = 1e-12);
        assert_abs_diff_eq!(a.log2_dimension, c.log2_dimension, epsilon = 1e-12);
        assert_abs_diff_eq!(a.center_entropy, c.center_entropy, epsilon = 1e-12);
    }

    #[test]
    fn conditional_matches_joint_alphabet_oracle() {
        // {½ diag(0.9,0.1), ½ diag(0.75,0.25)} at n=40: direct convolution
        // oracle over the 4 joint letters with exact binomial recurrences.
        let ens = Ensemble::uniform(vec![
            DensityMatrix::from_real_diagonal(&[0.9, 0.1]).unwrap(),
            DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap(),
        ])
        .unwrap();
        let n = 40usize;
        let eps = 0.15;
        let sbar = 0.5 * h(0.1) + 0.5 * h(0.25);
        let w: [f64; 4] = [0.5 * 0.9, 0.5 * 0.1, 0.5 * 0.75, 0.5 * 0.25];
        let l = [
            0.9f64.log2(),
            0.1f64.log2(),
            0.75f64.log2(),
            0.25f64.log2(),
        ];
        let binom = |n: usize, k: usize| -> f64 {
            let mut b = 1.0f64;
            for i in 0..k {
                b = b * (n - i) as f64 / (i + 1) as f64;
            }
            b
        };
        let mut mass = 0.0f64;
        for c0 in 0..=n {
            for c1 in 0..=(n - c0) {
                for c2 in 0..=(n - c0 - c1) {
                    let c3 = n - c0 - c1 - c2;
                    let logsum = c0 as f64 * l[0]
                        + c1 as f64 * l[1]
                        + c2 as f64 * l[2]
                        + c3 as f64 * l[3];
                    let t = logsum / n as f64 + sbar;
                    if !in_window(t, eps) {
                        continue;
                    }
                    let mult =
                        binom(n, c0) * binom(n - c0, c1) * binom(n - c0 - c1, c2);
                    mass += mult
                        * w[0].powi(c0 as i32)
                        * w[1].powi(c1 as i32)
                        * w[2].powi(c2 as i32)
                        * w[3].powi(c3 as i32);
                }
            }
        }
        let spec = TypicalSpec::conditional(&ens, n, eps).unwrap();
        assert_abs_diff_eq!(spec.center_entropy, sbar, epsilon = 1e-12);
        let report = spec.report();
        assert_abs_diff_eq!(report.probability_mass, mass, epsilon = 1e-10);
    }

    #[test]
    fn min_n_scan_finds_degenerate_immediately() {
        let mixed = DensityMatrix::maximally_mixed(2);
        let n = min_n_for_mass(|n| TypicalSpec::average(&mixed, n, 0.1), 0.99, 10).unwrap();
        assert_eq!(n, 1);
        let pure = DensityMatrix::basis(2, 0);
        let n = min_n_for_mass(|n| TypicalSpec::average(&pure, n, 0.1), 0.99, 10).unwrap();
        assert_eq!(n, 1);
    }

    #[test]
    fn min_n_scan_reports_best_on_failure() {
        let state = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        let err = min_n_for_mass(|n| TypicalSpec::average(&state, n, 0.05), 0.9999, 3);
        match err {
            Err(Error::BoundNotReached { best, limit }) => {
                assert_eq!(limit, 3);
                assert!(best < 0.9999);
            }
            other => panic!("expected BoundNotReached, got {other:?}"),
        }
    }

    #[test]
    fn monte_carlo_covers_dp_value() {
        let state = DensityMatrix::from_real_diagonal(&[0.75, 0.25]).unwrap();
        let spec = TypicalSpec::average(&state, 50, 0.1).unwrap();
        let dp = spec.report().probability_mass;
        let mc = sample_typical_membership(&spec, 99, 100_000);
        assert!(
            (mc.mass - dp).abs() <= 3.0 * mc.half_width + 1e-9,
            "MC {} vs DP {} (hw {})",
            mc.mass,
            dp,
            mc.half_width
        );
    }

    #[test]
    fn monte_carlo_handles_extreme_masses() {
        let mixed = DensityMatrix::maximally_mixed(2);
        let spec = TypicalSpec::average(&mixed, 10, 0.1).unwrap();
        let mc = spec.sample_mass(5, 2000);
        assert_abs_diff_eq!(mc.mass, 1.0, epsilon = 0.0);

        // Off-center window with tiny epsilon: mass ~ 0.
        let state = DensityMatrix::from_real_diagonal(&[0.999, 0.001]).unwrap();
        let spec = TypicalSpec::average(&state, 3, 1e-6).unwrap();
        let mc = spec.sample_mass(6, 2000);
        assert_abs_diff_eq!(mc.mass, 0.0, epsilon = 0.0);
    }
}
