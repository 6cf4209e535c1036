//! Configuration ingestion, subcommand dispatch and report serialization for
//! the `qmemcap` binary.
//!
//! Structured results (capacity, maximin, pack, converse) are JSON documents
//! embedding the resolved run configuration and a schema version; per-m and
//! per-n sweeps (discriminate, typicality) are CSV. With a fixed seed and
//! `--threads 1` every output is byte-identical across runs. The
//! `QMEMCAP_DIM_CAP` environment variable overrides the materialization cap.

use std::fs;

use serde::{Deserialize, Serialize};

use crate::capacity::{holevo_capacity, maximin_capacity, CapacityResult, OptimizerConfig};
use crate::channels::{
    matrix_from_wire, matrix_to_wire, BranchMixture, ChannelSpec, DensityMatrix, Ensemble,
    MixtureSpec, ProductState,
};
use crate::coding::{
    converse_check, evaluate_error, pack_memory, pack_memoryless, Code, CodePovm, PackOutcome,
    PackingConfig,
};
use crate::discrimination::{
    branch_id_success, build_preamble, helstrom_pair, select_m, Preamble, PreambleBuilder,
    ProbeSearchConfig,
};
use crate::matcore::HermitianOperator;
use crate::typicality::{sample_typical_membership, TypicalSpec};
use crate::{Error, Result};

pub const REPORT_SCHEMA: &str = "qmemcap-report/1";
pub const CODE_SCHEMA: &str = "qmemcap-code/1";

/// Resolved invocation; embedded verbatim in every report.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub config: String,
    pub out: Option<String>,
    pub format: String,
    pub seed: u64,
    pub threads: usize,
    pub epsilon: Option<f64>,
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub trials: Option<usize>,
    pub delta: Option<f64>,
    pub code: Option<String>,
    pub code_out: Option<String>,
    pub tol: Option<f64>,
    pub patience: Option<u32>,
    pub max_iterations: Option<u32>,
    pub support_cap: Option<usize>,
}

impl RunConfig {
    pub fn new(command: &str, config: &str) -> Self {
        RunConfig {
            command: command.to_string(),
            config: config.to_string(),
            out: None,
            format: String::new(),
            seed: 0,
            threads: 1,
            epsilon: None,
            n: None,
            m: None,
            trials: None,
            delta: None,
            code: None,
            code_out: None,
            tol: None,
            patience: None,
            max_iterations: None,
            support_cap: None,
        }
    }
}

/// Loads a mixture spec, accepting a bare channel spec as an M = 1 mixture.
/// CPT and weight validation run at load time.
pub fn load_mixture(path: &str) -> Result<BranchMixture> {
    let text = fs::read_to_string(path)?;
    match serde_json::from_str::<MixtureSpec>(&text) {
        Ok(spec) => spec.to_mixture(),
        Err(mixture_err) => match serde_json::from_str::<ChannelSpec>(&text) {
            Ok(spec) => Ok(BranchMixture::single(spec.to_channel()?)),
            Err(channel_err) => Err(Error::Parse {
                path: path.to_string(),
                message: format!(
                    "neither a mixture spec ({mixture_err}) nor a channel spec ({channel_err})"
                ),
            }),
        },
    }
}

/// Dispatches one resolved command. Exit-code mapping is the caller's job via
/// [`Error::exit_code`].
pub fn run(cfg: &RunConfig) -> Result<()> {
    let allowed: &[&str] = match cfg.command.as_str() {
        "capacity" | "maximin" | "pack" | "converse" => &["json"],
        "discriminate" | "typicality" => &["csv", "json"],
        other => {
            return Err(Error::InvalidParameter {
                name: "command",
                message: format!("unknown command `{other}`"),
            })
        }
    };
    let mut cfg = cfg.clone();
    if cfg.format.is_empty() {
        cfg.format = allowed[0].to_string();
    }
    if !allowed.contains(&cfg.format.as_str()) {
        return Err(Error::InvalidParameter {
            name: "format",
            message: format!("command `{}` supports formats {allowed:?}", cfg.command),
        });
    }
    match cfg.command.as_str() {
        "capacity" => run_capacity(&cfg, true),
        "maximin" => run_capacity(&cfg, false),
        "discriminate" => run_discriminate(&cfg),
        "typicality" => run_typicality(&cfg),
        "pack" => run_pack(&cfg),
        "converse" => run_converse(&cfg),
        _ => unreachable!(),
    }
}

fn write_output(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.out {
        Some(path) => {
            fs::write(path, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Parse {
        path: "<report>".into(),
        message: e.to_string(),
    })?;
    s.push('\n');
    Ok(s)
}

// ---------------------------------------------------------------------------
// Wire helpers
// ---------------------------------------------------------------------------

/// Square complex matrix in row-major [re, im] wire form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMatrix {
    pub dim: usize,
    pub entries: Vec<[f64; 2]>,
}

impl WireMatrix {
    pub fn from_operator(op: &HermitianOperator) -> Self {
        WireMatrix {
            dim: op.dim(),
            entries: matrix_to_wire(op.matrix()),
        }
    }

    pub fn to_operator(&self) -> Result<HermitianOperator> {
        HermitianOperator::new(matrix_from_wire(self.dim, self.dim, &self.entries)?)
    }
}

#[derive(Debug, Clone, Serialize)]
struct EnsembleWire {
    probs: Vec<f64>,
    states: Vec<WireMatrix>,
}

impl EnsembleWire {
    fn from_ensemble(ens: &Ensemble) -> Self {
        EnsembleWire {
            probs: ens.probs().to_vec(),
            states: ens
                .states()
                .iter()
                .map(|s| WireMatrix::from_operator(s.op()))
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// capacity / maximin
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct CapacityReport<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    value: f64,
    per_branch_chi: &'a [f64],
    iterations: u32,
    converged: bool,
    support_cap: usize,
    argmax_ensemble: EnsembleWire,
}

fn optimizer_config(cfg: &RunConfig) -> OptimizerConfig {
    let defaults = OptimizerConfig::default();
    OptimizerConfig {
        seed: cfg.seed,
        threads: cfg.threads.max(1),
        tol: cfg.tol.unwrap_or(defaults.tol),
        patience: cfg.patience.unwrap_or(defaults.patience),
        max_iterations: cfg.max_iterations.unwrap_or(defaults.max_iterations),
        support_cap: cfg.support_cap,
    }
}

fn run_capacity(cfg: &RunConfig, single: bool) -> Result<()> {
    let mix = load_mixture(&cfg.config)?;
    let result: CapacityResult = if single {
        if mix.len() != 1 {
            return Err(Error::InvalidParameter {
                name: "config",
                message: format!(
                    "`capacity` expects a single channel, got {} branches; use `maximin`",
                    mix.len()
                ),
            });
        }
        holevo_capacity(mix.branch(0), &optimizer_config(cfg))?
    } else {
        maximin_capacity(&mix, &optimizer_config(cfg))?
    };
    let report = CapacityReport {
        schema: REPORT_SCHEMA,
        config: cfg,
        value: result.value,
        per_branch_chi: &result.per_branch_chi,
        iterations: result.iterations,
        converged: result.converged,
        support_cap: result.support_cap,
        argmax_ensemble: EnsembleWire::from_ensemble(&result.argmax_ensemble),
    };
    write_output(cfg, &to_json_line(&report)?)
}

// ---------------------------------------------------------------------------
// discriminate
// ---------------------------------------------------------------------------

fn run_discriminate(cfg: &RunConfig) -> Result<()> {
    let mix = load_mixture(&cfg.config)?;
    let m_max = cfg.m.unwrap_or(20).max(1);
    let builder = PreambleBuilder::new(
        &mix,
        &ProbeSearchConfig {
            seed: cfg.seed,
            ..ProbeSearchConfig::default()
        },
    )?;
    #[derive(Serialize)]
    struct Row {
        m: usize,
        branch: usize,
        exact_success: f64,
        lemma_bound: f64,
        f: f64,
    }
    let mut rows = Vec::new();
    for m in 1..=m_max {
        let preamble = builder.at_m(m)?;
        let success = branch_id_success(&preamble, &mix)?;
        let bounds = preamble.success_lower_bounds(&mix);
        for (branch, (s, b)) in success.iter().zip(&bounds).enumerate() {
            rows.push(Row {
                m,
                branch,
                exact_success: *s,
                lemma_bound: *b,
                f: preamble.f_max,
            });
        }
    }
    // With --delta, the identification target 1 - delta must be reached
    // within the swept range; otherwise the run fails as bound-not-reached.
    if let Some(delta) = cfg.delta {
        select_m(&builder, &mix, delta, m_max)?;
    }
    let text = if cfg.format == "csv" {
        let mut out = String::from("m,branch,exact_success,lemma_bound,f\n");
        for r in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.m, r.branch, r.exact_success, r.lemma_bound, r.f
            ));
        }
        out
    } else {
        to_json_line(&rows)?
    };
    write_output(cfg, &text)
}

// ---------------------------------------------------------------------------
// typicality
// ---------------------------------------------------------------------------

fn run_typicality(cfg: &RunConfig) -> Result<()> {
    let mix = load_mixture(&cfg.config)?;
    let n_max = cfg.n.unwrap_or(50).max(1);
    let epsilon = cfg.epsilon.unwrap_or(0.1);
    // Reference state: branch-0 image of the maximally mixed input.
    let state = mix
        .branch(0)
        .apply(&DensityMatrix::maximally_mixed(mix.dim_in()))?;
    #[derive(Serialize)]
    struct Row {
        n: usize,
        epsilon: f64,
        mass: f64,
        log2_dim: f64,
        bound: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        mc_mass: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        mc_half_width: Option<f64>,
    }
    let mut rows = Vec::new();
    for n in 1..=n_max {
        let spec = TypicalSpec::average(&state, n, epsilon)?;
        let report = spec.report();
        let mc = cfg
            .trials
            .map(|trials| sample_typical_membership(&spec, cfg.seed, trials));
        rows.push(Row {
            n,
            epsilon,
            mass: report.probability_mass,
            log2_dim: report.log2_dimension,
            bound: n as f64 * (report.center_entropy + epsilon),
            mc_mass: mc.map(|m| m.mass),
            mc_half_width: mc.map(|m| m.half_width),
        });
    }
    let text = if cfg.format == "csv" {
        let mut out = if cfg.trials.is_some() {
            String::from("n,epsilon,mass,log2_dim,bound,mc_mass,mc_half_width\n")
        } else {
            String::from("n,epsilon,mass,log2_dim,bound\n")
        };
        for r in rows {
            match (r.mc_mass, r.mc_half_width) {
                (Some(mm), Some(hw)) => out.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.n, r.epsilon, r.mass, r.log2_dim, r.bound, mm, hw
                )),
                _ => out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.n, r.epsilon, r.mass, r.log2_dim, r.bound
                )),
            }
        }
        out
    } else {
        to_json_line(&rows)?
    };
    write_output(cfg, &text)
}

// ---------------------------------------------------------------------------
// pack
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct PackReport<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    n: usize,
    epsilon: f64,
    #[serde(rename = "N")]
    size: usize,
    rate: f64,
    per_codeword_success: &'a [f64],
    threshold: f64,
    threshold_exponent: f64,
    /// The looser exponent variant chi_hat - eps/2, for comparison with the
    /// default chi_hat - 3eps/4.
    alternate_threshold_exponent: f64,
    candidates_tested: usize,
    p_e: Option<f64>,
    capacity_value: f64,
    codeword_indices: &'a [Vec<usize>],
}

fn run_pack(cfg: &RunConfig) -> Result<()> {
    let mix = load_mixture(&cfg.config)?;
    let n = cfg.n.unwrap_or(4).max(1);
    let epsilon = cfg.epsilon.unwrap_or(0.5);
    let cap_result = maximin_capacity(&mix, &optimizer_config(cfg))?;
    let pack_cfg = PackingConfig::new(epsilon, cap_result.argmax_ensemble.clone(), n)?;
    let outcome: PackOutcome = if mix.len() == 1 {
        pack_memoryless(mix.branch(0), &pack_cfg)?
    } else {
        let m = cfg.m.unwrap_or(4).max(1);
        let preamble = build_preamble(
            &mix,
            m,
            &ProbeSearchConfig {
                seed: cfg.seed,
                ..ProbeSearchConfig::default()
            },
        )?;
        pack_memory(&mix, &preamble, &pack_cfg)?
    };
    let p_e = if outcome.code.size() > 0 {
        Some(evaluate_error(&outcome.code, &mix)?)
    } else {
        None
    };
    let report = PackReport {
        schema: REPORT_SCHEMA,
        config: cfg,
        n,
        epsilon,
        size: outcome.code.size(),
        rate: outcome.code.rate,
        per_codeword_success: &outcome.per_codeword_success,
        threshold: outcome.threshold,
        threshold_exponent: outcome.threshold_exponent,
        alternate_threshold_exponent: outcome.chi_at_ensemble - 0.5 * epsilon,
        candidates_tested: outcome.candidates_tested,
        p_e,
        capacity_value: cap_result.value,
        codeword_indices: &outcome.codeword_indices,
    };
    if let Some(code_path) = &cfg.code_out {
        let bundle = bundle_from_outcome(&outcome, &pack_cfg)?;
        fs::write(code_path, to_json_line(&bundle)?)?;
    }
    write_output(cfg, &to_json_line(&report)?)
}

// ---------------------------------------------------------------------------
// converse
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ConverseReportWire<'a> {
    schema: &'static str,
    config: &'a RunConfig,
    capacity_used: f64,
    rate: f64,
    per_branch_error: &'a [f64],
    average_error: f64,
    fano_lower_bound: f64,
    bound_vacuous: bool,
    per_branch_mutual_info: &'a [f64],
    per_branch_chi_induced: &'a [f64],
    fano_holds: &'a [bool],
    holevo_chain_holds: &'a [bool],
    min_gamma: f64,
}

fn run_converse(cfg: &RunConfig) -> Result<()> {
    let mix = load_mixture(&cfg.config)?;
    let code_path = cfg.code.as_ref().ok_or(Error::InvalidParameter {
        name: "code",
        message: "`converse` requires --code pointing at a code bundle".into(),
    })?;
    let code = load_code(code_path, &mix)?;
    let cap_result = maximin_capacity(&mix, &optimizer_config(cfg))?;
    let report = converse_check(&code, &mix, cap_result.value)?;
    let wire = ConverseReportWire {
        schema: REPORT_SCHEMA,
        config: cfg,
        capacity_used: report.capacity_used,
        rate: report.rate,
        per_branch_error: &report.per_branch_error,
        average_error: report.average_error,
        fano_lower_bound: report.fano_lower_bound,
        bound_vacuous: report.bound_vacuous,
        per_branch_mutual_info: &report.per_branch_mutual_info,
        per_branch_chi_induced: &report.per_branch_chi_induced,
        fano_holds: &report.fano_holds,
        holevo_chain_holds: &report.holevo_chain_holds,
        min_gamma: report.min_gamma,
    };
    write_output(cfg, &to_json_line(&wire)?)
}

// ---------------------------------------------------------------------------
// Code bundles
// ---------------------------------------------------------------------------

/// Replayable code serialization: factor states with per-codeword indices,
/// POVM matrices, and preamble probes (pair projectors are rebuilt
/// deterministically from the probes and the mixture).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeBundle {
    pub schema: String,
    pub n: usize,
    pub factor_states: Vec<WireMatrix>,
    pub codeword_indices: Vec<Vec<usize>>,
    pub povm: PovmBundle,
    pub preamble: Option<PreambleBundle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PovmBundle {
    Plain { elements: Vec<WireMatrix> },
    Branched { per_codeword: Vec<Vec<WireMatrix>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreambleBundle {
    pub m: usize,
    pub probes: Vec<ProbeBundle>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeBundle {
    pub i: usize,
    pub j: usize,
    pub state: WireMatrix,
}

fn bundle_from_outcome(outcome: &PackOutcome, pack_cfg: &PackingConfig) -> Result<CodeBundle> {
    let factor_states = pack_cfg
        .ensemble
        .states()
        .iter()
        .map(|s| WireMatrix::from_operator(s.op()))
        .collect();
    let povm = match &outcome.code.povm {
        CodePovm::Plain(elements) => PovmBundle::Plain {
            elements: elements.iter().map(WireMatrix::from_operator).collect(),
        },
        CodePovm::Branched(per_codeword) => PovmBundle::Branched {
            per_codeword: per_codeword
                .iter()
                .map(|row| row.iter().map(WireMatrix::from_operator).collect())
                .collect(),
        },
    };
    let preamble = outcome.code.preamble.as_ref().map(|pre| PreambleBundle {
        m: pre.m,
        probes: pre
            .pairs()
            .iter()
            .map(|pair| ProbeBundle {
                i: pair.i,
                j: pair.j,
                state: WireMatrix::from_operator(
                    pair.probe.as_ref().expect("packed preamble has probes").op(),
                ),
            })
            .collect(),
    });
    Ok(CodeBundle {
        schema: CODE_SCHEMA.to_string(),
        n: outcome.code.n,
        factor_states,
        codeword_indices: outcome.codeword_indices.clone(),
        povm,
        preamble,
    })
}

/// Loads and validates a code bundle against the mixture it will be
/// evaluated on (preamble projectors are rebuilt from the stored probes).
pub fn load_code(path: &str, mix: &BranchMixture) -> Result<Code> {
    let text = fs::read_to_string(path)?;
    let bundle: CodeBundle = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_string(),
        message: e.to_string(),
    })?;
    code_from_bundle(&bundle, mix)
}

pub fn code_from_bundle(bundle: &CodeBundle, mix: &BranchMixture) -> Result<Code> {
    let factors = bundle
        .factor_states
        .iter()
        .map(|w| DensityMatrix::new(w.to_operator()?))
        .collect::<Result<Vec<_>>>()?;
    let codewords = bundle
        .codeword_indices
        .iter()
        .map(|seq| {
            let states = seq
                .iter()
                .map(|&j| {
                    factors.get(j).cloned().ok_or(Error::InvalidParameter {
                        name: "codeword_indices",
                        message: format!("factor index {j} out of range"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            ProductState::new(states)
        })
        .collect::<Result<Vec<_>>>()?;
    let povm = match &bundle.povm {
        PovmBundle::Plain { elements } => CodePovm::Plain(
            elements
                .iter()
                .map(|w| w.to_operator())
                .collect::<Result<Vec<_>>>()?,
        ),
        PovmBundle::Branched { per_codeword } => CodePovm::Branched(
            per_codeword
                .iter()
                .map(|row| row.iter().map(|w| w.to_operator()).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    let preamble = match &bundle.preamble {
        None => None,
        Some(pre) => {
            let mut pairs = Vec::with_capacity(pre.probes.len());
            for probe in &pre.probes {
                if probe.i >= mix.len() || probe.j >= mix.len() || probe.i >= probe.j {
                    return Err(Error::InvalidParameter {
                        name: "preamble",
                        message: format!("invalid probe pair ({}, {})", probe.i, probe.j),
                    });
                }
                let state = DensityMatrix::new(probe.state.to_operator()?)?;
                let sigma_i = mix.branch(probe.i).apply(&state)?;
                let sigma_j = mix.branch(probe.j).apply(&state)?;
                let mut disc = helstrom_pair(
                    mix.gammas()[probe.i],
                    &sigma_i,
                    mix.gammas()[probe.j],
                    &sigma_j,
                    pre.m,
                )?;
                disc.i = probe.i;
                disc.j = probe.j;
                disc.probe = Some(state);
                pairs.push(disc);
            }
            Some(Preamble::from_parts(pairs, pre.m, mix.len())?)
        }
    };
    let code = Code::new(codewords, preamble, povm, bundle.n)?;
    code.validate_povm()?;
    Ok(code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::KrausChannel;
    use approx::assert_abs_diff_eq;

    fn write_temp(name: &str, contents: &str) -> String {
        let path = std::env::temp_dir().join(format!("qmemcap-test-{}-{name}", std::process::id()));
        fs::write(&path, contents).unwrap();
        path.to_string_lossy().into_owned()
    }

    fn identity_channel_json() -> String {
        serde_json::to_string(&ChannelSpec::from_channel(&KrausChannel::identity(2))).unwrap()
    }

    #[test]
    fn load_single_channel_as_mixture() {
        let path = write_temp("id.json", &identity_channel_json());
        let mix = load_mixture(&path).unwrap();
        assert_eq!(mix.len(), 1);
        assert_eq!(mix.gammas(), &[1.0]);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn malformed_kraus_names_the_field() {
        let bad = r#"{"dim_in": 2, "dim_out": 2, "kraus": [[[1.0, 0.0], [0.0, 0.0]]]}"#;
        let path = write_temp("bad.json", bad);
        let err = load_mixture(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kraus"), "message was: {msg}");
        assert_eq!(err.exit_code(), 2);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn depolarizing_mixture_loads_with_tight_completeness() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.2).unwrap(),
                KrausChannel::depolarizing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap();
        let spec = MixtureSpec::from_mixture(&mix);
        let path = write_temp("mix.json", &serde_json::to_string(&spec).unwrap());
        let loaded = load_mixture(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        // Kraus completeness of the generator set is exact to 1e-12.
        for branch in loaded.branches() {
            let mut sum = crate::matcore::CMatrix::zeros(2, 2);
            for k in branch.kraus_ops() {
                sum += k.adjoint() * k;
            }
            let dev = crate::matcore::max_abs(&(sum - crate::matcore::CMatrix::identity(2, 2)));
            assert!(dev <= 1e-12, "completeness deviation {dev}");
        }
        fs::remove_file(&path).ok();
    }

    #[test]
    fn capacity_run_writes_report() {
        let spec_path = write_temp("cap-id.json", &identity_channel_json());
        let out_path = write_temp("cap-out.json", "");
        let mut cfg = RunConfig::new("capacity", &spec_path);
        cfg.out = Some(out_path.clone());
        cfg.format = "json".into();
        cfg.seed = 7;
        run(&cfg).unwrap();
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(&out_path).unwrap()).unwrap();
        assert_eq!(report["schema"], REPORT_SCHEMA);
        let value = report["value"].as_f64().unwrap();
        assert_abs_diff_eq!(value, 1.0, epsilon = 1e-6);
        assert_eq!(report["config"]["command"], "capacity");
        fs::remove_file(&spec_path).ok();
        fs::remove_file(&out_path).ok();
    }

    #[test]
    fn capacity_rejects_multibranch_input() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![KrausChannel::identity(2), KrausChannel::depolarizing_qubit(0.4).unwrap()],
        )
        .unwrap();
        let path = write_temp(
            "multi.json",
            &serde_json::to_string(&MixtureSpec::from_mixture(&mix)).unwrap(),
        );
        let mut cfg = RunConfig::new("capacity", &path);
        cfg.format = "json".into();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        fs::remove_file(&path).ok();
    }

    #[test]
    fn pack_over_cap_exits_with_size_limit() {
        let path = write_temp("cap-over.json", &identity_channel_json());
        let mut cfg = RunConfig::new("pack", &path);
        cfg.n = Some(20); // 2^20 output dimension exceeds the default cap
        cfg.epsilon = Some(0.5);
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 5, "got {err}");
        fs::remove_file(&path).ok();
    }

    #[test]
    fn discriminate_delta_unreachable_exits_bound_not_reached() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.2).unwrap(),
                KrausChannel::depolarizing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap();
        let path = write_temp(
            "disc-pair.json",
            &serde_json::to_string(&MixtureSpec::from_mixture(&mix)).unwrap(),
        );
        let out = write_temp("disc-out.csv", "");
        let mut cfg = RunConfig::new("discriminate", &path);
        cfg.out = Some(out.clone());
        cfg.m = Some(3);
        cfg.delta = Some(0.05); // unreachable within m <= 3
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 4, "got {err}");
        fs::remove_file(&path).ok();
        fs::remove_file(&out).ok();
    }

    #[test]
    fn code_bundle_round_trips() {
        let ch = KrausChannel::depolarizing_qubit(0.5).unwrap();
        let ens = Ensemble::uniform(vec![
            DensityMatrix::basis(2, 0),
            DensityMatrix::basis(2, 1),
        ])
        .unwrap();
        let cfg = PackingConfig::new(0.75, ens, 4).unwrap();
        let outcome = pack_memoryless(&ch, &cfg).unwrap();
        assert!(outcome.code.size() >= 1);
        let bundle = bundle_from_outcome(&outcome, &cfg).unwrap();
        let text = serde_json::to_string(&bundle).unwrap();
        let parsed: CodeBundle = serde_json::from_str(&text).unwrap();
        let mix = BranchMixture::single(ch);
        let loaded = code_from_bundle(&parsed, &mix).unwrap();
        assert_eq!(loaded.size(), outcome.code.size());
        let e1 = evaluate_error(&outcome.code, &mix).unwrap();
        let e2 = evaluate_error(&loaded, &mix).unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-12);
    }

    #[test]
    fn branched_bundle_round_trips_with_preamble() {
        let mix = BranchMixture::new(
            vec![0.5, 0.5],
            vec![
                KrausChannel::depolarizing_qubit(0.5).unwrap(),
                KrausChannel::dephasing_qubit(0.5).unwrap(),
            ],
        )
        .unwrap();
        let pre = build_preamble(&mix, 6, &ProbeSearchConfig::default()).unwrap();
        let ens = Ensemble::uniform(vec![
            DensityMatrix::basis(2, 0),
            DensityMatrix::basis(2, 1),
        ])
        .unwrap();
        let cfg = PackingConfig::new(0.75, ens, 3).unwrap();
        let outcome = pack_memory(&mix, &pre, &cfg).unwrap();
        assert!(outcome.code.size() >= 1);
        let bundle = bundle_from_outcome(&outcome, &cfg).unwrap();
        let text = serde_json::to_string(&bundle).unwrap();
        let parsed: CodeBundle = serde_json::from_str(&text).unwrap();
        let loaded = code_from_bundle(&parsed, &mix).unwrap();
        let e1 = evaluate_error(&outcome.code, &mix).unwrap();
        let e2 = evaluate_error(&loaded, &mix).unwrap();
        assert_abs_diff_eq!(e1, e2, epsilon = 1e-10);
    }
}
