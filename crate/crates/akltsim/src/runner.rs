//! Scenario driver: reproducible experiment runs, JSON reports, DOT graphs.
//!
//! A [`RunConfig`] (versioned JSON, unknown fields rejected) names a
//! [`Scenario`] and fixes the lattice, seed, and trial count; [`run`]
//! executes the trials — in parallel when the `parallel` feature is enabled,
//! with [`run_sequential`] always available — and assembles a [`RunReport`].
//! Each trial derives its own RNG stream from `(seed, trial index)`, so the
//! report body depends only on the configuration; wall-clock numbers live in
//! a separate `timings` field that reproducibility checks strip off.
//!
//! Scenarios:
//! - `chain-to-cluster`: site sampling, domain analysis, reduction, and
//!   cluster certification per trial; emits the certified graph.
//! - `axis-frequencies`: site sampling only; aggregates axis tallies.
//! - `oracle-crosscheck`: exhaustive enumeration of every per-site axis
//!   branch, with dense-statevector probability and fidelity comparison.
//! - `coupling-demo`: the 1D pipeline plus a junction action per merged
//!   pair (all-connect unless `coupling_modes` overrides).
//! - `distill-2d`: the full brick-wall distillation pipeline.
//!
//! [`write_artifacts`] emits `report.json`, `outcomes.json`, and per-trial
//! `graph_<trial>.dot` files atomically (write to a temp name, then rename).
//! [`bench`] times the per-chain tableau pipeline at scale and checks the
//! quadratic tableau-memory bound.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{
    apply_coupling, basis_flip_gate, CouplingChoice, CouplingMode, PauliFrame,
};
use crate::dense::{
    apply_kraus, build_aklt, fidelity, spin, tableau_to_dense, DenseState, DEFAULT_CAP,
};
use crate::distill::{
    distill_encoded, plan_brickwall, replay_trajectory, DistillationReport,
};
use crate::encoding::{analyze, logical_x_axis, EncodedState, ReduceReport};
use crate::graph::GraphView;
use crate::lattice::{build, LatticeSpec, SiteMap};
use crate::pauli::{Axis, Pauli};
use crate::povm::{run_all, OutcomeRecord};
use crate::rng::{frac, frac_to_f64, Frac, TrialRng};
use crate::stab::StabilizerState;

/// Config format version this build reads.
pub const SCHEMA_VERSION: u32 = 1;

const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Named experiment pipelines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Sample every site, analyze domains, reduce, certify, extract graphs.
    #[serde(rename = "chain-to-cluster")]
    ChainToCluster,
    /// Sample every site and tally axis outcomes; no analysis.
    #[serde(rename = "axis-frequencies")]
    AxisFrequencies,
    /// Enumerate all 3^sites axis branches; compare probabilities and final
    /// states against the dense statevector.  Requires `"oracle": true`.
    #[serde(rename = "oracle-crosscheck")]
    OracleCrosscheck,
    /// The 1D pipeline plus one junction action per merged pair.
    #[serde(rename = "coupling-demo")]
    CouplingDemo,
    /// Plan and execute a brick-wall distillation of the 2D lattice.
    #[serde(rename = "distill-2d")]
    Distill2d,
}

fn default_trials() -> usize {
    1
}
fn default_cap() -> usize {
    DEFAULT_CAP
}
fn default_detail() -> usize {
    16
}
fn default_fidelity_tol() -> f64 {
    1e-10
}
fn default_probability_tol() -> f64 {
    1e-12
}

/// One experiment: scenario, lattice, randomness, and output knobs.
///
/// Unknown JSON fields are rejected so a config either means exactly what it
/// says or fails loudly.  `axis_plan` forces the listed sites' axes (entries
/// may be `null` to sample freely); `coupling_modes` overrides the junction
/// action per merge in `coupling-demo`.  `detail_trials` caps how many
/// leading trials keep their full per-trial detail in the report; aggregate
/// statistics always cover every trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub scenario: Scenario,
    pub lattice: LatticeSpec,
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis_plan: Option<Vec<Option<Axis>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_modes: Option<Vec<CouplingMode>>,
    /// Cross-check each trial against the dense statevector.
    #[serde(default)]
    pub oracle: bool,
    /// Most qubits the dense oracle will represent (2^cap amplitudes).
    #[serde(default = "default_cap")]
    pub dense_cap: usize,
    #[serde(default = "default_detail")]
    pub detail_trials: usize,
    #[serde(default = "default_fidelity_tol")]
    pub oracle_fidelity_tol: f64,
    #[serde(default = "default_probability_tol")]
    pub oracle_probability_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Minimal config for a scenario; everything else at defaults.
    pub fn new(scenario: Scenario, lattice: LatticeSpec, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            scenario,
            lattice,
            seed,
            trials: default_trials(),
            axis_plan: None,
            coupling_modes: None,
            oracle: false,
            dense_cap: default_cap(),
            detail_trials: default_detail(),
            oracle_fidelity_tol: default_fidelity_tol(),
            oracle_probability_tol: default_probability_tol(),
            out_dir: None,
        }
    }

    /// Parse a JSON config; errors carry the offending line and column.
    pub fn from_json(s: &str) -> Result<Self, RunnerError> {
        serde_json::from_str(s).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Check the config against the built lattice and the scenario's needs.
    pub fn validate(&self, map: &SiteMap) -> Result<(), RunnerError> {
        let fail = |m: String| Err(RunnerError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "unsupported schema_version {} (this build reads {})",
                self.schema_version, SCHEMA_VERSION
            ));
        }
        if self.trials == 0 {
            return fail("trials must be at least 1".into());
        }
        if let Some(p) = &self.axis_plan {
            if p.len() != map.a_sites.len() {
                return fail(format!(
                    "axis_plan has {} entries, lattice has {} sites",
                    p.len(),
                    map.a_sites.len()
                ));
            }
        }
        if let Some(m) = &self.coupling_modes {
            if m.len() != map.merges.len() {
                return fail(format!(
                    "coupling_modes has {} entries, lattice has {} merges",
                    m.len(),
                    map.merges.len()
                ));
            }
        }
        let wants_dense =
            self.oracle || self.scenario == Scenario::OracleCrosscheck;
        if wants_dense && map.qubits > self.dense_cap {
            return fail(format!(
                "oracle needs at most {} qubits, lattice has {}",
                self.dense_cap, map.qubits
            ));
        }
        match self.scenario {
            Scenario::ChainToCluster => {
                if self.coupling_modes.is_some() {
                    return fail(
                        "chain-to-cluster performs no couplings; drop coupling_modes"
                            .into(),
                    );
                }
            }
            Scenario::AxisFrequencies => {
                if self.axis_plan.is_some() {
                    return fail(
                        "axis-frequencies samples axes; an axis_plan would fix them"
                            .into(),
                    );
                }
                if self.coupling_modes.is_some() {
                    return fail(
                        "axis-frequencies performs no couplings; drop coupling_modes"
                            .into(),
                    );
                }
            }
            Scenario::OracleCrosscheck => {
                if !self.oracle {
                    return fail(
                        "oracle-crosscheck compares against the oracle; set \"oracle\": true"
                            .into(),
                    );
                }
                if self.trials != 1 {
                    return fail(
                        "oracle-crosscheck enumerates branches itself; set trials to 1"
                            .into(),
                    );
                }
                if self.axis_plan.is_some() || self.coupling_modes.is_some() {
                    return fail(
                        "oracle-crosscheck enumerates every axis branch; drop axis_plan and coupling_modes"
                            .into(),
                    );
                }
                if map.a_sites.len() > 12 {
                    return fail(format!(
                        "{} sites give 3^{} branches; exhaustive cap is 12 sites",
                        map.a_sites.len(),
                        map.a_sites.len()
                    ));
                }
            }
            Scenario::CouplingDemo => {
                if map.merges.is_empty() {
                    return fail(
                        "coupling-demo needs a 2-D lattice with merged pairs".into(),
                    );
                }
            }
            Scenario::Distill2d => {
                if self.coupling_modes.is_some() {
                    return fail(
                        "distill-2d plans its own junction modes; drop coupling_modes"
                            .into(),
                    );
                }
                if map.num_chains() < 2 || map.sites_per_chain() < 3 {
                    return fail(
                        "distill-2d needs at least 2 chains and 3 sites per chain"
                            .into(),
                    );
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum RunnerError {
    /// The configuration is unusable; message pinpoints the field (and the
    /// line/column when the JSON itself is at fault).
    #[error("config: {0}")]
    Config(String),
    /// The benchmark pipeline failed mid-flight (certification class).
    #[error("pipeline: {0}")]
    Pipeline(String),
    #[error("report serialization: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl RunnerError {
    /// Script-facing code: 2 for config/output problems, 3 for pipeline
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Pipeline(_) => 3,
            _ => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Report types
// ---------------------------------------------------------------------------

/// Overall outcome of a run, in exit-code order of severity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    CertificationFailed,
    OracleMismatch,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Ok => 0,
            RunStatus::CertificationFailed => 3,
            RunStatus::OracleMismatch => 4,
        }
    }
}

/// Replay recipe for a failed trial: rerun the same seed and stream with the
/// listed axes forced to land on the identical branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub message: String,
    pub seed: u64,
    pub stream: u64,
    pub axes: Vec<Axis>,
}

/// One junction action as executed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub merge: usize,
    pub mode: CouplingMode,
    /// (upper, lower) domain axes at the merge.
    pub axes: (Axis, Axis),
    /// (upper, lower) logical vertices that owned the danglers.
    pub vertices: (usize, usize),
    /// Dangler readouts, `true` = −1.
    pub outcomes: (bool, bool),
}

/// Dense-oracle comparison for one trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    /// Final-state fidelity; absent when the scenario only checks
    /// probabilities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fidelity: Option<f64>,
    /// |tableau probability − dense probability|.
    pub probability_deviation: f64,
    pub pass: bool,
}

/// Everything recorded about one trial.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<OutcomeRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reductions: Vec<ReduceReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub couplings: Vec<CouplingRecord>,
    /// Composed coupling byproduct deltas (reduction byproducts are listed
    /// per reduction).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<PauliFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distillation: Option<DistillationReport>,
    /// `Some(true)` when the trial's certification (or distillation verdict)
    /// held; `None` when the scenario certifies nothing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certified: Option<bool>,
    /// Exact probability of the whole trajectory, as `num/den`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_probability: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleCheck>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<TrialFailure>,
}

impl TrialReport {
    fn empty(trial: usize) -> Self {
        Self {
            trial,
            record: None,
            reductions: Vec::new(),
            couplings: Vec::new(),
            frame: None,
            graph: None,
            distillation: None,
            certified: None,
            branch_probability: None,
            oracle: None,
            failure: None,
        }
    }

    fn fail(&mut self, seed: u64, stream: usize, axes: Vec<Axis>, message: String) {
        self.certified = Some(false);
        self.failure = Some(TrialFailure { message, seed, stream: stream as u64, axes });
    }
}

/// Oracle tallies over every checked trial.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleStats {
    pub checks: usize,
    pub mismatches: usize,
    pub min_fidelity: f64,
    pub max_probability_deviation: f64,
}

/// Whole-run statistics; covers every trial even when per-trial detail is
/// capped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub trials_run: usize,
    pub certification_attempts: usize,
    pub certified_trials: usize,
    pub failed_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pass_rate: Option<f64>,
    /// Axis tallies over every sampled site of every trial.
    pub axis_counts: BTreeMap<String, u64>,
    /// Axis tallies of the first site only (the marginal of interest).
    pub first_site_axis_counts: BTreeMap<String, u64>,
    /// Exact sum of branch probabilities (exhaustive scenarios), `num/den`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_probability: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total_probability_is_one: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleStats>,
}

/// Wall-clock accounting; excluded from reproducibility comparisons.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_ms: f64,
    pub phases_ms: BTreeMap<String, f64>,
}

/// Full run artifact: config echo, verdict, aggregates, per-trial detail.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub status: RunStatus,
    pub aggregate: Aggregate,
    pub trials: Vec<TrialReport>,
    pub timings: Timings,
}

impl RunReport {
    /// 0 ok, 3 certification failure, 4 oracle mismatch.
    pub fn exit_code(&self) -> i32 {
        self.status.exit_code()
    }

    /// One-line human summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "{:?}: {} trials, {} certified, {} failed",
            self.status, self.aggregate.trials_run, self.aggregate.certified_trials,
            self.aggregate.failed_trials
        );
        if let Some(rate) = self.aggregate.pass_rate {
            s.push_str(&format!(", pass rate {rate:.4}"));
        }
        if let Some(o) = &self.aggregate.oracle {
            // 1 - F carries the informative digits at near-unit fidelity.
            s.push_str(&format!(
                ", oracle {} checks / {} mismatches, min fidelity 1 - {:.3e}",
                o.checks,
                o.mismatches,
                1.0 - o.min_fidelity
            ));
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

type Phases = BTreeMap<&'static str, f64>;

fn add_phase(phases: &mut Phases, key: &'static str, since: Instant) {
    *phases.entry(key).or_insert(0.0) += since.elapsed().as_secs_f64() * 1e3;
}

fn axis_key(a: Axis) -> &'static str {
    match a {
        Axis::X => "x",
        Axis::Y => "y",
        Axis::Z => "z",
    }
}

fn fmt_frac(f: &Frac) -> String {
    format!("{}/{}", f.numer(), f.denom())
}

struct Ctx<'a> {
    config: &'a RunConfig,
    map: &'a SiteMap,
    base: Option<&'a DenseState>,
}

/// Run the configured scenario; parallel over trials when the `parallel`
/// feature is compiled in.  Writes artifacts when `out_dir` is set.
pub fn run(config: &RunConfig) -> Result<RunReport, RunnerError> {
    run_with(config, cfg!(feature = "parallel"))
}

/// Same pipeline, forced onto the sequential path (for benches and
/// reproducibility checks).
pub fn run_sequential(config: &RunConfig) -> Result<RunReport, RunnerError> {
    run_with(config, false)
}

fn run_with(config: &RunConfig, parallel: bool) -> Result<RunReport, RunnerError> {
    let started = Instant::now();
    let map = build(&config.lattice)
        .map_err(|e| RunnerError::Config(format!("lattice: {e}")))?;
    config.validate(&map)?;
    let wants_dense = config.oracle || config.scenario == Scenario::OracleCrosscheck;
    let base = if wants_dense {
        Some(
            build_aklt(&map, config.dense_cap)
                .map_err(|e| RunnerError::Config(format!("oracle base state: {e}")))?,
        )
    } else {
        None
    };
    let ctx = Ctx { config, map: &map, base: base.as_ref() };

    let collected = match config.scenario {
        Scenario::OracleCrosscheck => {
            let branches = 3usize.pow(map.a_sites.len() as u32);
            collect_trials(branches, parallel, |b| crosscheck_branch(&ctx, b))
        }
        _ => collect_trials(config.trials, parallel, |t| run_one_trial(&ctx, t)),
    };

    let mut phases_ms: BTreeMap<String, f64> = BTreeMap::new();
    let mut trials: Vec<TrialReport> = Vec::with_capacity(collected.len());
    for (report, phases) in collected {
        for (k, v) in phases {
            *phases_ms.entry(k.to_string()).or_insert(0.0) += v;
        }
        trials.push(report);
    }

    let mut aggregate = aggregate_trials(&trials);
    if config.scenario == Scenario::OracleCrosscheck {
        let mut total = frac(0, 1);
        let mut complete = true;
        for t in &trials {
            match &t.record {
                Some(r) => total += &r.run_probability,
                None => complete = false,
            }
        }
        aggregate.total_probability = Some(fmt_frac(&total));
        aggregate.total_probability_is_one = Some(complete && total == frac(1, 1));
    }
    let status = derive_status(&aggregate);
    trials.truncate(config.detail_trials);

    let report = RunReport {
        config: config.clone(),
        status,
        aggregate,
        trials,
        timings: Timings {
            total_ms: started.elapsed().as_secs_f64() * 1e3,
            phases_ms,
        },
    };
    if let Some(dir) = &config.out_dir {
        write_artifacts(&report, dir)?;
    }
    Ok(report)
}

/// Map trials to reports; worker pool when requested and compiled in, plain
/// loop otherwise.  Output is sorted by trial index either way.
fn collect_trials<F>(n: usize, parallel: bool, f: F) -> Vec<(TrialReport, Phases)>
where
    F: Fn(usize) -> (TrialReport, Phases) + Sync,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            use rayon::prelude::*;
            let mut out: Vec<(TrialReport, Phases)> =
                (0..n).into_par_iter().map(&f).collect();
            out.sort_by_key(|(r, _)| r.trial);
            return out;
        }
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

fn run_one_trial(ctx: &Ctx, trial: usize) -> (TrialReport, Phases) {
    let config = ctx.config;
    let mut phases = Phases::new();
    let mut report = TrialReport::empty(trial);
    let mut rng = TrialRng::new(config.seed, trial as u64);

    let t = Instant::now();
    let (state, record) = match povm_stage(ctx, &mut rng) {
        Ok(x) => x,
        Err(m) => {
            report.fail(config.seed, trial, Vec::new(), m);
            return (report, phases);
        }
    };
    add_phase(&mut phases, "povm", t);
    let axes: Vec<Axis> = record.outcomes.iter().map(|o| o.axis).collect();

    match config.scenario {
        Scenario::AxisFrequencies => {
            report.branch_probability = Some(fmt_frac(&record.run_probability));
            if let Some(base) = ctx.base {
                let t = Instant::now();
                match kraus_replay(base, ctx.map, &record) {
                    Ok((_, dense_p)) => {
                        let dev =
                            (frac_to_f64(&record.run_probability) - dense_p).abs();
                        report.oracle = Some(OracleCheck {
                            fidelity: None,
                            probability_deviation: dev,
                            pass: dev <= config.oracle_probability_tol,
                        });
                    }
                    Err(m) => report.fail(config.seed, trial, axes, m),
                }
                add_phase(&mut phases, "oracle", t);
            }
        }
        Scenario::ChainToCluster => {
            encode_tail(ctx, &mut report, state, &record, &axes, &mut rng, &mut phases, false)
        }
        Scenario::CouplingDemo => {
            encode_tail(ctx, &mut report, state, &record, &axes, &mut rng, &mut phases, true)
        }
        Scenario::Distill2d => {
            distill_tail(ctx, &mut report, state, &record, &axes, &mut rng, &mut phases)
        }
        Scenario::OracleCrosscheck => unreachable!("dispatched separately"),
    }
    report.record = Some(record);
    (report, phases)
}

fn povm_stage(
    ctx: &Ctx,
    rng: &mut TrialRng,
) -> Result<(StabilizerState, OutcomeRecord), String> {
    let mut state = ctx.map.initial_state().map_err(|e| e.to_string())?;
    let record = run_all(&mut state, ctx.map, rng, ctx.config.axis_plan.as_deref())
        .map_err(|e| e.to_string())?;
    Ok((state, record))
}

/// Analysis, reduction, optional couplings, certification, graph, oracle.
#[allow(clippy::too_many_arguments)]
fn encode_tail(
    ctx: &Ctx,
    report: &mut TrialReport,
    state: StabilizerState,
    record: &OutcomeRecord,
    axes: &[Axis],
    rng: &mut TrialRng,
    phases: &mut Phases,
    couple: bool,
) {
    let config = ctx.config;
    let trial = report.trial;
    let t = Instant::now();
    let mut enc = match analyze(record, ctx.map, state) {
        Ok(e) => e,
        Err(e) => return report.fail(config.seed, trial, axes.to_vec(), e.to_string()),
    };
    add_phase(phases, "encode", t);

    // Couplings consume the merged danglers and must run before reduction,
    // which measures out every dangler still unclaimed.
    if couple {
        let t = Instant::now();
        let modes = config
            .coupling_modes
            .clone()
            .unwrap_or_else(|| vec![CouplingMode::Connect; ctx.map.merges.len()]);
        let mut frame = PauliFrame::identity(enc.vertices.len());
        for (merge, &mode) in modes.iter().enumerate() {
            let choice = match CouplingChoice::for_merge(ctx.map, &enc, merge, mode) {
                Ok(c) => c,
                Err(e) => {
                    return report.fail(config.seed, trial, axes.to_vec(), e.to_string())
                }
            };
            match apply_coupling(&mut enc, ctx.map, &choice, None, rng) {
                Ok(out) => {
                    frame.compose(&out.frame);
                    report.couplings.push(CouplingRecord {
                        merge,
                        mode,
                        axes: choice.axes,
                        vertices: out.vertices,
                        outcomes: out.outcomes,
                    });
                }
                Err(e) => {
                    return report.fail(config.seed, trial, axes.to_vec(), e.to_string())
                }
            }
        }
        report.frame = Some(frame);
        add_phase(phases, "coupling", t);
    }

    let t = Instant::now();
    let mut reductions = Vec::new();
    for v in 0..enc.vertices.len() {
        match enc.reduce_domain(v, None, rng) {
            Ok(r) => reductions.push(r),
            Err(e) => {
                return report.fail(config.seed, trial, axes.to_vec(), e.to_string())
            }
        }
    }
    add_phase(phases, "reduce", t);

    let t = Instant::now();
    match enc.certify() {
        Ok(()) => report.certified = Some(true),
        Err(e) => {
            return report.fail(
                config.seed,
                trial,
                axes.to_vec(),
                format!("certification: {e}"),
            )
        }
    }
    report.graph = match enc.graph() {
        Ok(g) => Some(g),
        Err(e) => {
            return report.fail(
                config.seed,
                trial,
                axes.to_vec(),
                format!("graph extraction: {e}"),
            )
        }
    };
    add_phase(phases, "certify", t);
    report.branch_probability =
        Some(fmt_frac(&(&record.run_probability * &enc.branch_probability)));
    report.reductions = reductions;

    if let Some(base) = ctx.base {
        let t = Instant::now();
        let result = pipeline_oracle(ctx, base, record, &enc, &report.reductions, &report.couplings);
        match result {
            Ok(check) => report.oracle = Some(check),
            Err(m) => report.fail(config.seed, trial, axes.to_vec(), m),
        }
        add_phase(phases, "oracle", t);
    }
}

fn distill_tail(
    ctx: &Ctx,
    report: &mut TrialReport,
    state: StabilizerState,
    record: &OutcomeRecord,
    axes: &[Axis],
    rng: &mut TrialRng,
    phases: &mut Phases,
) {
    let config = ctx.config;
    let trial = report.trial;
    let t = Instant::now();
    let plan = match plan_brickwall(record, ctx.map) {
        Ok(p) => p,
        Err(e) => return report.fail(config.seed, trial, axes.to_vec(), e.to_string()),
    };
    let (dreport, enc) =
        match distill_encoded(state, record, ctx.map, &plan, None, rng) {
            Ok(x) => x,
            Err(e) => {
                return report.fail(config.seed, trial, axes.to_vec(), e.to_string())
            }
        };
    add_phase(phases, "distill", t);

    report.certified = Some(dreport.verdict);
    if !dreport.verdict {
        report.failure = Some(TrialFailure {
            message: "achieved graph differs from planned target".into(),
            seed: config.seed,
            stream: trial as u64,
            axes: axes.to_vec(),
        });
    }
    report.branch_probability =
        Some(fmt_frac(&(&record.run_probability * &dreport.branch_probability)));

    if ctx.base.is_some() {
        let t = Instant::now();
        let result = replay_trajectory(ctx.map, record, &dreport.steps, config.dense_cap)
            .map_err(|e| e.to_string())
            .and_then(|(psi, dense_p)| {
                compare_states(
                    config,
                    &enc.state,
                    &psi,
                    frac_to_f64(&dreport.branch_probability),
                    dense_p,
                )
            });
        match result {
            Ok(check) => report.oracle = Some(check),
            Err(m) => report.fail(config.seed, trial, axes.to_vec(), m),
        }
        add_phase(phases, "oracle", t);
    }
    report.distillation = Some(dreport);
}

fn crosscheck_branch(ctx: &Ctx, branch: usize) -> (TrialReport, Phases) {
    let config = ctx.config;
    let map = ctx.map;
    let mut phases = Phases::new();
    let mut report = TrialReport::empty(branch);

    // Base-3 digits of the branch index, least significant = first site.
    let sites = map.a_sites.len();
    let mut axes = Vec::with_capacity(sites);
    let mut code = branch;
    for _ in 0..sites {
        axes.push(AXES[code % 3]);
        code /= 3;
    }
    let plan: Vec<Option<Axis>> = axes.iter().map(|&a| Some(a)).collect();

    let mut rng = TrialRng::new(config.seed, branch as u64);
    let t = Instant::now();
    let mut state = match map.initial_state() {
        Ok(s) => s,
        Err(e) => {
            report.fail(config.seed, branch, axes, e.to_string());
            return (report, phases);
        }
    };
    let record = match run_all(&mut state, map, &mut rng, Some(&plan)) {
        Ok(r) => r,
        Err(e) => {
            report.fail(config.seed, branch, axes, e.to_string());
            return (report, phases);
        }
    };
    add_phase(&mut phases, "povm", t);

    // Tableau side: analyze, reduce, certify.
    let t = Instant::now();
    let mut enc = match analyze(&record, map, state) {
        Ok(e) => e,
        Err(e) => {
            report.fail(config.seed, branch, axes, e.to_string());
            report.record = Some(record);
            return (report, phases);
        }
    };
    let mut reductions = Vec::new();
    for v in 0..enc.vertices.len() {
        match enc.reduce_domain(v, None, &mut rng) {
            Ok(r) => reductions.push(r),
            Err(e) => {
                report.fail(config.seed, branch, axes, e.to_string());
                report.record = Some(record);
                return (report, phases);
            }
        }
    }
    let certified = enc.certify();
    add_phase(&mut phases, "encode", t);
    match certified {
        Ok(()) => {
            report.certified = Some(true);
            report.graph = enc.graph().ok();
        }
        Err(e) => {
            report.fail(config.seed, branch, axes, format!("certification: {e}"));
            report.record = Some(record);
            return (report, phases);
        }
    }

    // Dense side: replay the branch and the recorded reductions.
    let t = Instant::now();
    let base = ctx.base.expect("validated: oracle-crosscheck builds the base state");
    let result = kraus_replay(base, map, &record).and_then(|(mut psi, dense_p)| {
        replay_reductions(&mut psi, map, &enc, &reductions)?;
        let tableau_p = frac_to_f64(&record.run_probability);
        compare_states(config, &enc.state, &psi, tableau_p, dense_p)
    });
    match result {
        Ok(check) => report.oracle = Some(check),
        Err(m) => report.fail(config.seed, branch, axes, m),
    }
    add_phase(&mut phases, "oracle", t);

    report.branch_probability =
        Some(fmt_frac(&(&record.run_probability * &enc.branch_probability)));
    report.reductions = reductions;
    report.record = Some(record);
    (report, phases)
}

// ---------------------------------------------------------------------------
// Dense-oracle replay
// ---------------------------------------------------------------------------

/// Apply the recorded site Kraus chain; returns the normalized state and the
/// product of per-site probabilities.
fn kraus_replay(
    base: &DenseState,
    map: &SiteMap,
    record: &OutcomeRecord,
) -> Result<(DenseState, f64), String> {
    let mut psi = base.clone();
    let mut p = 1.0;
    for o in &record.outcomes {
        let legs = map.a_site(o.chain, o.site).legs;
        let (next, pr) = apply_kraus(&psi, &legs, o.axis);
        psi = next;
        p *= pr;
    }
    psi.normalize().map_err(|e| format!("branch vanished on the dense side: {e}"))?;
    Ok((psi, p))
}

/// Project the recorded reduction measurements; returns their probability
/// product.
fn replay_reductions(
    psi: &mut DenseState,
    map: &SiteMap,
    enc: &EncodedState,
    reductions: &[ReduceReport],
) -> Result<f64, String> {
    let mut p = 1.0;
    for r in reductions {
        let xa = logical_x_axis(enc.vertices[r.vertex].qubit.domain.axis);
        for (qs, out) in &r.outcomes {
            p *= psi.project_pauli(&Pauli::product(map.qubits, qs, xa), *out);
            psi.normalize().map_err(|e| e.to_string())?;
        }
    }
    Ok(p)
}

/// Apply and project the recorded junction actions; returns their
/// probability product.
fn replay_couplings(
    psi: &mut DenseState,
    map: &SiteMap,
    couplings: &[CouplingRecord],
) -> Result<f64, String> {
    let mut p = 1.0;
    for c in couplings {
        let m = &map.merges[c.merge];
        psi.apply_gate(basis_flip_gate(c.axes.0, m.upper));
        psi.apply_gate(basis_flip_gate(c.axes.1, m.lower));
        if c.mode == CouplingMode::Connect {
            psi.apply_op(&[m.upper, m.lower], &spin::coupling_matrix(c.axes.0, c.axes.1));
        }
        for (q, axis, out) in [
            (m.upper, c.axes.0, c.outcomes.0),
            (m.lower, c.axes.1, c.outcomes.1),
        ] {
            p *= psi.project_pauli(
                &Pauli::single(map.qubits, q, logical_x_axis(axis)),
                out,
            );
            psi.normalize().map_err(|e| e.to_string())?;
        }
    }
    Ok(p)
}

/// Dense replay of a full 1D-plus-couplings trial, compared to the tableau.
/// Replays in engine order: site Kraus chain, couplings, reductions.
fn pipeline_oracle(
    ctx: &Ctx,
    base: &DenseState,
    record: &OutcomeRecord,
    enc: &EncodedState,
    reductions: &[ReduceReport],
    couplings: &[CouplingRecord],
) -> Result<OracleCheck, String> {
    let (mut psi, mut dense_p) = kraus_replay(base, ctx.map, record)?;
    dense_p *= replay_couplings(&mut psi, ctx.map, couplings)?;
    dense_p *= replay_reductions(&mut psi, ctx.map, enc, reductions)?;
    let tableau_p =
        frac_to_f64(&(&record.run_probability * &enc.branch_probability));
    compare_states(ctx.config, &enc.state, &psi, tableau_p, dense_p)
}

fn compare_states(
    config: &RunConfig,
    stab: &StabilizerState,
    psi: &DenseState,
    tableau_p: f64,
    dense_p: f64,
) -> Result<OracleCheck, String> {
    let tab = tableau_to_dense(stab, config.dense_cap).map_err(|e| e.to_string())?;
    let fid = fidelity(&tab, psi).map_err(|e| e.to_string())?;
    let dev = (tableau_p - dense_p).abs();
    Ok(OracleCheck {
        fidelity: Some(fid),
        probability_deviation: dev,
        pass: fid >= 1.0 - config.oracle_fidelity_tol
            && dev <= config.oracle_probability_tol,
    })
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

fn aggregate_trials(trials: &[TrialReport]) -> Aggregate {
    let mut axis_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut first_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut attempts = 0usize;
    let mut certified = 0usize;
    let mut failed = 0usize;
    let mut oracle_checks = 0usize;
    let mut oracle_mismatches = 0usize;
    let mut min_fid = f64::INFINITY;
    let mut max_dev = 0.0f64;

    for t in trials {
        if let Some(r) = &t.record {
            for o in &r.outcomes {
                *axis_counts.entry(axis_key(o.axis).into()).or_insert(0) += 1;
            }
            if let Some(first) = r.outcomes.first() {
                *first_counts.entry(axis_key(first.axis).into()).or_insert(0) += 1;
            }
        }
        match t.certified {
            Some(true) => {
                attempts += 1;
                certified += 1;
            }
            Some(false) => {
                attempts += 1;
                failed += 1;
            }
            None => {
                if t.failure.is_some() {
                    failed += 1;
                }
            }
        }
        if let Some(o) = &t.oracle {
            oracle_checks += 1;
            if !o.pass {
                oracle_mismatches += 1;
            }
            if let Some(f) = o.fidelity {
                min_fid = min_fid.min(f);
            }
            max_dev = max_dev.max(o.probability_deviation);
        }
    }

    Aggregate {
        trials_run: trials.len(),
        certification_attempts: attempts,
        certified_trials: certified,
        failed_trials: failed,
        pass_rate: (attempts > 0).then(|| certified as f64 / attempts as f64),
        axis_counts,
        first_site_axis_counts: first_counts,
        total_probability: None,
        total_probability_is_one: None,
        oracle: (oracle_checks > 0).then(|| OracleStats {
            checks: oracle_checks,
            mismatches: oracle_mismatches,
            min_fidelity: if min_fid.is_finite() { min_fid } else { 1.0 },
            max_probability_deviation: max_dev,
        }),
    }
}

fn derive_status(agg: &Aggregate) -> RunStatus {
    // Certification trouble outranks oracle trouble: a wrong state is worse
    // than a wrong cross-check.
    if agg.failed_trials > 0 {
        return RunStatus::CertificationFailed;
    }
    if let Some(o) = &agg.oracle {
        if o.mismatches > 0 {
            return RunStatus::OracleMismatch;
        }
    }
    if agg.total_probability_is_one == Some(false) {
        return RunStatus::OracleMismatch;
    }
    RunStatus::Ok
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

/// Write `report.json`, `outcomes.json`, and `graph_<trial>.dot` for every
/// detailed trial that produced a graph.  Each file lands via temp + rename
/// so readers never observe a half-written artifact.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join("report.json"), &serde_json::to_vec_pretty(report)?)?;
    let outcomes: Vec<&OutcomeRecord> =
        report.trials.iter().filter_map(|t| t.record.as_ref()).collect();
    write_atomic(&dir.join("outcomes.json"), &serde_json::to_vec_pretty(&outcomes)?)?;
    for t in &report.trials {
        let view = t
            .graph
            .as_ref()
            .or_else(|| t.distillation.as_ref().map(|d| &d.achieved));
        if let Some(v) = view {
            write_atomic(
                &dir.join(format!("graph_{}.dot", t.trial)),
                v.to_dot(&format!("trial_{}", t.trial)).as_bytes(),
            )?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// Timing and memory profile of the per-chain tableau pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub chains: usize,
    pub sites_per_chain: usize,
    pub qubits_per_chain: usize,
    pub total_qubits: usize,
    pub phases_ms: BTreeMap<String, f64>,
    pub povm_sites_per_sec: f64,
    /// Largest generator-matrix footprint observed on one chain.
    pub tableau_bytes_per_chain: usize,
    /// Quadratic model: 2 n² / 8 bytes for n qubits.
    pub tableau_bytes_bound: usize,
    /// Footprint stays within the model plus word-packing slack.
    pub within_quadratic_bound: bool,
    pub total_ms: f64,
}

/// Time the 1D pipeline (sampling, analysis, reduction, certification) at
/// scale.  The pipeline factorizes over chains — chains only interact
/// through couplings, which the benchmark does not perform — so each chain
/// runs as an independent tableau and the memory figure is per chain.
pub fn bench(config: &RunConfig) -> Result<BenchReport, RunnerError> {
    if config.schema_version != SCHEMA_VERSION {
        return Err(RunnerError::Config(format!(
            "unsupported schema_version {} (this build reads {})",
            config.schema_version, SCHEMA_VERSION
        )));
    }
    let chains = config.lattice.chains;
    let sites = config.lattice.sites_per_chain;
    let chain_map = build(&LatticeSpec::single_chain(sites))
        .map_err(|e| RunnerError::Config(format!("lattice: {e}")))?;
    let n = chain_map.qubits;

    let started = Instant::now();
    let mut phases = Phases::new();
    let mut peak_bytes = 0usize;
    for chain in 0..chains {
        let mut rng = TrialRng::new(config.seed, chain as u64);
        let t = Instant::now();
        let mut state = chain_map
            .initial_state()
            .map_err(|e| RunnerError::Pipeline(e.to_string()))?;
        let record = run_all(&mut state, &chain_map, &mut rng, None)
            .map_err(|e| RunnerError::Pipeline(e.to_string()))?;
        add_phase(&mut phases, "povm", t);

        let t = Instant::now();
        let mut enc = analyze(&record, &chain_map, state)
            .map_err(|e| RunnerError::Pipeline(e.to_string()))?;
        add_phase(&mut phases, "analyze", t);

        let t = Instant::now();
        for v in 0..enc.vertices.len() {
            enc.reduce_domain(v, None, &mut rng)
                .map_err(|e| RunnerError::Pipeline(e.to_string()))?;
        }
        add_phase(&mut phases, "reduce", t);

        let t = Instant::now();
        enc.certify().map_err(|e| RunnerError::Pipeline(e.to_string()))?;
        add_phase(&mut phases, "certify", t);

        peak_bytes = peak_bytes.max(enc.state.tableau_bytes());
    }

    let bound = 2 * n * n / 8;
    // 64-bit word packing rounds each bit row up; allow that plus a little
    // fixed overhead before calling the profile non-quadratic.
    let within = peak_bytes <= bound + bound / 8 + 4096;
    let povm_ms = phases.get("povm").copied().unwrap_or(0.0);
    let total_sites = (chains * sites) as f64;
    Ok(BenchReport {
        chains,
        sites_per_chain: sites,
        qubits_per_chain: n,
        total_qubits: chains * n,
        phases_ms: phases.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        povm_sites_per_sec: if povm_ms > 0.0 { total_sites / (povm_ms / 1e3) } else { 0.0 },
        tableau_bytes_per_chain: peak_bytes,
        tableau_bytes_bound: bound,
        within_quadratic_bound: within,
        total_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}
