//! Stabilizer simulation of spin-3/2 AKLT quasichains and their 2D stacking.
//!
//! The crate converts valence-bond solid states into encoded cluster states
//! by simulating the three-outcome POVM on every spin-3/2 site, analyzing the
//! resulting outcome domains into logical qubits, deriving and certifying the
//! cluster stabilizers, coupling neighboring chains through merged spin-1/2
//! pairs, and distilling a brick-wall cluster from the 2D lattice.  A dense
//! statevector oracle built from the spin picture (symmetric projectors,
//! Clebsch-Gordan pair projectors, Kraus operators) provides an independent
//! cross-check for every stage at small sizes.
//!
//! Layout:
//! - [`pauli`]: signed Pauli strings, gate conjugation, local Cliffords
//! - [`stab`]: stabilizer tableaus, measurement, canonical forms
//! - [`rng`]: counter-based seeded randomness, exact branch probabilities
//! - [`lattice`]: quasichain / 2D lattice geometry and singlet preparation
//! - [`povm`]: site POVM sampling with exact probabilities
//! - [`encoding`]: outcome domains, logical operators, cluster certification
//! - [`graph`]: graph states with local-Clifford corrections, DOT output
//! - [`coupling`]: connecting / disconnecting merged chain pairs
//! - [`distill`]: brick-wall planning and logical measurements
//! - [`dense`]: dense statevector oracle in the virtual-qubit picture
//! - [`runner`]: scenario driver, reports, trial parallelism

pub mod coupling;
pub mod dense;
pub mod distill;
pub mod encoding;
pub mod graph;
pub mod lattice;
pub mod pauli;
pub mod povm;
pub mod rng;
pub mod runner;
pub mod stab;

pub use dense::{build_aklt, fidelity, tableau_to_dense, DenseError, DenseState};
pub use coupling::{
    apply_coupling, connect, disconnect, CouplingChoice, CouplingError, CouplingMode,
    CouplingOutcome, PauliFrame,
};
pub use distill::{
    distill, distill_encoded, measure_logical_y, plan_brickwall, plan_brickwall_offset,
    planned_target, replay_trajectory, validate_plan, DistillError, DistillStep,
    DistillationPlan, DistillationReport, MeasuredOp, PlannedGraph,
};
pub use encoding::{analyze, find_domains, EncodedState, EncodingError};
pub use graph::{cluster_state, extract_view, GraphError, GraphView, VertexPresentation};
pub use lattice::{build as build_lattice, LatticeError, LatticeSpec, Layout, SiteMap};
pub use pauli::{Axis, Gate, LocalClifford, Pauli, PauliError};
pub use povm::{run_all as run_povm, OutcomeRecord, PovmError, SiteOutcome};
pub use rng::{frac, Frac, TrialRng};
pub use runner::{
    bench, run, run_sequential, write_artifacts, BenchReport, RunConfig, RunReport,
    RunStatus, RunnerError, Scenario, TrialReport,
};
pub use stab::{GroupBasis, Measurement, StabError, StabilizerState};
