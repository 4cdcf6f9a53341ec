//! Inter-chain coupling through merged dangling pairs.
//!
//! Each merge in a two-dimensional lattice pairs a dangling spin of one
//! chain with a dangling spin of the chain below.  Consuming the pair in
//! the `connect` mode applies a controlled-phase gate between the two
//! logical vertices that own the danglers; the `disconnect` mode removes
//! the pair without creating a link.  Both modes measure the two qubits
//! out and leave Pauli byproducts that depend on the outcomes, reported
//! as a [`PauliFrame`] over the logical vertices.
//!
//! The physical circuit works in the eigenbasis selected by each domain's
//! measured axis: a basis flip on each dangler, an optional controlled
//! phase whose control and target bases follow the two domain axes, and a
//! conjugate-basis readout of both danglers.  All of it is Clifford, so
//! the operations run directly on the stabilizer model and keep its
//! certification intact.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::{logical_x_axis, EncodedState, EncodingError};
use crate::lattice::SiteMap;
use crate::pauli::{Axis, Gate, Pauli};
use crate::rng::TrialRng;
use crate::stab::StabilizerState;

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("merge index {0} out of range")]
    BadMerge(usize),
    #[error("merged qubit {0} was already consumed")]
    AlreadyMeasured(usize),
    #[error("merged qubit {0} has no owning logical vertex")]
    NoOwner(usize),
    #[error("choice axes ({0}, {1}) do not match the domain axes ({2}, {3})")]
    AxisMismatch(Axis, Axis, Axis, Axis),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// What to do with one merged dangling pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    /// Measure the pair out without linking the vertices.
    Disconnect,
    /// Apply a controlled phase between the owning vertices, then measure
    /// the pair out.
    Connect,
}

/// A planned action on one merge, with the domain axes it was planned for.
///
/// The axes double as a consistency check: they must equal the measured
/// axes of the two domains owning the danglers when the choice is applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingChoice {
    /// Index into [`SiteMap::merges`].
    pub merge: usize,
    pub mode: CouplingMode,
    /// (upper-chain domain axis, lower-chain domain axis).
    pub axes: (Axis, Axis),
}

impl CouplingChoice {
    /// Resolve the axes of a merge from the analyzed state.
    pub fn for_merge(
        map: &SiteMap,
        enc: &EncodedState,
        merge: usize,
        mode: CouplingMode,
    ) -> Result<Self, CouplingError> {
        let m = map.merges.get(merge).ok_or(CouplingError::BadMerge(merge))?;
        let upper = enc.vertex_of_qubit(m.upper).ok_or(CouplingError::NoOwner(m.upper))?;
        let lower = enc.vertex_of_qubit(m.lower).ok_or(CouplingError::NoOwner(m.lower))?;
        let axes = (
            enc.vertices[upper].qubit.domain.axis,
            enc.vertices[lower].qubit.domain.axis,
        );
        Ok(Self { merge, mode, axes })
    }
}

/// Accumulated Pauli byproduct, one X and one Z exponent per logical vertex.
///
/// The frame relates the certified logical content to the byproduct-free
/// ideal evolution: the tracked state equals the frame operator applied to
/// the ideal state.  Frames compose by exponent XOR and conjugate through
/// controlled-phase gates like the Pauli group does.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PauliFrame {
    pub z: Vec<bool>,
    pub x: Vec<bool>,
}

impl PauliFrame {
    pub fn identity(vertices: usize) -> Self {
        Self { z: vec![false; vertices], x: vec![false; vertices] }
    }

    pub fn is_identity(&self) -> bool {
        !self.z.iter().chain(&self.x).any(|&b| b)
    }

    pub fn flip_z(&mut self, vertex: usize) {
        self.z[vertex] ^= true;
    }

    pub fn flip_x(&mut self, vertex: usize) {
        self.x[vertex] ^= true;
    }

    /// Multiply another frame into this one (exponent XOR; phases are not
    /// tracked, which is enough to correct measurement outcomes).
    pub fn compose(&mut self, other: &PauliFrame) {
        assert_eq!(self.z.len(), other.z.len(), "frame width mismatch");
        for (a, b) in self.z.iter_mut().zip(&other.z) {
            *a ^= b;
        }
        for (a, b) in self.x.iter_mut().zip(&other.x) {
            *a ^= b;
        }
    }

    /// Rewrite the frame for a circuit that applies a controlled phase
    /// after it: an X exponent on either endpoint picks up a Z exponent on
    /// the other, Z exponents pass through.
    pub fn conjugate_cz(&mut self, u: usize, v: usize) {
        if self.x[u] {
            self.z[v] ^= true;
        }
        if self.x[v] {
            self.z[u] ^= true;
        }
    }

    /// Undo the frame on a raw measurement outcome: the reported value is
    /// flipped whenever the measured letter anticommutes with the frame
    /// operator at that vertex.
    pub fn corrected_outcome(&self, vertex: usize, basis: Axis, raw: bool) -> bool {
        let flip = match basis {
            Axis::X => self.z[vertex],
            Axis::Z => self.x[vertex],
            Axis::Y => self.z[vertex] ^ self.x[vertex],
        };
        raw ^ flip
    }

    /// The frame as a Hermitian Pauli string over the logical vertices.
    pub fn as_pauli(&self) -> Pauli {
        let n = self.z.len();
        let mut p = Pauli::identity(n);
        for v in 0..n {
            let axis = match (self.x[v], self.z[v]) {
                (false, false) => continue,
                (true, false) => Axis::X,
                (false, true) => Axis::Z,
                (true, true) => Axis::Y,
            };
            p.set_axis(v, Some(axis));
        }
        p
    }

    /// Apply the frame operator to a logical tableau (sign flips only).
    pub fn apply_to(&self, logical: &mut StabilizerState) {
        for (v, &b) in self.z.iter().enumerate() {
            if b {
                logical.apply(Gate::Z(v));
            }
        }
        for (v, &b) in self.x.iter().enumerate() {
            if b {
                logical.apply(Gate::X(v));
            }
        }
    }
}

/// Result of consuming one merged pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingOutcome {
    /// (upper vertex, lower vertex) that owned the danglers.
    pub vertices: (usize, usize),
    /// Readout of the two danglers, upper then lower (`true` = −1).
    pub outcomes: (bool, bool),
    /// Byproduct delta: a Z exponent on each vertex whose dangler read −1.
    /// Z byproducts commute with the controlled phase, so the delta is the
    /// same in the pre- and post-coupling logical frames.
    pub frame: PauliFrame,
}

/// Spin flip of a dangler in its domain's eigenbasis: the Pauli that
/// exchanges the two basis states of `axis`.
pub fn basis_flip_gate(axis: Axis, q: usize) -> Gate {
    match logical_x_axis(axis) {
        Axis::X => Gate::X(q),
        Axis::Z => Gate::Z(q),
        Axis::Y => Gate::Y(q),
    }
}

/// Clifford mapping the `axis` eigenbasis onto the computational basis.
fn basis_rotation(axis: Axis, q: usize) -> Vec<Gate> {
    match axis {
        Axis::Z => vec![],
        Axis::X => vec![Gate::H(q)],
        Axis::Y => vec![Gate::Sdg(q), Gate::H(q)],
    }
}

/// Inverse of [`basis_rotation`].
fn basis_rotation_dg(axis: Axis, q: usize) -> Vec<Gate> {
    match axis {
        Axis::Z => vec![],
        Axis::X => vec![Gate::H(q)],
        Axis::Y => vec![Gate::H(q), Gate::S(q)],
    }
}

/// Controlled phase with the control read in the `au` basis of `b1` and a
/// target phase along `aw` on `b2`, compiled to computational-basis gates.
fn controlled_phase_circuit(au: Axis, b1: usize, aw: Axis, b2: usize) -> Vec<Gate> {
    let mut gates = basis_rotation(au, b1);
    gates.extend(basis_rotation(aw, b2));
    gates.push(Gate::Cz(b1, b2));
    gates.extend(basis_rotation_dg(au, b1));
    gates.extend(basis_rotation_dg(aw, b2));
    gates
}

/// Consume one merged pair according to `choice`.
///
/// `forced` pins the two dangler readouts for exhaustive branch tests.
/// In `connect` mode the logical tableau receives the controlled-phase
/// gate and the X representatives of the two vertices are rebased so they
/// keep implementing the post-gate logical operators.
pub fn apply_coupling(
    enc: &mut EncodedState,
    map: &SiteMap,
    choice: &CouplingChoice,
    forced: Option<(bool, bool)>,
    rng: &mut TrialRng,
) -> Result<CouplingOutcome, CouplingError> {
    let m = map.merges.get(choice.merge).ok_or(CouplingError::BadMerge(choice.merge))?;
    let (b1, b2) = (m.upper, m.lower);
    for b in [b1, b2] {
        if enc.measured[b] {
            return Err(CouplingError::AlreadyMeasured(b));
        }
    }
    let u = enc.vertex_of_qubit(b1).ok_or(CouplingError::NoOwner(b1))?;
    let w = enc.vertex_of_qubit(b2).ok_or(CouplingError::NoOwner(b2))?;
    let au = enc.vertices[u].qubit.domain.axis;
    let aw = enc.vertices[w].qubit.domain.axis;
    if choice.axes != (au, aw) {
        return Err(CouplingError::AxisMismatch(choice.axes.0, choice.axes.1, au, aw));
    }

    let mut gates = vec![basis_flip_gate(au, b1), basis_flip_gate(aw, b2)];
    if choice.mode == CouplingMode::Connect {
        gates.extend(controlled_phase_circuit(au, b1, aw, b2));
    }
    enc.apply_physical(&gates);

    let n = enc.state.num_qubits();
    let m1 = enc.measure_code(
        &Pauli::single(n, b1, logical_x_axis(au)),
        forced.map(|f| f.0),
        rng,
    )?;
    let m2 = enc.measure_code(
        &Pauli::single(n, b2, logical_x_axis(aw)),
        forced.map(|f| f.1),
        rng,
    )?;

    if choice.mode == CouplingMode::Connect {
        enc.logical.apply(Gate::Cz(u, w));
        // Rebase the X representatives: conjugation by the controlled
        // phase sends X_u to X_u Z_w and X_w to X_w Z_u.
        let zu = enc.vertices[u].qubit.logical_z.clone();
        let zw = enc.vertices[w].qubit.logical_z.clone();
        enc.vertices[u].qubit.logical_x.mul_assign(&zw);
        enc.vertices[w].qubit.logical_x.mul_assign(&zu);
    }

    let mut frame = PauliFrame::identity(enc.vertices.len());
    if m1 {
        frame.flip_z(u);
    }
    if m2 {
        frame.flip_z(w);
    }
    Ok(CouplingOutcome { vertices: (u, w), outcomes: (m1, m2), frame })
}

/// Consume a merge without linking its vertices.
pub fn disconnect(
    enc: &mut EncodedState,
    map: &SiteMap,
    merge: usize,
    forced: Option<(bool, bool)>,
    rng: &mut TrialRng,
) -> Result<CouplingOutcome, CouplingError> {
    let choice = CouplingChoice::for_merge(map, enc, merge, CouplingMode::Disconnect)?;
    apply_coupling(enc, map, &choice, forced, rng)
}

/// Consume a merge and link its vertices with a controlled phase.
pub fn connect(
    enc: &mut EncodedState,
    map: &SiteMap,
    merge: usize,
    forced: Option<(bool, bool)>,
    rng: &mut TrialRng,
) -> Result<CouplingOutcome, CouplingError> {
    let choice = CouplingChoice::for_merge(map, enc, merge, CouplingMode::Connect)?;
    apply_coupling(enc, map, &choice, forced, rng)
}
