//! Distillation of a measured two-dimensional lattice into a brick-wall
//! cluster.
//!
//! After the site measurements the lattice is a grid of domain qubits:
//! neighboring domains on a chain are graph-linked, and each merged dangling
//! pair offers an optional controlled-phase link between chains.  Distilling
//! picks a disposition for every junction (connect or cut), strips padding
//! domains with logical-Z measurements, shrinks every surviving domain to a
//! single site, and fuses the marked in-between qubits with logical-Y
//! measurements so their two neighbors become directly linked.  The final
//! state is certified and compared against the plan's declared target graph.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::{
    apply_coupling, basis_flip_gate, CouplingChoice, CouplingError, CouplingMode,
    PauliFrame,
};
use crate::dense::{apply_kraus, build_aklt, spin, DenseError, DenseState};
use crate::encoding::{analyze, find_domains, EncodedState, EncodingError};
use crate::graph::GraphView;
use crate::lattice::SiteMap;
use crate::pauli::{Axis, Pauli};
use crate::povm::OutcomeRecord;
use crate::rng::{Frac, TrialRng};
use crate::stab::StabilizerState;

#[derive(Debug, Error)]
pub enum DistillError {
    #[error("lattice too small (needs ≥ 2 chains, ≥ 3 domains per chain)")]
    TooSmall,
    #[error("malformed plan: {0}")]
    PlanShape(String),
    #[error("Y-marked vertex {vertex} has degree {degree}, need exactly 2")]
    YMarkDegree { vertex: usize, degree: usize },
    #[error("planned graph is not bipartite")]
    NotBipartite,
    #[error("planned vertex {vertex} has degree {degree} > 3")]
    DegreeTooHigh { vertex: usize, degree: usize },
    #[error("logical Y not well-defined (encoding not reduced) on vertex {0}")]
    NotReduced(usize),
    #[error("forced outcome stream exhausted: needs more than the {supplied} bits supplied")]
    ForcedExhausted { supplied: usize },
    #[error("forced outcome stream too long: used {used} of {supplied} bits")]
    ForcedUnused { used: usize, supplied: usize },
    #[error(transparent)]
    Coupling(#[from] CouplingError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// The cluster a plan is expected to leave behind.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedGraph {
    pub vertices: BTreeSet<usize>,
    /// Undirected edges, lower id first.
    pub edges: BTreeSet<(usize, usize)>,
}

impl PlannedGraph {
    pub fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == v || b == v).count()
    }

    pub fn neighbors(&self, v: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == v {
                    Some(b)
                } else if b == v {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_bipartite(&self) -> bool {
        let mut color = std::collections::BTreeMap::new();
        for &start in &self.vertices {
            if color.contains_key(&start) {
                continue;
            }
            color.insert(start, false);
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                let c = color[&v];
                for u in self.neighbors(v) {
                    match color.get(&u) {
                        Some(&cu) if cu == c => return false,
                        Some(_) => {}
                        None => {
                            color.insert(u, !c);
                            queue.push_back(u);
                        }
                    }
                }
            }
        }
        true
    }

    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.vertices.iter().next() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = std::collections::VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for u in self.neighbors(v) {
                if seen.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        seen == self.vertices
    }

    fn toggle_edge(&mut self, a: usize, b: usize) {
        let e = (a.min(b), a.max(b));
        if !self.edges.remove(&e) {
            self.edges.insert(e);
        }
    }

    fn remove_vertex(&mut self, v: usize) {
        self.vertices.remove(&v);
        self.edges.retain(|&(a, b)| a != v && b != v);
    }
}

/// A full distillation recipe for one measured lattice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillationPlan {
    /// One disposition per lattice merge, in [`SiteMap::merges`] order.
    pub modes: Vec<CouplingMode>,
    /// Vertices fused out by logical-Y measurements, linking their neighbors.
    pub y_marked: BTreeSet<usize>,
    /// Padding vertices dropped by logical-Z measurements.
    pub z_removed: BTreeSet<usize>,
    pub target: PlannedGraph,
}

/// One physical Pauli measurement performed during distillation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredOp {
    pub op: Pauli,
    /// `true` = −1 eigenvalue.
    pub outcome: bool,
}

/// Log entry for one distillation action, with enough detail to replay the
/// whole trajectory on an independent simulator.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistillStep {
    /// Junction disposition: rotate, optionally entangle, then read out the
    /// two merged danglers.
    Coupling {
        merge: usize,
        mode: CouplingMode,
        vertices: (usize, usize),
        /// Domain axes of the upper and lower vertex.
        axes: (Axis, Axis),
        outcomes: (bool, bool),
        ops: Vec<MeasuredOp>,
    },
    /// Domain shrunk to its first site.
    Reduce { vertex: usize, ops: Vec<MeasuredOp>, byproduct: bool },
    /// Padding vertex dropped by a logical-Z measurement.
    RemoveZ { vertex: usize, op: MeasuredOp, neighbors: Vec<usize> },
    /// Degree-2 vertex fused out by a logical-Y measurement.
    LinkY { vertex: usize, op: MeasuredOp, linked: (usize, usize) },
}

/// What a distillation run achieved.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistillationReport {
    /// Certified read of the final logical state.
    pub achieved: GraphView,
    /// Whether the live graph equals the plan's target exactly.
    pub verdict: bool,
    pub steps: Vec<DistillStep>,
    /// Exact probability of this measurement trajectory.
    #[serde(with = "crate::povm::frac_str")]
    pub branch_probability: Frac,
    /// Outstanding byproduct: Z on each vertex whose canonical generator
    /// came out negated, mapping the achieved state to the sign-free cluster.
    pub frame: PauliFrame,
}

/// Rows of vertex ids (chain-major, column order) plus merge endpoints,
/// everything the combinatorial planner needs about a measured lattice.
struct RowLayout {
    rows: Vec<Vec<usize>>,
    /// Position of each vertex within its row.
    pos: Vec<usize>,
    /// Per merge: (upper vertex, lower vertex).
    spots: Vec<(usize, usize)>,
}

fn layout(record: &OutcomeRecord, map: &SiteMap) -> Result<RowLayout, DistillError> {
    let domains = find_domains(record, map)?;
    let mut rows = vec![Vec::new(); map.num_chains()];
    for (v, d) in domains.iter().enumerate() {
        rows[d.chain].push(v);
    }
    let mut pos = vec![0; domains.len()];
    for row in &rows {
        for (j, &v) in row.iter().enumerate() {
            pos[v] = j;
        }
    }
    let owner = |chain: usize, col: usize| {
        rows[chain]
            .iter()
            .copied()
            .find(|&v| domains[v].start <= col && col <= domains[v].end)
            .expect("merge column lies inside a domain")
    };
    let spots = map
        .merges
        .iter()
        .map(|m| (owner(m.upper_chain, m.column), owner(m.upper_chain + 1, m.column)))
        .collect();
    Ok(RowLayout { rows, pos, spots })
}

/// Compute the cluster a plan leaves behind, validating every step.
///
/// Mirrors the runtime semantics combinatorially: chain neighbors are
/// linked, each connected junction toggles its vertical edge (two junctions
/// between the same pair cancel), logical-Z removal deletes a vertex, and
/// logical-Y fusion replaces a degree-2 vertex by an edge toggle between its
/// neighbors.  The result must be bipartite with maximum degree 3.
pub fn planned_target(
    record: &OutcomeRecord,
    map: &SiteMap,
    modes: &[CouplingMode],
    y_marked: &BTreeSet<usize>,
    z_removed: &BTreeSet<usize>,
) -> Result<PlannedGraph, DistillError> {
    let lay = layout(record, map)?;
    if modes.len() != map.merges.len() {
        return Err(DistillError::PlanShape(format!(
            "{} junction modes for {} merges",
            modes.len(),
            map.merges.len()
        )));
    }
    let nv = lay.pos.len();
    if let Some(&v) = y_marked.union(z_removed).find(|&&v| v >= nv) {
        return Err(DistillError::PlanShape(format!(
            "marked vertex {v} out of range ({nv} vertices)"
        )));
    }
    if let Some(&v) = y_marked.intersection(z_removed).next() {
        return Err(DistillError::PlanShape(format!(
            "vertex {v} is both Y-marked and Z-removed"
        )));
    }
    let mut g = PlannedGraph {
        vertices: (0..nv).collect(),
        edges: BTreeSet::new(),
    };
    for row in &lay.rows {
        for w in row.windows(2) {
            g.toggle_edge(w[0], w[1]);
        }
    }
    for (m, &mode) in modes.iter().enumerate() {
        if mode == CouplingMode::Connect {
            let (u, w) = lay.spots[m];
            g.toggle_edge(u, w);
        }
    }
    for &v in z_removed {
        g.remove_vertex(v);
    }
    for &v in y_marked {
        let nb = g.neighbors(v);
        if nb.len() != 2 {
            return Err(DistillError::YMarkDegree { vertex: v, degree: nb.len() });
        }
        g.remove_vertex(v);
        g.toggle_edge(nb[0], nb[1]);
    }
    for &v in &g.vertices {
        let d = g.degree(v);
        if d > 3 {
            return Err(DistillError::DegreeTooHigh { vertex: v, degree: d });
        }
    }
    if !g.is_bipartite() {
        return Err(DistillError::NotBipartite);
    }
    Ok(g)
}

/// Check a plan against the lattice it will run on: mode count, mark sets,
/// and that the declared target is exactly what the plan produces.
pub fn validate_plan(
    plan: &DistillationPlan,
    record: &OutcomeRecord,
    map: &SiteMap,
) -> Result<(), DistillError> {
    let computed =
        planned_target(record, map, &plan.modes, &plan.y_marked, &plan.z_removed)?;
    if computed != plan.target {
        return Err(DistillError::PlanShape(
            "declared target does not match the plan's computed outcome".into(),
        ));
    }
    Ok(())
}

/// Plan a brick-wall cluster over a measured lattice.  See
/// [`plan_brickwall_offset`]; the offset defaults to 0.
pub fn plan_brickwall(
    record: &OutcomeRecord,
    map: &SiteMap,
) -> Result<DistillationPlan, DistillError> {
    plan_brickwall_offset(record, map, 0)
}

/// Plan a brick-wall cluster, shifting the brick pattern by `offset`.
///
/// Junctions are accepted greedily per merge, capped at one vertical link
/// per vertex, and only when the two endpoints sit at matching row parities
/// — that guard keeps the pre-fusion graph two-colorable by chain + row
/// position.  A junction must also fall in its chain pair's brick class:
/// every fourth position, stepping one chain per class, which staggers the
/// verticals into the brick pattern (with two chains, every other position,
/// since no third chain competes for hosts).
///
/// Unlinked stretches touching a chain end become logical-Z padding.
/// Interior stretches are fused out by logical-Y marks; when a stretch has
/// odd length one qubit is kept, so every fused stretch shrinks its
/// enclosing cycles by an even count and the two-coloring survives fusion.
/// With two chains the parity guard already forces even shrink counts, so
/// full stretches fuse and a three-domain record yields the minimal brick.
pub fn plan_brickwall_offset(
    record: &OutcomeRecord,
    map: &SiteMap,
    offset: usize,
) -> Result<DistillationPlan, DistillError> {
    let lay = layout(record, map)?;
    let chains = map.num_chains();
    if chains < 2 || lay.rows.iter().any(|r| r.len() < 3) {
        return Err(DistillError::TooSmall);
    }
    let mut vdeg = vec![0usize; lay.pos.len()];
    let mut modes = vec![CouplingMode::Disconnect; map.merges.len()];
    for (m, merge) in map.merges.iter().enumerate() {
        let (u, w) = lay.spots[m];
        let (ju, jw) = (lay.pos[u], lay.pos[w]);
        let in_class = if chains == 2 {
            ju % 2 == offset % 2
        } else {
            ju % 4 == (merge.upper_chain + offset) % 4
        };
        if vdeg[u] == 0 && vdeg[w] == 0 && ju % 2 == jw % 2 && in_class {
            modes[m] = CouplingMode::Connect;
            vdeg[u] += 1;
            vdeg[w] += 1;
        }
    }
    let mut y_marked = BTreeSet::new();
    let mut z_removed = BTreeSet::new();
    for row in &lay.rows {
        let mut j = 0;
        while j < row.len() {
            if vdeg[row[j]] > 0 {
                j += 1;
                continue;
            }
            let s = j;
            while j < row.len() && vdeg[row[j]] == 0 {
                j += 1;
            }
            if s == 0 || j == row.len() {
                z_removed.extend(&row[s..j]);
            } else if chains == 2 || (j - s) % 2 == 0 {
                y_marked.extend(&row[s..j]);
            } else {
                y_marked.extend(&row[s + 1..j]);
            }
        }
    }
    let target = planned_target(record, map, &modes, &y_marked, &z_removed)?;
    Ok(DistillationPlan { modes, y_marked, z_removed, target })
}

/// Fuse out one vertex with a logical-Y measurement, linking its two graph
/// neighbors, and return the physical operator measured with its outcome.
/// The domain must have been shrunk to a single site first; on a multi-site
/// block the dressed Y operator is not pinned down.
///
/// "Y" is read in the vertex's corrected frame: a plainly presented vertex
/// (letter X) measures the literal logical Y, while an S-dressed vertex
/// (letter Y) measures the literal logical X, which is the Y direction of
/// its corrected frame.  Both keep the byproduct a diagonal dressing on the
/// neighbors; measuring literal Y on a dressed vertex would instead act as
/// an underlying X measurement, whose byproduct is a non-diagonal local
/// Clifford that leaves the dressed-graph presentation entirely.
pub fn measure_logical_y(
    enc: &mut EncodedState,
    vertex: usize,
    forced: Option<bool>,
    rng: &mut TrialRng,
) -> Result<MeasuredOp, DistillError> {
    if !enc.vertices[vertex].reduced {
        return Err(DistillError::NotReduced(vertex));
    }
    let view = enc.graph()?;
    let basis = match view.vertices[&vertex].letter {
        Axis::Y => Axis::X,
        _ => Axis::Y,
    };
    let op = enc.logical_rep(vertex, basis);
    let outcome = enc.measure_logical(vertex, basis, forced, rng)?;
    Ok(MeasuredOp { op, outcome })
}

/// Doles out bits of an optional pre-recorded outcome stream.
struct BitFeed<'a> {
    bits: Option<&'a [bool]>,
    used: usize,
}

impl<'a> BitFeed<'a> {
    fn new(bits: Option<&'a [bool]>) -> Self {
        Self { bits, used: 0 }
    }

    fn one(&mut self) -> Result<Option<bool>, DistillError> {
        match self.bits {
            None => Ok(None),
            Some(bs) => {
                if self.used >= bs.len() {
                    return Err(DistillError::ForcedExhausted { supplied: bs.len() });
                }
                self.used += 1;
                Ok(Some(bs[self.used - 1]))
            }
        }
    }

    fn pair(&mut self) -> Result<Option<(bool, bool)>, DistillError> {
        match (self.one()?, self.one()?) {
            (Some(a), Some(b)) => Ok(Some((a, b))),
            _ => Ok(None),
        }
    }

    fn run(&mut self, k: usize) -> Result<Option<Vec<bool>>, DistillError> {
        match self.bits {
            None => Ok(None),
            Some(bs) => {
                if self.used + k > bs.len() {
                    return Err(DistillError::ForcedExhausted { supplied: bs.len() });
                }
                self.used += k;
                Ok(Some(bs[self.used - k..self.used].to_vec()))
            }
        }
    }

    fn finish(self) -> Result<(), DistillError> {
        match self.bits {
            Some(bs) if self.used != bs.len() => {
                Err(DistillError::ForcedUnused { used: self.used, supplied: bs.len() })
            }
            _ => Ok(()),
        }
    }
}

/// Run a plan and keep the final logical model alongside the report.
///
/// Order: junction dispositions in merge order, logical-Z padding removal,
/// domain reduction for every surviving vertex, then logical-Y fusion, all
/// index-ascending; the state is certified afterwards.  `forced` optionally
/// pins every measurement outcome from one flat bit stream in that order
/// and must then supply exactly the consumed number of bits.
pub fn distill_encoded(
    state: StabilizerState,
    record: &OutcomeRecord,
    map: &SiteMap,
    plan: &DistillationPlan,
    forced: Option<&[bool]>,
    rng: &mut TrialRng,
) -> Result<(DistillationReport, EncodedState), DistillError> {
    validate_plan(plan, record, map)?;
    let mut enc = analyze(record, map, state)?;
    let n = enc.state.num_qubits();
    let nv = enc.vertices.len();
    let mut feed = BitFeed::new(forced);
    let mut steps = Vec::new();

    for (m, &mode) in plan.modes.iter().enumerate() {
        let choice = CouplingChoice::for_merge(map, &enc, m, mode)?;
        let axes = choice.axes;
        let out = apply_coupling(&mut enc, map, &choice, feed.pair()?, rng)?;
        let (b1, b2) = (map.merges[m].upper, map.merges[m].lower);
        let ops = vec![
            MeasuredOp {
                op: Pauli::single(n, b1, crate::encoding::logical_x_axis(axes.0)),
                outcome: out.outcomes.0,
            },
            MeasuredOp {
                op: Pauli::single(n, b2, crate::encoding::logical_x_axis(axes.1)),
                outcome: out.outcomes.1,
            },
        ];
        steps.push(DistillStep::Coupling {
            merge: m,
            mode,
            vertices: out.vertices,
            axes,
            outcomes: out.outcomes,
            ops,
        });
    }

    for &v in &plan.z_removed {
        let view = enc.graph()?;
        let neighbors = view.vertices[&v].neighbors.clone();
        let op = enc.logical_rep(v, Axis::Z);
        let outcome = enc.measure_logical(v, Axis::Z, feed.one()?, rng)?;
        steps.push(DistillStep::RemoveZ {
            vertex: v,
            op: MeasuredOp { op, outcome },
            neighbors,
        });
    }

    for v in 0..nv {
        if plan.z_removed.contains(&v) {
            continue;
        }
        let dom = &enc.vertices[v].qubit.domain;
        let k = dom
            .danglers
            .iter()
            .chain(&dom.end_bs)
            .filter(|&&b| !enc.measured[b])
            .count()
            + dom.site_legs.len()
            - 1;
        let f = feed.run(k)?;
        let rep = enc.reduce_domain(v, f.as_deref(), rng)?;
        let ops = rep
            .outcomes
            .iter()
            .map(|(qs, o)| {
                let xa = crate::encoding::logical_x_axis(
                    enc.vertices[v].qubit.domain.axis,
                );
                MeasuredOp { op: Pauli::product(n, qs, xa), outcome: *o }
            })
            .collect();
        steps.push(DistillStep::Reduce { vertex: v, ops, byproduct: rep.byproduct });
    }

    for &v in &plan.y_marked {
        let view = enc.graph()?;
        let mut nb = view.vertices[&v].neighbors.clone();
        nb.sort_unstable();
        if nb.len() != 2 {
            return Err(DistillError::YMarkDegree { vertex: v, degree: nb.len() });
        }
        let op = measure_logical_y(&mut enc, v, feed.one()?, rng)?;
        steps.push(DistillStep::LinkY { vertex: v, op, linked: (nb[0], nb[1]) });
    }

    feed.finish()?;
    enc.certify()?;
    let achieved = enc.graph()?;
    let mut frame = PauliFrame::identity(nv);
    for (&v, p) in &achieved.vertices {
        if p.negated {
            frame.flip_z(v);
        }
    }
    // Fused and padding vertices end pinned (letter X/Y or Z, no edges), so
    // membership is judged by the plan: target vertices must still carry a
    // live letter, everything else must be disentangled, and the live edges
    // must match the target exactly.
    let edges: BTreeSet<(usize, usize)> = achieved.edges.iter().copied().collect();
    let verdict = edges == plan.target.edges
        && plan
            .target
            .vertices
            .iter()
            .all(|v| achieved.vertices[v].letter != Axis::Z)
        && achieved
            .vertices
            .iter()
            .all(|(v, p)| plan.target.vertices.contains(v) || p.neighbors.is_empty());
    let report = DistillationReport {
        achieved,
        verdict,
        steps,
        branch_probability: enc.branch_probability.clone(),
        frame,
    };
    Ok((report, enc))
}

/// Run a plan against a measured lattice state.  See [`distill_encoded`].
pub fn distill(
    state: StabilizerState,
    record: &OutcomeRecord,
    map: &SiteMap,
    plan: &DistillationPlan,
    forced: Option<&[bool]>,
    rng: &mut TrialRng,
) -> Result<DistillationReport, DistillError> {
    distill_encoded(state, record, map, plan, forced, rng).map(|(r, _)| r)
}

/// Replay a logged trajectory on the dense simulator.
///
/// Rebuilds the lattice state amplitude-by-amplitude, applies the recorded
/// site Kraus operators, then projects every logged measurement with its
/// logged outcome.  Returns the final (normalized) state and the product of
/// the projection probabilities over the distillation steps — the dense
/// counterpart of [`DistillationReport::branch_probability`].
pub fn replay_trajectory(
    map: &SiteMap,
    record: &OutcomeRecord,
    steps: &[DistillStep],
    cap: usize,
) -> Result<(DenseState, f64), DenseError> {
    let mut psi = build_aklt(map, cap)?;
    for o in &record.outcomes {
        let legs = map.a_site(o.chain, o.site).legs;
        psi = apply_kraus(&psi, &legs, o.axis).0;
    }
    psi.normalize()?;
    let mut prob = 1.0;
    fn project(
        psi: &mut DenseState,
        prob: &mut f64,
        op: &MeasuredOp,
    ) -> Result<(), DenseError> {
        *prob *= psi.project_pauli(&op.op, op.outcome);
        psi.normalize()?;
        Ok(())
    }
    for step in steps {
        match step {
            DistillStep::Coupling { merge, mode, axes, ops, .. } => {
                let m = &map.merges[*merge];
                psi.apply_gate(basis_flip_gate(axes.0, m.upper));
                psi.apply_gate(basis_flip_gate(axes.1, m.lower));
                if *mode == CouplingMode::Connect {
                    psi.apply_op(
                        &[m.upper, m.lower],
                        &spin::coupling_matrix(axes.0, axes.1),
                    );
                }
                for op in ops {
                    project(&mut psi, &mut prob, op)?;
                }
            }
            DistillStep::Reduce { ops, .. } => {
                for op in ops {
                    project(&mut psi, &mut prob, op)?;
                }
            }
            DistillStep::RemoveZ { op, .. } | DistillStep::LinkY { op, .. } => {
                project(&mut psi, &mut prob, op)?;
            }
        }
    }
    Ok((psi, prob))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{fidelity, tableau_to_dense, DEFAULT_CAP};
    use crate::lattice::{build, LatticeSpec};
    use crate::povm::run_all;
    use crate::rng::{frac, frac_to_f64};

    fn cmdb(chains: usize, sites: usize) -> SiteMap {
        build(&LatticeSpec::cmdb_2d(chains, sites)).unwrap()
    }

    fn prepared(
        map: &SiteMap,
        plan: &[Axis],
        seed: u64,
    ) -> (StabilizerState, OutcomeRecord, TrialRng) {
        let mut rng = TrialRng::new(seed, 0);
        let mut state =
            StabilizerState::from_generators(map.qubits, map.singlet_generators())
                .unwrap();
        let forced: Vec<Option<Axis>> = plan.iter().map(|&a| Some(a)).collect();
        let record = run_all(&mut state, map, &mut rng, Some(&forced)).unwrap();
        (state, record, rng)
    }

    fn sampled(map: &SiteMap, seed: u64) -> (StabilizerState, OutcomeRecord, TrialRng) {
        let mut rng = TrialRng::new(seed, 0);
        let mut state =
            StabilizerState::from_generators(map.qubits, map.singlet_generators())
                .unwrap();
        let record = run_all(&mut state, map, &mut rng, None).unwrap();
        (state, record, rng)
    }

    /// Per-chain site plan repeated over all chains.
    fn tile(map: &SiteMap, pattern: &[Axis]) -> Vec<Axis> {
        (0..map.num_chains())
            .flat_map(|_| {
                (0..map.sites_per_chain()).map(|s| pattern[s % pattern.len()])
            })
            .collect()
    }

    fn forced_bits(n: usize, index: usize) -> Vec<bool> {
        (0..n).map(|b| index >> b & 1 == 1).collect()
    }

    /// Number of coins a plan consumes, probed with a free-running trial.
    fn probe_bits(map: &SiteMap, plan: &[Axis], dplan: &DistillationPlan) -> usize {
        let (state, record, mut rng) = prepared(map, plan, 1);
        let before = rng.draws();
        distill(state, &record, map, dplan, None, &mut rng).unwrap();
        (rng.draws() - before) as usize
    }

    #[test]
    fn plan_minimal_brick() {
        // Three domains per chain, junctions at both ends, middle fused out:
        // the smallest single brick.
        let map = cmdb(2, 3);
        let (_, record, _) = prepared(&map, &tile(&map, &[Axis::Z, Axis::X, Axis::Z]), 3);
        let plan = plan_brickwall(&record, &map).unwrap();
        assert_eq!(plan.modes, vec![CouplingMode::Connect, CouplingMode::Connect]);
        assert_eq!(plan.y_marked, BTreeSet::from([1, 4]));
        assert!(plan.z_removed.is_empty());
        assert_eq!(plan.target.vertices, BTreeSet::from([0, 2, 3, 5]));
        assert_eq!(
            plan.target.edges,
            BTreeSet::from([(0, 2), (0, 3), (2, 5), (3, 5)])
        );
        assert!(plan.target.is_bipartite());
        assert!(plan.target.is_connected());

        // Offset 1 shifts the brick classes onto odd positions, where this
        // lattice has no junctions: everything becomes padding.
        let shifted = plan_brickwall_offset(&record, &map, 1).unwrap();
        assert!(shifted.modes.iter().all(|&m| m == CouplingMode::Disconnect));
        assert!(shifted.target.vertices.is_empty());
    }

    #[test]
    fn plan_five_chain_ideal() {
        let map = cmdb(5, 6);
        let (_, record, _) = prepared(&map, &tile(&map, &[Axis::Z, Axis::X]), 5);
        let plan = plan_brickwall(&record, &map).unwrap();
        let connects = plan.modes.iter().filter(|&&m| m == CouplingMode::Connect).count();
        // Brick classes pick positions ≡ pair (mod 4): {0,4}, {1,5}, {2}, {3}.
        assert_eq!(connects, 6);
        assert!(!plan.y_marked.is_empty());
        assert!(!plan.z_removed.is_empty());
        assert!(plan.target.is_bipartite());
        assert!(plan.target.is_connected());
        let degrees: Vec<usize> =
            plan.target.vertices.iter().map(|&v| plan.target.degree(v)).collect();
        assert!(degrees.iter().all(|&d| d <= 3));
        assert!(degrees.contains(&3));
    }

    #[test]
    fn plan_too_small() {
        let map = build(&LatticeSpec::single_chain(5)).unwrap();
        let (_, record, _) = prepared(&map, &tile(&map, &[Axis::Z, Axis::X]), 7);
        assert!(matches!(
            plan_brickwall(&record, &map),
            Err(DistillError::TooSmall)
        ));

        let map = cmdb(2, 2);
        let (_, record, _) = prepared(&map, &tile(&map, &[Axis::Z, Axis::X]), 7);
        assert!(matches!(
            plan_brickwall(&record, &map),
            Err(DistillError::TooSmall)
        ));
    }

    #[test]
    fn y_mark_on_degree3_rejected() {
        // Connecting both junctions makes vertex 2 degree 3 (two chain
        // neighbors plus a vertical), so fusing it must be refused.
        let map = cmdb(2, 4);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z, Axis::X]);
        let (state, record, mut rng) = prepared(&map, &pattern, 9);
        let modes = vec![CouplingMode::Connect, CouplingMode::Connect];
        let err = planned_target(&record, &map, &modes, &BTreeSet::from([2]), &BTreeSet::new())
            .unwrap_err();
        assert!(matches!(err, DistillError::YMarkDegree { vertex: 2, degree: 3 }));

        let plan = DistillationPlan {
            modes,
            y_marked: BTreeSet::from([2]),
            z_removed: BTreeSet::new(),
            target: PlannedGraph::default(),
        };
        assert!(matches!(
            distill(state, &record, &map, &plan, None, &mut rng),
            Err(DistillError::YMarkDegree { .. })
        ));
    }

    #[test]
    fn all_disconnect_leaves_chain_paths() {
        let map = cmdb(2, 4);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z, Axis::X]);
        let (_, record0, _) = prepared(&map, &pattern, 21);
        let target = planned_target(
            &record0,
            &map,
            &vec![CouplingMode::Disconnect; map.merges.len()],
            &BTreeSet::new(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(target.vertices.len(), 8);
        assert_eq!(
            target.edges,
            BTreeSet::from([(0, 1), (1, 2), (2, 3), (4, 5), (5, 6), (6, 7)])
        );
        assert!(!target.is_connected());
        let plan = DistillationPlan {
            modes: vec![CouplingMode::Disconnect; map.merges.len()],
            y_marked: BTreeSet::new(),
            z_removed: BTreeSet::new(),
            target,
        };
        for seed in [21, 22, 23] {
            let (state, record, mut rng) = prepared(&map, &pattern, seed);
            let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
            assert!(report.verdict);
            assert!(report
                .achieved
                .vertices
                .values()
                .all(|p| p.letter != Axis::Z));
        }
    }

    #[test]
    fn double_junction_cancels() {
        // Two connected junctions between the same pair of wide domains
        // compose two controlled phases: the vertical edge toggles off.
        let map = cmdb(2, 4);
        let pattern = tile(&map, &[Axis::Z; 4]);
        let (_, record0, _) = prepared(&map, &pattern, 31);
        assert_eq!(map.merges.len(), 2);
        let modes = vec![CouplingMode::Connect, CouplingMode::Connect];
        let target =
            planned_target(&record0, &map, &modes, &BTreeSet::new(), &BTreeSet::new())
                .unwrap();
        assert_eq!(target.vertices, BTreeSet::from([0, 1]));
        assert!(target.edges.is_empty());
        let plan = DistillationPlan {
            modes,
            y_marked: BTreeSet::new(),
            z_removed: BTreeSet::new(),
            target,
        };
        for seed in [31, 32, 33] {
            let (state, record, mut rng) = prepared(&map, &pattern, seed);
            let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
            assert!(report.verdict, "verdict failed at seed {seed}");
            assert!(report.achieved.edges.is_empty());
        }
    }

    #[test]
    fn minimal_brick_random_trajectories() {
        let map = cmdb(2, 3);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z]);
        let (_, record0, _) = prepared(&map, &pattern, 3);
        let plan = plan_brickwall(&record0, &map).unwrap();
        let bits = probe_bits(&map, &pattern, &plan);
        assert_eq!(bits, 12);
        for seed in 0..20 {
            let (state, record, mut rng) = prepared(&map, &pattern, seed);
            let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
            assert!(report.verdict, "verdict failed at seed {seed}");
            assert_eq!(report.branch_probability, frac(1, 1u128 << bits));
            assert_eq!(report.frame.z.len(), 6);
            assert!(report.frame.x.iter().all(|&b| !b));
        }
    }

    #[test]
    fn minimal_brick_exhaustive_branches() {
        // Every forced trajectory must reach the same brick, and the exact
        // branch probabilities must tile the full distribution.
        let map = cmdb(2, 3);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z]);
        let (_, record0, _) = prepared(&map, &pattern, 3);
        let plan = plan_brickwall(&record0, &map).unwrap();
        let bits = probe_bits(&map, &pattern, &plan);
        let mut total = frac(0, 1);
        for index in 0..1usize << bits {
            let stream = forced_bits(bits, index);
            let (state, record, mut rng) = prepared(&map, &pattern, 3);
            let report =
                distill(state, &record, &map, &plan, Some(&stream), &mut rng).unwrap();
            assert!(report.verdict, "verdict failed on branch {index}");
            assert_eq!(
                report.achieved.edges,
                vec![(0, 2), (0, 3), (2, 5), (3, 5)],
                "adjacency differs on branch {index}"
            );
            total += &report.branch_probability;
        }
        assert_eq!(total, frac(1, 1));
    }

    #[test]
    fn two_wide_domains_match_dense() {
        // Smallest dense-checkable instance: one junction between two
        // two-site domains.  Every forced branch of the tableau pipeline is
        // replayed on the dense simulator from the logged steps.
        let map = cmdb(2, 2);
        assert!(map.qubits <= DEFAULT_CAP);
        let pattern = tile(&map, &[Axis::Z, Axis::Z]);
        let (_, record0, _) = prepared(&map, &pattern, 41);
        assert_eq!(map.merges.len(), 1);
        let target = planned_target(
            &record0,
            &map,
            &[CouplingMode::Connect],
            &BTreeSet::new(),
            &BTreeSet::new(),
        )
        .unwrap();
        assert_eq!(target.edges, BTreeSet::from([(0, 1)]));
        let plan = DistillationPlan {
            modes: vec![CouplingMode::Connect],
            y_marked: BTreeSet::new(),
            z_removed: BTreeSet::new(),
            target,
        };
        let bits = probe_bits(&map, &pattern, &plan);
        assert_eq!(bits, 10);

        let mut total = frac(0, 1);
        for index in 0..1usize << bits {
            let stream = forced_bits(bits, index);
            let (state, record, mut rng) = prepared(&map, &pattern, 41);
            let (report, enc) =
                distill_encoded(state, &record, &map, &plan, Some(&stream), &mut rng)
                    .unwrap();
            assert!(report.verdict, "verdict failed on branch {index}");
            total += &report.branch_probability;

            // Dense replay on a sample of branches; the full set is too slow.
            if index % 131 == 0 {
                let (psi, prob) =
                    replay_trajectory(&map, &record, &report.steps, DEFAULT_CAP)
                        .unwrap();
                let tab = tableau_to_dense(&enc.state, DEFAULT_CAP).unwrap();
                let fid = fidelity(&tab, &psi).unwrap();
                assert!(fid >= 1.0 - 1e-10, "branch {index}: fidelity {fid}");
                let claimed = frac_to_f64(&report.branch_probability);
                assert!(
                    (prob - claimed).abs() < 1e-9,
                    "branch {index}: dense probability {prob} vs {claimed}"
                );
            }
        }
        assert_eq!(total, frac(1, 1));
    }

    #[test]
    fn three_chain_brick_trajectories() {
        // Three chains, eight domains each: junction classes {0,4} on the
        // upper pair and {1,5} on the lower pair leave a honeycomb face
        // 0-1-4-12-9-8 and two degree-3 interior vertices.
        let map = cmdb(3, 8);
        let pattern = tile(&map, &[Axis::Z, Axis::X]);
        let (_, record0, _) = prepared(&map, &pattern, 51);
        let plan = plan_brickwall(&record0, &map).unwrap();
        assert_eq!(
            plan.target.vertices,
            BTreeSet::from([0, 1, 4, 8, 9, 12, 13, 17, 18, 21])
        );
        assert_eq!(
            plan.target.edges,
            BTreeSet::from([
                (0, 1),
                (1, 4),
                (8, 9),
                (9, 12),
                (12, 13),
                (17, 18),
                (18, 21),
                (0, 8),
                (4, 12),
                (9, 17),
                (13, 21),
            ])
        );
        assert!(plan.target.is_bipartite());
        assert!(plan.target.is_connected());
        assert_eq!(plan.target.degree(9), 3);
        assert_eq!(plan.target.degree(12), 3);
        for seed in 50..60 {
            let (state, record, mut rng) = prepared(&map, &pattern, seed);
            let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
            assert!(report.verdict, "verdict failed at seed {seed}");
        }
    }

    #[test]
    fn five_chain_random_trajectories() {
        // Random site outcomes and random measurement trajectories: every
        // plan the brick-wall planner accepts must reach its target.
        let map = cmdb(5, 8);
        let mut successes = 0;
        let mut seed = 0;
        while successes < 100 {
            seed += 1;
            let (state, record, mut rng) = sampled(&map, seed);
            let plan = match plan_brickwall(&record, &map) {
                Ok(p) => p,
                Err(DistillError::TooSmall) => continue,
                Err(e) => panic!("planner failed at seed {seed}: {e}"),
            };
            let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
            assert!(report.verdict, "verdict failed at seed {seed}");
            assert!(report.branch_probability > frac(0, 1));
            successes += 1;
        }
    }

    #[test]
    fn not_reduced_guard() {
        let map = cmdb(2, 2);
        let (state, record, mut rng) =
            prepared(&map, &tile(&map, &[Axis::Z, Axis::Z]), 61);
        let mut enc = analyze(&record, &map, state).unwrap();
        let err = measure_logical_y(&mut enc, 0, None, &mut rng).unwrap_err();
        assert!(matches!(err, DistillError::NotReduced(0)));
    }

    #[test]
    fn forced_stream_length_is_checked() {
        let map = cmdb(2, 3);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z]);
        let (_, record0, _) = prepared(&map, &pattern, 3);
        let plan = plan_brickwall(&record0, &map).unwrap();

        let (state, record, mut rng) = prepared(&map, &pattern, 3);
        let err = distill(state, &record, &map, &plan, Some(&[false; 5]), &mut rng)
            .unwrap_err();
        assert!(matches!(err, DistillError::ForcedExhausted { supplied: 5 }));

        let (state, record, mut rng) = prepared(&map, &pattern, 3);
        let err = distill(state, &record, &map, &plan, Some(&[false; 20]), &mut rng)
            .unwrap_err();
        assert!(matches!(err, DistillError::ForcedUnused { used: 12, supplied: 20 }));
    }

    #[test]
    fn plan_and_report_serde_round_trip() {
        let map = cmdb(2, 3);
        let pattern = tile(&map, &[Axis::Z, Axis::X, Axis::Z]);
        let (state, record, mut rng) = prepared(&map, &pattern, 3);
        let plan = plan_brickwall(&record, &map).unwrap();
        let json = serde_json::to_string(&plan).unwrap();
        let back: DistillationPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);

        let report = distill(state, &record, &map, &plan, None, &mut rng).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: DistillationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.verdict, report.verdict);
        assert_eq!(back.steps, report.steps);
        assert_eq!(back.branch_probability, report.branch_probability);
        assert_eq!(back.achieved, report.achieved);
    }
}
