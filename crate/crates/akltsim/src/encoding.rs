//! Outcome domains, logical qubits, and encoded-cluster certification.
//!
//! After every site of a quasichain has been measured with the three-outcome
//! POVM, consecutive sites sharing an outcome axis form a *domain*.  Each
//! domain encodes one logical qubit in a small stabilizer code over its
//! virtual legs and attached `b` qubits; the post-measurement chain is, up to
//! signs and diagonal corrections, a cluster state over these logical qubits.
//!
//! This module finds the domains, builds each domain's code block and logical
//! operators, derives the chain-level stabilizer of every logical vertex as a
//! literal product of singlet stabilizers (verifying group membership and
//! reducing it to logical `±Z(X|Y)Z` form), and maintains an [`EncodedState`]:
//! the physical tableau together with a logical-level tableau, per-vertex
//! physical representatives of the logical operators, and bookkeeping of all
//! code generators and measured-out qubits.  Certification re-encodes the
//! logical tableau through the representatives and demands exact stabilizer
//! group equality with the physical state — no graph-measurement rules are
//! hard-coded anywhere; they emerge from the tableau algebra.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{extract_view, GraphError, GraphView};
use crate::lattice::SiteMap;
use crate::pauli::{Axis, Gate, Pauli};
use crate::povm::OutcomeRecord;
use crate::rng::{frac, Frac, TrialRng};
use crate::stab::{GroupBasis, StabError, StabilizerState};

#[derive(Debug, Error)]
pub enum EncodingError {
    #[error("no recorded outcome for chain {chain} site {site}")]
    MissingOutcome { chain: usize, site: usize },
    #[error("derived stabilizer {0} is not in the state's group")]
    KNotInGroup(String),
    #[error("derived stabilizer {0} reduces to no ±Z(X|Y)Z logical form")]
    NoLogicalForm(String),
    #[error("certification failed: {0}")]
    Certification(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
    #[error(transparent)]
    State(#[from] StabError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Axis `x(a)` whose single-qubit operator, taken over every qubit of an
/// `a`-domain block, implements the encoded X (and whose eigenbasis is the
/// `|±⟩` basis used to shrink or detach blocks).
pub fn logical_x_axis(axis: Axis) -> Axis {
    match axis {
        Axis::Z => Axis::X,
        Axis::X | Axis::Y => Axis::Z,
    }
}

/// A maximal run of equal-outcome sites on one chain, with its attached
/// qubits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Domain {
    pub chain: usize,
    /// First site of the run (inclusive).
    pub start: usize,
    /// Last site of the run (inclusive).
    pub end: usize,
    pub axis: Axis,
    /// Legs (left, middle, right) of each site in the run.
    pub site_legs: Vec<[usize; 3]>,
    /// Dangling `b` qubit of each site in the run.
    pub danglers: Vec<usize>,
    /// Chain-end `b` qubits attached to the run (left end first).
    pub end_bs: Vec<usize>,
}

impl Domain {
    pub fn num_sites(&self) -> usize {
        self.end - self.start + 1
    }

    /// All member qubit ids: legs, danglers, then end qubits.
    pub fn qubits(&self) -> Vec<usize> {
        let mut q: Vec<usize> = self.site_legs.iter().flatten().copied().collect();
        q.extend(&self.danglers);
        q.extend(&self.end_bs);
        q
    }
}

/// One domain's code block and logical operators.
///
/// The block generators fix a two-dimensional code space; `logical_z` and
/// `logical_x` are the current physical representatives of the encoded Pauli
/// operators (they start as the canonical per-domain choices and absorb
/// measurement byproducts and gate conjugations as the pipeline acts on the
/// state — their signs are part of the bookkeeping, never normalized away).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicalQubit {
    pub domain: Domain,
    pub stabilizer_generators: Vec<Pauli>,
    pub logical_z: Pauli,
    pub logical_x: Pauli,
}

/// Split the recorded outcomes into maximal same-axis runs per chain.
pub fn find_domains(
    record: &OutcomeRecord,
    map: &SiteMap,
) -> Result<Vec<Domain>, EncodingError> {
    let chains = map.num_chains();
    let n_sites = map.sites_per_chain();
    let mut axes = vec![vec![None; n_sites]; chains];
    for o in &record.outcomes {
        axes[o.chain][o.site] = Some(o.axis);
    }
    let mut domains = Vec::new();
    for (chain, row) in axes.iter().enumerate() {
        let mut start = 0;
        while start < n_sites {
            let axis = row[start]
                .ok_or(EncodingError::MissingOutcome { chain, site: start })?;
            let mut end = start;
            while end + 1 < n_sites && row[end + 1] == Some(axis) {
                end += 1;
            }
            domains.push(domain_at(map, chain, start, end, axis));
            start = end + 1;
        }
    }
    Ok(domains)
}

fn domain_at(map: &SiteMap, chain: usize, start: usize, end: usize, axis: Axis) -> Domain {
    let site_legs: Vec<[usize; 3]> =
        (start..=end).map(|s| map.a_site(chain, s).legs).collect();
    let danglers: Vec<usize> = (start..=end).map(|s| map.dangling_b(chain, s)).collect();
    let mut end_bs = Vec::new();
    if start == 0 {
        end_bs.push(map.b_for_leg(site_legs[0][0]).expect("left end singlet").id);
    }
    if end == map.sites_per_chain() - 1 {
        let last = site_legs[site_legs.len() - 1];
        end_bs.push(map.b_for_leg(last[2]).expect("right end singlet").id);
    }
    Domain { chain, start, end, axis, site_legs, danglers, end_bs }
}

/// Build a domain's code block and canonical logical operators.
///
/// Per site the block carries the two site checks `σ_a σ_a` (left·middle,
/// left·right) plus the dangling singlet `−σ_a σ_a`; consecutive sites are
/// linked by the backbone singlet `−σ_a σ_a`, and chain-end runs include the
/// end singlet.  That yields `4k−1+e` generators over `4k+e` qubits: a
/// two-dimensional code.  `logical_z` is `σ_a` on the first site's left leg;
/// `logical_x` is `σ_x(a)` over every block qubit.
pub fn build_logical(domain: &Domain, map: &SiteMap) -> LogicalQubit {
    let n = map.qubits;
    let a = domain.axis;
    let mut gens = Vec::new();
    for (legs, &d) in domain.site_legs.iter().zip(&domain.danglers) {
        gens.push(Pauli::product(n, &[legs[0], legs[1]], a));
        gens.push(Pauli::product(n, &[legs[0], legs[2]], a));
        gens.push(Pauli::product(n, &[legs[1], d], a).negated());
    }
    for w in domain.site_legs.windows(2) {
        gens.push(Pauli::product(n, &[w[0][2], w[1][0]], a).negated());
    }
    if domain.start == 0 {
        gens.push(Pauli::product(n, &[domain.end_bs[0], domain.site_legs[0][0]], a).negated());
    }
    if domain.end == map.sites_per_chain() - 1 {
        let last_leg = domain.site_legs[domain.site_legs.len() - 1][2];
        let b = *domain.end_bs.last().expect("right end qubit");
        gens.push(Pauli::product(n, &[last_leg, b], a).negated());
    }
    let logical_z = Pauli::single(n, domain.site_legs[0][0], a);
    let logical_x = Pauli::product(n, &domain.qubits(), logical_x_axis(a));
    LogicalQubit { domain: domain.clone(), stabilizer_generators: gens, logical_z, logical_x }
}

/// The chain-level stabilizer derived for one logical vertex.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedK {
    /// Vertex index within its chain's ordered domain list.
    pub vertex: usize,
    /// The literal product of singlet stabilizers, verified to stabilize the
    /// post-measurement state.
    pub physical: Pauli,
    /// Letter of the logical form at the home vertex (X or Y).
    pub letter: Axis,
    /// Sign of the logical form (`true` = negative).
    pub negated: bool,
}

/// Derive one chain-level stabilizer per logical vertex of a single chain.
///
/// Each is built as the product of: the boundary singlet to the left
/// neighbor in the neighbor's axis, every internal singlet of the home
/// domain (dangling, backbone, chain-end) in the home domain's `x(a)` axis,
/// and the boundary singlet to the right neighbor in that neighbor's axis.
/// The product is checked to lie in the state's stabilizer group, then
/// reduced modulo the code blocks to `±Z·(X|Y)·Z` over the neighboring
/// vertices; the sign is computed, never assumed.
pub fn derive_chain_stabilizers(
    logicals: &[LogicalQubit],
    state: &StabilizerState,
) -> Result<Vec<DerivedK>, EncodingError> {
    let n = state.num_qubits();
    let state_basis = GroupBasis::from_state(state);
    let mut code_basis = GroupBasis::empty(n);
    for l in logicals {
        for g in &l.stabilizer_generators {
            let prior = code_basis.extend(g);
            debug_assert!(prior.is_none(), "block generators must be independent");
        }
    }
    let mut ks = Vec::with_capacity(logicals.len());
    for (v, home) in logicals.iter().enumerate() {
        let k = k_product(logicals, v, n);
        if state_basis.sign_of(&k) != Some(false) {
            return Err(EncodingError::KNotInGroup(k.to_string()));
        }
        let (letter, negated) = logical_form(&k, logicals, v, &code_basis)?;
        let _ = home;
        ks.push(DerivedK { vertex: v, physical: k, letter, negated });
    }
    Ok(ks)
}

/// The literal singlet-stabilizer product for vertex `v`.
fn k_product(logicals: &[LogicalQubit], v: usize, n: usize) -> Pauli {
    let dom = &logicals[v].domain;
    let xa = logical_x_axis(dom.axis);
    let mut k = Pauli::identity(n);
    let mut mul_singlet = |q0: usize, q1: usize, axis: Axis| {
        k.mul_assign(&Pauli::product(n, &[q0, q1], axis).negated());
    };
    if v > 0 {
        let left = &logicals[v - 1].domain;
        let last = left.site_legs[left.site_legs.len() - 1];
        mul_singlet(last[2], dom.site_legs[0][0], left.axis);
    }
    for (legs, &d) in dom.site_legs.iter().zip(&dom.danglers) {
        mul_singlet(legs[1], d, xa);
    }
    for w in dom.site_legs.windows(2) {
        mul_singlet(w[0][2], w[1][0], xa);
    }
    let mut ends = dom.end_bs.iter();
    if dom.start == 0 {
        mul_singlet(*ends.next().expect("left end"), dom.site_legs[0][0], xa);
    }
    if let Some(&b) = ends.next() {
        mul_singlet(dom.site_legs[dom.site_legs.len() - 1][2], b, xa);
    }
    if v + 1 < logicals.len() {
        let right = &logicals[v + 1].domain;
        let last = dom.site_legs[dom.site_legs.len() - 1];
        mul_singlet(last[2], right.domain_first_leg(), right.axis);
    }
    k
}

impl Domain {
    fn domain_first_leg(&self) -> usize {
        self.site_legs[0][0]
    }
}

/// Reduce `k` modulo the code blocks to `±Z_left (X|Y)_v Z_right`.
fn logical_form(
    k: &Pauli,
    logicals: &[LogicalQubit],
    v: usize,
    code_basis: &GroupBasis,
) -> Result<(Axis, bool), EncodingError> {
    for letter in [Axis::X, Axis::Y] {
        let mut c = Pauli::identity(k.num_qubits());
        if v > 0 {
            c.mul_assign(&logicals[v - 1].logical_z);
        }
        match letter {
            Axis::X => c.mul_assign(&logicals[v].logical_x),
            Axis::Y => {
                let y = logicals[v]
                    .logical_x
                    .mul(&logicals[v].logical_z)
                    .expect("same width")
                    .times_i();
                c.mul_assign(&y);
            }
            Axis::Z => unreachable!(),
        }
        if v + 1 < logicals.len() {
            c.mul_assign(&logicals[v + 1].logical_z);
        }
        let q = k.mul(&c).expect("same width");
        if !q.is_hermitian() {
            continue;
        }
        if let Some(negated) = code_basis.sign_of(&q) {
            // k = (−1)^negated · c · (block generator product)
            return Ok((letter, negated));
        }
    }
    Err(EncodingError::NoLogicalForm(k.to_string()))
}

/// One logical vertex of an [`EncodedState`].
#[derive(Clone, Debug)]
pub struct EncodedQubit {
    pub qubit: LogicalQubit,
    /// True once the block has been shrunk to its first site.
    pub reduced: bool,
}

/// A physical stabilizer state paired with its certified logical model.
///
/// `logical` is a tableau over the logical vertices; `qubit` representatives
/// map its operators onto physical Pauli strings.  `checks` are the code
/// generators still stabilizing the state, `spectators` the signed operators
/// fixed by measuring out auxiliary qubits.  Certification translates the
/// canonical logical generators through the representatives and demands that
/// checks + spectators + translations generate exactly the physical state's
/// stabilizer group.
#[derive(Clone, Debug)]
pub struct EncodedState {
    pub state: StabilizerState,
    pub logical: StabilizerState,
    pub vertices: Vec<EncodedQubit>,
    pub checks: Vec<Pauli>,
    pub spectators: Vec<Pauli>,
    /// Physical qubits consumed by single- or joint-qubit measurements.
    pub measured: Vec<bool>,
    /// Exact product of the probabilities of every measurement performed
    /// through this state since analysis (forced branches included).
    pub branch_probability: Frac,
    /// Physical qubit → owning logical vertex (for block members).
    owner: Vec<Option<usize>>,
}

/// Outcomes of shrinking one domain to its first site.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReduceReport {
    pub vertex: usize,
    /// Measured qubit groups with their outcomes (`true` = −1 eigenvalue).
    pub outcomes: Vec<(Vec<usize>, bool)>,
    /// Accumulated sign on the X representative: a logical-Z frame bit.
    pub byproduct: bool,
}

/// Analyze a measured lattice: find domains, build blocks, derive and verify
/// the chain stabilizers, and assemble the logical model.
pub fn analyze(
    record: &OutcomeRecord,
    map: &SiteMap,
    state: StabilizerState,
) -> Result<EncodedState, EncodingError> {
    let domains = find_domains(record, map)?;
    let mut vertices: Vec<EncodedQubit> = Vec::new();
    let mut k_gens: Vec<(usize, usize, usize, DerivedK)> = Vec::new();
    for chain in 0..map.num_chains() {
        let offset = vertices.len();
        let logicals: Vec<LogicalQubit> = domains
            .iter()
            .filter(|d| d.chain == chain)
            .map(|d| build_logical(d, map))
            .collect();
        let ks = derive_chain_stabilizers(&logicals, &state)?;
        let m = logicals.len();
        for k in ks {
            k_gens.push((offset, m, k.vertex, k));
        }
        vertices.extend(
            logicals.into_iter().map(|qubit| EncodedQubit { qubit, reduced: false }),
        );
    }
    let n_log = vertices.len();
    let mut gens = Vec::with_capacity(n_log);
    for (offset, m, local, k) in &k_gens {
        let mut p = Pauli::identity(n_log);
        if *local > 0 {
            p.set_axis(offset + local - 1, Some(Axis::Z));
        }
        p.set_axis(offset + local, Some(k.letter));
        if local + 1 < *m {
            p.set_axis(offset + local + 1, Some(Axis::Z));
        }
        if k.negated {
            p.negate();
        }
        gens.push(p);
    }
    let logical = StabilizerState::from_generators(n_log, gens)?;
    let checks: Vec<Pauli> = vertices
        .iter()
        .flat_map(|v| v.qubit.stabilizer_generators.iter().cloned())
        .collect();
    let mut owner = vec![None; map.qubits];
    for (i, v) in vertices.iter().enumerate() {
        for q in v.qubit.domain.qubits() {
            owner[q] = Some(i);
        }
    }
    let encoded = EncodedState {
        measured: vec![false; state.num_qubits()],
        state,
        logical,
        vertices,
        checks,
        spectators: Vec::new(),
        branch_probability: frac(1, 1),
        owner,
    };
    Ok(encoded)
}

impl EncodedState {
    /// Owning logical vertex of a physical qubit, if it is a block member.
    pub fn vertex_of_qubit(&self, q: usize) -> Option<usize> {
        self.owner[q]
    }

    /// Physical representative of a logical Pauli string.
    ///
    /// Phase-preserving: each logical `X`/`Z` factor is replaced by its
    /// representative in qubit-ascending, X-before-Z order, matching the
    /// `i^ph · Π X^x Z^z` convention, so commutation and Hermiticity carry
    /// over exactly.
    pub fn translate(&self, logical: &Pauli) -> Pauli {
        let mut out = Pauli::identity(self.state.num_qubits());
        for _ in 0..logical.phase_exp() {
            out = out.times_i();
        }
        for (v, q) in self.vertices.iter().enumerate() {
            if logical.x_bit(v) {
                out.mul_assign(&q.qubit.logical_x);
            }
            if logical.z_bit(v) {
                out.mul_assign(&q.qubit.logical_z);
            }
        }
        debug_assert_eq!(out.is_hermitian(), logical.is_hermitian());
        out
    }

    /// Certify that checks + spectators + re-encoded logical generators
    /// produce exactly the physical stabilizer group.
    pub fn certify(&self) -> Result<(), EncodingError> {
        let n = self.state.num_qubits();
        let mut basis = GroupBasis::empty(n);
        let mut labeled: Vec<(Pauli, &'static str)> = Vec::new();
        for c in &self.checks {
            labeled.push((c.clone(), "code"));
        }
        for s in &self.spectators {
            labeled.push((s.clone(), "measured"));
        }
        for g in self.logical.canonical().generators() {
            labeled.push((self.translate(g), "encoded"));
        }
        for (p, what) in &labeled {
            if basis.extend(p) == Some(true) {
                return Err(EncodingError::Certification(format!(
                    "sign conflict absorbing {what} generator {p}"
                )));
            }
        }
        if basis.rank() != self.state.rank() {
            return Err(EncodingError::Certification(format!(
                "expected group has rank {}, state has rank {}",
                basis.rank(),
                self.state.rank()
            )));
        }
        for g in self.state.generators() {
            if basis.sign_of(g) != Some(false) {
                return Err(EncodingError::Certification(format!(
                    "state generator {g} is not implied by the model"
                )));
            }
        }
        Ok(())
    }

    /// Read the logical tableau as a dressed graph state.
    pub fn graph(&self) -> Result<GraphView, EncodingError> {
        Ok(extract_view(&self.logical)?)
    }

    /// Conjugate the physical state and all bookkeeping through gates.
    pub fn apply_physical(&mut self, gates: &[Gate]) {
        for &g in gates {
            self.state.apply(g);
            for p in &mut self.checks {
                p.conjugate(g);
            }
            for p in &mut self.spectators {
                p.conjugate(g);
            }
            for q in &mut self.vertices {
                q.qubit.logical_x.conjugate(g);
                q.qubit.logical_z.conjugate(g);
            }
        }
    }

    /// Measure a physical operator whose randomness, if any, is sourced in
    /// the code sector (it must not implement a logical operator).
    ///
    /// On a random outcome the destroyed code generator is located and
    /// multiplied into every bookkeeping string that anticommutes with the
    /// measurement, restoring their validity; the signed measured operator
    /// then joins the spectators, and representatives absorb it whenever
    /// that shrinks their support (this is where outcome signs accumulate).
    pub fn measure_code(
        &mut self,
        m: &Pauli,
        forced: Option<bool>,
        rng: &mut TrialRng,
    ) -> Result<bool, EncodingError> {
        let meas = self.state.measure(m, forced, rng)?;
        self.branch_probability *= &meas.probability;
        if meas.random {
            let a = if let Some(i) = self.checks.iter().position(|c| !c.commutes(m)) {
                self.checks.swap_remove(i)
            } else if let Some(i) = self.spectators.iter().position(|s| !s.commutes(m)) {
                self.spectators.swap_remove(i)
            } else {
                return Err(EncodingError::Internal(format!(
                    "random measurement {m} has no code-sector partner"
                )));
            };
            for p in self.checks.iter_mut().chain(self.spectators.iter_mut()) {
                if !p.commutes(m) {
                    p.mul_assign(&a);
                }
            }
            for q in &mut self.vertices {
                for p in [&mut q.qubit.logical_x, &mut q.qubit.logical_z] {
                    if !p.commutes(m) {
                        p.mul_assign(&a);
                    }
                }
            }
        }
        let signed = if meas.outcome { m.clone().negated() } else { m.clone() };
        for q in &mut self.vertices {
            for p in [&mut q.qubit.logical_x, &mut q.qubit.logical_z] {
                let folded = p.mul(&signed).expect("same width");
                if folded.weight() < p.weight() {
                    *p = folded;
                }
            }
        }
        for q in signed.support() {
            self.measured[q] = true;
        }
        if meas.random {
            self.spectators.push(signed);
        }
        Ok(meas.outcome)
    }

    /// Measure one logical vertex in the X, Y, or Z basis by measuring its
    /// physical representative; the logical tableau absorbs the same outcome.
    pub fn measure_logical(
        &mut self,
        vertex: usize,
        basis: Axis,
        forced: Option<bool>,
        rng: &mut TrialRng,
    ) -> Result<bool, EncodingError> {
        let rep = self.logical_rep(vertex, basis);
        let pm = self.state.measure(&rep, forced, rng)?;
        self.branch_probability *= &pm.probability;
        let lp = Pauli::single(self.logical.num_qubits(), vertex, basis);
        self.logical.measure(&lp, Some(pm.outcome), rng).map_err(|e| match e {
            StabError::ForcedContradiction { .. } => EncodingError::Certification(format!(
                "logical model contradicts physical outcome of {basis:?} on vertex {vertex}"
            )),
            other => EncodingError::State(other),
        })?;
        for q in rep.support() {
            self.measured[q] = true;
        }
        Ok(pm.outcome)
    }

    /// Current physical representative of a single-vertex logical operator.
    pub fn logical_rep(&self, vertex: usize, basis: Axis) -> Pauli {
        let q = &self.vertices[vertex].qubit;
        match basis {
            Axis::X => q.logical_x.clone(),
            Axis::Z => q.logical_z.clone(),
            Axis::Y => q.logical_x.mul(&q.logical_z).expect("same width").times_i(),
        }
    }

    /// Shrink a domain to its first site: measure each unconsumed dangling
    /// and chain-end qubit singly, and every other site's leg triple jointly,
    /// all in the block's `x(a)` basis.  The logical tableau is untouched;
    /// outcome signs accumulate on the X representative and are reported as
    /// a logical-Z frame bit.
    pub fn reduce_domain(
        &mut self,
        vertex: usize,
        forced: Option<&[bool]>,
        rng: &mut TrialRng,
    ) -> Result<ReduceReport, EncodingError> {
        let dom = self.vertices[vertex].qubit.domain.clone();
        let xa = logical_x_axis(dom.axis);
        let n = self.state.num_qubits();
        let mut targets: Vec<Vec<usize>> = Vec::new();
        for &b in dom.danglers.iter().chain(&dom.end_bs) {
            if !self.measured[b] {
                targets.push(vec![b]);
            }
        }
        for legs in &dom.site_legs[1..] {
            targets.push(legs.to_vec());
        }
        if let Some(plan) = forced {
            if plan.len() != targets.len() {
                return Err(EncodingError::Internal(format!(
                    "forced plan has {} bits for {} measurements",
                    plan.len(),
                    targets.len()
                )));
            }
        }
        let mut outcomes = Vec::with_capacity(targets.len());
        for (i, qs) in targets.iter().enumerate() {
            let p = Pauli::product(n, qs, xa);
            let f = forced.map(|plan| plan[i]);
            let out = self.measure_code(&p, f, rng)?;
            outcomes.push((qs.clone(), out));
        }
        let v = &mut self.vertices[vertex];
        let first = dom.site_legs[0];
        debug_assert!(
            {
                let own: Vec<usize> = v
                    .qubit
                    .logical_x
                    .support()
                    .into_iter()
                    .filter(|q| dom.qubits().contains(q))
                    .collect();
                own == first.to_vec()
            },
            "X representative must shrink to the first site"
        );
        let byproduct = v.qubit.logical_x.sign_bit();
        let a = dom.axis;
        v.qubit.domain = Domain {
            chain: dom.chain,
            start: dom.start,
            end: dom.start,
            axis: a,
            site_legs: vec![first],
            danglers: Vec::new(),
            end_bs: Vec::new(),
        };
        v.qubit.stabilizer_generators = vec![
            Pauli::product(n, &[first[0], first[1]], a),
            Pauli::product(n, &[first[0], first[2]], a),
        ];
        v.reduced = true;
        Ok(ReduceReport { vertex, outcomes, byproduct })
    }
}

/// Certify one chain against its derived stabilizers and return the logical
/// graph.  Thin wrapper assembling an [`EncodedState`] for a state that
/// spans exactly the given logical qubits.
pub fn certify_cluster(
    logicals: &[LogicalQubit],
    ks: &[DerivedK],
    state: &StabilizerState,
) -> Result<GraphView, EncodingError> {
    let n_log = logicals.len();
    let mut gens = Vec::with_capacity(ks.len());
    for k in ks {
        let mut p = Pauli::identity(n_log);
        if k.vertex > 0 {
            p.set_axis(k.vertex - 1, Some(Axis::Z));
        }
        p.set_axis(k.vertex, Some(k.letter));
        if k.vertex + 1 < n_log {
            p.set_axis(k.vertex + 1, Some(Axis::Z));
        }
        if k.negated {
            p.negate();
        }
        gens.push(p);
    }
    let logical = StabilizerState::from_generators(n_log, gens)?;
    let checks: Vec<Pauli> = logicals
        .iter()
        .flat_map(|l| l.stabilizer_generators.iter().cloned())
        .collect();
    let mut owner = vec![None; state.num_qubits()];
    for (i, l) in logicals.iter().enumerate() {
        for q in l.domain.qubits() {
            owner[q] = Some(i);
        }
    }
    let encoded = EncodedState {
        measured: vec![false; state.num_qubits()],
        state: state.clone(),
        logical,
        vertices: logicals
            .iter()
            .map(|l| EncodedQubit { qubit: l.clone(), reduced: false })
            .collect(),
        checks,
        spectators: Vec::new(),
        branch_probability: frac(1, 1),
        owner,
    };
    encoded.certify()?;
    encoded.graph()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::{build_aklt, fidelity, tableau_to_dense, DEFAULT_CAP};
    use crate::lattice::{build as build_lattice, LatticeSpec};
    use crate::povm::run_all;
    use crate::rng::frac;
    use proptest::prelude::*;

    fn forced_chain(
        sites: usize,
        axes: &[Axis],
        seed: u64,
    ) -> (SiteMap, StabilizerState, OutcomeRecord) {
        let map = build_lattice(&LatticeSpec::single_chain(sites)).unwrap();
        let mut state = map.initial_state().unwrap();
        let mut rng = TrialRng::new(seed, 0);
        let plan: Vec<Option<Axis>> = axes.iter().map(|&a| Some(a)).collect();
        let record = run_all(&mut state, &map, &mut rng, Some(&plan)).unwrap();
        (map, state, record)
    }

    fn random_axes(sites: usize, rng: &mut TrialRng) -> Vec<Axis> {
        let thirds = [frac(1, 3), frac(1, 3), frac(1, 3)];
        (0..sites)
            .map(|_| [Axis::X, Axis::Y, Axis::Z][rng.pick(&thirds)])
            .collect()
    }

    fn parse_axes(s: &str) -> Vec<Axis> {
        s.chars()
            .map(|c| match c {
                'x' => Axis::X,
                'y' => Axis::Y,
                'z' => Axis::Z,
                _ => panic!("bad axis char"),
            })
            .collect()
    }

    #[test]
    fn domain_runs_split_the_outcome_string() {
        let axes = parse_axes("xxyzxzzzy");
        let (map, _state, record) = forced_chain(9, &axes, 1);
        let domains = find_domains(&record, &map).unwrap();
        let runs: Vec<(usize, usize, Axis)> =
            domains.iter().map(|d| (d.start, d.end, d.axis)).collect();
        assert_eq!(
            runs,
            vec![
                (0, 1, Axis::X),
                (2, 2, Axis::Y),
                (3, 3, Axis::Z),
                (4, 4, Axis::X),
                (5, 7, Axis::Z),
                (8, 8, Axis::Y),
            ]
        );
        // partition of A-sites
        let covered: usize = domains.iter().map(Domain::num_sites).sum();
        assert_eq!(covered, 9);
    }

    #[test]
    fn degenerate_domain_splits() {
        let (map, _s, record) = forced_chain(3, &parse_axes("xyz"), 2);
        assert_eq!(find_domains(&record, &map).unwrap().len(), 3);
        let (map, _s, record) = forced_chain(4, &parse_axes("yyyy"), 3);
        let doms = find_domains(&record, &map).unwrap();
        assert_eq!(doms.len(), 1);
        assert_eq!(doms[0].end_bs.len(), 2);
        let (map, _s, record) = forced_chain(1, &parse_axes("x"), 4);
        assert_eq!(find_domains(&record, &map).unwrap().len(), 1);
    }

    #[test]
    fn single_site_block_matches_fixed_table() {
        // bulk site 1 of a 3-site chain: legs 3,4,5 and dangler 11
        for (axis, x_axis) in [(Axis::Z, Axis::X), (Axis::X, Axis::Z), (Axis::Y, Axis::Z)] {
            let (map, _s, record) = forced_chain(
                3,
                &[
                    if axis == Axis::Z { Axis::X } else { Axis::Z },
                    axis,
                    if axis == Axis::Z { Axis::X } else { Axis::Z },
                ],
                5,
            );
            let doms = find_domains(&record, &map).unwrap();
            let l = build_logical(&doms[1], &map);
            let n = map.qubits;
            assert_eq!(
                l.stabilizer_generators,
                vec![
                    Pauli::product(n, &[3, 4], axis),
                    Pauli::product(n, &[3, 5], axis),
                    Pauli::product(n, &[4, 11], axis).negated(),
                ]
            );
            assert_eq!(l.logical_z, Pauli::single(n, 3, axis));
            assert_eq!(l.logical_x, Pauli::product(n, &[3, 4, 5, 11], x_axis));
        }
    }

    #[test]
    fn block_algebra_over_random_outcomes() {
        let mut rng = TrialRng::new(11, 0);
        for trial in 0..1000 {
            let sites = 1 + (trial % 7);
            let axes = random_axes(sites, &mut rng);
            let map = build_lattice(&LatticeSpec::single_chain(sites)).unwrap();
            let mut state = map.initial_state().unwrap();
            let plan: Vec<Option<Axis>> = axes.iter().map(|&a| Some(a)).collect();
            let mut povm_rng = TrialRng::new(trial as u64, 7);
            let record = run_all(&mut state, &map, &mut povm_rng, Some(&plan)).unwrap();
            for d in find_domains(&record, &map).unwrap() {
                let l = build_logical(&d, &map);
                let k = d.num_sites();
                let e = d.end_bs.len();
                assert_eq!(l.stabilizer_generators.len(), 4 * k - 1 + e);
                assert_eq!(d.qubits().len(), 4 * k + e);
                // two-dimensional code: independent commuting generators,
                // one fewer than the qubit count
                let code = StabilizerState::from_generators(
                    map.qubits,
                    l.stabilizer_generators.clone(),
                )
                .unwrap();
                assert_eq!(code.rank(), 4 * k - 1 + e);
                for g in &l.stabilizer_generators {
                    assert!(g.commutes(&l.logical_x), "X vs {g}");
                    assert!(g.commutes(&l.logical_z), "Z vs {g}");
                }
                assert!(!l.logical_x.commutes(&l.logical_z));
            }
        }
    }

    #[test]
    fn two_site_block_basis_states_in_dense() {
        // standalone two-site z-run over qubits [l1,m1,r1,d1,l2,m2,r2,d2]:
        // the code space is spanned by |000 1 111 0> and |111 0 000 1>
        use crate::dense::DenseState;
        let n = 8;
        let gens = vec![
            Pauli::product(n, &[0, 1], Axis::Z),
            Pauli::product(n, &[0, 2], Axis::Z),
            Pauli::product(n, &[1, 3], Axis::Z).negated(),
            Pauli::product(n, &[4, 5], Axis::Z),
            Pauli::product(n, &[4, 6], Axis::Z),
            Pauli::product(n, &[5, 7], Axis::Z).negated(),
            Pauli::product(n, &[2, 4], Axis::Z).negated(),
        ];
        let logical_z = Pauli::single(n, 0, Axis::Z);
        let logical_x = Pauli::product(n, &(0..8).collect::<Vec<_>>(), Axis::X);
        let zero = DenseState::basis_state(n, 0b0001_1110);
        let one = DenseState::basis_state(n, 0b1110_0001);
        for g in &gens {
            let mut s = zero.clone();
            assert!((s.project_pauli(g, false) - 1.0).abs() < 1e-12, "{g} on |0̄>");
            let mut s1 = one.clone();
            assert!((s1.project_pauli(g, false) - 1.0).abs() < 1e-12, "{g} on |1̄>");
        }
        let mut s = zero.clone();
        assert!((s.project_pauli(&logical_z, false) - 1.0).abs() < 1e-12);
        let mut flipped = zero.clone();
        flipped.apply_pauli(&logical_x);
        assert!((fidelity(&flipped, &one).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chain_stabilizer_for_xzx_is_the_literal_product() {
        let (map, state, record) = forced_chain(3, &parse_axes("xzx"), 6);
        let doms = find_domains(&record, &map).unwrap();
        let logicals: Vec<LogicalQubit> =
            doms.iter().map(|d| build_logical(d, &map)).collect();
        let ks = derive_chain_stabilizers(&logicals, &state).unwrap();
        assert_eq!(ks.len(), 3);
        // middle vertex: boundary, dangling, boundary singlets all in x
        let expected = Pauli::product(map.qubits, &[2, 3, 4, 5, 6, 11], Axis::X).negated();
        assert_eq!(ks[1].physical, expected);
        assert_eq!((ks[1].letter, ks[1].negated), (Axis::X, true));
    }

    #[test]
    fn chain_stabilizer_for_xzy_takes_the_y_form() {
        let (map, state, record) = forced_chain(3, &parse_axes("xzy"), 7);
        let doms = find_domains(&record, &map).unwrap();
        let logicals: Vec<LogicalQubit> =
            doms.iter().map(|d| build_logical(d, &map)).collect();
        let ks = derive_chain_stabilizers(&logicals, &state).unwrap();
        assert_eq!((ks[1].letter, ks[1].negated), (Axis::Y, true));
    }

    #[test]
    fn derived_stabilizers_verify_against_dense_branches() {
        use crate::dense::apply_kraus;
        for (axes, seed) in [
            (parse_axes("xzx"), 21),
            (parse_axes("xzy"), 22),
            (parse_axes("zzy"), 23),
            (parse_axes("yxz"), 24),
        ] {
            let (map, state, record) = forced_chain(3, &axes, seed);
            let doms = find_domains(&record, &map).unwrap();
            let logicals: Vec<LogicalQubit> =
                doms.iter().map(|d| build_logical(d, &map)).collect();
            let ks = derive_chain_stabilizers(&logicals, &state).unwrap();
            let mut dense = build_aklt(&map, DEFAULT_CAP).unwrap();
            for (site, &a) in axes.iter().enumerate() {
                let legs = map.a_site(0, site).legs;
                let (next, _p) = apply_kraus(&dense, &legs, a);
                dense = next;
            }
            dense.normalize().unwrap();
            for k in &ks {
                let mut s = dense.clone();
                let p = s.project_pauli(&k.physical, false);
                assert!((p - 1.0).abs() < 1e-10, "K expectation {p} for {}", k.physical);
            }
        }
    }

    #[test]
    fn stabilizer_membership_and_adjacency_over_random_chains() {
        let mut rng = TrialRng::new(31, 0);
        for trial in 0..100 {
            let sites = 2 + (trial % 5);
            let axes = random_axes(sites, &mut rng);
            let (map, state, record) = forced_chain(sites, &axes, 100 + trial as u64);
            let doms = find_domains(&record, &map).unwrap();
            let logicals: Vec<LogicalQubit> =
                doms.iter().map(|d| build_logical(d, &map)).collect();
            let ks = derive_chain_stabilizers(&logicals, &state).unwrap();
            for (i, a) in ks.iter().enumerate() {
                for b in &ks[i + 1..] {
                    assert!(a.physical.commutes(&b.physical));
                }
                // logical-Z commutes with every other vertex's K (and
                // anticommutes with its own, which carries X/Y there);
                // logical-X anticommutes exactly with the neighbors' Ks
                for (v, l) in logicals.iter().enumerate() {
                    assert_eq!(l.logical_z.commutes(&a.physical), v != a.vertex);
                    let anti = !l.logical_x.commutes(&a.physical);
                    if v == a.vertex {
                        // own K: X commutes with the X form, not the Y form
                        assert_eq!(anti, a.letter == Axis::Y);
                    } else {
                        let neighbors = v + 1 == a.vertex || a.vertex + 1 == v;
                        assert_eq!(anti, neighbors, "adjacency mismatch at K{} vs X{v}", a.vertex);
                    }
                }
            }
        }
    }

    #[test]
    fn full_chain_certifies_as_a_path() {
        let (map, state, record) = forced_chain(5, &parse_axes("xzyxz"), 41);
        let enc = analyze(&record, &map, state).unwrap();
        enc.certify().unwrap();
        let view = enc.graph().unwrap();
        assert_eq!(view.edges, crate::graph::path_edges(5));
        for v in 0..5 {
            assert!(matches!(view.vertices[&v].letter, Axis::X | Axis::Y));
        }
    }

    #[test]
    fn single_domain_chain_is_one_vertex() {
        let (map, state, record) = forced_chain(4, &parse_axes("zzzz"), 42);
        let enc = analyze(&record, &map, state).unwrap();
        enc.certify().unwrap();
        let view = enc.graph().unwrap();
        assert!(view.edges.is_empty());
        assert_eq!(view.vertices.len(), 1);
    }

    #[test]
    fn wrapper_certification_matches_engine() {
        let (map, state, record) = forced_chain(4, &parse_axes("xyzx"), 43);
        let doms = find_domains(&record, &map).unwrap();
        let logicals: Vec<LogicalQubit> =
            doms.iter().map(|d| build_logical(d, &map)).collect();
        let ks = derive_chain_stabilizers(&logicals, &state).unwrap();
        let view = certify_cluster(&logicals, &ks, &state).unwrap();
        assert_eq!(view.edges, crate::graph::path_edges(4));
    }

    #[test]
    fn reduction_shrinks_blocks_and_keeps_certification() {
        let mut seeds = TrialRng::new(51, 0);
        for trial in 0..10 {
            let sites = 3 + (trial % 3);
            let axes = random_axes(sites, &mut seeds);
            let (map, state, record) = forced_chain(sites, &axes, 200 + trial as u64);
            let mut enc = analyze(&record, &map, state).unwrap();
            let mut rng = TrialRng::new(300 + trial as u64, 1);
            let n_vert = enc.vertices.len();
            for v in 0..n_vert {
                let report = enc.reduce_domain(v, None, &mut rng).unwrap();
                let xor = report.outcomes.iter().fold(false, |acc, (_, m)| acc ^ m);
                assert_eq!(report.byproduct, xor);
            }
            enc.certify().unwrap();
            for q in &enc.vertices {
                assert!(q.reduced);
                assert_eq!(q.qubit.logical_x.weight(), 3);
                assert_eq!(q.qubit.logical_z.weight(), 1);
            }
            let view = enc.graph().unwrap();
            assert_eq!(view.edges, crate::graph::path_edges(n_vert));
        }
    }

    #[test]
    fn reduction_agrees_with_dense_oracle() {
        use crate::dense::apply_kraus;
        for (axes, seed) in [(parse_axes("xzy"), 61), (parse_axes("zzx"), 62)] {
            let (map, state, record) = forced_chain(3, &axes, seed);
            let mut dense = build_aklt(&map, DEFAULT_CAP).unwrap();
            for (site, &a) in axes.iter().enumerate() {
                let legs = map.a_site(0, site).legs;
                dense = apply_kraus(&dense, &legs, a).0;
            }
            dense.normalize().unwrap();
            let mut enc = analyze(&record, &map, state).unwrap();
            let mut rng = TrialRng::new(seed * 7, 2);
            for v in 0..enc.vertices.len() {
                let report = enc.reduce_domain(v, None, &mut rng).unwrap();
                for (qs, out) in &report.outcomes {
                    let xa = logical_x_axis(enc.vertices[v].qubit.domain.axis);
                    let p = Pauli::product(map.qubits, qs, xa);
                    let prob = dense.project_pauli(&p, *out);
                    assert!(prob > 1e-12, "dense branch vanished");
                    dense.normalize().unwrap();
                }
            }
            enc.certify().unwrap();
            let from_tableau = tableau_to_dense(&enc.state, DEFAULT_CAP).unwrap();
            let f = fidelity(&from_tableau, &dense).unwrap();
            assert!(f >= 1.0 - 1e-10, "fidelity {f}");
        }
    }

    #[test]
    fn logical_measurements_edit_the_graph() {
        // Z on the middle vertex cuts the path; Y links the neighbors
        let (map, state, record) = forced_chain(3, &parse_axes("xzx"), 71);
        let mut enc = analyze(&record, &map, state).unwrap();
        let mut rng = TrialRng::new(72, 0);
        enc.measure_logical(1, Axis::Z, None, &mut rng).unwrap();
        enc.certify().unwrap();
        let view = enc.graph().unwrap();
        assert!(view.edges.is_empty());
        assert_eq!(view.vertices[&1].letter, Axis::Z);

        let (map, state, record) = forced_chain(3, &parse_axes("xzx"), 73);
        let mut enc = analyze(&record, &map, state).unwrap();
        let mut rng = TrialRng::new(74, 0);
        enc.measure_logical(1, Axis::Y, None, &mut rng).unwrap();
        enc.certify().unwrap();
        let view = enc.graph().unwrap();
        assert_eq!(view.edges, vec![(0, 2)]);
    }

    #[test]
    fn logical_measurement_matches_dense_oracle() {
        use crate::dense::apply_kraus;
        let axes = parse_axes("xzx");
        let (map, state, record) = forced_chain(3, &axes, 81);
        let mut dense = build_aklt(&map, DEFAULT_CAP).unwrap();
        for (site, &a) in axes.iter().enumerate() {
            dense = apply_kraus(&dense, &map.a_site(0, site).legs, a).0;
        }
        dense.normalize().unwrap();
        let mut enc = analyze(&record, &map, state).unwrap();
        let mut rng = TrialRng::new(82, 0);
        let rep = enc.logical_rep(1, Axis::Y);
        let out = enc.measure_logical(1, Axis::Y, None, &mut rng).unwrap();
        let prob = dense.project_pauli(&rep, out);
        assert!(prob > 1e-12);
        dense.normalize().unwrap();
        enc.certify().unwrap();
        let from_tableau = tableau_to_dense(&enc.state, DEFAULT_CAP).unwrap();
        let f = fidelity(&from_tableau, &dense).unwrap();
        assert!(f >= 1.0 - 1e-10, "fidelity {f}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn prop_domains_partition_and_certify(
            axes in proptest::collection::vec(0u8..3, 1..7),
            seed in 0u64..1_000,
        ) {
            let axes: Vec<Axis> =
                axes.iter().map(|&a| [Axis::X, Axis::Y, Axis::Z][a as usize]).collect();
            let (map, state, record) = forced_chain(axes.len(), &axes, seed);
            let domains = find_domains(&record, &map).unwrap();
            // partition: strictly increasing contiguous coverage
            let mut next = 0;
            for d in &domains {
                prop_assert_eq!(d.start, next);
                next = d.end + 1;
                // maximality: neighbors differ in axis
                if d.start > 0 {
                    prop_assert_ne!(axes[d.start - 1], d.axis);
                }
            }
            prop_assert_eq!(next, axes.len());
            let enc = analyze(&record, &map, state).unwrap();
            prop_assert!(enc.certify().is_ok());
            let view = enc.graph().unwrap();
            prop_assert_eq!(view.edges, crate::graph::path_edges(domains.len()));
        }
    }
}
