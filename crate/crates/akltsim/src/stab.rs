//! Stabilizer tableaus: generator storage, measurement, canonical forms.
//!
//! A state is a list of independent, mutually commuting, Hermitian signed
//! Pauli generators; rank below `n` is allowed (the group then stabilizes a
//! subspace rather than a single state), which is exactly what sequential
//! code-space projection produces mid-flight.  No destabilizer rows are kept:
//! deterministic measurement outcomes are resolved by reducing the measured
//! operator against an echelonized copy of the generators, and callers that
//! need many membership queries against the same state reuse a [`GroupBasis`].
//!
//! Measurement follows the usual three-way split.  An operator anticommuting
//! with some generator is a fair coin (probability 1/2) and replaces that
//! generator; one whose letters lie in the group span is deterministic
//! (probability 1) with propagated sign; one that commutes with everything but
//! is independent extends the group (probability 1/2, rank grows by one).
//!
//! The canonical form is the phase-tracked reduced row echelon form over the
//! symplectic bit columns (all X columns by qubit, then all Z columns) with a
//! fixed pivot order, so two generating sets describe the same group exactly
//! when their canonical rows match bit-for-bit and sign-for-sign.

use thiserror::Error;

use crate::pauli::{Gate, Pauli};
use crate::rng::{frac, Frac, TrialRng};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StabError {
    #[error("generator {0} is not a Hermitian signed Pauli")]
    NotHermitian(String),
    #[error("generators {0} and {1} anticommute")]
    NonCommuting(String, String),
    #[error("generator {0} is dependent on earlier generators")]
    Dependent(String),
    #[error("generator on {0} qubits added to a {1}-qubit state")]
    LengthMismatch(usize, usize),
    #[error("forced outcome {forced} contradicts the deterministic outcome {actual}")]
    ForcedContradiction { forced: bool, actual: bool },
}

/// Result of measuring a Hermitian Pauli.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Measurement {
    /// `false` for the `+1` eigenvalue, `true` for `-1`.
    pub outcome: bool,
    /// Exact branch probability: 1 for deterministic, 1/2 for random.
    pub probability: Frac,
    /// Whether the outcome was a fresh random branch.
    pub random: bool,
}

/// Stabilizer state (or code space) on `n` qubits.
#[derive(Clone, PartialEq, Eq)]
pub struct StabilizerState {
    n: usize,
    gens: Vec<Pauli>,
}

impl StabilizerState {
    /// The trivial (rank-0) group: the maximally mixed code space.
    pub fn trivial(n: usize) -> Self {
        Self { n, gens: Vec::new() }
    }

    /// The all-zeros computational basis state, stabilized by every `+Z_q`.
    pub fn zero_state(n: usize) -> Self {
        let gens = (0..n).map(|q| Pauli::single(n, q, crate::pauli::Axis::Z)).collect();
        Self { n, gens }
    }

    /// Build from generators, validating Hermiticity, commutation, and
    /// independence.
    pub fn from_generators(n: usize, gens: Vec<Pauli>) -> Result<Self, StabError> {
        let mut state = Self::trivial(n);
        let mut basis = GroupBasis::empty(n);
        for g in gens {
            if g.num_qubits() != n {
                return Err(StabError::LengthMismatch(g.num_qubits(), n));
            }
            if !g.is_hermitian() {
                return Err(StabError::NotHermitian(g.to_string()));
            }
            for h in &state.gens {
                if !g.commutes(h) {
                    return Err(StabError::NonCommuting(g.to_string(), h.to_string()));
                }
            }
            if basis.reduce(&g).is_some() {
                return Err(StabError::Dependent(g.to_string()));
            }
            basis.insert(g.clone());
            state.gens.push(g);
        }
        Ok(state)
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn rank(&self) -> usize {
        self.gens.len()
    }

    pub fn generators(&self) -> &[Pauli] {
        &self.gens
    }

    /// Bytes used by the packed generator rows (two bit vectors per row).
    pub fn tableau_bytes(&self) -> usize {
        self.gens.len() * 2 * self.n.div_ceil(64) * 8
    }

    /// Conjugate every generator by the gate.
    pub fn apply(&mut self, gate: Gate) {
        for g in &mut self.gens {
            g.conjugate(gate);
        }
    }

    /// Measure a Hermitian Pauli; `forced` pins the outcome of random
    /// branches and is rejected if it contradicts a deterministic one.
    pub fn measure(
        &mut self,
        p: &Pauli,
        forced: Option<bool>,
        rng: &mut TrialRng,
    ) -> Result<Measurement, StabError> {
        if p.num_qubits() != self.n {
            return Err(StabError::LengthMismatch(p.num_qubits(), self.n));
        }
        if !p.is_hermitian() {
            return Err(StabError::NotHermitian(p.to_string()));
        }
        debug_assert!(p.weight() > 0, "measuring the identity");
        let half = || frac(1, 2);
        if let Some(k) = self.gens.iter().position(|g| g.anticommutes(p)) {
            let outcome = forced.unwrap_or_else(|| rng.coin());
            let pivot = self.gens[k].clone();
            for (i, g) in self.gens.iter_mut().enumerate() {
                if i != k && g.anticommutes(p) {
                    g.mul_assign(&pivot);
                }
            }
            self.gens[k] = if outcome { p.clone().negated() } else { p.clone() };
            return Ok(Measurement { outcome, probability: half(), random: true });
        }
        // commutes with the whole group: deterministic if in span
        let basis = GroupBasis::from_state(self);
        match basis.sign_of(p) {
            Some(actual) => {
                if let Some(f) = forced {
                    if f != actual {
                        return Err(StabError::ForcedContradiction { forced: f, actual });
                    }
                }
                Ok(Measurement { outcome: actual, probability: frac(1, 1), random: false })
            }
            None => {
                // independent and commuting: the measurement refines the code
                // space, both outcomes equally likely
                let outcome = forced.unwrap_or_else(|| rng.coin());
                self.gens.push(if outcome { p.clone().negated() } else { p.clone() });
                Ok(Measurement { outcome, probability: half(), random: true })
            }
        }
    }

    /// Force every check to its `+1` eigenvalue in sequence, returning the
    /// exact branch probability.  A contradiction (probability zero) restores
    /// the pre-call state and returns zero.
    pub fn project(
        &mut self,
        checks: &[Pauli],
        rng: &mut TrialRng,
    ) -> Result<Frac, StabError> {
        let snapshot = self.clone();
        let mut prob: Frac = frac(1, 1);
        for c in checks {
            match self.measure(c, Some(false), rng) {
                Ok(m) => prob *= m.probability,
                Err(StabError::ForcedContradiction { .. }) => {
                    *self = snapshot;
                    return Ok(frac(0, 1));
                }
                Err(e) => {
                    *self = snapshot;
                    return Err(e);
                }
            }
        }
        Ok(prob)
    }

    /// Whether `p` (with its sign) is an element of the stabilizer group.
    pub fn contains(&self, p: &Pauli) -> bool {
        GroupBasis::from_state(self).sign_of(p) == Some(false)
    }

    /// Deterministic canonical generating set for group-level comparison.
    pub fn canonical(&self) -> StabilizerState {
        let mut rows = self.gens.clone();
        let n = self.n;
        let mut r = 0;
        for col in 0..2 * n {
            let hit = |p: &Pauli| {
                if col < n { p.x_bit(col) } else { p.z_bit(col - n) }
            };
            let Some(i) = (r..rows.len()).find(|&i| hit(&rows[i])) else {
                continue;
            };
            rows.swap(r, i);
            let pivot = rows[r].clone();
            for (j, row) in rows.iter_mut().enumerate() {
                if j != r && hit(row) {
                    row.mul_assign(&pivot);
                }
            }
            r += 1;
            if r == rows.len() {
                break;
            }
        }
        debug_assert_eq!(r, rows.len(), "generators were not independent");
        StabilizerState { n, gens: rows }
    }

    /// Group equality: identical canonical rows (letters and signs).
    pub fn same_group(&self, other: &StabilizerState) -> bool {
        self.n == other.n && self.canonical().gens == other.canonical().gens
    }
}

impl std::fmt::Debug for StabilizerState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "StabilizerState({} qubits, rank {})", self.n, self.gens.len())?;
        for g in &self.gens {
            writeln!(f, "  {g}")?;
        }
        Ok(())
    }
}

/// Echelonized basis of a stabilizer group for repeated membership queries.
pub struct GroupBasis {
    n: usize,
    /// Rows in echelon order with strictly increasing pivot columns.
    rows: Vec<(usize, Pauli)>,
}

impl GroupBasis {
    fn col_hit(p: &Pauli, col: usize, n: usize) -> bool {
        if col < n { p.x_bit(col) } else { p.z_bit(col - n) }
    }

    fn pivot_col(p: &Pauli, n: usize) -> Option<usize> {
        (0..2 * n).find(|&c| Self::col_hit(p, c, n))
    }

    pub fn empty(n: usize) -> Self {
        Self { n, rows: Vec::new() }
    }

    pub fn from_state(state: &StabilizerState) -> Self {
        let mut basis = Self::empty(state.n);
        for g in &state.gens {
            let red = basis.reduce(g);
            debug_assert!(red.is_none(), "state generators must be independent");
            basis.insert(g.clone());
        }
        basis
    }

    /// Reduce `p` by the basis.  Returns `Some(residual)` when the letters of
    /// `p` lie in the span (the residual is then the identity up to sign),
    /// `None` when they do not.
    fn reduce_letters(&self, p: &Pauli) -> Pauli {
        let mut acc = p.clone();
        for (pivot, row) in &self.rows {
            if Self::col_hit(&acc, *pivot, self.n) {
                acc.mul_assign(row);
            }
        }
        acc
    }

    /// `Some(product)` when `p`'s letters are in the span; the product is the
    /// group element with those letters.
    pub fn reduce(&self, p: &Pauli) -> Option<Pauli> {
        let acc = self.reduce_letters(p);
        if acc.weight() == 0 {
            Some(p.mul(&acc).unwrap())
        } else {
            None
        }
    }

    /// Membership with sign: `Some(false)` if `+p` is in the group,
    /// `Some(true)` if `-p` is, `None` if neither.
    pub fn sign_of(&self, p: &Pauli) -> Option<bool> {
        let acc = self.reduce_letters(p);
        if acc.weight() != 0 {
            return None;
        }
        // acc = p * (product of rows) = p * g with g in the group and g's
        // letters equal to p's; acc is +/- identity
        debug_assert!(acc.is_hermitian());
        Some(acc.sign_bit())
    }

    /// Grow the span by `p` when independent.  Returns what [`sign_of`]
    /// reported before the call: `None` means `p` was independent and has
    /// been added; `Some(sign)` means `p`'s letters were already in the span
    /// (with that relative sign) and the basis is unchanged.
    ///
    /// [`sign_of`]: GroupBasis::sign_of
    pub fn extend(&mut self, p: &Pauli) -> Option<bool> {
        let prior = self.sign_of(p);
        if prior.is_none() {
            self.insert(p.clone());
        }
        prior
    }

    /// Number of independent rows.
    pub fn rank(&self) -> usize {
        self.rows.len()
    }

    /// Insert an independent row, keeping the basis fully reduced: every row
    /// has zero bits at all other rows' pivot columns, so membership queries
    /// can cancel pivots in a single pass.
    fn insert(&mut self, p: Pauli) {
        let reduced = self.reduce_letters(&p);
        let pivot = Self::pivot_col(&reduced, self.n)
            .expect("cannot insert a dependent row");
        let n = self.n;
        for (_, row) in &mut self.rows {
            if Self::col_hit(row, pivot, n) {
                row.mul_assign(&reduced);
            }
        }
        let pos = self.rows.partition_point(|(c, _)| *c < pivot);
        self.rows.insert(pos, (pivot, reduced));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pauli::Axis;
    use crate::rng::frac;

    fn p(s: &str) -> Pauli {
        s.parse().unwrap()
    }

    fn rng() -> TrialRng {
        TrialRng::new(42, 0)
    }

    fn bell() -> StabilizerState {
        StabilizerState::from_generators(2, vec![p("+XX"), p("+ZZ")]).unwrap()
    }

    #[test]
    fn from_generators_validates() {
        assert!(StabilizerState::from_generators(2, vec![p("+XX"), p("+ZZ")]).is_ok());
        assert_eq!(
            StabilizerState::from_generators(2, vec![p("+XI"), p("+ZI")]),
            Err(StabError::NonCommuting("+ZI".into(), "+XI".into()))
        );
        assert_eq!(
            StabilizerState::from_generators(2, vec![p("+XX"), p("+ZZ"), p("-YY")]),
            Err(StabError::Dependent("-YY".into()))
        );
        let anti = p("X").mul(&p("Z")).unwrap(); // -iY
        assert!(matches!(
            StabilizerState::from_generators(1, vec![anti]),
            Err(StabError::NotHermitian(_))
        ));
    }

    #[test]
    fn zero_state_measures_z_deterministically() {
        let mut s = StabilizerState::zero_state(3);
        let m = s.measure(&p("IZI"), None, &mut rng()).unwrap();
        assert_eq!(m, Measurement { outcome: false, probability: frac(1, 1), random: false });
    }

    #[test]
    fn anticommuting_measurement_is_fair_coin_and_collapses() {
        let mut r = rng();
        let mut s = StabilizerState::zero_state(1);
        let m = s.measure(&p("X"), None, &mut r).unwrap();
        assert!(m.random);
        assert_eq!(m.probability, frac(1, 2));
        // repeated measurement is now deterministic with the same outcome
        let again = s.measure(&p("X"), None, &mut r).unwrap();
        assert!(!again.random);
        assert_eq!(again.outcome, m.outcome);
        assert_eq!(r.draws(), 1);
    }

    #[test]
    fn forced_contradiction_is_an_error() {
        let mut s = StabilizerState::zero_state(1);
        let err = s.measure(&p("Z"), Some(true), &mut rng()).unwrap_err();
        assert_eq!(err, StabError::ForcedContradiction { forced: true, actual: false });
    }

    #[test]
    fn independent_commuting_measurement_grows_rank() {
        let mut s = StabilizerState::trivial(2);
        let m = s.measure(&p("ZZ"), Some(false), &mut rng()).unwrap();
        assert!(m.random);
        assert_eq!(m.probability, frac(1, 2));
        assert_eq!(s.rank(), 1);
        let m2 = s.measure(&p("XX"), Some(false), &mut rng()).unwrap();
        assert!(m2.random);
        assert_eq!(s.rank(), 2);
        // now fully determined: -YY is in the group
        assert!(s.contains(&p("-YY")));
    }

    #[test]
    fn project_accumulates_dyadic_probability() {
        let mut s = StabilizerState::zero_state(2);
        let mut r = rng();
        let prob = s.project(&[p("XX"), p("ZZ")], &mut r).unwrap();
        // XX anticommutes with Z1: 1/2; then ZZ is already satisfied: 1
        assert_eq!(prob, frac(1, 2));
        assert!(s.same_group(&bell()));
    }

    #[test]
    fn project_zero_probability_restores_state() {
        let mut s = bell();
        let before = s.clone();
        let prob = s.project(&[p("-ZZ")], &mut rng()).unwrap();
        assert_eq!(prob, frac(0, 1));
        assert!(s.same_group(&before));
        assert_eq!(s.generators(), before.generators());
    }

    #[test]
    fn canonical_form_is_generating_set_invariant() {
        let a = bell();
        // same group, different generators: {XX, -YY}
        let b = StabilizerState::from_generators(2, vec![p("-YY"), p("+ZZ")]).unwrap();
        assert!(a.same_group(&b));
        let c = StabilizerState::from_generators(2, vec![p("-XX"), p("+ZZ")]).unwrap();
        assert!(!a.same_group(&c));
    }

    #[test]
    fn canonical_equality_iff_same_elements_exhaustive() {
        // enumerate all group elements of two generating sets and compare
        // the element sets directly; canonical equality must agree with it
        let states = [
            StabilizerState::from_generators(3, vec![p("XXI"), p("ZZI"), p("IIZ")]).unwrap(),
            StabilizerState::from_generators(3, vec![p("-YYI"), p("ZZI"), p("IIZ")]).unwrap(),
            StabilizerState::from_generators(3, vec![p("XXI"), p("ZZI"), p("-IIZ")]).unwrap(),
            StabilizerState::from_generators(3, vec![p("XIX"), p("ZIZ"), p("IZI")]).unwrap(),
        ];
        let elements = |s: &StabilizerState| {
            let k = s.rank();
            let mut out: Vec<String> = Vec::new();
            for mask in 0..1u32 << k {
                let mut acc = Pauli::identity(s.num_qubits());
                for (i, g) in s.generators().iter().enumerate() {
                    if mask >> i & 1 == 1 {
                        acc.mul_assign(g);
                    }
                }
                out.push(acc.to_string());
            }
            out.sort();
            out
        };
        for a in &states {
            for b in &states {
                assert_eq!(
                    a.same_group(b),
                    elements(a) == elements(b),
                    "canonical comparison disagrees with element enumeration"
                );
            }
        }
    }

    #[test]
    fn measurement_updates_preserve_invariants() {
        // random circuit, random measurements; generators stay independent,
        // commuting, Hermitian with +/- signs
        let mut r = TrialRng::new(7, 0);
        let n = 6;
        let mut s = StabilizerState::zero_state(n);
        let axes = [Axis::X, Axis::Y, Axis::Z];
        for step in 0..200 {
            let q = step * 7 % n;
            let q2 = (q + 1 + step % (n - 1)) % n;
            match step % 5 {
                0 => s.apply(Gate::H(q)),
                1 => s.apply(Gate::S(q)),
                2 => {
                    if q != q2 {
                        s.apply(Gate::Cz(q, q2))
                    }
                }
                3 => {
                    if q != q2 {
                        s.apply(Gate::Cnot(q, q2))
                    }
                }
                _ => {
                    let ax = axes[step % 3];
                    let m = Pauli::single(n, q, ax);
                    s.measure(&m, None, &mut r).unwrap();
                }
            }
            assert_eq!(s.rank(), n);
            for (i, a) in s.generators().iter().enumerate() {
                assert!(a.is_hermitian());
                let _ = a.sign_bit();
                for b in s.generators().iter().skip(i + 1) {
                    assert!(a.commutes(b));
                }
            }
            // independence via the canonical form's debug assertion
            let _ = s.canonical();
        }
    }

    #[test]
    fn exhaustive_branch_tree_probabilities_sum_to_one() {
        // expand every random branch of a 3-measurement sequence on a Bell
        // pair plus spectator; the branch probabilities must sum to 1 exactly
        let seq = [p("XII"), p("IYI"), p("ZZI")];
        let mut total = frac(0, 1);
        let mut stack = vec![(bell3(), 0usize, frac(1, 1))];
        while let Some((state, step, prob)) = stack.pop() {
            if step == seq.len() {
                total += prob;
                continue;
            }
            // probe whether the measurement is random
            let mut probe = state.clone();
            let m = probe.measure(&seq[step], Some(false), &mut rng());
            match m {
                Ok(m) if m.random => {
                    for outcome in [false, true] {
                        let mut branch = state.clone();
                        let bm = branch.measure(&seq[step], Some(outcome), &mut rng()).unwrap();
                        stack.push((branch, step + 1, prob.clone() * bm.probability));
                    }
                }
                Ok(m) => {
                    stack.push((probe, step + 1, prob.clone() * m.probability));
                }
                Err(StabError::ForcedContradiction { .. }) => {
                    // deterministic -1: still probability 1 down that branch
                    let mut branch = state.clone();
                    let bm = branch.measure(&seq[step], Some(true), &mut rng()).unwrap();
                    stack.push((branch, step + 1, prob.clone() * bm.probability));
                }
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(total, frac(1, 1));
    }

    fn bell3() -> StabilizerState {
        StabilizerState::from_generators(3, vec![p("XXI"), p("ZZI"), p("IIZ")]).unwrap()
    }

    #[test]
    fn tableau_bytes_matches_quadratic_formula() {
        let s = StabilizerState::zero_state(130);
        // 130 qubits -> 3 words per bit vector, 2 vectors, 130 rows
        assert_eq!(s.tableau_bytes(), 130 * 2 * 3 * 8);
    }
}
