//! Signed n-qubit Pauli strings in symplectic (bit-vector) form.
//!
//! An operator is stored as `i^ph * prod_q X_q^{x_q} Z_q^{z_q}` with `x`, `z`
//! packed 64 qubits per word and the phase exponent `ph` tracked mod 4.  In
//! this convention a bare `Y` contributes one factor of `i` (`Y = iXZ`), so a
//! string is Hermitian exactly when `ph` and the number of `Y` letters have
//! equal parity, and the familiar sign of a Hermitian string is
//! `i^(ph - #Y) ∈ {+1, -1}`.
//!
//! Products pick up `(-1)^(z1.x2)` from commuting `Z`-parts of the left factor
//! past `X`-parts of the right one; that single rule plus per-gate bit maps is
//! all the phase bookkeeping the tableau needs.  Conjugation by the small
//! Clifford gate set used throughout the crate mutates a string in place.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A measurement axis / nontrivial Pauli letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    /// The two axes other than `self`, in cyclic order.
    pub fn others(self) -> [Axis; 2] {
        match self {
            Axis::X => [Axis::Y, Axis::Z],
            Axis::Y => [Axis::Z, Axis::X],
            Axis::Z => [Axis::X, Axis::Y],
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => write!(f, "x"),
            Axis::Y => write!(f, "y"),
            Axis::Z => write!(f, "z"),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PauliError {
    #[error("operator length mismatch: {0} vs {1} qubits")]
    LengthMismatch(usize, usize),
    #[error("qubit index {0} out of range for {1} qubits")]
    QubitOutOfRange(usize, usize),
    #[error("cannot parse {0:?} as a Pauli string")]
    Parse(String),
}

/// One-qubit Clifford gates plus the two-qubit entanglers used by the crate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    H(usize),
    S(usize),
    Sdg(usize),
    X(usize),
    Y(usize),
    Z(usize),
    Cz(usize, usize),
    Cnot(usize, usize),
    Swap(usize, usize),
}

/// Signed Pauli string on `n` qubits.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Pauli {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    /// Phase exponent `k` in `i^k * X^x Z^z`, mod 4.
    ph: u8,
}

fn words(n: usize) -> usize {
    n.div_ceil(64)
}

fn parity(bits_a: &[u64], bits_b: &[u64]) -> bool {
    bits_a
        .iter()
        .zip(bits_b)
        .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
        & 1
        == 1
}

impl Pauli {
    /// The identity on `n` qubits.
    pub fn identity(n: usize) -> Self {
        Self { n, x: vec![0; words(n)], z: vec![0; words(n)], ph: 0 }
    }

    /// `+sigma_axis` on qubit `q`.
    pub fn single(n: usize, q: usize, axis: Axis) -> Self {
        let mut p = Self::identity(n);
        p.set_axis(q, Some(axis));
        p
    }

    /// `+prod_q sigma_axis(q)` over the given qubits.
    pub fn product(n: usize, qubits: &[usize], axis: Axis) -> Self {
        let mut p = Self::identity(n);
        for &q in qubits {
            p.set_axis(q, Some(axis));
        }
        p
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn is_identity(&self) -> bool {
        self.weight() == 0 && self.ph == 0
    }

    fn bit(v: &[u64], q: usize) -> bool {
        v[q / 64] >> (q % 64) & 1 == 1
    }

    fn set_bit(v: &mut [u64], q: usize, on: bool) {
        if on {
            v[q / 64] |= 1 << (q % 64);
        } else {
            v[q / 64] &= !(1 << (q % 64));
        }
    }

    pub fn x_bit(&self, q: usize) -> bool {
        Self::bit(&self.x, q)
    }

    pub fn z_bit(&self, q: usize) -> bool {
        Self::bit(&self.z, q)
    }

    /// The letter at qubit `q`, `None` for identity.
    pub fn axis_at(&self, q: usize) -> Option<Axis> {
        match (self.x_bit(q), self.z_bit(q)) {
            (false, false) => None,
            (true, false) => Some(Axis::X),
            (true, true) => Some(Axis::Y),
            (false, true) => Some(Axis::Z),
        }
    }

    /// Overwrite the letter at qubit `q`, keeping the string's sign fixed
    /// (i.e. the resulting Hermitian string has the same `sign_bit`).
    pub fn set_axis(&mut self, q: usize, axis: Option<Axis>) {
        assert!(q < self.n, "qubit {q} out of range for {} qubits", self.n);
        let old_y = self.x_bit(q) && self.z_bit(q);
        let (xb, zb) = match axis {
            None => (false, false),
            Some(Axis::X) => (true, false),
            Some(Axis::Y) => (true, true),
            Some(Axis::Z) => (false, true),
        };
        Self::set_bit(&mut self.x, q, xb);
        Self::set_bit(&mut self.z, q, zb);
        let new_y = xb && zb;
        // keep i^(ph - #Y) invariant: a Y letter carries one factor of i
        self.ph = (self.ph + 4 + new_y as u8 - old_y as u8) % 4;
    }

    /// Number of non-identity letters.
    pub fn weight(&self) -> usize {
        self.x
            .iter()
            .zip(&self.z)
            .map(|(a, b)| (a | b).count_ones() as usize)
            .sum()
    }

    /// Qubits carrying a non-identity letter, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.n).filter(|&q| self.axis_at(q).is_some()).collect()
    }

    fn y_count(&self) -> u32 {
        self.x
            .iter()
            .zip(&self.z)
            .fold(0, |acc, (a, b)| acc + (a & b).count_ones())
    }

    /// Raw phase exponent `k` of `i^k X^x Z^z`.
    pub fn phase_exp(&self) -> u8 {
        self.ph
    }

    /// True when the operator is Hermitian (sign `+1` or `-1`).
    pub fn is_hermitian(&self) -> bool {
        (self.ph as u32 + self.y_count()) % 2 == 0
    }

    fn rel_phase(&self) -> u8 {
        // exponent of the coefficient in front of the conventional string
        // (with Y as a letter): i^(ph - #Y)
        ((self.ph as u32 + 4 * self.n as u32 - self.y_count()) % 4) as u8
    }

    /// Sign bit of a Hermitian string: `false` for `+`, `true` for `-`.
    ///
    /// Panics if the operator is not Hermitian.
    pub fn sign_bit(&self) -> bool {
        match self.rel_phase() {
            0 => false,
            2 => true,
            _ => panic!("sign of non-Hermitian Pauli {self}"),
        }
    }

    /// Flip the overall sign.
    pub fn negate(&mut self) {
        self.ph = (self.ph + 2) % 4;
    }

    pub fn negated(mut self) -> Self {
        self.negate();
        self
    }

    /// Multiply by `i`.
    pub fn times_i(mut self) -> Self {
        self.ph = (self.ph + 1) % 4;
        self
    }

    /// `self * other` with exact phase tracking.
    pub fn mul(&self, other: &Pauli) -> Result<Pauli, PauliError> {
        if self.n != other.n {
            return Err(PauliError::LengthMismatch(self.n, other.n));
        }
        let mut out = Pauli::identity(self.n);
        // Z-part of self commuted past X-part of other: (-1)^(z1.x2)
        let swap_sign = parity(&self.z, &other.x);
        out.ph = (self.ph + other.ph + if swap_sign { 2 } else { 0 }) % 4;
        for w in 0..self.x.len() {
            out.x[w] = self.x[w] ^ other.x[w];
            out.z[w] = self.z[w] ^ other.z[w];
        }
        Ok(out)
    }

    /// In-place `self = self * other`; panics on length mismatch.
    pub fn mul_assign(&mut self, other: &Pauli) {
        *self = self.mul(other).expect("length mismatch in Pauli product");
    }

    /// True when the two strings commute.
    pub fn commutes(&self, other: &Pauli) -> bool {
        assert_eq!(self.n, other.n, "length mismatch in commutator");
        !(parity(&self.x, &other.z) ^ parity(&self.z, &other.x))
    }

    /// Same bit pattern (letters), ignoring phase.
    pub fn same_letters(&self, other: &Pauli) -> bool {
        self.n == other.n && self.x == other.x && self.z == other.z
    }

    /// Conjugate in place: `self <- U self U^dagger` for the given gate.
    pub fn conjugate(&mut self, gate: Gate) {
        match gate {
            Gate::H(q) => {
                let (xb, zb) = (self.x_bit(q), self.z_bit(q));
                if xb && zb {
                    self.ph = (self.ph + 2) % 4;
                }
                Self::set_bit(&mut self.x, q, zb);
                Self::set_bit(&mut self.z, q, xb);
            }
            Gate::S(q) => {
                // S X Sdg = Y = iXZ
                if self.x_bit(q) {
                    self.ph = (self.ph + 1) % 4;
                    let zb = self.z_bit(q);
                    Self::set_bit(&mut self.z, q, !zb);
                }
            }
            Gate::Sdg(q) => {
                // Sdg X S = -iXZ
                if self.x_bit(q) {
                    self.ph = (self.ph + 3) % 4;
                    let zb = self.z_bit(q);
                    Self::set_bit(&mut self.z, q, !zb);
                }
            }
            Gate::X(q) => {
                if self.z_bit(q) {
                    self.ph = (self.ph + 2) % 4;
                }
            }
            Gate::Y(q) => {
                if self.x_bit(q) ^ self.z_bit(q) {
                    self.ph = (self.ph + 2) % 4;
                }
            }
            Gate::Z(q) => {
                if self.x_bit(q) {
                    self.ph = (self.ph + 2) % 4;
                }
            }
            Gate::Cz(a, b) => {
                let (xa, xb) = (self.x_bit(a), self.x_bit(b));
                let (za, zb) = (self.z_bit(a), self.z_bit(b));
                if xa && xb {
                    self.ph = (self.ph + 2) % 4;
                }
                Self::set_bit(&mut self.z, a, za ^ xb);
                Self::set_bit(&mut self.z, b, zb ^ xa);
            }
            Gate::Cnot(c, t) => {
                let xc = self.x_bit(c);
                let zt = self.z_bit(t);
                let (xt, zc) = (self.x_bit(t), self.z_bit(c));
                Self::set_bit(&mut self.x, t, xt ^ xc);
                Self::set_bit(&mut self.z, c, zc ^ zt);
            }
            Gate::Swap(a, b) => {
                let (xa, za) = (self.x_bit(a), self.z_bit(a));
                let (xb, zb) = (self.x_bit(b), self.z_bit(b));
                Self::set_bit(&mut self.x, a, xb);
                Self::set_bit(&mut self.z, a, zb);
                Self::set_bit(&mut self.x, b, xa);
                Self::set_bit(&mut self.z, b, za);
            }
        }
    }

    /// Anticommutation indicator used by the symplectic reduction loops.
    pub(crate) fn anticommutes(&self, other: &Pauli) -> bool {
        !self.commutes(other)
    }
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.rel_phase() {
            0 => write!(f, "+")?,
            1 => write!(f, "+i")?,
            2 => write!(f, "-")?,
            3 => write!(f, "-i")?,
            _ => unreachable!(),
        }
        for q in 0..self.n {
            match self.axis_at(q) {
                None => write!(f, "I")?,
                Some(Axis::X) => write!(f, "X")?,
                Some(Axis::Y) => write!(f, "Y")?,
                Some(Axis::Z) => write!(f, "Z")?,
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Pauli({self})")
    }
}

// serialize as the display string (`-XIZ`), which is also what `FromStr`
// accepts, keeping reports human-readable
impl Serialize for Pauli {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Pauli {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for Pauli {
    type Err = PauliError;

    /// Parse strings like `-XIZY`, `+IZ`, `ZZ`, `+iXY`, `-iY`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || PauliError::Parse(s.to_string());
        let rest = s.strip_prefix("+i").map(|r| (1u8, r))
            .or_else(|| s.strip_prefix("-i").map(|r| (3u8, r)))
            .or_else(|| s.strip_prefix('+').map(|r| (0u8, r)))
            .or_else(|| s.strip_prefix('-').map(|r| (2u8, r)))
            .unwrap_or((0, s));
        let (extra, letters) = rest;
        if letters.is_empty() {
            return Err(err());
        }
        let mut p = Pauli::identity(letters.len());
        for (q, c) in letters.chars().enumerate() {
            match c {
                'I' => {}
                'X' => p.set_axis(q, Some(Axis::X)),
                'Y' => p.set_axis(q, Some(Axis::Y)),
                'Z' => p.set_axis(q, Some(Axis::Z)),
                _ => return Err(err()),
            }
        }
        p.ph = (p.ph + extra) % 4;
        Ok(p)
    }
}

/// A single-qubit Clifford, represented by where it sends `X` and `Z` under
/// conjugation.  There are 6 letter assignments times 4 sign pairs = 24
/// elements; composition and Pauli conjugation are exact.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LocalClifford {
    /// Image of X: (letter, negated)
    pub img_x: (Axis, bool),
    /// Image of Z: (letter, negated)
    pub img_z: (Axis, bool),
}

impl LocalClifford {
    pub const IDENTITY: Self =
        Self { img_x: (Axis::X, false), img_z: (Axis::Z, false) };

    /// The Clifford that conjugates Paulis the same way as the gate.
    pub fn from_gate(gate: Gate) -> Self {
        let map = |letter: Axis| {
            let mut p = Pauli::single(1, 0, letter);
            p.conjugate(match gate {
                Gate::H(_) => Gate::H(0),
                Gate::S(_) => Gate::S(0),
                Gate::Sdg(_) => Gate::Sdg(0),
                Gate::X(_) => Gate::X(0),
                Gate::Y(_) => Gate::Y(0),
                Gate::Z(_) => Gate::Z(0),
                _ => panic!("not a single-qubit gate"),
            });
            (p.axis_at(0).unwrap(), p.sign_bit())
        };
        Self { img_x: map(Axis::X), img_z: map(Axis::Z) }
    }

    /// Image of an arbitrary signed letter.
    pub fn conj_letter(&self, letter: Axis, neg: bool) -> (Axis, bool) {
        match letter {
            Axis::X => (self.img_x.0, self.img_x.1 ^ neg),
            Axis::Z => (self.img_z.0, self.img_z.1 ^ neg),
            Axis::Y => {
                // Y = iXZ, so C Y Cdg = i (C X Cdg)(C Z Cdg)
                let px = Pauli::single(1, 0, self.img_x.0);
                let pz = Pauli::single(1, 0, self.img_z.0);
                let mut prod = px.mul(&pz).unwrap().times_i();
                if self.img_x.1 ^ self.img_z.1 {
                    prod.negate();
                }
                (prod.axis_at(0).unwrap(), prod.sign_bit() ^ neg)
            }
        }
    }

    /// `self . other`: the Clifford acting as `other` first, then `self`.
    pub fn compose(&self, other: &LocalClifford) -> LocalClifford {
        let through = |img: (Axis, bool)| self.conj_letter(img.0, img.1);
        LocalClifford { img_x: through(other.img_x), img_z: through(other.img_z) }
    }

    /// Short human-readable tag used in reports (`I`, `S`, `H`, `HS`, ...).
    pub fn tag(&self) -> String {
        // decompose over the S/H generating set by brute force (24 elements)
        let gens = [("S", Gate::S(0)), ("H", Gate::H(0)), ("Z", Gate::Z(0)), ("X", Gate::X(0))];
        let mut frontier = vec![(String::from("I"), Self::IDENTITY)];
        let mut seen = vec![Self::IDENTITY];
        if *self == Self::IDENTITY {
            return String::from("I");
        }
        for _ in 0..6 {
            let mut next = Vec::new();
            for (name, c) in &frontier {
                for (gname, gate) in gens {
                    let cand = LocalClifford::from_gate(gate).compose(c);
                    if cand == *self {
                        let mut tag = gname.to_string();
                        if name != "I" {
                            tag.push_str(name);
                        }
                        return tag;
                    }
                    if !seen.contains(&cand) {
                        seen.push(cand);
                        let mut tag = gname.to_string();
                        if name != "I" {
                            tag.push_str(name);
                        }
                        next.push((tag, cand));
                    }
                }
            }
            frontier = next;
        }
        String::from("?")
    }
}
