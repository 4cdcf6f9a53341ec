//! Dense statevector reference implementation.
//!
//! Everything the tableau engine does is re-done here with explicit complex
//! matrices at small scale: singlet product states, the symmetric projection
//! of site triples, the site POVM Kraus operators (in both the virtual-qubit
//! form and the spin-3/2 operator form, related by the relabeling isometry),
//! total-spin pair projectors for the parent Hamiltonian, the spin-3/2 merge
//! relabeling of paired dangling qubits, and conversion of stabilizer
//! tableaus to amplitudes.  The two code paths share no machinery beyond the
//! `Pauli` type, so agreement between them is meaningful evidence.
//!
//! Amplitude indexing: qubit `q` occupies bit `n - 1 - q` of the index, i.e.
//! qubit 0 is the most significant bit, matching the left-to-right tensor
//! order `|q0 q1 ... q(n-1)>`.  Qubit ids are the lattice ids bit-exactly, so
//! cross-representation comparisons need no permutation.

use std::io::{self, Read, Write};

use num_complex::Complex64;
use thiserror::Error;

use crate::lattice::{HamTerm, SiteMap};
use crate::pauli::{Axis, Gate, Pauli};
use crate::stab::StabilizerState;

/// Largest qubit count the dense path will touch by default.
pub const DEFAULT_CAP: usize = 22;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);
const CI: Complex64 = Complex64::new(0.0, 1.0);

fn ipow(k: u8) -> Complex64 {
    match k % 4 {
        0 => C1,
        1 => CI,
        2 => -C1,
        _ => -CI,
    }
}

#[derive(Debug, Error)]
pub enum DenseError {
    #[error("state of {n} qubits exceeds dense cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("state has zero norm")]
    ZeroNorm,
    #[error("qubit counts differ: {0} vs {1}")]
    SizeMismatch(usize, usize),
    #[error("malformed amplitude dump: {0}")]
    BadDump(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

// ---------------------------------------------------------------------------
// Small complex matrices
// ---------------------------------------------------------------------------

/// Dense complex matrix, row-major.  Sized for few-qubit operators (≤ 64×64).
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![C0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C1;
        }
        m
    }

    pub fn from_rows(rows: &[&[Complex64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c);
            m.data[i * c..(i + 1) * c].copy_from_slice(row);
        }
        m
    }

    pub fn mul(&self, other: &CMat) -> CMat {
        assert_eq!(self.cols, other.rows);
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == C0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(&other.data) {
            *a -= b;
        }
        out
    }

    pub fn scale(&self, s: Complex64) -> CMat {
        let mut out = self.clone();
        for a in &mut out.data {
            *a *= s;
        }
        out
    }

    pub fn dagger(&self) -> CMat {
        let mut out = CMat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)].conj();
            }
        }
        out
    }

    pub fn kron(&self, other: &CMat) -> CMat {
        let mut out = CMat::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let a = self[(i, j)];
                if a == C0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        out[(i * other.rows + k, j * other.cols + l)] = a * other[(k, l)];
                    }
                }
            }
        }
        out
    }

    /// Column-vector outer product `u v†`.
    pub fn outer(u: &[Complex64], v: &[Complex64]) -> CMat {
        let mut out = CMat::zeros(u.len(), v.len());
        for (i, a) in u.iter().enumerate() {
            for (j, b) in v.iter().enumerate() {
                out[(i, j)] = a * b.conj();
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    pub fn approx_eq(&self, other: &CMat, tol: f64) -> bool {
        self.max_abs_diff(other) <= tol
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self[(i, j)] * v[j]).sum())
            .collect()
    }
}

impl std::ops::Index<(usize, usize)> for CMat {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex64 {
        &mut self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Spin operators, relabeling, POVM Kraus forms, pair projectors
// ---------------------------------------------------------------------------

/// Spin matrices and total-spin pair projectors for small spins.
///
/// Quantum numbers are passed doubled (`two_j = 2j`) so half-integers stay
/// exact.  Basis ordering is `m = j, j-1, ..., -j` top to bottom.
pub mod spin {
    use super::*;

    /// `[Sx, Sy, Sz]` for spin `j = two_j / 2`.
    pub fn spin_matrices(two_j: u32) -> [CMat; 3] {
        let dim = two_j as usize + 1;
        let j = two_j as f64 / 2.0;
        let mut sp = CMat::zeros(dim, dim); // raising operator
        let mut sz = CMat::zeros(dim, dim);
        for k in 0..dim {
            let m = j - k as f64;
            sz[(k, k)] = Complex64::new(m, 0.0);
            if k > 0 {
                // <m+1| S+ |m> with m = j - k
                sp[(k - 1, k)] = Complex64::new((j * (j + 1.0) - m * (m + 1.0)).sqrt(), 0.0);
            }
        }
        let sm = sp.dagger();
        let sx = sp.add(&sm).scale(Complex64::new(0.5, 0.0));
        let sy = sp.sub(&sm).scale(Complex64::new(0.0, -0.5));
        [sx, sy, sz]
    }

    pub fn spin_axis(two_j: u32, axis: Axis) -> CMat {
        let [sx, sy, sz] = spin_matrices(two_j);
        match axis {
            Axis::X => sx,
            Axis::Y => sy,
            Axis::Z => sz,
        }
    }

    /// Eigenbasis of the spin-1/2 component along `axis`: `(|0_a>, |1_a>)`.
    pub fn axis_basis(axis: Axis) -> ([Complex64; 2], [Complex64; 2]) {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h = Complex64::new(r, 0.0);
        match axis {
            Axis::Z => ([C1, C0], [C0, C1]),
            Axis::X => ([h, h], [h, -h]),
            Axis::Y => ([h, h * CI], [h, -h * CI]),
        }
    }

    /// Isometry from the 4-level spin-3/2 space into three qubits:
    /// `|3/2, 3/2> -> |000>`, `|3/2, 1/2> -> |W>`, `|3/2,-1/2> -> |Wbar>`,
    /// `|3/2,-3/2> -> |111>`.  8×4, columns in descending-m order.
    pub fn relabel_isometry() -> CMat {
        let w = Complex64::new(1.0 / 3.0_f64.sqrt(), 0.0);
        let mut t = CMat::zeros(8, 4);
        t[(0b000, 0)] = C1;
        for i in [0b001, 0b010, 0b100] {
            t[(i, 1)] = w;
        }
        for i in [0b110, 0b101, 0b011] {
            t[(i, 2)] = w;
        }
        t[(0b111, 3)] = C1;
        t
    }

    /// Projector onto the symmetric (spin-3/2) subspace of three qubits.
    pub fn sym_projector() -> CMat {
        let t = relabel_isometry();
        t.mul(&t.dagger())
    }

    /// Site POVM element in the virtual-qubit form:
    /// `sqrt(2/3) (|000>_a<000| + |111>_a<111|)` with `|0_a>, |1_a>` the
    /// eigenstates along `axis`.  8×8.
    pub fn kraus_virtual(axis: Axis) -> CMat {
        let (b0, b1) = axis_basis(axis);
        let v = |b: &[Complex64; 2]| -> Vec<Complex64> {
            let mut out = vec![C1];
            for _ in 0..3 {
                let mut next = Vec::with_capacity(out.len() * 2);
                for a in &out {
                    next.push(a * b[0]);
                    next.push(a * b[1]);
                }
                out = next;
            }
            out
        };
        let v000 = v(&b0);
        let v111 = v(&b1);
        CMat::outer(&v000, &v000)
            .add(&CMat::outer(&v111, &v111))
            .scale(Complex64::new((2.0f64 / 3.0).sqrt(), 0.0))
    }

    /// The same POVM element as a spin-3/2 operator: `(S_axis^2 - 1/4) / sqrt(6)`.
    pub fn kraus_spin(axis: Axis) -> CMat {
        let s = spin_axis(3, axis);
        s.mul(&s)
            .sub(&CMat::identity(4).scale(Complex64::new(0.25, 0.0)))
            .scale(Complex64::new(1.0 / 6.0_f64.sqrt(), 0.0))
    }

    fn fact(n: i32) -> f64 {
        assert!(n >= 0, "factorial of negative argument");
        (1..=n as u64).map(|k| k as f64).product()
    }

    /// Clebsch-Gordan coefficient `<j1 m1; j2 m2 | J M>` (all doubled).
    pub fn clebsch_gordan(two_j1: i32, two_m1: i32, two_j2: i32, two_m2: i32, two_jj: i32, two_mm: i32) -> f64 {
        if two_m1 + two_m2 != two_mm
            || two_jj < (two_j1 - two_j2).abs()
            || two_jj > two_j1 + two_j2
            || (two_j1 + two_j2 + two_jj) % 2 != 0
        {
            return 0.0;
        }
        // All of the following combinations are integers when the triangle
        // and magnetization constraints hold; work in doubled units / 2.
        let h = |x: i32| {
            debug_assert!(x % 2 == 0);
            x / 2
        };
        let pre = ((two_jj as f64 + 1.0)
            * fact(h(two_jj + two_j1 - two_j2))
            * fact(h(two_jj - two_j1 + two_j2))
            * fact(h(two_j1 + two_j2 - two_jj))
            / fact(h(two_j1 + two_j2 + two_jj) + 1))
        .sqrt();
        let mid = (fact(h(two_jj + two_mm))
            * fact(h(two_jj - two_mm))
            * fact(h(two_j1 - two_m1))
            * fact(h(two_j1 + two_m1))
            * fact(h(two_j2 - two_m2))
            * fact(h(two_j2 + two_m2)))
        .sqrt();
        let mut sum = 0.0;
        for k in 0.. {
            let a1 = h(two_j1 + two_j2 - two_jj) - k;
            let a2 = h(two_j1 - two_m1) - k;
            let a3 = h(two_j2 + two_m2) - k;
            let a4 = h(two_jj - two_j2 + two_m1) + k;
            let a5 = h(two_jj - two_j1 - two_m2) + k;
            if a1 < 0 || a2 < 0 || a3 < 0 {
                break;
            }
            if a4 < 0 || a5 < 0 {
                continue;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign / (fact(k) * fact(a1) * fact(a2) * fact(a3) * fact(a4) * fact(a5));
        }
        pre * mid * sum
    }

    /// Projector onto total spin `S = two_s / 2` of a `(j1, j2)` pair, built
    /// by angular-momentum coupling.  Product basis: `|m1>|m2>`, each factor
    /// in descending-m order, first factor most significant.
    pub fn pair_projector(two_j1: i32, two_j2: i32, two_s: i32) -> CMat {
        let d1 = two_j1 as usize + 1;
        let d2 = two_j2 as usize + 1;
        let dim = d1 * d2;
        let mut p = CMat::zeros(dim, dim);
        let mut two_mm = two_s;
        while two_mm >= -two_s {
            let mut v = vec![C0; dim];
            for i1 in 0..d1 {
                let two_m1 = two_j1 - 2 * i1 as i32;
                let two_m2 = two_mm - two_m1;
                if two_m2.abs() > two_j2 || (two_j2 - two_m2) % 2 != 0 {
                    continue;
                }
                let i2 = ((two_j2 - two_m2) / 2) as usize;
                let c = clebsch_gordan(two_j1, two_m1, two_j2, two_m2, two_s, two_mm);
                v[i1 * d2 + i2] = Complex64::new(c, 0.0);
            }
            p = p.add(&CMat::outer(&v, &v));
            two_mm -= 2;
        }
        p
    }

    /// The same projector evaluated as a polynomial in `S_1 · S_2`
    /// (Lagrange interpolation over the coupling eigenvalues).
    pub fn pair_projector_poly(two_j1: i32, two_j2: i32, two_s: i32) -> CMat {
        let d1 = two_j1 as usize + 1;
        let d2 = two_j2 as usize + 1;
        let ops1 = spin_matrices(two_j1 as u32);
        let ops2 = spin_matrices(two_j2 as u32);
        let mut dot = CMat::zeros(d1 * d2, d1 * d2);
        for a in 0..3 {
            dot = dot.add(&ops1[a].kron(&ops2[a]));
        }
        let lambda = |two_ss: i32| {
            let s = two_ss as f64 / 2.0;
            let j1 = two_j1 as f64 / 2.0;
            let j2 = two_j2 as f64 / 2.0;
            (s * (s + 1.0) - j1 * (j1 + 1.0) - j2 * (j2 + 1.0)) / 2.0
        };
        let mut p = CMat::identity(d1 * d2);
        let mut two_ss = (two_j1 - two_j2).abs();
        while two_ss <= two_j1 + two_j2 {
            if two_ss != two_s {
                let shift = CMat::identity(d1 * d2).scale(Complex64::new(lambda(two_ss), 0.0));
                let denom = lambda(two_s) - lambda(two_ss);
                p = p.mul(&dot.sub(&shift)).scale(Complex64::new(1.0 / denom, 0.0));
            }
            two_ss += 2;
        }
        p
    }

    /// Relabeling of a merged pair of spin-1/2 qubits into the spin-3/2
    /// basis: `|m1>|m2> -> |3/2, m1 + 2 m2>`.  A 4×4 permutation (the four
    /// sums `m1 + 2 m2` are distinct).
    pub fn merge_unitary() -> CMat {
        let mut u = CMat::zeros(4, 4);
        for b1 in 0..2i32 {
            for b2 in 0..2i32 {
                let two_m1 = 1 - 2 * b1; // qubit 0 is m = +1/2
                let two_m2 = 1 - 2 * b2;
                let two_mm = two_m1 + 2 * two_m2;
                let level = ((3 - two_mm) / 2) as usize;
                u[(level, (b1 * 2 + b2) as usize)] = C1;
            }
        }
        u
    }

    /// Ideal controlled-phase between two coupled domains, on the pair of
    /// dangling qubits: projector onto each basis state of the control axis
    /// tensored with identity or the target-axis Pauli.
    pub fn coupling_matrix(au: Axis, aw: Axis) -> CMat {
        let (u0, u1) = axis_basis(au);
        let (w0, w1) = axis_basis(aw);
        let mut cp = CMat::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                let p0 = u0[i] * u0[j].conj();
                let p1 = u1[i] * u1[j].conj();
                for k in 0..2 {
                    for l in 0..2 {
                        let idm = if k == l { C1 } else { C0 };
                        let sig = w0[k] * w0[l].conj() - w1[k] * w1[l].conj();
                        cp[(2 * i + k, 2 * j + l)] = p0 * idm + p1 * sig;
                    }
                }
            }
        }
        cp
    }
}

// ---------------------------------------------------------------------------
// Statevector
// ---------------------------------------------------------------------------

/// Full statevector over `n` qubits.  May be unnormalized (branch weights).
#[derive(Clone, Debug)]
pub struct DenseState {
    n: usize,
    amps: Vec<Complex64>,
}

fn gather(len: usize, f: impl Fn(usize) -> Complex64 + Sync + Send) -> Vec<Complex64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if len >= 1 << 16 {
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    (0..len).map(f).collect()
}

impl DenseState {
    /// `|0...0>`.
    pub fn zero_state(n: usize) -> Self {
        Self::basis_state(n, 0)
    }

    /// Computational basis state with the given amplitude index.
    pub fn basis_state(n: usize, index: usize) -> Self {
        assert!(n <= 30, "dense state too large");
        let mut amps = vec![C0; 1 << n];
        amps[index] = C1;
        Self { n, amps }
    }

    pub fn num_qubits(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    /// Index bit position of qubit `q` (qubit 0 is most significant).
    fn bit(&self, q: usize) -> usize {
        1 << (self.n - 1 - q)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Scale to unit norm; returns the previous norm.
    pub fn normalize(&mut self) -> Result<f64, DenseError> {
        let nrm = self.norm();
        if nrm < 1e-150 {
            return Err(DenseError::ZeroNorm);
        }
        let inv = Complex64::new(1.0 / nrm, 0.0);
        for a in &mut self.amps {
            *a *= inv;
        }
        Ok(nrm)
    }

    /// Make the first nonzero amplitude real-positive (global-phase gauge).
    pub fn fix_phase(&mut self) {
        if let Some(a) = self.amps.iter().find(|a| a.norm() > 1e-12) {
            let phase = a / a.norm();
            let inv = phase.conj();
            for a in &mut self.amps {
                *a *= inv;
            }
        }
    }

    pub fn inner(&self, other: &DenseState) -> Complex64 {
        assert_eq!(self.n, other.n);
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Apply an arbitrary `2^k × 2^k` operator to the listed qubits
    /// (`qubits[0]` is the most significant bit of the operator's index).
    pub fn apply_op(&mut self, qubits: &[usize], mat: &CMat) {
        let k = qubits.len();
        assert_eq!(mat.rows, 1 << k);
        assert_eq!(mat.cols, 1 << k);
        let masks: Vec<usize> = qubits.iter().map(|&q| self.bit(q)).collect();
        let sub = |i: usize| -> usize {
            let mut r = 0;
            for m in &masks {
                r = (r << 1) | usize::from(i & m != 0);
            }
            r
        };
        let place = |j: usize| -> usize {
            let mut out = 0;
            for (t, m) in masks.iter().enumerate() {
                if j & (1 << (k - 1 - t)) != 0 {
                    out |= m;
                }
            }
            out
        };
        let clear: usize = !masks.iter().fold(0, |acc, m| acc | m);
        let src = &self.amps;
        let dim = 1usize << k;
        self.amps = gather(src.len(), |i| {
            let r = sub(i);
            let base = i & clear;
            let mut acc = C0;
            for j in 0..dim {
                let a = mat[(r, j)];
                if a != C0 {
                    acc += a * src[base | place(j)];
                }
            }
            acc
        });
    }

    pub fn apply_gate(&mut self, g: Gate) {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let h = Complex64::new(r, 0.0);
        let (qubits, m): (Vec<usize>, CMat) = match g {
            Gate::H(q) => (vec![q], CMat::from_rows(&[&[h, h], &[h, -h]])),
            Gate::S(q) => (vec![q], CMat::from_rows(&[&[C1, C0], &[C0, CI]])),
            Gate::Sdg(q) => (vec![q], CMat::from_rows(&[&[C1, C0], &[C0, -CI]])),
            Gate::X(q) => (vec![q], CMat::from_rows(&[&[C0, C1], &[C1, C0]])),
            Gate::Y(q) => (vec![q], CMat::from_rows(&[&[C0, -CI], &[CI, C0]])),
            Gate::Z(q) => (vec![q], CMat::from_rows(&[&[C1, C0], &[C0, -C1]])),
            Gate::Cz(a, b) => {
                let mut m = CMat::identity(4);
                m[(3, 3)] = -C1;
                (vec![a, b], m)
            }
            Gate::Cnot(a, b) => {
                let mut m = CMat::zeros(4, 4);
                m[(0, 0)] = C1;
                m[(1, 1)] = C1;
                m[(2, 3)] = C1;
                m[(3, 2)] = C1;
                (vec![a, b], m)
            }
            Gate::Swap(a, b) => {
                let mut m = CMat::zeros(4, 4);
                m[(0, 0)] = C1;
                m[(1, 2)] = C1;
                m[(2, 1)] = C1;
                m[(3, 3)] = C1;
                (vec![a, b], m)
            }
        };
        self.apply_op(&qubits, &m);
    }

    /// Apply a Pauli operator (including its stored phase) exactly.
    pub fn apply_pauli(&mut self, p: &Pauli) {
        assert_eq!(p.num_qubits(), self.n);
        let mut xmask = 0usize;
        let mut zmask = 0usize;
        for q in 0..self.n {
            if p.x_bit(q) {
                xmask |= self.bit(q);
            }
            if p.z_bit(q) {
                zmask |= self.bit(q);
            }
        }
        let phase = ipow(p.phase_exp());
        let src = &self.amps;
        // A |b> = i^ph (-1)^(z·b) |b ^ x|, so out[i] pulls from i ^ xmask.
        self.amps = gather(src.len(), |i| {
            let b = i ^ xmask;
            let sign = if (b & zmask).count_ones() % 2 == 0 { C1 } else { -C1 };
            phase * sign * src[b]
        });
    }

    /// Project with `(I ± P)/2` and renormalize; returns the probability of
    /// that outcome relative to the incoming norm.  `outcome = false` keeps
    /// the `+1` eigenspace of the (Hermitian) operator, matching the tableau
    /// measurement convention.  A zero-probability branch leaves the state
    /// zeroed and returns 0.
    pub fn project_pauli(&mut self, p: &Pauli, outcome: bool) -> f64 {
        assert!(p.is_hermitian(), "projection needs a Hermitian operator");
        let pre = self.norm_sqr();
        let mut flipped = self.clone();
        flipped.apply_pauli(p);
        let s = if outcome { -C1 } else { C1 };
        for (a, b) in self.amps.iter_mut().zip(&flipped.amps) {
            *a = (*a + s * b) * Complex64::new(0.5, 0.0);
        }
        let post = self.norm_sqr();
        if pre < 1e-300 {
            return 0.0;
        }
        let prob = post / pre;
        if prob < 1e-24 {
            self.amps.iter_mut().for_each(|a| *a = C0);
            return 0.0;
        }
        let inv = Complex64::new((pre / post).sqrt(), 0.0);
        for a in &mut self.amps {
            *a *= inv;
        }
        prob
    }

    /// Binary dump: magic, qubit count, then `2^n` little-endian `(re, im)`
    /// doubles in amplitude-index order.
    pub fn dump_amplitudes<W: Write>(&self, w: &mut W) -> Result<(), DenseError> {
        w.write_all(b"AKDENSE1")?;
        w.write_all(&(self.n as u32).to_le_bytes())?;
        for a in &self.amps {
            w.write_all(&a.re.to_le_bytes())?;
            w.write_all(&a.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_amplitudes<R: Read>(r: &mut R) -> Result<Self, DenseError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"AKDENSE1" {
            return Err(DenseError::BadDump("bad magic".into()));
        }
        let mut nb = [0u8; 4];
        r.read_exact(&mut nb)?;
        let n = u32::from_le_bytes(nb) as usize;
        if n > 30 {
            return Err(DenseError::BadDump(format!("qubit count {n} too large")));
        }
        let mut amps = Vec::with_capacity(1 << n);
        let mut buf = [0u8; 16];
        for _ in 0..1usize << n {
            r.read_exact(&mut buf)?;
            let re = f64::from_le_bytes(buf[..8].try_into().unwrap());
            let im = f64::from_le_bytes(buf[8..].try_into().unwrap());
            amps.push(Complex64::new(re, im));
        }
        Ok(Self { n, amps })
    }
}

/// `|<a|b>|² / (‖a‖² ‖b‖²)` — phase- and scale-free overlap.
pub fn fidelity(a: &DenseState, b: &DenseState) -> Result<f64, DenseError> {
    if a.n != b.n {
        return Err(DenseError::SizeMismatch(a.n, b.n));
    }
    let na = a.norm_sqr();
    let nb = b.norm_sqr();
    if na < 1e-300 || nb < 1e-300 {
        return Err(DenseError::ZeroNorm);
    }
    Ok(a.inner(b).norm_sqr() / (na * nb))
}

/// Product of singlets `(|01> - |10>)/sqrt(2)` on the given edges.
pub fn singlet_product(n: usize, edges: &[(usize, usize)]) -> DenseState {
    let mut psi = DenseState::zero_state(n);
    for &(i, j) in edges {
        psi.apply_gate(Gate::X(j));
        psi.apply_gate(Gate::H(i));
        psi.apply_gate(Gate::Cnot(i, j));
        psi.apply_gate(Gate::Z(i));
    }
    psi
}

/// The valence-bond ground state: singlets on all edges, then the symmetric
/// projection on every site triple.  Normalized, phase-gauged.
pub fn build_aklt(map: &SiteMap, cap: usize) -> Result<DenseState, DenseError> {
    if map.qubits > cap {
        return Err(DenseError::CapExceeded { n: map.qubits, cap });
    }
    let mut psi = singlet_product(map.qubits, &map.edges);
    let proj = spin::sym_projector();
    for site in &map.a_sites {
        psi.apply_op(&site.legs, &proj);
    }
    psi.normalize()?;
    psi.fix_phase();
    Ok(psi)
}

/// Apply the site POVM element for `axis` on one site triple.  Returns the
/// unnormalized branch state and the branch probability
/// (post-norm² / pre-norm²).
pub fn apply_kraus(state: &DenseState, legs: &[usize; 3], axis: Axis) -> (DenseState, f64) {
    let pre = state.norm_sqr();
    let mut post = state.clone();
    post.apply_op(legs, &spin::kraus_virtual(axis));
    let prob = if pre < 1e-300 { 0.0 } else { post.norm_sqr() / pre };
    (post, prob)
}

/// Rewrite every merged dangling pair into the spin-3/2 level ordering
/// (`|m1>|m2> -> |3/2, m1 + 2 m2>`).  Representation change only.
pub fn apply_merge_unitary(state: &DenseState, map: &SiteMap) -> DenseState {
    let mut out = state.clone();
    let u = spin::merge_unitary();
    for m in &map.merges {
        out.apply_op(&[m.upper, m.lower], &u);
    }
    out
}

/// Expectation `<psi|H|psi>` and residual `‖H|psi>‖` for the parent
/// Hamiltonian terms (state must be normalized).
pub fn ham_check(state: &DenseState, terms: &[HamTerm]) -> (f64, f64) {
    let t = spin::relabel_isometry();
    let tt = t.kron(&t);
    let aa = tt.mul(&spin::pair_projector(3, 3, 6)).mul(&tt.dagger());
    let tb = t.kron(&CMat::identity(2));
    let ab = tb.mul(&spin::pair_projector(3, 1, 4)).mul(&tb.dagger());
    let mut accum = DenseState { n: state.n, amps: vec![C0; state.amps.len()] };
    for term in terms {
        let mut part = state.clone();
        match term {
            HamTerm::PairAa { left, right } => {
                let qubits = [left[0], left[1], left[2], right[0], right[1], right[2]];
                part.apply_op(&qubits, &aa);
            }
            HamTerm::PairAb { a, b } => {
                part.apply_op(&[a[0], a[1], a[2], *b], &ab);
            }
        }
        for (acc, p) in accum.amps.iter_mut().zip(&part.amps) {
            *acc += p;
        }
    }
    let energy = state.inner(&accum).re;
    (energy, accum.norm())
}

/// Convert a full-rank stabilizer state to amplitudes.
///
/// A support bitstring is found by forced Z measurements on a clone of the
/// tableau; the corresponding basis state has nonzero overlap by
/// construction, and sequential `(I + g)/2` projections then land on the
/// unique joint `+1` eigenvector.  A fallback seed loop guards against
/// numerically annihilated starts.
pub fn tableau_to_dense(s: &StabilizerState, cap: usize) -> Result<DenseState, DenseError> {
    let n = s.num_qubits();
    if n > cap {
        return Err(DenseError::CapExceeded { n, cap });
    }
    assert_eq!(s.rank(), n, "state must be pure (full rank)");
    let mut support = 0usize;
    {
        let mut probe = s.clone();
        let mut rng = crate::rng::TrialRng::new(0, 0);
        for q in 0..n {
            let z = Pauli::single(n, q, Axis::Z);
            let bit = match probe.measure(&z, Some(false), &mut rng) {
                Ok(_) => false,
                Err(_) => {
                    probe.measure(&z, Some(true), &mut rng).expect("Z outcome is one of ±1");
                    true
                }
            };
            if bit {
                support |= 1 << (n - 1 - q);
            }
        }
    }
    'seed: for seed in [support, 0] {
        let mut psi = DenseState::basis_state(n, seed);
        for g in s.generators() {
            let p = psi.project_pauli(g, false);
            if p <= 0.0 {
                continue 'seed;
            }
        }
        psi.normalize()?;
        psi.fix_phase();
        return Ok(psi);
    }
    Err(DenseError::ZeroNorm)
}
