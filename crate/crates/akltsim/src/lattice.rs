//! Quasichain and 2D lattice geometry: sites, singlet edges, merges.
//!
//! A quasichain of `N` spin-3/2 A-sites carries three virtual qubits per
//! site (left backbone leg, middle dangling leg, right backbone leg) plus
//! `N + 2` physical spin-1/2 `b` qubits: one dangling partner per site and
//! one extra at each chain end, so interior sites have one dangling singlet
//! and the two end sites have two.  Every qubit is covered by exactly one
//! singlet edge, giving `4N + 2` qubits per chain.
//!
//! In the 2D layout the dangling `b` of chain `c` at column `i` faces chain
//! `c+1` when `(i + stagger_c)` is even and chain `c-1` otherwise; facing
//! pairs at the same column are merge pairs (a spin-3/2 `B` site after the
//! merge relabeling).  The default stagger alternates per chain, which makes
//! merges between consecutive chain pairs fall on alternating columns — the
//! staggered mirror-image stacking that turns into a brick-wall pattern.
//! Unmatched dangling qubits at the outer chains and the chain-end `b`s stay
//! unmerged and are listed as boundary spin-1/2s.
//!
//! Qubit ids are assigned row-major and deterministically: chain `c` owns the
//! contiguous block starting at `c (4N + 2)`, legs first (3 per site, site
//! major), then the end `b`, the dangling `b`s by column, and the far-end `b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pauli::{Axis, Pauli};
use crate::stab::{StabError, StabilizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    SingleChain,
    Cmdb2d,
}

/// User-facing lattice description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSpec {
    pub chains: usize,
    pub sites_per_chain: usize,
    pub layout: Layout,
    /// Per-chain stagger offsets; defaults to `c mod 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stagger: Option<Vec<u32>>,
}

impl LatticeSpec {
    pub fn single_chain(sites: usize) -> Self {
        Self { chains: 1, sites_per_chain: sites, layout: Layout::SingleChain, stagger: None }
    }

    pub fn cmdb_2d(chains: usize, sites: usize) -> Self {
        Self { chains, sites_per_chain: sites, layout: Layout::Cmdb2d, stagger: None }
    }

    fn stagger_of(&self, chain: usize) -> u32 {
        match &self.stagger {
            Some(v) => v[chain],
            None => (chain % 2) as u32,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LatticeError {
    #[error("invalid lattice: {0}")]
    Invalid(String),
    #[error("state construction failed: {0}")]
    State(#[from] StabError),
}

/// Role of a spin-1/2 `b` qubit within its chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BRole {
    /// Chain-start end qubit, singlet with the first site's left leg.
    EndLeft,
    /// Dangling partner of the site at this column.
    Dangling { column: usize },
    /// Chain-end qubit, singlet with the last site's right leg.
    EndRight,
}

/// One spin-3/2 site: three virtual qubits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ASite {
    pub chain: usize,
    pub site: usize,
    /// Left backbone leg, middle (dangling) leg, right backbone leg.
    pub legs: [usize; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BQubit {
    pub id: usize,
    pub chain: usize,
    pub role: BRole,
    /// The virtual leg this qubit forms a singlet with.
    pub partner_leg: usize,
}

/// A merged pair of dangling `b` qubits from adjacent chains (a spin-3/2 `B`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    /// Dangling qubit of the upper chain.
    pub upper: usize,
    /// Dangling qubit of the lower chain (`upper`'s chain + 1).
    pub lower: usize,
    pub upper_chain: usize,
    pub column: usize,
}

/// Fully resolved lattice: deterministic qubit ids, edges, merges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteMap {
    pub version: u32,
    pub spec: LatticeSpec,
    pub qubits: usize,
    pub a_sites: Vec<ASite>,
    pub b_qubits: Vec<BQubit>,
    /// Singlet edges, lower id first, lexicographic order.
    pub edges: Vec<(usize, usize)>,
    pub merges: Vec<Merge>,
    /// Unmerged spin-1/2 qubits (chain ends, open-boundary danglers).
    pub boundary_b: Vec<usize>,
}

pub const SITE_MAP_VERSION: u32 = 1;

/// Build the deterministic qubit/edge/merge layout for a spec.
pub fn build(spec: &LatticeSpec) -> Result<SiteMap, LatticeError> {
    let n = spec.sites_per_chain;
    let chains = spec.chains;
    if n == 0 || chains == 0 {
        return Err(LatticeError::Invalid("empty lattice".into()));
    }
    match spec.layout {
        Layout::SingleChain => {}
        Layout::Cmdb2d => {
            if chains < 2 {
                return Err(LatticeError::Invalid(
                    "2d layout needs at least 2 chains".into(),
                ));
            }
        }
    }
    if let Some(st) = &spec.stagger {
        if st.len() != chains {
            return Err(LatticeError::Invalid(format!(
                "stagger has {} entries for {} chains",
                st.len(),
                chains
            )));
        }
    }
    let per_chain = 4 * n + 2;
    let mut a_sites = Vec::with_capacity(chains * n);
    let mut b_qubits = Vec::new();
    let mut edges = Vec::new();
    for c in 0..chains {
        let base = c * per_chain;
        let leg = |site: usize, k: usize| base + 3 * site + k;
        let end_left = base + 3 * n;
        let dangling = |col: usize| base + 3 * n + 1 + col;
        let end_right = base + 4 * n + 1;
        for i in 0..n {
            a_sites.push(ASite { chain: c, site: i, legs: [leg(i, 0), leg(i, 1), leg(i, 2)] });
        }
        b_qubits.push(BQubit {
            id: end_left,
            chain: c,
            role: BRole::EndLeft,
            partner_leg: leg(0, 0),
        });
        for i in 0..n {
            b_qubits.push(BQubit {
                id: dangling(i),
                chain: c,
                role: BRole::Dangling { column: i },
                partner_leg: leg(i, 1),
            });
        }
        b_qubits.push(BQubit {
            id: end_right,
            chain: c,
            role: BRole::EndRight,
            partner_leg: leg(n - 1, 2),
        });
        // backbone singlets between consecutive sites
        for i in 0..n - 1 {
            edges.push((leg(i, 2), leg(i + 1, 0)));
        }
        // dangling and end singlets
        edges.push((leg(0, 0), end_left));
        for i in 0..n {
            edges.push((leg(i, 1), dangling(i)));
        }
        edges.push((leg(n - 1, 2), end_right));
    }
    edges.iter_mut().for_each(|e| {
        if e.0 > e.1 {
            *e = (e.1, e.0);
        }
    });
    edges.sort_unstable();

    let mut merges = Vec::new();
    let mut merged = vec![false; chains * per_chain];
    if spec.layout == Layout::Cmdb2d {
        for c in 0..chains - 1 {
            for col in 0..n {
                let down = (col as u32 + spec.stagger_of(c)) % 2 == 0;
                let up_below = (col as u32 + spec.stagger_of(c + 1)) % 2 == 1;
                if down && up_below {
                    let upper = c * per_chain + 3 * n + 1 + col;
                    let lower = (c + 1) * per_chain + 3 * n + 1 + col;
                    merges.push(Merge { upper, lower, upper_chain: c, column: col });
                    merged[upper] = true;
                    merged[lower] = true;
                }
            }
        }
    }
    let boundary_b = b_qubits
        .iter()
        .filter(|b| !merged[b.id])
        .map(|b| b.id)
        .collect();

    Ok(SiteMap {
        version: SITE_MAP_VERSION,
        spec: spec.clone(),
        qubits: chains * per_chain,
        a_sites,
        b_qubits,
        edges,
        merges,
        boundary_b,
    })
}

impl SiteMap {
    pub fn num_chains(&self) -> usize {
        self.spec.chains
    }

    pub fn sites_per_chain(&self) -> usize {
        self.spec.sites_per_chain
    }

    /// The A-site at (chain, site).
    pub fn a_site(&self, chain: usize, site: usize) -> &ASite {
        &self.a_sites[chain * self.spec.sites_per_chain + site]
    }

    /// Dangling `b` qubit id of (chain, column).
    pub fn dangling_b(&self, chain: usize, column: usize) -> usize {
        chain * (4 * self.spec.sites_per_chain + 2) + 3 * self.spec.sites_per_chain + 1 + column
    }

    /// The `b` qubit whose singlet partner is the given leg, if any.
    pub fn b_for_leg(&self, leg: usize) -> Option<&BQubit> {
        self.b_qubits.iter().find(|b| b.partner_leg == leg)
    }

    /// The merge containing this dangling qubit, if any.
    pub fn merge_of(&self, b_id: usize) -> Option<&Merge> {
        self.merges.iter().find(|m| m.upper == b_id || m.lower == b_id)
    }

    /// The two singlet stabilizer generators of each edge: `-XX` and `-ZZ`.
    pub fn singlet_generators(&self) -> Vec<Pauli> {
        let mut gens = Vec::with_capacity(2 * self.edges.len());
        for &(i, j) in &self.edges {
            for axis in [Axis::X, Axis::Z] {
                gens.push(Pauli::product(self.qubits, &[i, j], axis).negated());
            }
        }
        gens
    }

    /// The initial valence-bond state: every edge in a singlet.  The
    /// symmetric projection onto the spin-3/2 subspace of each site triple is
    /// deferred; the site POVM subsumes it.
    pub fn initial_state(&self) -> Result<StabilizerState, LatticeError> {
        Ok(StabilizerState::from_generators(self.qubits, self.singlet_generators())?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("site map serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, LatticeError> {
        let map: SiteMap =
            serde_json::from_str(s).map_err(|e| LatticeError::Invalid(e.to_string()))?;
        if map.version != SITE_MAP_VERSION {
            return Err(LatticeError::Invalid(format!(
                "unsupported site map version {}",
                map.version
            )));
        }
        Ok(map)
    }

    /// Frustration-free Hamiltonian terms for the chain parts: spin-3
    /// projectors on consecutive A-site pairs and spin-2 projectors on each
    /// A-site / spin-1/2 pair.
    pub fn hamiltonian_terms(&self) -> Vec<HamTerm> {
        let n = self.spec.sites_per_chain;
        let mut terms = Vec::new();
        for c in 0..self.spec.chains {
            for i in 0..n - 1 {
                terms.push(HamTerm::PairAa {
                    left: self.a_site(c, i).legs,
                    right: self.a_site(c, i + 1).legs,
                });
            }
            for b in self.b_qubits.iter().filter(|b| b.chain == c) {
                let site = match b.role {
                    BRole::EndLeft => self.a_site(c, 0),
                    BRole::Dangling { column } => self.a_site(c, column),
                    BRole::EndRight => self.a_site(c, n - 1),
                };
                terms.push(HamTerm::PairAb { a: site.legs, b: b.id });
            }
        }
        terms
    }
}

/// One projector term of the parent Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HamTerm {
    /// Projector onto total spin 3 of two neighboring spin-3/2 sites.
    PairAa { left: [usize; 3], right: [usize; 3] },
    /// Projector onto total spin 2 of a spin-3/2 site and a spin-1/2.
    PairAb { a: [usize; 3], b: usize },
}
