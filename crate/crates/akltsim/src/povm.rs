//! Three-outcome site POVM sampling on the stabilizer state.
//!
//! Each spin-3/2 site is measured with a POVM whose three elements pick a
//! quantization axis `a ∈ {x, y, z}` and project the site's three virtual
//! qubits onto `span{|000>_a, |111>_a}` — the joint `+1` eigenspace of the
//! two commuting checks `σ_a σ_a I` and `σ_a I σ_a`.  Because each element
//! absorbs the symmetric projection of its own site, the sampler runs on the
//! raw singlet product and never needs the non-Clifford projector.
//!
//! Probabilities are exact rationals.  The trial-projection weight `d_a` of
//! an axis is dyadic (a product of deterministic 1s and random 1/2s); actual
//! branch probabilities are the normalized ratios `d_a / (d_x + d_y + d_z)`.
//! The common `sqrt(2/3)` prefactor of the POVM elements cancels in that
//! ratio, and the denominator equals the symmetric-subspace weight of the
//! not-yet-projected site (always 3/4 here), so the normalized conditionals
//! are exactly the ones the projected ground state would give — asserted
//! against the dense reference in tests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::SiteMap;
use crate::pauli::{Axis, Pauli};
use crate::rng::{frac, Frac, TrialRng};
use crate::stab::{StabError, StabilizerState};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PovmError {
    #[error("forced axis {axis} at chain {chain} site {site} has probability zero")]
    ForcedZeroProbability { chain: usize, site: usize, axis: Axis },
    #[error("plan has {got} entries for {expected} sites")]
    PlanLength { expected: usize, got: usize },
    #[error("all three axis branches vanish at chain {chain} site {site}")]
    DeadEnd { chain: usize, site: usize },
    #[error(transparent)]
    State(#[from] StabError),
}

/// Serialize exact rationals as `"num/den"` strings (any precision in JSON).
pub mod frac_str {
    use crate::rng::Frac;
    use num_bigint::BigInt;
    use num_traits::Zero;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Frac, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", v.numer(), v.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Frac, D::Error> {
        let s = String::deserialize(d)?;
        let (num, den) = s
            .split_once('/')
            .ok_or_else(|| D::Error::custom("expected \"num/den\""))?;
        let num: BigInt = num.parse().map_err(D::Error::custom)?;
        let den: BigInt = den.parse().map_err(D::Error::custom)?;
        if den.is_zero() {
            return Err(D::Error::custom("zero denominator"));
        }
        Ok(Frac::new(num, den))
    }
}

/// Outcome of one site: the sampled axis with its exact probabilities.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteOutcome {
    pub chain: usize,
    pub site: usize,
    pub axis: Axis,
    /// Dyadic trial-projection weight of the chosen axis.
    #[serde(with = "frac_str")]
    pub weight: Frac,
    /// Normalized branch probability (weight / sum of the three weights).
    #[serde(with = "frac_str")]
    pub probability: Frac,
}

/// Full record of a sampling pass: per-site outcomes in the order visited.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub seed: u64,
    pub stream: u64,
    pub outcomes: Vec<SiteOutcome>,
    /// Product of the per-site branch probabilities.
    #[serde(with = "frac_str")]
    pub run_probability: Frac,
    /// RNG draws consumed while sampling (one per freely sampled site).
    pub rng_draws: u64,
}

const AXES: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

/// The two commuting checks fixing `span{|000>_a, |111>_a}` on a site triple.
pub fn povm_checks(n: usize, legs: &[usize; 3], axis: Axis) -> [Pauli; 2] {
    [
        Pauli::product(n, &[legs[0], legs[1]], axis),
        Pauli::product(n, &[legs[0], legs[2]], axis),
    ]
}

/// Everything `sample_site` learned about one site.
#[derive(Clone, Debug)]
pub struct SiteSample {
    pub axis: Axis,
    /// Dyadic weight of each axis branch, in x, y, z order.
    pub weights: [Frac; 3],
    /// Normalized probability of the chosen axis.
    pub probability: Frac,
}

/// Sample (or force) the POVM on one site and commit its checks.
///
/// Weights are obtained by projecting a cloned tableau; the real state is
/// only updated once the axis is chosen.  Forced axes keep their true branch
/// probability — no renormalization to 1.
pub fn sample_site(
    state: &mut StabilizerState,
    legs: &[usize; 3],
    at: (usize, usize),
    rng: &mut TrialRng,
    forced: Option<Axis>,
) -> Result<SiteSample, PovmError> {
    let n = state.num_qubits();
    let zero = frac(0, 1);
    let mut weights: [Frac; 3] = std::array::from_fn(|_| frac(0, 1));
    for (k, &axis) in AXES.iter().enumerate() {
        let mut trial = state.clone();
        weights[k] = trial.project(&povm_checks(n, legs, axis), rng)?;
    }
    let total: Frac = weights.iter().sum();
    if total == zero {
        return Err(PovmError::DeadEnd { chain: at.0, site: at.1 });
    }
    let probs = weights.clone().map(|w| w / &total);
    let idx = match forced {
        Some(axis) => {
            let k = AXES.iter().position(|&a| a == axis).expect("axis enum");
            if weights[k] == zero {
                return Err(PovmError::ForcedZeroProbability {
                    chain: at.0,
                    site: at.1,
                    axis,
                });
            }
            k
        }
        None => rng.pick(&probs),
    };
    let committed = state.project(&povm_checks(n, legs, AXES[idx]), rng)?;
    debug_assert_eq!(committed, weights[idx], "trial and commit agree");
    Ok(SiteSample { axis: AXES[idx], weights, probability: probs[idx].clone() })
}

/// Sample every A-site in chain-major, left-to-right order.
///
/// `plan` optionally forces per-site axes (indexed like `map.a_sites`; `None`
/// entries sample freely).  The record's `run_probability` is the exact
/// product of branch probabilities, also for forced branches.
pub fn run_all(
    state: &mut StabilizerState,
    map: &SiteMap,
    rng: &mut TrialRng,
    plan: Option<&[Option<Axis>]>,
) -> Result<OutcomeRecord, PovmError> {
    if let Some(p) = plan {
        if p.len() != map.a_sites.len() {
            return Err(PovmError::PlanLength { expected: map.a_sites.len(), got: p.len() });
        }
    }
    let draws_before = rng.draws();
    let mut outcomes = Vec::with_capacity(map.a_sites.len());
    let mut run_probability = frac(1, 1);
    for (k, a) in map.a_sites.iter().enumerate() {
        let forced = plan.and_then(|p| p[k]);
        let sample = sample_site(state, &a.legs, (a.chain, a.site), rng, forced)?;
        run_probability *= &sample.probability;
        let weight =
            sample.weights[AXES.iter().position(|&x| x == sample.axis).unwrap()].clone();
        outcomes.push(SiteOutcome {
            chain: a.chain,
            site: a.site,
            axis: sample.axis,
            weight,
            probability: sample.probability,
        });
    }
    Ok(OutcomeRecord {
        seed: rng.seed(),
        stream: rng.stream(),
        outcomes,
        run_probability,
        rng_draws: rng.draws() - draws_before,
    })
}
