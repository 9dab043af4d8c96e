//! Closed-form average delivery rates and per-slot rates of the three
//! delivery schemes.
//!
//! All rates are normalized by the chunk size `F/B` and taken in the
//! large-`F` limit, where the number of bits of a chunk cached by exactly
//! `l'` of `l` users concentrates at `q^l' (1-q)^(l-l')`.

mod closed_form;
mod rho;
mod slot;

use serde::{Deserialize, Serialize};

pub use closed_form::{delta_phi1, delta_phi2, rate_man, rate_pcc, rate_ran, rate_uncoded, ProfileTerms, RateContext};
pub use rho::{rho, rho_prime, rho_prime_vector, rho_vector, CompositionIndex};
pub use slot::{man_subset_term, slot_breakdown, slot_rate, slot_rate_with, SlotBreakdown};

/// Delivery scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Scheme {
    /// Random linear combinations per requested chunk.
    Ran,
    /// Subset-XOR delivery over every user subset.
    Man,
    /// Partial coded caching.
    Pcc,
    /// Identical-prefix caching with unicast of missing bits.
    Uncoded,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Ran => "RAN",
            Scheme::Man => "MAN",
            Scheme::Pcc => "PCC",
            Scheme::Uncoded => "UNCODED",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RAN" => Ok(Scheme::Ran),
            "MAN" => Ok(Scheme::Man),
            "PCC" => Ok(Scheme::Pcc),
            "UNCODED" => Ok(Scheme::Uncoded),
            other => Err(crate::Error::InvalidConfig(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Which subset size indexes the tie-count denominator of `rho'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPrimeIndex {
    /// Count ties of `g` at `(sum k, sum l)`.
    SumL,
    /// Count ties of `g` at `(sum k, sum l - 1)`, the size actually maximized.
    #[default]
    SumLMinus1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RateOptions {
    pub rho_prime_index: RhoPrimeIndex,
    /// Cache composition terms per `(sum k, l)` across profiles.
    pub memoize: bool,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self { rho_prime_index: RhoPrimeIndex::default(), memoize: true }
    }
}

/// Which PART 2 variant of the PCC scheme runs in a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartTwo {
    /// Whichever of pairwise XOR and chained XOR is cheaper for the realized demand.
    Cheaper,
    /// Pairwise XORs over every two-user subset (PART 2.1).
    Pairwise,
    /// Chained XORs of singly-cached pieces per requested chunk (PART 2.2).
    Chain,
}

/// How the PCC PART 2 variant is picked in simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartTwoRule {
    /// Decide once per active-count profile `(K_1..K_B)` from expected costs.
    /// The closed-form PCC rate is the average rate of this rule.
    #[default]
    PerProfile,
    /// Decide per realized demand.
    PerSlot,
}

/// Average rates of all schemes at one cache distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBreakdown {
    pub rate_ran: f64,
    pub rate_man: f64,
    pub rate_pcc: f64,
    pub delta_phi1: f64,
    pub delta_phi2: f64,
}

impl RateBreakdown {
    pub fn get(&self, scheme: Scheme) -> f64 {
        match scheme {
            Scheme::Ran | Scheme::Uncoded => self.rate_ran,
            Scheme::Man => self.rate_man,
            Scheme::Pcc => self.rate_pcc,
        }
    }
}
