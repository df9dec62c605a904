//! Modal absorption of the guided mode along the wire/waveguide overlap.
//!
//! A photon travelling a length `L` under the wires is absorbed with
//! probability `1 - exp(-alpha_tot * L)`. The two central wires and the two
//! lateral wires see different shares of the mode, described by group
//! coefficients `alpha_cent` and `alpha_lat`; the absorbed fraction splits as
//! `P_group(L) = (alpha_group / alpha_tot) * (1 - exp(-alpha_tot * L))`.
//!
//! Quoted group coefficients do not sum exactly to the total (478 vs
//! 282 + 198 = 480 per cm for TE; the mismatch is rounding noise). The total
//! stays authoritative for the exponential decay and the group coefficients
//! are rescaled proportionally at construction so the probabilities conserve
//! exactly; the raw inputs are kept for reporting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guided-mode polarization. TE and TM see different absorption coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarization {
    Te,
    Tm,
}

impl std::fmt::Display for Polarization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Polarization::Te => write!(f, "TE"),
            Polarization::Tm => write!(f, "TM"),
        }
    }
}

impl std::str::FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "TE" => Ok(Polarization::Te),
            "TM" => Ok(Polarization::Tm),
            other => Err(Error::invalid(format!(
                "unknown polarization `{other}` (expected TE or TM)"
            ))),
        }
    }
}

/// Which pair of wires a group coefficient refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireGroup {
    Central,
    Lateral,
}

/// Absorption coefficients for one polarization plus the overlap length.
///
/// Lengths are in cm to match the 1/cm coefficients; the CLI converts from
/// micrometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionModel {
    n_wires: usize,
    alpha_total: f64,
    alpha_central: f64,
    alpha_lateral: f64,
    raw_alpha_central: f64,
    raw_alpha_lateral: f64,
    length_cm: f64,
    polarization: Polarization,
}

impl AbsorptionModel {
    /// Builds a model from per-polarization coefficients (1/cm) and the
    /// overlap length (cm). Group coefficients are rescaled so that
    /// `alpha_central + alpha_lateral == alpha_total` exactly.
    pub fn new(
        alpha_total: f64,
        alpha_central: f64,
        alpha_lateral: f64,
        length_cm: f64,
        polarization: Polarization,
    ) -> Result<Self> {
        if !(alpha_total > 0.0 && alpha_central > 0.0 && alpha_lateral > 0.0) {
            return Err(Error::invalid(format!(
                "absorption coefficients must be positive (got total={alpha_total}, \
                 central={alpha_central}, lateral={alpha_lateral})"
            )));
        }
        if !(length_cm >= 0.0) {
            return Err(Error::invalid(format!(
                "overlap length must be non-negative (got {length_cm} cm)"
            )));
        }
        let group_sum = alpha_central + alpha_lateral;
        let scale = alpha_total / group_sum;
        Ok(Self {
            n_wires: 4,
            alpha_total,
            alpha_central: alpha_central * scale,
            alpha_lateral: alpha_lateral * scale,
            raw_alpha_central: alpha_central,
            raw_alpha_lateral: alpha_lateral,
            length_cm,
            polarization,
        })
    }

    /// Reference-device TE coefficients: 478 / 282 / 198 per cm, 30 um overlap.
    pub fn te_default() -> Self {
        Self::new(478.0, 282.0, 198.0, 30e-4, Polarization::Te).expect("valid constants")
    }

    /// Reference-device TM coefficients: 654 / 380 / 276 per cm, 30 um overlap.
    pub fn tm_default() -> Self {
        Self::new(654.0, 380.0, 276.0, 30e-4, Polarization::Tm).expect("valid constants")
    }

    pub fn with_length_cm(mut self, length_cm: f64) -> Result<Self> {
        if !(length_cm >= 0.0) {
            return Err(Error::invalid(format!(
                "overlap length must be non-negative (got {length_cm} cm)"
            )));
        }
        self.length_cm = length_cm;
        Ok(self)
    }

    pub fn n_wires(&self) -> usize {
        self.n_wires
    }

    pub fn length_cm(&self) -> f64 {
        self.length_cm
    }

    pub fn polarization(&self) -> Polarization {
        self.polarization
    }

    pub fn alpha_total(&self) -> f64 {
        self.alpha_total
    }

    /// Normalized group coefficient (after construction-time rescaling).
    pub fn alpha_group(&self, group: WireGroup) -> f64 {
        match group {
            WireGroup::Central => self.alpha_central,
            WireGroup::Lateral => self.alpha_lateral,
        }
    }

    /// Group coefficient exactly as supplied, before rescaling.
    pub fn raw_alpha_group(&self, group: WireGroup) -> f64 {
        match group {
            WireGroup::Central => self.raw_alpha_central,
            WireGroup::Lateral => self.raw_alpha_lateral,
        }
    }

    /// Probability that a photon is absorbed anywhere along the overlap:
    /// `1 - exp(-alpha_tot * L)`.
    pub fn total_absorptance(&self) -> f64 {
        -(-self.alpha_total * self.length_cm).exp_m1()
    }

    /// Probability that a photon is absorbed by the given wire pair:
    /// `(alpha_group / alpha_tot) * (1 - exp(-alpha_tot * L))`.
    pub fn group_absorption_probability(&self, group: WireGroup) -> f64 {
        self.alpha_group(group) / self.alpha_total * self.total_absorptance()
    }

    /// Splits each group probability equally between its two wires and
    /// returns the per-wire vector ordered lateral-central-central-lateral.
    ///
    /// Only the symmetric four-wire layout is supported; other wire counts
    /// would need an explicit group map.
    pub fn per_wire_probabilities(&self) -> Result<WireProbabilityVector> {
        if self.n_wires != 4 {
            return Err(Error::invalid(format!(
                "per-wire split is defined for 4 wires, model has {}",
                self.n_wires
            )));
        }
        let half_central = self.group_absorption_probability(WireGroup::Central) / 2.0;
        let half_lateral = self.group_absorption_probability(WireGroup::Lateral) / 2.0;
        WireProbabilityVector::new(
            vec![half_lateral, half_central, half_central, half_lateral],
            (-self.alpha_total * self.length_cm).exp(),
        )
    }
}

/// Per-wire absorption probabilities plus the probability of passing through
/// unabsorbed. Probabilities sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireProbabilityVector {
    p_wire: Vec<f64>,
    p_transmit: f64,
}

impl WireProbabilityVector {
    pub fn new(p_wire: Vec<f64>, p_transmit: f64) -> Result<Self> {
        if p_wire.is_empty() {
            return Err(Error::invalid("wire probability vector must be non-empty"));
        }
        for (i, &p) in p_wire.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("p_wire[{i}] = {p} outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&p_transmit) {
            return Err(Error::invalid(format!("p_transmit = {p_transmit} outside [0, 1]")));
        }
        let total: f64 = p_wire.iter().sum::<f64>() + p_transmit;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "wire probabilities plus transmission sum to {total}, expected 1"
            )));
        }
        Ok(Self { p_wire, p_transmit })
    }

    /// N equal wires absorbing everything (no transmission loss).
    pub fn equal(n_wires: usize) -> Self {
        Self {
            p_wire: vec![1.0 / n_wires as f64; n_wires],
            p_transmit: 0.0,
        }
    }

    pub fn n_wires(&self) -> usize {
        self.p_wire.len()
    }

    pub fn p_wire(&self) -> &[f64] {
        &self.p_wire
    }

    pub fn p_transmit(&self) -> f64 {
        self.p_transmit
    }

    /// Total absorption probability (`1 - p_transmit`).
    pub fn absorption_total(&self) -> f64 {
        1.0 - self.p_transmit
    }

    /// Per-wire distribution conditioned on the photon being absorbed.
    pub fn conditioned_on_absorption(&self) -> Result<Self> {
        let total = self.absorption_total();
        if total <= 0.0 {
            return Err(Error::invalid(
                "cannot condition on absorption when nothing is absorbed",
            ));
        }
        Self::new(self.p_wire.iter().map(|p| p / total).collect(), 0.0)
    }

    /// Probability that a photon registers on wire `i`: absorption there
    /// times the internal efficiency.
    pub fn registration_probs(&self, internal_efficiency: f64) -> Vec<f64> {
        self.p_wire.iter().map(|p| p * internal_efficiency).collect()
    }
}
