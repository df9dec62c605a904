//! The experiment description file.
//!
//! One TOML file holds every knob of the simulated experiment; every key has
//! a default, and the defaults reproduce the reference device (an empty file
//! is the calibrated four-wire detector). Unknown keys are rejected so typos
//! fail loudly. Field names carry their unit; values convert to SI when the
//! typed domain objects are built.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::absorption::{AbsorptionModel, Polarization};
use crate::circuit::{DetectorCircuit, WireParams};
use crate::error::{Error, Result};
use crate::photonstats::{EfficiencyChain, ReferencePlane, SourceConfig, SourceKind};
use crate::signalproc::FilterSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for every random stream.
    pub seed: u64,
    pub absorption: AbsorptionBlock,
    pub circuit: CircuitBlock,
    pub efficiency: EfficiencyBlock,
    pub source: SourceBlock,
    pub filters: FilterBlock,
    pub simulation: SimulationBlock,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            absorption: AbsorptionBlock::default(),
            circuit: CircuitBlock::default(),
            efficiency: EfficiencyBlock::default(),
            source: SourceBlock::default(),
            filters: FilterBlock::default(),
            simulation: SimulationBlock::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoefficientSet {
    pub alpha_total_per_cm: f64,
    pub alpha_central_per_cm: f64,
    pub alpha_lateral_per_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AbsorptionBlock {
    /// Wire/waveguide overlap length.
    pub length_um: f64,
    /// Polarization used when a subcommand needs a single one.
    pub polarization: Polarization,
    pub te: CoefficientSet,
    pub tm: CoefficientSet,
}

impl Default for AbsorptionBlock {
    fn default() -> Self {
        Self {
            length_um: 30.0,
            polarization: Polarization::Te,
            te: CoefficientSet {
                alpha_total_per_cm: 478.0,
                alpha_central_per_cm: 282.0,
                alpha_lateral_per_cm: 198.0,
            },
            tm: CoefficientSet {
                alpha_total_per_cm: 654.0,
                alpha_central_per_cm: 380.0,
                alpha_lateral_per_cm: 276.0,
            },
        }
    }
}

impl Default for CoefficientSet {
    fn default() -> Self {
        AbsorptionBlock::default().te
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CircuitBlock {
    pub n_wires: usize,
    pub kinetic_inductance_nh: f64,
    pub critical_current_ua: f64,
    pub bias_current_ua: f64,
    pub shunt_resistance_ohm: f64,
    pub load_resistance_ohm: f64,
    pub hotspot_resistance_ohm: f64,
    pub hotspot_duration_ps: f64,
    pub retrap_fraction: f64,
    /// Operating temperature, kelvin. Recorded as metadata only.
    pub temperature_k: f64,
}

impl Default for CircuitBlock {
    fn default() -> Self {
        Self {
            n_wires: 4,
            kinetic_inductance_nh: 270.8,
            critical_current_ua: 10.0,
            bias_current_ua: 8.8,
            shunt_resistance_ohm: 38.0,
            load_resistance_ohm: 50.0,
            hotspot_resistance_ohm: 500.0,
            hotspot_duration_ps: 250.0,
            retrap_fraction: 0.5,
            temperature_k: 2.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EfficiencyBlock {
    pub coupling: f64,
    pub internal_efficiency: f64,
    pub dark_count_rate_hz: f64,
}

impl Default for EfficiencyBlock {
    fn default() -> Self {
        let e = EfficiencyChain::default();
        Self {
            coupling: e.coupling,
            internal_efficiency: e.internal_efficiency,
            dark_count_rate_hz: e.dark_count_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceBlock {
    pub kind: SourceKind,
    pub mean_photons_per_pulse: f64,
    pub repetition_rate_mhz: f64,
    pub photon_flux_hz: f64,
    pub counting_gate_ns: f64,
    pub reference_plane: ReferencePlane,
}

impl Default for SourceBlock {
    fn default() -> Self {
        Self {
            kind: SourceKind::Pulsed,
            mean_photons_per_pulse: 12.0,
            repetition_rate_mhz: 2.0,
            photon_flux_hz: 0.0,
            counting_gate_ns: 100.0,
            reference_plane: ReferencePlane::Waveguide,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterBlock {
    pub amplifier_high_pass_mhz: f64,
    pub amplifier_low_pass_ghz: f64,
    pub scope_low_pass_mhz: f64,
    pub gain_db: f64,
    /// White voltage noise at the scope input (after amplification).
    pub noise_sigma_mv: f64,
}

impl Default for FilterBlock {
    fn default() -> Self {
        Self {
            amplifier_high_pass_mhz: 20.0,
            amplifier_low_pass_ghz: 6.0,
            scope_low_pass_mhz: 80.0,
            gain_db: 43.0,
            noise_sigma_mv: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationBlock {
    pub dt_ps: f64,
    pub duration_ns: f64,
}

impl Default for SimulationBlock {
    fn default() -> Self {
        Self { dt_ps: 5.0, duration_ns: 60.0 }
    }
}

/// Parses a TOML experiment description, applying defaults for every missing
/// key. Unknown keys and type mismatches surface with the parser's
/// line/column diagnostics.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

impl ExperimentConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        parse_config(&text)
    }

    /// Builds every typed domain object once, so an invalid config fails at
    /// parse time rather than inside a subcommand.
    pub fn validate(&self) -> Result<()> {
        self.absorption_model(Polarization::Te)?;
        self.absorption_model(Polarization::Tm)?;
        self.detector_circuit().validate()?;
        self.efficiency_chain().validate()?;
        self.source()?.validate()?;
        self.amplifier_filter()?;
        self.scope_filter()?;
        if !(self.simulation.dt_ps > 0.0 && self.simulation.duration_ns > 0.0) {
            return Err(Error::Config("simulation dt and duration must be > 0".into()));
        }
        if !(self.filters.noise_sigma_mv >= 0.0) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        Ok(())
    }

    pub fn absorption_model(&self, polarization: Polarization) -> Result<AbsorptionModel> {
        let set = match polarization {
            Polarization::Te => &self.absorption.te,
            Polarization::Tm => &self.absorption.tm,
        };
        AbsorptionModel::new(
            set.alpha_total_per_cm,
            set.alpha_central_per_cm,
            set.alpha_lateral_per_cm,
            self.absorption.length_um * 1e-4,
            polarization,
        )
    }

    /// The absorption model for the configured polarization.
    pub fn selected_absorption_model(&self) -> Result<AbsorptionModel> {
        self.absorption_model(self.absorption.polarization)
    }

    pub fn detector_circuit(&self) -> DetectorCircuit {
        DetectorCircuit {
            n_wires: self.circuit.n_wires,
            wire: WireParams {
                kinetic_inductance: self.circuit.kinetic_inductance_nh * 1e-9,
                critical_current: self.circuit.critical_current_ua * 1e-6,
                hotspot_resistance: self.circuit.hotspot_resistance_ohm,
                hotspot_duration: self.circuit.hotspot_duration_ps * 1e-12,
                retrap_fraction: self.circuit.retrap_fraction,
            },
            shunt_resistance: self.circuit.shunt_resistance_ohm,
            load_resistance: self.circuit.load_resistance_ohm,
            bias_current: self.circuit.bias_current_ua * 1e-6,
        }
    }

    pub fn efficiency_chain(&self) -> EfficiencyChain {
        EfficiencyChain {
            coupling: self.efficiency.coupling,
            internal_efficiency: self.efficiency.internal_efficiency,
            dark_count_rate: self.efficiency.dark_count_rate_hz,
        }
    }

    pub fn source(&self) -> Result<SourceConfig> {
        let source = SourceConfig {
            kind: self.source.kind,
            mean_photons_per_pulse: self.source.mean_photons_per_pulse,
            repetition_rate: self.source.repetition_rate_mhz * 1e6,
            photon_flux: self.source.photon_flux_hz,
            counting_gate: self.source.counting_gate_ns * 1e-9,
            reference_plane: self.source.reference_plane,
        };
        source.validate()?;
        Ok(source)
    }

    /// The amplifier chain band-pass.
    pub fn amplifier_filter(&self) -> Result<FilterSpec> {
        FilterSpec::new(
            Some(self.filters.amplifier_high_pass_mhz * 1e6),
            Some(self.filters.amplifier_low_pass_ghz * 1e9),
        )
    }

    /// The scope's anti-noise low-pass.
    pub fn scope_filter(&self) -> Result<FilterSpec> {
        FilterSpec::new(None, Some(self.filters.scope_low_pass_mhz * 1e6))
    }

    pub fn gain_linear(&self) -> f64 {
        10f64.powf(self.filters.gain_db / 20.0)
    }

    pub fn noise_sigma_volts(&self) -> f64 {
        self.filters.noise_sigma_mv * 1e-3
    }

    pub fn dt_seconds(&self) -> f64 {
        self.simulation.dt_ps * 1e-12
    }

    pub fn duration_seconds(&self) -> f64 {
        self.simulation.duration_ns * 1e-9
    }

    /// Canonical TOML rendering of the resolved config (defaults included).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical rendering; stamped into every artifact.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_reference_device() {
        let config = parse_config("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        let model = config.selected_absorption_model().unwrap();
        assert!((model.total_absorptance() - 0.76).abs() < 0.005);
        let circuit = config.detector_circuit();
        assert_eq!(circuit.n_wires, 4);
        assert_eq!(circuit.shunt_resistance, 38.0);
    }

    #[test]
    fn unknown_keys_are_named_in_the_error() {
        let err = parse_config("[circuit]\nshuntt_resistance_ohm = 40.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("shuntt_resistance_ohm"), "{msg}");
    }

    #[test]
    fn partial_override_keeps_other_defaults() {
        let config = parse_config("[circuit]\nbias_current_ua = 9.3\n").unwrap();
        assert!((config.detector_circuit().bias_current - 9.3e-6).abs() < 1e-18);
        // everything else untouched
        assert_eq!(config.circuit.shunt_resistance_ohm, 38.0);
        assert_eq!(config.efficiency, EfficiencyBlock::default());
    }

    #[test]
    fn round_trip_preserves_the_config() {
        let mut config = ExperimentConfig::default();
        config.seed = 7;
        config.absorption.length_um = 45.0;
        config.source.mean_photons_per_pulse = 2.3;
        let text = config.to_toml();
        let reparsed = parse_config(&text).unwrap();
        assert_eq!(config, reparsed);
        assert_eq!(config.content_hash(), reparsed.content_hash());
    }

    #[test]
    fn invalid_physics_is_rejected_at_parse_time() {
        // bias above critical current
        let err = parse_config("[circuit]\nbias_current_ua = 11.0\n").unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
        // negative length
        assert!(parse_config("[absorption]\nlength_um = -1.0\n").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.seed = 43;
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash().len(), 16);
    }

    #[test]
    fn checked_in_default_file_matches_the_code_defaults() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../experiment.toml");
        let parsed = parse_config(&std::fs::read_to_string(path).unwrap()).unwrap();
        assert_eq!(parsed, ExperimentConfig::default());
        assert_eq!(ExperimentConfig::default().to_toml(), std::fs::read_to_string(path).unwrap());
    }

    #[test]
    fn config_defaults_agree_with_the_typed_defaults() {
        let from_config = ExperimentConfig::default().detector_circuit();
        let typed = DetectorCircuit::default();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1e-30);
        assert_eq!(from_config.n_wires, typed.n_wires);
        assert!(close(from_config.wire.kinetic_inductance, typed.wire.kinetic_inductance));
        assert!(close(from_config.wire.hotspot_duration, typed.wire.hotspot_duration));
        assert!(close(from_config.bias_current, typed.bias_current));
        assert_eq!(from_config.shunt_resistance, typed.shunt_resistance);
        let chain = ExperimentConfig::default().efficiency_chain();
        assert_eq!(chain, EfficiencyChain::default());
    }
}
