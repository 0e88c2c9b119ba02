//! Scenario configuration file. Every physical quantity carries its unit in
//! the key name.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use fbl_relay::channel::{
    path_loss_snr, rho_from_doppler, DopplerGeometry, LinkIndex, LinkModel, RelayLinks,
};
use fbl_relay::fbl::FblParams;
use fbl_relay::quadrature::QuadratureSpec;
use fbl_relay::scheduler_constant::{ConstantSearchSpec, ReliabilityForm};
use fbl_relay::sim::Accounting;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    #[default]
    Optimal,
    Constant,
    FixedRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AccountingKind {
    #[default]
    BothPhases,
    SkipRelayOnFailure,
}

/// Reliability guarantee of the constant policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ReliabilityKind {
    /// Every frame meets the target.
    #[default]
    PerFrame,
    /// The long-run average error meets the target.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceKind {
    /// One frame with fixed outdated SNRs.
    #[default]
    Frame,
    /// Long-run average over the outdated SNRs.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationProfile {
    #[default]
    Quick,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirectSnr {
    pub avg_snr_backhaul_db: f64,
    pub avg_snr_relaying_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub distance_backhaul_m: f64,
    pub distance_relaying_m: f64,
    pub carrier_frequency_hz: f64,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            distance_backhaul_m: 100.0,
            distance_relaying_m: 100.0,
            carrier_frequency_hz: 2e9,
            tx_power_dbm: 35.0,
            noise_power_dbm: -90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Doppler {
    pub init_length_symbols: f64,
    pub doppler_backhaul_cycles_per_symbol: f64,
    pub doppler_relaying_cycles_per_symbol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Correlation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_sq_backhaul: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_sq_relaying: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doppler: Option<Doppler>,
}

impl Default for Correlation {
    fn default() -> Self {
        Correlation {
            rho_sq_backhaul: Some(0.7),
            rho_sq_relaying: Some(0.5),
            doppler: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurfaceConfig {
    pub kind: SurfaceKind,
    pub points_eta_1: usize,
    pub points_eta_2: usize,
    /// Outdated SNRs of the frame surface; the average SNRs when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outdated_snr_backhaul_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outdated_snr_relaying_db: Option<f64>,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        SurfaceConfig {
            kind: SurfaceKind::Frame,
            points_eta_1: 50,
            points_eta_2: 50,
            outdated_snr_backhaul_db: None,
            outdated_snr_relaying_db: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub snr_db: Vec<f64>,
    pub epsilon_th: Vec<f64>,
    /// (ρ₁², ρ₂²) settings; the scenario correlation when empty.
    pub rho_sq: Vec<[f64; 2]>,
    pub frames: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            snr_db: vec![5.0, 10.0, 15.0, 20.0, 25.0],
            epsilon_th: vec![0.5, 1e-2, 1e-3],
            rho_sq: Vec::new(),
            frames: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
    pub tail_cutoff_sigma: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        let q = QuadratureSpec::default();
        QuadratureConfig {
            rel_tol: q.rel_tol,
            abs_tol: q.abs_tol,
            max_subdivisions: q.max_subdivisions,
            tail_cutoff_sigma: q.tail_cutoff_sigma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSettings {
    pub profile: ValidationProfile,
    /// Check ids to run; all when empty.
    pub checks: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::blocklength")]
    pub blocklength_symbols: u32,
    #[serde(default = "defaults::epsilon")]
    pub epsilon_th: f64,
    #[serde(default)]
    pub policy: PolicyKind,
    /// Weights of the constant policy; optimized when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_eta: Option<[f64; 2]>,
    #[serde(default)]
    pub constant_reliability: ReliabilityKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_rate_bits_per_symbol: Option<f64>,
    #[serde(default = "defaults::frames")]
    pub frames: u64,
    #[serde(default)]
    pub accounting: AccountingKind,
    /// Accept ρ₁² < ρ₂².
    #[serde(default)]
    pub allow_unordered_correlation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<DirectSnr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<Geometry>,
    #[serde(default)]
    pub correlation: Correlation,
    #[serde(default)]
    pub surface: SurfaceConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub validation: ValidationSettings,
}

mod defaults {
    pub fn seed() -> u64 {
        1
    }
    pub fn blocklength() -> u32 {
        300
    }
    pub fn epsilon() -> f64 {
        1e-2
    }
    pub fn frames() -> u64 {
        100_000
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: defaults::seed(),
            blocklength_symbols: defaults::blocklength(),
            epsilon_th: defaults::epsilon(),
            policy: PolicyKind::default(),
            constant_eta: None,
            constant_reliability: ReliabilityKind::default(),
            fixed_rate_bits_per_symbol: None,
            frames: defaults::frames(),
            accounting: AccountingKind::default(),
            allow_unordered_correlation: false,
            output_path: None,
            snr: None,
            geometry: Some(Geometry::default()),
            correlation: Correlation::default(),
            surface: SurfaceConfig::default(),
            sweep: SweepConfig::default(),
            quadrature: QuadratureConfig::default(),
            validation: ValidationSettings::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Structural checks that do not need the numerical model.
    pub fn check(&self) -> Result<(), CliError> {
        match (&self.snr, &self.geometry) {
            (Some(_), Some(_)) => {
                return Err(CliError::usage("give either [snr] or [geometry], not both"))
            }
            (None, None) => return Err(CliError::usage("one of [snr] or [geometry] is required")),
            _ => {}
        }
        let c = &self.correlation;
        match (c.rho_sq_backhaul, c.rho_sq_relaying, &c.doppler) {
            (Some(_), Some(_), None) | (None, None, Some(_)) => {}
            _ => {
                return Err(CliError::usage(
                    "[correlation] needs both rho_sq_backhaul and rho_sq_relaying, or a [correlation.doppler] table",
                ))
            }
        }
        if self.surface.points_eta_1 < 2 || self.surface.points_eta_2 < 2 {
            return Err(CliError::usage(
                "surface grids need at least 2 points per axis",
            ));
        }
        Ok(())
    }

    /// Canonical TOML text, hashed for provenance. The output path does not
    /// affect results and is left out.
    pub fn canonical(&self) -> String {
        let cfg = ScenarioConfig {
            output_path: None,
            ..self.clone()
        };
        toml::to_string(&cfg).expect("configuration serializes")
    }

    pub fn params(&self) -> Result<FblParams, CliError> {
        Ok(FblParams::new(self.blocklength_symbols, self.epsilon_th)?)
    }

    pub fn params_with(&self, epsilon_th: f64) -> Result<FblParams, CliError> {
        Ok(FblParams::new(self.blocklength_symbols, epsilon_th)?)
    }

    /// Quadrature settings exactly as configured, without range checks.
    pub fn qspec(&self) -> QuadratureSpec {
        let q = &self.quadrature;
        QuadratureSpec {
            rel_tol: q.rel_tol,
            abs_tol: q.abs_tol,
            max_subdivisions: q.max_subdivisions,
            tail_cutoff_sigma: q.tail_cutoff_sigma,
        }
    }

    pub fn constant_search(&self) -> ConstantSearchSpec {
        let reliability = match self.constant_reliability {
            ReliabilityKind::PerFrame => ReliabilityForm::PerFrame,
            ReliabilityKind::Averaged => ReliabilityForm::Averaged,
        };
        ConstantSearchSpec {
            reliability,
            ..ConstantSearchSpec::default()
        }
    }

    pub fn accounting(&self) -> Accounting {
        match self.accounting {
            AccountingKind::BothPhases => Accounting::BothPhases,
            AccountingKind::SkipRelayOnFailure => Accounting::SkipRelayOnFailure,
        }
    }

    /// Linear average SNRs of (backhaul, relaying).
    pub fn avg_snr(&self) -> Result<(f64, f64), CliError> {
        if let Some(s) = &self.snr {
            return Ok((
                db_to_linear(s.avg_snr_backhaul_db),
                db_to_linear(s.avg_snr_relaying_db),
            ));
        }
        let g = self
            .geometry
            .as_ref()
            .ok_or_else(|| CliError::usage("no link SNR configured"))?;
        let at = |d| path_loss_snr(d, g.carrier_frequency_hz, g.tx_power_dbm, g.noise_power_dbm);
        Ok((at(g.distance_backhaul_m)?, at(g.distance_relaying_m)?))
    }

    /// (ρ₁², ρ₂²) from the direct values or the Doppler model.
    pub fn rho_sq(&self) -> Result<(f64, f64), CliError> {
        let c = &self.correlation;
        if let Some(d) = &c.doppler {
            let (r1, r2) = rho_from_doppler(&DopplerGeometry {
                init_length: d.init_length_symbols,
                blocklength: self.blocklength_symbols as f64,
                doppler_sr: d.doppler_backhaul_cycles_per_symbol,
                doppler_rd: d.doppler_relaying_cycles_per_symbol,
            })?;
            return Ok((r1 * r1, r2 * r2));
        }
        match (c.rho_sq_backhaul, c.rho_sq_relaying) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(CliError::usage("no correlation configured")),
        }
    }

    pub fn links(&self) -> Result<RelayLinks, CliError> {
        let (a1, a2) = self.avg_snr()?;
        self.links_with(a1, a2, self.rho_sq()?)
    }

    pub fn links_with(
        &self,
        avg_1: f64,
        avg_2: f64,
        rho_sq: (f64, f64),
    ) -> Result<RelayLinks, CliError> {
        let backhaul = LinkModel::from_rho_sq(avg_1, rho_sq.0, LinkIndex::Backhaul)?;
        let relaying = LinkModel::from_rho_sq(avg_2, rho_sq.1, LinkIndex::Relaying)?;
        if self.allow_unordered_correlation {
            Ok(RelayLinks::new_unordered(backhaul, relaying))
        } else {
            RelayLinks::new(backhaul, relaying).map_err(|e| {
                CliError::Usage(format!(
                    "{e}; set allow_unordered_correlation = true to accept it"
                ))
            })
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_the_reference_operating_point() {
        let cfg = ScenarioConfig::default();
        cfg.check().unwrap();
        let (a1, a2) = cfg.avg_snr().unwrap();
        assert!((a1 - 177.05).abs() < 0.05 && a1 == a2);
        assert_eq!(cfg.rho_sq().unwrap(), (0.7, 0.5));
        // Round trip through the canonical text.
        assert_eq!(ScenarioConfig::parse(&cfg.canonical()).unwrap(), cfg);
        let routed = ScenarioConfig {
            output_path: Some("x.csv".into()),
            ..cfg.clone()
        };
        assert_eq!(routed.canonical(), cfg.canonical());
    }

    #[test]
    fn exactly_one_snr_source() {
        let both = "[snr]\navg_snr_backhaul_db = 10\navg_snr_relaying_db = 10\n[geometry]\ndistance_backhaul_m = 100\ndistance_relaying_m = 100\ncarrier_frequency_hz = 2e9\ntx_power_dbm = 35\nnoise_power_dbm = -90\n";
        assert!(ScenarioConfig::parse(both).is_err());
        assert!(ScenarioConfig::parse("seed = 3\n").is_err());
        let direct =
            ScenarioConfig::parse("[snr]\navg_snr_backhaul_db = 10\navg_snr_relaying_db = 20\n")
                .unwrap();
        let (a1, a2) = direct.avg_snr().unwrap();
        assert!((a1 - 10.0).abs() < 1e-12 && (a2 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn unknown_keys_and_missing_units_are_rejected() {
        assert!(ScenarioConfig::parse("[snr]\nbackhaul = 10\nrelaying = 10\n").is_err());
    }

    #[test]
    fn correlation_ordering_override() {
        let text = "[snr]\navg_snr_backhaul_db = 10\navg_snr_relaying_db = 10\n[correlation]\nrho_sq_backhaul = 0.4\nrho_sq_relaying = 0.6\n";
        let cfg = ScenarioConfig::parse(text).unwrap();
        assert!(cfg.links().is_err());
        let cfg =
            ScenarioConfig::parse(&format!("allow_unordered_correlation = true\n{text}")).unwrap();
        let l = cfg.links().unwrap();
        assert_eq!(l.backhaul.rho_sq(), 0.4);
    }

    #[test]
    fn doppler_correlation() {
        let text = "[snr]\navg_snr_backhaul_db = 10\navg_snr_relaying_db = 10\n[correlation.doppler]\ninit_length_symbols = 1000\ndoppler_backhaul_cycles_per_symbol = 1e-4\ndoppler_relaying_cycles_per_symbol = 1e-4\n";
        let cfg = ScenarioConfig::parse(text).unwrap();
        let (r1, r2) = cfg.rho_sq().unwrap();
        assert!(r1 > r2 && r2 > 0.0 && r1 < 1.0);
        let mixed = text.replace(
            "[correlation.doppler]",
            "[correlation]\nrho_sq_backhaul = 0.5\n[correlation.doppler]",
        );
        assert!(ScenarioConfig::parse(&mixed).is_err());
    }
}
