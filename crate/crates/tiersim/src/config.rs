//! Run configuration: a TOML file with built-in defaults that reproduce the
//! reference timing and bias tables, plus flag overrides (flags win).
//!
//! Every section and field is optional; omitted fields keep their defaults.
//! Timing rows are keyed `unit_segment_op` (for example `pcm_near_read`) and
//! bias entries `segment_op` in millivolts.

use crate::controller::ControllerConfig;
use crate::geometry::{CellOp, MemOp, MemoryGeometry, Segment, Tables, TimingEntry, UnitKind};
use crate::policy::{PolicyKind, PolicyParams};
use crate::predictor::PredictorConfig;
use crate::reliability::{AgingConstants, EnergyTable};
use crate::sim::SimParams;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub dram_enabled: bool,
    pub pcm_enabled: bool,
    pub dram: MemoryGeometry,
    pub pcm: MemoryGeometry,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            dram_enabled: true,
            pcm_enabled: true,
            dram: MemoryGeometry::dram_default(),
            pcm: MemoryGeometry::pcm_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliabilityConfig {
    pub g0: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    pub cell_endurance: u64,
}

impl Default for ReliabilityConfig {
    fn default() -> Self {
        let c = AgingConstants::default();
        ReliabilityConfig { g0: c.g0, a: c.a, b: c.b, beta: c.beta, cell_endurance: 10_000_000 }
    }
}

/// Human-readable form of the timing/bias tables; converted to [`Tables`]
/// after validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TablesConfig {
    pub timing: BTreeMap<String, TimingEntry>,
    pub bias_mv: BTreeMap<String, u32>,
}

impl Default for TablesConfig {
    fn default() -> Self {
        Self::from_tables(&Tables::default())
    }
}

impl TablesConfig {
    pub fn from_tables(tables: &Tables) -> Self {
        let mut timing = BTreeMap::new();
        for unit in UnitKind::ALL {
            for segment in Segment::ALL {
                for op in MemOp::ALL {
                    timing.insert(
                        format!("{}_{}_{}", unit.name(), segment.name(), op.name()),
                        tables.timing.lookup(unit, segment, op),
                    );
                }
            }
        }
        let mut bias_mv = BTreeMap::new();
        for segment in Segment::ALL {
            for op in CellOp::ALL {
                bias_mv.insert(
                    format!("{}_{}", segment.name(), op.name()),
                    tables.bias.lookup_mv(segment, op),
                );
            }
        }
        TablesConfig { timing, bias_mv }
    }

    pub fn to_tables(&self) -> Result<Tables, ConfigError> {
        let mut tables = Tables::default();
        for (key, entry) in &self.timing {
            let mut found = false;
            for unit in UnitKind::ALL {
                for segment in Segment::ALL {
                    for op in MemOp::ALL {
                        if key == &format!("{}_{}_{}", unit.name(), segment.name(), op.name()) {
                            tables.timing.set(unit, segment, op, *entry);
                            found = true;
                        }
                    }
                }
            }
            if !found {
                return Err(ConfigError::Invalid(format!("unknown timing key {key:?}")));
            }
        }
        for (key, mv) in &self.bias_mv {
            let mut found = false;
            for segment in Segment::ALL {
                for op in CellOp::ALL {
                    if key == &format!("{}_{}", segment.name(), op.name()) {
                        tables.bias.set_mv(segment, op, *mv);
                        found = true;
                    }
                }
            }
            if !found {
                return Err(ConfigError::Invalid(format!("unknown bias key {key:?}")));
            }
        }
        tables.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(tables)
    }
}

/// Energy per access in picojoules, keyed `unit_segment_op`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    pub per_access_pj: BTreeMap<String, f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        let table = EnergyTable::default();
        let mut per_access_pj = BTreeMap::new();
        for unit in UnitKind::ALL {
            for segment in Segment::ALL {
                for op in MemOp::ALL {
                    per_access_pj.insert(
                        format!("{}_{}_{}", unit.name(), segment.name(), op.name()),
                        table.get_pj(unit, segment, op),
                    );
                }
            }
        }
        EnergyConfig { per_access_pj }
    }
}

impl EnergyConfig {
    pub fn to_table(&self) -> Result<EnergyTable, ConfigError> {
        let mut table = EnergyTable::default();
        for (key, pj) in &self.per_access_pj {
            let mut found = false;
            for unit in UnitKind::ALL {
                for segment in Segment::ALL {
                    for op in MemOp::ALL {
                        if key == &format!("{}_{}_{}", unit.name(), segment.name(), op.name()) {
                            table.set_pj(unit, segment, op, *pj);
                            found = true;
                        }
                    }
                }
            }
            if !found {
                return Err(ConfigError::Invalid(format!("unknown energy key {key:?}")));
            }
            if *pj < 0.0 {
                return Err(ConfigError::Invalid(format!("negative energy for {key:?}")));
            }
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub phase_length: u64,
    pub seed: u64,
    pub max_outstanding: usize,
    pub geometry: GeometryConfig,
    pub tables: TablesConfig,
    pub predictor: PredictorConfig,
    pub thresholds: PolicyParams,
    pub controller: ControllerConfig,
    pub energy: EnergyConfig,
    pub reliability: ReliabilityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            policy: PolicyKind::Mneme,
            phase_length: 100_000_000,
            seed: 1,
            max_outstanding: 16,
            geometry: GeometryConfig::default(),
            tables: TablesConfig::default(),
            predictor: PredictorConfig::default(),
            thresholds: PolicyParams::default(),
            controller: ControllerConfig::default(),
            energy: EnergyConfig::default(),
            reliability: ReliabilityConfig::default(),
        }
    }
}

/// Flag-level overrides; flags win over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub phase_length: Option<u64>,
    pub seed: Option<u64>,
    pub max_outstanding: Option<usize>,
    pub hot_threshold: Option<u32>,
    pub cold_threshold: Option<u32>,
    pub promotion_threshold: Option<u32>,
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(p) = o.policy {
            self.policy = p;
        }
        if let Some(v) = o.phase_length {
            self.phase_length = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.max_outstanding {
            self.max_outstanding = v;
        }
        if let Some(v) = o.hot_threshold {
            self.thresholds.hot_threshold = v;
        }
        if let Some(v) = o.cold_threshold {
            self.thresholds.cold_threshold = v;
        }
        if let Some(v) = o.promotion_threshold {
            self.predictor.promotion_threshold = v;
        }
    }

    /// Resolves to engine parameters, validating geometry, tables, and the
    /// policy/unit combination up front.
    pub fn to_sim_params(&self) -> Result<SimParams, ConfigError> {
        let tables = self.tables.to_tables()?;
        let energy = self.energy.to_table()?;
        let params = SimParams {
            policy: self.policy,
            phase_length: self.phase_length,
            seed: self.seed,
            max_outstanding: self.max_outstanding,
            controller: self.controller,
            policy_params: self.thresholds,
            predictor: self.predictor,
            dram_geom: self.geometry.dram_enabled.then(|| self.geometry.dram.clone()),
            pcm_geom: self.geometry.pcm_enabled.then(|| self.geometry.pcm.clone()),
            tables,
            energy,
            aging: AgingConstants {
                g0: self.reliability.g0,
                a: self.reliability.a,
                b: self.reliability.b,
                beta: self.reliability.beta,
            },
            cell_endurance: self.reliability.cell_endurance,
            config_echo: serde_json::to_value(self)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        params.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_resolves() {
        let cfg = RunConfig::default();
        let params = cfg.to_sim_params().unwrap();
        assert_eq!(params.policy, PolicyKind::Mneme);
        assert_eq!(params.phase_length, 100_000_000);
        assert!(params.config_echo.pointer("/geometry/pcm/near_rows").is_some());
        assert!(params.config_echo.pointer("/tables/timing/pcm_near_read").is_some());
    }

    #[test]
    fn toml_roundtrip_preserves_config() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults() {
        let cfg: RunConfig = toml::from_str(
            r#"
            policy = "baseline"
            seed = 7
            [thresholds]
            hot_threshold = 10
            "#,
        )
        .unwrap();
        assert_eq!(cfg.policy, PolicyKind::Baseline);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.thresholds.hot_threshold, 10);
        assert_eq!(cfg.thresholds.cold_threshold, 0);
        assert_eq!(cfg.phase_length, 100_000_000);
        assert_eq!(cfg.geometry.pcm.near_rows, 512);
    }

    #[test]
    fn timing_override_by_key() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [tables.timing.pcm_near_read]
            trcd_ps = 4000
            tcl_ps = 22000
            tbl_ps = 15000
            trp_ps = 0
            trc_ps = 41000
            "#,
        )
        .unwrap();
        let tables = cfg.tables.to_tables().unwrap();
        assert_eq!(tables.timing.lookup(UnitKind::Pcm, Segment::Near, MemOp::Read).trcd_ps, 4000);
        // Other rows keep their defaults.
        assert_eq!(tables.timing.lookup(UnitKind::Pcm, Segment::Far, MemOp::Read).trc_ps, 56_250);
    }

    #[test]
    fn bad_timing_sum_rejected() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [tables.timing.pcm_near_read]
            trcd_ps = 4000
            tcl_ps = 22000
            tbl_ps = 15000
            trp_ps = 0
            trc_ps = 99999
            "#,
        )
        .unwrap();
        assert!(matches!(cfg.tables.to_tables(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn unknown_table_key_rejected() {
        let cfg: RunConfig = toml::from_str(
            r#"
            [tables.bias_mv]
            sideways_read = 1200
            "#,
        )
        .unwrap();
        assert!(matches!(cfg.tables.to_tables(), Err(ConfigError::Invalid(_))));
    }

    #[test]
    fn tldram_without_dram_rejected() {
        let cfg: RunConfig = toml::from_str(
            r#"
            policy = "tldram"
            [geometry]
            dram_enabled = false
            "#,
        )
        .unwrap();
        assert!(cfg.to_sim_params().is_err());
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            policy: Some(PolicyKind::Nimble),
            seed: Some(99),
            hot_threshold: Some(5),
            ..Default::default()
        });
        assert_eq!(cfg.policy, PolicyKind::Nimble);
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.thresholds.hot_threshold, 5);
    }
}
