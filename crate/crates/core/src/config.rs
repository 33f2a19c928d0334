//! Experiment configuration file.
//!
//! A TOML document with one table per module. Keys listed in
//! [`REQUIRED_KEYS`] must be present; everything else falls back to the
//! defaults and is reported by [`LoadedConfig::defaulted`].

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::{EvalEpoch, SpsParams};
use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::nsga2::GaConfig;
use crate::scenario::ScenarioConfig;
use crate::sim::{PhaseMode, SimConfig};

pub const REQUIRED_SECTIONS: &[&str] = &["scenario", "channel", "sps", "ga", "sweep", "experiment"];

pub const REQUIRED_KEYS: &[&str] = &[
    "scenario.num_lanes",
    "scenario.coverage_range",
    "sps.rri",
    "sps.numerology",
    "sps.num_subchannels",
    "sps.window_bounds",
    "ga.population_size",
    "ga.max_generations",
    "sweep.avg_speeds",
    "experiment.baseline_window",
];

/// Table written by the CLI next to every output and ignored on load, so a
/// manifest can be used as a config.
pub const MANIFEST_TABLE: &str = "manifest";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Average speeds (m/s) at which the windows are optimised.
    pub avg_speeds: Vec<f64>,
    pub epoch: EvalEpoch,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            avg_speeds: vec![23.0, 24.0, 25.0, 26.0, 27.0],
            epoch: EvalEpoch::MidPass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    /// Window every vehicle uses under the standard scheme.
    pub baseline_window: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Length of the reference run for GD/IGD, in multiples of
    /// `ga.max_generations`.
    pub reference_run_factor: usize,
    /// Hypervolume reference point = per-objective max of the initial
    /// population times this factor.
    pub hv_reference_factor: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            baseline_window: 20,
            seed: 2024,
            output_dir: PathBuf::from("out"),
            reference_run_factor: 5,
            hv_reference_factor: 1.1,
        }
    }
}

/// One small network checked against the closed-form model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleCase {
    pub num_vehicles: usize,
    pub num_subchannels: u32,
    /// One window per vehicle, or a single shared value.
    pub windows: Vec<u32>,
    #[serde(default = "redrawn")]
    pub phase: PhaseMode,
}

fn redrawn() -> PhaseMode {
    PhaseMode::Redrawn
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    /// Transmissions of the observed vehicle per case.
    pub num_events: u64,
    pub collision_rel_tol: f64,
    pub collision_abs_tol: f64,
    pub prr_abs_tol: f64,
    pub cases: Vec<OracleCase>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let case = |n, n_sc, w| OracleCase {
            num_vehicles: n,
            num_subchannels: n_sc,
            windows: vec![w],
            phase: PhaseMode::Redrawn,
        };
        Self {
            num_events: 100_000,
            collision_rel_tol: 0.15,
            collision_abs_tol: 0.005,
            prr_abs_tol: 0.02,
            cases: vec![case(2, 1, 0), case(3, 2, 4), case(4, 4, 9)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub channel: ChannelParams,
    pub sps: SpsParams,
    pub ga: GaConfig,
    pub sweep: SweepConfig,
    pub experiment: ExperimentSettings,
    pub sim: SimConfig,
    pub oracle: OracleConfig,
}

/// A validated config plus the keys that were filled from defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub defaulted: Vec<String>,
}

fn lookup<'a>(table: &'a toml::Table, dotted: &str) -> Option<&'a toml::Value> {
    let mut parts = dotted.split('.');
    let mut value = table.get(parts.next()?)?;
    for part in parts {
        value = value.as_table()?.get(part)?;
    }
    Some(value)
}

fn leaf_keys(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                // Tagged enums are one logical key.
                if matches!(v, toml::Value::Table(inner) if inner.contains_key("kind")) {
                    out.push(key);
                } else {
                    leaf_keys(&key, v, out);
                }
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<LoadedConfig> {
        let mut raw: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        raw.remove(MANIFEST_TABLE);
        for section in REQUIRED_SECTIONS {
            if !raw.contains_key(*section) {
                return Err(Error::MissingKey((*section).to_string()));
            }
        }
        for key in REQUIRED_KEYS {
            if lookup(&raw, key).is_none() {
                return Err(Error::MissingKey((*key).to_string()));
            }
        }
        let config: ExperimentConfig = toml::Value::Table(raw.clone())
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        config.validate()?;

        let defaults = toml::Value::try_from(ExperimentConfig::default())
            .map_err(|e| Error::Internal(e.to_string()))?;
        let mut keys = Vec::new();
        leaf_keys("", &defaults, &mut keys);
        let defaulted = keys
            .into_iter()
            .filter(|k| lookup(&raw, k).is_none())
            .collect();
        Ok(LoadedConfig { config, defaulted })
    }

    pub fn load(path: &Path) -> Result<LoadedConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.channel.validate()?;
        self.sps.validate()?;
        self.ga.validate()?;
        self.sim.validate(&self.sps)?;
        if self.sweep.avg_speeds.is_empty() {
            return Err(Error::invalid(
                "sweep.avg_speeds",
                "needs at least one speed",
            ));
        }
        for &v in &self.sweep.avg_speeds {
            if v < self.scenario.speed_min || v > self.scenario.speed_max {
                return Err(Error::invalid(
                    "sweep.avg_speeds",
                    format!(
                        "{v} outside [{}, {}]",
                        self.scenario.speed_min, self.scenario.speed_max
                    ),
                ));
            }
            self.scenario.lane_speeds_around(v)?;
        }
        self.sweep
            .epoch
            .time(self.scenario.speed_min, self.scenario.coverage_range)
            .map_err(|e| Error::invalid("sweep.epoch", e.to_string()))?;
        let w = self.experiment.baseline_window;
        if !self.sps.window_in_bounds(w) {
            let [lo, hi] = self.sps.window_bounds;
            return Err(Error::invalid(
                "experiment.baseline_window",
                format!("{w} outside [{lo}, {hi}]"),
            ));
        }
        if self.experiment.reference_run_factor == 0 {
            return Err(Error::invalid(
                "experiment.reference_run_factor",
                "must be at least 1",
            ));
        }
        if !(self.experiment.hv_reference_factor >= 1.0) {
            return Err(Error::invalid(
                "experiment.hv_reference_factor",
                "must be at least 1",
            ));
        }
        self.validate_oracle()
    }

    fn validate_oracle(&self) -> Result<()> {
        let o = &self.oracle;
        if o.num_events < 1_000 {
            return Err(Error::invalid("oracle.num_events", "must be at least 1000"));
        }
        for (key, v) in [
            ("oracle.collision_rel_tol", o.collision_rel_tol),
            ("oracle.collision_abs_tol", o.collision_abs_tol),
            ("oracle.prr_abs_tol", o.prr_abs_tol),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(key, "must be non-negative"));
            }
        }
        for case in &o.cases {
            let sps = SpsParams {
                num_subchannels: case.num_subchannels,
                ..self.sps.clone()
            };
            let sim = SimConfig {
                num_vehicles: case.num_vehicles,
                windows: case.windows.clone(),
                ..self.sim.clone()
            };
            sim.validate(&sps)
                .map_err(|e| Error::invalid("oracle.cases", e.to_string()))?;
        }
        Ok(())
    }
}
