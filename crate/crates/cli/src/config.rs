//! TOML run configuration: the scenario keys at top level plus optional
//! `[tracker]` and `[metrics]` tables.

use std::path::Path;

use msms_core::metrics::OspaParams;
use msms_core::simulator::ScenarioConfig;
use msms_core::smoother::{BatchParams, RecursiveParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Factor initialization over all scans, then full-sampler refinement.
    #[default]
    Batch,
    /// Scan-by-scan smoothing while filtering.
    Recursive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackerConfig {
    pub mode: Mode,
    /// Smoothed estimates when true; filtered ones otherwise.
    pub smooth: bool,
    /// Components kept by the factor stage at each scan.
    pub factor_keep: usize,
    /// Batch: factor sweeps per kept component and scan.
    pub factor_iterations: usize,
    /// Recursive: factor sweeps per scan, split across components by weight.
    pub factor_budget: usize,
    /// Batch: factor components that seed full-sampler chains.
    pub chains: usize,
    /// Full sweeps per chain; recursive filtering ignores this.
    pub sweeps: usize,
    /// Components kept in the posterior.
    pub keep: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            mode: Mode::Batch,
            smooth: true,
            factor_keep: 100,
            factor_iterations: 10,
            factor_budget: 1000,
            chains: 100,
            sweeps: 10,
            keep: 100,
        }
    }
}

impl TrackerConfig {
    pub fn batch_params(&self) -> BatchParams {
        BatchParams {
            factor_keep: self.factor_keep,
            factor_iterations: self.factor_iterations,
            chains: self.chains,
            sweeps: self.sweeps,
            keep: self.keep,
        }
    }

    /// Recursive parameters; without smoothing the full stage is skipped,
    /// which gives the filter.
    pub fn recursive_params(&self) -> RecursiveParams {
        RecursiveParams {
            factor_budget: self.factor_budget,
            factor_keep: self.factor_keep,
            sweeps: if self.smooth { self.sweeps } else { 0 },
            keep: self.keep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub cutoff: f64,
    pub order: f64,
    pub window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let p = OspaParams::default();
        MetricsConfig {
            cutoff: p.cutoff,
            order: p.order,
            window: p.window,
        }
    }
}

impl MetricsConfig {
    pub fn params(&self) -> Result<OspaParams, CliError> {
        OspaParams::new(self.cutoff, self.order, self.window)
            .map_err(|e| CliError::Config(format!("metrics: {e}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub tracker: TrackerConfig,
    pub metrics: MetricsConfig,
}

/// Command-line overrides applied after parsing.
#[derive(Clone, Copy, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub scans: Option<usize>,
    pub sensors: Option<usize>,
}

fn section<T: serde::de::DeserializeOwned + Default>(
    table: &mut toml::Table,
    name: &str,
) -> Result<T, CliError> {
    match table.remove(name) {
        None => Ok(T::default()),
        Some(v) => v
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("[{name}]: {}", e.message()))),
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        let tracker = section(&mut table, "tracker")?;
        let metrics = section(&mut table, "metrics")?;
        let scenario: ScenarioConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        let cfg = Config {
            scenario,
            tracker,
            metrics,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Config::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate()?;
        if self.scenario.axes() != 3 {
            return Err(CliError::Config(
                "bounds: the file formats are three-dimensional, give three axes".into(),
            ));
        }
        self.metrics.params()?;
        Ok(())
    }

    /// Applies overrides. A shorter scan count drops scripted objects born
    /// later and ends the others at the new last scan; a larger sensor count
    /// repeats the last listed sensor.
    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        let sc = &mut self.scenario;
        if let Some(seed) = o.seed {
            sc.seed = seed;
        }
        if let Some(scans) = o.scans {
            if scans == 0 {
                return Err(CliError::Config("--scans must be at least 1".into()));
            }
            sc.scans = scans;
            sc.objects.retain(|ob| ob.birth_scan <= scans);
            for ob in &mut sc.objects {
                ob.last_scan = ob.last_scan.map(|t| t.min(scans));
            }
        }
        if let Some(sensors) = o.sensors {
            if sensors == 0 {
                return Err(CliError::Config("--sensors must be at least 1".into()));
            }
            let last = sc.sensors.last().cloned().ok_or_else(|| {
                CliError::Config("sensors: at least one sensor is required".into())
            })?;
            sc.sensors.resize(sensors, last);
        }
        self.validate()
    }
}
