//! Pipeline configuration loaded from JSON.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::baseline::GlmOptions;
use crate::error::{Error, Result};
use crate::ingest::{ColumnMap, CurationRules, ZeroFill};
use crate::lgm::{GridOptions, PriorSpec};
use crate::mesh::MeshOptions;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Session logs; each file gets its own date-order resolution.
    pub sessions: Vec<PathBuf>,
    pub stations: PathBuf,
    pub weather: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphOptions {
    pub k: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { k: 4 }
    }
}

/// Starting hyperparameters for the mode search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThetaInit {
    /// `[log τ_time, log τ_icar]`.
    pub icar: Vec<f64>,
    /// `[log τ_time, θ₁, θ₂]`; when absent, range = extent/5 and variance 1.
    pub spde: Option<Vec<f64>>,
}

impl Default for ThetaInit {
    fn default() -> Self {
        Self {
            icar: vec![4.0, 2.0],
            spde: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub level: f64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            resamples: 1000,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataPaths,
    pub columns: ColumnMap,
    pub curation: CurationRules,
    pub zero_fill: ZeroFill,
    /// First day of the test period.
    pub split_date: NaiveDate,
    pub mesh: MeshOptions,
    pub graph: GraphOptions,
    pub priors: PriorSpec,
    pub grid: GridOptions,
    pub glm: GlmOptions,
    /// Latent draws for DIC and WAIC.
    pub draws: usize,
    pub theta_init: ThetaInit,
    pub bootstrap: BootstrapOptions,
    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            data: DataPaths::default(),
            columns: ColumnMap::default(),
            curation: CurationRules::default(),
            zero_fill: ZeroFill::default(),
            split_date: NaiveDate::from_ymd_opt(2024, 10, 6).expect("valid date"),
            mesh: MeshOptions::default(),
            graph: GraphOptions::default(),
            priors: PriorSpec::default(),
            grid: GridOptions::default(),
            glm: GlmOptions::default(),
            draws: 1000,
            theta_init: ThetaInit::default(),
            bootstrap: BootstrapOptions::default(),
            seed: 42,
        }
    }
}

impl Config {
    /// Parses `path`; relative data paths are taken from the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: Config = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.sessions.iter_mut().for_each(join);
        join(&mut self.data.stations);
        join(&mut self.data.weather);
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.grid.validate()?;
        if self.graph.k == 0 {
            return Err(Error::invalid("graph.k must be at least 1"));
        }
        if self.draws < 30 {
            return Err(Error::invalid(format!("draws must be at least 30, got {}", self.draws)));
        }
        if self.theta_init.icar.len() != 2 {
            return Err(Error::invalid("theta_init.icar needs 2 values"));
        }
        if self.theta_init.spde.as_ref().is_some_and(|t| t.len() != 3) {
            return Err(Error::invalid("theta_init.spde needs 3 values"));
        }
        if self.bootstrap.resamples == 0 || !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(Error::invalid("bootstrap needs resamples >= 1 and a level in (0, 1)"));
        }
        if !(self.glm.ridge >= 0.0) || !(self.glm.tol > 0.0) || self.glm.max_iterations == 0 {
            return Err(Error::invalid("glm needs ridge >= 0, tol > 0 and max_iterations >= 1"));
        }
        if !(self.mesh.inner_edge > 0.0 && self.mesh.outer_edge > 0.0 && self.mesh.cutoff >= 0.0) {
            return Err(Error::invalid("mesh edges must be positive and cutoff non-negative"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.graph.k, 4);
        assert_eq!(c.split_date.to_string(), "2024-10-06");
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"sed": 1}"#).is_err());
        assert!(serde_json::from_str::<Config>(r#"{"graph": {"k": 3, "x": 1}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c: Config = serde_json::from_str(
            r#"{"data": {"sessions": ["a.csv", "/abs/b.csv"], "stations": "s.csv", "weather": "w.csv"}}"#,
        )
        .unwrap();
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.data.sessions, [PathBuf::from("/cfg/a.csv"), PathBuf::from("/abs/b.csv")]);
        assert_eq!(c.data.stations, PathBuf::from("/cfg/s.csv"));
    }
}
