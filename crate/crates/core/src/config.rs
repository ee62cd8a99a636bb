//! TOML run configuration mirroring [`crate::harness::RunConfig`], plus the
//! training-section knobs. Every field is optional; CLI flags override file
//! values, and anything left unset falls back to the built-in defaults.

use std::path::Path;

use serde::Deserialize;

use crate::grid::{load_map, ObservationNoise, TransitionNoise};
use crate::harness::{HarnessError, RewardConfig, RunConfig};
use crate::risk::{PrimalMode, RiskConfig};
use crate::sac::SacHyper;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub map: Option<String>,
    pub planner: Option<String>,
    pub episodes: Option<usize>,
    pub seed: Option<u64>,
    pub randomize: Option<bool>,
    pub min_separation: Option<usize>,
    pub particles: Option<usize>,
    pub step_cap: Option<u32>,
    /// Forward-motion probability; drift splits the remainder evenly.
    pub transition_forward: Option<f64>,
    /// Center mass of the ambient pose-observation kernel.
    pub observation_center: Option<f64>,
    /// Center mass of the localize-observation kernel (1.0 = noiseless).
    pub localize_center: Option<f64>,
    pub rewards: Option<RewardConfig>,
    pub risk: Option<RiskConfig>,
    pub sac: Option<SacHyper>,
    pub train: Option<TrainSection>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub episodes: Option<usize>,
    pub constrained: Option<bool>,
    pub dual_window: Option<usize>,
    pub primal: Option<PrimalMode>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }

    /// Builds a [`RunConfig`] from the file values; the map is mandatory
    /// (from the file or the separately supplied path).
    pub fn to_run_config(&self, map_path: Option<&Path>) -> Result<RunConfig, HarnessError> {
        let path = match (map_path, &self.map) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.into(),
            (None, None) => {
                return Err(HarnessError::Config(
                    "no map given (use --map or the `map` config key)".into(),
                ))
            }
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let map = load_map(&text)?;

        let mut cfg = RunConfig::new(map);
        if let Some(f) = self.transition_forward {
            cfg.transition = TransitionNoise::with_forward(f)?;
        }
        if let Some(c) = self.observation_center {
            cfg.observation = ObservationNoise::peaked(c)?;
        }
        if let Some(c) = self.localize_center {
            cfg.localize_observation = ObservationNoise::peaked(c)?;
        }
        if let Some(r) = self.rewards {
            cfg.rewards = r;
        }
        if let Some(mut risk) = self.risk {
            // Keep the map-derived horizon unless the file pins one.
            if risk.horizon == RiskConfig::default().horizon {
                risk.horizon = cfg.map.default_step_cap();
            }
            cfg.risk = risk;
        }
        if let Some(e) = self.episodes {
            cfg.episodes = e;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(r) = self.randomize {
            cfg.randomize_endpoints = r;
        }
        if let Some(m) = self.min_separation {
            cfg.min_separation = m;
        }
        if let Some(p) = self.particles {
            cfg.particles = p;
        }
        if self.step_cap.is_some() {
            cfg.step_cap = self.step_cap;
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn parses_partial_tables_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let map_path = dir.path().join("m.map");
        std::fs::File::create(&map_path)
            .unwrap()
            .write_all(b"S...G\n")
            .unwrap();
        let cfg_path = dir.path().join("c.toml");
        std::fs::File::create(&cfg_path)
            .unwrap()
            .write_all(
                format!(
                    "map = {:?}\nseed = 9\ntransition_forward = 0.7\n[risk]\nc_hat = 0.2\n",
                    map_path.to_str().unwrap()
                )
                .as_bytes(),
            )
            .unwrap();
        let file = FileConfig::load(&cfg_path).unwrap();
        let run = file.to_run_config(None).unwrap();
        assert_eq!(run.seed, 9);
        assert!((run.transition.p_forward - 0.7).abs() < 1e-12);
        assert!((run.transition.p_left - 0.15).abs() < 1e-12);
        assert_eq!(run.risk.c_hat, 0.2);
        // Unset risk fields fall back to defaults; horizon follows the map.
        assert_eq!(run.risk.gamma, 0.9);
        assert_eq!(run.risk.horizon, run.map.default_step_cap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("c.toml");
        std::fs::File::create(&cfg_path)
            .unwrap()
            .write_all(b"planer = \"static:2\"\n")
            .unwrap();
        assert!(FileConfig::load(&cfg_path).is_err());
    }
}
