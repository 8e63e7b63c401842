//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::bspower::{CoverageRadii, PowerTimingTable, SmState};
use crate::dccn::DccnConfig;
use crate::drl::dqn::DqnConfig;
use crate::drl::ppo::PpoConfig;
use crate::env::{EnvConfig, RewardParams, Scheme};
use crate::netmodel::{LinkParams, NetworkGeometry};
use crate::traffic::TrafficConfig;

/// Slot-loop settings that are not part of any physical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimBlock {
    pub slot_ms: f64,
    pub episode_len: u64,
    pub ris_element_power_w: f64,
    pub max_sleep_depth: SmState,
    pub user_count: Option<usize>,
}

impl Default for SimBlock {
    fn default() -> Self {
        let e = EnvConfig::default();
        Self {
            slot_ms: e.slot_ms,
            episode_len: e.episode_len,
            ris_element_power_w: e.ris_element_power_w,
            max_sleep_depth: e.max_sleep_depth,
            user_count: e.user_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerBlock {
    pub ppo: PpoConfig,
    pub dqn: DqnConfig,
    pub dccn: DccnConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scheme: Scheme,
    pub geometry: NetworkGeometry,
    pub link: LinkParams,
    pub power: PowerTimingTable,
    pub radii: CoverageRadii,
    pub traffic: TrafficConfig,
    pub reward: RewardParams,
    pub sim: SimBlock,
    pub learner: LearnerBlock,
    pub seeds: Vec<u64>,
    /// Evaluation length in slots.
    pub duration: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::PSZR,
            geometry: NetworkGeometry::default(),
            link: LinkParams::default(),
            power: PowerTimingTable::default(),
            radii: CoverageRadii::default(),
            traffic: TrafficConfig::default(),
            reward: RewardParams::default(),
            sim: SimBlock::default(),
            learner: LearnerBlock::default(),
            seeds: vec![1, 2, 3],
            duration: 2000,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> HarnessError {
    HarnessError::Invalid { field: field.into(), message: message.into() }
}

fn nested(block: &str, r: Result<(), (&'static str, String)>) -> Result<(), HarnessError> {
    r.map_err(|(f, m)| invalid(format!("{block}.{f}"), m))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.geometry.validate().map_err(|e| invalid("geometry", e.to_string()))?;
        nested("link", self.link.validate())?;
        self.power.validate().map_err(|e| invalid("power", e.to_string()))?;
        self.radii.validate().map_err(|e| invalid("radii", e))?;
        nested("traffic", self.traffic.validate())?;
        nested("reward", self.reward.validate())?;
        nested("learner.ppo", self.learner.ppo.validate())?;
        nested("learner.dqn", self.learner.dqn.validate())?;
        let d = &self.learner.dccn;
        for (f, v) in [
            ("hidden", d.hidden),
            ("train_channels", d.train_channels),
            ("capacity_epochs", d.capacity_epochs),
            ("phase_epochs", d.phase_epochs),
            ("batch", d.batch),
        ] {
            if v == 0 {
                return Err(invalid(format!("learner.dccn.{f}"), "must be >= 1"));
            }
        }
        if !(d.learning_rate > 0.0) {
            return Err(invalid("learner.dccn.learning_rate", "must be > 0"));
        }
        if !(self.sim.slot_ms > 0.0) {
            return Err(invalid("sim.slot_ms", format!("must be > 0, got {}", self.sim.slot_ms)));
        }
        if self.sim.episode_len == 0 {
            return Err(invalid("sim.episode_len", "must be >= 1"));
        }
        if !(self.sim.ris_element_power_w >= 0.0) {
            return Err(invalid("sim.ris_element_power_w", "must be >= 0"));
        }
        if self.sim.max_sleep_depth < SmState::Micro {
            return Err(invalid("sim.max_sleep_depth", "must be Micro, Light or Deep"));
        }
        if let Some(u) = self.sim.user_count {
            if u > self.geometry.num_users() {
                return Err(invalid("sim.user_count", format!("{u} exceeds the {} placed users", self.geometry.num_users())));
            }
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Environment settings for this experiment's scheme.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            scheme: self.scheme,
            geometry: self.geometry.clone(),
            link: self.link.clone(),
            table: self.power.clone(),
            radii: self.radii.clone(),
            traffic: self.traffic.clone(),
            reward: self.reward.clone(),
            slot_ms: self.sim.slot_ms,
            episode_len: self.sim.episode_len,
            ris_element_power_w: self.sim.ris_element_power_w,
            max_sleep_depth: self.sim.max_sleep_depth,
            user_count: self.sim.user_count,
        }
    }

    /// SHA-256 over the canonical JSON of everything except `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let text = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `output_dir`, placed under `$SLEEPNET_OUT` when that is set and the
    /// directory is relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

pub const OUTPUT_ROOT_VAR: &str = "SLEEPNET_OUT";

pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    ExperimentConfig::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.power.active_no_zoom_w, 6.9);
        assert_eq!(cfg.power.transition_ms, [0.071, 1.0, 10.0]);
        assert_eq!(cfg.link.quant_bits, 3);
        assert_eq!(cfg.geometry.ris_elements, 128);
        assert_eq!(cfg.learner.ppo.clip, 0.2);
        assert_eq!(cfg.learner.dccn.learning_rate, 0.001);
        assert_eq!(cfg.seeds, vec![1, 2, 3]);
    }

    #[test]
    fn negative_packet_size_names_the_field() {
        let err = ExperimentConfig::from_json(r#"{"traffic": {"packet_size": -1}}"#).unwrap_err();
        assert!(err.to_string().contains("traffic.packet_size"), "{err}");
    }

    #[test]
    fn unknown_scheme_lists_choices() {
        let err = ExperimentConfig::from_json(r#"{"scheme": "XYZ"}"#).unwrap_err().to_string();
        for s in ["AA", "PZ", "PS", "PSZ", "PSZR", "DSZR"] {
            assert!(err.contains(s), "{err}");
        }
    }

    #[test]
    fn other_field_paths() {
        let cases = [
            (r#"{"seeds": []}"#, "seeds"),
            (r#"{"link": {"noise_power": 0}}"#, "link.noise_power"),
            (r#"{"learner": {"ppo": {"clip": 1.5}}}"#, "learner.ppo.clip"),
            (r#"{"sim": {"user_count": 9}}"#, "sim.user_count"),
            (r#"{"power": {"idle_w": 9.0}}"#, "power"),
        ];
        for (doc, field) in cases {
            let err = ExperimentConfig::from_json(doc).unwrap_err().to_string();
            assert!(err.contains(field), "{doc}: {err}");
        }
        assert!(ExperimentConfig::from_json(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn round_trip_and_hash() {
        let mut cfg = ExperimentConfig { scheme: Scheme::DSZR, seeds: vec![4, 9], ..Default::default() };
        cfg.traffic.packet_size = 0.07;
        cfg.sim.user_count = Some(3);
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        let moved = ExperimentConfig { output_dir: "elsewhere".into(), ..cfg.clone() };
        assert_eq!(moved.hash(), cfg.hash());
        let changed = ExperimentConfig { duration: 10, ..cfg.clone() };
        assert_ne!(changed.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }
}
