//! Experiment plumbing: configuration, training runs, checkpoints and
//! manifests, evaluation rollouts, sweeps and CSV output.

pub mod config;
pub mod selftest;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{load_config, resolve_output, ExperimentConfig, OUTPUT_ROOT_VAR};

use crate::bspower::Energy;
use crate::dccn::{self, Dccn, DccnConfig, DccnError, FeatureScales};
use crate::drl::dqn::{train_dqn, DqnController};
use crate::drl::ppo::{train_ppo, PolicyHeads, PpoController};
use crate::drl::{episode_seed, make_curve, AlwaysActive, Controller, CurvePoint, DrlError};
use crate::env::{EnvError, Learner, MdpAction, NetworkEnv, RisMode, Scheme};
use crate::netmodel::{ChannelRealization, LinkParams, NetworkGeometry};
use crate::neural::{DenseNet, NeuralError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {field}: {message}")]
    Invalid { field: String, message: String },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("manifest mismatch: {0}")]
    Manifest(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Drl(#[from] DrlError),
    #[error(transparent)]
    Dccn(#[from] DccnError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

/// Evaluation episode seeds live in the upper half of the seed space so they
/// never coincide with training episodes.
pub fn eval_seed(seed: u64, k: u64) -> u64 {
    (1 << 63) | (seed.wrapping_mul(1_000_003).wrapping_add(k) & !(1 << 63))
}

fn dccn_seed(seed: u64) -> u64 {
    seed ^ 0xdcc0_dcc0
}

/// The decision rule used for evaluation.
#[derive(Debug, Clone)]
pub enum Policy {
    AlwaysActive,
    Ppo(PpoController),
    Dqn(DqnController),
}

impl Controller for Policy {
    fn act(&mut self, env: &NetworkEnv) -> Result<MdpAction, DrlError> {
        match self {
            Policy::AlwaysActive => AlwaysActive.act(env),
            Policy::Ppo(c) => c.act(env),
            Policy::Dqn(c) => c.act(env),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub scheme: Scheme,
    pub seed: u64,
    pub policy: Policy,
    pub dccn: Option<Arc<Dccn>>,
    /// Mean finished-episode return per training iteration.
    pub curve: Vec<f64>,
}

impl TrainedModel {
    pub fn curve_points(&self, window: usize) -> Vec<CurvePoint> {
        make_curve(&self.curve, window)
    }

    pub fn ris_mode(&self) -> RisMode {
        match &self.dccn {
            Some(d) => RisMode::Learned(d.clone()),
            None => RisMode::Disabled,
        }
    }
}

/// Trains the cascaded phase optimizer used by RIS schemes.
pub fn train_ris(geometry: &NetworkGeometry, link: &LinkParams, cfg: &DccnConfig, seed: u64) -> Result<Dccn, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(dccn_seed(seed));
    let assoc = dccn::nearest_bs_association(geometry);
    Ok(dccn::train_dccn(geometry, link, assoc, cfg, &mut rng)?)
}

/// Trains the scheme's learner for one seed. RIS schemes train (or reuse)
/// a phase optimizer first.
pub fn train_model(cfg: &ExperimentConfig, seed: u64, ris: Option<Arc<Dccn>>) -> Result<TrainedModel, HarnessError> {
    let scheme = cfg.scheme;
    let dccn = if scheme.ris_enabled() {
        Some(match ris {
            Some(d) => d,
            None => Arc::new(train_ris(&cfg.geometry, &cfg.link, &cfg.learner.dccn, seed)?),
        })
    } else {
        None
    };
    let ris_mode = dccn.clone().map_or(RisMode::Disabled, RisMode::Learned);
    let mut env = NetworkEnv::new(Arc::new(cfg.env_config()), ris_mode, episode_seed(seed, 0))?;
    let (policy, curve) = match scheme.learner() {
        Learner::None => (Policy::AlwaysActive, Vec::new()),
        Learner::Ppo => {
            let t = train_ppo(&mut env, cfg.learner.ppo.clone(), seed)?;
            (Policy::Ppo(t.controller()), t.raw_curve)
        }
        Learner::Dqn => {
            let t = train_dqn(&mut env, cfg.learner.dqn.clone(), seed)?;
            (Policy::Dqn(t.controller()), t.raw_curve)
        }
    };
    Ok(TrainedModel { scheme, seed, policy, dccn, curve })
}

/// One evaluation slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub seed: u64,
    pub slot: u64,
    #[serde(rename = "cumulative_energy_J")]
    pub cumulative_energy_j: f64,
    pub active_bs_count: usize,
    pub pending_bits: u64,
    pub worst_delay_ms: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub seed: u64,
    pub energy: Energy,
    pub arrived_packets: u64,
    pub violated_packets: u64,
    pub total_reward: f64,
}

impl RunSummary {
    pub fn energy_j(&self) -> f64 {
        self.energy.joules()
    }

    pub fn violation_rate(&self) -> f64 {
        if self.arrived_packets == 0 {
            0.0
        } else {
            self.violated_packets as f64 / self.arrived_packets as f64
        }
    }
}

/// Greedy rollout of `cfg.duration` slots for one seed. Episodes of
/// `sim.episode_len` slots are chained; energy keeps accumulating across
/// them.
pub fn evaluate_seed(cfg: &ExperimentConfig, model: &TrainedModel, seed: u64) -> Result<(Vec<ResultRow>, RunSummary), HarnessError> {
    let mut env = NetworkEnv::new(Arc::new(cfg.env_config()), model.ris_mode(), eval_seed(seed, 0))?;
    let mut policy = model.policy.clone();
    let mut rows = Vec::with_capacity(cfg.duration as usize);
    let mut summary =
        RunSummary { scheme: cfg.scheme, seed, energy: Energy::ZERO, arrived_packets: 0, violated_packets: 0, total_reward: 0.0 };
    let mut slot = 0;
    let mut episode = 0;
    while slot < cfg.duration {
        env.reset(eval_seed(seed, episode))?;
        let mut ledger_before = summary.energy;
        loop {
            let action = policy.act(&env)?;
            let out = env.step(&action)?;
            summary.energy += out.info.energy;
            summary.total_reward += out.reward;
            rows.push(ResultRow {
                scheme: cfg.scheme,
                seed,
                slot,
                cumulative_energy_j: summary.energy.joules(),
                active_bs_count: out.info.active_bs,
                pending_bits: out.info.pending,
                worst_delay_ms: out.info.worst_delay_ms,
                reward: out.reward,
            });
            slot += 1;
            if out.done || slot >= cfg.duration {
                break;
            }
        }
        ledger_before += env.system_energy();
        debug_assert_eq!(ledger_before, summary.energy);
        summary.arrived_packets += env.queues.arrived_packets;
        summary.violated_packets += env.queues.violated_packets;
        episode += 1;
    }
    Ok((rows, summary))
}

/// Per-seed evaluation rollouts. `models` maps seed to model; a single
/// model is reused for every seed.
pub fn run_scheme(cfg: &ExperimentConfig, models: &BTreeMap<u64, TrainedModel>) -> Result<(Vec<ResultRow>, Vec<RunSummary>), HarnessError> {
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let model = pick_model(models, seed, cfg.scheme)?;
        let (r, s) = evaluate_seed(cfg, model, seed)?;
        rows.extend(r);
        summaries.push(s);
    }
    Ok((rows, summaries))
}

fn pick_model(models: &BTreeMap<u64, TrainedModel>, seed: u64, scheme: Scheme) -> Result<&TrainedModel, HarnessError> {
    let m = models
        .get(&seed)
        .or_else(|| if models.len() == 1 { models.values().next() } else { None })
        .ok_or_else(|| HarnessError::MissingCheckpoint(format!("{scheme} seed {seed}")))?;
    if m.scheme != scheme {
        return Err(HarnessError::Manifest(format!("model was trained for {}, config asks for {scheme}", m.scheme)));
    }
    Ok(m)
}

/// Always-active model; the only scheme that needs no training.
pub fn untrained(scheme: Scheme, seed: u64) -> Result<TrainedModel, HarnessError> {
    if scheme.learner() != Learner::None {
        return Err(HarnessError::MissingCheckpoint(format!("{scheme} needs a trained checkpoint")));
    }
    Ok(TrainedModel { scheme, seed, policy: Policy::AlwaysActive, dccn: None, curve: Vec::new() })
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    PacketSize,
    MeanInterarrival,
    UserCount,
}

impl SweepParam {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "packet_size" => Some(Self::PacketSize),
            "mean_interarrival" => Some(Self::MeanInterarrival),
            "user_count" => Some(Self::UserCount),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::PacketSize => "packet_size",
            Self::MeanInterarrival => "mean_interarrival",
            Self::UserCount => "user_count",
        }
    }

    pub fn apply(self, cfg: &ExperimentConfig, value: f64) -> Result<ExperimentConfig, HarnessError> {
        let mut c = cfg.clone();
        match self {
            Self::PacketSize => c.traffic.packet_size = value,
            Self::MeanInterarrival => c.traffic.mean_interarrival = value,
            Self::UserCount => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(HarnessError::Invalid { field: "sim.user_count".into(), message: format!("{value} is not a count") });
                }
                c.sim.user_count = Some(value as usize);
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub scheme: Scheme,
    pub seed: u64,
    #[serde(rename = "cumulative_energy_J")]
    pub cumulative_energy_j: f64,
    pub violation_rate: f64,
}

/// Evaluates every scheme at every value of `param`, reusing the given
/// trained models (keyed by scheme, then seed).
pub fn sweep(
    cfg: &ExperimentConfig,
    param: SweepParam,
    values: &[f64],
    models: &BTreeMap<Scheme, BTreeMap<u64, TrainedModel>>,
) -> Result<Vec<SweepRow>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Invalid { field: "values".into(), message: "sweep needs at least one value".into() });
    }
    let mut out = Vec::new();
    for &value in values {
        for (&scheme, per_seed) in models {
            let c = param.apply(&ExperimentConfig { scheme, ..cfg.clone() }, value)?;
            let (_, summaries) = run_scheme(&c, per_seed)?;
            out.extend(summaries.into_iter().map(|s| SweepRow {
                parameter: param,
                value,
                scheme,
                seed: s.seed,
                cumulative_energy_j: s.energy_j(),
                violation_rate: s.violation_rate(),
            }));
        }
    }
    Ok(out)
}

/// Median energy per `(value, scheme)` in first-seen order.
pub fn sweep_medians(rows: &[SweepRow]) -> Vec<(f64, Scheme, f64)> {
    let mut keys: Vec<(f64, Scheme)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(v, s)| v == r.value && s == r.scheme) {
            keys.push((r.value, r.scheme));
        }
    }
    keys.into_iter()
        .map(|(v, s)| {
            let e: Vec<f64> = rows.iter().filter(|r| r.value == v && r.scheme == s).map(|r| r.cumulative_energy_j).collect();
            (v, s, median(&e))
        })
        .collect()
}

/// Capacity of the exhaustive optimum and of the trained cascade on one
/// held-out channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub oracle_capacity: f64,
    pub dccn_capacity: f64,
}

/// Trains a cascade at `elements`/`bits` and compares it with enumeration on
/// `channels` held-out channels.
pub fn oracle_ris(elements: usize, bits: u32, channels: usize, dccn_cfg: &DccnConfig, seed: u64) -> Result<Vec<OracleRow>, HarnessError> {
    let geometry = NetworkGeometry { ris_elements: elements, ..NetworkGeometry::default() };
    let link = LinkParams { quant_bits: bits, ..LinkParams::default() };
    let d = train_ris(&geometry, &link, dccn_cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(99);
    (0..channels)
        .map(|_| {
            let ch = ChannelRealization::sample(&geometry, &link, &mut rng).map_err(DccnError::from)?;
            let (_, best, _) = dccn::exhaustive_phase_oracle(&ch, &link, &d.association)?;
            let ours = dccn::sum_capacity(&ch, &d.infer_phases(&ch), &d.association, &link);
            Ok(OracleRow { oracle_capacity: best, dccn_capacity: ours })
        })
        .collect()
}

fn write_csv_with_hash<T: Serialize>(path: &Path, hash: &str, rows: &[T], header: &[&str]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut file = std::fs::File::create(path)?;
    use std::io::Write;
    writeln!(file, "# config_hash={hash}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 8] =
    ["scheme", "seed", "slot", "cumulative_energy_J", "active_bs_count", "pending_bits", "worst_delay_ms", "reward"];

pub fn write_results_csv(path: &Path, hash: &str, rows: &[ResultRow]) -> Result<(), HarnessError> {
    write_csv_with_hash(path, hash, rows, &RESULT_COLUMNS)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_sweep_csv(path: &Path, hash: &str, rows: &[SweepRow]) -> Result<(), HarnessError> {
    write_csv_with_hash(path, hash, rows, &["parameter", "value", "scheme", "seed", "cumulative_energy_J", "violation_rate"])
}

pub fn write_curve_csv(path: &Path, hash: &str, points: &[CurvePoint]) -> Result<(), HarnessError> {
    let rows: Vec<(usize, f64, f64)> = points.iter().map(|p| (p.iteration, p.raw_reward, p.smoothed_reward)).collect();
    write_csv_with_hash(path, hash, &rows, &["iteration", "raw_reward", "smoothed_reward"])
}

pub fn write_oracle_csv(path: &Path, hash: &str, rows: &[OracleRow]) -> Result<(), HarnessError> {
    write_csv_with_hash(path, hash, rows, &["oracle_capacity", "dccn_capacity"])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DccnMeta {
    association: Vec<Option<usize>>,
    bits: u32,
    elements: usize,
    label_mean: f64,
    label_std: f64,
}

fn read_text(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::MissingCheckpoint(format!("{}: {e}", path.display())))
}

pub fn save_dccn(dir: &Path, d: &Dccn) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("dccn_phase.ckpt"), d.phase_net.to_checkpoint())?;
    std::fs::write(dir.join("dccn_capacity.ckpt"), d.capacity_net.to_checkpoint())?;
    let meta = DccnMeta {
        association: d.association.clone(),
        bits: d.bits,
        elements: d.elements,
        label_mean: d.label_mean,
        label_std: d.label_std,
    };
    std::fs::write(dir.join("dccn.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

pub fn load_dccn(dir: &Path, geometry: &NetworkGeometry, link: &LinkParams) -> Result<Dccn, HarnessError> {
    let meta: DccnMeta = serde_json::from_str(&read_text(&dir.join("dccn.json"))?)?;
    Ok(Dccn {
        phase_net: DenseNet::from_checkpoint(&read_text(&dir.join("dccn_phase.ckpt"))?)?,
        capacity_net: DenseNet::from_checkpoint(&read_text(&dir.join("dccn_capacity.ckpt"))?)?,
        scales: FeatureScales::new(geometry, link),
        association: meta.association,
        bits: meta.bits,
        elements: meta.elements,
        label_mean: meta.label_mean,
        label_std: meta.label_std,
    })
}

/// Writes the model's checkpoints and learning curve into `dir`.
pub fn save_model(dir: &Path, model: &TrainedModel, hash: &str, window: usize) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir)?;
    match &model.policy {
        Policy::AlwaysActive => {}
        Policy::Ppo(c) => std::fs::write(dir.join("policy.ckpt"), c.policy.net.to_checkpoint())?,
        Policy::Dqn(c) => std::fs::write(dir.join("policy.ckpt"), c.net.to_checkpoint())?,
    }
    if let Some(d) = &model.dccn {
        save_dccn(dir, d)?;
    }
    write_curve_csv(&dir.join("curve.csv"), hash, &model.curve_points(window))?;
    Ok(())
}

pub fn load_model(dir: &Path, cfg: &ExperimentConfig, seed: u64) -> Result<TrainedModel, HarnessError> {
    let scheme = cfg.scheme;
    let dccn = if scheme.ris_enabled() { Some(Arc::new(load_dccn(dir, &cfg.geometry, &cfg.link)?)) } else { None };
    let policy = match scheme.learner() {
        Learner::None => Policy::AlwaysActive,
        Learner::Ppo => {
            let net = DenseNet::from_checkpoint(&read_text(&dir.join("policy.ckpt"))?)?;
            let layout = crate::drl::ppo::HeadLayout::new(cfg.geometry.num_bs(), cfg.geometry.num_users());
            if net.output_dim() != layout.total() || net.input_dim() != cfg.env_config().observation_len() {
                return Err(HarnessError::Manifest("policy checkpoint does not fit this network".into()));
            }
            Policy::Ppo(PpoController { policy: PolicyHeads { net, layout, learned_association: scheme.learned_association() } })
        }
        Learner::Dqn => {
            let net = DenseNet::from_checkpoint(&read_text(&dir.join("policy.ckpt"))?)?;
            if net.output_dim() != crate::drl::dqn::catalog_size(cfg.geometry.num_bs()) {
                return Err(HarnessError::Manifest("q-network checkpoint does not fit this network".into()));
            }
            Policy::Dqn(DqnController { net })
        }
    };
    Ok(TrainedModel { scheme, seed, policy, dccn, curve: Vec::new() })
}

/// Written by `train`, checked by `eval` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scheme: Scheme,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Per-seed checkpoint directories relative to the manifest.
    pub checkpoints: BTreeMap<u64, PathBuf>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, HarnessError> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }

    /// Reads `path`, or `path/manifest.json` when `path` is a directory.
    pub fn read(path: &Path) -> Result<(Self, PathBuf), HarnessError> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let m: Manifest = serde_json::from_str(&read_text(&file)?)?;
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((m, base))
    }

    pub fn check(&self, cfg: &ExperimentConfig) -> Result<(), HarnessError> {
        if self.scheme != cfg.scheme {
            return Err(HarnessError::Manifest(format!("checkpoint is for {}, config is for {}", self.scheme, cfg.scheme)));
        }
        let h = cfg.hash();
        if self.config_hash != h {
            return Err(HarnessError::Manifest(format!("config hash {h} differs from training hash {}", self.config_hash)));
        }
        Ok(())
    }
}

/// Trains every configured seed, writes checkpoints, curves and the
/// manifest under `out`.
pub fn train_to_dir(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<(Manifest, Vec<TrainedModel>), HarnessError> {
    let hash = cfg.hash();
    let mut checkpoints = BTreeMap::new();
    let mut models = Vec::new();
    for &seed in seeds {
        let model = train_model(cfg, seed, None)?;
        let rel = PathBuf::from(format!("seed-{seed}"));
        save_model(&out.join(&rel), &model, &hash, cfg.learner.ppo.smoothing_window)?;
        checkpoints.insert(seed, rel);
        models.push(model);
    }
    let manifest = Manifest { scheme: cfg.scheme, config_hash: hash, seeds: seeds.to_vec(), checkpoints };
    manifest.write(out)?;
    Ok((manifest, models))
}

/// Loads every checkpoint listed in the manifest after validating it
/// against `cfg`.
pub fn load_from_manifest(path: &Path, cfg: &ExperimentConfig) -> Result<BTreeMap<u64, TrainedModel>, HarnessError> {
    let (m, base) = Manifest::read(path)?;
    m.check(cfg)?;
    m.checkpoints.iter().map(|(&seed, rel)| Ok((seed, load_model(&base.join(rel), cfg, seed)?))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aa(duration: u64, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig { scheme: Scheme::AA, duration, seeds, ..ExperimentConfig::default() }
    }

    fn aa_models() -> BTreeMap<u64, TrainedModel> {
        BTreeMap::from([(0, untrained(Scheme::AA, 0).unwrap())])
    }

    #[test]
    fn always_active_closed_form() {
        let cfg = aa(1000, vec![1]);
        let (rows, s) = run_scheme(&cfg, &aa_models()).unwrap();
        assert_eq!(rows.len(), 1000);
        // 3 BSs × 6.9 W × 1 ms × 1000 slots.
        assert_eq!(s[0].energy, Energy(3 * 6_900_000 * 1000 * 1000));
        assert!((rows.last().unwrap().cumulative_energy_j - 20.7).abs() < 1e-12);
        assert!(rows.windows(2).all(|w| w[1].cumulative_energy_j >= w[0].cumulative_energy_j));
    }

    #[test]
    fn zero_duration_and_seed_groups() {
        let (rows, _) = run_scheme(&aa(0, vec![1]), &aa_models()).unwrap();
        assert!(rows.is_empty());
        let (rows, s) = run_scheme(&aa(30, vec![4, 5]), &aa_models()).unwrap();
        assert_eq!(rows.len(), 60);
        assert_eq!(s.len(), 2);
        assert!(rows[..30].iter().all(|r| r.seed == 4) && rows[30..].iter().all(|r| r.seed == 5));
    }

    #[test]
    fn learned_scheme_without_checkpoint_fails() {
        assert!(matches!(untrained(Scheme::PSZR, 1), Err(HarnessError::MissingCheckpoint(_))));
        let cfg = ExperimentConfig { scheme: Scheme::PS, ..aa(10, vec![1, 2]) };
        let err = run_scheme(&cfg, &BTreeMap::new()).unwrap_err();
        assert!(matches!(err, HarnessError::MissingCheckpoint(_)));
    }

    #[test]
    fn aa_sweep_over_users_is_flat_and_single_value_matches_run() {
        let cfg = aa(100, vec![1, 2]);
        let models = BTreeMap::from([(Scheme::AA, aa_models())]);
        let rows = sweep(&cfg, SweepParam::UserCount, &[1.0, 2.0, 3.0, 4.0, 5.0], &models).unwrap();
        let meds = sweep_medians(&rows);
        assert_eq!(meds.len(), 5);
        assert!(meds.iter().all(|m| m.2 == meds[0].2));
        let one = sweep(&cfg, SweepParam::PacketSize, &[0.05], &models).unwrap();
        let (_, s) = run_scheme(&cfg, &models[&Scheme::AA]).unwrap();
        assert_eq!(one.iter().map(|r| r.cumulative_energy_j).collect::<Vec<_>>(), s.iter().map(|s| s.energy_j()).collect::<Vec<_>>());
        assert!(sweep(&cfg, SweepParam::PacketSize, &[], &models).is_err());
    }

    #[test]
    fn result_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = aa(25, vec![3]);
        let (rows, _) = run_scheme(&cfg, &aa_models()).unwrap();
        let path = dir.path().join("r.csv");
        write_results_csv(&path, &cfg.hash(), &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config_hash={}", cfg.hash()));
        assert_eq!(lines.next().unwrap(), RESULT_COLUMNS.join(","));
        assert_eq!(read_results_csv(&path).unwrap(), rows);
    }

    #[test]
    fn eval_seeds_are_disjoint_from_training_seeds() {
        for seed in 0..50 {
            for k in 0..100 {
                assert!(eval_seed(seed, k) >= 1 << 63);
                assert!(episode_seed(seed, k) < 1 << 63);
            }
        }
    }

    #[test]
    fn checkpoints_round_trip_through_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ExperimentConfig { scheme: Scheme::PSZR, duration: 20, seeds: vec![1], ..ExperimentConfig::default() };
        cfg.geometry.ris_elements = 4;
        cfg.learner.ppo.iterations = 1;
        cfg.learner.ppo.steps_per_iter = 32;
        cfg.learner.ppo.hidden = vec![16];
        cfg.learner.dccn = DccnConfig { hidden: 8, train_channels: 20, capacity_epochs: 1, phase_epochs: 1, ..DccnConfig::default() };
        let (manifest, models) = train_to_dir(&cfg, &cfg.seeds, dir.path()).unwrap();
        assert_eq!(manifest.seeds, vec![1]);
        let loaded = load_from_manifest(dir.path(), &cfg).unwrap();
        let original = BTreeMap::from([(1, models[0].clone())]);
        assert_eq!(run_scheme(&cfg, &loaded).unwrap().0, run_scheme(&cfg, &original).unwrap().0);
        let drifted = ExperimentConfig { traffic: crate::traffic::TrafficConfig { packet_size: 0.09, ..cfg.traffic.clone() }, ..cfg.clone() };
        assert!(matches!(load_from_manifest(dir.path(), &drifted), Err(HarnessError::Manifest(_))));
        let other = ExperimentConfig { scheme: Scheme::PSZ, ..cfg.clone() };
        assert!(matches!(load_from_manifest(dir.path(), &other), Err(HarnessError::Manifest(_))));
    }
}
