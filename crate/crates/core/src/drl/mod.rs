//! Reinforcement learners over [`NetworkEnv`]: PPO with factored masked
//! heads, and a DQN baseline over an enumerated action catalog.

pub mod dqn;
pub mod gae;
pub mod ppo;

use thiserror::Error;

use crate::bspower::SmState;
use crate::env::{EnvError, MdpAction, NetworkEnv};
use crate::neural::NeuralError;

pub use gae::{clip_ratio, compute_gae};

#[derive(Debug, Error)]
pub enum DrlError {
    #[error("non-finite loss: {0}")]
    NonFinite(String),
    #[error("no legal option for head {0}")]
    EmptyMask(usize),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// Anything that picks an action for the current environment state.
pub trait Controller {
    fn act(&mut self, env: &NetworkEnv) -> Result<MdpAction, DrlError>;
}

/// Keeps every BS active with no zoom and serves each user from the nearest
/// covering BS.
#[derive(Debug, Default, Clone, Copy)]
pub struct AlwaysActive;

impl Controller for AlwaysActive {
    fn act(&mut self, env: &NetworkEnv) -> Result<MdpAction, DrlError> {
        Ok(env.stay_action())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub raw_reward: f64,
    pub smoothed_reward: f64,
}

/// Trailing moving average over up to `window` points.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let s = &xs[lo..=i];
            s.iter().sum::<f64>() / s.len() as f64
        })
        .collect()
}

pub fn make_curve(raw: &[f64], window: usize) -> Vec<CurvePoint> {
    moving_average(raw, window)
        .into_iter()
        .zip(raw)
        .enumerate()
        .map(|(i, (s, r))| CurvePoint { iteration: i + 1, raw_reward: *r, smoothed_reward: s })
        .collect()
}

/// Tracks finished-episode returns inside one iteration.
#[derive(Debug, Default, Clone)]
pub(crate) struct EpisodeTally {
    running: f64,
    finished: Vec<f64>,
    last: Option<f64>,
}

impl EpisodeTally {
    pub(crate) fn push(&mut self, reward: f64, done: bool) {
        self.running += reward;
        if done {
            self.finished.push(self.running);
            self.last = Some(self.running);
            self.running = 0.0;
        }
    }

    /// Mean return of episodes finished since the last call; repeats the most
    /// recent value when none finished.
    pub(crate) fn take_mean(&mut self) -> f64 {
        let out = if self.finished.is_empty() {
            self.last.unwrap_or(self.running)
        } else {
            self.finished.iter().sum::<f64>() / self.finished.len() as f64
        };
        self.finished.clear();
        out
    }
}

/// Seed for the `k`-th training episode of run `seed`.
pub fn episode_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(k).wrapping_add(0x5eed)
}

/// Per-slot trace row of an evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub slot: u64,
    pub cumulative_energy_j: f64,
    pub active_bs_count: usize,
    pub pending_bits: u64,
    pub worst_delay_ms: f64,
    pub reward: f64,
    pub modes: Vec<SmState>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalMetrics {
    pub episodes: usize,
    pub mean_reward: f64,
    pub total_energy_j: f64,
    pub violation_rate: f64,
    pub rows: Vec<Vec<SlotRecord>>,
}

/// Runs `controller` for one episode per seed.
pub fn evaluate<C: Controller + ?Sized>(controller: &mut C, env: &mut NetworkEnv, seeds: &[u64]) -> Result<EvalMetrics, DrlError> {
    if seeds.is_empty() {
        return Ok(EvalMetrics::default());
    }
    let mut metrics = EvalMetrics { episodes: seeds.len(), ..EvalMetrics::default() };
    let mut arrived = 0u64;
    let mut violated = 0u64;
    for &seed in seeds {
        env.reset(seed)?;
        let mut rows = Vec::new();
        let mut ret = 0.0;
        let mut cumulative = crate::bspower::Energy::ZERO;
        loop {
            let action = controller.act(env)?;
            let out = env.step(&action)?;
            cumulative += out.info.energy;
            ret += out.reward;
            rows.push(SlotRecord {
                slot: env.slot(),
                cumulative_energy_j: cumulative.joules(),
                active_bs_count: out.info.active_bs,
                pending_bits: out.info.pending,
                worst_delay_ms: out.info.worst_delay_ms,
                reward: out.reward,
                modes: out.info.modes.clone(),
            });
            if out.done {
                break;
            }
        }
        metrics.mean_reward += ret / seeds.len() as f64;
        metrics.total_energy_j += env.system_energy().joules();
        arrived += env.queues.arrived_packets;
        violated += env.queues.violated_packets;
        metrics.rows.push(rows);
    }
    metrics.violation_rate = if arrived == 0 { 0.0 } else { violated as f64 / arrived as f64 };
    Ok(metrics)
}

/// Index of the largest entry among `mask`ed positions; ties go to the
/// smaller index.
pub(crate) fn masked_argmax(values: &[f64], mask: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&v, &ok)) in values.iter().zip(mask).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, RisMode, Scheme};
    use std::sync::Arc;

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[], 10), Vec::<f64>::new());
    }

    #[test]
    fn argmax_respects_mask_and_ties() {
        assert_eq!(masked_argmax(&[3.0, 1.0, 3.0], &[true, true, true]), Some(0));
        assert_eq!(masked_argmax(&[3.0, 1.0, 2.0], &[false, true, true]), Some(2));
        assert_eq!(masked_argmax(&[3.0], &[false]), None);
    }

    #[test]
    fn evaluate_edge_cases() {
        let cfg = EnvConfig { scheme: Scheme::AA, episode_len: 50, ..EnvConfig::default() };
        let mut env = NetworkEnv::new(Arc::new(cfg), RisMode::Disabled, 1).unwrap();
        assert_eq!(evaluate(&mut AlwaysActive, &mut env, &[]).unwrap(), EvalMetrics::default());
        let m = evaluate(&mut AlwaysActive, &mut env, &[4, 5]).unwrap();
        assert_eq!(m.rows.len(), 2);
        assert!((0.0..=1.0).contains(&m.violation_rate));
        // 50 slots × 3 BSs × 6.9 W × 1 ms per seed.
        assert!((m.total_energy_j - 2.0 * 50.0 * 3.0 * 6.9e-3).abs() < 1e-12);
    }
}
