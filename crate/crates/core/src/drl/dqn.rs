//! Deep Q-learning over an enumerated catalog of joint sleep/zoom actions.
//!
//! Each BS contributes one base-15 digit `sm * 3 + zoom`, so the catalog has
//! `15^M` entries. Users are always attached to the nearest covering BS.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{episode_seed, Controller, DrlError, EpisodeTally};
use crate::bspower::{SmState, ZoomLevel};
use crate::env::{MdpAction, NetworkEnv};
use crate::neural::{apply_update, Activation, DenseNet, Head, NeuralError, OptimState};

/// Options per BS digit.
pub const DIGIT: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub gamma: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub steps_per_iter: usize,
    pub replay_capacity: usize,
    pub batch: usize,
    /// Transitions stored before the first gradient step.
    pub warmup: usize,
    pub train_every: usize,
    pub target_sync: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub huber_delta: f64,
    pub max_grad_norm: Option<f64>,
    pub hidden: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            learning_rate: 0.003,
            iterations: 150,
            steps_per_iter: 512,
            replay_capacity: 50_000,
            batch: 64,
            warmup: 1_000,
            train_every: 4,
            target_sync: 1_000,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 20_000,
            huber_delta: 1.0,
            max_grad_norm: Some(10.0),
            hidden: vec![128, 128],
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(("gamma", format!("must be in [0, 1], got {}", self.gamma)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("steps_per_iter", self.steps_per_iter),
            ("replay_capacity", self.replay_capacity),
            ("batch", self.batch),
            ("train_every", self.train_every),
            ("target_sync", self.target_sync),
        ] {
            if v == 0 {
                return Err((name, "must be >= 1".into()));
            }
        }
        if self.batch > self.replay_capacity {
            return Err(("batch", "larger than replay_capacity".into()));
        }
        for (name, v) in [("epsilon_start", self.epsilon_start), ("epsilon_end", self.epsilon_end)] {
            if !(0.0..=1.0).contains(&v) {
                return Err((name, format!("must be in [0, 1], got {v}")));
            }
        }
        if !(self.huber_delta > 0.0) {
            return Err(("huber_delta", "must be > 0".into()));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(("hidden", "need at least one nonzero hidden width".into()));
        }
        Ok(())
    }

    /// Linearly annealed exploration rate after `step` environment steps.
    pub fn epsilon(&self, step: usize) -> f64 {
        if self.epsilon_decay_steps == 0 {
            return self.epsilon_end;
        }
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

pub fn catalog_size(m: usize) -> usize {
    DIGIT.pow(m as u32)
}

pub fn encode_action(sm: &[SmState], zooms: &[ZoomLevel]) -> usize {
    sm.iter().zip(zooms).rev().fold(0, |acc, (s, z)| acc * DIGIT + s.index() * 3 + z.index())
}

pub fn decode_action(mut index: usize, m: usize) -> (Vec<SmState>, Vec<ZoomLevel>) {
    let mut sm = Vec::with_capacity(m);
    let mut zooms = Vec::with_capacity(m);
    for _ in 0..m {
        let d = index % DIGIT;
        index /= DIGIT;
        sm.push(SmState::from_index(d / 3).expect("digit < 15"));
        zooms.push(ZoomLevel::from_index(d % 3).expect("digit < 15"));
    }
    (sm, zooms)
}

/// Legal digits for each BS. The catalog's legal set is their product.
pub fn legal_digits(env: &NetworkEnv) -> Vec<[bool; DIGIT]> {
    let mask = env.action_mask();
    let statuses = env.statuses();
    let stay: Vec<SmState> = statuses.iter().map(|s| s.mode).collect();
    let nozoom = vec![ZoomLevel::NoZoom; statuses.len()];
    (0..statuses.len())
        .map(|i| {
            let mut row = [false; DIGIT];
            for s in SmState::ALL {
                if !mask.sm[i][s.index()] {
                    continue;
                }
                let mut sm = stay.clone();
                sm[i] = s;
                let Ok(projected) = env.project(&sm, &nozoom) else { continue };
                let zopts = env.zoom_options(&projected)[i];
                for (z, ok) in zopts.iter().enumerate() {
                    row[s.index() * 3 + z] = *ok;
                }
            }
            row
        })
        .collect()
}

pub fn is_legal(index: usize, digits: &[[bool; DIGIT]]) -> bool {
    let mut rest = index;
    digits.iter().all(|row| {
        let ok = row[rest % DIGIT];
        rest /= DIGIT;
        ok
    })
}

/// Every legal catalog index, ascending.
pub fn legal_actions(digits: &[[bool; DIGIT]]) -> Vec<usize> {
    let mut out = vec![0];
    for row in digits.iter().rev() {
        out = out.iter().flat_map(|&hi| (0..DIGIT).filter(|&d| row[d]).map(move |d| hi * DIGIT + d)).collect();
    }
    out
}

/// Highest-valued entry of `actions`; the first one wins ties.
fn best_of(actions: &[usize], q: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (&a, &v) in actions.iter().zip(q) {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best
}

/// Greedy legal action and its value for one observation.
fn greedy(net: &DenseNet, obs: &[f64], digits: &[[bool; DIGIT]]) -> Result<Option<(usize, f64)>, DrlError> {
    let actions = legal_actions(digits);
    let x = ArrayView2::from_shape((1, obs.len()), obs).map_err(|e| NeuralError::Shape(e.to_string()))?;
    let q = net.predict_columns(x, std::slice::from_ref(&actions), None)?;
    Ok(best_of(&actions, &q[0]))
}

/// Largest `q` over legal catalog entries.
pub fn masked_best(q: ArrayView1<f64>, digits: &[[bool; DIGIT]]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (a, &v) in q.iter().enumerate() {
        if is_legal(a, digits) && best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best
}

/// Full action for catalog entry `index` with nearest covering association.
pub fn catalog_action(env: &NetworkEnv, index: usize) -> Result<MdpAction, DrlError> {
    let (sm, zooms) = decode_action(index, env.config().num_bs());
    let projected = env.project(&sm, &zooms)?;
    let association = env.nearest_association(&projected, &zooms);
    Ok(MdpAction { sm_targets: sm, zooms, association })
}

pub fn huber_grad(err: f64, delta: f64) -> f64 {
    err.clamp(-delta, delta)
}

pub fn huber(err: f64, delta: f64) -> f64 {
    if err.abs() <= delta {
        0.5 * err * err
    } else {
        delta * (err.abs() - 0.5 * delta)
    }
}

/// Bootstrapped target; terminal transitions use the reward alone.
pub fn td_target(reward: f64, done: bool, gamma: f64, next_best: f64) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * next_best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub next_legal: Vec<[bool; DIGIT]>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, items: VecDeque::with_capacity(capacity.min(1 << 16)) }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample<'a, R: Rng>(&'a self, n: usize, rng: &mut R) -> Vec<&'a Transition> {
        (0..n).map(|_| &self.items[rng.random_range(0..self.items.len())]).collect()
    }
}

/// Greedy controller over the online network.
#[derive(Debug, Clone)]
pub struct DqnController {
    pub net: DenseNet,
}

impl Controller for DqnController {
    fn act(&mut self, env: &NetworkEnv) -> Result<MdpAction, DrlError> {
        let obs = env.observe(&env.state())?;
        let (a, _) = greedy(&self.net, &obs, &legal_digits(env))?.ok_or(DrlError::EmptyMask(0))?;
        catalog_action(env, a)
    }
}

pub struct DqnTrainer {
    pub config: DqnConfig,
    pub online: DenseNet,
    pub target: DenseNet,
    pub optim: OptimState,
    pub replay: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub steps: usize,
    pub updates: usize,
    pub seed: u64,
    pub episodes: u64,
    pub raw_curve: Vec<f64>,
    pub last_loss: f64,
    tally: EpisodeTally,
    /// `target.transposed_head()`, refreshed at every sync.
    target_head: Array2<f64>,
}

impl DqnTrainer {
    pub fn new(env: &NetworkEnv, config: DqnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = env.config();
        let mut dims = vec![cfg.observation_len()];
        dims.extend_from_slice(&config.hidden);
        dims.push(catalog_size(cfg.num_bs()));
        let online = DenseNet::new(&dims, Activation::Relu, Head::Linear, &mut rng);
        Self {
            target: online.clone(),
            target_head: online.transposed_head(),
            online,
            optim: OptimState::adam(config.learning_rate),
            replay: ReplayBuffer::new(config.replay_capacity),
            rng,
            steps: 0,
            updates: 0,
            seed,
            episodes: 0,
            raw_curve: Vec::new(),
            last_loss: 0.0,
            tally: EpisodeTally::default(),
            config,
        }
    }

    /// ε-greedy over the legal catalog entries.
    pub fn choose(&mut self, env: &NetworkEnv, obs: &[f64]) -> Result<usize, DrlError> {
        let digits = legal_digits(env);
        let eps = self.config.epsilon(self.steps);
        if self.rng.random::<f64>() < eps {
            // Uniform over the product set, one digit per BS.
            let mut index = 0;
            for row in digits.iter().rev() {
                let legal: Vec<usize> = (0..DIGIT).filter(|&d| row[d]).collect();
                if legal.is_empty() {
                    return Err(DrlError::EmptyMask(0));
                }
                index = index * DIGIT + legal[self.rng.random_range(0..legal.len())];
            }
            return Ok(index);
        }
        greedy(&self.online, obs, &digits)?.map(|(a, _)| a).ok_or(DrlError::EmptyMask(0))
    }

    /// One environment step plus any scheduled learning.
    pub fn step(&mut self, env: &mut NetworkEnv) -> Result<(), DrlError> {
        let obs = env.observe(&env.state())?;
        let a = self.choose(env, &obs)?;
        let action = catalog_action(env, a)?;
        let out = env.step(&action)?;
        self.tally.push(out.reward, out.done);
        let next_obs = env.observe(&out.next)?;
        let next_legal = legal_digits(env);
        self.replay.push(Transition { obs, action: a, reward: out.reward, next_obs, done: out.done, next_legal });
        if out.done {
            self.episodes += 1;
            env.reset(episode_seed(self.seed, self.episodes))?;
        }
        self.steps += 1;
        if self.replay.len() >= self.config.warmup.max(self.config.batch) && self.steps.is_multiple_of(self.config.train_every) {
            self.last_loss = self.learn()?;
            self.updates += 1;
            if self.updates.is_multiple_of(self.config.target_sync) {
                self.target = self.online.clone();
                self.target_head = self.target.transposed_head();
            }
        }
        Ok(())
    }

    /// One minibatch gradient step; returns the mean Huber loss.
    pub fn learn(&mut self) -> Result<f64, DrlError> {
        let cfg = &self.config;
        let batch = self.replay.sample(cfg.batch, &mut self.rng);
        let width = batch[0].obs.len();
        let b = batch.len();
        let mut x = Array2::zeros((b, width));
        let mut xn = Array2::zeros((b, width));
        for (r, t) in batch.iter().enumerate() {
            x.row_mut(r).assign(&ArrayView1::from(&t.obs));
            xn.row_mut(r).assign(&ArrayView1::from(&t.next_obs));
        }
        // Only legal next actions are evaluated; terminal rows need none.
        let next_actions: Vec<Vec<usize>> =
            batch.iter().map(|t| if t.done { Vec::new() } else { legal_actions(&t.next_legal) }).collect();
        let qn = self.target.predict_columns(xn.view(), &next_actions, Some(&self.target_head))?;
        let targets: Vec<f64> = batch
            .iter()
            .enumerate()
            .map(|(r, t)| {
                let best = best_of(&next_actions[r], &qn[r]).map_or(0.0, |(_, v)| v);
                td_target(t.reward, t.done, cfg.gamma, best)
            })
            .collect();
        let cols: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let (q, trace) = self.online.forward_selected(x.view(), &cols)?;
        let mut loss = 0.0;
        let upstream: Vec<f64> = q
            .iter()
            .zip(&targets)
            .map(|(q, y)| {
                loss += huber(q - y, cfg.huber_delta) / b as f64;
                huber_grad(q - y, cfg.huber_delta) / b as f64
            })
            .collect();
        if !loss.is_finite() {
            return Err(DrlError::NonFinite(format!("dqn loss {loss}")));
        }
        let mut grads = self.online.backward_selected(&trace, &cols, &upstream)?;
        if let Some(maxn) = cfg.max_grad_norm {
            grads.clip_global_norm(maxn);
        }
        apply_update(&mut self.online, &grads, &mut self.optim)?;
        Ok(loss)
    }

    /// `steps_per_iter` environment steps; returns the mean return of the
    /// episodes that finished.
    pub fn iteration(&mut self, env: &mut NetworkEnv) -> Result<f64, DrlError> {
        for _ in 0..self.config.steps_per_iter {
            self.step(env)?;
        }
        let mean = self.tally.take_mean();
        self.raw_curve.push(mean);
        Ok(mean)
    }

    pub fn controller(&self) -> DqnController {
        DqnController { net: self.online.clone() }
    }
}

pub fn train_dqn(env: &mut NetworkEnv, config: DqnConfig, seed: u64) -> Result<DqnTrainer, DrlError> {
    env.reset(episode_seed(seed, 0))?;
    let mut trainer = DqnTrainer::new(env, config, seed);
    for _ in 0..trainer.config.iterations {
        trainer.iteration(env)?;
    }
    Ok(trainer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, RisMode, Scheme};
    use crate::netmodel::RisConfig;
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::Arc;

    fn env() -> NetworkEnv {
        let cfg = EnvConfig { scheme: Scheme::DSZR, ..EnvConfig::default() };
        NetworkEnv::new(Arc::new(cfg), RisMode::Fixed(RisConfig::zeros(128, 3)), 2).unwrap()
    }

    fn small() -> DqnConfig {
        DqnConfig { hidden: vec![32], warmup: 100, batch: 16, steps_per_iter: 64, iterations: 1, ..DqnConfig::default() }
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(index in 0usize..3375) {
            let (sm, z) = decode_action(index, 3);
            prop_assert_eq!(encode_action(&sm, &z), index);
        }
    }

    #[test]
    fn epsilon_schedule() {
        let c = DqnConfig::default();
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(10_000) - 0.525).abs() < 1e-12);
        assert_eq!(c.epsilon(1_000_000), 0.05);
    }

    #[test]
    fn terminal_target_is_reward() {
        assert_eq!(td_target(-2.0, true, 0.98, 100.0), -2.0);
        assert!((td_target(1.0, false, 0.5, 4.0) - 3.0).abs() < 1e-12);
        assert_eq!(huber_grad(3.0, 1.0), 1.0);
        assert!((huber(3.0, 1.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn legal_catalog_entries_pass_validation() {
        let mut e = env();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..60 {
            let digits = legal_digits(&e);
            let legal: Vec<usize> = (0..3375).filter(|&a| is_legal(a, &digits)).collect();
            assert!(!legal.is_empty());
            assert_eq!(legal_actions(&digits), legal);
            for &a in legal.iter().step_by(7) {
                e.validate_action(&catalog_action(&e, a).unwrap()).unwrap();
            }
            let a = legal[rng.random_range(0..legal.len())];
            e.step(&catalog_action(&e, a).unwrap()).unwrap();
        }
    }

    #[test]
    fn greedy_over_legal_columns_matches_dense_scan() {
        let mut e = env();
        let t = DqnTrainer::new(&e, small(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..30 {
            let obs = e.observe(&e.state()).unwrap();
            let digits = legal_digits(&e);
            let dense = t.online.predict_one(&obs).unwrap();
            let (a, v) = masked_best(ArrayView1::from(&dense), &digits).unwrap();
            let (b, w) = greedy(&t.online, &obs, &digits).unwrap().unwrap();
            assert_eq!(a, b);
            assert!((v - w).abs() < 1e-12);
            let legal = legal_actions(&digits);
            let pick = legal[rng.random_range(0..legal.len())];
            e.step(&catalog_action(&e, pick).unwrap()).unwrap();
        }
    }

    #[test]
    fn no_learning_during_warmup() {
        let mut e = env();
        let mut t = DqnTrainer::new(&e, small(), 3);
        let before = t.online.clone();
        for _ in 0..99 {
            t.step(&mut e).unwrap();
        }
        assert_eq!(t.updates, 0);
        assert_eq!(t.online, before);
        for _ in 0..8 {
            t.step(&mut e).unwrap();
        }
        assert!(t.updates > 0);
        assert_ne!(t.online, before);
    }

    #[test]
    fn replay_evicts_oldest() {
        let mut r = ReplayBuffer::new(2);
        for i in 0..3 {
            r.push(Transition { obs: vec![], action: i, reward: 0.0, next_obs: vec![], done: false, next_legal: vec![] });
        }
        assert_eq!(r.len(), 2);
        assert_eq!(r.items[0].action, 1);
    }

    #[test]
    fn training_is_reproducible() {
        let run = || {
            let mut e = env();
            let t = train_dqn(&mut e, DqnConfig { iterations: 3, ..small() }, 5).unwrap();
            (t.raw_curve, t.online)
        };
        assert_eq!(run(), run());
    }
}
