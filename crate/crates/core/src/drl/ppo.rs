//! Clipped-surrogate PPO with an actor and a critic network.
//!
//! The joint action is factored into one categorical head per BS sleep
//! target, one per BS zoom level and one per user association. Heads are
//! sampled in that order so each mask can depend on earlier choices; the
//! masks are stored with the step so log-probabilities can be recomputed
//! exactly during the update.

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gae::{clip_ratio, compute_gae};
use super::{episode_seed, masked_argmax, Controller, DrlError, EpisodeTally};
use crate::bspower::{SmState, ZoomLevel};
use crate::env::{MdpAction, NetworkEnv};
use crate::neural::{apply_update, Activation, DenseNet, Head, OptimState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub steps_per_iter: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub normalize_advantages: bool,
    /// Global gradient-norm limit; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    pub hidden: Vec<usize>,
    pub smoothing_window: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.98,
            lambda: 0.95,
            clip: 0.2,
            learning_rate: 0.003,
            iterations: 300,
            steps_per_iter: 512,
            minibatch: 64,
            epochs: 4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            normalize_advantages: true,
            max_grad_norm: Some(5.0),
            hidden: vec![128, 128],
            smoothing_window: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(("gamma", format!("must be in [0, 1], got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(("lambda", format!("must be in [0, 1], got {}", self.lambda)));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(("clip", format!("must be in (0, 1), got {}", self.clip)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(("learning_rate", format!("must be > 0, got {}", self.learning_rate)));
        }
        for (name, v) in [
            ("iterations", self.iterations),
            ("steps_per_iter", self.steps_per_iter),
            ("minibatch", self.minibatch),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err((name, "must be >= 1".into()));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(("hidden", "need at least one nonzero hidden width".into()));
        }
        Ok(())
    }
}

/// Offsets of the categorical heads inside the logit vector:
/// `M` sleep heads (5), `M` zoom heads (3), `N` association heads (`M+1`,
/// option 0 meaning "not served").
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadLayout {
    pub m: usize,
    pub n: usize,
    pub heads: Vec<(usize, usize)>,
}

impl HeadLayout {
    pub fn new(m: usize, n: usize) -> Self {
        let mut heads = Vec::with_capacity(2 * m + n);
        let mut off = 0;
        for size in std::iter::repeat_n(5, m).chain(std::iter::repeat_n(3, m)).chain(std::iter::repeat_n(m + 1, n)) {
            heads.push((off, size));
            off += size;
        }
        Self { m, n, heads }
    }

    pub fn total(&self) -> usize {
        self.heads.last().map_or(0, |(o, s)| o + s)
    }

    pub fn sm_head(&self, i: usize) -> usize {
        i
    }

    pub fn zoom_head(&self, i: usize) -> usize {
        self.m + i
    }

    pub fn assoc_head(&self, u: usize) -> usize {
        2 * self.m + u
    }
}

/// Log-softmax over the legal entries; illegal entries get `-inf`.
pub fn masked_log_softmax(logits: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &ok)| ok)
        .map(|(&z, _)| z)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .zip(mask)
            .filter(|(_, &ok)| ok)
            .map(|(&z, _)| (z - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().zip(mask).map(|(&z, &ok)| if ok { z - lse } else { f64::NEG_INFINITY }).collect()
}

/// Sum over heads of the chosen option's log-probability.
pub fn factored_log_prob(logits: &[f64], layout: &HeadLayout, choices: &[usize], mask: &[bool]) -> f64 {
    layout
        .heads
        .iter()
        .zip(choices)
        .map(|(&(o, s), &c)| masked_log_softmax(&logits[o..o + s], &mask[o..o + s])[c])
        .sum()
}

/// How a head option is picked.
pub enum Pick<'a, R: Rng> {
    Sample(&'a mut R),
    Greedy,
}

impl<R: Rng> Pick<'_, R> {
    fn choose(&mut self, logits: &[f64], mask: &[bool], head: usize) -> Result<(usize, f64), DrlError> {
        let lp = masked_log_softmax(logits, mask);
        if !mask.iter().any(|&b| b) {
            return Err(DrlError::EmptyMask(head));
        }
        let c = match self {
            Pick::Greedy => masked_argmax(logits, mask).expect("mask has a legal entry"),
            Pick::Sample(rng) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = None;
                for (i, l) in lp.iter().enumerate() {
                    if mask[i] {
                        acc += l.exp();
                        pick = Some(i);
                        if u < acc {
                            break;
                        }
                    }
                }
                pick.expect("mask has a legal entry")
            }
        };
        Ok((c, lp[c]))
    }
}

/// A sampled joint action together with what is needed to score it again.
#[derive(Debug, Clone, PartialEq)]
pub struct FactoredAction {
    pub action: MdpAction,
    pub choices: Vec<usize>,
    pub mask: Vec<bool>,
    pub log_prob: f64,
}

/// Picks every head in order against the environment's masks. When
/// `learned_association` is false the association heads are pinned to the
/// nearest covering BS.
pub fn select_action<R: Rng>(
    env: &NetworkEnv,
    logits: &[f64],
    layout: &HeadLayout,
    learned_association: bool,
    mut pick: Pick<'_, R>,
) -> Result<FactoredAction, DrlError> {
    let (m, n) = (layout.m, layout.n);
    let mut mask = vec![false; layout.total()];
    let mut choices = vec![0usize; layout.heads.len()];
    let mut log_prob = 0.0;
    let mut take = |head: usize, allowed: &[bool], mask: &mut Vec<bool>, pick: &mut Pick<'_, R>| -> Result<usize, DrlError> {
        let (o, s) = layout.heads[head];
        mask[o..o + s].copy_from_slice(allowed);
        let (c, lp) = pick.choose(&logits[o..o + s], &mask[o..o + s], head)?;
        choices[head] = c;
        log_prob += lp;
        Ok(c)
    };

    let sm_mask = env.action_mask();
    let mut sm = Vec::with_capacity(m);
    for i in 0..m {
        let c = take(layout.sm_head(i), &sm_mask.sm[i], &mut mask, &mut pick)?;
        sm.push(SmState::from_index(c).expect("5-way head"));
    }
    let placeholder = vec![ZoomLevel::NoZoom; m];
    let projected = env.project(&sm, &placeholder)?;
    let zoom_opts = env.zoom_options(&projected);
    let mut zooms = Vec::with_capacity(m);
    for (i, opts) in zoom_opts.iter().enumerate() {
        let c = take(layout.zoom_head(i), opts, &mut mask, &mut pick)?;
        zooms.push(ZoomLevel::from_index(c).expect("3-way head"));
    }
    let projected = env.project(&sm, &zooms)?;
    let candidates = env.association_candidates(&projected, &zooms);
    let nearest = env.nearest_association(&projected, &zooms);
    let mut association = Vec::with_capacity(n);
    for u in 0..n {
        let mut allowed = vec![false; m + 1];
        if learned_association {
            allowed[0] = true;
            for &bs in &candidates[u] {
                allowed[bs + 1] = true;
            }
        } else {
            allowed[nearest[u].map_or(0, |bs| bs + 1)] = true;
        }
        let c = take(layout.assoc_head(u), &allowed, &mut mask, &mut pick)?;
        association.push(c.checked_sub(1));
    }
    Ok(FactoredAction { action: MdpAction { sm_targets: sm, zooms, association }, choices, mask, log_prob })
}

/// Actor network plus its head layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyHeads {
    pub net: DenseNet,
    pub layout: HeadLayout,
    pub learned_association: bool,
}

impl PolicyHeads {
    pub fn new<R: Rng + ?Sized>(obs_len: usize, m: usize, n: usize, hidden: &[usize], learned_association: bool, rng: &mut R) -> Self {
        let layout = HeadLayout::new(m, n);
        let mut dims = vec![obs_len];
        dims.extend_from_slice(hidden);
        dims.push(layout.total());
        let mut net = DenseNet::new(&dims, Activation::Relu, Head::Linear, rng);
        net.scale_output_layer(0.01);
        Self { net, layout, learned_association }
    }
}

/// Greedy (mode) controller for evaluation.
#[derive(Debug, Clone)]
pub struct PpoController {
    pub policy: PolicyHeads,
}

impl Controller for PpoController {
    fn act(&mut self, env: &NetworkEnv) -> Result<MdpAction, DrlError> {
        let obs = env.observe(&env.state())?;
        let logits = self.policy.net.predict_one(&obs)?;
        let fa = select_action::<ChaCha8Rng>(env, &logits, &self.policy.layout, self.policy.learned_association, Pick::Greedy)?;
        Ok(fa.action)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub obs: Vec<f64>,
    pub choices: Vec<usize>,
    pub mask: Vec<bool>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub done: bool,
    pub next_value: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryBuffer {
    pub records: Vec<Record>,
}

impl TrajectoryBuffer {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn advantages(&self, gamma: f64, lambda: f64) -> Vec<f64> {
        let r: Vec<f64> = self.records.iter().map(|x| x.reward).collect();
        let v: Vec<f64> = self.records.iter().map(|x| x.value).collect();
        let nv: Vec<f64> = self.records.iter().map(|x| x.next_value).collect();
        let d: Vec<bool> = self.records.iter().map(|x| x.done).collect();
        compute_gae(&r, &v, &nv, &d, gamma, lambda)
    }
}

/// Episode bookkeeping carried across rollouts.
#[derive(Debug, Clone, Default)]
pub struct RolloutCursor {
    pub seed: u64,
    pub episodes: u64,
    pub(crate) tally: EpisodeTally,
}

impl RolloutCursor {
    pub fn new(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn take_mean_return(&mut self) -> f64 {
        self.tally.take_mean()
    }
}

/// Runs the behaviour policy for `horizon` steps, resetting the environment
/// at episode ends.
pub fn collect_rollout<R: Rng>(
    env: &mut NetworkEnv,
    policy: &PolicyHeads,
    value_net: &DenseNet,
    horizon: usize,
    cursor: &mut RolloutCursor,
    rng: &mut R,
) -> Result<TrajectoryBuffer, DrlError> {
    let mut records = Vec::with_capacity(horizon);
    let mut obs = env.observe(&env.state())?;
    for _ in 0..horizon {
        let logits = policy.net.predict_one(&obs)?;
        let fa = select_action(env, &logits, &policy.layout, policy.learned_association, Pick::Sample(&mut *rng))?;
        let out = env.step(&fa.action)?;
        cursor.tally.push(out.reward, out.done);
        records.push(Record {
            obs: std::mem::take(&mut obs),
            choices: fa.choices,
            mask: fa.mask,
            log_prob: fa.log_prob,
            value: 0.0,
            reward: out.reward,
            done: out.done,
            next_value: 0.0,
        });
        obs = if out.done {
            cursor.episodes += 1;
            let s = env.reset(episode_seed(cursor.seed, cursor.episodes))?;
            env.observe(&s)?
        } else {
            env.observe(&out.next)?
        };
    }
    // Values for every visited state plus the state after the last step.
    let width = obs.len();
    let mut x = Array2::zeros((records.len() + 1, width));
    for (i, r) in records.iter().enumerate() {
        x.row_mut(i).assign(&ArrayView1::from(&r.obs));
    }
    x.row_mut(records.len()).assign(&ArrayView1::from(&obs));
    let v = value_net.predict(x.view())?;
    let n = records.len();
    for i in 0..n {
        records[i].value = v[[i, 0]];
        records[i].next_value = if records[i].done { 0.0 } else { v[[i + 1, 0]] };
    }
    Ok(TrajectoryBuffer { records })
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub mean_ratio: f64,
}

pub struct PpoOptimizers {
    pub policy: OptimState,
    pub value: OptimState,
}

impl PpoOptimizers {
    pub fn new(lr: f64) -> Self {
        Self { policy: OptimState::adam(lr), value: OptimState::adam(lr) }
    }
}

/// Per-sample surrogate terms and the gradient of the (minimized) loss with
/// respect to the logits.
fn policy_terms(
    logits: &[f64],
    rec: &Record,
    layout: &HeadLayout,
    adv: f64,
    clip: f64,
    entropy_coef: f64,
    scale: f64,
    dlogits: &mut [f64],
) -> (f64, f64, f64, bool) {
    let mut logp = 0.0;
    let mut entropy = 0.0;
    let mut probs = vec![0.0; logits.len()];
    for (h, &(o, s)) in layout.heads.iter().enumerate() {
        let lp = masked_log_softmax(&logits[o..o + s], &rec.mask[o..o + s]);
        logp += lp[rec.choices[h]];
        for i in 0..s {
            if rec.mask[o + i] {
                let p = lp[i].exp();
                probs[o + i] = p;
                entropy -= p * lp[i];
            }
        }
    }
    let ratio = (logp - rec.log_prob).exp();
    let unclipped = ratio * adv;
    let clipped = clip_ratio(ratio, clip) * adv;
    let surrogate = unclipped.min(clipped);
    let active = unclipped <= clipped;
    // d(−surrogate)/d logp.
    let g = if active { -adv * ratio * scale } else { 0.0 };
    for (h, &(o, s)) in layout.heads.iter().enumerate() {
        let legal = rec.mask[o..o + s].iter().filter(|&&b| b).count();
        if legal < 2 {
            continue;
        }
        let mut head_entropy = 0.0;
        for i in 0..s {
            if rec.mask[o + i] && probs[o + i] > 0.0 {
                head_entropy -= probs[o + i] * probs[o + i].ln();
            }
        }
        for i in 0..s {
            if !rec.mask[o + i] {
                continue;
            }
            let p = probs[o + i];
            let onehot = if i == rec.choices[h] { 1.0 } else { 0.0 };
            let mut d = g * (onehot - p);
            if entropy_coef != 0.0 && p > 0.0 {
                // Loss carries −c·H; dH/dz_i = −p_i (ln p_i + H).
                d += entropy_coef * scale * p * (p.ln() + head_entropy);
            }
            dlogits[o + i] += d;
        }
    }
    (surrogate, entropy, ratio, !active || (ratio - clip_ratio(ratio, clip)).abs() > 0.0)
}

/// Runs `epochs` passes of minibatch updates over `buffer`.
pub fn ppo_update<R: Rng>(
    buffer: &TrajectoryBuffer,
    policy: &mut PolicyHeads,
    value_net: &mut DenseNet,
    optims: &mut PpoOptimizers,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<LossReport, DrlError> {
    let n = buffer.len();
    if n == 0 {
        return Ok(LossReport::default());
    }
    let raw_adv = buffer.advantages(config.gamma, config.lambda);
    let returns: Vec<f64> = raw_adv.iter().zip(&buffer.records).map(|(a, r)| a + r.value).collect();
    let adv = if config.normalize_advantages && n > 1 {
        let mean = raw_adv.iter().sum::<f64>() / n as f64;
        let std = (raw_adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        raw_adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
    } else {
        raw_adv
    };
    let width = buffer.records[0].obs.len();
    let k = policy.layout.total();
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = LossReport::default();
    let mut batches = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let b = chunk.len();
            let mut x = Array2::zeros((b, width));
            for (r, &i) in chunk.iter().enumerate() {
                x.row_mut(r).assign(&ArrayView1::from(&buffer.records[i].obs));
            }
            let (logits, trace) = policy.net.forward(x.view())?;
            let mut dlogits = Array2::zeros((b, k));
            let scale = 1.0 / b as f64;
            let (mut surr, mut ent, mut ratio_sum, mut clipped) = (0.0, 0.0, 0.0, 0.0);
            for (r, &i) in chunk.iter().enumerate() {
                let row = logits.row(r);
                let mut drow = vec![0.0; k];
                let (s, e, ratio, c) = policy_terms(
                    row.as_slice().expect("contiguous row"),
                    &buffer.records[i],
                    &policy.layout,
                    adv[i],
                    config.clip,
                    config.entropy_coef,
                    scale,
                    &mut drow,
                );
                dlogits.row_mut(r).assign(&ArrayView1::from(&drow));
                surr += s;
                ent += e;
                ratio_sum += ratio;
                if c {
                    clipped += 1.0;
                }
            }
            let policy_loss = -surr * scale;
            if !policy_loss.is_finite() {
                return Err(DrlError::NonFinite(format!("policy loss {policy_loss}")));
            }
            let (mut grads, _) = policy.net.backward(&trace, dlogits.view())?;
            if let Some(maxn) = config.max_grad_norm {
                grads.clip_global_norm(maxn);
            }
            apply_update(&mut policy.net, &grads, &mut optims.policy)?;

            let (v, vtrace) = value_net.forward(x.view())?;
            let mut dv = Array2::zeros((b, 1));
            let mut vloss = 0.0;
            for (r, &i) in chunk.iter().enumerate() {
                let err = v[[r, 0]] - returns[i];
                vloss += err * err * scale;
                dv[[r, 0]] = 2.0 * config.value_coef * err * scale;
            }
            if !vloss.is_finite() {
                return Err(DrlError::NonFinite(format!("value loss {vloss}")));
            }
            let (mut vgrads, _) = value_net.backward(&vtrace, dv.view())?;
            if let Some(maxn) = config.max_grad_norm {
                vgrads.clip_global_norm(maxn);
            }
            apply_update(value_net, &vgrads, &mut optims.value)?;

            report.policy_loss += policy_loss;
            report.value_loss += vloss;
            report.entropy += ent * scale;
            report.clip_fraction += clipped * scale;
            report.mean_ratio += ratio_sum * scale;
            batches += 1.0;
        }
    }
    report.policy_loss /= batches;
    report.value_loss /= batches;
    report.entropy /= batches;
    report.clip_fraction /= batches;
    report.mean_ratio /= batches;
    Ok(report)
}

/// Policy, behaviour snapshot, critic and optimizer state for one run.
pub struct PpoTrainer {
    pub config: PpoConfig,
    pub policy: PolicyHeads,
    pub old_policy: PolicyHeads,
    pub value_net: DenseNet,
    pub optims: PpoOptimizers,
    pub cursor: RolloutCursor,
    pub rng: ChaCha8Rng,
    pub raw_curve: Vec<f64>,
    pub last_report: LossReport,
}

impl PpoTrainer {
    pub fn new(env: &NetworkEnv, config: PpoConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = env.config();
        let obs_len = cfg.observation_len();
        let policy = PolicyHeads::new(obs_len, cfg.num_bs(), cfg.num_users(), &config.hidden, cfg.scheme.learned_association(), &mut rng);
        let mut dims = vec![obs_len];
        dims.extend_from_slice(&config.hidden);
        dims.push(1);
        let value_net = DenseNet::new(&dims, Activation::Relu, Head::Linear, &mut rng);
        Self {
            optims: PpoOptimizers::new(config.learning_rate),
            old_policy: policy.clone(),
            policy,
            value_net,
            cursor: RolloutCursor::new(seed),
            rng,
            raw_curve: Vec::new(),
            last_report: LossReport::default(),
            config,
        }
    }

    /// One collect-and-update round; returns the mean return of episodes
    /// that finished during the rollout.
    pub fn iteration(&mut self, env: &mut NetworkEnv) -> Result<f64, DrlError> {
        let buffer = collect_rollout(env, &self.old_policy, &self.value_net, self.config.steps_per_iter, &mut self.cursor, &mut self.rng)?;
        self.last_report = ppo_update(&buffer, &mut self.policy, &mut self.value_net, &mut self.optims, &self.config, &mut self.rng)?;
        self.old_policy = self.policy.clone();
        let mean = self.cursor.take_mean_return();
        self.raw_curve.push(mean);
        Ok(mean)
    }

    pub fn controller(&self) -> PpoController {
        PpoController { policy: self.policy.clone() }
    }
}

/// Trains for `config.iterations` iterations from a fresh environment reset.
pub fn train_ppo(env: &mut NetworkEnv, config: PpoConfig, seed: u64) -> Result<PpoTrainer, DrlError> {
    env.reset(episode_seed(seed, 0))?;
    let mut trainer = PpoTrainer::new(env, config, seed);
    for _ in 0..trainer.config.iterations {
        trainer.iteration(env)?;
    }
    Ok(trainer)
}
