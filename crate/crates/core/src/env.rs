//! The slot-level decision process: observation encoding, action masks,
//! the step loop and the reward.
//!
//! The channel stored in the state is the realization that the *next* call
//! to [`NetworkEnv::step`] will use, so the policy sees the channel it is
//! deciding for. The surface phases for that realization are chosen when it
//! is drawn.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bspower::{
    self, advance_slot, begin_transition, is_legal_target, BsStatus, CoverageRadii, Energy, EnergyLedger, Micros,
    PowerTimingTable, SmState, ZoomLevel,
};
use crate::dccn::Dccn;
use crate::netmodel::{link_rate, ChannelRealization, LinkParams, NetError, NetworkGeometry, RisConfig};
use crate::traffic::{QueueState, TrafficConfig, TrafficSource};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action violates constraints: {0}")]
    Constraint(String),
    #[error("non-finite observation feature at index {0}")]
    Encoding(usize),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// Always active, no zoom, no surface.
    AA,
    /// Learned zoom and association; BSs never sleep.
    PZ,
    /// Learned sleep modes; fixed radius and nearest-covering association.
    PS,
    /// Learned sleep, zoom and association without the surface.
    PSZ,
    /// Learned sleep, zoom and association with the surface (PPO).
    PSZR,
    /// Same environment as PSZR driven by a DQN.
    DSZR,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [Self::AA, Self::PZ, Self::PS, Self::PSZ, Self::PSZR, Self::DSZR];

    pub fn sleep_enabled(self) -> bool {
        !matches!(self, Self::AA | Self::PZ)
    }

    pub fn zoom_enabled(self) -> bool {
        !matches!(self, Self::AA | Self::PS)
    }

    pub fn ris_enabled(self) -> bool {
        matches!(self, Self::PSZR | Self::DSZR)
    }

    /// Association chosen by the learner rather than nearest-covering.
    pub fn learned_association(self) -> bool {
        matches!(self, Self::PZ | Self::PSZ | Self::PSZR)
    }

    pub fn learner(self) -> Learner {
        match self {
            Self::AA => Learner::None,
            Self::DSZR => Learner::Dqn,
            _ => Learner::Ppo,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AA => "AA",
            Self::PZ => "PZ",
            Self::PS => "PS",
            Self::PSZ => "PSZ",
            Self::PSZR => "PSZR",
            Self::DSZR => "DSZR",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|x| x.name().eq_ignore_ascii_case(s))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Learner {
    None,
    Ppo,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardParams {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub l4: f64,
    /// ms.
    pub d_max: f64,
    /// Watts; `None` means `M × micro-sleep power`.
    pub p_sm1: Option<f64>,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self { l1: -1.0, l2: 2.0, l3: -20.0, l4: 1.0, d_max: 10.0, p_sm1: None }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        for (name, v) in [("l1", self.l1), ("l2", self.l2), ("l3", self.l3), ("l4", self.l4)] {
            if !v.is_finite() {
                return Err((name, format!("must be finite, got {v}")));
            }
        }
        if !(self.d_max > 0.0) {
            return Err(("d_max", format!("must be > 0, got {}", self.d_max)));
        }
        if let Some(p) = self.p_sm1 {
            if !(p > 0.0) {
                return Err(("p_sm1", format!("must be > 0, got {p}")));
            }
        }
        Ok(())
    }
}

/// Which branch of the reward fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RewardBranch {
    EmptyHighPower,
    EmptyLowPower,
    LateDelivery,
    OnTime,
}

pub fn reward_branch(slot_power: f64, pending: u64, worst_delay: f64, d_max: f64, p_sm1: f64) -> RewardBranch {
    if pending == 0 {
        if slot_power >= p_sm1 {
            RewardBranch::EmptyHighPower
        } else {
            RewardBranch::EmptyLowPower
        }
    } else if worst_delay >= d_max {
        RewardBranch::LateDelivery
    } else {
        RewardBranch::OnTime
    }
}

/// `pending = 0`: L1 when the slot drew at least `p_sm1`, else L2.
/// `pending > 0`: L3 when the worst delay reached `d_max`, else L4.
pub fn reward(slot_power: f64, pending: u64, worst_delay: f64, params: &RewardParams, p_sm1: f64) -> f64 {
    match reward_branch(slot_power, pending, worst_delay, params.d_max, p_sm1) {
        RewardBranch::EmptyHighPower => params.l1,
        RewardBranch::EmptyLowPower => params.l2,
        RewardBranch::LateDelivery => params.l3,
        RewardBranch::OnTime => params.l4,
    }
}

/// How the surface is configured each slot.
#[derive(Debug, Clone)]
pub enum RisMode {
    Disabled,
    Fixed(RisConfig),
    Learned(Arc<Dccn>),
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub scheme: Scheme,
    pub geometry: NetworkGeometry,
    pub link: LinkParams,
    pub table: PowerTimingTable,
    pub radii: CoverageRadii,
    pub traffic: TrafficConfig,
    pub reward: RewardParams,
    pub slot_ms: f64,
    pub episode_len: u64,
    pub ris_element_power_w: f64,
    /// Deepest sleep mode the learner may use.
    pub max_sleep_depth: SmState,
    /// Only the first `user_count` users generate traffic (all when `None`).
    pub user_count: Option<usize>,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::PSZR,
            geometry: NetworkGeometry::default(),
            link: LinkParams::default(),
            table: PowerTimingTable::default(),
            radii: CoverageRadii::default(),
            traffic: TrafficConfig::default(),
            reward: RewardParams::default(),
            slot_ms: 1.0,
            episode_len: 200,
            ris_element_power_w: 1.5e-3,
            max_sleep_depth: SmState::Deep,
            user_count: None,
        }
    }
}

impl EnvConfig {
    pub fn num_bs(&self) -> usize {
        self.geometry.num_bs()
    }

    pub fn num_users(&self) -> usize {
        self.geometry.num_users()
    }

    pub fn p_sm1(&self) -> f64 {
        self.reward.p_sm1.unwrap_or(self.num_bs() as f64 * self.table.micro_w)
    }

    pub fn slot_us(&self) -> Micros {
        bspower::ms_to_us(self.slot_ms)
    }

    pub fn ris_power_uw(&self) -> Option<i64> {
        self.scheme
            .ris_enabled()
            .then(|| bspower::ris_power_uw(self.geometry.ris_elements, self.ris_element_power_w))
    }

    /// Users that generate traffic: inside the first `user_count` and within
    /// the un-zoomed radius of at least one BS.
    pub fn traffic_users(&self) -> Vec<bool> {
        let limit = self.user_count.unwrap_or(self.num_users());
        (0..self.num_users())
            .map(|n| {
                n < limit
                    && (0..self.num_bs()).any(|m| self.geometry.bs_user_distance(m, n) <= self.radii.no_zoom)
            })
            .collect()
    }

    pub fn observation_len(&self) -> usize {
        observation_len(self.num_bs(), self.num_users())
    }
}

pub fn observation_len(m: usize, n: usize) -> usize {
    1 + m * n + 5 * m + 1
}

/// Decision for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpAction {
    pub sm_targets: Vec<SmState>,
    pub zooms: Vec<ZoomLevel>,
    /// Serving BS per user.
    pub association: Vec<Option<usize>>,
}

impl MdpAction {
    /// The `M × N` indicator matrix.
    pub fn association_matrix(&self, m: usize) -> Array2<u8> {
        let mut z = Array2::zeros((m, self.association.len()));
        for (n, a) in self.association.iter().enumerate() {
            if let Some(bs) = a {
                z[[*bs, n]] = 1;
            }
        }
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdpState {
    pub pending: u64,
    /// `M × N` effective power gains `|h_eff|²` for the upcoming slot.
    pub gains: Array2<f64>,
    pub sm_vector: Vec<SmState>,
    pub slot: u64,
}

/// Legal per-BS choices. Association candidates depend on the projected
/// statuses and are produced by [`NetworkEnv::association_candidates`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMask {
    pub sm: Vec<[bool; 5]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub energy: Energy,
    pub violations: u64,
    pub modes: Vec<SmState>,
    pub pending: u64,
    pub worst_delay_ms: f64,
    pub branch: RewardBranch,
    pub active_bs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next: MdpState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Log-gain range mapped onto [-1, 1].
const LOG_GAIN_LO: f64 = -10.0;
const LOG_GAIN_HI: f64 = -2.0;

#[derive(Debug, Clone)]
pub struct NetworkEnv {
    cfg: Arc<EnvConfig>,
    ris: RisMode,
    channel_rng: ChaCha8Rng,
    traffic: TrafficSource,
    pub queues: QueueState,
    statuses: Vec<BsStatus>,
    ledgers: Vec<EnergyLedger>,
    channel: ChannelRealization,
    ris_config: Option<RisConfig>,
    gains: Array2<f64>,
    slot: u64,
    ris_energy: Energy,
    traffic_users: Vec<bool>,
    pub constraint_violations: u64,
}

impl NetworkEnv {
    pub fn new(cfg: Arc<EnvConfig>, ris: RisMode, seed: u64) -> Result<Self, EnvError> {
        cfg.geometry.validate()?;
        let traffic_users = cfg.traffic_users();
        let m = cfg.num_bs();
        let n = cfg.num_users();
        let ris = if cfg.scheme.ris_enabled() { ris } else { RisMode::Disabled };
        let mut env = Self {
            traffic: TrafficSource::new(cfg.traffic.clone(), cfg.slot_ms, seed, traffic_users.clone()),
            queues: QueueState::new(n),
            statuses: vec![BsStatus::active(); m],
            ledgers: vec![EnergyLedger::default(); m],
            channel: ChannelRealization {
                direct: Array2::zeros((m, n)),
                bs_to_ris: Array2::zeros((cfg.geometry.ris_elements, m)),
                ris_to_user: Array2::zeros((n, cfg.geometry.ris_elements)),
            },
            ris_config: None,
            gains: Array2::zeros((m, n)),
            slot: 0,
            ris_energy: Energy::ZERO,
            channel_rng: ChaCha8Rng::seed_from_u64(seed),
            traffic_users,
            constraint_violations: 0,
            cfg,
            ris,
        };
        env.reset(seed)?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn statuses(&self) -> &[BsStatus] {
        &self.statuses
    }

    pub fn ledgers(&self) -> &[EnergyLedger] {
        &self.ledgers
    }

    pub fn channel(&self) -> &ChannelRealization {
        &self.channel
    }

    pub fn ris_config(&self) -> Option<&RisConfig> {
        self.ris_config.as_ref()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn traffic_users(&self) -> &[bool] {
        &self.traffic_users
    }

    /// Everything consumed since the last reset.
    pub fn system_energy(&self) -> Energy {
        let elapsed = self.slot as Micros * self.cfg.slot_us();
        bspower::system_energy(&self.ledgers, self.cfg.ris_power_uw(), elapsed)
    }

    pub fn reset(&mut self, seed: u64) -> Result<MdpState, EnvError> {
        let cfg = self.cfg.clone();
        self.channel_rng = ChaCha8Rng::seed_from_u64(seed);
        self.channel_rng.set_stream(7);
        self.traffic = TrafficSource::new(cfg.traffic.clone(), cfg.slot_ms, seed, self.traffic_users.clone());
        self.queues = QueueState::new(cfg.num_users());
        self.statuses = vec![BsStatus::active(); cfg.num_bs()];
        self.ledgers = vec![EnergyLedger::default(); cfg.num_bs()];
        self.slot = 0;
        self.ris_energy = Energy::ZERO;
        self.constraint_violations = 0;
        self.draw_channel()?;
        Ok(self.state())
    }

    fn draw_channel(&mut self) -> Result<(), EnvError> {
        self.channel = ChannelRealization::sample(&self.cfg.geometry, &self.cfg.link, &mut self.channel_rng)?;
        self.ris_config = match &self.ris {
            RisMode::Disabled => None,
            RisMode::Fixed(c) => Some(c.clone()),
            RisMode::Learned(dccn) => Some(dccn.infer_phases(&self.channel)),
        };
        self.gains = self.channel.effective_matrix(self.ris_config.as_ref()).mapv(|h| h.norm_sqr());
        Ok(())
    }

    pub fn state(&self) -> MdpState {
        MdpState {
            pending: self.queues.pending_load(),
            gains: self.gains.clone(),
            sm_vector: self.statuses.iter().map(|s| s.mode).collect(),
            slot: self.slot,
        }
    }

    /// Feature vector with layout
    /// `[pending, gains (M·N, row-major), one-hot mode (5 per BS), slot / T]`.
    pub fn observe(&self, state: &MdpState) -> Result<Vec<f64>, EnvError> {
        let norm = (self.cfg.traffic.packet_bits() as f64 * self.cfg.num_users() as f64).max(1.0);
        encode_observation(state, norm, self.cfg.episode_len)
    }

    pub fn action_mask(&self) -> ActionMask {
        action_mask(&self.statuses, self.cfg.scheme, self.cfg.max_sleep_depth)
    }

    /// Statuses after applying the SM targets and zooms, or the first
    /// offending BS.
    pub fn project(&self, sm_targets: &[SmState], zooms: &[ZoomLevel]) -> Result<Vec<BsStatus>, EnvError> {
        project_statuses(&self.statuses, &self.cfg, sm_targets, zooms)
    }

    /// Zooms selectable for each BS given its projected status.
    pub fn zoom_options(&self, projected: &[BsStatus]) -> Vec<[bool; 3]> {
        zoom_options(projected, self.cfg.scheme)
    }

    /// For each user, the BSs that may serve it under `projected` statuses.
    pub fn association_candidates(&self, projected: &[BsStatus], zooms: &[ZoomLevel]) -> Vec<Vec<usize>> {
        association_candidates(&self.cfg, projected, zooms)
    }

    /// Nearest covering serving BS for every user.
    pub fn nearest_association(&self, projected: &[BsStatus], zooms: &[ZoomLevel]) -> Vec<Option<usize>> {
        let g = &self.cfg.geometry;
        association_candidates(&self.cfg, projected, zooms)
            .into_iter()
            .enumerate()
            .map(|(n, cands)| {
                cands
                    .into_iter()
                    .min_by(|&a, &b| g.bs_user_distance(a, n).total_cmp(&g.bs_user_distance(b, n)))
            })
            .collect()
    }

    pub fn validate_action(&self, action: &MdpAction) -> Result<Vec<BsStatus>, EnvError> {
        let (m, n) = (self.cfg.num_bs(), self.cfg.num_users());
        if action.sm_targets.len() != m || action.zooms.len() != m || action.association.len() != n {
            return Err(EnvError::Constraint("action dimensions do not match the network".into()));
        }
        let mask = self.action_mask();
        for (i, t) in action.sm_targets.iter().enumerate() {
            if !mask.sm[i][t.index()] {
                return Err(EnvError::Constraint(format!("BS {i}: target {t:?} not allowed")));
            }
        }
        let projected = self.project(&action.sm_targets, &action.zooms)?;
        let zopts = self.zoom_options(&projected);
        for (i, z) in action.zooms.iter().enumerate() {
            if !zopts[i][z.index()] {
                return Err(EnvError::Constraint(format!("BS {i}: zoom {z:?} not allowed")));
            }
        }
        let cands = self.association_candidates(&projected, &action.zooms);
        for (u, a) in action.association.iter().enumerate() {
            if let Some(bs) = a {
                if !cands[u].contains(bs) {
                    return Err(EnvError::Constraint(format!("user {u}: BS {bs} cannot serve it")));
                }
            }
        }
        Ok(projected)
    }

    pub fn step(&mut self, action: &MdpAction) -> Result<StepOutcome, EnvError> {
        let projected = match self.validate_action(action) {
            Ok(p) => p,
            Err(e) => {
                self.constraint_violations += 1;
                return Err(e);
            }
        };
        let cfg = self.cfg.clone();
        let (m, n) = (cfg.num_bs(), cfg.num_users());
        self.statuses = projected;
        for (i, z) in action.zooms.iter().enumerate() {
            self.statuses[i].zoom = *z;
        }

        // Arrivals, then serve on equal shares of the BS bandwidth among
        // associated users that have something queued.
        let t = self.slot;
        self.queues.begin_slot();
        for p in self.traffic.generate_arrivals(t) {
            self.queues.push(p);
        }
        let mut share = vec![0usize; m];
        for u in 0..n {
            if let Some(bs) = action.association[u] {
                if self.queues.has_backlog(u) {
                    share[bs] += 1;
                }
            }
        }
        for u in 0..n {
            let Some(bs) = action.association[u] else { continue };
            if !self.queues.has_backlog(u) {
                continue;
            }
            let bw = cfg.link.total_bandwidth / share[bs] as f64;
            let rate = link_rate(snr_from_gain(self.gains[[bs, u]], &cfg.link), bw);
            self.queues.serve(u, rate, cfg.slot_ms, cfg.slot_ms, t);
        }

        let slot_us = cfg.slot_us();
        let mut energy = Energy::ZERO;
        for i in 0..m {
            let (next, e) = advance_slot(&self.statuses[i], &cfg.table, slot_us);
            self.statuses[i] = next;
            self.ledgers[i].record(e);
            energy += e.total();
        }
        if let Some(p) = cfg.ris_power_uw() {
            let e = Energy::of(p, slot_us);
            self.ris_energy += e;
            energy += e;
        }

        let now = t + 1;
        let pending = self.queues.pending_load();
        let worst = self.queues.max_outstanding_delay(now, cfg.slot_ms);
        let violations = self.queues.mark_violations(now, cfg.slot_ms, cfg.reward.d_max);
        let slot_power = energy.joules() / (cfg.slot_ms * 1e-3);
        let branch = reward_branch(slot_power, pending, worst, cfg.reward.d_max, cfg.p_sm1());
        let r = reward(slot_power, pending, worst, &cfg.reward, cfg.p_sm1());

        self.slot = now;
        let done = self.slot >= cfg.episode_len;
        self.draw_channel()?;
        let next = self.state();
        Ok(StepOutcome {
            reward: r,
            done,
            info: StepInfo {
                energy,
                violations,
                modes: next.sm_vector.clone(),
                pending,
                worst_delay_ms: worst,
                branch,
                active_bs: self.statuses.iter().filter(|s| s.mode == SmState::Active).count(),
            },
            next,
        })
    }

    /// The action every scheme falls back to: keep modes, no zoom change,
    /// nearest covering association.
    pub fn stay_action(&self) -> MdpAction {
        let sm: Vec<SmState> = self.statuses.iter().map(|s| s.mode).collect();
        let zooms: Vec<ZoomLevel> = self
            .statuses
            .iter()
            .map(|s| if s.can_serve() && self.cfg.scheme.zoom_enabled() { s.zoom } else { ZoomLevel::NoZoom })
            .collect();
        let projected = self.project(&sm, &zooms).expect("staying is always legal");
        let association = self.nearest_association(&projected, &zooms);
        MdpAction { sm_targets: sm, zooms, association }
    }
}

/// SNR from an effective power gain `|h|²`.
pub fn snr_from_gain(gain: f64, link: &LinkParams) -> f64 {
    link.tx_power * gain / link.noise_power
}

pub fn encode_observation(state: &MdpState, pending_norm: f64, episode_len: u64) -> Result<Vec<f64>, EnvError> {
    let m = state.sm_vector.len();
    let n = state.gains.ncols();
    let mut out = Vec::with_capacity(observation_len(m, n));
    out.push((state.pending as f64 / pending_norm).min(10.0));
    let span = LOG_GAIN_HI - LOG_GAIN_LO;
    for g in state.gains.iter() {
        let lg = if *g > 0.0 { g.log10() } else { LOG_GAIN_LO };
        let c = lg.clamp(LOG_GAIN_LO, LOG_GAIN_HI);
        out.push(2.0 * (c - LOG_GAIN_LO) / span - 1.0);
    }
    for mode in &state.sm_vector {
        let mut one_hot = [0.0; 5];
        one_hot[mode.index()] = 1.0;
        out.extend_from_slice(&one_hot);
    }
    out.push(state.slot as f64 / episode_len.max(1) as f64);
    if let Some(i) = out.iter().position(|x| !x.is_finite()) {
        return Err(EnvError::Encoding(i));
    }
    Ok(out)
}

/// SM targets allowed per BS under the scheme's capabilities.
pub fn action_mask(statuses: &[BsStatus], scheme: Scheme, max_depth: SmState) -> ActionMask {
    let sm = statuses
        .iter()
        .map(|s| {
            let mut row = [false; 5];
            if s.in_transition() || !scheme.sleep_enabled() {
                row[s.mode.index()] = true;
                return row;
            }
            for t in SmState::ALL {
                row[t.index()] = is_legal_target(s, t) && (t <= max_depth || t == s.mode);
            }
            row
        })
        .collect();
    ActionMask { sm }
}

pub fn project_statuses(
    statuses: &[BsStatus],
    cfg: &EnvConfig,
    sm_targets: &[SmState],
    zooms: &[ZoomLevel],
) -> Result<Vec<BsStatus>, EnvError> {
    statuses
        .iter()
        .zip(sm_targets)
        .zip(zooms)
        .enumerate()
        .map(|(i, ((s, t), z))| {
            let mut next = if s.in_transition() && *t == s.mode {
                *s
            } else {
                begin_transition(s, *t, &cfg.table)
                    .map_err(|e| EnvError::Constraint(format!("BS {i}: {e}")))?
            };
            if next.can_serve() {
                next.zoom = *z;
            }
            Ok(next)
        })
        .collect()
}

/// All three zooms while the projected BS is serving and the scheme zooms;
/// otherwise only `NoZoom`.
pub fn zoom_options(projected: &[BsStatus], scheme: Scheme) -> Vec<[bool; 3]> {
    projected
        .iter()
        .map(|s| {
            if s.can_serve() && scheme.zoom_enabled() {
                [true; 3]
            } else {
                [false, true, false]
            }
        })
        .collect()
}

pub fn association_candidates(cfg: &EnvConfig, projected: &[BsStatus], zooms: &[ZoomLevel]) -> Vec<Vec<usize>> {
    (0..cfg.num_users())
        .map(|n| {
            (0..cfg.num_bs())
                .filter(|&m| {
                    projected[m].can_serve() && cfg.geometry.bs_user_distance(m, n) <= cfg.radii.radius(zooms[m])
                })
                .collect()
        })
        .collect()
}
