//! Base-station sleep-mode automaton, cell-zoom coverage and energy ledger.
//!
//! Modes form a chain `Active – Idle – Micro – Light – Deep`; a BS can only
//! step to a chain neighbour. Timing is kept in integer microseconds and
//! power in integer microwatts so that energy (picojoules) adds up exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Microseconds.
pub type Micros = i64;

#[derive(Debug, Error, PartialEq)]
pub enum BsError {
    #[error("illegal transition {from:?} -> {to:?}")]
    TransitionViolation { from: SmState, to: SmState },
    #[error("invalid power/timing table: {0}")]
    InvalidTable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SmState {
    Active,
    Idle,
    Micro,
    Light,
    Deep,
}

impl SmState {
    pub const ALL: [SmState; 5] = [Self::Active, Self::Idle, Self::Micro, Self::Light, Self::Deep];

    /// Position on the chain, 0 for Active through 4 for Deep.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Index into per-depth timing rows (Micro, Light, Deep).
    fn depth_slot(self) -> Option<usize> {
        match self {
            Self::Micro => Some(0),
            Self::Light => Some(1),
            Self::Deep => Some(2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ZoomLevel {
    ZoomIn,
    NoZoom,
    ZoomOut,
}

impl ZoomLevel {
    pub const ALL: [ZoomLevel; 3] = [Self::ZoomIn, Self::NoZoom, Self::ZoomOut];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// Exact energy in picojoules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Energy(pub i64);

impl Energy {
    pub const ZERO: Energy = Energy(0);

    pub fn joules(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    /// Power (µW) held for `duration` µs.
    pub fn of(power_uw: i64, duration: Micros) -> Self {
        Energy(power_uw * duration)
    }
}

impl std::ops::Add for Energy {
    type Output = Energy;
    fn add(self, rhs: Energy) -> Energy {
        Energy(self.0 + rhs.0)
    }
}

impl std::ops::AddAssign for Energy {
    fn add_assign(&mut self, rhs: Energy) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Energy {
    fn sum<I: Iterator<Item = Energy>>(iter: I) -> Energy {
        Energy(iter.map(|e| e.0).sum())
    }
}

pub fn watts_to_uw(w: f64) -> i64 {
    (w * 1e6).round() as i64
}

pub fn ms_to_us(ms: f64) -> Micros {
    (ms * 1e3).round() as Micros
}

/// Power draw and timing per mode. Watts and milliseconds on the wire;
/// resolution is 1 µW and 1 µs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerTimingTable {
    pub active_zoom_out_w: f64,
    pub active_no_zoom_w: f64,
    pub active_zoom_in_w: f64,
    pub idle_w: f64,
    pub micro_w: f64,
    pub light_w: f64,
    pub deep_w: f64,
    /// Micro, Light, Deep.
    pub transition_ms: [f64; 3],
    /// Micro, Light, Deep.
    pub hold_ms: [f64; 3],
}

impl Default for PowerTimingTable {
    fn default() -> Self {
        Self {
            active_zoom_out_w: 7.3,
            active_no_zoom_w: 6.9,
            active_zoom_in_w: 6.6,
            idle_w: 2.3,
            micro_w: 1.5,
            light_w: 0.4,
            deep_w: 0.3,
            transition_ms: [0.071, 1.0, 10.0],
            hold_ms: [0.07, 1.0, 0.0],
        }
    }
}

impl PowerTimingTable {
    /// Powers must strictly decrease from Active(out) down to Deep and all
    /// times must be non-negative.
    pub fn validate(&self) -> Result<(), BsError> {
        let chain = [
            ("active_zoom_out_w", self.active_zoom_out_w),
            ("active_no_zoom_w", self.active_no_zoom_w),
            ("active_zoom_in_w", self.active_zoom_in_w),
            ("idle_w", self.idle_w),
            ("micro_w", self.micro_w),
            ("light_w", self.light_w),
            ("deep_w", self.deep_w),
        ];
        for (name, w) in chain {
            if !w.is_finite() || w < 0.0 {
                return Err(BsError::InvalidTable(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        for pair in chain.windows(2) {
            if watts_to_uw(pair[0].1) <= watts_to_uw(pair[1].1) {
                return Err(BsError::InvalidTable(format!(
                    "{} ({} W) must exceed {} ({} W)",
                    pair[0].0, pair[0].1, pair[1].0, pair[1].1
                )));
            }
        }
        for (name, row) in [("transition_ms", &self.transition_ms), ("hold_ms", &self.hold_ms)] {
            if row.iter().any(|t| !t.is_finite() || *t < 0.0) {
                return Err(BsError::InvalidTable(format!("{name} entries must be finite and >= 0")));
            }
        }
        Ok(())
    }

    /// Draw in µW for a mode; zoom only matters while Active.
    pub fn power_uw(&self, mode: SmState, zoom: ZoomLevel) -> i64 {
        let w = match (mode, zoom) {
            (SmState::Active, ZoomLevel::ZoomOut) => self.active_zoom_out_w,
            (SmState::Active, ZoomLevel::NoZoom) => self.active_no_zoom_w,
            (SmState::Active, ZoomLevel::ZoomIn) => self.active_zoom_in_w,
            (SmState::Idle, _) => self.idle_w,
            (SmState::Micro, _) => self.micro_w,
            (SmState::Light, _) => self.light_w,
            (SmState::Deep, _) => self.deep_w,
        };
        watts_to_uw(w)
    }

    /// Duration of a step between two chain neighbours; Active↔Idle is free.
    pub fn transition_us(&self, a: SmState, b: SmState) -> Micros {
        let deeper = a.max(b);
        deeper.depth_slot().map_or(0, |i| ms_to_us(self.transition_ms[i]))
    }

    pub fn hold_us(&self, mode: SmState) -> Micros {
        mode.depth_slot().map_or(0, |i| ms_to_us(self.hold_ms[i]))
    }
}

/// Coverage radii in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageRadii {
    pub zoom_in: f64,
    pub no_zoom: f64,
    pub zoom_out: f64,
}

impl Default for CoverageRadii {
    fn default() -> Self {
        Self { zoom_in: 40.0, no_zoom: 50.0, zoom_out: 60.0 }
    }
}

impl CoverageRadii {
    pub fn radius(&self, zoom: ZoomLevel) -> f64 {
        match zoom {
            ZoomLevel::ZoomIn => self.zoom_in,
            ZoomLevel::NoZoom => self.no_zoom,
            ZoomLevel::ZoomOut => self.zoom_out,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.zoom_in > 0.0 && self.zoom_in <= self.no_zoom && self.no_zoom <= self.zoom_out) {
            return Err("radii must satisfy 0 < zoom_in <= no_zoom <= zoom_out".into());
        }
        Ok(())
    }
}

/// Radius under the default radii.
pub fn coverage_radius(zoom: ZoomLevel) -> f64 {
    CoverageRadii::default().radius(zoom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub target: SmState,
    pub remaining: Micros,
    pub start_mode: SmState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BsStatus {
    pub mode: SmState,
    pub zoom: ZoomLevel,
    pub transition: Option<Transition>,
    pub hold_remaining: Micros,
}

impl Default for BsStatus {
    fn default() -> Self {
        Self::active()
    }
}

impl BsStatus {
    pub fn active() -> Self {
        Self { mode: SmState::Active, zoom: ZoomLevel::NoZoom, transition: None, hold_remaining: 0 }
    }

    pub fn in_mode(mode: SmState) -> Self {
        Self { mode, ..Self::active() }
    }

    pub fn in_transition(&self) -> bool {
        self.transition.is_some()
    }

    /// Only a settled Active BS carries traffic.
    pub fn can_serve(&self) -> bool {
        self.mode == SmState::Active && self.transition.is_none()
    }
}

/// Targets reachable from `status` this decision epoch. Includes the current
/// mode (stay) unless a transition is in flight.
pub fn legal_targets(status: &BsStatus) -> Vec<SmState> {
    if status.in_transition() {
        return Vec::new();
    }
    if status.hold_remaining > 0 {
        return vec![status.mode];
    }
    let i = status.mode.index();
    SmState::ALL
        .iter()
        .copied()
        .filter(|s| s.index().abs_diff(i) <= 1)
        .collect()
}

pub fn is_legal_target(status: &BsStatus, target: SmState) -> bool {
    if status.in_transition() {
        return false;
    }
    if status.hold_remaining > 0 {
        return target == status.mode;
    }
    target.index().abs_diff(status.mode.index()) <= 1
}

fn arrive(status: &mut BsStatus, mode: SmState, table: &PowerTimingTable) {
    status.mode = mode;
    status.transition = None;
    status.hold_remaining = table.hold_us(mode);
    if mode == SmState::Active {
        status.zoom = ZoomLevel::NoZoom;
    }
}

pub fn begin_transition(
    status: &BsStatus,
    target: SmState,
    table: &PowerTimingTable,
) -> Result<BsStatus, BsError> {
    if !is_legal_target(status, target) {
        return Err(BsError::TransitionViolation { from: status.mode, to: target });
    }
    let mut next = *status;
    if target == status.mode {
        return Ok(next);
    }
    let time = table.transition_us(status.mode, target);
    if time == 0 {
        arrive(&mut next, target, table);
    } else {
        next.transition = Some(Transition { target, remaining: time, start_mode: status.mode });
        next.hold_remaining = 0;
    }
    Ok(next)
}

/// Energy of one BS for one slot, split by where it was spent.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SlotEnergy {
    pub dwell: Energy,
    pub transition: Energy,
    pub dwell_time: Micros,
    pub transition_time: Micros,
}

impl SlotEnergy {
    pub fn total(&self) -> Energy {
        self.dwell + self.transition
    }
}

/// Runs `status` forward by `slot_len` µs. Any pending transition time is
/// consumed first at the start mode's draw; the rest is dwell in whatever
/// mode the BS is in afterwards.
pub fn advance_slot(status: &BsStatus, table: &PowerTimingTable, slot_len: Micros) -> (BsStatus, SlotEnergy) {
    assert!(slot_len > 0, "slot length must be positive");
    let mut next = *status;
    let mut out = SlotEnergy::default();
    let mut left = slot_len;
    if let Some(mut tr) = next.transition {
        let spend = tr.remaining.min(left);
        out.transition = Energy::of(table.power_uw(tr.start_mode, next.zoom), spend);
        out.transition_time = spend;
        tr.remaining -= spend;
        left -= spend;
        if tr.remaining == 0 {
            arrive(&mut next, tr.target, table);
        } else {
            next.transition = Some(tr);
        }
    }
    if left > 0 {
        out.dwell = Energy::of(table.power_uw(next.mode, next.zoom), left);
        out.dwell_time = left;
        next.hold_remaining = (next.hold_remaining - left).max(0);
    }
    debug_assert_eq!(out.dwell_time + out.transition_time, slot_len);
    (next, out)
}

/// Cumulative energy of one BS with its per-slot history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    pub cumulative: Energy,
    pub slots: Vec<SlotEnergy>,
}

impl EnergyLedger {
    pub fn record(&mut self, slot: SlotEnergy) {
        self.cumulative += slot.total();
        self.slots.push(slot);
    }

    /// Sum over the recorded history; equals `cumulative` by construction.
    pub fn recomputed(&self) -> Energy {
        self.slots.iter().map(SlotEnergy::total).sum()
    }
}

/// Static RIS draw in µW for `elements` elements at `element_w` watts each.
pub fn ris_power_uw(elements: usize, element_w: f64) -> i64 {
    watts_to_uw(element_w) * elements as i64
}

/// Sum over BS ledgers plus the surface's static draw over `elapsed` µs.
pub fn system_energy(ledgers: &[EnergyLedger], ris_power_uw: Option<i64>, elapsed: Micros) -> Energy {
    let bs: Energy = ledgers.iter().map(|l| l.cumulative).sum();
    bs + ris_power_uw.map_or(Energy::ZERO, |p| Energy::of(p, elapsed))
}
