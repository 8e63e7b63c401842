//! Fast in-process property checks behind the `selftest` subcommand.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ExperimentConfig;
use crate::bspower::{PowerTimingTable, SmState};
use crate::drl::{clip_ratio, compute_gae};
use crate::env::{EnvConfig, MdpAction, NetworkEnv, RisMode, Scheme};
use crate::netmodel::{quantize_phase, RisConfig};
use crate::neural::{Activation, DenseNet, Head};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(), String>) -> CheckResult {
    match f() {
        Ok(()) => CheckResult { name, passed: true, detail: String::new() },
        Err(detail) => CheckResult { name, passed: false, detail },
    }
}

/// Uniformly random legal action: SM, then zoom, then association.
pub fn random_legal_action<R: Rng>(env: &NetworkEnv, rng: &mut R) -> MdpAction {
    let pick = |row: &[bool], rng: &mut R| {
        let legal: Vec<usize> = (0..row.len()).filter(|&i| row[i]).collect();
        legal[rng.random_range(0..legal.len())]
    };
    let mask = env.action_mask();
    let sm: Vec<SmState> = mask.sm.iter().map(|r| SmState::from_index(pick(r, rng)).expect("5-way")).collect();
    let placeholder = vec![crate::bspower::ZoomLevel::NoZoom; sm.len()];
    let projected = env.project(&sm, &placeholder).expect("masked targets project");
    let zooms: Vec<_> = env
        .zoom_options(&projected)
        .iter()
        .map(|r| crate::bspower::ZoomLevel::from_index(pick(r, rng)).expect("3-way"))
        .collect();
    let projected = env.project(&sm, &zooms).expect("masked targets project");
    let association = env
        .association_candidates(&projected, &zooms)
        .into_iter()
        .map(|c| {
            let k = rng.random_range(0..=c.len());
            if k == c.len() {
                None
            } else {
                Some(c[k])
            }
        })
        .collect();
    MdpAction { sm_targets: sm, zooms, association }
}

fn ledger_conservation() -> Result<(), String> {
    let cfg = EnvConfig { scheme: Scheme::PSZR, ..EnvConfig::default() };
    let mut env = NetworkEnv::new(Arc::new(cfg), RisMode::Fixed(RisConfig::zeros(128, 3)), 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut total = crate::bspower::Energy::ZERO;
    for _ in 0..env.config().episode_len {
        let a = random_legal_action(&env, &mut rng);
        total += env.step(&a).map_err(|e| e.to_string())?.info.energy;
    }
    let slot_us = env.config().slot_us();
    for l in env.ledgers() {
        if l.recomputed() != l.cumulative {
            return Err("ledger history does not sum to its total".into());
        }
        if l.slots.iter().any(|s| s.dwell_time + s.transition_time != slot_us) {
            return Err("slot durations do not partition the slot".into());
        }
    }
    if total != env.system_energy() {
        return Err(format!("step energies {:?} != system energy {:?}", total, env.system_energy()));
    }
    Ok(())
}

fn power_ordering() -> Result<(), String> {
    let bad = PowerTimingTable { light_w: 2.0, ..PowerTimingTable::default() };
    if bad.validate().is_ok() {
        return Err("out-of-order table accepted".into());
    }
    PowerTimingTable::default().validate().map_err(|e| e.to_string())
}

fn gae_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10;
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let nv: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let d: Vec<bool> = (0..n).map(|i| i == 4).collect();
    let (g, l) = (0.98, 0.95);
    let a = compute_gae(&r, &v, &nv, &d, g, l);
    for t in 0..n {
        let mut want = 0.0;
        let mut w = 1.0;
        for k in t..n {
            let delta = r[k] + g * nv[k] * if d[k] { 0.0 } else { 1.0 } - v[k];
            want += w * delta;
            if d[k] {
                break;
            }
            w *= g * l;
        }
        if (a[t] - want).abs() > 1e-12 {
            return Err(format!("t={t}: {} vs {want}", a[t]));
        }
    }
    Ok(())
}

fn clip_cases() -> Result<(), String> {
    let cases = [(1.5, 1.2), (0.5, 0.8), (1.0, 1.0)];
    for (h, want) in cases {
        if (clip_ratio(h, 0.2) - want).abs() > 1e-15 {
            return Err(format!("clip({h}) = {}", clip_ratio(h, 0.2)));
        }
    }
    Ok(())
}

fn quantize_idempotent() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let x = rng.random_range(-20.0..20.0);
        for bits in 1..=4 {
            let q = quantize_phase(x, bits);
            if quantize_phase(q, bits) != q {
                return Err(format!("x={x} bits={bits}"));
            }
        }
    }
    Ok(())
}

fn config_round_trip() -> Result<(), String> {
    let mut cfg = ExperimentConfig { scheme: Scheme::PS, seeds: vec![7], ..ExperimentConfig::default() };
    cfg.traffic.mean_interarrival = 30.0;
    let back = ExperimentConfig::from_json(&cfg.to_json()).map_err(|e| e.to_string())?;
    if back != cfg {
        return Err("config changed across serialization".into());
    }
    Ok(())
}

fn backprop_finite_differences() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let net = DenseNet::new(&[3, 5, 2], Activation::Tanh, Head::Linear, &mut rng);
    let x = Array2::from_shape_fn((2, 3), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
    let loss = |n: &DenseNet| n.predict(x.view()).map(|o| o.mapv(|v| v * v).sum()).unwrap_or(f64::NAN);
    let (out, trace) = net.forward(x.view()).map_err(|e| e.to_string())?;
    let (grads, _) = net.backward(&trace, (&out * 2.0).view()).map_err(|e| e.to_string())?;
    let h = 1e-6;
    for l in 0..net.num_layers() {
        for idx in 0..net.weights[l].len() {
            let (i, j) = (idx / net.weights[l].ncols(), idx % net.weights[l].ncols());
            let mut up = net.clone();
            up.weights[l][[i, j]] += h;
            let mut dn = net.clone();
            dn.weights[l][[i, j]] -= h;
            let num = (loss(&up) - loss(&dn)) / (2.0 * h);
            let ana = grads.weights[l][[i, j]];
            if (num - ana).abs() > 1e-4 * num.abs().max(ana.abs()).max(1e-3) {
                return Err(format!("layer {l} ({i},{j}): {ana} vs {num}"));
            }
        }
    }
    Ok(())
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("energy ledger conservation", ledger_conservation),
        check("power ordering enforced", power_ordering),
        check("gae matches double-loop oracle", gae_oracle),
        check("clip_ratio piecewise cases", clip_cases),
        check("quantize_phase idempotent", quantize_idempotent),
        check("config round trip", config_round_trip),
        check("backprop vs finite differences", backprop_finite_differences),
    ]
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
