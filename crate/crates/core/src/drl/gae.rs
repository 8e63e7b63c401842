//! Generalized advantage estimation and the clipped probability ratio.

/// Advantages `Â(t) = Σ_k (γλ)^k δ(t+k)` with
/// `δ(t) = r(t) + γ·V(t+1)·(1 − d(t)) − V(t)`. The sum stops at the first
/// terminal step; the last entry bootstraps from `next_values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    assert!(values.len() == n && next_values.len() == n && dones.len() == n, "buffer columns differ in length");
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        adv[t] = acc;
    }
    adv
}

/// One-step TD residuals.
pub fn td_residuals(rewards: &[f64], values: &[f64], next_values: &[f64], dones: &[bool], gamma: f64) -> Vec<f64> {
    (0..rewards.len())
        .map(|t| rewards[t] + gamma * next_values[t] * if dones[t] { 0.0 } else { 1.0 } - values[t])
        .collect()
}

pub fn clip_ratio(h: f64, eps: f64) -> f64 {
    h.clamp(1.0 - eps, 1.0 + eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double sum, stopping at the first terminal.
    fn brute_force(r: &[f64], v: &[f64], nv: &[f64], d: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
        let delta = td_residuals(r, v, nv, d, gamma);
        (0..r.len())
            .map(|t| {
                let mut sum = 0.0;
                for k in 0..(r.len() - t) {
                    sum += (gamma * lambda).powi(k as i32) * delta[t + k];
                    if d[t + k] {
                        break;
                    }
                }
                sum
            })
            .collect()
    }

    #[test]
    fn lambda_zero_is_td_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let v: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let nv: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d: Vec<bool> = (0..12).map(|i| i == 5).collect();
        assert_eq!(compute_gae(&r, &v, &nv, &d, 0.98, 0.0), td_residuals(&r, &v, &nv, &d, 0.98));
    }

    #[test]
    fn single_terminal_step() {
        assert_eq!(compute_gae(&[1.0], &[0.0], &[123.0], &[true], 0.98, 0.95), vec![1.0]);
    }

    #[test]
    fn random_buffers_match_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let n = 10;
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..2.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let nv: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let d: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
            let fast = compute_gae(&r, &v, &nv, &d, 0.98, 0.95);
            let slow = brute_force(&r, &v, &nv, &d, 0.98, 0.95);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clip_cases() {
        assert_eq!(clip_ratio(1.5, 0.2), 1.2);
        assert_eq!(clip_ratio(0.5, 0.2), 0.8);
        assert_eq!(clip_ratio(1.0, 0.2), 1.0);
    }

    proptest! {
        #[test]
        fn clip_is_piecewise(h in 0.0f64..3.0, eps in 0.01f64..0.99) {
            let c = clip_ratio(h, eps);
            if h < 1.0 - eps {
                prop_assert_eq!(c, 1.0 - eps);
            } else if h > 1.0 + eps {
                prop_assert_eq!(c, 1.0 + eps);
            } else {
                prop_assert_eq!(c, h);
            }
        }

        #[test]
        fn unit_lambda_zero_value_is_discounted_return(r in proptest::collection::vec(-10.0f64..10.0, 1..30), gamma in 0.0f64..1.0) {
            let n = r.len();
            let zeros = vec![0.0; n];
            let mut d = vec![false; n];
            d[n - 1] = true;
            let adv = compute_gae(&r, &zeros, &zeros, &d, gamma, 1.0);
            for t in 0..n {
                let ret: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * r[k]).sum();
                prop_assert!((adv[t] - ret).abs() < 1e-9);
            }
        }
    }
}
