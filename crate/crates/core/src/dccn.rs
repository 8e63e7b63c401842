//! Cascaded RIS phase optimizer.
//!
//! A capacity network learns `(channel, phases, association) → sum rate`
//! from simulated samples. It is then frozen and a phase network
//! `channel → phases` is trained by ascending the capacity network's
//! prediction through the cascade. Training sees continuous phases; the
//! grid quantization is applied only at inference.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{
    link_rate, quantize_level, snr, ChannelRealization, LinkParams, NetError, NetworkGeometry, RisConfig,
};
use crate::neural::{apply_update, Activation, DenseNet, Head, NeuralError, OptimState};

#[derive(Debug, Error)]
pub enum DccnError {
    #[error("search space of {0} configurations exceeds the 10^6 limit")]
    SearchSpaceTooLarge(f64),
    #[error("training diverged (non-finite loss)")]
    Diverged,
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DccnConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub train_channels: usize,
    pub capacity_epochs: usize,
    pub phase_epochs: usize,
    pub batch: usize,
}

impl Default for DccnConfig {
    fn default() -> Self {
        Self { hidden: 128, learning_rate: 0.001, train_channels: 2000, capacity_epochs: 30, phase_epochs: 30, batch: 64 }
    }
}

/// Per-entry RMS amplitudes used to normalize channel features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScales {
    pub direct: Array2<f64>,
    pub bs_to_ris: Vec<f64>,
    pub ris_to_user: Vec<f64>,
}

impl FeatureScales {
    pub fn new(geometry: &NetworkGeometry, params: &LinkParams) -> Self {
        let rician_rms = |d: f64| {
            let (w_los, w_nlos) = if params.kappa.is_infinite() {
                (1.0, 0.0)
            } else {
                (params.kappa / (params.kappa + 1.0), 1.0 / (params.kappa + 1.0))
            };
            (w_los * params.beta0 * d.powf(-params.alpha1) + w_nlos * d.powf(-params.alpha2)).sqrt()
        };
        Self {
            direct: Array2::from_shape_fn((geometry.num_bs(), geometry.num_users()), |(m, n)| {
                geometry.bs_user_distance(m, n).powf(-params.alpha3 / 2.0)
            }),
            bs_to_ris: geometry.bs_positions.iter().map(|b| rician_rms(b.distance(&geometry.ris_position))).collect(),
            ris_to_user: geometry.user_positions.iter().map(|u| rician_rms(u.distance(&geometry.ris_position))).collect(),
        }
    }

    pub fn feature_len(&self, elements: usize) -> usize {
        let (m, n) = self.direct.dim();
        2 * (m * n + elements * m + n * elements)
    }

    /// Real and imaginary parts of every coefficient over its RMS amplitude.
    pub fn features(&self, ch: &ChannelRealization) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_len(ch.num_elements()));
        for ((m, n), h) in ch.direct.indexed_iter() {
            let s = self.direct[[m, n]];
            out.push(h.re / s);
            out.push(h.im / s);
        }
        for ((_, m), h) in ch.bs_to_ris.indexed_iter() {
            out.push(h.re / self.bs_to_ris[m]);
            out.push(h.im / self.bs_to_ris[m]);
        }
        for ((n, _), h) in ch.ris_to_user.indexed_iter() {
            out.push(h.re / self.ris_to_user[n]);
            out.push(h.im / self.ris_to_user[n]);
        }
        out
    }
}

/// Sum rate over associated users; each BS splits the band equally among
/// the users associated to it.
pub fn sum_capacity(ch: &ChannelRealization, ris: &RisConfig, association: &[Option<usize>], params: &LinkParams) -> f64 {
    let mut load = vec![0usize; ch.num_bs()];
    for bs in association.iter().flatten() {
        load[*bs] += 1;
    }
    association
        .iter()
        .enumerate()
        .filter_map(|(n, a)| a.map(|m| (m, n)))
        .map(|(m, n)| {
            let bw = params.total_bandwidth / load[m] as f64;
            link_rate(snr(ch.effective(m, n, Some(ris)), params), bw)
        })
        .sum()
}

/// Each user to its closest BS regardless of radius.
pub fn nearest_bs_association(geometry: &NetworkGeometry) -> Vec<Option<usize>> {
    (0..geometry.num_users())
        .map(|n| {
            (0..geometry.num_bs())
                .min_by(|&a, &b| geometry.bs_user_distance(a, n).total_cmp(&geometry.bs_user_distance(b, n)))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct DccnSample {
    pub channel: ChannelRealization,
    pub features: Vec<f64>,
    pub levels: Vec<usize>,
    pub phases: Vec<f64>,
    pub capacity: f64,
}

pub fn gen_training_set<R: Rng + ?Sized>(
    geometry: &NetworkGeometry,
    params: &LinkParams,
    association: &[Option<usize>],
    count: usize,
    rng: &mut R,
) -> Result<Vec<DccnSample>, DccnError> {
    let scales = FeatureScales::new(geometry, params);
    let levels = 1usize << params.quant_bits;
    (0..count)
        .map(|_| {
            let channel = ChannelRealization::sample(geometry, params, rng)?;
            let lv: Vec<usize> = (0..geometry.ris_elements).map(|_| rng.random_range(0..levels)).collect();
            let ris = RisConfig::from_levels(&lv, params.quant_bits);
            let capacity = sum_capacity(&channel, &ris, association, params);
            Ok(DccnSample { features: scales.features(&channel), phases: ris.phases, levels: lv, capacity, channel })
        })
        .collect()
}

/// Best grid configuration by enumeration.
pub fn exhaustive_phase_oracle(
    ch: &ChannelRealization,
    params: &LinkParams,
    association: &[Option<usize>],
) -> Result<(RisConfig, f64, usize), DccnError> {
    let g = ch.num_elements();
    let levels = 1usize << params.quant_bits;
    let space = (levels as f64).powi(g as i32);
    if space > 1e6 {
        return Err(DccnError::SearchSpaceTooLarge(space));
    }
    let total = levels.pow(g as u32);
    let mut digits = vec![0usize; g];
    let mut best = (RisConfig::from_levels(&digits, params.quant_bits), f64::NEG_INFINITY);
    for code in 0..total {
        let mut c = code;
        for d in digits.iter_mut() {
            *d = c % levels;
            c /= levels;
        }
        let ris = RisConfig::from_levels(&digits, params.quant_bits);
        let cap = sum_capacity(ch, &ris, association, params);
        if cap > best.1 {
            best = (ris, cap);
        }
    }
    Ok((best.0, best.1, total))
}

/// Trained cascade plus everything needed for inference.
#[derive(Debug, Clone)]
pub struct Dccn {
    pub phase_net: DenseNet,
    pub capacity_net: DenseNet,
    pub scales: FeatureScales,
    pub association: Vec<Option<usize>>,
    pub bits: u32,
    pub elements: usize,
    pub label_mean: f64,
    pub label_std: f64,
}

impl Dccn {
    pub fn new<R: Rng + ?Sized>(
        geometry: &NetworkGeometry,
        params: &LinkParams,
        association: Vec<Option<usize>>,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let scales = FeatureScales::new(geometry, params);
        let g = geometry.ris_elements;
        let f = scales.feature_len(g);
        let cap_in = f + 2 * g + geometry.num_bs() * geometry.num_users();
        let capacity_net = DenseNet::new(&[cap_in, hidden, hidden, 1], Activation::Relu, Head::Linear, rng);
        let mut phase_net = DenseNet::new(&[f, hidden, hidden, g], Activation::Relu, Head::Linear, rng);
        phase_net.scale_output_layer(0.1);
        Self {
            phase_net,
            capacity_net,
            scales,
            association,
            bits: params.quant_bits,
            elements: g,
            label_mean: 0.0,
            label_std: 1.0,
        }
    }

    fn association_features(&self) -> Vec<f64> {
        let (m, n) = self.scales.direct.dim();
        let mut z = vec![0.0; m * n];
        for (u, a) in self.association.iter().enumerate() {
            if let Some(bs) = a {
                z[bs * n + u] = 1.0;
            }
        }
        z
    }

    /// Capacity-net input rows for the given features and continuous phases.
    pub fn capacity_inputs(&self, features: ArrayView2<f64>, phases: ArrayView2<f64>) -> Array2<f64> {
        let b = features.nrows();
        let f = features.ncols();
        let g = self.elements;
        let z = self.association_features();
        let mut x = Array2::zeros((b, f + 2 * g + z.len()));
        x.slice_mut(s![.., ..f]).assign(&features);
        x.slice_mut(s![.., f..f + g]).assign(&phases.mapv(f64::cos));
        x.slice_mut(s![.., f + g..f + 2 * g]).assign(&phases.mapv(f64::sin));
        for mut row in x.rows_mut() {
            for (i, v) in z.iter().enumerate() {
                row[f + 2 * g + i] = *v;
            }
        }
        x
    }

    /// Capacity prediction in bits/s.
    pub fn predict_capacity(&self, features: &[f64], phases: &[f64]) -> Result<f64, DccnError> {
        let fv = ArrayView2::from_shape((1, features.len()), features).map_err(|e| NeuralError::Shape(e.to_string()))?;
        let pv = ArrayView2::from_shape((1, phases.len()), phases).map_err(|e| NeuralError::Shape(e.to_string()))?;
        let out = self.capacity_net.predict(self.capacity_inputs(fv, pv).view())?;
        Ok(out[[0, 0]] * self.label_std + self.label_mean)
    }

    pub fn raw_phases(&self, features: &[f64]) -> Result<Vec<f64>, DccnError> {
        Ok(self.phase_net.predict_one(features)?)
    }

    pub fn infer_phases(&self, ch: &ChannelRealization) -> RisConfig {
        let raw = self.raw_phases(&self.scales.features(ch)).unwrap_or_else(|_| vec![0.0; self.elements]);
        let levels: Vec<usize> = raw.iter().map(|&p| quantize_level(p, self.bits)).collect();
        RisConfig::from_levels(&levels, self.bits)
    }
}

/// Fits the capacity network to normalized labels; returns per-epoch
/// training MSE and the holdout MSE (normalized units).
pub fn train_capacity_net<R: Rng + ?Sized>(
    dccn: &mut Dccn,
    data: &[DccnSample],
    learning_rate: f64,
    epochs: usize,
    batch: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64), DccnError> {
    if data.is_empty() {
        return Err(DccnError::Empty);
    }
    let holdout = (data.len() / 10).max(if data.len() > 1 { 1 } else { 0 });
    let (train, test) = data.split_at(data.len() - holdout);
    let n = train.len() as f64;
    let mean = train.iter().map(|d| d.capacity).sum::<f64>() / n;
    let var = train.iter().map(|d| (d.capacity - mean).powi(2)).sum::<f64>() / n;
    dccn.label_mean = mean;
    dccn.label_std = if var > 0.0 { var.sqrt() } else { 1.0 };
    let mut optim = OptimState::adam(learning_rate);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch.max(1)) {
            let (x, y) = capacity_batch(dccn, train, chunk);
            let (out, trace) = dccn.capacity_net.forward(x.view())?;
            let err = &out - &y;
            let loss = err.mapv(|e| e * e).sum();
            if !loss.is_finite() {
                return Err(DccnError::Diverged);
            }
            total += loss;
            let up = err * (2.0 / chunk.len() as f64);
            let (grads, _) = dccn.capacity_net.backward(&trace, up.view())?;
            apply_update(&mut dccn.capacity_net, &grads, &mut optim)?;
        }
        curve.push(total / n);
    }
    let holdout_mse = if test.is_empty() {
        0.0
    } else {
        let idx: Vec<usize> = (0..test.len()).collect();
        let (x, y) = capacity_batch(dccn, test, &idx);
        let out = dccn.capacity_net.predict(x.view())?;
        (&out - &y).mapv(|e| e * e).mean().unwrap_or(0.0)
    };
    Ok((curve, holdout_mse))
}

fn capacity_batch(dccn: &Dccn, data: &[DccnSample], idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let f = data[0].features.len();
    let g = dccn.elements;
    let mut feats = Array2::zeros((idx.len(), f));
    let mut phases = Array2::zeros((idx.len(), g));
    let mut y = Array2::zeros((idx.len(), 1));
    for (r, &i) in idx.iter().enumerate() {
        feats.row_mut(r).assign(&ndarray::ArrayView1::from(&data[i].features));
        phases.row_mut(r).assign(&ndarray::ArrayView1::from(&data[i].phases));
        y[[r, 0]] = (data[i].capacity - dccn.label_mean) / dccn.label_std;
    }
    (dccn.capacity_inputs(feats.view(), phases.view()), y)
}

/// Mean normalized predicted capacity of the phase net's continuous output
/// on `features`, with its gradient with respect to the raw phases.
pub fn cascade_objective(
    phase_net: &DenseNet,
    dccn: &Dccn,
    features: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>, crate::neural::ForwardTrace), DccnError> {
    let (phases, trace) = phase_net.forward(features)?;
    let (value, dphase) = capacity_and_phase_grad(dccn, features, phases.view())?;
    Ok((value, dphase, trace))
}

/// Mean predicted (normalized) capacity for explicit phases and its gradient
/// with respect to those phases. The capacity net is only read.
pub fn capacity_and_phase_grad(
    dccn: &Dccn,
    features: ArrayView2<f64>,
    phases: ArrayView2<f64>,
) -> Result<(f64, Array2<f64>), DccnError> {
    let b = features.nrows() as f64;
    let f = features.ncols();
    let g = dccn.elements;
    let x = dccn.capacity_inputs(features, phases);
    let (out, trace) = dccn.capacity_net.forward(x.view())?;
    let value = out.sum() / b;
    let up = Array2::from_elem(out.raw_dim(), 1.0 / b);
    let (_, dx) = dccn.capacity_net.backward(&trace, up.view())?;
    let dcos = dx.slice(s![.., f..f + g]);
    let dsin = dx.slice(s![.., f + g..f + 2 * g]);
    let mut dphase = Array2::zeros(phases.raw_dim());
    ndarray::Zip::from(&mut dphase).and(&phases).and(&dcos).and(&dsin).for_each(|d, &p, &c, &s| {
        *d = -p.sin() * c + p.cos() * s;
    });
    Ok((value, dphase))
}

/// Trains the phase network against the frozen capacity network by
/// descending `−Ĉ`. Returns the mean normalized prediction per epoch.
pub fn train_phase_net<R: Rng + ?Sized>(
    phase_net: &mut DenseNet,
    dccn: &Dccn,
    features: &Array2<f64>,
    learning_rate: f64,
    epochs: usize,
    batch: usize,
    rng: &mut R,
) -> Result<Vec<f64>, DccnError> {
    let mut optim = OptimState::adam(learning_rate);
    let mut order: Vec<usize> = (0..features.nrows()).collect();
    let mut curve = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        order.shuffle(rng);
        let mut acc = 0.0;
        let mut batches = 0.0_f64;
        for chunk in order.chunks(batch.max(1)) {
            let x = features.select(Axis(0), chunk);
            let (value, dphase, trace) = cascade_objective(phase_net, dccn, x.view())?;
            if !value.is_finite() {
                return Err(DccnError::Diverged);
            }
            acc += value;
            batches += 1.0;
            // Loss is −Ĉ.
            let up = dphase.mapv(|v| -v);
            let (grads, _) = phase_net.backward(&trace, up.view())?;
            apply_update(phase_net, &grads, &mut optim)?;
        }
        curve.push(acc / batches.max(1.0));
    }
    Ok(curve)
}

/// Full pipeline: sample, pre-train the capacity net, freeze it, train the
/// phase net.
pub fn train_dccn<R: Rng + ?Sized>(
    geometry: &NetworkGeometry,
    params: &LinkParams,
    association: Vec<Option<usize>>,
    cfg: &DccnConfig,
    rng: &mut R,
) -> Result<Dccn, DccnError> {
    let data = gen_training_set(geometry, params, &association, cfg.train_channels, rng)?;
    let mut dccn = Dccn::new(geometry, params, association, cfg.hidden, rng);
    train_capacity_net(&mut dccn, &data, cfg.learning_rate, cfg.capacity_epochs, cfg.batch, rng)?;
    let f = data.first().map_or(0, |d| d.features.len());
    let mut feats = Array2::zeros((data.len(), f));
    for (r, d) in data.iter().enumerate() {
        feats.row_mut(r).assign(&ndarray::ArrayView1::from(&d.features));
    }
    let mut phase_net = dccn.phase_net.clone();
    train_phase_net(&mut phase_net, &dccn, &feats, cfg.learning_rate, cfg.phase_epochs, cfg.batch, rng)?;
    dccn.phase_net = phase_net;
    Ok(dccn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::Position;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_geometry(g: usize) -> NetworkGeometry {
        NetworkGeometry { ris_elements: g, ..NetworkGeometry::default() }
    }

    fn params(bits: u32) -> LinkParams {
        LinkParams { quant_bits: bits, ..LinkParams::default() }
    }

    #[test]
    fn training_set_labels_are_the_simulator() {
        let geom = small_geometry(8);
        let p = params(3);
        let assoc = nearest_bs_association(&geom);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gen_training_set(&geom, &p, &assoc, 0, &mut rng).unwrap().is_empty());
        let data = gen_training_set(&geom, &p, &assoc, 20, &mut rng).unwrap();
        for d in &data {
            let ris = RisConfig { phases: d.phases.clone(), amplitudes: vec![1.0; 8], bits: 3 };
            assert!(ris.on_grid());
            assert_eq!(sum_capacity(&d.channel, &ris, &assoc, &p), d.capacity);
            assert!(d.capacity >= 0.0);
        }
    }

    #[test]
    fn oracle_enumeration_and_dominance() {
        let p = params(1);
        let assoc = nearest_bs_association(&small_geometry(1));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ch = ChannelRealization::sample(&small_geometry(1), &p, &mut rng).unwrap();
        let (_, _, count) = exhaustive_phase_oracle(&ch, &p, &assoc).unwrap();
        assert_eq!(count, 2);

        let geom = small_geometry(4);
        let ch = ChannelRealization::sample(&geom, &p, &mut rng).unwrap();
        let (best, cap, count) = exhaustive_phase_oracle(&ch, &p, &assoc).unwrap();
        assert_eq!(count, 16);
        assert_eq!(sum_capacity(&ch, &best, &assoc, &p), cap);
        for code in 0..16usize {
            let lv: Vec<usize> = (0..4).map(|i| (code >> i) & 1).collect();
            assert!(cap >= sum_capacity(&ch, &RisConfig::from_levels(&lv, 1), &assoc, &p));
        }
        let big = small_geometry(128);
        let ch = ChannelRealization::sample(&big, &params(3), &mut rng).unwrap();
        assert!(matches!(exhaustive_phase_oracle(&ch, &params(3), &assoc), Err(DccnError::SearchSpaceTooLarge(_))));
    }

    #[test]
    fn constant_capacity_is_learned() {
        let geom = small_geometry(2);
        let p = params(1);
        let assoc = nearest_bs_association(&geom);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = gen_training_set(&geom, &p, &assoc, 200, &mut rng).unwrap();
        data.iter_mut().for_each(|d| d.capacity = 5.0e8);
        let mut dccn = Dccn::new(&geom, &p, assoc, 16, &mut rng);
        let (curve, holdout) = train_capacity_net(&mut dccn, &data, 1e-3, 300, 32, &mut rng).unwrap();
        assert!(*curve.last().unwrap() < 1e-4, "{:?}", &curve[curve.len() - 3..]);
        assert!(holdout < 1e-2, "{holdout}");
        let pred = dccn.predict_capacity(&data[0].features, &data[0].phases).unwrap();
        assert!((pred - 5.0e8).abs() < 1.0);
    }

    #[test]
    fn inference_is_on_grid_and_deterministic() {
        let geom = NetworkGeometry::default();
        let p = params(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dccn = Dccn::new(&geom, &p, nearest_bs_association(&geom), 32, &mut rng);
        let ch = ChannelRealization::sample(&geom, &p, &mut rng).unwrap();
        let a = dccn.infer_phases(&ch);
        assert_eq!(a.len(), 128);
        assert!(a.on_grid());
        assert_eq!(a, dccn.infer_phases(&ch));
    }

    fn small_cascade(seed: u64) -> (Dccn, Array2<f64>) {
        let geom = small_geometry(4);
        let p = params(1);
        let assoc = nearest_bs_association(&geom);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = gen_training_set(&geom, &p, &assoc, 300, &mut rng).unwrap();
        let mut dccn = Dccn::new(&geom, &p, assoc, 24, &mut rng);
        train_capacity_net(&mut dccn, &data, 1e-3, 5, 32, &mut rng).unwrap();
        let f = data[0].features.len();
        let feats = Array2::from_shape_fn((data.len(), f), |(r, c)| data[r].features[c]);
        (dccn, feats)
    }

    #[test]
    fn phase_training_keeps_capacity_net_frozen() {
        let (dccn, feats) = small_cascade(5);
        let frozen = dccn.capacity_net.clone();
        let mut phase_net = dccn.phase_net.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        train_phase_net(&mut phase_net, &dccn, &feats, 1e-3, 3, 32, &mut rng).unwrap();
        assert_eq!(dccn.capacity_net, frozen);
        assert_ne!(phase_net, dccn.phase_net);
    }

    #[test]
    fn cascade_gradient_matches_finite_differences() {
        let (dccn, feats) = small_cascade(7);
        let x = feats.slice(s![..6, ..]).to_owned();
        let phases = dccn.phase_net.predict(x.view()).unwrap();
        let (_, grad) = capacity_and_phase_grad(&dccn, x.view(), phases.view()).unwrap();
        let h = 1e-5;
        for r in 0..phases.nrows() {
            for c in 0..phases.ncols() {
                let mut p = phases.clone();
                p[[r, c]] += h;
                let up = capacity_and_phase_grad(&dccn, x.view(), p.view()).unwrap().0;
                p[[r, c]] -= 2.0 * h;
                let down = capacity_and_phase_grad(&dccn, x.view(), p.view()).unwrap().0;
                let num = (up - down) / (2.0 * h);
                let rel = (grad[[r, c]] - num).abs() / grad[[r, c]].abs().max(num.abs()).max(1e-8);
                assert!(rel < 1e-4, "({r},{c}) {} vs {num}", grad[[r, c]]);
            }
        }
    }

    #[test]
    fn small_descent_step_does_not_lower_prediction() {
        let (dccn, feats) = small_cascade(8);
        let x = feats.slice(s![..64, ..]).to_owned();
        let mut net = dccn.phase_net.clone();
        let (before, dphase, trace) = cascade_objective(&net, &dccn, x.view()).unwrap();
        let (grads, _) = net.backward(&trace, dphase.mapv(|v| -v).view()).unwrap();
        apply_update(&mut net, &grads, &mut OptimState::sgd(1e-6)).unwrap();
        let (after, _, _) = cascade_objective(&net, &dccn, x.view()).unwrap();
        assert!(after >= before, "{after} < {before}");
    }

    #[test]
    fn feature_scale_uses_geometry() {
        let geom = NetworkGeometry {
            bs_positions: vec![Position::new(0.0, 0.0)],
            user_positions: vec![Position::new(10.0, 0.0)],
            ris_position: Position::new(0.0, 10.0),
            ris_elements: 1,
        };
        let s = FeatureScales::new(&geom, &LinkParams::default());
        assert!((s.direct[[0, 0]] - 10f64.powf(-1.75)).abs() < 1e-15);
    }
}
