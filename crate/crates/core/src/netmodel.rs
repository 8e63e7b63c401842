//! Geometry, fading channels, RIS phase composition and link rates.
//!
//! Channels are single-antenna. The BS→user link is Rayleigh faded with
//! path loss `d^-α₃`; the BS→RIS and RIS→user links are Rician with a
//! uniform-linear-array LOS steering term and a Gaussian NLOS term.
//! Every function here is pure over an explicit random stream.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkGeometry {
    pub bs_positions: Vec<Position>,
    pub user_positions: Vec<Position>,
    pub ris_position: Position,
    pub ris_elements: usize,
}

impl Default for NetworkGeometry {
    fn default() -> Self {
        let bs_positions = vec![
            Position::new(148.24, 201.12),
            Position::new(107.99, 112.61),
            Position::new(204.57, 124.73),
        ];
        // Shared surface at the BS centroid.
        let n = bs_positions.len() as f64;
        let ris_position = Position::new(
            bs_positions.iter().map(|p| p.x).sum::<f64>() / n,
            bs_positions.iter().map(|p| p.y).sum::<f64>() / n,
        );
        Self {
            bs_positions,
            user_positions: vec![
                Position::new(147.03, 110.94),
                Position::new(140.98, 161.71),
                Position::new(188.24, 165.65),
                Position::new(199.17, 89.26),
                Position::new(149.17, 141.26),
            ],
            ris_position,
            ris_elements: 128,
        }
    }
}

impl NetworkGeometry {
    pub fn num_bs(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    /// BS–user distance in meters.
    pub fn bs_user_distance(&self, m: usize, n: usize) -> f64 {
        self.bs_positions[m].distance(&self.user_positions[n])
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.bs_positions.is_empty() || self.user_positions.is_empty() || self.ris_elements == 0 {
            return Err(NetError::DegenerateGeometry(
                "need at least one BS, one user and one RIS element".into(),
            ));
        }
        let all = self
            .bs_positions
            .iter()
            .chain(&self.user_positions)
            .chain(std::iter::once(&self.ris_position));
        for p in all {
            if !p.x.is_finite() || !p.y.is_finite() {
                return Err(NetError::DegenerateGeometry(format!("non-finite coordinate {p:?}")));
            }
        }
        for (m, bs) in self.bs_positions.iter().enumerate() {
            if bs.distance(&self.ris_position) <= 0.0 {
                return Err(NetError::DegenerateGeometry(format!("BS {m} coincides with the RIS")));
            }
            for (n, user) in self.user_positions.iter().enumerate() {
                if bs.distance(user) <= 0.0 {
                    return Err(NetError::DegenerateGeometry(format!("BS {m} coincides with user {n}")));
                }
            }
        }
        for (n, user) in self.user_positions.iter().enumerate() {
            if user.distance(&self.ris_position) <= 0.0 {
                return Err(NetError::DegenerateGeometry(format!("user {n} coincides with the RIS")));
            }
        }
        Ok(())
    }

    /// Sine of the angle between the RIS boresight (+x) and `endpoint` as seen
    /// from the surface.
    pub fn ris_sin_angle(&self, endpoint: &Position) -> f64 {
        let d = endpoint.distance(&self.ris_position);
        (endpoint.y - self.ris_position.y) / d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkParams {
    /// Linear power gain at 1 m.
    pub beta0: f64,
    /// Linear Rician factor.
    pub kappa: f64,
    /// LOS path-loss exponent (RIS links).
    pub alpha1: f64,
    /// NLOS path-loss exponent (RIS links).
    pub alpha2: f64,
    /// Rayleigh path-loss exponent (direct link).
    pub alpha3: f64,
    /// Watts.
    pub noise_power: f64,
    /// Hz, shared by all users of one BS.
    pub total_bandwidth: f64,
    /// Radiated power per BS in watts.
    pub tx_power: f64,
    pub quant_bits: u32,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            beta0: db_to_linear(-10.0),
            kappa: db_to_linear(10.0),
            alpha1: 2.0,
            alpha2: 3.5,
            alpha3: 3.5,
            noise_power: dbm_to_watts(-80.0),
            total_bandwidth: 20e6,
            tx_power: 1.0,
            quant_bits: 3,
        }
    }
}

impl LinkParams {
    /// Returns the name of the first offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        let positive = [
            ("beta0", self.beta0),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("alpha3", self.alpha3),
            ("noise_power", self.noise_power),
            ("total_bandwidth", self.total_bandwidth),
            ("tx_power", self.tx_power),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err((name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(("kappa", format!("must be >= 0, got {}", self.kappa)));
        }
        if self.quant_bits < 1 || self.quant_bits > 16 {
            return Err(("quant_bits", format!("must be in 1..=16, got {}", self.quant_bits)));
        }
        Ok(())
    }

    fn rician_weights(&self) -> (f64, f64) {
        if self.kappa.is_infinite() {
            (1.0, 0.0)
        } else {
            ((self.kappa / (self.kappa + 1.0)).sqrt(), (1.0 / (self.kappa + 1.0)).sqrt())
        }
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm) * 1e-3
}

/// One circularly-symmetric complex Gaussian draw with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// One slot's complex channel coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    /// M×N, BS m to user n.
    pub direct: Array2<Complex64>,
    /// G×M, BS m to element g.
    pub bs_to_ris: Array2<Complex64>,
    /// N×G, element g to user n.
    pub ris_to_user: Array2<Complex64>,
}

impl ChannelRealization {
    pub fn sample<R: Rng + ?Sized>(
        geometry: &NetworkGeometry,
        params: &LinkParams,
        rng: &mut R,
    ) -> Result<Self, NetError> {
        let direct = sample_direct_channel(geometry, params, rng)?;
        let (bs_to_ris, ris_to_user) = sample_ris_channels(geometry, params, rng)?;
        Ok(Self { direct, bs_to_ris, ris_to_user })
    }

    pub fn num_bs(&self) -> usize {
        self.direct.nrows()
    }

    pub fn num_users(&self) -> usize {
        self.direct.ncols()
    }

    pub fn num_elements(&self) -> usize {
        self.bs_to_ris.nrows()
    }

    /// Composite BS m → user n coefficient under `ris`; `None` disables the surface.
    pub fn effective(&self, m: usize, n: usize, ris: Option<&RisConfig>) -> Complex64 {
        let direct = self.direct[[m, n]];
        match ris {
            None => direct,
            Some(ris) => {
                let mut acc = direct;
                for g in 0..self.num_elements() {
                    acc += self.ris_to_user[[n, g]].conj() * ris.coefficient(g) * self.bs_to_ris[[g, m]];
                }
                acc
            }
        }
    }

    /// [`ChannelRealization::effective`] for every BS–user pair at once.
    pub fn effective_matrix(&self, ris: Option<&RisConfig>) -> Array2<Complex64> {
        let coeffs: Option<Vec<Complex64>> = ris.map(|r| (0..r.len()).map(|g| r.coefficient(g)).collect());
        Array2::from_shape_fn(self.direct.dim(), |(m, n)| {
            let mut acc = self.direct[[m, n]];
            if let Some(c) = &coeffs {
                for (g, cg) in c.iter().enumerate() {
                    acc += self.ris_to_user[[n, g]].conj() * cg * self.bs_to_ris[[g, m]];
                }
            }
            acc
        })
    }

    pub fn is_finite(&self) -> bool {
        self.direct
            .iter()
            .chain(self.bs_to_ris.iter())
            .chain(self.ris_to_user.iter())
            .all(|c| c.re.is_finite() && c.im.is_finite())
    }
}

/// Rayleigh direct links: `ε / sqrt(d^α₃)` per BS–user pair.
pub fn sample_direct_channel<R: Rng + ?Sized>(
    geometry: &NetworkGeometry,
    params: &LinkParams,
    rng: &mut R,
) -> Result<Array2<Complex64>, NetError> {
    let (m_count, n_count) = (geometry.num_bs(), geometry.num_users());
    let mut out = Array2::zeros((m_count, n_count));
    for m in 0..m_count {
        for n in 0..n_count {
            let d = geometry.bs_user_distance(m, n);
            if !(d > 0.0) {
                return Err(NetError::DegenerateGeometry(format!("BS {m} and user {n} at zero distance")));
            }
            out[[m, n]] = complex_gaussian(rng) / d.powf(params.alpha3).sqrt();
        }
    }
    Ok(out)
}

/// Per-link constants of the Rician model: LOS amplitude, NLOS amplitude
/// and the per-element phase step of the array response.
struct RicianLink {
    los_amp: f64,
    nlos_amp: f64,
    step: Complex64,
}

impl RicianLink {
    fn new(distance: f64, sin_angle: f64, params: &LinkParams) -> Self {
        let (_, w_nlos) = params.rician_weights();
        Self {
            los_amp: params.beta0.sqrt() * distance.powf(-params.alpha1 / 2.0),
            nlos_amp: distance.powf(-params.alpha2 / 2.0) * w_nlos,
            step: Complex64::from_polar(1.0, -PI * sin_angle),
        }
    }

    /// Fills `out(g)` for every element in index order. The steering phase
    /// advances by repeated multiplication, which drifts by a few ulps over
    /// a few hundred elements and avoids one `sincos` per element.
    fn fill<R: Rng + ?Sized>(&self, count: usize, params: &LinkParams, rng: &mut R, mut out: impl FnMut(usize, Complex64)) {
        let (w_los, w_nlos) = params.rician_weights();
        let mut steering = Complex64::new(1.0, 0.0);
        for g in 0..count {
            let mut h = steering * self.los_amp * w_los;
            if w_nlos > 0.0 {
                h += complex_gaussian(rng) * self.nlos_amp;
            }
            out(g, h);
            steering *= self.step;
        }
    }
}

/// Rician BS→RIS (G×M) and RIS→user (N×G) coefficients.
pub fn sample_ris_channels<R: Rng + ?Sized>(
    geometry: &NetworkGeometry,
    params: &LinkParams,
    rng: &mut R,
) -> Result<(Array2<Complex64>, Array2<Complex64>), NetError> {
    let g_count = geometry.ris_elements;
    let mut bs_to_ris = Array2::zeros((g_count, geometry.num_bs()));
    for (m, bs) in geometry.bs_positions.iter().enumerate() {
        let d = bs.distance(&geometry.ris_position);
        if !(d > 0.0) {
            return Err(NetError::DegenerateGeometry(format!("BS {m} at the RIS position")));
        }
        let link = RicianLink::new(d, geometry.ris_sin_angle(bs), params);
        link.fill(g_count, params, rng, |g, h| bs_to_ris[[g, m]] = h);
    }
    let mut ris_to_user = Array2::zeros((geometry.num_users(), g_count));
    for (n, user) in geometry.user_positions.iter().enumerate() {
        let d = user.distance(&geometry.ris_position);
        if !(d > 0.0) {
            return Err(NetError::DegenerateGeometry(format!("user {n} at the RIS position")));
        }
        let link = RicianLink::new(d, geometry.ris_sin_angle(user), params);
        link.fill(g_count, params, rng, |g, h| ris_to_user[[n, g]] = h);
    }
    Ok((bs_to_ris, ris_to_user))
}

/// Per-element phase shifts on the `bits`-bit grid with amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig {
    pub phases: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub bits: u32,
}

impl RisConfig {
    /// Quantizes `phases` and sets unit amplitudes.
    pub fn from_phases(phases: &[f64], bits: u32) -> Self {
        Self {
            phases: phases.iter().map(|&p| quantize_phase(p, bits)).collect(),
            amplitudes: vec![1.0; phases.len()],
            bits,
        }
    }

    /// Phases from grid indices `k` (each `< 2^bits`).
    pub fn from_levels(levels: &[usize], bits: u32) -> Self {
        let step = phase_step(bits);
        Self {
            phases: levels.iter().map(|&k| k as f64 * step).collect(),
            amplitudes: vec![1.0; levels.len()],
            bits,
        }
    }

    pub fn zeros(elements: usize, bits: u32) -> Self {
        Self { phases: vec![0.0; elements], amplitudes: vec![1.0; elements], bits }
    }

    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn coefficient(&self, g: usize) -> Complex64 {
        Complex64::from_polar(self.amplitudes[g], self.phases[g])
    }

    pub fn on_grid(&self) -> bool {
        let step = phase_step(self.bits);
        self.phases.iter().all(|&p| {
            let k = (p / step).round();
            (p - k * step).abs() < 1e-9 && k >= 0.0 && (k as u64) < (1u64 << self.bits)
        })
    }
}

/// `h_mn + Σ_g conj(h_ng)·a_g·e^{jθ_g}·h_gm`.
pub fn compose_effective_channel(
    direct_entry: Complex64,
    bs_to_ris_column: &[Complex64],
    ris_to_user_row: &[Complex64],
    ris: &RisConfig,
) -> Result<Complex64, NetError> {
    let g = ris.len();
    for len in [bs_to_ris_column.len(), ris_to_user_row.len(), ris.amplitudes.len()] {
        if len != g {
            return Err(NetError::Dimension { expected: g, got: len });
        }
    }
    let reflected: Complex64 = bs_to_ris_column
        .iter()
        .zip(ris_to_user_row)
        .enumerate()
        .map(|(i, (h_gm, h_ng))| h_ng.conj() * ris.coefficient(i) * h_gm)
        .sum();
    Ok(direct_entry + reflected)
}

pub fn snr(effective: Complex64, params: &LinkParams) -> f64 {
    params.tx_power * effective.norm_sqr() / params.noise_power
}

/// Shannon rate in bits/s.
pub fn link_rate(snr_value: f64, bandwidth: f64) -> f64 {
    bandwidth * (1.0 + snr_value).log2()
}

pub fn phase_step(bits: u32) -> f64 {
    2.0 * PI / (1u64 << bits) as f64
}

/// Grid index of the nearest `bits`-bit phase level; ties go to the smaller index.
pub fn quantize_level(angle: f64, bits: u32) -> usize {
    let levels = 1usize << bits;
    let wrapped = angle.rem_euclid(2.0 * PI);
    let x = wrapped / phase_step(bits);
    let k = (x - 0.5).ceil().max(0.0) as usize;
    k % levels
}

pub fn quantize_phase(angle: f64, bits: u32) -> f64 {
    quantize_level(angle, bits) as f64 * phase_step(bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_pair(d: f64) -> NetworkGeometry {
        NetworkGeometry {
            bs_positions: vec![Position::new(0.0, 0.0)],
            user_positions: vec![Position::new(d, 0.0)],
            ris_position: Position::new(0.0, d),
            ris_elements: 1,
        }
    }

    #[test]
    fn effective_matrix_matches_pairwise() {
        let geom = NetworkGeometry { ris_elements: 16, ..NetworkGeometry::default() };
        let p = LinkParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ch = ChannelRealization::sample(&geom, &p, &mut rng).unwrap();
        let ris = RisConfig::from_levels(&(0..16).map(|g| g % 8).collect::<Vec<_>>(), 3);
        for r in [None, Some(&ris)] {
            let all = ch.effective_matrix(r);
            for ((m, n), h) in all.indexed_iter() {
                assert_eq!(*h, ch.effective(m, n, r));
            }
        }
    }

    #[test]
    fn table_defaults() {
        let p = LinkParams::default();
        assert_relative_eq!(p.alpha3, 3.5);
        assert_relative_eq!(p.beta0, 0.1, max_relative = 1e-12);
        assert_relative_eq!(p.kappa, 10.0, max_relative = 1e-12);
        assert_relative_eq!(p.noise_power, 1e-11, max_relative = 1e-12);
        assert_eq!(1 << p.quant_bits, 8);
    }

    #[test]
    fn direct_channel_unit_distance() {
        // ε = 1 at d = 1 gives h = 1 exactly.
        let d: f64 = 1.0;
        let eps = Complex64::new(1.0, 0.0);
        assert_eq!(eps / d.powf(3.5).sqrt(), Complex64::new(1.0, 0.0));
    }

    #[test]
    fn direct_channel_mean_power() {
        let geom = one_pair(10.0);
        let params = LinkParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| sample_direct_channel(&geom, &params, &mut rng).unwrap()[[0, 0]].norm_sqr())
            .sum::<f64>()
            / draws as f64;
        assert_relative_eq!(mean, 10f64.powf(-3.5), max_relative = 0.05);
    }

    #[test]
    fn zero_distance_is_rejected() {
        let mut geom = one_pair(10.0);
        geom.user_positions[0] = geom.bs_positions[0];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            sample_direct_channel(&geom, &LinkParams::default(), &mut rng),
            Err(NetError::DegenerateGeometry(_))
        ));
        assert!(geom.validate().is_err());
        let mut geom = one_pair(10.0);
        geom.ris_position = geom.bs_positions[0];
        assert!(sample_ris_channels(&geom, &LinkParams::default(), &mut rng).is_err());
    }

    #[test]
    fn pure_los_limit_is_deterministic() {
        let geom = one_pair(20.0);
        let params = LinkParams { kappa: f64::INFINITY, ..LinkParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, b) = sample_ris_channels(&geom, &params, &mut rng).unwrap();
        let d = geom.bs_positions[0].distance(&geom.ris_position);
        assert_relative_eq!(a[[0, 0]].norm(), params.beta0.sqrt() * d.powf(-1.0), max_relative = 1e-12);
        let d = geom.user_positions[0].distance(&geom.ris_position);
        assert_relative_eq!(b[[0, 0]].norm(), params.beta0.sqrt() * d.powf(-1.0), max_relative = 1e-12);
    }

    #[test]
    fn zero_kappa_is_pure_nlos() {
        let geom = one_pair(20.0);
        let params = LinkParams { kappa: 0.0, ..LinkParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut oracle = ChaCha8Rng::seed_from_u64(5);
        let (a, _) = sample_ris_channels(&geom, &params, &mut rng).unwrap();
        let d = geom.bs_positions[0].distance(&geom.ris_position);
        let expected = complex_gaussian(&mut oracle) * d.powf(-params.alpha2 / 2.0);
        assert_relative_eq!(a[[0, 0]].re, expected.re, max_relative = 1e-12);
        assert_relative_eq!(a[[0, 0]].im, expected.im, max_relative = 1e-12);
    }

    #[test]
    fn los_steering_phase_follows_element_index() {
        let geom = NetworkGeometry { ris_elements: 4, ..one_pair(20.0) };
        let params = LinkParams { kappa: f64::INFINITY, ..LinkParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a, _) = sample_ris_channels(&geom, &params, &mut rng).unwrap();
        let s = geom.ris_sin_angle(&geom.bs_positions[0]);
        for g in 1..4 {
            let rel = a[[g, 0]] / a[[0, 0]];
            let expected = Complex64::from_polar(1.0, -(g as f64) * PI * s);
            assert!((rel - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_recurrence_stays_close_to_direct_evaluation() {
        let geom = NetworkGeometry { ris_elements: 1024, ..one_pair(20.0) };
        let params = LinkParams { kappa: f64::INFINITY, ..LinkParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a, _) = sample_ris_channels(&geom, &params, &mut rng).unwrap();
        let s = geom.ris_sin_angle(&geom.bs_positions[0]);
        let scale = a[[0, 0]].norm();
        for g in 0..1024 {
            let expected = Complex64::from_polar(scale, -(g as f64) * PI * s);
            assert!((a[[g, 0]] - expected).norm() < 1e-10 * scale, "element {g}");
        }
    }

    #[test]
    fn compose_disabled_surface_returns_direct() {
        let d = Complex64::new(0.3, -0.2);
        let col = [Complex64::new(1.0, 2.0), Complex64::new(-0.5, 0.1)];
        let row = [Complex64::new(0.7, 0.7), Complex64::new(2.0, 0.0)];
        let ris = RisConfig { phases: vec![1.0, 2.0], amplitudes: vec![0.0, 0.0], bits: 3 };
        assert_eq!(compose_effective_channel(d, &col, &row, &ris).unwrap(), d);
    }

    #[test]
    fn compose_identity_element() {
        let one = Complex64::new(1.0, 0.0);
        let ris = RisConfig::zeros(1, 1);
        let h = compose_effective_channel(Complex64::new(0.0, 0.0), &[one], &[one], &ris).unwrap();
        assert_eq!(h, one);
    }

    #[test]
    fn compose_two_elements_matches_hand_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = complex_gaussian(&mut rng);
        let col = [complex_gaussian(&mut rng), complex_gaussian(&mut rng)];
        let row = [complex_gaussian(&mut rng), complex_gaussian(&mut rng)];
        let ris = RisConfig { phases: vec![0.4, 2.9], amplitudes: vec![1.0, 0.5], bits: 3 };
        // (a+bi)(c+di) written out by components for each term.
        let mul = |x: Complex64, y: Complex64| Complex64::new(x.re * y.re - x.im * y.im, x.re * y.im + x.im * y.re);
        let conj = |x: Complex64| Complex64::new(x.re, -x.im);
        let coef = |a: f64, t: f64| Complex64::new(a * t.cos(), a * t.sin());
        let t0 = mul(mul(conj(row[0]), coef(1.0, 0.4)), col[0]);
        let t1 = mul(mul(conj(row[1]), coef(0.5, 2.9)), col[1]);
        let expected = Complex64::new(d.re + t0.re + t1.re, d.im + t0.im + t1.im);
        let got = compose_effective_channel(d, &col, &row, &ris).unwrap();
        assert!((got - expected).norm() < 1e-14);
    }

    #[test]
    fn compose_length_mismatch() {
        let one = Complex64::new(1.0, 0.0);
        let ris = RisConfig::zeros(2, 1);
        assert_eq!(
            compose_effective_channel(one, &[one], &[one, one], &ris),
            Err(NetError::Dimension { expected: 2, got: 1 })
        );
    }

    #[test]
    fn snr_cases() {
        let p = LinkParams::default();
        assert_eq!(snr(Complex64::new(0.0, 0.0), &p), 0.0);
        let h = Complex64::new((p.noise_power / p.tx_power).sqrt(), 0.0);
        assert_relative_eq!(snr(h, &p), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn rate_cases() {
        assert_eq!(link_rate(0.0, 20e6), 0.0);
        assert_eq!(link_rate(1.0, 20e6), 2.0e7);
        assert_eq!(link_rate(3.0, 20e6), 4.0e7);
    }

    #[test]
    fn quantize_cases() {
        for bits in 1..6 {
            assert_eq!(quantize_phase(0.0, bits), 0.0);
        }
        assert_eq!(quantize_phase(3.0, 1), PI);
        // Exact midpoint between 0 and π goes to the smaller index.
        assert_eq!(quantize_level(PI / 2.0, 1), 0);
        // Just below 2π wraps to level 0.
        assert_eq!(quantize_level(2.0 * PI - 1e-6, 3), 0);
        assert_eq!(quantize_level(-PI / 4.0, 3), 7);
        let levels: std::collections::BTreeSet<usize> =
            (0..1000).map(|i| quantize_level(i as f64 * 0.01, 3)).collect();
        assert_eq!(levels.len(), 8);
    }
}
