//! Closed-form SPS collision and half-duplex model, packet reception ratio
//! and the per-vehicle / network fairness indices built on them.
//!
//! Windows are expressed in slots. A window of `w` covers `w + 1` slots, so
//! `w = 0` is a single-slot window.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, ChannelState};
use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::{self, Direction, ScenarioConfig};

/// Length of the sensing window in milliseconds.
pub const SENSING_WINDOW_MS: f64 = 1000.0;
/// Upper end of the 3GPP keep-probability range.
pub const MAX_KEEP_PROBABILITY: f64 = 0.8;

const EPS: f64 = 1e-9;

/// How the candidate-set sizes `C_Ca`, `N_r` and `N_Ca` of the collision
/// model are materialised. Any of them can be pinned through the explicit
/// overrides on [`SpsParams`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CandidateModel {
    /// `N_r = N_Sc (max(w_i, w_j) + 1)`, `C_Ca = N_Sc N_Sh` and a single
    /// network-wide `N_Ca = gamma N_Sc (w_mid + 1)`, `w_mid` being the
    /// midpoint of the admissible window range.
    #[default]
    NetworkAverage,
    /// Each vehicle picks uniformly from its whole window, which is the
    /// mechanism the Monte Carlo simulator implements. The candidates that
    /// can collide are the shared PRBs, `C_Ca = N_Ca = N_Sc N_Sh`, and
    /// `N_r = N_Sc sqrt((w_i + 1)(w_j + 1))` so that `P_SH|O` is the product
    /// of both vehicles' chances of landing in the shared region.
    SharedRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsParams {
    /// Resource reservation interval (s).
    pub rri: f64,
    pub numerology: u32,
    pub num_subchannels: u32,
    /// Inclusive `[w_LB, w_UB]` in slots.
    pub window_bounds: [u32; 2],
    pub keep_probability: f64,
    /// Minimum candidate fraction `gamma` of a selection window.
    pub candidate_fraction: f64,
    /// Packets per second generated by each vehicle.
    pub packet_rate: f64,
    pub candidate_model: CandidateModel,
    pub c_ca: Option<f64>,
    pub n_r: Option<f64>,
    pub n_ca: Option<f64>,
}

impl Default for SpsParams {
    fn default() -> Self {
        Self {
            rri: 0.1,
            numerology: 0,
            num_subchannels: 2,
            window_bounds: [1, 49],
            keep_probability: 0.8,
            candidate_fraction: 0.2,
            packet_rate: 10.0,
            candidate_model: CandidateModel::NetworkAverage,
            c_ca: None,
            n_r: None,
            n_ca: None,
        }
    }
}

/// Number of slots in one reservation period, `1000 2^mu rri`.
pub fn slots_per_rri(numerology: u32, rri: f64) -> Result<u32> {
    if !(rri > 0.0) || !rri.is_finite() {
        return Err(Error::domain(format!("rri must be positive (got {rri})")));
    }
    if numerology > 6 {
        return Err(Error::domain(format!(
            "numerology {numerology} is not an NR numerology"
        )));
    }
    let slots = 1000.0 * f64::from(1u32 << numerology) * rri;
    let rounded = slots.round();
    if rounded < 1.0 || (slots - rounded).abs() > 1e-6 {
        return Err(Error::domain(format!(
            "1000 * 2^{numerology} * {rri} = {slots} is not a positive whole number of slots"
        )));
    }
    Ok(rounded as u32)
}

impl SpsParams {
    pub fn validate(&self) -> Result<()> {
        let slots = slots_per_rri(self.numerology, self.rri)
            .map_err(|e| Error::invalid("sps.rri", e.to_string()))?;
        let [lo, hi] = self.window_bounds;
        if lo > hi {
            return Err(Error::invalid(
                "sps.window_bounds",
                format!("w_LB = {lo} exceeds w_UB = {hi}"),
            ));
        }
        if 2 * hi + 1 > slots {
            return Err(Error::invalid(
                "sps.window_bounds",
                format!(
                    "two windows of {hi} slots do not fit in a {slots}-slot reservation period"
                ),
            ));
        }
        if self.num_subchannels == 0 {
            return Err(Error::invalid("sps.num_subchannels", "must be at least 1"));
        }
        if !(0.0..=MAX_KEEP_PROBABILITY).contains(&self.keep_probability) {
            return Err(Error::invalid(
                "sps.keep_probability",
                format!("must lie in [0, {MAX_KEEP_PROBABILITY}]"),
            ));
        }
        if !(self.candidate_fraction > 0.0 && self.candidate_fraction <= 1.0) {
            return Err(Error::invalid(
                "sps.candidate_fraction",
                "must lie in (0, 1]",
            ));
        }
        if !(0.0..=1000.0).contains(&self.packet_rate) {
            return Err(Error::invalid("sps.packet_rate", "must lie in [0, 1000]"));
        }
        for (key, v) in [
            ("sps.c_ca", self.c_ca),
            ("sps.n_r", self.n_r),
            ("sps.n_ca", self.n_ca),
        ] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(Error::invalid(key, "must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn slots_per_rri(&self) -> Result<u32> {
        slots_per_rri(self.numerology, self.rri)
    }

    pub fn window_in_bounds(&self, w: u32) -> bool {
        (self.window_bounds[0]..=self.window_bounds[1]).contains(&w)
    }

    fn network_candidates(&self) -> f64 {
        let [lo, hi] = self.window_bounds;
        let mid = (f64::from(lo) + f64::from(hi)) / 2.0;
        self.candidate_fraction * f64::from(self.num_subchannels) * (mid + 1.0)
    }

    /// Every factor of the pairwise collision probability for windows `w_i`, `w_j`.
    pub fn collision_terms(&self, w_i: f64, w_j: f64) -> Result<CollisionTerms> {
        let n_sc = f64::from(self.num_subchannels);
        let p_o = overlap_probability(w_i, w_j, self.numerology, self.rri)?;
        let n_sh = shared_resources(w_i, w_j)?;
        let shared_prbs = n_sc * n_sh;
        let (n_r, c_ca, n_ca) = match self.candidate_model {
            CandidateModel::NetworkAverage => (
                n_sc * (w_i.max(w_j) + 1.0),
                shared_prbs,
                self.network_candidates(),
            ),
            CandidateModel::SharedRegion => (
                n_sc * ((w_i + 1.0) * (w_j + 1.0)).sqrt(),
                shared_prbs,
                shared_prbs,
            ),
        };
        let n_r = self.n_r.unwrap_or(n_r);
        let c_ca = self.c_ca.unwrap_or(c_ca);
        let n_ca = self.n_ca.unwrap_or(n_ca);
        let p_sh = shared_selection_probability(n_sc, n_sh, n_r)?;
        let delta = collision_probability(p_o, p_sh, c_ca, n_ca)?;
        Ok(CollisionTerms {
            p_o,
            n_sh,
            n_r,
            p_sh,
            c_ca,
            n_ca,
            delta,
        })
    }

    /// Pairwise collision probability between windows `w_i` and `w_j`.
    pub fn collision(&self, w_i: f64, w_j: f64) -> Result<f64> {
        Ok(self.collision_terms(w_i, w_j)?.delta)
    }

    /// Packet reception ratio of vehicle `i` given every vehicle's window.
    pub fn packet_reception_ratio(&self, i: usize, windows: &[u32]) -> Result<f64> {
        if i >= windows.len() {
            return Err(Error::domain(format!("vehicle {i} out of range")));
        }
        let hd = half_duplex_probability(self.packet_rate)?;
        let mut col = Vec::with_capacity(windows.len().saturating_sub(1));
        for (j, &w_j) in windows.iter().enumerate() {
            if j != i {
                col.push(self.collision(f64::from(windows[i]), f64::from(w_j))?);
            }
        }
        let hd = vec![hd; col.len()];
        packet_reception_ratio(&col, &hd)
    }
}

/// Factors of one pairwise collision probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionTerms {
    pub p_o: f64,
    pub n_sh: f64,
    pub n_r: f64,
    pub p_sh: f64,
    pub c_ca: f64,
    pub n_ca: f64,
    pub delta: f64,
}

/// Probability that two selection windows overlap inside one reservation
/// period: `(w_i + w_j + 1) / (1000 2^mu rri)`.
pub fn overlap_probability(w_i: f64, w_j: f64, numerology: u32, rri: f64) -> Result<f64> {
    if !(w_i >= 0.0 && w_j >= 0.0) {
        return Err(Error::domain(format!(
            "windows must be non-negative (got {w_i}, {w_j})"
        )));
    }
    let slots = f64::from(slots_per_rri(numerology, rri)?);
    let span = w_i + w_j + 1.0;
    if span > slots + EPS {
        return Err(Error::model(format!(
            "windows {w_i} and {w_j} span {span} slots, more than the {slots}-slot period"
        )));
    }
    Ok(span / slots)
}

/// Expected number of shared slots given overlap: `(w_i+1)(w_j+1)/(w_i+w_j+1)`.
pub fn shared_resources(w_i: f64, w_j: f64) -> Result<f64> {
    if !(w_i >= 0.0 && w_j >= 0.0) {
        return Err(Error::domain(format!(
            "windows must be non-negative (got {w_i}, {w_j})"
        )));
    }
    Ok((w_i + 1.0) * (w_j + 1.0) / (w_i + w_j + 1.0))
}

/// Probability that both vehicles pick inside the shared region: `(N_Sc N_Sh / N_r)^2`.
pub fn shared_selection_probability(n_sc: f64, n_sh: f64, n_r: f64) -> Result<f64> {
    if !(n_sc > 0.0 && n_sh > 0.0 && n_r > 0.0) {
        return Err(Error::domain(format!(
            "N_Sc, N_Sh and N_r must be positive (got {n_sc}, {n_sh}, {n_r})"
        )));
    }
    let ratio = n_sc * n_sh / n_r;
    if ratio > 1.0 + EPS {
        return Err(Error::model(format!(
            "shared PRBs {} exceed total PRBs {n_r}",
            n_sc * n_sh
        )));
    }
    Ok(ratio.min(1.0).powi(2))
}

/// `P_O P_SH|O C_Ca / N_Ca^2`.
pub fn collision_probability(p_o: f64, p_sh: f64, c_ca: f64, n_ca: f64) -> Result<f64> {
    if !(n_ca > 0.0) || !(c_ca >= 0.0) {
        return Err(Error::domain(format!(
            "candidate counts must be positive (C_Ca={c_ca}, N_Ca={n_ca})"
        )));
    }
    let delta = p_o * p_sh * c_ca / (n_ca * n_ca);
    if !(0.0..=1.0 + EPS).contains(&delta) {
        return Err(Error::model(format!(
            "collision probability {delta} outside [0, 1]; check C_Ca={c_ca} against N_Ca={n_ca}"
        )));
    }
    Ok(delta.min(1.0))
}

/// Probability that a neighbour transmitting `tau` packets/s occupies the
/// same 1 ms subframe: `tau / 1000`.
pub fn half_duplex_probability(tau: f64) -> Result<f64> {
    if !(0.0..=1000.0).contains(&tau) {
        return Err(Error::domain(format!(
            "packet rate must lie in [0, 1000] (got {tau})"
        )));
    }
    Ok(tau / 1000.0)
}

/// `prod (1 - delta_col_j) * prod (1 - delta_hd_j)` over the neighbours.
pub fn packet_reception_ratio(delta_col: &[f64], delta_hd: &[f64]) -> Result<f64> {
    let mut prr = 1.0;
    for &d in delta_col.iter().chain(delta_hd) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::domain(format!("probability {d} outside [0, 1]")));
        }
        prr *= 1.0 - d;
    }
    Ok(prr)
}

/// Point of the pass at which the fairness index is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum EvalEpoch {
    /// Half of the residence time.
    #[default]
    MidPass,
    /// Fraction of the residence time in `[0, 1]`.
    Fraction(f64),
    /// Seconds after entering coverage, the same for every vehicle.
    Absolute(f64),
}

impl EvalEpoch {
    pub fn time(&self, speed: f64, coverage_range: f64) -> Result<f64> {
        let residence = scenario::residence_time(speed, coverage_range)?;
        match *self {
            EvalEpoch::MidPass => Ok(residence / 2.0),
            EvalEpoch::Fraction(f) if (0.0..=1.0).contains(&f) => Ok(residence * f),
            EvalEpoch::Fraction(f) => {
                Err(Error::domain(format!("epoch fraction {f} outside [0, 1]")))
            }
            EvalEpoch::Absolute(t) if t >= 0.0 => Ok(t),
            EvalEpoch::Absolute(t) => Err(Error::domain(format!("epoch {t} is negative"))),
        }
    }
}

/// Everything the fairness indices need besides the window vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FairnessInputs {
    pub channel: ChannelParams,
    pub sps: SpsParams,
    /// Speed magnitude per vehicle (m/s).
    pub speeds: Vec<f64>,
    /// Distance to the RSU per vehicle at the evaluation epoch (m).
    pub distances: Vec<f64>,
    /// `|h_i|^2` per vehicle.
    pub gains: Vec<f64>,
    pub avg_speed: f64,
    /// Distance of a vehicle at the average speed at the evaluation epoch.
    pub avg_distance: f64,
    pub avg_gain: f64,
}

impl FairnessInputs {
    /// Builds inputs for one vehicle per lane moving at `speeds`.
    pub fn from_scenario(
        scenario: &ScenarioConfig,
        channel: &ChannelParams,
        sps: &SpsParams,
        speeds: &[f64],
        epoch: EvalEpoch,
        seed: u64,
    ) -> Result<Self> {
        if speeds.len() != scenario.num_lanes {
            return Err(Error::domain(format!(
                "{} speeds for {} lanes",
                speeds.len(),
                scenario.num_lanes
            )));
        }
        let mut distances = Vec::with_capacity(speeds.len());
        for (lane, &v) in speeds.iter().enumerate() {
            let t = epoch.time(v.abs(), scenario.coverage_range)?;
            distances.push(scenario.distance_at(lane, v.abs(), t)?);
        }
        let speeds: Vec<f64> = speeds.iter().map(|v| v.abs()).collect();
        let avg_speed = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let t_avg = epoch.time(avg_speed, scenario.coverage_range)?;
        let avg_distance = scenario::distance_to_rsu(
            scenario::vehicle_position(avg_speed, t_avg)?,
            scenario.rsu(),
        );
        let gains = if channel.unit_gain {
            vec![1.0; speeds.len()]
        } else {
            sample_gains(scenario, channel, &speeds, epoch, seed)?
        };
        let avg_gain = gains.iter().sum::<f64>() / gains.len() as f64;
        Ok(Self {
            channel: channel.clone(),
            sps: sps.clone(),
            speeds,
            distances,
            gains,
            avg_speed,
            avg_distance,
            avg_gain,
        })
    }

    pub fn num_vehicles(&self) -> usize {
        self.speeds.len()
    }

    fn check_windows(&self, windows: &[u32]) -> Result<()> {
        if windows.len() != self.num_vehicles() {
            return Err(Error::domain(format!(
                "window vector has {} entries for {} vehicles",
                windows.len(),
                self.num_vehicles()
            )));
        }
        Ok(())
    }

    fn spectral_term(&self, gain: f64, distance: f64) -> Result<f64> {
        let h = Complex64::new(gain.sqrt(), 0.0);
        Ok((1.0 + self.channel.snr(h, distance)?).log2())
    }
}

/// Per-vehicle fairness index
/// `log2(1 + p |h_i|^2 d_i^-a / sigma^2) * prod_{j != i} (1 - delta_col_j) / v_i`.
pub fn fairness_index_vehicle(i: usize, inputs: &FairnessInputs, windows: &[u32]) -> Result<f64> {
    inputs.check_windows(windows)?;
    if i >= inputs.num_vehicles() {
        return Err(Error::domain(format!("vehicle {i} out of range")));
    }
    let v = inputs.speeds[i];
    if !(v > 0.0) {
        return Err(Error::domain(format!("speed must be positive (got {v})")));
    }
    let spectral = inputs.spectral_term(inputs.gains[i], inputs.distances[i])?;
    let mut survive = 1.0;
    for (j, &w_j) in windows.iter().enumerate() {
        if j != i {
            survive *= 1.0
                - inputs
                    .sps
                    .collision(f64::from(windows[i]), f64::from(w_j))?;
        }
    }
    Ok(spectral * survive / v)
}

/// Network fairness index: the per-vehicle index evaluated at the average
/// speed and the average window.
pub fn fairness_index_network(inputs: &FairnessInputs, windows: &[u32]) -> Result<f64> {
    inputs.check_windows(windows)?;
    let v = inputs.avg_speed;
    if !(v > 0.0) {
        return Err(Error::domain(format!(
            "average speed must be positive (got {v})"
        )));
    }
    let w_bar = windows.iter().map(|&w| f64::from(w)).sum::<f64>() / windows.len() as f64;
    let spectral = inputs.spectral_term(inputs.avg_gain, inputs.avg_distance)?;
    let neighbours = windows.len().saturating_sub(1) as i32;
    let delta = if neighbours > 0 {
        inputs.sps.collision(w_bar, w_bar)?
    } else {
        0.0
    };
    Ok(spectral * (1.0 - delta).powi(neighbours) / v)
}

/// `F_i = |K_index(w) - K_index^i(w)|` for every vehicle.
pub fn objective_vector(windows: &[u32], inputs: &FairnessInputs) -> Result<Vec<f64>> {
    inputs.check_windows(windows)?;
    if let Some(w) = windows.iter().find(|&&w| !inputs.sps.window_in_bounds(w)) {
        let [lo, hi] = inputs.sps.window_bounds;
        return Err(Error::domain(format!("window {w} outside [{lo}, {hi}]")));
    }
    let network = fairness_index_network(inputs, windows)?;
    (0..windows.len())
        .map(|i| Ok((network - fairness_index_vehicle(i, inputs, windows)?).abs()))
        .collect()
}

/// Channel gains `|h|^2` at the evaluation epoch, one AR(1) chain per lane
/// started from a unit-variance draw.
pub fn sample_gains(
    scenario: &ScenarioConfig,
    channel: &ChannelParams,
    speeds: &[f64],
    epoch: EvalEpoch,
    seed: u64,
) -> Result<Vec<f64>> {
    let rsu = scenario.rsu();
    speeds
        .iter()
        .enumerate()
        .map(|(lane, &v)| {
            let mut rng = rng::stream(seed, 1_000 + lane as u64);
            let mut state = ChannelState::new(channel::complex_gaussian(&mut rng));
            let t_eval = epoch.time(v, scenario.coverage_range)?;
            let steps = (t_eval / channel.step_interval).floor() as u64;
            let dir = match scenario.direction(lane) {
                Direction::Forward => [1.0, 0.0, 0.0],
                Direction::Backward => [-1.0, 0.0, 0.0],
            };
            for k in 0..steps {
                let t = k as f64 * channel.step_interval;
                let cos = match channel.angle_cos {
                    Some(c) => c,
                    None => {
                        channel::link_angle_cos(scenario.position_in_lane(lane, v, t)?, dir, rsu)
                    }
                };
                state.advance(channel, v, cos, &mut rng)?;
            }
            Ok(state.h.norm_sqr())
        })
        .collect()
}
