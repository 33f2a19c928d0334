//! Link model: Doppler, Jakes correlation, AR(1) fading and Shannon rate.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_4, PI};

use crate::error::{Error, Result};
use crate::rng;
use crate::scenario::Point3;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// ITS band carrier used for the default wavelength.
pub const ITS_CARRIER_HZ: f64 = 5.9e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// Hz.
    pub bandwidth: f64,
    /// W.
    pub tx_power: f64,
    /// W.
    pub noise_power: f64,
    pub path_loss_exponent: f64,
    /// m.
    pub wavelength: f64,
    /// Fixed cos(theta) between motion and link direction. `None` derives it
    /// from geometry at every step.
    pub angle_cos: Option<f64>,
    /// Interval between successive fading samples (s).
    pub step_interval: f64,
    /// Use `|h|^2 = 1` in the fairness index instead of a sampled gain.
    pub unit_gain: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth: 10e6,
            tx_power: 0.2,
            // -174 dBm/Hz over 10 MHz
            noise_power: 3.981_071_705_534_97e-14,
            path_loss_exponent: 3.0,
            wavelength: SPEED_OF_LIGHT / ITS_CARRIER_HZ,
            angle_cos: None,
            step_interval: 0.1,
            unit_gain: true,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel.bandwidth", self.bandwidth),
            ("channel.noise_power", self.noise_power),
            ("channel.wavelength", self.wavelength),
            ("channel.step_interval", self.step_interval),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(key, "must be positive"));
            }
        }
        if !(self.tx_power >= 0.0) {
            return Err(Error::invalid("channel.tx_power", "must be non-negative"));
        }
        if !(self.path_loss_exponent >= 0.0) {
            return Err(Error::invalid(
                "channel.path_loss_exponent",
                "must be non-negative",
            ));
        }
        if let Some(c) = self.angle_cos {
            if !(c.abs() <= 1.0) {
                return Err(Error::invalid("channel.angle_cos", "must lie in [-1, 1]"));
            }
        }
        Ok(())
    }

    /// Received SNR `p |h|^2 d^-a / sigma^2`.
    pub fn snr(&self, h: Complex64, d: f64) -> Result<f64> {
        if !(d > 0.0) {
            return Err(Error::domain(format!(
                "distance must be positive for path loss (got {d})"
            )));
        }
        Ok(self.tx_power * h.norm_sqr() * d.powf(-self.path_loss_exponent) / self.noise_power)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    pub h: Complex64,
    pub rho: f64,
}

impl ChannelState {
    pub fn new(h: Complex64) -> Self {
        Self { h, rho: 1.0 }
    }

    /// Advance one step of `params.step_interval` for a vehicle moving at
    /// `speed` with link angle cosine `angle_cos`.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        params: &ChannelParams,
        speed: f64,
        angle_cos: f64,
        rng: &mut R,
    ) -> Result<Complex64> {
        let fd = doppler_shift(speed, params.wavelength, angle_cos)?;
        self.rho = correlation(fd, params.step_interval)?;
        self.h = ar1_step(self.h, self.rho, rng)?;
        Ok(self.h)
    }
}

/// Cosine of the angle between the direction of motion and the line towards
/// the RSU.
pub fn link_angle_cos(position: Point3, velocity_dir: Point3, rsu: Point3) -> f64 {
    let to_rsu = [
        rsu[0] - position[0],
        rsu[1] - position[1],
        rsu[2] - position[2],
    ];
    let n = (to_rsu.iter().map(|x| x * x).sum::<f64>()).sqrt();
    let m = (velocity_dir.iter().map(|x| x * x).sum::<f64>()).sqrt();
    if n == 0.0 || m == 0.0 {
        return 0.0;
    }
    let dot: f64 = to_rsu.iter().zip(velocity_dir).map(|(a, b)| a * b).sum();
    (dot / (n * m)).clamp(-1.0, 1.0)
}

/// Doppler shift `(v / wavelength) cos(theta)`.
pub fn doppler_shift(v: f64, wavelength: f64, angle_cos: f64) -> Result<f64> {
    if !(wavelength > 0.0) {
        return Err(Error::domain(format!(
            "wavelength must be positive (got {wavelength})"
        )));
    }
    Ok(v / wavelength * angle_cos)
}

const SERIES_LIMIT: f64 = 12.0;

/// Zeroth-order Bessel function of the first kind.
///
/// Power series for `|x| <= 12`, Hankel asymptotic expansion beyond.
pub fn bessel_j0(x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "bessel_j0 needs a finite argument (got {x})"
        )));
    }
    let x = x.abs();
    Ok(if x <= SERIES_LIMIT {
        j0_series(x)
    } else {
        j0_asymptotic(x)
    })
}

fn j0_series(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && kf > x {
            break;
        }
    }
    sum
}

fn j0_asymptotic(x: f64) -> f64 {
    // Hankel coefficients for nu = 0: a_k = prod_{m=1..k} (-(2m-1)^2) / (k! 8^k)
    let mut p = 0.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 0..60 {
        let term = a / x.powi(k);
        if term.abs() > prev {
            break;
        }
        prev = term.abs();
        match k % 4 {
            0 => p += term,
            1 => q += term,
            2 => p -= term,
            _ => q -= term,
        }
        if term.abs() < 1e-17 {
            break;
        }
        let m = (2 * k + 1) as f64;
        a *= -(m * m) / ((k + 1) as f64 * 8.0);
    }
    let phase = x - FRAC_PI_4;
    (2.0 / (PI * x)).sqrt() * (p * phase.cos() - q * phase.sin())
}

/// Jakes correlation `J0(2 pi f_d t)` over lag `t`.
pub fn correlation(doppler: f64, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!("lag must be non-negative (got {t})")));
    }
    bessel_j0(2.0 * PI * doppler * t)
}

/// One draw of circularly-symmetric complex Gaussian noise with unit variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// AR(1) update `rho h + e sqrt(1 - rho^2)`.
pub fn ar1_step<R: Rng + ?Sized>(h_prev: Complex64, rho: f64, rng: &mut R) -> Result<Complex64> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::domain(format!("|rho| must be <= 1 (got {rho})")));
    }
    let e = complex_gaussian(rng);
    Ok(h_prev * rho + e * (1.0 - rho * rho).sqrt())
}

pub fn ar1_step_seeded(h_prev: Complex64, rho: f64, seed: u64) -> Result<Complex64> {
    ar1_step(h_prev, rho, &mut rng::stream(seed, 0))
}

/// Shannon rate `B log2(1 + SNR)` in bit/s.
pub fn shannon_rate(params: &ChannelParams, h: Complex64, d: f64) -> Result<f64> {
    Ok(params.bandwidth * (1.0 + params.snr(h, d)?).log2())
}
