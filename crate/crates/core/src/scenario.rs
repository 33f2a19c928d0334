//! Highway geometry: lanes, per-lane speeds, RSU placement and arrivals.

use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Euclidean 3-vector in metres.
pub type Point3 = [f64; 3];

/// Lateral spacing used when lane offsets are enabled.
pub const LANE_WIDTH_M: f64 = 3.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_lanes: usize,
    /// Speed magnitude per lane (m/s).
    pub lane_speeds: Vec<f64>,
    /// Offsets from the average speed used to build lane speeds in sweeps.
    pub lane_speed_offsets: Vec<f64>,
    /// Whether the second half of the lanes drives towards decreasing x.
    pub two_way: bool,
    /// Place lane `k` at lateral coordinate `3.5 * k`. Off by default, which
    /// keeps every vehicle on the x axis.
    pub lane_offsets: bool,
    /// RSU position; `None` means `(R/2, 10, 5)`.
    pub rsu_position: Option<Point3>,
    pub coverage_range: f64,
    /// Poisson arrival rate per lane (vehicles/s).
    pub arrival_rate: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub max_adjacent_speed_gap: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_lanes: 4,
            lane_speeds: vec![22.0, 24.0, 26.0, 28.0],
            lane_speed_offsets: vec![-3.0, -1.0, 1.0, 3.0],
            two_way: true,
            lane_offsets: false,
            rsu_position: None,
            coverage_range: 500.0,
            arrival_rate: 0.1,
            speed_min: 20.0,
            speed_max: 30.0,
            max_adjacent_speed_gap: 4.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_lanes == 0 {
            return Err(Error::invalid("scenario.num_lanes", "must be at least 1"));
        }
        if !(self.coverage_range > 0.0) || !self.coverage_range.is_finite() {
            return Err(Error::invalid(
                "scenario.coverage_range",
                "must be positive",
            ));
        }
        if !(self.arrival_rate >= 0.0) {
            return Err(Error::invalid(
                "scenario.arrival_rate",
                "must be non-negative",
            ));
        }
        if !(self.speed_min > 0.0 && self.speed_min <= self.speed_max) {
            return Err(Error::invalid(
                "scenario.speed_min",
                "speed band must satisfy 0 < speed_min <= speed_max",
            ));
        }
        if !(self.max_adjacent_speed_gap >= 0.0) {
            return Err(Error::invalid(
                "scenario.max_adjacent_speed_gap",
                "must be non-negative",
            ));
        }
        if self.lane_speed_offsets.len() != self.num_lanes {
            return Err(Error::invalid(
                "scenario.lane_speed_offsets",
                format!("expected {} entries", self.num_lanes),
            ));
        }
        self.check_lane_speeds("scenario.lane_speeds", &self.lane_speeds)
    }

    /// Checks count, sign, speed band and adjacent-lane gap of `speeds`.
    pub fn check_lane_speeds(&self, key: &str, speeds: &[f64]) -> Result<()> {
        if speeds.len() != self.num_lanes {
            return Err(Error::invalid(
                key,
                format!(
                    "expected {} lane speeds, got {}",
                    self.num_lanes,
                    speeds.len()
                ),
            ));
        }
        for &v in speeds {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(key, format!("speed {v} must be positive")));
            }
            if v < self.speed_min || v > self.speed_max {
                return Err(Error::invalid(
                    key,
                    format!("speed {v} outside [{}, {}]", self.speed_min, self.speed_max),
                ));
            }
        }
        for pair in speeds.windows(2) {
            if (pair[1] - pair[0]).abs() > self.max_adjacent_speed_gap + 1e-9 {
                return Err(Error::invalid(
                    key,
                    format!(
                        "adjacent lanes {} and {} differ by more than {} m/s",
                        pair[0], pair[1], self.max_adjacent_speed_gap
                    ),
                ));
            }
        }
        Ok(())
    }

    /// Lane speeds centred on `avg_speed` using the configured offsets.
    pub fn lane_speeds_around(&self, avg_speed: f64) -> Result<Vec<f64>> {
        let speeds: Vec<f64> = self
            .lane_speed_offsets
            .iter()
            .map(|o| avg_speed + o)
            .collect();
        self.check_lane_speeds("sweep.avg_speeds", &speeds)?;
        Ok(speeds)
    }

    pub fn rsu(&self) -> Point3 {
        self.rsu_position
            .unwrap_or([self.coverage_range / 2.0, 10.0, 5.0])
    }

    pub fn direction(&self, lane: usize) -> Direction {
        if self.two_way && lane >= self.num_lanes.div_ceil(2) {
            Direction::Backward
        } else {
            Direction::Forward
        }
    }

    pub fn lateral_offset(&self, lane: usize) -> f64 {
        if self.lane_offsets {
            LANE_WIDTH_M * lane as f64
        } else {
            0.0
        }
    }

    /// Position of a lane-`lane` vehicle `t` seconds after it entered coverage.
    /// Forward lanes start at x = 0, backward lanes at x = R.
    pub fn position_in_lane(&self, lane: usize, speed: f64, t: f64) -> Result<Point3> {
        let mut p = vehicle_position(speed.abs(), t)?;
        if self.direction(lane) == Direction::Backward {
            p[0] = self.coverage_range - p[0];
        }
        p[1] = self.lateral_offset(lane);
        Ok(p)
    }

    /// Distance to the RSU at the given epoch of the pass.
    pub fn distance_at(&self, lane: usize, speed: f64, t: f64) -> Result<f64> {
        Ok(distance_to_rsu(
            self.position_in_lane(lane, speed, t)?,
            self.rsu(),
        ))
    }

    /// Poisson arrivals for every lane over `horizon` seconds; one stream per lane.
    pub fn spawn_vehicles(
        &self,
        horizon: f64,
        packet_rate: f64,
        seed: u64,
    ) -> Result<Vec<Vehicle>> {
        if !(packet_rate > 0.0) {
            return Err(Error::domain("packet rate must be positive"));
        }
        let mut out = Vec::new();
        for (lane, &speed) in self.lane_speeds.iter().enumerate() {
            let times = spawn_arrivals_stream(self.arrival_rate, horizon, seed, lane as u64)?;
            out.extend(times.into_iter().map(|entry_time| Vehicle {
                id: 0,
                lane,
                speed,
                entry_time,
                packet_rate,
            }));
        }
        out.sort_by(|a, b| {
            a.entry_time
                .total_cmp(&b.entry_time)
                .then(a.lane.cmp(&b.lane))
        });
        for (id, v) in out.iter_mut().enumerate() {
            v.id = id as u64;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u64,
    pub lane: usize,
    /// Speed magnitude, equal to the lane speed.
    pub speed: f64,
    pub entry_time: f64,
    pub packet_rate: f64,
}

impl Vehicle {
    pub fn exit_time(&self, coverage_range: f64) -> Result<f64> {
        Ok(self.entry_time + residence_time(self.speed, coverage_range)?)
    }
}

/// Time spent inside coverage of range `r` at speed `v`.
pub fn residence_time(v: f64, r: f64) -> Result<f64> {
    if !(v > 0.0) || !(r > 0.0) {
        return Err(Error::domain(format!(
            "residence_time needs v > 0 and R > 0 (got v={v}, R={r})"
        )));
    }
    Ok(r / v)
}

/// Position on the road axis: `(v t, 0, 0)`.
pub fn vehicle_position(v: f64, t: f64) -> Result<Point3> {
    if !(t >= 0.0) {
        return Err(Error::domain(format!(
            "time must be non-negative (got {t})"
        )));
    }
    Ok([v * t, 0.0, 0.0])
}

pub fn distance_to_rsu(vehicle: Point3, rsu: Point3) -> f64 {
    let dx = vehicle[0] - rsu[0];
    let dy = vehicle[1] - rsu[1];
    let dz = vehicle[2] - rsu[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Sorted Poisson arrival times in `[0, horizon)`.
pub fn spawn_arrivals(rate: f64, horizon: f64, seed: u64) -> Result<Vec<f64>> {
    spawn_arrivals_stream(rate, horizon, seed, 0)
}

fn spawn_arrivals_stream(rate: f64, horizon: f64, seed: u64, stream: u64) -> Result<Vec<f64>> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::domain(format!(
            "arrival rate must be >= 0 (got {rate})"
        )));
    }
    if !(horizon > 0.0) {
        return Err(Error::domain(format!(
            "horizon must be > 0 (got {horizon})"
        )));
    }
    if rate == 0.0 {
        return Ok(Vec::new());
    }
    let gap = Exp::new(rate).map_err(|e| Error::domain(e.to_string()))?;
    let mut rng = rng::stream(seed, stream);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += gap.sample(&mut rng);
        if t >= horizon {
            break;
        }
        out.push(t);
    }
    Ok(out)
}
