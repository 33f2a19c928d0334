//! Monte Carlo simulator of sensing-based semi-persistent scheduling.
//!
//! Time advances one reservation period (RRI) at a time. Each vehicle
//! generates one packet per period at its generation phase and transmits on a
//! reserved PRB `(slot, subchannel)` that it keeps for `rc` periods. Selection
//! windows wrap cyclically inside the period, so a window starting near the
//! end of a period continues at its beginning.
//!
//! Sensing is idealised: when reselecting, a vehicle sees every reservation
//! another vehicle announced during the trailing 1000 ms.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{SpsParams, SENSING_WINDOW_MS};
use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, SimRng};

/// When a vehicle's packet generation falls inside a period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Drawn once per vehicle and kept for the whole run.
    #[default]
    Fixed,
    /// Drawn afresh at every reselection.
    Redrawn,
    /// Every vehicle generates at the start of the period.
    Aligned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub num_vehicles: usize,
    /// One window per vehicle, or a single value shared by all.
    pub windows: Vec<u32>,
    /// Inclusive reselection-counter range.
    pub rc_range: [u32; 2],
    /// Probability of keeping the PRB when the counter expires. Unlike the
    /// analytic model this may be set to 1.
    pub keep_probability: f64,
    pub phase: PhaseMode,
    pub sensing: bool,
    /// Independent episodes an estimate is split across.
    pub replicas: usize,
    /// Periods simulated before counting starts.
    pub warmup_periods: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_vehicles: 3,
            windows: vec![4],
            rc_range: [5, 15],
            keep_probability: 0.8,
            phase: PhaseMode::Fixed,
            sensing: true,
            replicas: 32,
            warmup_periods: 20,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, sps: &SpsParams) -> Result<()> {
        let slots = sps
            .slots_per_rri()
            .map_err(|e| Error::invalid("sps.rri", e.to_string()))?;
        if sps.num_subchannels == 0 {
            return Err(Error::invalid("sps.num_subchannels", "must be at least 1"));
        }
        if self.num_vehicles == 0 {
            return Err(Error::invalid("sim.num_vehicles", "must be at least 1"));
        }
        if self.windows.len() != 1 && self.windows.len() != self.num_vehicles {
            return Err(Error::invalid(
                "sim.windows",
                format!(
                    "expected 1 or {} entries, got {}",
                    self.num_vehicles,
                    self.windows.len()
                ),
            ));
        }
        if let Some(&w) = self.windows.iter().find(|&&w| w >= slots) {
            return Err(Error::invalid(
                "sim.windows",
                format!("window {w} does not fit in a {slots}-slot period"),
            ));
        }
        let [lo, hi] = self.rc_range;
        if lo == 0 || lo > hi {
            return Err(Error::invalid("sim.rc_range", "need 1 <= rc_min <= rc_max"));
        }
        if !(0.0..=1.0).contains(&self.keep_probability) {
            return Err(Error::invalid("sim.keep_probability", "must lie in [0, 1]"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("sim.replicas", "must be at least 1"));
        }
        Ok(())
    }

    pub fn window_of(&self, vehicle: usize) -> u32 {
        if self.windows.len() == 1 {
            self.windows[0]
        } else {
            self.windows[vehicle]
        }
    }
}

/// A physical resource block: one slot of the period on one subchannel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Prb {
    pub slot: u32,
    pub subchannel: u32,
}

/// Who transmits on which PRB during one period. Rebuilt every period.
#[derive(Debug, Clone)]
pub struct ResourceGrid {
    slots: u32,
    subchannels: u32,
    occupancy: Vec<Vec<usize>>,
    per_slot: Vec<u32>,
    touched: Vec<usize>,
}

impl ResourceGrid {
    pub fn new(slots: u32, subchannels: u32) -> Result<Self> {
        if slots == 0 || subchannels == 0 {
            return Err(Error::domain(
                "resource grid needs at least one slot and one subchannel",
            ));
        }
        let cells = slots as usize * subchannels as usize;
        Ok(Self {
            slots,
            subchannels,
            occupancy: vec![Vec::new(); cells],
            per_slot: vec![0; slots as usize],
            touched: Vec::new(),
        })
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn subchannels(&self) -> u32 {
        self.subchannels
    }

    fn cell(&self, prb: Prb) -> Result<usize> {
        if prb.slot >= self.slots || prb.subchannel >= self.subchannels {
            return Err(Error::domain(format!(
                "PRB ({}, {}) outside a {}x{} grid",
                prb.slot, prb.subchannel, self.slots, self.subchannels
            )));
        }
        Ok(prb.slot as usize * self.subchannels as usize + prb.subchannel as usize)
    }

    pub fn occupy(&mut self, prb: Prb, vehicle: usize) -> Result<()> {
        let cell = self.cell(prb)?;
        if self.occupancy[cell].is_empty() {
            self.touched.push(cell);
        }
        self.occupancy[cell].push(vehicle);
        self.per_slot[prb.slot as usize] += 1;
        Ok(())
    }

    pub fn transmitters(&self, prb: Prb) -> &[usize] {
        match self.cell(prb) {
            Ok(cell) => &self.occupancy[cell],
            Err(_) => &[],
        }
    }

    /// Number of transmissions in `slot` across all subchannels.
    pub fn slot_load(&self, slot: u32) -> u32 {
        self.per_slot.get(slot as usize).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.touched.iter().map(|&c| self.occupancy[c].len()).sum()
    }

    pub fn clear(&mut self) {
        for &cell in &self.touched {
            let slot = cell / self.subchannels as usize;
            self.per_slot[slot] = 0;
            self.occupancy[cell].clear();
        }
        self.touched.clear();
    }
}

/// A reservation seen by a reselecting vehicle, in window coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SensedPrb {
    /// Slot offset from the start of the selection window.
    pub offset: u32,
    pub subchannel: u32,
    /// Periods since the reservation was last announced.
    pub age: u64,
}

/// Position inside a selection window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowPrb {
    pub offset: u32,
    pub subchannel: u32,
}

/// Pick a PRB uniformly from the `(window + 1) x num_subchannels` selection
/// window minus the sensed reservations. If exclusion would leave fewer than
/// `ceil(candidate_fraction * num_subchannels * (window + 1))` candidates,
/// the least recently announced exclusions are re-admitted first.
pub fn reselect<R: Rng + ?Sized>(
    window: u32,
    num_subchannels: u32,
    candidate_fraction: f64,
    sensed: &[SensedPrb],
    rng: &mut R,
) -> Result<WindowPrb> {
    if num_subchannels == 0 {
        return Err(Error::domain("empty resource grid"));
    }
    let total = (u64::from(window) + 1) * u64::from(num_subchannels);
    let floor = ((candidate_fraction * total as f64).ceil() as u64).clamp(1, total) as usize;

    // Most recent sighting of each excluded PRB.
    let mut excluded: BTreeMap<WindowPrb, u64> = BTreeMap::new();
    for s in sensed {
        if s.offset > window || s.subchannel >= num_subchannels {
            continue;
        }
        let prb = WindowPrb {
            offset: s.offset,
            subchannel: s.subchannel,
        };
        excluded
            .entry(prb)
            .and_modify(|age| *age = (*age).min(s.age))
            .or_insert(s.age);
    }

    let free = total as usize - excluded.len();
    if free < floor {
        let mut oldest: Vec<(WindowPrb, u64)> = excluded.iter().map(|(&p, &a)| (p, a)).collect();
        oldest.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        for (prb, _) in oldest.into_iter().take(floor - free) {
            excluded.remove(&prb);
        }
    }

    let candidates = total as usize - excluded.len();
    let mut pick = rng.random_range(0..candidates);
    for offset in 0..=window {
        for subchannel in 0..num_subchannels {
            let prb = WindowPrb { offset, subchannel };
            if excluded.contains_key(&prb) {
                continue;
            }
            if pick == 0 {
                return Ok(prb);
            }
            pick -= 1;
        }
    }
    Err(Error::Internal("candidate enumeration overran".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpsAgentState {
    pub id: usize,
    pub window: u32,
    pub rri_slots: u32,
    pub keep_probability: f64,
    /// Generation slot within the period.
    pub phase: u32,
    /// Reserved PRB; `None` until the first selection or after a release.
    pub current_prb: Option<Prb>,
    pub rc: u32,
}

/// One transmission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxEvent {
    /// Absolute slot index since the start of the run.
    pub slot: u64,
    pub vehicle_id: usize,
    pub subchannel: u32,
    /// Another vehicle used the same PRB.
    pub collided: bool,
    /// Another vehicle transmitted in the same slot on any subchannel.
    pub slot_shared: bool,
    /// The PRB was freshly selected for this transmission.
    pub after_reselection: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimStats {
    pub periods: u64,
    pub transmissions: u64,
    pub expiries: u64,
    pub kept: u64,
    pub reselections: u64,
    /// Counter values drawn, indexed by value.
    pub rc_draws: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
struct Announcement {
    vehicle: usize,
    prb: Prb,
    period: u64,
}

/// One simulation episode. Sequential by construction: all vehicles share
/// the grid and the sensing history.
#[derive(Debug, Clone)]
pub struct Simulator {
    num_subchannels: u32,
    candidate_fraction: f64,
    rc_range: [u32; 2],
    phase_mode: PhaseMode,
    sensing: bool,
    sensing_periods: u64,
    agents: Vec<SpsAgentState>,
    fresh: Vec<bool>,
    grid: ResourceGrid,
    announcements: Vec<Announcement>,
    period: u64,
    rng: SimRng,
    stats: SimStats,
}

impl Simulator {
    pub fn new(sps: &SpsParams, config: &SimConfig, seed: u64) -> Result<Self> {
        Self::with_rng(sps, config, rng::stream(seed, 0))
    }

    pub fn with_rng(sps: &SpsParams, config: &SimConfig, mut rng: SimRng) -> Result<Self> {
        config.validate(sps)?;
        let slots = sps.slots_per_rri()?;
        let sensing_slots = SENSING_WINDOW_MS * f64::from(1u32 << sps.numerology);
        let sensing_periods = (sensing_slots / f64::from(slots)).ceil() as u64;
        let agents = (0..config.num_vehicles)
            .map(|id| SpsAgentState {
                id,
                window: config.window_of(id),
                rri_slots: slots,
                keep_probability: config.keep_probability,
                phase: match config.phase {
                    PhaseMode::Aligned => 0,
                    _ => rng.random_range(0..slots),
                },
                current_prb: None,
                rc: 0,
            })
            .collect();
        Ok(Self {
            num_subchannels: sps.num_subchannels,
            candidate_fraction: sps.candidate_fraction,
            rc_range: config.rc_range,
            phase_mode: config.phase,
            sensing: config.sensing,
            sensing_periods,
            agents,
            fresh: vec![false; config.num_vehicles],
            grid: ResourceGrid::new(slots, sps.num_subchannels)?,
            announcements: Vec::new(),
            period: 0,
            rng,
            stats: SimStats {
                rc_draws: vec![0; config.rc_range[1] as usize + 1],
                ..SimStats::default()
            },
        })
    }

    pub fn agents(&self) -> &[SpsAgentState] {
        &self.agents
    }

    pub fn stats(&self) -> &SimStats {
        &self.stats
    }

    pub fn period(&self) -> u64 {
        self.period
    }

    fn draw_rc(&mut self) -> u32 {
        let [lo, hi] = self.rc_range;
        let rc = self.rng.random_range(lo..=hi);
        self.stats.rc_draws[rc as usize] += 1;
        rc
    }

    fn sensed_for(&self, vehicle: usize) -> Vec<SensedPrb> {
        if !self.sensing {
            return Vec::new();
        }
        let agent = &self.agents[vehicle];
        let slots = agent.rri_slots;
        let start = (agent.phase + 1) % slots;
        self.announcements
            .iter()
            .filter(|a| a.vehicle != vehicle)
            .filter_map(|a| {
                let offset = (a.prb.slot + slots - start) % slots;
                (offset <= agent.window).then_some(SensedPrb {
                    offset,
                    subchannel: a.prb.subchannel,
                    age: self.period - a.period,
                })
            })
            .collect()
    }

    fn reselect_agent(&mut self, vehicle: usize) -> Result<()> {
        let slots = self.agents[vehicle].rri_slots;
        if self.phase_mode == PhaseMode::Redrawn {
            self.agents[vehicle].phase = self.rng.random_range(0..slots);
        }
        let sensed = self.sensed_for(vehicle);
        let agent = &self.agents[vehicle];
        let (phase, window) = (agent.phase, agent.window);
        let choice = reselect(
            window,
            self.num_subchannels,
            self.candidate_fraction,
            &sensed,
            &mut self.rng,
        )?;
        let rc = self.draw_rc();
        let agent = &mut self.agents[vehicle];
        agent.current_prb = Some(Prb {
            slot: (phase + 1 + choice.offset) % slots,
            subchannel: choice.subchannel,
        });
        agent.rc = rc;
        self.fresh[vehicle] = true;
        self.stats.reselections += 1;
        Ok(())
    }

    /// Advance one reservation period and return its transmissions in slot
    /// order.
    pub fn step(&mut self) -> Result<Vec<TxEvent>> {
        let horizon = self.sensing_periods;
        let now = self.period;
        self.announcements.retain(|a| now - a.period <= horizon);

        for v in 0..self.agents.len() {
            if self.agents[v].current_prb.is_none() {
                self.reselect_agent(v)?;
            }
        }

        self.grid.clear();
        for agent in &self.agents {
            if let Some(prb) = agent.current_prb {
                self.grid.occupy(prb, agent.id)?;
            }
        }

        let slots = u64::from(self.grid.slots());
        let mut events = Vec::with_capacity(self.agents.len());
        for agent in &self.agents {
            let Some(prb) = agent.current_prb else {
                continue;
            };
            events.push(TxEvent {
                slot: now * slots + u64::from(prb.slot),
                vehicle_id: agent.id,
                subchannel: prb.subchannel,
                collided: self.grid.transmitters(prb).len() > 1,
                slot_shared: self.grid.slot_load(prb.slot) > 1,
                after_reselection: self.fresh[agent.id],
            });
        }
        events.sort_by_key(|e| (e.slot, e.subchannel, e.vehicle_id));
        self.stats.transmissions += events.len() as u64;

        for v in 0..self.agents.len() {
            self.fresh[v] = false;
            let Some(prb) = self.agents[v].current_prb else {
                continue;
            };
            self.agents[v].rc -= 1;
            let mut announce = self.agents[v].rc > 0;
            if self.agents[v].rc == 0 {
                self.stats.expiries += 1;
                let keep = self.agents[v].keep_probability;
                if keep > 0.0 && self.rng.random_bool(keep) {
                    self.stats.kept += 1;
                    self.agents[v].rc = self.draw_rc();
                    announce = true;
                } else {
                    self.agents[v].current_prb = None;
                }
            }
            if announce {
                self.announcements.retain(|a| a.vehicle != v);
                self.announcements.push(Announcement {
                    vehicle: v,
                    prb,
                    period: now,
                });
            }
        }

        self.period += 1;
        self.stats.periods += 1;
        Ok(events)
    }

    /// Run `periods` periods, collecting every transmission.
    pub fn run(&mut self, periods: u64) -> Result<Vec<TxEvent>> {
        let mut all = Vec::new();
        for _ in 0..periods {
            all.extend(self.step()?);
        }
        Ok(all)
    }
}

/// A binomial proportion with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub successes: u64,
    pub trials: u64,
}

impl Estimate {
    pub fn new(successes: u64, trials: u64) -> Self {
        Self { successes, trials }
    }

    pub fn value(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.successes as f64 / self.trials as f64
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        let p = self.value();
        (p * (1.0 - p) / self.trials as f64).sqrt()
    }

    /// Normal-approximation confidence interval at `z` standard errors,
    /// clipped to [0, 1].
    pub fn interval(&self, z: f64) -> (f64, f64) {
        let (p, se) = (self.value(), self.std_error());
        ((p - z * se).max(0.0), (p + z * se).min(1.0))
    }
}

/// Counts gathered for the observed vehicle (id 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEstimates {
    /// Transmissions sharing their PRB with another vehicle.
    pub collision: Estimate,
    /// Same, restricted to transmissions right after a reselection.
    pub collision_at_reselection: Estimate,
    /// Transmissions with no other vehicle active in the same slot.
    pub prr: Estimate,
}

#[derive(Debug, Default, Clone, Copy)]
struct Tally {
    tx: u64,
    collided: u64,
    fresh_tx: u64,
    fresh_collided: u64,
    received: u64,
}

impl Tally {
    fn add(&mut self, other: Tally) {
        self.tx += other.tx;
        self.collided += other.collided;
        self.fresh_tx += other.fresh_tx;
        self.fresh_collided += other.fresh_collided;
        self.received += other.received;
    }
}

fn replica_periods(num_events: u64, replicas: usize, replica: usize) -> u64 {
    let r = replicas as u64;
    num_events / r + u64::from((replica as u64) < num_events % r)
}

fn run_replica(
    sps: &SpsParams,
    config: &SimConfig,
    seed: u64,
    replica: usize,
    periods: u64,
) -> Result<Tally> {
    let mut sim = Simulator::with_rng(sps, config, rng::stream(seed, replica as u64))?;
    sim.run(config.warmup_periods)?;
    let mut tally = Tally::default();
    for _ in 0..periods {
        for e in sim.step()?.into_iter().filter(|e| e.vehicle_id == 0) {
            tally.tx += 1;
            tally.collided += u64::from(e.collided);
            tally.received += u64::from(!e.slot_shared);
            if e.after_reselection {
                tally.fresh_tx += 1;
                tally.fresh_collided += u64::from(e.collided);
            }
        }
    }
    Ok(tally)
}

fn tally_with<M>(
    sps: &SpsParams,
    config: &SimConfig,
    num_events: u64,
    seed: u64,
    map: M,
) -> Result<Tally>
where
    M: Fn(usize, &(dyn Fn(usize) -> Result<Tally> + Sync)) -> Vec<Result<Tally>>,
{
    config.validate(sps)?;
    let job = |k: usize| {
        run_replica(
            sps,
            config,
            seed,
            k,
            replica_periods(num_events, config.replicas, k),
        )
    };
    let mut total = Tally::default();
    for part in map(config.replicas, &job) {
        total.add(part?);
    }
    Ok(total)
}

fn estimates_from(t: Tally) -> SimEstimates {
    SimEstimates {
        collision: Estimate::new(t.collided, t.tx),
        collision_at_reselection: Estimate::new(t.fresh_collided, t.fresh_tx),
        prr: Estimate::new(t.received, t.tx),
    }
}

/// All estimates over `num_events` transmissions of vehicle 0, split across
/// `config.replicas` independent episodes run in parallel.
pub fn estimate(
    sps: &SpsParams,
    config: &SimConfig,
    num_events: u64,
    seed: u64,
) -> Result<SimEstimates> {
    let t = tally_with(sps, config, num_events, seed, |n, job| {
        exec::map_range(n, job)
    })?;
    Ok(estimates_from(t))
}

/// Sequential counterpart of [`estimate`]; yields identical numbers.
pub fn estimate_seq(
    sps: &SpsParams,
    config: &SimConfig,
    num_events: u64,
    seed: u64,
) -> Result<SimEstimates> {
    let t = tally_with(sps, config, num_events, seed, |n, job| {
        exec::map_range_seq(n, job)
    })?;
    Ok(estimates_from(t))
}

pub fn estimate_collision_prob(
    sps: &SpsParams,
    config: &SimConfig,
    num_events: u64,
    seed: u64,
) -> Result<Estimate> {
    Ok(estimate(sps, config, num_events, seed)?.collision)
}

pub fn estimate_prr(
    sps: &SpsParams,
    config: &SimConfig,
    num_events: u64,
    seed: u64,
) -> Result<Estimate> {
    Ok(estimate(sps, config, num_events, seed)?.prr)
}

/// Write events as CSV with columns `slot,vehicle_id,subchannel,collided`.
pub fn write_trace<W: Write>(events: &[TxEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["slot", "vehicle_id", "subchannel", "collided"])?;
    for e in events {
        w.write_record([
            e.slot.to_string(),
            e.vehicle_id.to_string(),
            e.subchannel.to_string(),
            u8::from(e.collided).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sps(rri: f64, n_sc: u32) -> SpsParams {
        SpsParams {
            rri,
            num_subchannels: n_sc,
            ..SpsParams::default()
        }
    }

    fn oracle_regime(n: usize, w: u32) -> SimConfig {
        SimConfig {
            num_vehicles: n,
            windows: vec![w],
            rc_range: [1, 1],
            keep_probability: 0.0,
            phase: PhaseMode::Redrawn,
            sensing: false,
            replicas: 8,
            warmup_periods: 0,
        }
    }

    #[test]
    fn forced_single_prb() {
        let mut rng = rng::stream(1, 0);
        let prb = reselect(0, 1, 0.2, &[], &mut rng).unwrap();
        assert_eq!(
            prb,
            WindowPrb {
                offset: 0,
                subchannel: 0
            }
        );
        assert!(reselect(3, 0, 0.2, &[], &mut rng).is_err());
    }

    #[test]
    fn all_but_one_sensed() {
        // 5 x 2 window, floor ceil(0.1 * 10) = 1
        let sensed: Vec<SensedPrb> = (0..5)
            .flat_map(|o| {
                (0..2).map(move |s| SensedPrb {
                    offset: o,
                    subchannel: s,
                    age: 1,
                })
            })
            .filter(|s| !(s.offset == 3 && s.subchannel == 1))
            .collect();
        let mut rng = rng::stream(2, 0);
        for _ in 0..50 {
            let prb = reselect(4, 2, 0.1, &sensed, &mut rng).unwrap();
            assert_eq!(
                prb,
                WindowPrb {
                    offset: 3,
                    subchannel: 1
                }
            );
        }
    }

    #[test]
    fn floor_readmits_oldest() {
        // Everything sensed; floor 2 readmits the two oldest sightings.
        let mut sensed = Vec::new();
        for o in 0..5 {
            for s in 0..2 {
                sensed.push(SensedPrb {
                    offset: o,
                    subchannel: s,
                    age: 1,
                });
            }
        }
        sensed[7].age = 9;
        sensed[2].age = 8;
        let mut rng = rng::stream(3, 0);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..200 {
            seen.insert(reselect(4, 2, 0.2, &sensed, &mut rng).unwrap());
        }
        let expect: std::collections::BTreeSet<_> = [
            WindowPrb {
                offset: 1,
                subchannel: 0,
            },
            WindowPrb {
                offset: 3,
                subchannel: 1,
            },
        ]
        .into();
        assert_eq!(seen, expect);
    }

    #[test]
    fn reselection_is_uniform() {
        let (w, n_sc, draws) = (4u32, 2u32, 100_000u64);
        let cells = ((w + 1) * n_sc) as usize;
        let mut counts = vec![0u64; cells];
        let mut rng = rng::stream(4, 0);
        for _ in 0..draws {
            let p = reselect(w, n_sc, 0.2, &[], &mut rng).unwrap();
            counts[(p.offset * n_sc + p.subchannel) as usize] += 1;
        }
        let p = 1.0 / cells as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!(
                (c as f64 - draws as f64 * p).abs() < 3.0 * sigma,
                "count {c}"
            );
        }
    }

    #[test]
    fn grid_rejects_out_of_range() {
        let mut g = ResourceGrid::new(10, 2).unwrap();
        assert!(g
            .occupy(
                Prb {
                    slot: 10,
                    subchannel: 0
                },
                0
            )
            .is_err());
        assert!(g
            .occupy(
                Prb {
                    slot: 0,
                    subchannel: 2
                },
                0
            )
            .is_err());
        g.occupy(
            Prb {
                slot: 3,
                subchannel: 1,
            },
            4,
        )
        .unwrap();
        g.occupy(
            Prb {
                slot: 3,
                subchannel: 1,
            },
            5,
        )
        .unwrap();
        assert_eq!(
            g.transmitters(Prb {
                slot: 3,
                subchannel: 1
            }),
            &[4, 5]
        );
        assert_eq!(g.slot_load(3), 2);
        g.clear();
        assert_eq!(g.total(), 0);
        assert_eq!(g.slot_load(3), 0);
        assert!(ResourceGrid::new(0, 1).is_err());
    }

    #[test]
    fn keep_probability_one_never_reselects_again() {
        let cfg = SimConfig {
            keep_probability: 1.0,
            num_vehicles: 4,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 7).unwrap();
        sim.run(500).unwrap();
        assert_eq!(sim.stats().reselections, 4);
        assert!(sim.stats().expiries > 0);
    }

    #[test]
    fn keep_probability_zero_reselects_every_expiry() {
        let cfg = SimConfig {
            keep_probability: 0.0,
            num_vehicles: 4,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 8).unwrap();
        sim.run(500).unwrap();
        let s = sim.stats();
        assert_eq!(s.kept, 0);
        // Every expiry but those of the final period triggers a reselection.
        let pending = sim
            .agents()
            .iter()
            .filter(|a| a.current_prb.is_none())
            .count() as u64;
        assert_eq!(s.reselections, 4 + s.expiries - pending);
    }

    #[test]
    fn keep_fraction_is_bernoulli() {
        let cfg = SimConfig {
            keep_probability: 0.8,
            num_vehicles: 10,
            rc_range: [1, 1],
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 9).unwrap();
        sim.run(10_000).unwrap();
        let s = sim.stats();
        assert!(s.expiries >= 100_000);
        let frac = (s.expiries - s.kept) as f64 / s.expiries as f64;
        let sigma = (0.2 * 0.8 / s.expiries as f64).sqrt();
        assert!((frac - 0.2).abs() < 3.0 * sigma, "{frac}");
    }

    #[test]
    fn rc_redraws_are_uniform() {
        let cfg = SimConfig {
            num_vehicles: 20,
            keep_probability: 0.5,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 10).unwrap();
        sim.run(20_000).unwrap();
        let draws = &sim.stats().rc_draws;
        assert!(draws[..5].iter().all(|&c| c == 0));
        let n: u64 = draws.iter().sum();
        let p = 1.0 / 11.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for &c in &draws[5..=15] {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{draws:?}");
        }
    }

    #[test]
    fn rc_strictly_decreases_between_redraws() {
        let cfg = SimConfig {
            num_vehicles: 5,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 11).unwrap();
        sim.step().unwrap();
        for _ in 0..300 {
            let before: Vec<u32> = sim.agents().iter().map(|a| a.rc).collect();
            sim.step().unwrap();
            for (a, &b) in sim.agents().iter().zip(&before) {
                if b > 1 {
                    assert_eq!(a.rc, b - 1);
                }
            }
        }
    }

    #[test]
    fn occupancy_matches_transmissions() {
        let cfg = SimConfig {
            num_vehicles: 6,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&sps(0.1, 2), &cfg, 12).unwrap();
        for _ in 0..100 {
            let events = sim.step().unwrap();
            assert_eq!(events.len(), 6);
            assert_eq!(sim.grid.total(), 6);
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let cfg = SimConfig::default();
        let a = Simulator::new(&sps(0.1, 2), &cfg, 13)
            .unwrap()
            .run(200)
            .unwrap();
        let b = Simulator::new(&sps(0.1, 2), &cfg, 13)
            .unwrap()
            .run(200)
            .unwrap();
        let c = Simulator::new(&sps(0.1, 2), &cfg, 14)
            .unwrap()
            .run(200)
            .unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let mut out = Vec::new();
        write_trace(&a[..2], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("slot,vehicle_id,subchannel,collided\n"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn single_agent() {
        let cfg = SimConfig {
            num_vehicles: 1,
            ..SimConfig::default()
        };
        let e = estimate(&sps(0.1, 2), &cfg, 2_000, 1).unwrap();
        assert_eq!(e.collision.value(), 0.0);
        assert_eq!(e.prr.value(), 1.0);
    }

    #[test]
    fn forced_collision() {
        let cfg = SimConfig {
            phase: PhaseMode::Aligned,
            ..oracle_regime(2, 0)
        };
        let e = estimate(&sps(0.1, 1), &cfg, 2_000, 1).unwrap();
        assert_eq!(e.collision.value(), 1.0);
        assert_eq!(e.prr.value(), 0.0);
        // A one-slot period forces the same outcome for any phase mode.
        let e = estimate(&sps(0.001, 1), &oracle_regime(2, 0), 2_000, 1).unwrap();
        assert_eq!(e.collision.value(), 1.0);
    }

    #[test]
    fn parallel_matches_sequential() {
        let cfg = SimConfig {
            num_vehicles: 4,
            ..SimConfig::default()
        };
        let a = estimate(&sps(0.1, 2), &cfg, 5_000, 21).unwrap();
        let b = estimate_seq(&sps(0.1, 2), &cfg, 5_000, 21).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn prr_bounded_by_collision() {
        for seed in 0..4 {
            let e = estimate(&sps(0.02, 2), &oracle_regime(3, 4), 5_000, seed).unwrap();
            assert!(e.prr.value() <= 1.0 - e.collision.value() + 1e-12);
        }
    }

    #[test]
    fn std_error_shrinks_with_events() {
        let s = sps(0.02, 2);
        let cfg = oracle_regime(3, 4);
        let small = estimate(&s, &cfg, 4_000, 5).unwrap().collision;
        let large = estimate(&s, &cfg, 64_000, 5).unwrap().collision;
        let ratio = small.std_error() / large.std_error();
        assert!((ratio - 4.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn interval_is_clipped() {
        let e = Estimate::new(0, 100);
        assert_eq!(e.interval(3.0), (0.0, 0.0));
        let e = Estimate::new(50, 100);
        let (lo, hi) = e.interval(2.0);
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_config() {
        let s = sps(0.1, 2);
        let bad = SimConfig {
            windows: vec![1, 2],
            ..SimConfig::default()
        };
        assert_eq!(bad.validate(&s).unwrap_err().key(), Some("sim.windows"));
        let bad = SimConfig {
            windows: vec![100],
            ..SimConfig::default()
        };
        assert!(bad.validate(&s).is_err());
        let bad = SimConfig {
            rc_range: [0, 3],
            ..SimConfig::default()
        };
        assert_eq!(bad.validate(&s).unwrap_err().key(), Some("sim.rc_range"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn reselect_stays_in_window(w in 0u32..30, n_sc in 1u32..5, seed in any::<u64>(),
                                    sensed in proptest::collection::vec((0u32..40, 0u32..6, 0u64..10), 0..40)) {
            let sensed: Vec<SensedPrb> = sensed.into_iter()
                .map(|(offset, subchannel, age)| SensedPrb { offset, subchannel, age })
                .collect();
            let prb = reselect(w, n_sc, 0.2, &sensed, &mut rng::stream(seed, 0)).unwrap();
            prop_assert!(prb.offset <= w && prb.subchannel < n_sc);
        }
    }
}
