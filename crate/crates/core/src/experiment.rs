//! Experiment drivers behind the CLI verbs, and their CSV / manifest output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::Serialize;

use crate::analytics::{self, CandidateModel, FairnessInputs, SpsParams};
use crate::config::{ExperimentConfig, OracleCase, MANIFEST_TABLE};
use crate::error::{Error, Result};
use crate::exec;
use crate::metrics::MetricContext;
use crate::nsga2::{self, Bounds, Evaluation, GaConfig, HistoryRow, Optimum};
use crate::rng;
use crate::sim::{self, Estimate, SimConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Modelling choices the oracle comparison depends on. Printed when the
/// comparison fails.
pub const ASSUMPTIONS: &str = "\
collision model assumptions:
- analytic side of the oracle uses the shared-region candidate model:
  C_Ca = N_Ca = N_Sc * N_Sh and N_r = N_Sc * sqrt((w_i + 1)(w_j + 1)),
  which reduces the pairwise collision probability to 1 / (S * N_Sc)
- the optimiser uses the network-average model: C_Ca = N_Sc * N_Sh,
  N_r = N_Sc * (max(w_i, w_j) + 1), N_Ca = gamma * N_Sc * (w_mid + 1);
  its value is reported in the default_model column and not asserted
- simulated vehicles reselect every period (rc = 1, keep probability 0)
  with a fresh generation phase, so every transmission follows a
  simultaneous reselection
- half-duplex loss counts any other transmission in the same slot; the
  analytic side uses packet_rate = 1 / rri, i.e. delta_HD = 1 / S at mu = 0
- collision and half-duplex factors are multiplied as if independent
";

/// Seed of the `index`-th independent job derived from `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    rng::stream(seed, index + 1).next_u64()
}

pub fn fairness_inputs(
    config: &ExperimentConfig,
    speeds: &[f64],
    seed: u64,
) -> Result<FairnessInputs> {
    FairnessInputs::from_scenario(
        &config.scenario,
        &config.channel,
        &config.sps,
        speeds,
        config.sweep.epoch,
        seed,
    )
}

/// Objective vector plus the network fairness index as threshold scale.
pub fn evaluate(inputs: &FairnessInputs, windows: &[u32]) -> Result<Evaluation> {
    Ok(Evaluation {
        objectives: analytics::objective_vector(windows, inputs)?,
        scale: analytics::fairness_index_network(inputs, windows)?,
    })
}

fn bounds(sps: &SpsParams) -> Result<Bounds> {
    Bounds::new(sps.window_bounds[0], sps.window_bounds[1])
}

fn optimize(
    config: &ExperimentConfig,
    ga: &GaConfig,
    inputs: &FairnessInputs,
    seed: u64,
) -> Result<nsga2::RunResult> {
    nsga2::run(ga, inputs.num_vehicles(), bounds(&config.sps)?, seed, |w| {
        evaluate(inputs, w)
    })
}

/// Optimised and baseline outcome at one average speed.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub avg_speed: f64,
    pub lane_speeds: Vec<f64>,
    pub optimum: Optimum,
    pub baseline_sum: f64,
}

fn sweep_point(config: &ExperimentConfig, avg_speed: f64, seed: u64) -> Result<SweepPoint> {
    let lane_speeds = config.scenario.lane_speeds_around(avg_speed)?;
    let inputs = fairness_inputs(config, &lane_speeds, seed)?;
    let result = optimize(config, &config.ga, &inputs, seed)?;
    let mut candidates = result.population;
    if config.ga.refine {
        let polished = nsga2::refine(
            &candidates,
            &bounds(&config.sps)?,
            &config.ga.threshold,
            &|w: &[u32]| evaluate(&inputs, w),
        )?;
        candidates.extend(polished);
    }
    let optimum = nsga2::pick_optimum(&candidates, &config.ga.threshold)?;
    let baseline = vec![config.experiment.baseline_window; lane_speeds.len()];
    let baseline_sum = analytics::objective_vector(&baseline, &inputs)?
        .iter()
        .sum();
    Ok(SweepPoint {
        avg_speed,
        lane_speeds,
        optimum,
        baseline_sum,
    })
}

/// Optimise the windows at every sweep speed; points run concurrently.
pub fn optimize_sweep(config: &ExperimentConfig, seed: u64) -> Result<Vec<SweepPoint>> {
    let points: Vec<(usize, f64)> = config
        .sweep
        .avg_speeds
        .iter()
        .copied()
        .enumerate()
        .collect();
    exec::map(&points, |&(k, v)| {
        sweep_point(config, v, derive_seed(seed, k as u64)).map_err(|e| Error::SweepPoint {
            avg_speed: v,
            source: Box::new(e),
        })
    })
    .into_iter()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig4Row {
    pub avg_speed: f64,
    pub lane: usize,
    pub optimal_window: u32,
}

pub fn fig4_rows(points: &[SweepPoint]) -> Vec<Fig4Row> {
    points
        .iter()
        .flat_map(|p| {
            p.optimum
                .genome
                .iter()
                .enumerate()
                .map(|(lane, &w)| Fig4Row {
                    avg_speed: p.avg_speed,
                    lane,
                    optimal_window: w,
                })
        })
        .collect()
}

pub fn run_fig4_sweep(config: &ExperimentConfig, seed: u64) -> Result<Vec<Fig4Row>> {
    Ok(fig4_rows(&optimize_sweep(config, seed)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Optimal,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fig5Row {
    pub avg_speed: f64,
    pub scheme: Scheme,
    pub objective_sum: f64,
}

pub fn fig5_rows(points: &[SweepPoint]) -> Vec<Fig5Row> {
    points
        .iter()
        .flat_map(|p| {
            [
                Fig5Row {
                    avg_speed: p.avg_speed,
                    scheme: Scheme::Optimal,
                    objective_sum: p.optimum.objective_sum,
                },
                Fig5Row {
                    avg_speed: p.avg_speed,
                    scheme: Scheme::Standard,
                    objective_sum: p.baseline_sum,
                },
            ]
        })
        .collect()
}

pub fn run_fig5_comparison(config: &ExperimentConfig, seed: u64) -> Result<Vec<Fig5Row>> {
    Ok(fig5_rows(&optimize_sweep(config, seed)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Output {
    pub rows: Vec<HistoryRow>,
    pub reference_point: Vec<f64>,
    pub reference_front: Vec<Vec<f64>>,
}

/// One optimiser run at the configured lane speeds, scored per generation
/// against a reference front from a longer run.
pub fn run_fig3_metrics(config: &ExperimentConfig, seed: u64) -> Result<Fig3Output> {
    let inputs = fairness_inputs(config, &config.scenario.lane_speeds, seed)?;
    let long = GaConfig {
        max_generations: config.ga.max_generations * config.experiment.reference_run_factor,
        ..config.ga.clone()
    };
    let (main, reference) = exec::join(
        || optimize(config, &config.ga, &inputs, derive_seed(seed, 0)),
        || optimize(config, &long, &inputs, derive_seed(seed, 1)),
    );
    let (main, reference) = (main?, reference?);
    let initial: Vec<Vec<f64>> = main.initial.iter().map(|i| i.objectives.clone()).collect();
    let reference_point =
        MetricContext::reference_point_from(&initial, config.experiment.hv_reference_factor)?;
    let reference_front = reference.final_front();
    let context = MetricContext::new(reference_point.clone(), reference_front.clone())?;
    Ok(Fig3Output {
        rows: nsga2::history(&main, &context)?,
        reference_point,
        reference_front,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OracleMetric {
    Collision,
    Prr,
}

/// One line of the analytic-versus-simulated comparison.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    pub case: usize,
    pub num_vehicles: usize,
    pub num_subchannels: u32,
    pub windows: String,
    pub metric: OracleMetric,
    pub analytic: f64,
    /// Same quantity under the optimiser's candidate model, when that model
    /// is defined for the case.
    pub default_model: Option<f64>,
    pub simulated: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub events: u64,
    /// Simulated value with counters, keep probability and sensing from `[sim]`.
    pub steady_state: f64,
    pub abs_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

fn analytic_pair(sps: &SpsParams, windows: &[u32]) -> Result<(f64, f64)> {
    let mut survive = 1.0;
    for &w in &windows[1..] {
        survive *= 1.0 - sps.collision(f64::from(windows[0]), f64::from(w))?;
    }
    Ok((1.0 - survive, sps.packet_reception_ratio(0, windows)?))
}

fn oracle_case(
    config: &ExperimentConfig,
    index: usize,
    case: &OracleCase,
    seed: u64,
) -> Result<Vec<OracleRow>> {
    let base = SpsParams {
        num_subchannels: case.num_subchannels,
        packet_rate: 1.0 / config.sps.rri,
        c_ca: None,
        n_r: None,
        n_ca: None,
        ..config.sps.clone()
    };
    let shared = SpsParams {
        candidate_model: CandidateModel::SharedRegion,
        ..base.clone()
    };
    let network = SpsParams {
        candidate_model: CandidateModel::NetworkAverage,
        ..base
    };
    let windows: Vec<u32> = (0..case.num_vehicles)
        .map(|v| {
            if case.windows.len() == 1 {
                case.windows[0]
            } else {
                case.windows[v]
            }
        })
        .collect();
    let (col, prr) = analytic_pair(&shared, &windows)?;
    let (col_default, prr_default) = match analytic_pair(&network, &windows) {
        Ok((c, p)) => (Some(c), Some(p)),
        Err(Error::ModelDomain(_)) => (None, None),
        Err(e) => return Err(e),
    };

    let reselecting = SimConfig {
        num_vehicles: case.num_vehicles,
        windows: windows.clone(),
        rc_range: [1, 1],
        keep_probability: 0.0,
        phase: case.phase,
        warmup_periods: 0,
        ..config.sim.clone()
    };
    let steady = SimConfig {
        num_vehicles: case.num_vehicles,
        windows: windows.clone(),
        ..config.sim.clone()
    };
    let events = config.oracle.num_events;
    let measured = sim::estimate(
        &shared,
        &reselecting,
        events,
        derive_seed(seed, 2 * index as u64),
    )?;
    let again = sim::estimate(
        &shared,
        &reselecting,
        events,
        derive_seed(seed, 2 * index as u64),
    )?;
    if measured != again {
        return Err(Error::Internal(format!(
            "oracle case {index} is not reproducible for a fixed seed"
        )));
    }
    let steady = sim::estimate(
        &shared,
        &steady,
        events,
        derive_seed(seed, 2 * index as u64 + 1),
    )?;

    let label = windows
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(";");
    let o = &config.oracle;
    let row = |metric, analytic: f64, default_model, e: Estimate, steady: Estimate| {
        let (lo, hi) = e.interval(1.96);
        let abs_error = (e.value() - analytic).abs();
        let pass = match metric {
            OracleMetric::Collision => {
                abs_error <= o.collision_abs_tol || abs_error <= o.collision_rel_tol * analytic
            }
            OracleMetric::Prr => abs_error <= o.prr_abs_tol,
        };
        OracleRow {
            case: index,
            num_vehicles: case.num_vehicles,
            num_subchannels: case.num_subchannels,
            windows: label.clone(),
            metric,
            analytic,
            default_model,
            simulated: e.value(),
            std_error: e.std_error(),
            ci_low: lo,
            ci_high: hi,
            events: e.trials,
            steady_state: steady.value(),
            abs_error,
            pass,
        }
    };
    Ok(vec![
        row(
            OracleMetric::Collision,
            col,
            col_default,
            measured.collision,
            steady.collision,
        ),
        row(
            OracleMetric::Prr,
            prr,
            prr_default,
            measured.prr,
            steady.prr,
        ),
    ])
}

/// Compare the closed-form collision probability and PRR with the simulator
/// on every configured case.
pub fn run_oracle_validation(config: &ExperimentConfig, seed: u64) -> Result<OracleReport> {
    let mut rows = Vec::new();
    for (k, case) in config.oracle.cases.iter().enumerate() {
        rows.extend(oracle_case(config, k, case, seed)?);
    }
    Ok(OracleReport { rows })
}

/// Write `rows` as CSV with a header taken from the field names. The file
/// is written to a temporary name first and renamed into place.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let tmp = tmp_path(path);
    {
        let mut w = csv::Writer::from_path(&tmp)?;
        for row in rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Like [`write_csv`] but writes the header even when `rows` is empty.
pub fn write_csv_with_header<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    if !rows.is_empty() {
        return write_csv(path, rows);
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    w.flush()?;
    Ok(())
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

#[derive(Debug, Serialize)]
struct ManifestHeader<'a> {
    verb: &'a str,
    version: &'a str,
    seed: u64,
    defaulted_keys: &'a [String],
}

/// Manifest text: the effective config with the seed and output directory
/// actually used, preceded by a `[manifest]` table. Loading it as a config
/// reproduces the run.
pub fn manifest(
    config: &ExperimentConfig,
    verb: &str,
    seed: u64,
    out: &Path,
    defaulted: &[String],
) -> Result<String> {
    let mut effective = config.clone();
    effective.experiment.seed = seed;
    effective.experiment.output_dir = out.to_path_buf();
    let header = ManifestHeader {
        verb,
        version: VERSION,
        seed,
        defaulted_keys: defaulted,
    };
    let mut table = toml::Table::new();
    table.insert(
        MANIFEST_TABLE.to_string(),
        toml::Value::try_from(header).map_err(|e| Error::Internal(e.to_string()))?,
    );
    let head = toml::to_string(&table).map_err(|e| Error::Internal(e.to_string()))?;
    Ok(format!("{head}\n{}", effective.to_toml_string()?))
}

pub fn write_manifest(
    config: &ExperimentConfig,
    verb: &str,
    seed: u64,
    out: &Path,
    defaulted: &[String],
) -> Result<PathBuf> {
    let path = out.join(format!("{verb}.manifest.toml"));
    let tmp = tmp_path(&path);
    fs::write(&tmp, manifest(config, verb, seed, out, defaulted)?)?;
    fs::rename(&tmp, &path)?;
    Ok(path)
}
