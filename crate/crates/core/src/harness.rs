//! Closed-loop scenarios: truth plant → observer → MPC → plant, plus sweeps
//! and file output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{augment, ObserverState};
use crate::model::{build_pk_model, check_augmented_observability, DiscreteLtiModel, PkParameter, PkParameters};
use crate::mpc::{state_weight, MpcConfig, MpcController, QWeighting};
use crate::plant::{FilterParams, Sensor, TruthPlant};

pub const NOMINAL_PRESET: &str = "amiodarone-nominal";

/// Allowed overshoot of the soft output bound.
pub const OUTPUT_SLACK_TOLERANCE: f64 = 1e-4;

/// Width of the window at the end of each reference segment used for offset checks.
pub const OFFSET_WINDOW_DAYS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub start_day: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObserverWeights {
    pub state: f64,
    pub disturbance: f64,
    pub measurement: f64,
}

impl Default for ObserverWeights {
    fn default() -> Self {
        Self { state: 1e-2, disturbance: 1e-1, measurement: 1e-2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub parameter: PkParameter,
    /// Relative change, e.g. `0.1` for +10%.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Controller sampling time (day).
    pub step: f64,
    /// Memory length of the control model.
    pub memory: usize,
    pub horizon: usize,
    pub q_scale: f64,
    pub r_weight: f64,
    #[serde(default)]
    pub q_weighting: QWeighting,
    pub u_max: f64,
    pub output_upper: f64,
    pub soft_output_penalty: f64,
    pub total_days: f64,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    pub integrator_step: f64,
    /// Largest mean `|y - r|` over the end of each segment still counted as offset-free.
    pub offset_tolerance: f64,
    pub pk: PkParameters,
    /// Perturbation applied to the plant only; the controller keeps `pk`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_perturbation: Option<Perturbation>,
    pub observer: ObserverWeights,
    pub filter: FilterParams,
    pub reference: Vec<ReferencePoint>,
}

impl ScenarioConfig {
    /// The 150-day amiodarone scenario: 0.5 ng for 80 days, then 1.0 ng.
    pub fn amiodarone_nominal() -> Self {
        Self {
            name: NOMINAL_PRESET.into(),
            step: 0.1,
            memory: 25,
            horizon: 60,
            q_scale: 0.25,
            r_weight: 5.0,
            q_weighting: QWeighting::LeadingBlock,
            u_max: 2.0,
            output_upper: 1.03,
            soft_output_penalty: 1e6,
            total_days: 150.0,
            noise_sigma: 0.0,
            seed: 0,
            integrator_step: 1e-3,
            offset_tolerance: 1e-3,
            pk: PkParameters::NOMINAL,
            plant_perturbation: None,
            observer: ObserverWeights::default(),
            filter: FilterParams::default(),
            reference: vec![
                ReferencePoint { start_day: 0.0, value: 0.5 },
                ReferencePoint { start_day: 80.0, value: 1.0 },
            ],
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            NOMINAL_PRESET => Ok(Self::amiodarone_nominal()),
            other => Err(Error::Config(format!("unknown preset '{other}' (available: {NOMINAL_PRESET})"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("step", self.step),
            ("total_days", self.total_days),
            ("integrator_step", self.integrator_step),
            ("r_weight", self.r_weight),
            ("u_max", self.u_max),
            ("soft_output_penalty", self.soft_output_penalty),
            ("offset_tolerance", self.offset_tolerance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.q_scale >= 0.0 && self.q_scale.is_finite()) {
            return Err(Error::Config("q_scale must be nonnegative".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if !self.output_upper.is_finite() {
            return Err(Error::Config("output_upper must be finite".into()));
        }
        if self.memory == 0 || self.horizon == 0 {
            return Err(Error::Config("memory and horizon must be at least 1".into()));
        }
        match self.reference.first() {
            Some(first) if first.start_day == 0.0 => {}
            _ => return Err(Error::Config("reference schedule must start at day 0".into())),
        }
        for pair in self.reference.windows(2) {
            if !(pair[1].start_day > pair[0].start_day) {
                return Err(Error::Config("reference start days must be strictly increasing".into()));
            }
        }
        if self.reference.iter().any(|r| !r.value.is_finite()) {
            return Err(Error::Config("reference values must be finite".into()));
        }
        let last = self.reference.last().expect("non-empty").start_day;
        if !(self.total_days > last) {
            return Err(Error::Config(format!("total_days {} does not cover the schedule (last start {last})", self.total_days)));
        }
        self.pk.validate()?;
        self.plant_pk().validate()?;
        Ok(())
    }

    /// Number of controller samples.
    pub fn samples(&self) -> usize {
        (self.total_days / self.step - 1e-9).ceil() as usize
    }

    pub fn plant_pk(&self) -> PkParameters {
        match self.plant_perturbation {
            Some(p) => self.pk.perturbed(p.parameter, p.fraction),
            None => self.pk,
        }
    }

    /// Reference at sample `k`.
    pub fn reference_at(&self, k: usize) -> f64 {
        let t = k as f64 * self.step;
        let eps = 1e-9 * self.step;
        self.reference.iter().rev().find(|r| r.start_day <= t + eps).map(|r| r.value).unwrap_or(self.reference[0].value)
    }

    /// `(start, end, value)` for each constant-reference segment.
    pub fn segments(&self) -> Vec<(f64, f64, f64)> {
        self.reference
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let end = self.reference.get(i + 1).map(|n| n.start_day).unwrap_or(self.total_days);
                (r.start_day, end, r.value)
            })
            .collect()
    }

    pub fn control_model(&self) -> Result<DiscreteLtiModel> {
        build_pk_model(&self.pk, self.step, self.memory)
    }

    pub fn mpc_config(&self, model: &DiscreteLtiModel) -> Result<MpcConfig> {
        let q = state_weight(model, self.q_scale, self.q_weighting);
        let r = DMatrix::from_element(1, 1, self.r_weight);
        Ok(MpcConfig::with_riccati_terminal(model, self.horizon, q, r)?
            .with_input_bounds(DVector::from_element(1, 0.0), DVector::from_element(1, self.u_max))
            .with_output_upper(DVector::from_element(1, self.output_upper), self.soft_output_penalty))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub r: f64,
    pub y: f64,
    pub u: f64,
    pub a1: f64,
    pub a2: f64,
    pub d_hat: f64,
    /// First entry of the estimated model state.
    pub x_hat0: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ViolationCounters {
    /// Inputs outside `[0, u_max]` (should never happen).
    pub input_bound: usize,
    /// Samples with `y > bound + 1e-4`.
    pub output_bound: usize,
    /// Steps with a strictly positive slack.
    pub slack_active: usize,
    pub max_slack: f64,
    pub max_output: f64,
    /// Largest `|C x̄ + C_d d̂ - r|`.
    pub max_target_error: f64,
    pub max_clamp_correction: f64,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentOffset {
    pub start: f64,
    pub end: f64,
    pub reference: f64,
    /// Mean and max of `|y - r|` over the last few days of the segment.
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RuntimeStats {
    pub wall_seconds: f64,
    pub qp_iterations_total: usize,
    pub qp_iterations_max: usize,
    pub observer_spectral_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationTrace {
    pub rows: Vec<TraceRow>,
    /// Running mean of `(y - r)² + u²`.
    pub j: f64,
    pub violations: ViolationCounters,
    pub offsets: Vec<SegmentOffset>,
    pub runtime: RuntimeStats,
}

impl SimulationTrace {
    fn empty() -> Self {
        Self {
            rows: Vec::new(),
            j: 0.0,
            violations: ViolationCounters::default(),
            offsets: Vec::new(),
            runtime: RuntimeStats::default(),
        }
    }

    pub fn max_u(&self) -> f64 {
        self.rows.iter().map(|r| r.u).fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min_u(&self) -> f64 {
        self.rows.iter().map(|r| r.u).fold(f64::INFINITY, f64::min)
    }
    pub fn max_y(&self) -> f64 {
        self.rows.iter().map(|r| r.y).fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn max_abs_d_hat(&self) -> f64 {
        self.rows.iter().map(|r| r.d_hat.abs()).fold(0.0, f64::max)
    }

    /// Mean `|y - r|` over samples with `from ≤ t < to`.
    pub fn mean_abs_error(&self, from: f64, to: f64) -> f64 {
        let sel: Vec<f64> = self.rows.iter().filter(|r| r.t >= from - 1e-9 && r.t < to - 1e-9).map(|r| (r.y - r.r).abs()).collect();
        if sel.is_empty() {
            f64::NAN
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    }

    pub fn invariants(&self, cfg: &ScenarioConfig) -> InvariantReport {
        InvariantReport::evaluate(self, cfg.offset_tolerance)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvariantReport {
    pub offset_free: bool,
    pub input_bounds: bool,
    pub output_bound: bool,
    pub slack_zero: bool,
    pub target_consistent: bool,
    pub j_finite: bool,
}

impl InvariantReport {
    pub fn evaluate(trace: &SimulationTrace, offset_tolerance: f64) -> Self {
        let v = &trace.violations;
        Self {
            offset_free: !trace.offsets.is_empty() && trace.offsets.iter().all(|o| o.mean_abs_error <= offset_tolerance),
            input_bounds: v.input_bound == 0,
            output_bound: v.output_bound == 0,
            slack_zero: v.slack_active == 0,
            target_consistent: v.max_target_error <= 1e-9,
            j_finite: trace.j.is_finite(),
        }
    }

    pub fn all(&self) -> bool {
        self.offset_free && self.input_bounds && self.output_bound && self.slack_zero && self.target_consistent && self.j_finite
    }
}

/// A run that stopped early; `partial` holds the samples completed so far.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub partial: SimulationTrace,
}

impl std::fmt::Display for RunFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (after {} samples)", self.error, self.partial.rows.len())
    }
}

impl std::error::Error for RunFailure {}

impl From<RunFailure> for Error {
    fn from(f: RunFailure) -> Self {
        f.error
    }
}

/// Everything a closed-loop run needs besides the plant.
struct Loop {
    controller: MpcController,
    observer: ObserverState,
    aug: crate::estimator::AugmentedModel,
    model: DiscreteLtiModel,
}

fn setup(cfg: &ScenarioConfig) -> Result<Loop> {
    cfg.validate()?;
    let model = cfg.control_model()?;
    let report = check_augmented_observability(&model);
    if !report.observer_feasible() {
        return Err(Error::ModelCheck(format!("augmented model fails the observer conditions: {report:?}")));
    }
    let aug = augment(&model)?;
    let (w, v) = crate::dare::observer_weights(
        aug.state_dim(),
        aug.disturbance_dim(),
        cfg.observer.state,
        cfg.observer.disturbance,
        cfg.observer.measurement,
    );
    let gain = aug.gain(&w, &v)?;
    let observer = ObserverState::new(&aug, gain.l)?;
    let controller = MpcController::new(&cfg.mpc_config(&model)?, &model)?;
    Ok(Loop { controller, observer, aug, model })
}

pub fn run_closed_loop(cfg: &ScenarioConfig) -> std::result::Result<SimulationTrace, RunFailure> {
    let started = Instant::now();
    let mut trace = SimulationTrace::empty();
    let fail = |error: Error, trace: SimulationTrace| RunFailure { error, partial: trace };
    let Loop { mut controller, mut observer, aug, model } = match setup(cfg) {
        Ok(l) => l,
        Err(e) => return Err(fail(e, trace)),
    };
    let mut plant = match TruthPlant::new(cfg.plant_pk(), &cfg.filter, cfg.integrator_step) {
        Ok(p) => p,
        Err(e) => return Err(fail(e, trace)),
    };
    let mut sensor = match Sensor::new(cfg.noise_sigma, cfg.seed) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, trace)),
    };
    trace.runtime.observer_spectral_radius = observer.spectral_radius();

    let n_u = cfg.samples();
    trace.rows.reserve(n_u);
    let mut j_sum = 0.0;
    for k in 0..n_u {
        let t = k as f64 * cfg.step;
        let r = cfg.reference_at(k);
        let y = sensor.sample(&plant);
        let x_hat = observer.x_hat(&aug);
        let d_hat = observer.d_hat(&aug);
        let r_vec = DVector::from_element(1, r);
        let out = match controller.step(&x_hat, &d_hat, &r_vec) {
            Ok(o) => o,
            Err(e) => return Err(fail(e, trace)),
        };
        let u = out.u[0];

        let v = &mut trace.violations;
        if !(0.0..=cfg.u_max).contains(&u) {
            v.input_bound += 1;
        }
        if y > cfg.output_upper + OUTPUT_SLACK_TOLERANCE {
            v.output_bound += 1;
        }
        if out.slack > 0.0 {
            v.slack_active += 1;
        }
        v.max_slack = v.max_slack.max(out.slack);
        v.max_output = v.max_output.max(y);
        let target_y = (model.c() * &out.x_bar + model.c_d() * &d_hat)[0];
        v.max_target_error = v.max_target_error.max((target_y - r).abs());
        v.max_clamp_correction = v.max_clamp_correction.max(out.clamp_correction);
        v.max_kkt_residual = v.max_kkt_residual.max(out.kkt_residual);
        trace.runtime.qp_iterations_total += out.qp_iterations;
        trace.runtime.qp_iterations_max = trace.runtime.qp_iterations_max.max(out.qp_iterations);

        trace.rows.push(TraceRow {
            t,
            r,
            y,
            u,
            a1: plant.a1(),
            a2: plant.a2(),
            d_hat: d_hat[0],
            x_hat0: x_hat[0],
            slack: out.slack,
        });
        j_sum += (y - r).powi(2) + u * u;
        trace.j = j_sum / (k + 1) as f64;

        observer = match observer.step(&aug, &out.u, &DVector::from_element(1, y)) {
            Ok(o) => o,
            Err(e) => return Err(fail(e, trace)),
        };
        plant = match plant.step(u, cfg.step) {
            Ok(p) => p,
            Err(e) => return Err(fail(e, trace)),
        };
    }

    trace.offsets = cfg
        .segments()
        .into_iter()
        .map(|(start, end, value)| {
            let from = (end - OFFSET_WINDOW_DAYS).max(start);
            let errs: Vec<f64> = trace
                .rows
                .iter()
                .filter(|r| r.t >= from - 1e-9 && r.t < end - 1e-9)
                .map(|r| (r.y - r.r).abs())
                .collect();
            let mean = if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 };
            SegmentOffset {
                start,
                end,
                reference: value,
                mean_abs_error: mean,
                max_abs_error: errs.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect();
    trace.runtime.wall_seconds = started.elapsed().as_secs_f64();
    Ok(trace)
}

/// Run `jobs` on up to `threads` worker threads; results keep input order.
pub fn run_parallel<T, R, F>(jobs: Vec<T>, threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= jobs.len() {
                    break;
                }
                let r = f(&jobs[i]);
                results.lock().expect("result lock")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("result lock").into_iter().map(|r| r.expect("every job ran")).collect()
}

#[derive(Debug)]
pub struct SweepCell {
    pub label: String,
    pub config: ScenarioConfig,
    pub result: std::result::Result<SimulationTrace, RunFailure>,
}

impl SweepCell {
    pub fn j(&self) -> Option<f64> {
        self.result.as_ref().ok().map(|t| t.j)
    }
}

#[derive(Debug)]
pub struct SensitivityTable {
    pub fraction: f64,
    pub nominal: SweepCell,
    /// `(parameter, -fraction cell, +fraction cell)`.
    pub rows: Vec<(PkParameter, SweepCell, SweepCell)>,
}

pub fn sensitivity_sweep(base: &ScenarioConfig, parameters: &[PkParameter], fraction: f64, threads: usize) -> SensitivityTable {
    let mut jobs = vec![("nominal".to_string(), base.clone())];
    for &p in parameters {
        for sign in [-1.0, 1.0] {
            let mut cfg = base.clone();
            cfg.plant_perturbation = Some(Perturbation { parameter: p, fraction: sign * fraction });
            let label = format!("{}{}{}", p.name(), if sign < 0.0 { '-' } else { '+' }, fraction);
            jobs.push((label, cfg));
        }
    }
    let results = run_parallel(jobs.clone(), threads, |(_, cfg)| run_closed_loop(cfg));
    let mut cells = jobs
        .into_iter()
        .zip(results)
        .map(|((label, config), result)| SweepCell { label, config, result })
        .collect::<Vec<_>>()
        .into_iter();
    let nominal = cells.next().expect("nominal cell");
    let mut rows = Vec::new();
    for &p in parameters {
        let minus = cells.next().expect("minus cell");
        let plus = cells.next().expect("plus cell");
        rows.push((p, minus, plus));
    }
    SensitivityTable { fraction, nominal, rows }
}

#[derive(Debug)]
pub struct MemoryTable {
    pub rows: Vec<(usize, SweepCell)>,
}

impl MemoryTable {
    /// `(max - min) / mean` over the successful runs.
    pub fn relative_spread(&self) -> f64 {
        let js: Vec<f64> = self.rows.iter().filter_map(|(_, c)| c.j()).collect();
        if js.is_empty() {
            return f64::NAN;
        }
        let max = js.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = js.iter().copied().fold(f64::INFINITY, f64::min);
        (max - min) / (js.iter().sum::<f64>() / js.len() as f64)
    }
}

pub fn memory_sweep(base: &ScenarioConfig, lengths: &[usize], threads: usize) -> MemoryTable {
    let jobs: Vec<(String, ScenarioConfig)> = lengths
        .iter()
        .map(|&nu| {
            let mut cfg = base.clone();
            cfg.memory = nu;
            (format!("nu{nu}"), cfg)
        })
        .collect();
    let results = run_parallel(jobs.clone(), threads, |(_, cfg)| run_closed_loop(cfg));
    MemoryTable {
        rows: lengths
            .iter()
            .zip(jobs.into_iter().zip(results))
            .map(|(&nu, ((label, config), result))| (nu, SweepCell { label, config, result }))
            .collect(),
    }
}

fn fmt_j(cell: &SweepCell) -> String {
    match &cell.result {
        Ok(t) => format!("{:.4}", t.j),
        Err(e) => format!("error: {}", e.error),
    }
}

pub fn sensitivity_summary(t: &SensitivityTable) -> String {
    let pct = t.fraction * 100.0;
    let mut s = String::new();
    let _ = writeln!(s, "Performance index J under plant parameter perturbations");
    let _ = writeln!(s, "nominal J = {}", fmt_j(&t.nominal));
    let _ = writeln!(s, "{:<10} {:>16} {:>16}", "parameter", format!("-{pct}%"), format!("+{pct}%"));
    for (p, minus, plus) in &t.rows {
        let _ = writeln!(s, "{:<10} {:>16} {:>16}", p.name(), fmt_j(minus), fmt_j(plus));
    }
    s
}

pub fn memory_summary(t: &MemoryTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "Performance index J for different memory lengths");
    let _ = writeln!(s, "{:<10} {:>16}", "nu", "J");
    for (nu, cell) in &t.rows {
        let _ = writeln!(s, "{:<10} {:>16}", nu, fmt_j(cell));
    }
    let _ = writeln!(s, "relative spread (max - min) / mean = {:.4}", t.relative_spread());
    s
}

pub const CSV_HEADER: &str = "t,r,y,u,A1,A2,dhat";

/// CSV with the columns `t,r,y,u,A1,A2,dhat`; floats use the shortest
/// representation that parses back to the same value.
pub fn trace_csv(trace: &SimulationTrace) -> String {
    let mut s = String::with_capacity(trace.rows.len() * 96);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in &trace.rows {
        let _ = writeln!(s, "{},{},{},{},{},{},{}", r.t, r.r, r.y, r.u, r.a1, r.a2, r.d_hat);
    }
    s
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    name: &'a str,
    config: &'a ScenarioConfig,
    samples: usize,
    j: Option<f64>,
    error: Option<String>,
    invariants: Option<InvariantReport>,
    violations: &'a ViolationCounters,
    offsets: &'a [SegmentOffset],
    runtime: &'a RuntimeStats,
}

/// A finished (or failed) run ready to be written out.
#[derive(Debug)]
pub struct RunRecord<'a> {
    pub name: String,
    pub config: &'a ScenarioConfig,
    pub result: &'a std::result::Result<SimulationTrace, RunFailure>,
}

/// Writes `<name>.csv` for every run, `manifest.json` and, when given,
/// `summary.txt`. Nothing is written for an empty run list.
pub fn emit_outputs(runs: &[RunRecord], summary: Option<&str>, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::InvalidParameter("no traces to write".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut manifests = Vec::new();
    for run in runs {
        let (trace, error) = match run.result {
            Ok(t) => (t, None),
            Err(f) => (&f.partial, Some(f.error.to_string())),
        };
        let path = out_dir.join(format!("{}.csv", run.name));
        fs::write(&path, trace_csv(trace))?;
        written.push(path);
        manifests.push(Manifest {
            name: &run.name,
            config: run.config,
            samples: trace.rows.len(),
            j: error.is_none().then_some(trace.j),
            invariants: error.is_none().then(|| trace.invariants(run.config)),
            error,
            violations: &trace.violations,
            offsets: &trace.offsets,
            runtime: &trace.runtime,
        });
    }
    let path = out_dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifests).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, json)?;
    written.push(path);
    if let Some(text) = summary {
        let path = out_dir.join("summary.txt");
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Open-loop `A_1` responses of the truth plant and the discrete control
/// model to `u = amplitude` on `[0, duration)`, sampled every `step` up to `horizon_days`.
pub fn pulse_responses(
    pk: &PkParameters,
    filter: &FilterParams,
    integrator_step: f64,
    step: f64,
    memory: usize,
    amplitude: f64,
    duration: f64,
    horizon_days: f64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let model = build_pk_model(pk, step, memory)?;
    let mut plant = TruthPlant::new(*pk, filter, integrator_step)?;
    let mut x = DVector::zeros(model.state_dim());
    let d = DVector::zeros(model.disturbance_dim());
    let samples = (horizon_days / step + 1e-9).floor() as usize;
    let on = (duration / step - 1e-9).ceil() as usize;
    let (mut t, mut truth, mut approx) = (Vec::new(), Vec::new(), Vec::new());
    for k in 0..=samples {
        t.push(k as f64 * step);
        truth.push(plant.a1());
        approx.push((model.c() * &x)[0]);
        let u = if k < on { amplitude } else { 0.0 };
        plant = plant.step(u, step)?;
        x = model.next_state(&x, &DVector::from_element(1, u), &d);
    }
    Ok((t, truth, approx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trips_through_toml() {
        let cfg = ScenarioConfig::amiodarone_nominal();
        let back = ScenarioConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.samples(), 1500);
    }

    #[test]
    fn schedule_validation() {
        let mut cfg = ScenarioConfig::amiodarone_nominal();
        cfg.reference[1].start_day = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::amiodarone_nominal();
        cfg.reference[0].start_day = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = ScenarioConfig::amiodarone_nominal();
        cfg.total_days = 80.0;
        assert!(cfg.validate().is_err());
        assert!(ScenarioConfig::from_toml("name = 3").is_err());
        assert!(ScenarioConfig::preset("nope").is_err());
    }

    #[test]
    fn reference_lookup() {
        let cfg = ScenarioConfig::amiodarone_nominal();
        assert_eq!(cfg.reference_at(0), 0.5);
        assert_eq!(cfg.reference_at(799), 0.5);
        assert_eq!(cfg.reference_at(800), 1.0);
        assert_eq!(cfg.segments(), vec![(0.0, 80.0, 0.5), (80.0, 150.0, 1.0)]);
    }

    #[test]
    fn parallel_runner_keeps_order() {
        let out = run_parallel((0..37).collect(), 4, |x: &i32| x * x);
        assert_eq!(out, (0..37).map(|x| x * x).collect::<Vec<_>>());
        assert!(run_parallel(Vec::<i32>::new(), 3, |x| *x).is_empty());
    }

    #[test]
    fn empty_output_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let target = dir.path().join("out");
        assert!(emit_outputs(&[], None, &target).is_err());
        assert!(!target.exists());
    }
}
