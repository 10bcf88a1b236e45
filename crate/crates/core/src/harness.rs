//! Experiment orchestration: closed-loop swing-up runs, the torque sweep,
//! and their exports.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{ControlStep, Controller, ControllerConfig, ControllerPhase, Failure, SATURATION_SLACK};
use crate::dynamics::{wrap_distance, PendulumParams, State, Vec2};
use crate::error::{Error, Result};
use crate::integrate::{step, Sample, Trajectory, CONTROL_DT};
use crate::manifold::ManifoldChart;
use crate::modal::{critical_energy, ModeFamily, MultiplierRecord};

/// Largest gravitational torque, at the horizontal stretched configuration
/// [N·m]. Reference for how weak the motors are.
pub const TAU_G_HAT: f64 = 6.49;
/// Default simulated time per experiment [s].
pub const DEFAULT_MAX_SIM_TIME: f64 = 400.0;
/// Success: speed and distance to upright below these.
pub const SUCCESS_SPEED: f64 = 1e-3;
pub const SUCCESS_DISTANCE: f64 = 1e-3;
/// Hold is abandoned when the pendulum leaves this multiple of the capture
/// radius.
pub const HOLD_ESCAPE_FACTOR: f64 = 2.0;
/// Torque limits of the sweep [N·m].
pub const SWEEP_TORQUES: [f64; 6] = [0.5, 0.3, 0.2, 0.1, 0.05, 0.02];

/// Everything that defines one experiment. Serialized as the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub controller: ControllerConfig,
    /// Control and integration step [s].
    pub dt: f64,
    pub max_sim_time: f64,
    pub params: PendulumParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            controller: ControllerConfig::new(1, 0.5),
            dt: CONTROL_DT,
            max_sim_time: DEFAULT_MAX_SIM_TIME,
            params: PendulumParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(mode_index: usize, tau_max: f64) -> Self {
        ExperimentConfig {
            controller: ControllerConfig::new(mode_index, tau_max),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.controller.validate()?;
        if !(self.dt > 0.0 && self.max_sim_time > 0.0 && self.max_sim_time.is_finite()) {
            return Err(Error::Invalid(format!(
                "dt and max_sim_time must be positive, got {} and {}",
                self.dt, self.max_sim_time
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Invalid(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e))
    }
}

/// One simulation step: the state at `t` and what the controller did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub state: State,
    pub phase: ControllerPhase,
    pub energy: f64,
    pub tau: Vec2,
    pub tau_m: Vec2,
    pub tau_e: Vec2,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub e_des: f64,
    pub q_crit: Vec2,
    pub success: bool,
    /// Last switch to `Hold` [s].
    pub t_hold: Option<f64>,
    /// Time the success criterion was met [s].
    pub t_end: Option<f64>,
    /// Why the run did not succeed.
    pub failure_reason: Option<Failure>,
    /// Every abandoned swing-up attempt.
    pub failures: Vec<(f64, Failure)>,
    pub transitions: Vec<(f64, ControllerPhase)>,
    /// Steps whose torque exceeded a limit. Always zero.
    pub saturation_violations: usize,
    pub steps: usize,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl ExperimentResult {
    /// The recorded states and torques as a trajectory.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            dt: self.config.dt,
            samples: self
                .trace
                .iter()
                .map(|r| Sample {
                    t: r.t,
                    state: r.state,
                    tau: r.tau,
                })
                .collect(),
        }
    }

    /// Telemetry CSV: time, controller phase, energy, stabilizer torque and
    /// injector scale per step.
    pub fn write_telemetry_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["t", "phase", "energy", "tau_m1", "tau_m2", "tau_e1", "tau_e2", "alpha"])?;
        for r in &self.trace {
            w.write_record([
                r.t.to_string(),
                format!("{:?}", r.phase),
                r.energy.to_string(),
                r.tau_m[0].to_string(),
                r.tau_m[1].to_string(),
                r.tau_e[0].to_string(),
                r.tau_e[1].to_string(),
                r.alpha.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&summary, e))?;
        std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))?;
        if !self.trace.is_empty() {
            self.trajectory().save_csv(&dir.join(format!("{stem}_trajectory.csv")))?;
            let path = dir.join(format!("{stem}_telemetry.csv"));
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            self.write_telemetry_csv(std::io::BufWriter::new(file))
                .map_err(|e| Error::format(&path, e))?;
        }
        Ok(())
    }
}

/// Closed-loop swing-up from the hanging rest position.
///
/// Runs at `config.dt` until the success criterion holds in `Hold`, the
/// hold controller loses the pendulum, or `max_sim_time` passes. Every
/// emitted torque is checked against the limits.
pub fn run_experiment(config: &ExperimentConfig, family: &ModeFamily, chart: &ManifoldChart) -> Result<ExperimentResult> {
    run_from(config, family, chart, &State::equilibrium())
}

/// [`run_experiment`] from an arbitrary initial state.
pub fn run_from(config: &ExperimentConfig, family: &ModeFamily, chart: &ManifoldChart, initial: &State) -> Result<ExperimentResult> {
    config.validate()?;
    let p = &config.params;
    let mut ctl = Controller::new(p, &config.controller, family, chart)?;
    let tau_max = config.controller.tau_max();
    let escape = HOLD_ESCAPE_FACTOR * ctl.capture_radius();
    let n = (config.max_sim_time / config.dt).round() as usize;

    let mut s = *initial;
    let mut trace = Vec::with_capacity(n.min(1 << 20));
    let mut violations = 0;
    let mut t_end = None;
    let mut hold_lost = false;
    for k in 0..=n {
        let t = k as f64 * config.dt;
        if ctl.phase() == Some(ControllerPhase::Hold) {
            let d = wrap_distance(&s.q, &ctl.q_des());
            if s.qd.norm() < SUCCESS_SPEED && d < SUCCESS_DISTANCE {
                t_end = Some(t);
                break;
            }
            if d > escape {
                hold_lost = true;
                break;
            }
        }
        if k == n {
            break;
        }
        let out: ControlStep = ctl.step(&s, t)?;
        if (0..2).any(|j| out.tau[j].abs() > tau_max[j] + SATURATION_SLACK) {
            violations += 1;
        }
        trace.push(TraceRow {
            t,
            state: s,
            phase: out.phase,
            energy: out.energy,
            tau: out.tau,
            tau_m: out.tau_m,
            tau_e: out.tau_e,
            alpha: out.alpha,
        });
        s = step(p, &s, &out.tau, config.dt);
        if !s.is_finite() {
            return Err(Error::Blowup { t: t + config.dt });
        }
    }

    let t_hold = ctl
        .transitions()
        .iter()
        .rev()
        .find(|(_, ph)| *ph == ControllerPhase::Hold)
        .map(|&(t, _)| t);
    let success = t_end.is_some();
    let failure_reason = if success {
        None
    } else if hold_lost {
        Some(Failure::HoldLost)
    } else {
        Some(ctl.failures().first().map_or(Failure::Timeout, |&(_, f)| f))
    };
    Ok(ExperimentResult {
        config: *config,
        e_des: ctl.e_des(),
        q_crit: ctl.q_crit(),
        success,
        t_hold: if success { t_hold } else { None },
        t_end,
        failure_reason,
        failures: ctl.failures().to_vec(),
        transitions: ctl.transitions().to_vec(),
        saturation_violations: violations,
        steps: trace.len(),
        trace,
    })
}

/// Critical turning-point angle `q_crit,1` in degrees.
pub fn critical_angle_deg(p: &PendulumParams, family: &ModeFamily, tau_max: f64) -> Result<f64> {
    Ok(critical_energy(p, family, tau_max)?.1[0].to_degrees())
}

/// Family and chart of one mode, as the sweep needs them.
#[derive(Debug, Clone, Copy)]
pub struct ModeModel<'a> {
    pub family: &'a ModeFamily,
    pub chart: &'a ManifoldChart,
}

/// How one sweep cell ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "kebab-case")]
pub enum CellOutcome {
    Success { t_hold: f64, t_end: f64 },
    Fail { reason: Failure },
    /// The run itself errored (blow-up, bad configuration).
    Error { message: String },
}

impl CellOutcome {
    pub fn t_end(&self) -> Option<f64> {
        match self {
            CellOutcome::Success { t_end, .. } => Some(*t_end),
            _ => None,
        }
    }

    pub fn is_success(&self) -> bool {
        matches!(self, CellOutcome::Success { .. })
    }

    /// `12.34` for successes, `FAIL (reason)` otherwise.
    pub fn label(&self) -> String {
        match self {
            CellOutcome::Success { t_end, .. } => format!("{t_end:.2}"),
            CellOutcome::Fail { reason } => format!("FAIL ({reason})"),
            CellOutcome::Error { message } => format!("FAIL (error: {message})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mode_index: usize,
    pub tau_max: f64,
    pub outcome: CellOutcome,
    pub e_des: Option<f64>,
    pub failures: Vec<(f64, Failure)>,
    pub saturation_violations: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau_max: f64,
    /// `tau_max` as a percentage of [`TAU_G_HAT`].
    pub percent: f64,
    /// Critical angle of mode 1 in degrees, when mode 1 is available.
    pub q_crit1_deg: Option<f64>,
    pub mode1: Option<SweepCell>,
    pub mode2: Option<SweepCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema_version: u32,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_SCHEMA_VERSION: u32 = 1;

/// Runs one experiment per `(tau, mode)` cell in parallel. `base` supplies
/// everything except the mode and the torque limit. A cell that errors is
/// recorded as such; the sweep itself only fails when a requested mode has
/// no model.
pub fn run_sweep(base: &ExperimentConfig, taus: &[f64], modes: &[usize], models: &[ModeModel]) -> Result<SweepTable> {
    let model = |m: usize| {
        models
            .iter()
            .find(|x| x.family.mode_index == m)
            .ok_or_else(|| Error::Invalid(format!("no family for mode {m}")))
    };
    for &m in modes {
        model(m)?;
    }
    let jobs: Vec<(f64, usize)> = taus.iter().flat_map(|&t| modes.iter().map(move |&m| (t, m))).collect();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(tau, m)| {
            let mm = model(m).expect("checked above");
            let mut config = *base;
            config.controller.mode_index = m;
            config.controller.tau_max = [tau; 2];
            run_cell(&config, mm)
        })
        .collect();

    let p = &base.params;
    let rows = taus
        .iter()
        .map(|&tau| {
            let cell = |m: usize| cells.iter().find(|c| c.mode_index == m && c.tau_max == tau).cloned();
            SweepRow {
                tau_max: tau,
                percent: tau / TAU_G_HAT * 100.0,
                q_crit1_deg: model(1).ok().and_then(|mm| critical_angle_deg(p, mm.family, tau).ok()),
                mode1: cell(1),
                mode2: cell(2),
            }
        })
        .collect();
    Ok(SweepTable {
        schema_version: SWEEP_SCHEMA_VERSION,
        rows,
    })
}

fn run_cell(config: &ExperimentConfig, mm: &ModeModel) -> SweepCell {
    let blank = |outcome| SweepCell {
        mode_index: config.controller.mode_index,
        tau_max: config.controller.tau_max[0],
        outcome,
        e_des: None,
        failures: Vec::new(),
        saturation_violations: 0,
        steps: 0,
    };
    match run_experiment(config, mm.family, mm.chart) {
        Ok(r) => SweepCell {
            outcome: match (r.t_hold, r.t_end, r.failure_reason) {
                (Some(t_hold), Some(t_end), _) => CellOutcome::Success { t_hold, t_end },
                (_, _, Some(reason)) => CellOutcome::Fail { reason },
                _ => CellOutcome::Fail { reason: Failure::Timeout },
            },
            e_des: Some(r.e_des),
            failures: r.failures,
            saturation_violations: r.saturation_violations,
            steps: r.steps,
            ..blank(CellOutcome::Fail { reason: Failure::Timeout })
        },
        Err(e) => blank(CellOutcome::Error { message: e.to_string() }),
    }
}

impl SweepTable {
    pub fn cells(&self) -> impl Iterator<Item = &SweepCell> {
        self.rows.iter().flat_map(|r| r.mode1.iter().chain(r.mode2.iter()))
    }

    pub fn saturation_violations(&self) -> usize {
        self.cells().map(|c| c.saturation_violations).sum()
    }

    /// Cells that ran to a success or a classified failure.
    pub fn all_completed(&self) -> bool {
        self.cells().all(|c| !matches!(c.outcome, CellOutcome::Error { .. }))
    }

    const HEADER: [&'static str; 5] = ["max_torque_nm", "percent_tau_g", "q_crit1_deg", "t_end_mode1_s", "t_end_mode2_s"];

    fn cells_text(&self) -> Vec<[String; 5]> {
        let cell = |c: &Option<SweepCell>| c.as_ref().map_or("-".to_string(), |c| c.outcome.label());
        self.rows
            .iter()
            .map(|r| {
                [
                    format!("{}", r.tau_max),
                    format!("{:.2}", r.percent),
                    r.q_crit1_deg.map_or("-".to_string(), |d| format!("{d:.2}")),
                    cell(&r.mode1),
                    cell(&r.mode2),
                ]
            })
            .collect()
    }

    /// One line per torque level in the column layout of the swing-up table.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::HEADER)?;
        for row in self.cells_text() {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut rows = vec![Self::HEADER.map(String::from)];
        rows.extend(self.cells_text());
        let widths: Vec<usize> = (0..5).map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for r in &rows {
            let line: Vec<String> = r.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Writes `sweep.csv`, `sweep.txt` and `sweep.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("sweep.csv");
        let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::format(&csv_path, e))?;
        let txt = dir.join("sweep.txt");
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let json = dir.join("sweep.json");
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&json, e))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        Ok(())
    }
}

pub const MULTIPLIER_SCHEMA_VERSION: u32 = 1;

/// Characteristic multipliers of one family on an energy grid, with the
/// instability onset when one was found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierGrid {
    pub schema_version: u32,
    pub mode_index: usize,
    pub onset: Option<f64>,
    pub records: Vec<MultiplierRecord>,
}

impl MultiplierGrid {
    pub fn new(mode_index: usize, records: Vec<MultiplierRecord>, onset: Option<f64>) -> Self {
        MultiplierGrid {
            schema_version: MULTIPLIER_SCHEMA_VERSION,
            mode_index,
            onset,
            records,
        }
    }

    /// `energy,abs1..abs4,det` per grid energy.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["energy", "abs1", "abs2", "abs3", "abs4", "det"])?;
        for r in &self.records {
            let mut row = vec![format!("{:e}", r.energy)];
            row.extend(r.magnitudes.iter().map(|m| format!("{m:e}")));
            row.push(format!("{:e}", r.determinant));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `mode<i>_multipliers.json` and `.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("mode{}_multipliers", self.mode_index);
        let json = dir.join(format!("{stem}.json"));
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(&json, e))?;
        std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
        let path = dir.join(format!("{stem}.csv"));
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        self.write_csv(std::io::BufWriter::new(file)).map_err(|e| Error::format(&path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let g: MultiplierGrid = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if g.schema_version != MULTIPLIER_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: g.schema_version,
                expected: MULTIPLIER_SCHEMA_VERSION,
            });
        }
        Ok(g)
    }
}
