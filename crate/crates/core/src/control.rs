//! Swing-up torque laws and the controller state machine.
//!
//! The swing-up torque is `τ_M + τ_E`: an eigenmanifold stabilizer that
//! pulls the state onto the chart of one nonlinear mode, and an energy
//! injector scaled to use whatever torque margin the stabilizer leaves.
//! Around it sits a four-state machine: dissipate (`Bootstrap`), kick along
//! the linear mode shape (`Start`), pump (`SwingUp`) and regulate at the
//! upright position (`Hold`).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::dynamics::{energy, gravity, linear_modes, mass_matrix, wrap_angle, wrap_diff, wrap_distance, Mat2, PendulumParams, State, Vec2, Q_UPRIGHT};
use crate::error::{Error, Result};
use crate::manifold::{phase, ManifoldChart, Nearest};
use crate::modal::{critical_energy, ModeFamily};

/// Slack allowed on the torque limit for roundoff.
pub const SATURATION_SLACK: f64 = 1e-12;

/// Controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gains {
    /// Manifold stabilizer stiffness [1/s²]. The damping gain is `2√k_p`.
    pub k_p: f64,
    /// Hold stiffness [N·m/rad].
    pub k_r: [[f64; 2]; 2],
    /// Hold damping ratio.
    pub zeta_r: f64,
    /// Bootstrap damping [N·m·s/rad].
    pub d_bs: [[f64; 2]; 2],
    /// Start kick, as an acceleration along the unit mode shape [rad/s²].
    pub beta: f64,
}

impl Default for Gains {
    fn default() -> Self {
        Gains {
            k_p: 200.0,
            k_r: [[2.0, 0.0], [0.0, 2.0]],
            zeta_r: 1.0,
            d_bs: [[0.5, 0.0], [0.0, 0.5]],
            beta: 0.01,
        }
    }
}

impl Gains {
    pub fn k_d(&self) -> f64 {
        2.0 * self.k_p.sqrt()
    }
}

/// Switching and failure-detection thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    /// Hold may start this far below the target energy [J].
    pub delta_e: f64,
    /// Largest speed counted as a turning point [rad/s].
    pub delta_v: f64,
    /// Capture radius as a multiple of the distance from the critical
    /// turning point to upright.
    pub capture_scale: f64,
    /// Within this much of the target energy [J] the stabilizer tracks the
    /// target orbit itself rather than the orbit at the current energy.
    pub reference_band: f64,
    /// Share of the torque limit that gravity may take at the target
    /// turning point. The rest is left to the hold controller.
    pub hold_fraction: f64,
    /// Energy [J] and speed [rad/s] below which the pendulum is at rest.
    pub rest_energy: f64,
    pub rest_speed: f64,
    /// Off-manifold failure: distance to the chart, sustained for a time [s].
    pub manifold_distance: f64,
    pub manifold_time: f64,
    /// Energy-drop failure: loss [J] within a window [s].
    pub drop_energy: f64,
    pub drop_time: f64,
    /// Stagnation failure: least gain [J] over a window [s].
    pub stagnation_gain: f64,
    pub stagnation_time: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            delta_e: 0.02,
            delta_v: 0.05,
            capture_scale: 1.5,
            reference_band: 1e-3,
            hold_fraction: 0.8,
            rest_energy: 1e-4,
            rest_speed: 1e-3,
            manifold_distance: 1.0,
            manifold_time: 0.5,
            drop_energy: 0.5,
            drop_time: 0.1,
            stagnation_gain: 0.01,
            stagnation_time: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Mode used for the swing-up (1 or 2).
    pub mode_index: usize,
    /// Per-joint torque limit [N·m].
    pub tau_max: [f64; 2],
    /// Target energy [J]. When absent, the critical energy of the family
    /// for `hold_fraction` of the weaker joint's limit is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_des: Option<f64>,
    pub gains: Gains,
    pub thresholds: Thresholds,
}

impl ControllerConfig {
    pub fn new(mode_index: usize, tau_max: f64) -> Self {
        ControllerConfig {
            mode_index,
            tau_max: [tau_max; 2],
            e_des: None,
            gains: Gains::default(),
            thresholds: Thresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Invalid(what));
        if !(1..=2).contains(&self.mode_index) {
            return bad(format!("mode index must be 1 or 2, got {}", self.mode_index));
        }
        if !self.tau_max.iter().all(|&t| t > 0.0 && t.is_finite()) {
            return bad(format!("torque limits must be positive, got {:?}", self.tau_max));
        }
        let g = &self.gains;
        if !(g.k_p > 0.0 && g.zeta_r > 0.0 && g.beta >= 0.0) {
            return bad(format!("gains must be positive, got k_p = {}, zeta_r = {}, beta = {}", g.k_p, g.zeta_r, g.beta));
        }
        for (name, m) in [("k_r", g.k_r), ("d_bs", g.d_bs)] {
            matrix_sqrt_spd(&to_mat(m)).map_err(|_| Error::Invalid(format!("{name} must be symmetric positive-definite")))?;
        }
        let th = &self.thresholds;
        let all = [
            th.delta_e,
            th.delta_v,
            th.capture_scale,
            th.reference_band,
            th.hold_fraction,
            th.rest_energy,
            th.rest_speed,
            th.manifold_distance,
            th.manifold_time,
            th.drop_energy,
            th.drop_time,
            th.stagnation_gain,
            th.stagnation_time,
        ];
        if !all.iter().all(|&x| x > 0.0 && x.is_finite()) {
            return bad("thresholds must be positive".into());
        }
        if th.hold_fraction > 1.0 {
            return bad(format!("hold_fraction must not exceed 1, got {}", th.hold_fraction));
        }
        Ok(())
    }

    pub fn tau_max(&self) -> Vec2 {
        Vec2::from(self.tau_max)
    }
}

fn to_mat(m: [[f64; 2]; 2]) -> Mat2 {
    Mat2::new(m[0][0], m[0][1], m[1][0], m[1][1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ControllerPhase {
    Bootstrap,
    Start,
    SwingUp,
    Hold,
}

/// Symptom that ended a swing-up attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Failure {
    /// Too far from the eigenmanifold for too long.
    OffManifold,
    /// Energy fell suddenly.
    EnergyDrop,
    /// Energy stopped growing before the target.
    Stagnation,
    /// The hold controller let the pendulum escape.
    HoldLost,
    /// No success within the simulation time.
    Timeout,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Failure::OffManifold => "off-manifold",
            Failure::EnergyDrop => "energy-drop",
            Failure::Stagnation => "stagnation",
            Failure::HoldLost => "hold-lost",
            Failure::Timeout => "timeout",
        };
        f.write_str(s)
    }
}

/// Componentwise clamp to `±tau_max`.
pub fn clamp_torque(tau: &Vec2, tau_max: &Vec2) -> Vec2 {
    Vec2::new(tau[0].clamp(-tau_max[0], tau_max[0]), tau[1].clamp(-tau_max[1], tau_max[1]))
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Output of [`tau_manifold`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldTorque {
    pub tau: Vec2,
    /// Phase undefined; the torque is zero.
    pub degenerate: bool,
    /// The state's energy lay outside the chart.
    pub clamped: bool,
    /// `‖(q, q̇) − Y(q, q̇)‖` with wrapped angles, in mixed units.
    pub distance: f64,
}

/// Eigenmanifold stabilizer `M(q)[−k_p (q − Y) − k_d (q̇ − Ẏ)]`, with the
/// desired state `Y` taken from the chart at the state's own energy and
/// phase. Energies below the chart use its lowest orbit scaled to the
/// state's energy.
pub fn tau_manifold(p: &PendulumParams, chart: &ManifoldChart, s: &State, k_p: f64) -> ManifoldTorque {
    tau_manifold_at(p, chart, s, k_p, None)
}

/// [`tau_manifold`] with the target taken on the orbit of energy `e_ref`
/// instead of the state's own energy, when given.
///
/// Close to the upright position the turning points move by tens of
/// radians per joule, so any work done by the stabilizer itself drags its
/// target along. Pinning the reference energy breaks that loop.
pub fn tau_manifold_at(p: &PendulumParams, chart: &ManifoldChart, s: &State, k_p: f64, e_ref: Option<f64>) -> ManifoldTorque {
    let s = State {
        q: s.q.map(wrap_angle),
        qd: s.qd,
    };
    let near = match e_ref {
        Some(e) => match phase(&s).and_then(|phi| chart.project(e, phi)) {
            Ok(pr) => Nearest::Projected(pr),
            Err(_) => Nearest::Degenerate(s),
        },
        None => chart.nearest(p, &s),
    };
    let (target, clamped) = match near {
        Nearest::Degenerate(_) => {
            return ManifoldTorque {
                tau: Vec2::zeros(),
                degenerate: true,
                clamped: false,
                distance: 0.0,
            }
        }
        Nearest::Projected(pr) => (pr.state, pr.clamped),
    };
    // Below the chart the family is linear: amplitudes scale with √E.
    let (lo, _) = chart.energy_range;
    let e = energy(p, &s);
    let target = if e < lo {
        let r = (e.max(0.0) / lo).sqrt();
        State {
            q: r * target.q,
            qd: r * target.qd,
        }
    } else {
        target
    };
    let eq = wrap_diff(&s.q, &target.q);
    let eqd = s.qd - target.qd;
    let k_d = 2.0 * k_p.sqrt();
    ManifoldTorque {
        tau: mass_matrix(p, &s.q) * (-k_p * eq - k_d * eqd),
        degenerate: false,
        clamped,
        distance: (eq.norm_squared() + eqd.norm_squared()).sqrt(),
    }
}

/// Unsaturated sliding-mode energy law `sign(E_des − E) M(q) q̇`.
pub fn tau_bar(p: &PendulumParams, s: &State, e_des: f64) -> Vec2 {
    sign(e_des - energy(p, s)) * (mass_matrix(p, &s.q) * s.qd)
}

/// Largest `α ≥ 0` with `|τ_M + α τ̄| ≤ τ_max` componentwise.
///
/// Zero when `τ_M` already exceeds a limit or when `τ̄` vanishes.
///
/// ```
/// use eigenswing::control::alpha_opt;
/// use eigenswing::dynamics::Vec2;
/// let a = alpha_opt(&Vec2::new(0.3, -0.1), &Vec2::new(0.2, 0.4), &Vec2::new(0.5, 0.5));
/// assert!((a - 1.0).abs() < 1e-12);
/// ```
pub fn alpha_opt(tau_m: &Vec2, tau_bar: &Vec2, tau_max: &Vec2) -> f64 {
    if (0..2).any(|j| tau_m[j].abs() > tau_max[j]) {
        return 0.0;
    }
    let rows = [
        (tau_bar[0], tau_max[0] - tau_m[0]),
        (tau_bar[1], tau_max[1] - tau_m[1]),
        (-tau_bar[0], tau_max[0] + tau_m[0]),
        (-tau_bar[1], tau_max[1] + tau_m[1]),
    ];
    let alpha = rows
        .iter()
        .filter(|(x, _)| *x > 0.0)
        .map(|(x, y)| y / x)
        .fold(f64::INFINITY, f64::min);
    if alpha.is_finite() {
        alpha.max(0.0)
    } else {
        0.0
    }
}

/// Energy injector `α_opt tanh(E_des − E) M(q) q̇` and the `α_opt` used.
pub fn tau_energy(p: &PendulumParams, s: &State, tau_m: &Vec2, e_des: f64, tau_max: &Vec2) -> (Vec2, f64) {
    let bar = tau_bar(p, s, e_des);
    let alpha = alpha_opt(tau_m, &bar, tau_max);
    let de = e_des - energy(p, s);
    (alpha * de.tanh() * (mass_matrix(p, &s.q) * s.qd), alpha)
}

/// Artificial friction `−D_bs q̇`, clamped.
pub fn tau_bootstrap(s: &State, d_bs: &Mat2, tau_max: &Vec2) -> Vec2 {
    clamp_torque(&(-(d_bs * s.qd)), tau_max)
}

/// One-step kick `β M(q) v_i` along the unit linear mode shape.
pub fn tau_start(p: &PendulumParams, q: &Vec2, mode_index: usize, beta: f64) -> Result<Vec2> {
    if !(1..=2).contains(&mode_index) {
        return Err(Error::Invalid(format!("mode index must be 1 or 2, got {mode_index}")));
    }
    let v = linear_modes(p)?.shape(mode_index);
    Ok(beta * (mass_matrix(p, q) * v))
}

/// Principal square root of a symmetric positive-definite 2×2 matrix.
///
/// Uses `√A = (A + √det A · I) / √(tr A + 2√det A)`.
pub fn matrix_sqrt_spd(a: &Mat2) -> Result<Mat2> {
    let scale = a.amax();
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::MatrixSqrtFailure("matrix is zero or not finite"));
    }
    if (a[(0, 1)] - a[(1, 0)]).abs() > 1e-12 * scale {
        return Err(Error::MatrixSqrtFailure("matrix is not symmetric"));
    }
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let tr = a[(0, 0)] + a[(1, 1)];
    if !(det > 1e-14 * scale * scale) || !(tr > 0.0) {
        return Err(Error::MatrixSqrtFailure("matrix is not positive-definite"));
    }
    let s = det.sqrt();
    let t = (tr + 2.0 * s).sqrt();
    Ok((a + s * Mat2::identity()) / t)
}

/// Upright PD law `−K_R (q − q_des) − D_R q̇ + g(q)` with
/// `D_R = ζ_R (√K_R √M + √M √K_R)`, clamped.
pub fn tau_hold(p: &PendulumParams, s: &State, q_des: &Vec2, k_r: &Mat2, zeta_r: f64, tau_max: &Vec2) -> Result<Vec2> {
    let m = mass_matrix(p, &s.q);
    let sk = matrix_sqrt_spd(k_r)?;
    let sm = matrix_sqrt_spd(&m)?;
    let d_r = zeta_r * (sk * sm + sm * sk);
    let tau = -(k_r * wrap_diff(&s.q, q_des)) - d_r * s.qd + gravity(p, &s.q);
    Ok(clamp_torque(&tau, tau_max))
}

/// One controller evaluation with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStep {
    /// Torque to apply, within the limits.
    pub tau: Vec2,
    /// Phase whose law produced `tau`.
    pub phase: ControllerPhase,
    /// Stabilizer and injector parts (zero outside `SwingUp`).
    pub tau_m: Vec2,
    pub tau_e: Vec2,
    pub alpha: f64,
    pub energy: f64,
    /// Set on the step a swing-up attempt is abandoned.
    pub failure: Option<Failure>,
}

/// Watches a swing-up attempt for the three failure symptoms.
#[derive(Debug, Clone)]
struct FailureMonitor {
    th: Thresholds,
    since: f64,
    off_since: Option<f64>,
    history: VecDeque<(f64, f64)>,
}

impl FailureMonitor {
    fn new(th: Thresholds, t: f64) -> Self {
        FailureMonitor {
            th,
            since: t,
            off_since: None,
            history: VecDeque::new(),
        }
    }

    fn update(&mut self, t: f64, e: f64, distance: f64, e_des: f64) -> Option<Failure> {
        let th = &self.th;
        if distance > th.manifold_distance {
            let start = *self.off_since.get_or_insert(t);
            if t - start >= th.manifold_time {
                return Some(Failure::OffManifold);
            }
        } else {
            self.off_since = None;
        }

        self.history.push_back((t, e));
        let horizon = th.stagnation_time.max(th.drop_time);
        while let Some(&(t0, _)) = self.history.front() {
            if t - t0 > horizon + 1e-9 {
                self.history.pop_front();
            } else {
                break;
            }
        }
        if e < e_des {
            let recent_max = self
                .history
                .iter()
                .rev()
                .take_while(|(ti, _)| t - ti <= th.drop_time + 1e-9)
                .map(|&(_, ei)| ei)
                .fold(f64::NEG_INFINITY, f64::max);
            if recent_max - e > th.drop_energy {
                return Some(Failure::EnergyDrop);
            }
        }
        if t - self.since >= th.stagnation_time && e < e_des - th.delta_e {
            let &(_, e0) = self.history.front().expect("history holds the current sample");
            if e - e0 < th.stagnation_gain {
                return Some(Failure::Stagnation);
            }
        }
        None
    }
}

/// Closed-loop controller: configuration, chart and the mutable phase.
///
/// A run is a pure function of the configuration and the initial state.
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    p: PendulumParams,
    config: ControllerConfig,
    chart: &'a ManifoldChart,
    e_des: f64,
    q_crit: Vec2,
    capture_radius: f64,
    q_des: Vec2,
    k_r: Mat2,
    d_bs: Mat2,
    tau_max: Vec2,
    phase: Option<ControllerPhase>,
    kicked: bool,
    transitions: Vec<(f64, ControllerPhase)>,
    failures: Vec<(f64, Failure)>,
    monitor: FailureMonitor,
}

impl<'a> Controller<'a> {
    /// Fails if the configuration is invalid, the chart or family belong to
    /// another mode, or the torque limit can hold no turning point.
    pub fn new(p: &PendulumParams, config: &ControllerConfig, family: &ModeFamily, chart: &'a ManifoldChart) -> Result<Self> {
        config.validate()?;
        if family.mode_index != config.mode_index || chart.mode_index != config.mode_index {
            return Err(Error::Invalid(format!(
                "configured for mode {} but given family of mode {} and chart of mode {}",
                config.mode_index, family.mode_index, chart.mode_index
            )));
        }
        let tau_min = config.tau_max[0].min(config.tau_max[1]);
        let (_, q_crit) = critical_energy(p, family, tau_min)?;
        let e_des = match config.e_des {
            Some(e) => e,
            None => critical_energy(p, family, config.thresholds.hold_fraction * tau_min)?.0,
        };
        let q_des = Vec2::from(Q_UPRIGHT);
        Ok(Controller {
            p: *p,
            config: *config,
            chart,
            e_des,
            q_crit,
            capture_radius: config.thresholds.capture_scale * wrap_distance(&q_crit, &q_des),
            q_des,
            k_r: to_mat(config.gains.k_r),
            d_bs: to_mat(config.gains.d_bs),
            tau_max: config.tau_max(),
            phase: None,
            kicked: false,
            transitions: Vec::new(),
            failures: Vec::new(),
            monitor: FailureMonitor::new(config.thresholds, 0.0),
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn e_des(&self) -> f64 {
        self.e_des
    }

    pub fn q_crit(&self) -> Vec2 {
        self.q_crit
    }

    pub fn q_des(&self) -> Vec2 {
        self.q_des
    }

    pub fn capture_radius(&self) -> f64 {
        self.capture_radius
    }

    pub fn phase(&self) -> Option<ControllerPhase> {
        self.phase
    }

    /// Every phase entered, with its entry time.
    pub fn transitions(&self) -> &[(f64, ControllerPhase)] {
        &self.transitions
    }

    /// Abandoned swing-up attempts.
    pub fn failures(&self) -> &[(f64, Failure)] {
        &self.failures
    }

    fn enter(&mut self, phase: ControllerPhase, t: f64) {
        self.phase = Some(phase);
        self.transitions.push((t, phase));
        match phase {
            ControllerPhase::Start => self.kicked = false,
            ControllerPhase::SwingUp => self.monitor = FailureMonitor::new(self.config.thresholds, t),
            _ => {}
        }
    }

    fn at_rest(&self, s: &State, e: f64) -> bool {
        e < self.config.thresholds.rest_energy && s.qd.norm() < self.config.thresholds.rest_speed
    }

    fn can_hold(&self, s: &State, e: f64) -> bool {
        let th = &self.config.thresholds;
        let g = gravity(&self.p, &s.q);
        e >= self.e_des - th.delta_e
            && s.qd.norm() <= th.delta_v
            && wrap_distance(&s.q, &self.q_des) <= self.capture_radius
            && (0..2).all(|j| g[j].abs() <= self.tau_max[j])
    }

    /// Advances the state machine and returns the torque for the step
    /// starting at time `t`.
    pub fn step(&mut self, s: &State, t: f64) -> Result<ControlStep> {
        let e = energy(&self.p, s);
        let mut out = ControlStep {
            tau: Vec2::zeros(),
            phase: ControllerPhase::Bootstrap,
            tau_m: Vec2::zeros(),
            tau_e: Vec2::zeros(),
            alpha: 0.0,
            energy: e,
            failure: None,
        };

        match self.phase {
            None if self.at_rest(s, e) => self.enter(ControllerPhase::Start, t),
            None => self.enter(ControllerPhase::Bootstrap, t),
            Some(ControllerPhase::Bootstrap) if self.at_rest(s, e) => self.enter(ControllerPhase::Start, t),
            Some(ControllerPhase::Start) if self.kicked => self.enter(ControllerPhase::SwingUp, t),
            Some(ControllerPhase::SwingUp) if self.can_hold(s, e) => self.enter(ControllerPhase::Hold, t),
            _ => {}
        }

        let phase = self.phase.expect("phase set above");
        out.phase = phase;
        match phase {
            ControllerPhase::Bootstrap => out.tau = tau_bootstrap(s, &self.d_bs, &self.tau_max),
            ControllerPhase::Start => {
                let kick = tau_start(&self.p, &s.q, self.config.mode_index, self.config.gains.beta)?;
                out.tau = clamp_torque(&kick, &self.tau_max);
                self.kicked = true;
            }
            ControllerPhase::SwingUp => {
                let e_ref = (e > self.e_des - self.config.thresholds.reference_band).then_some(self.e_des);
                let m = tau_manifold_at(&self.p, self.chart, s, self.config.gains.k_p, e_ref);
                if let Some(f) = self.monitor.update(t, e, m.distance, self.e_des) {
                    self.failures.push((t, f));
                    out.failure = Some(f);
                    self.enter(ControllerPhase::Bootstrap, t);
                    out.phase = ControllerPhase::Bootstrap;
                    out.tau = tau_bootstrap(s, &self.d_bs, &self.tau_max);
                    return Ok(out);
                }
                let (tau_e, alpha) = tau_energy(&self.p, s, &m.tau, self.e_des, &self.tau_max);
                out.tau_m = m.tau;
                out.tau_e = tau_e;
                out.alpha = alpha;
                out.tau = clamp_torque(&(m.tau + tau_e), &self.tau_max);
            }
            ControllerPhase::Hold => {
                out.tau = tau_hold(&self.p, s, &self.q_des, &self.k_r, self.config.gains.zeta_r, &self.tau_max)?;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-2.0), -1.0);
    }

    #[test]
    fn sqrt_of_diagonal() {
        let r = matrix_sqrt_spd(&Mat2::new(4.0, 0.0, 0.0, 9.0)).unwrap();
        assert!((r - Mat2::new(2.0, 0.0, 0.0, 3.0)).amax() < 1e-14);
    }

    #[test]
    fn sqrt_rejects_indefinite() {
        assert!(matrix_sqrt_spd(&Mat2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(matrix_sqrt_spd(&Mat2::new(1.0, 0.5, 0.0, 1.0)).is_err());
    }
}
