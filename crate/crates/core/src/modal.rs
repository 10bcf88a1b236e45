//! Nonlinear normal modes as continued families of brake orbits.
//!
//! A brake orbit starts at rest at a turning point `q_a`, passes through
//! the equilibrium and comes to rest again at `q_b` after half a period; the
//! second half retraces the first backwards in time. Orbits are found by
//! multiple shooting over the half period. The unknowns are `q_a`, the half
//! period and the interior node states; the residuals are segment
//! continuity, the velocity at the half period and the energy mismatch
//! `V(q_a) - E`. Segment sensitivities come from the variational flow and
//! the energy gradient is the gravity vector.
//!
//! Families are continued in energy from the linear modes up to just below
//! the upright potential, where the period diverges.

use nalgebra::{Complex, DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    forward_dynamics, gravity, linear_modes, max_potential, potential, PendulumParams, State, Vec2,
};
use crate::error::{Error, Result};
use crate::integrate::{self, variational_steps, Sample, Trajectory, SHOOTING_DT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrakeOrbit {
    pub energy: f64,
    pub turn_a: Vec2,
    pub turn_b: Vec2,
    pub period: f64,
    /// Largest state mismatch between consecutive shooting segments,
    /// including the return to `turn_a`.
    pub continuity_defect: f64,
    /// One full period starting at `turn_a`, uniformly spaced in time.
    #[serde(skip)]
    pub samples: Trajectory,
}

/// Invariant measurements of a single orbit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitReport {
    /// Largest speed at the two turning points [rad/s].
    pub turning_speed: f64,
    /// Largest deviation of `V(turn_a)`, `V(turn_b)` from the orbit energy [J].
    pub energy_mismatch: f64,
    /// Norm of the state difference between `t = T` and `t = 0`.
    pub closure: f64,
    pub turning_points: usize,
}

impl BrakeOrbit {
    pub fn half_period(&self) -> f64 {
        0.5 * self.period
    }

    pub fn report(&self, p: &PendulumParams) -> OrbitReport {
        let n = self.samples.len() - 1;
        let first = self.samples.samples[0].state;
        let mid = self.samples.samples[n / 2].state;
        let last = self.samples.samples[n].state;
        let diff = nalgebra::Vector4::from(last.to_array()) - nalgebra::Vector4::from(first.to_array());
        OrbitReport {
            turning_speed: first.qd.norm().max(mid.qd.norm()),
            energy_mismatch: (potential(p, &self.turn_a) - self.energy)
                .abs()
                .max((potential(p, &self.turn_b) - self.energy).abs()),
            closure: diff.norm().max(self.continuity_defect),
            turning_points: count_turning_points(&self.samples),
        }
    }
}

/// Counts instants where all joint velocities vanish, from the sampled
/// speed profile over one period (the closing sample is ignored).
pub fn count_turning_points(samples: &Trajectory) -> usize {
    let speeds: Vec<f64> = samples.samples[..samples.len() - 1]
        .iter()
        .map(|s| s.state.qd.norm())
        .collect();
    let n = speeds.len();
    if n < 3 {
        return 0;
    }
    let vmax = speeds.iter().cloned().fold(0.0, f64::max);
    let threshold = 2e-2 * vmax;
    (0..n)
        .filter(|&i| {
            let prev = speeds[(i + n - 1) % n];
            let next = speeds[(i + 1) % n];
            speeds[i] < threshold && speeds[i] <= prev && speeds[i] < next
        })
        .count()
}

/// Settings for brake-orbit shooting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingOptions {
    /// Largest integration step [s].
    pub dt: f64,
    /// Residual norm at which Newton stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Stored samples per period; must be even.
    pub samples_per_period: usize,
    /// Target length of one shooting segment [s]. The half period is split
    /// into enough segments that none is longer.
    pub segment_duration: f64,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            dt: SHOOTING_DT,
            tolerance: 1e-9,
            max_iterations: 25,
            samples_per_period: 800,
            segment_duration: 0.25,
        }
    }
}

/// Result of a shooting solve together with its Newton statistics.
#[derive(Debug, Clone)]
pub struct Shot {
    pub orbit: BrakeOrbit,
    pub iterations: usize,
    pub residual: f64,
}

/// Discretization of one half period: `segments` equal segments of
/// `steps_per_segment` RK4 steps each.
#[derive(Debug, Clone, Copy)]
struct Grid {
    segments: usize,
    steps_per_segment: usize,
    /// Stored samples per half period.
    per_half: usize,
}

impl Grid {
    fn new(half: f64, opts: &ShootingOptions) -> Self {
        let per_half = (opts.samples_per_period / 2).max(1);
        let wanted = (half / opts.segment_duration).ceil().max(1.0) as usize;
        // Segments must split the stored samples evenly.
        let segments = (wanted..=per_half).find(|m| per_half.is_multiple_of(*m)).unwrap_or(per_half);
        let per_segment_samples = per_half / segments;
        let min_steps = integrate::step_count(half / segments as f64, opts.dt).max(1);
        let steps_per_segment = min_steps.div_ceil(per_segment_samples) * per_segment_samples;
        Grid {
            segments,
            steps_per_segment,
            per_half,
        }
    }

    fn unknowns(&self) -> usize {
        3 + 4 * (self.segments - 1)
    }

    /// Sample index (within one half period) of node `k`.
    fn node_sample(&self, k: usize) -> usize {
        k * self.per_half / self.segments
    }
}

type Vec4 = Vector4<f64>;

fn state4(s: &State) -> Vec4 {
    Vec4::new(s.q[0], s.q[1], s.qd[0], s.qd[1])
}

fn state_of(x: &Vec4) -> State {
    State::new([x[0], x[1]], [x[2], x[3]])
}

/// Unknown vector layout: `[q_a (2), half (1), x_1 .. x_{m-1} (4 each)]`.
fn node(z: &DVector<f64>, k: usize) -> Vec4 {
    if k == 0 {
        Vec4::new(z[0], z[1], 0.0, 0.0)
    } else {
        let o = 3 + 4 * (k - 1);
        Vec4::new(z[o], z[o + 1], z[o + 2], z[o + 3])
    }
}

fn field(p: &PendulumParams, x: &Vec4) -> Vec4 {
    let a = forward_dynamics(p, &state_of(x), &Vec2::zeros());
    Vec4::new(x[2], x[3], a[0], a[1])
}

/// Residual of the multiple-shooting system: segment continuity, zero
/// velocity at the half period, and the energy constraint.
fn shooting_residual(
    p: &PendulumParams,
    z: &DVector<f64>,
    grid: &Grid,
    target: f64,
    with_jacobian: bool,
) -> Result<(DVector<f64>, Option<DMatrix<f64>>)> {
    let m = grid.segments;
    let n = grid.unknowns();
    let half = z[2];
    if !(half > 0.0) {
        return Err(Error::Invalid("non-positive half period".into()));
    }
    let h = half / (m * grid.steps_per_segment) as f64;
    let mut r = DVector::zeros(n);
    let mut jac = with_jacobian.then(|| DMatrix::zeros(n, n));
    for k in 0..m {
        let start = node(z, k);
        let (end, phi) = if with_jacobian {
            let fj = variational_steps(p, &state_of(&start), grid.steps_per_segment, h, 0, |_, _| {})?;
            (state4(&fj.end_state), Some(fj.jac))
        } else {
            let s = integrate::free_steps(p, &state_of(&start), grid.steps_per_segment, h);
            if !s.is_finite() {
                return Err(Error::Blowup { t: half });
            }
            (state4(&s), None)
        };
        let dend_dhalf = field(p, &end) / m as f64;
        let row = 4 * k;
        // Columns of the segment's start node.
        let cols: Vec<(usize, usize)> = if k == 0 {
            vec![(0, 0), (1, 1)]
        } else {
            (0..4).map(|i| (i, 3 + 4 * (k - 1) + i)).collect()
        };
        if k + 1 < m {
            let next = node(z, k + 1);
            for i in 0..4 {
                r[row + i] = end[i] - next[i];
            }
            if let (Some(j), Some(phi)) = (jac.as_mut(), phi) {
                for i in 0..4 {
                    for &(c, col) in &cols {
                        j[(row + i, col)] = phi[(i, c)];
                    }
                    j[(row + i, 2)] = dend_dhalf[i];
                    j[(row + i, 3 + 4 * k + i)] = -1.0;
                }
            }
        } else {
            r[row] = end[2];
            r[row + 1] = end[3];
            if let (Some(j), Some(phi)) = (jac.as_mut(), phi) {
                for i in 0..2 {
                    for &(c, col) in &cols {
                        j[(row + i, col)] = phi[(2 + i, c)];
                    }
                    j[(row + i, 2)] = dend_dhalf[2 + i];
                }
            }
        }
    }
    let q_a = Vec2::new(z[0], z[1]);
    r[n - 1] = potential(p, &q_a) - target;
    if let Some(j) = jac.as_mut() {
        let g = gravity(p, &q_a);
        j[(n - 1, 0)] = g[0];
        j[(n - 1, 1)] = g[1];
    }
    Ok((r, jac))
}

/// Initial guess for the shooting unknowns: turning point, half period and
/// the interior node states.
#[derive(Debug, Clone)]
struct NodeGuess {
    q_a: Vec2,
    half: f64,
    /// States at fractions `k / m` of the half period, `k = 1 .. m-1`.
    interior: Vec<Vec4>,
}

fn pack(guess: &NodeGuess) -> DVector<f64> {
    let mut z = DVector::zeros(3 + 4 * guess.interior.len());
    z[0] = guess.q_a[0];
    z[1] = guess.q_a[1];
    z[2] = guess.half;
    for (k, x) in guess.interior.iter().enumerate() {
        z.rows_mut(3 + 4 * k, 4).copy_from(x);
    }
    z
}

/// Solves for the brake orbit at `target_energy` by multiple shooting over
/// half a period, starting from a single trajectory integrated from
/// `guess_turn` at rest for `guess_half_period`.
pub fn find_brake_orbit(
    p: &PendulumParams,
    guess_turn: Vec2,
    guess_half_period: f64,
    target_energy: f64,
    opts: &ShootingOptions,
) -> Result<Shot> {
    if !(guess_half_period > 0.0) || !(target_energy > 0.0) {
        return Err(Error::Invalid(format!(
            "shooting needs a positive half period and energy, got {guess_half_period} s, {target_energy} J"
        )));
    }
    let grid = Grid::new(guess_half_period, opts);
    let h = guess_half_period / (grid.segments * grid.steps_per_segment) as f64;
    let mut interior = Vec::with_capacity(grid.segments - 1);
    let mut s = State::at_rest(guess_turn);
    for _ in 1..grid.segments {
        s = integrate::free_steps(p, &s, grid.steps_per_segment, h);
        interior.push(state4(&s));
    }
    let guess = NodeGuess {
        q_a: guess_turn,
        half: guess_half_period,
        interior,
    };
    solve_nodes(p, &guess, &grid, target_energy, opts)
}

fn solve_nodes(
    p: &PendulumParams,
    guess: &NodeGuess,
    grid: &Grid,
    target_energy: f64,
    opts: &ShootingOptions,
) -> Result<Shot> {
    let mut z = pack(guess);
    let (mut r, mut jac) = shooting_residual(p, &z, grid, target_energy, true)?;
    let mut norm = r.norm();
    let mut best = norm;
    let mut iterations = 0;
    let mut polish = 0;

    loop {
        if norm < opts.tolerance {
            // A couple of extra iterations while the residual keeps shrinking.
            if polish >= 2 {
                break;
            }
            polish += 1;
        }
        if iterations >= opts.max_iterations {
            if norm < opts.tolerance {
                break;
            }
            return Err(Error::NoConvergence {
                iterations,
                residual: best,
            });
        }
        iterations += 1;
        let delta = match jac.take().and_then(|j| j.lu().solve(&(-&r))) {
            Some(d) if d.iter().all(|x| x.is_finite()) => d,
            _ if norm < opts.tolerance => break,
            _ => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: best,
                })
            }
        };
        // Backtracking keeps Newton from jumping branches on a poor guess.
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let z_try = &z + lambda * &delta;
            if let Ok((r_try, _)) = shooting_residual(p, &z_try, grid, target_energy, false) {
                let n_try = r_try.norm();
                if n_try.is_finite() && n_try < norm * (1.0 - 1e-4 * lambda) {
                    accepted = Some(z_try);
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some(z_new) => {
                z = z_new;
                let (r_new, j_new) = shooting_residual(p, &z, grid, target_energy, true)?;
                r = r_new;
                jac = j_new;
                norm = r.norm();
                best = best.min(norm);
            }
            None if norm < opts.tolerance => break,
            None => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: best,
                })
            }
        }
    }

    let orbit = assemble_orbit(p, &z, grid, target_energy)?;
    let count = count_turning_points(&orbit.samples);
    if count != 2 {
        return Err(Error::SpuriousTurningPoint {
            energy: target_energy,
            count,
        });
    }
    Ok(Shot {
        orbit,
        iterations,
        residual: norm,
    })
}

/// Time reversal `(q, q̇) ↦ (q, -q̇)`.
fn reflect(x: &Vec4) -> Vec4 {
    Vec4::new(x[0], x[1], -x[2], -x[3])
}

/// Integrates every segment of the period forward from its node and records
/// the dense samples. Nodes of the second half are the time reflections of
/// the first-half nodes. The largest mismatch between a segment end and the
/// following node (including the return to `turn_a`) is kept as the
/// continuity defect.
fn assemble_orbit(p: &PendulumParams, z: &DVector<f64>, grid: &Grid, target_energy: f64) -> Result<BrakeOrbit> {
    let m = grid.segments;
    let half = z[2];
    let h = half / (m * grid.steps_per_segment) as f64;
    let samples_per_segment = grid.per_half / m;
    let stride = grid.steps_per_segment / samples_per_segment;
    let dt_sample = h * stride as f64;
    let zero = Vec2::zeros();

    let mut nodes: Vec<Vec4> = (0..m).map(|k| node(z, k)).collect();
    // End of the first half, with the velocity residual kept.
    let mid = integrate::free_steps(p, &state_of(&nodes[m - 1]), grid.steps_per_segment, h);
    let turn_b = mid.q;
    let mid_rest = Vec4::new(turn_b[0], turn_b[1], 0.0, 0.0);
    // Second-half nodes: reflections of x_m (= turn_b at rest), x_{m-1}, ..., x_1.
    nodes.push(mid_rest);
    for k in (1..m).rev() {
        nodes.push(reflect(&nodes[k]));
    }
    let closing = nodes[0];

    let mut samples = Vec::with_capacity(2 * grid.per_half + 1);
    let mut defect: f64 = 0.0;
    for (seg, start) in nodes.iter().enumerate() {
        let mut s = state_of(start);
        let base = seg * samples_per_segment;
        samples.push(Sample {
            t: base as f64 * dt_sample,
            state: if seg == m { mid } else { s },
            tau: zero,
        });
        for k in 1..=grid.steps_per_segment {
            s = integrate::step(p, &s, &zero, h);
            if !s.is_finite() {
                return Err(Error::Blowup {
                    t: (seg * grid.steps_per_segment + k) as f64 * h,
                });
            }
            if k % stride == 0 && k < grid.steps_per_segment {
                samples.push(Sample {
                    t: (base + k / stride) as f64 * dt_sample,
                    state: s,
                    tau: zero,
                });
            }
        }
        let next = if seg + 1 < 2 * m { nodes[seg + 1] } else { closing };
        let jump = if seg + 1 == m {
            // Velocity residual at the half period.
            (state4(&s) - state4(&mid)).norm() + mid.qd.norm()
        } else {
            (state4(&s) - next).norm()
        };
        defect = defect.max(jump);
        if seg + 1 == 2 * m {
            samples.push(Sample {
                t: (2 * grid.per_half) as f64 * dt_sample,
                state: s,
                tau: zero,
            });
        }
    }
    Ok(BrakeOrbit {
        energy: target_energy,
        turn_a: Vec2::new(z[0], z[1]),
        turn_b,
        period: 2.0 * half,
        continuity_defect: defect,
        samples: Trajectory {
            dt: dt_sample,
            samples,
        },
    })
}

/// Step-size and termination settings for [`continue_mode`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContinuationControls {
    pub start_energy: f64,
    pub initial_step: f64,
    pub max_step: f64,
    /// Smallest admissible energy step [J].
    pub step_floor: f64,
    /// Largest step as a fraction of the remaining gap to the upright potential.
    pub gap_fraction: f64,
    /// The floor shrinks to this fraction of the gap close to the upright
    /// potential.
    pub floor_gap_fraction: f64,
    /// Newton iterations at or below which the step doubles.
    pub easy_iterations: usize,
    /// Energy the family must reach for a floor stop to count as complete [J].
    pub required_energy: f64,
    pub shooting: ShootingOptions,
}

impl Default for ContinuationControls {
    fn default() -> Self {
        ContinuationControls {
            start_energy: 1e-4,
            initial_step: 1e-4,
            max_step: 0.02,
            step_floor: 1e-5,
            gap_fraction: 0.1,
            floor_gap_fraction: 1e-2,
            easy_iterations: 4,
            required_energy: 12.9,
            shooting: ShootingOptions::default(),
        }
    }
}

/// Gap to the upright potential left by [`default_ceiling`] [J].
pub const DEFAULT_CEILING_GAP: f64 = 1e-6;

/// Default continuation ceiling, just below the upright potential. The gap
/// has to be small enough for the critical energy of very weak motors
/// (0.02 N·m needs roughly `E_max - 3e-5 J`).
pub fn default_ceiling(p: &PendulumParams) -> f64 {
    max_potential(p) - DEFAULT_CEILING_GAP
}

/// Energy-ordered family of brake orbits of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeFamily {
    pub mode_index: usize,
    pub orbits: Vec<BrakeOrbit>,
}

impl ModeFamily {
    pub fn energies(&self) -> Vec<f64> {
        self.orbits.iter().map(|o| o.energy).collect()
    }

    pub fn energy_range(&self) -> (f64, f64) {
        (self.orbits[0].energy, self.orbits[self.orbits.len() - 1].energy)
    }

    pub fn top(&self) -> &BrakeOrbit {
        &self.orbits[self.orbits.len() - 1]
    }

    /// Index `i` and weight `w` such that `E = (1 - w) E_i + w E_{i+1}`,
    /// clamped to the family range.
    fn bracket(&self, e: f64) -> (usize, f64) {
        let n = self.orbits.len();
        if n == 1 || e <= self.orbits[0].energy {
            return (0, 0.0);
        }
        if e >= self.orbits[n - 1].energy {
            return (n - 2, 1.0);
        }
        let i = self.orbits.partition_point(|o| o.energy <= e) - 1;
        let (e0, e1) = (self.orbits[i].energy, self.orbits[i + 1].energy);
        (i, (e - e0) / (e1 - e0))
    }

    fn interpolate<F: Fn(&BrakeOrbit) -> Vec2>(&self, e: f64, f: F) -> Vec2 {
        if self.orbits.len() == 1 {
            return f(&self.orbits[0]);
        }
        let (i, w) = self.bracket(e);
        (1.0 - w) * f(&self.orbits[i]) + w * f(&self.orbits[i + 1])
    }

    /// Turning point reached from the `+v_i` side, piecewise linear in energy.
    pub fn generator_plus(&self, e: f64) -> Vec2 {
        self.interpolate(e, |o| o.turn_a)
    }

    pub fn generator_minus(&self, e: f64) -> Vec2 {
        self.interpolate(e, |o| o.turn_b)
    }

    pub fn period_at(&self, e: f64) -> f64 {
        if self.orbits.len() == 1 {
            return self.orbits[0].period;
        }
        let (i, w) = self.bracket(e);
        (1.0 - w) * self.orbits[i].period + w * self.orbits[i + 1].period
    }

    /// Brake orbit at an arbitrary in-range energy, shot from node states
    /// interpolated between the two neighbouring stored orbits.
    pub fn orbit_at(&self, p: &PendulumParams, e: f64, opts: &ShootingOptions) -> Result<BrakeOrbit> {
        let (lo, hi) = self.energy_range();
        if !(lo..=hi).contains(&e) {
            return Err(Error::OutOfRange { energy: e, lo, hi });
        }
        if let Some(o) = self.orbits.iter().find(|o| o.energy == e) {
            return Ok(o.clone());
        }
        let (i, w) = self.bracket(e);
        let (a, b) = (&self.orbits[i], &self.orbits[i + 1]);
        if a.samples.len() != b.samples.len() || a.samples.len() < 3 {
            let half = 0.5 * self.period_at(e);
            return Ok(find_brake_orbit(p, self.generator_plus(e), half, e, opts)?.orbit);
        }
        let half = (1.0 - w) * a.half_period() + w * b.half_period();
        let grid = Grid::new(half, &ShootingOptions {
            samples_per_period: a.samples.len() - 1,
            ..*opts
        });
        let at = |idx: usize| (1.0 - w) * state4(&a.samples.samples[idx].state) + w * state4(&b.samples.samples[idx].state);
        let guess = NodeGuess {
            q_a: (1.0 - w) * a.turn_a + w * b.turn_a,
            half,
            interior: (1..grid.segments).map(|k| at(grid.node_sample(k))).collect(),
        };
        Ok(solve_nodes(p, &guess, &grid, e, opts)?.orbit)
    }
}

/// Continues the brake-orbit family of linear mode `mode_index` (1 or 2)
/// from near rest up to `ceiling` [J].
pub fn continue_mode(
    p: &PendulumParams,
    mode_index: usize,
    ceiling: f64,
    controls: &ContinuationControls,
) -> Result<ModeFamily> {
    if !(1..=2).contains(&mode_index) {
        return Err(Error::Invalid(format!("mode index must be 1 or 2, got {mode_index}")));
    }
    let e_max = max_potential(p);
    if !(ceiling < e_max) || !(ceiling > controls.start_energy) {
        return Err(Error::Invalid(format!(
            "ceiling {ceiling} J must lie in ({}, {e_max}) J",
            controls.start_energy
        )));
    }
    let modes = linear_modes(p)?;
    let (_, k0) = crate::dynamics::linearize(p)?;
    let v = modes.shape(mode_index);
    let e0 = controls.start_energy;
    let amp = (2.0 * e0 / v.dot(&(k0 * v))).sqrt();
    let first = find_brake_orbit(p, amp * v, 0.5 * modes.period(mode_index), e0, &controls.shooting)?;
    let mut orbits = vec![first.orbit];
    let mut step = controls.initial_step;

    while orbits.last().unwrap().energy < ceiling {
        let last = orbits.last().unwrap();
        let gap = e_max - last.energy;
        let step_now = step.min(controls.gap_fraction * gap);
        let target = (last.energy + step_now).min(ceiling);
        let (guess, grid) = predict(&orbits, target, e_max, &controls.shooting);
        match solve_nodes(p, &guess, &grid, target, &controls.shooting) {
            Ok(shot) if accept(&orbits, &shot.orbit) => {
                orbits.push(shot.orbit);
                if shot.iterations <= controls.easy_iterations {
                    step = (2.0 * step).min(controls.max_step);
                }
            }
            _ => {
                step = 0.5 * step_now;
                if step < controls.step_floor.min(controls.floor_gap_fraction * gap) {
                    let reached = orbits.last().unwrap().energy;
                    if reached < controls.required_energy.min(ceiling) {
                        return Err(Error::ContinuationStalled {
                            energy: reached,
                            floor: controls.step_floor,
                        });
                    }
                    break;
                }
            }
        }
    }
    Ok(ModeFamily { mode_index, orbits })
}

/// Secant predictor for the discretized half orbit. Near the upright saddle
/// the turning point is close to linear in `sqrt(E_max - E)`, so the secant
/// is taken in that coordinate; node states are extrapolated from the two
/// previous orbits at equal fractions of the half period. The first step
/// scales the linear-mode amplitude with `sqrt(E)`.
fn predict(orbits: &[BrakeOrbit], target: f64, e_max: f64, opts: &ShootingOptions) -> (NodeGuess, Grid) {
    let n = orbits.len();
    let last = &orbits[n - 1];
    let at = |o: &BrakeOrbit, idx: usize| state4(&o.samples.samples[idx].state);
    let (w, prev) = if n == 1 {
        (0.0, None)
    } else {
        let s = |e: f64| (e_max - e).sqrt();
        let prev = &orbits[n - 2];
        (
            (s(target) - s(last.energy)) / (s(last.energy) - s(prev.energy)),
            Some(prev),
        )
    };
    let extrapolate = |idx: usize| match prev {
        Some(o) => at(last, idx) + w * (at(last, idx) - at(o, idx)),
        None => at(last, idx) * (target / last.energy).sqrt(),
    };
    let half = match prev {
        Some(o) => last.half_period() + w * (last.half_period() - o.half_period()),
        None => last.half_period(),
    };
    let grid = Grid::new(half, opts);
    let q0 = extrapolate(0);
    let interior = (1..grid.segments).map(|k| extrapolate(grid.node_sample(k))).collect();
    (
        NodeGuess {
            q_a: Vec2::new(q0[0], q0[1]),
            half,
            interior,
        },
        grid,
    )
}

/// Largest allowed `‖turn_a + turn_b‖`: family orbits pass through rest
/// with odd symmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

/// Rejects a converged orbit that jumped to another branch.
fn accept(orbits: &[BrakeOrbit], candidate: &BrakeOrbit) -> bool {
    let last = orbits.last().unwrap();
    let jump = (candidate.turn_a - last.turn_a).norm();
    let dt_rel = (candidate.period - last.period).abs() / last.period;
    let symmetric = (candidate.turn_a + candidate.turn_b).norm() < SYMMETRY_TOLERANCE;
    jump < 0.5 && dt_rel < 0.5 && symmetric
}

/// Four multiplier magnitudes of one orbit, in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub energy: f64,
    pub magnitudes: [f64; 4],
    /// Raw eigenvalues as `(re, im)` pairs, same order as `magnitudes`.
    pub eigenvalues: [(f64, f64); 4],
    /// Determinant of the monodromy matrix.
    pub determinant: f64,
}

impl MultiplierRecord {
    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes[0]
    }

    /// Modulus of the product of the four eigenvalues.
    pub fn product_modulus(&self) -> f64 {
        self.eigenvalues
            .iter()
            .fold(Complex::new(1.0, 0.0), |acc, &(re, im)| acc * Complex::new(re, im))
            .norm()
    }

    /// Number of magnitudes within `tol` of one.
    pub fn unit_count(&self, tol: f64) -> usize {
        self.magnitudes.iter().filter(|m| (*m - 1.0).abs() <= tol).count()
    }

    /// Worst reciprocal pairing `min_j |λ_i λ_j - 1|` over all `i`.
    pub fn reciprocity_defect(&self) -> f64 {
        let ev: Vec<Complex<f64>> = self.eigenvalues.iter().map(|&(re, im)| Complex::new(re, im)).collect();
        (0..4)
            .map(|i| {
                (0..4)
                    .filter(|&j| j != i)
                    .map(|j| (ev[i] * ev[j] - 1.0).norm())
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
    }
}

/// Segments used when chaining the monodromy along an orbit.
pub const MONODROMY_SEGMENTS: usize = 40;

/// Flow Jacobians of consecutive pieces of one period from `turn_a`.
///
/// Each piece starts at a stored sample (the turning points exactly), so a
/// strongly unstable orbit is never integrated for longer than one piece.
pub fn monodromy_factors(p: &PendulumParams, orbit: &BrakeOrbit, dt: f64) -> Result<Vec<Matrix4<f64>>> {
    let n = orbit.samples.len() - 1;
    let segments = (1..=MONODROMY_SEGMENTS.min(n))
        .rev()
        .find(|k| n.is_multiple_of(*k) && (n / 2).is_multiple_of(n / k))
        .unwrap_or(1);
    let stride = n / segments;
    let seg_duration = orbit.period / segments as f64;
    (0..segments)
        .map(|k| {
            let start = if k == 0 {
                State::at_rest(orbit.turn_a)
            } else if k * stride == n / 2 {
                State::at_rest(orbit.turn_b)
            } else {
                orbit.samples.samples[k * stride].state
            };
            Ok(integrate::flow_jacobian(p, &start, seg_duration, dt)?.jac)
        })
        .collect()
}

/// Monodromy matrix of `orbit` over one period from `turn_a`: the ordered
/// product of [`monodromy_factors`].
pub fn monodromy(p: &PendulumParams, orbit: &BrakeOrbit, dt: f64) -> Result<Matrix4<f64>> {
    Ok(monodromy_factors(p, orbit, dt)?
        .iter()
        .fold(Matrix4::identity(), |acc, j| j * acc))
}

pub fn characteristic_multipliers(p: &PendulumParams, orbit: &BrakeOrbit) -> Result<MultiplierRecord> {
    let factors = monodromy_factors(p, orbit, SHOOTING_DT)?;
    Ok(multipliers_from_factors(orbit.energy, &factors))
}

/// Largest plain eigenvalue magnitude above which the spectrum is taken
/// from the periodic iteration instead.
const PLAIN_SPECTRUM_LIMIT: f64 = 10.0;

pub(crate) fn multipliers_from_factors(energy: f64, factors: &[Matrix4<f64>]) -> MultiplierRecord {
    let m = factors.iter().fold(Matrix4::identity(), |acc, j| j * acc);
    let determinant = factors.iter().map(|j| j.determinant()).product();
    let plain: Vec<Complex<f64>> = m.complex_eigenvalues().iter().cloned().collect();
    let ev = if plain.iter().any(|z| z.norm() > PLAIN_SPECTRUM_LIMIT) {
        periodic_spectrum(factors).unwrap_or(plain)
    } else {
        plain
    };
    record(energy, ev, determinant)
}

/// Spectrum of `J_{N-1} ⋯ J_0` by orthogonal iteration on the factors.
///
/// Converges when the dominant and the most contracting directions are real
/// and separated. Those two multipliers come out as products of the
/// triangular diagonals, so each keeps its own relative accuracy; the
/// middle pair is the spectrum of a well-scaled 2×2 block.
fn periodic_spectrum(factors: &[Matrix4<f64>]) -> Option<Vec<Complex<f64>>> {
    let mut q0 = Matrix4::<f64>::identity();
    for _ in 0..200 {
        let mut q = q0;
        let (mut log_lead, mut log_tail, mut log_mid) = (0.0f64, 0.0f64, 0.0f64);
        let mut mid = nalgebra::Matrix2::<f64>::identity();
        for j in factors {
            let qr = (j * q).qr();
            let (mut qn, mut r) = (qr.q(), qr.r());
            for i in 0..4 {
                if r[(i, i)] < 0.0 {
                    qn.column_mut(i).neg_mut();
                    r.row_mut(i).neg_mut();
                }
            }
            log_lead += r[(0, 0)].ln();
            log_tail += r[(3, 3)].ln();
            mid = r.fixed_view::<2, 2>(1, 1) * mid;
            let scale = mid.abs().max();
            mid /= scale;
            log_mid += scale.ln();
            q = qn;
        }
        let first = q0.column(0).dot(&q.column(0));
        let last = q0.column(3).dot(&q.column(3));
        if (first.abs() - 1.0).abs() < 1e-13 && (last.abs() - 1.0).abs() < 1e-13 {
            let d = q0.fixed_view::<4, 2>(0, 1).transpose() * q.fixed_view::<4, 2>(0, 1);
            let mut ev = vec![Complex::new(first.signum() * log_lead.exp(), 0.0)];
            ev.extend((d * mid).complex_eigenvalues().iter().map(|z| z * log_mid.exp()));
            ev.push(Complex::new(last.signum() * log_tail.exp(), 0.0));
            return Some(ev);
        }
        q0 = q;
    }
    None
}

fn record(energy: f64, mut ev: Vec<Complex<f64>>, determinant: f64) -> MultiplierRecord {
    ev.sort_by(|a, b| b.norm().total_cmp(&a.norm()));
    let mut magnitudes = [0.0; 4];
    let mut eigenvalues = [(0.0, 0.0); 4];
    for (i, z) in ev.iter().enumerate() {
        magnitudes[i] = z.norm();
        eigenvalues[i] = (z.re, z.im);
    }
    MultiplierRecord {
        energy,
        magnitudes,
        eigenvalues,
        determinant,
    }
}

/// Multipliers at `n` energies spread uniformly over the family's range,
/// evaluated in parallel.
pub fn multiplier_grid(p: &PendulumParams, family: &ModeFamily, n: usize, opts: &ShootingOptions) -> Result<Vec<MultiplierRecord>> {
    use rayon::prelude::*;
    if n < 2 {
        return Err(Error::Invalid(format!("multiplier grid needs at least 2 energies, got {n}")));
    }
    let (lo, hi) = family.energy_range();
    (0..n)
        .into_par_iter()
        .map(|k| {
            let e = if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
            characteristic_multipliers(p, &family.orbit_at(p, e, opts)?)
        })
        .collect()
}

/// Largest multiplier magnitude still counted as stable.
pub const INSTABILITY_THRESHOLD: f64 = 1.02;
/// Width of the final onset bracket [J].
pub const ONSET_RESOLUTION: f64 = 0.05;
/// Fewest grid energies [`instability_onset`] accepts.
pub const MIN_ONSET_GRID: usize = 50;

/// Energy at which the family first develops a multiplier with
/// `|λ| > 1.02`: the first unstable grid energy, refined by bisection
/// against its stable neighbour to [`ONSET_RESOLUTION`]. Returns the
/// midpoint of the final bracket.
pub fn instability_onset(p: &PendulumParams, family: &ModeFamily, grid: &[MultiplierRecord]) -> Result<f64> {
    if grid.len() < MIN_ONSET_GRID {
        return Err(Error::Invalid(format!(
            "onset needs at least {MIN_ONSET_GRID} grid energies, got {}",
            grid.len()
        )));
    }
    let mut sorted: Vec<&MultiplierRecord> = grid.iter().collect();
    sorted.sort_by(|a, b| a.energy.total_cmp(&b.energy));
    let first = sorted
        .iter()
        .position(|r| r.max_magnitude() > INSTABILITY_THRESHOLD)
        .ok_or(Error::NeverUnstable)?;
    if first == 0 {
        return Ok(sorted[0].energy);
    }
    let (mut lo, mut hi) = (sorted[first - 1].energy, sorted[first].energy);
    let opts = ShootingOptions::default();
    while hi - lo > ONSET_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        let record = characteristic_multipliers(p, &family.orbit_at(p, mid, &opts)?)?;
        if record.max_magnitude() > INSTABILITY_THRESHOLD {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Whether a turning point can be held by motors of strength `tau_max`:
/// gravity within the limit on every joint and the first link at or past
/// the horizontal.
pub fn holdable(p: &PendulumParams, q: &Vec2, tau_max: f64) -> bool {
    gravity(p, q).amax() <= tau_max && q[0] >= std::f64::consts::FRAC_PI_2
}

/// Relative energy resolution of the critical-energy bisection.
const CRITICAL_RESOLUTION: f64 = 1e-13;

/// Smallest energy `E_crit` on the family whose turning point `q_crit`
/// (on the generator with `q1 > 0`) satisfies [`holdable`].
///
/// Stored orbits are scanned upwards for the first holdable turning point,
/// then the piecewise-linear generator is bisected against the stored orbit
/// below it.
pub fn critical_energy(p: &PendulumParams, family: &ModeFamily, tau_max: f64) -> Result<(f64, Vec2)> {
    if !(tau_max > 0.0) {
        return Err(Error::Invalid(format!("torque limit must be positive, got {tau_max}")));
    }
    let flip = if family.top().turn_a[0] >= 0.0 { 1.0 } else { -1.0 };
    let generator = |e: f64| flip * family.generator_plus(e);
    let first = family
        .orbits
        .iter()
        .position(|o| holdable(p, &(flip * o.turn_a), tau_max))
        .ok_or(Error::Unreachable {
            tau_max,
            top_energy: family.top().energy,
        })?;
    if first == 0 {
        let e = family.orbits[0].energy;
        return Ok((e, generator(e)));
    }
    let (mut lo, mut hi) = (family.orbits[first - 1].energy, family.orbits[first].energy);
    while hi - lo > CRITICAL_RESOLUTION * hi {
        let mid = 0.5 * (lo + hi);
        if holdable(p, &generator(mid), tau_max) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((hi, generator(hi)))
}

/// Version tag written into family files.
pub const FAMILY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct OrbitEntry {
    energy: f64,
    period: f64,
    turn_a: Vec2,
    turn_b: Vec2,
    continuity_defect: f64,
    samples_ref: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct FamilyFile {
    schema_version: u32,
    mode_index: usize,
    orbits: Vec<OrbitEntry>,
}

impl ModeFamily {
    /// Writes `family.json` into `dir` with one sample CSV per orbit next to
    /// it. Returns the path of the JSON file.
    pub fn save(&self, dir: &std::path::Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.orbits.len());
        for (i, o) in self.orbits.iter().enumerate() {
            let name = format!("mode{}_orbit_{i:04}.csv", self.mode_index);
            o.samples.save_csv(&dir.join(&name))?;
            entries.push(OrbitEntry {
                energy: o.energy,
                period: o.period,
                turn_a: o.turn_a,
                turn_b: o.turn_b,
                continuity_defect: o.continuity_defect,
                samples_ref: name,
            });
        }
        let file = FamilyFile {
            schema_version: FAMILY_SCHEMA_VERSION,
            mode_index: self.mode_index,
            orbits: entries,
        };
        let path = dir.join(format!("mode{}_family.json", self.mode_index));
        let text = serde_json::to_string_pretty(&file).map_err(|e| Error::format(&path, e.to_string()))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a family written by [`ModeFamily::save`]; sample files are
    /// resolved relative to the JSON file.
    pub fn load(path: &std::path::Path) -> Result<ModeFamily> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: FamilyFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.schema_version != FAMILY_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: file.schema_version,
                expected: FAMILY_SCHEMA_VERSION,
            });
        }
        let dir = path.parent().unwrap_or_else(|| std::path::Path::new("."));
        let orbits = file
            .orbits
            .into_iter()
            .map(|e| {
                Ok(BrakeOrbit {
                    energy: e.energy,
                    turn_a: e.turn_a,
                    turn_b: e.turn_b,
                    period: e.period,
                    continuity_defect: e.continuity_defect,
                    samples: Trajectory::load_csv(&dir.join(&e.samples_ref))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if orbits.is_empty() {
            return Err(Error::format(path, "family has no orbits"));
        }
        Ok(ModeFamily {
            mode_index: file.mode_index,
            orbits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::linear_modes;

    #[test]
    fn low_energy_orbit_matches_linear_period() {
        let p = PendulumParams::default();
        let modes = linear_modes(&p).unwrap();
        for mode in 1..=2 {
            let v = modes.shape(mode);
            let (_, k) = crate::dynamics::linearize(&p).unwrap();
            let e = 1e-4;
            let amp = (2.0 * e / v.dot(&(k * v))).sqrt();
            let shot = find_brake_orbit(&p, amp * v, modes.period(mode) / 2.0, e, &ShootingOptions::default()).unwrap();
            let rel = (shot.orbit.period - modes.period(mode)).abs() / modes.period(mode);
            assert!(rel < 5e-3, "mode {mode}: {rel}");
            let r = shot.orbit.report(&p);
            assert!(r.closure < 1e-6 && r.turning_speed < 1e-8 && r.energy_mismatch < 1e-8);
            assert_eq!(r.turning_points, 2);
        }
    }
}
