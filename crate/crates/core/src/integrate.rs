//! Fixed-step RK4 integration of the pendulum flow and its variational
//! equations.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{forward_dynamics, forward_dynamics_jacobian, PendulumParams, State, Vec2};
use crate::error::{Error, Result};

/// Step used by closed-loop simulation [s].
pub const CONTROL_DT: f64 = 1e-3;
/// Step used by shooting and continuation [s].
pub const SHOOTING_DT: f64 = 2.5e-4;

pub const TRAJECTORY_CSV_HEADER: [&str; 7] = ["t", "q1", "q2", "qd1", "qd2", "tau1", "tau2"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub state: State,
    pub tau: Vec2,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn first(&self) -> &Sample {
        &self.samples[0]
    }

    pub fn last(&self) -> &Sample {
        &self.samples[self.samples.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.last().t - self.first().t
    }

    pub fn states(&self) -> impl Iterator<Item = &State> + '_ {
        self.samples.iter().map(|s| &s.state)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRAJECTORY_CSV_HEADER)?;
        for s in &self.samples {
            let row = [s.t, s.state.q[0], s.state.q[1], s.state.qd[0], s.state.qd[1], s.tau[0], s.tau[1]];
            w.write_record(row.iter().map(|x| format!("{x:.16e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trajectory written by [`Trajectory::write_csv`]. The step is
    /// recovered from the first two timestamps.
    pub fn read_csv<R: Read>(reader: R) -> std::result::Result<Self, String> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers().map_err(|e| e.to_string())?.clone();
        if header.iter().ne(TRAJECTORY_CSV_HEADER.iter().copied()) {
            return Err(format!("unexpected header {header:?}"));
        }
        let mut samples = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            let v: Vec<f64> = rec
                .iter()
                .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
                .collect::<std::result::Result<_, _>>()?;
            if v.len() != 7 {
                return Err(format!("expected 7 columns, got {}", v.len()));
            }
            samples.push(Sample {
                t: v[0],
                state: State::new([v[1], v[2]], [v[3], v[4]]),
                tau: Vec2::new(v[5], v[6]),
            });
        }
        if samples.is_empty() {
            return Err("trajectory has no samples".into());
        }
        let dt = if samples.len() > 1 { samples[1].t - samples[0].t } else { 0.0 };
        Ok(Trajectory { dt, samples })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::format(path, e))
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file)).map_err(|e| Error::format(path, e))
    }
}

/// Flow Jacobian `∂x(T)/∂x(0)` with `x = (q, q̇)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowJacobian {
    pub end_state: State,
    pub jac: Matrix4<f64>,
}

fn vector_field(p: &PendulumParams, x: &Vector4<f64>, tau: &Vec2) -> Vector4<f64> {
    let s = State::new([x[0], x[1]], [x[2], x[3]]);
    let qdd = forward_dynamics(p, &s, tau);
    Vector4::new(x[2], x[3], qdd[0], qdd[1])
}

fn field_jacobian(p: &PendulumParams, x: &Vector4<f64>) -> Matrix4<f64> {
    let s = State::new([x[0], x[1]], [x[2], x[3]]);
    let (dq, dqd) = forward_dynamics_jacobian(p, &s, &Vec2::zeros());
    let mut a = Matrix4::zeros();
    a[(0, 2)] = 1.0;
    a[(1, 3)] = 1.0;
    a.fixed_view_mut::<2, 2>(2, 0).copy_from(&dq);
    a.fixed_view_mut::<2, 2>(2, 2).copy_from(&dqd);
    a
}

fn to_vec4(s: &State) -> Vector4<f64> {
    Vector4::new(s.q[0], s.q[1], s.qd[0], s.qd[1])
}

fn from_vec4(x: &Vector4<f64>) -> State {
    State::new([x[0], x[1]], [x[2], x[3]])
}

/// One classical RK4 step with the torque held constant over the step.
pub fn step(p: &PendulumParams, s: &State, tau: &Vec2, dt: f64) -> State {
    let x = to_vec4(s);
    let k1 = vector_field(p, &x, tau);
    let k2 = vector_field(p, &(x + 0.5 * dt * k1), tau);
    let k3 = vector_field(p, &(x + 0.5 * dt * k2), tau);
    let k4 = vector_field(p, &(x + dt * k3), tau);
    from_vec4(&(x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)))
}

/// Number of steps covering `duration` with a step no larger than `dt`.
pub(crate) fn step_count(duration: f64, dt: f64) -> usize {
    let n = (duration / dt - 1e-9).ceil();
    if n < 0.0 {
        0
    } else {
        n as usize
    }
}

/// Integrates under a state feedback policy, recording every step.
///
/// `policy` is called with `(t, state)` at the start of each step and its
/// output is held for the step.
pub fn flow<F>(p: &PendulumParams, s0: &State, mut policy: F, duration: f64, dt: f64) -> Result<Trajectory>
where
    F: FnMut(f64, &State) -> Vec2,
{
    if !(dt > 0.0) || !(duration >= 0.0) {
        return Err(Error::Invalid(format!("flow needs dt > 0 and duration >= 0, got dt = {dt}, duration = {duration}")));
    }
    let n = (duration / dt).round() as usize;
    let mut samples = Vec::with_capacity(n + 1);
    let mut s = *s0;
    for k in 0..n {
        let t = k as f64 * dt;
        let tau = policy(t, &s);
        samples.push(Sample { t, state: s, tau });
        s = step(p, &s, &tau, dt);
        if !s.is_finite() {
            return Err(Error::Blowup { t: (k + 1) as f64 * dt });
        }
    }
    let t = n as f64 * dt;
    let tau = policy(t, &s);
    samples.push(Sample { t, state: s, tau });
    Ok(Trajectory { dt, samples })
}

/// Torque-free flow together with the variational equations.
///
/// The duration is split into the smallest number of equal steps not larger
/// than `dt`.
pub fn flow_jacobian(p: &PendulumParams, s0: &State, duration: f64, dt: f64) -> Result<FlowJacobian> {
    let n = step_count(duration, dt);
    let h = if n == 0 { 0.0 } else { duration / n as f64 };
    variational_steps(p, s0, n, h, 0, |_, _| {})
}

/// Runs `n` variational RK4 steps of size `h`. Every `record_every` steps
/// (and at step 0) the visitor receives `(step index, state)`; zero disables
/// recording.
pub(crate) fn variational_steps<V>(
    p: &PendulumParams,
    s0: &State,
    n: usize,
    h: f64,
    record_every: usize,
    mut visit: V,
) -> Result<FlowJacobian>
where
    V: FnMut(usize, &State),
{
    let zero = Vec2::zeros();
    let mut x = to_vec4(s0);
    let mut phi = Matrix4::<f64>::identity();
    if record_every > 0 {
        visit(0, s0);
    }
    for k in 0..n {
        let a1 = field_jacobian(p, &x);
        let k1 = vector_field(p, &x, &zero);
        let p1 = a1 * phi;

        let x2 = x + 0.5 * h * k1;
        let k2 = vector_field(p, &x2, &zero);
        let p2 = field_jacobian(p, &x2) * (phi + 0.5 * h * p1);

        let x3 = x + 0.5 * h * k2;
        let k3 = vector_field(p, &x3, &zero);
        let p3 = field_jacobian(p, &x3) * (phi + 0.5 * h * p2);

        let x4 = x + h * k3;
        let k4 = vector_field(p, &x4, &zero);
        let p4 = field_jacobian(p, &x4) * (phi + h * p3);

        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        phi += h / 6.0 * (p1 + 2.0 * p2 + 2.0 * p3 + p4);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Blowup { t: (k + 1) as f64 * h });
        }
        if record_every > 0 && (k + 1) % record_every == 0 {
            visit(k + 1, &from_vec4(&x));
        }
    }
    Ok(FlowJacobian {
        end_state: from_vec4(&x),
        jac: phi,
    })
}

/// Torque-free end state after `n` RK4 steps of size `h`.
pub(crate) fn free_steps(p: &PendulumParams, s0: &State, n: usize, h: f64) -> State {
    let zero = Vec2::zeros();
    let mut s = *s0;
    for _ in 0..n {
        s = step(p, &s, &zero, h);
    }
    s
}
