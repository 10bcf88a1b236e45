//! Rigid-body model of the thin-rod double pendulum.
//!
//! Joint angles are measured from the hanging configuration: `q1` is the
//! absolute angle of the first link, `q2` the relative angle of the second
//! link. The stable equilibrium is `q = (0, 0)` and the upright
//! configuration is `q = (π, 0)`. The equations of motion are
//!
//! ```text
//! M(q) q̈ + c(q, q̇) + g(q) = τ
//! ```
//!
//! with `g = ∂V/∂q`. Both links are uniform rods whose centre of mass sits at
//! mid-link; the rotational inertia about the centre of mass is taken from the
//! parameter set as given rather than derived from the rod formula.

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Reference configuration for the upright (unstable) equilibrium.
pub const Q_UPRIGHT: [f64; 2] = [std::f64::consts::PI, 0.0];

/// Physical constants of the double pendulum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// Link lengths [m].
    pub l1: f64,
    pub l2: f64,
    /// Link masses [kg].
    pub m1: f64,
    pub m2: f64,
    /// Gravitational acceleration [m/s²].
    pub grav: f64,
    /// Rotational inertia of each link about its centre of mass [kg·m²].
    pub i1: f64,
    pub i2: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            l1: 0.5,
            l2: 0.5,
            m1: 0.66183,
            m2: 0.66183,
            grav: 9.81,
            i1: 0.0153,
            i2: 0.0153,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("m1", self.m1),
            ("m2", self.m2),
            ("grav", self.grav),
            ("i1", self.i1),
            ("i2", self.i2),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Invalid(format!(
                    "pendulum parameter {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    fn lc1(&self) -> f64 {
        0.5 * self.l1
    }

    fn lc2(&self) -> f64 {
        0.5 * self.l2
    }

    /// Constant part of `M11`, the `cos q2` coupling coefficient and `M22`.
    fn inertia_coefficients(&self) -> (f64, f64, f64) {
        let lc1 = self.lc1();
        let lc2 = self.lc2();
        let a1 = self.i1 + self.i2 + self.m1 * lc1 * lc1 + self.m2 * (self.l1 * self.l1 + lc2 * lc2);
        let a2 = self.m2 * self.l1 * lc2;
        let a3 = self.i2 + self.m2 * lc2 * lc2;
        (a1, a2, a3)
    }

    /// Gravity moments `(m1 lc1 + m2 l1) g` and `m2 lc2 g`.
    fn gravity_coefficients(&self) -> (f64, f64) {
        (
            (self.m1 * self.lc1() + self.m2 * self.l1) * self.grav,
            self.m2 * self.lc2() * self.grav,
        )
    }
}

/// Joint angles and velocities. Angles are unwrapped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec2,
    pub qd: Vec2,
}

impl State {
    pub fn new(q: [f64; 2], qd: [f64; 2]) -> Self {
        State {
            q: Vec2::new(q[0], q[1]),
            qd: Vec2::new(qd[0], qd[1]),
        }
    }

    pub fn at_rest(q: Vec2) -> Self {
        State { q, qd: Vec2::zeros() }
    }

    pub fn equilibrium() -> Self {
        State::at_rest(Vec2::zeros())
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|x| x.is_finite())
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.q[0], self.q[1], self.qd[0], self.qd[1]]
    }

    pub fn from_array(x: [f64; 4]) -> Self {
        State::new([x[0], x[1]], [x[2], x[3]])
    }
}

/// Natural frequencies and mode shapes of the system linearized at rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearModes {
    /// Ascending natural frequencies [rad/s].
    pub omega: [f64; 2],
    /// Unit mode shapes, first nonzero component positive.
    pub shapes: [Vec2; 2],
}

impl LinearModes {
    pub fn shape(&self, mode_index: usize) -> Vec2 {
        self.shapes[mode_index - 1]
    }

    pub fn frequency(&self, mode_index: usize) -> f64 {
        self.omega[mode_index - 1]
    }

    pub fn period(&self, mode_index: usize) -> f64 {
        2.0 * std::f64::consts::PI / self.frequency(mode_index)
    }
}

pub fn mass_matrix(p: &PendulumParams, q: &Vec2) -> Mat2 {
    let (a1, a2, a3) = p.inertia_coefficients();
    let c2 = q[1].cos();
    let off = a3 + a2 * c2;
    Mat2::new(a1 + 2.0 * a2 * c2, off, off, a3)
}

/// Coriolis and centrifugal torques, written from Christoffel symbols of the
/// first kind.
pub fn coriolis(p: &PendulumParams, q: &Vec2, qd: &Vec2) -> Vec2 {
    let (_, a2, _) = p.inertia_coefficients();
    let h = a2 * q[1].sin();
    Vec2::new(-h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]), h * qd[0] * qd[0])
}

/// Gradient of the potential, the gravity term of the equations of motion.
pub fn gravity(p: &PendulumParams, q: &Vec2) -> Vec2 {
    let (b1, b2) = p.gravity_coefficients();
    let s12 = (q[0] + q[1]).sin();
    Vec2::new(b1 * q[0].sin() + b2 * s12, b2 * s12)
}

/// Generalized gravitational force acting on the joints, `-∂V/∂q`.
pub fn gravity_force(p: &PendulumParams, q: &Vec2) -> Vec2 {
    -gravity(p, q)
}

/// Potential energy, zero at the hanging equilibrium.
pub fn potential(p: &PendulumParams, q: &Vec2) -> f64 {
    let (b1, b2) = p.gravity_coefficients();
    b1 * (1.0 - q[0].cos()) + b2 * (1.0 - (q[0] + q[1]).cos())
}

/// Largest potential energy, attained upright.
pub fn max_potential(p: &PendulumParams) -> f64 {
    let (b1, b2) = p.gravity_coefficients();
    2.0 * (b1 + b2)
}

pub fn kinetic_energy(p: &PendulumParams, s: &State) -> f64 {
    0.5 * s.qd.dot(&(mass_matrix(p, &s.q) * s.qd))
}

pub fn energy(p: &PendulumParams, s: &State) -> f64 {
    kinetic_energy(p, s) + potential(p, &s.q)
}

pub fn forward_dynamics(p: &PendulumParams, s: &State, tau: &Vec2) -> Vec2 {
    let m = mass_matrix(p, &s.q);
    let rhs = tau - coriolis(p, &s.q, &s.qd) - gravity(p, &s.q);
    solve_spd(&m, &rhs)
}

/// Partial derivatives of the accelerations with respect to angles and
/// velocities, `(∂q̈/∂q, ∂q̈/∂q̇)`, for a fixed torque.
pub fn forward_dynamics_jacobian(p: &PendulumParams, s: &State, tau: &Vec2) -> (Mat2, Mat2) {
    let (_, a2, _) = p.inertia_coefficients();
    let (b1, b2) = p.gravity_coefficients();
    let (s2, c2) = s.q[1].sin_cos();
    let c1 = s.q[0].cos();
    let c12 = (s.q[0] + s.q[1]).cos();
    let (w1, w2) = (s.qd[0], s.qd[1]);

    let m = mass_matrix(p, &s.q);
    let minv = inverse_2x2(&m);
    let qdd = minv * (tau - coriolis(p, &s.q, &s.qd) - gravity(p, &s.q));

    let dm_dq2 = Mat2::new(-2.0 * a2 * s2, -a2 * s2, -a2 * s2, 0.0);
    let dc_dq2 = Vec2::new(-a2 * c2 * (2.0 * w1 * w2 + w2 * w2), a2 * c2 * w1 * w1);
    let dg_dq = Mat2::new(b1 * c1 + b2 * c12, b2 * c12, b2 * c12, b2 * c12);

    let mut rhs_q = -dg_dq;
    let col2 = -(dm_dq2 * qdd) - dc_dq2;
    rhs_q[(0, 1)] += col2[0];
    rhs_q[(1, 1)] += col2[1];

    let dc_dqd = Mat2::new(
        -2.0 * a2 * s2 * w2,
        -2.0 * a2 * s2 * (w1 + w2),
        2.0 * a2 * s2 * w1,
        0.0,
    );
    (minv * rhs_q, -(minv * dc_dqd))
}

/// Mass matrix and potential Hessian at the hanging equilibrium.
pub fn linearize(p: &PendulumParams) -> Result<(Mat2, Mat2)> {
    let m0 = mass_matrix(p, &Vec2::zeros());
    let (b1, b2) = p.gravity_coefficients();
    let k0 = Mat2::new(b1 + b2, b2, b2, b2);
    let min_eig = SymmetricEigen::new(k0).eigenvalues.min();
    if !(min_eig > 1e-8) {
        return Err(Error::StiffnessNotSpd {
            min_eigenvalue: min_eig,
        });
    }
    Ok((m0, k0))
}

/// Solves `K v = ω² M v` through the Cholesky factor of `M`.
pub fn linear_modes(p: &PendulumParams) -> Result<LinearModes> {
    let (m0, k0) = linearize(p)?;
    let chol = m0
        .cholesky()
        .ok_or_else(|| Error::Invalid("mass matrix is not positive-definite".into()))?;
    let l_inv = chol
        .l()
        .try_inverse()
        .ok_or_else(|| Error::Invalid("singular Cholesky factor".into()))?;
    let reduced = l_inv * k0 * l_inv.transpose();
    let reduced = 0.5 * (reduced + reduced.transpose());
    let eig = SymmetricEigen::new(reduced);

    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let mut omega = [0.0; 2];
    let mut shapes = [Vec2::zeros(); 2];
    for (slot, &idx) in order.iter().enumerate() {
        omega[slot] = eig.eigenvalues[idx].sqrt();
        let mut v = l_inv.transpose() * eig.eigenvectors.column(idx);
        v /= v.norm();
        let lead = if v[0].abs() > 1e-14 { v[0] } else { v[1] };
        if lead < 0.0 {
            v = -v;
        }
        shapes[slot] = v;
    }
    Ok(LinearModes { omega, shapes })
}

pub(crate) fn inverse_2x2(m: &Mat2) -> Mat2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det
}

pub(crate) fn solve_spd(m: &Mat2, rhs: &Vec2) -> Vec2 {
    inverse_2x2(m) * rhs
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(x: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Per-joint wrapped difference `a - b`.
pub fn wrap_diff(a: &Vec2, b: &Vec2) -> Vec2 {
    Vec2::new(wrap_angle(a[0] - b[0]), wrap_angle(a[1] - b[1]))
}

/// Euclidean norm of the per-joint wrapped difference.
pub fn wrap_distance(a: &Vec2, b: &Vec2) -> f64 {
    wrap_diff(a, b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// Kinetic energy built from Cartesian centre-of-mass velocities.
    fn kinetic_from_cartesian(p: &PendulumParams, q: &Vec2, qd: &Vec2) -> f64 {
        let (lc1, lc2) = (p.l1 / 2.0, p.l2 / 2.0);
        let v1 = [lc1 * q[0].cos() * qd[0], lc1 * q[0].sin() * qd[0]];
        let w12 = qd[0] + qd[1];
        let v2 = [
            p.l1 * q[0].cos() * qd[0] + lc2 * (q[0] + q[1]).cos() * w12,
            p.l1 * q[0].sin() * qd[0] + lc2 * (q[0] + q[1]).sin() * w12,
        ];
        0.5 * p.m1 * (v1[0] * v1[0] + v1[1] * v1[1])
            + 0.5 * p.i1 * qd[0] * qd[0]
            + 0.5 * p.m2 * (v2[0] * v2[0] + v2[1] * v2[1])
            + 0.5 * p.i2 * w12 * w12
    }

    fn mass_from_cartesian(p: &PendulumParams, q: &Vec2) -> Mat2 {
        let e = [Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)];
        let mut m = Mat2::zeros();
        for i in 0..2 {
            for j in 0..2 {
                let both = kinetic_from_cartesian(p, q, &(e[i] + e[j]));
                m[(i, j)] = both - kinetic_from_cartesian(p, q, &e[i]) - kinetic_from_cartesian(p, q, &e[j]);
            }
        }
        m
    }

    #[test]
    fn mass_matrix_matches_cartesian_kinetic_energy() {
        let p = PendulumParams::default();
        for q in [Vec2::zeros(), Vec2::new(0.3, 0.7), Vec2::new(-2.0, 2.9)] {
            let m = mass_matrix(&p, &q);
            let oracle = mass_from_cartesian(&p, &q);
            assert!((m - oracle).abs().max() < 1e-12, "{m} vs {oracle}");
        }
        let m = mass_matrix(&p, &Vec2::new(0.3, 0.7));
        assert_eq!(m[(0, 1)], m[(1, 0)]);
    }

    #[test]
    fn anchors_from_parameter_table() {
        let p = PendulumParams::default();
        assert!((potential(&p, &Vec2::new(PI, 0.0)) - 12.985).abs() < 1e-3);
        assert!((max_potential(&p) - potential(&p, &Vec2::new(PI, 0.0))).abs() < 1e-12);
        let g = gravity(&p, &Vec2::new(PI / 2.0, 0.0));
        assert!((g[0] - 6.49).abs() < 0.01 && (g[1] - 1.62).abs() < 0.01);
        let f = gravity_force(&p, &Vec2::new(PI / 2.0, 0.0));
        assert!((f[0] + 6.49).abs() < 0.01 && (f[1] + 1.62).abs() < 0.01);
        assert!(gravity(&p, &Vec2::new(PI, 0.0)).norm() < 1e-12);
        assert_eq!(gravity(&p, &Vec2::zeros()), Vec2::zeros());
        assert_eq!(potential(&p, &Vec2::zeros()), 0.0);
    }

    #[test]
    fn potential_maximum_is_upright() {
        let p = PendulumParams::default();
        let n = 360;
        let mut best = (f64::MIN, Vec2::zeros());
        for i in 0..n {
            for j in 0..n {
                let q = Vec2::new(
                    -PI + 2.0 * PI * i as f64 / n as f64,
                    -PI + 2.0 * PI * j as f64 / n as f64,
                );
                let v = potential(&p, &q);
                if v > best.0 {
                    best = (v, q);
                }
            }
        }
        assert!(wrap_distance(&best.1, &Vec2::new(PI, 0.0)) < 1e-9);
    }

    #[test]
    fn equilibria_have_zero_acceleration() {
        let p = PendulumParams::default();
        let z = Vec2::zeros();
        assert_eq!(forward_dynamics(&p, &State::equilibrium(), &z), z);
        let up = forward_dynamics(&p, &State::new([PI, 0.0], [0.0, 0.0]), &z);
        assert!(up.norm() < 1e-12);
        assert_eq!(coriolis(&p, &Vec2::new(1.0, 2.0), &z), z);
    }

    #[test]
    fn linear_modes_match_characteristic_polynomial() {
        let p = PendulumParams::default();
        let (m, k) = linearize(&p).unwrap();
        assert_eq!(k[(0, 1)], k[(1, 0)]);
        // det(K - λM) = aλ² + bλ + c
        let a = m.determinant();
        let b = -(k[(0, 0)] * m[(1, 1)] + k[(1, 1)] * m[(0, 0)] - 2.0 * k[(0, 1)] * m[(0, 1)]);
        let c = k.determinant();
        let disc = (b * b - 4.0 * a * c).sqrt();
        let lam = [(-b - disc) / (2.0 * a), (-b + disc) / (2.0 * a)];
        let modes = linear_modes(&p).unwrap();
        for i in 0..2 {
            assert_relative_eq!(modes.omega[i], lam[i].sqrt(), max_relative = 1e-8);
            let v = modes.shapes[i];
            let r = (k - modes.omega[i].powi(2) * m) * v;
            assert!(r.norm() < 1e-10);
            assert_relative_eq!(v.norm(), 1.0, epsilon = 1e-14);
            assert!(v[0] > 0.0);
        }
        assert!(modes.omega[0] < modes.omega[1]);
    }

    #[test]
    fn stiffness_check_rejects_bad_model() {
        let p = PendulumParams {
            grav: -9.81,
            ..Default::default()
        };
        assert!(matches!(linearize(&p), Err(Error::StiffnessNotSpd { .. })));
        assert!(p.validate().is_err());
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        let p = PendulumParams::default();
        let s = State::new([0.3, 0.7], [1.0, -0.5]);
        let tau = Vec2::new(0.1, -0.2);
        let (dq, dqd) = forward_dynamics_jacobian(&p, &s, &tau);
        let h = 1e-6;
        for k in 0..4 {
            let mut plus = s.to_array();
            let mut minus = s.to_array();
            plus[k] += h;
            minus[k] -= h;
            let fd = (forward_dynamics(&p, &State::from_array(plus), &tau)
                - forward_dynamics(&p, &State::from_array(minus), &tau))
                / (2.0 * h);
            let col = if k < 2 { dq.column(k).into_owned() } else { dqd.column(k - 2).into_owned() };
            assert!((fd - col).norm() < 1e-7, "column {k}: {fd} vs {col}");
        }
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }

    fn angles() -> impl Strategy<Value = Vec2> {
        (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(a, b)| Vec2::new(a, b))
    }

    proptest! {
        #[test]
        fn mass_matrix_spd_and_base_invariant(q in angles(), q1b in -10.0..10.0f64) {
            let p = PendulumParams::default();
            let m = mass_matrix(&p, &q);
            prop_assert_eq!(m[(0, 1)], m[(1, 0)]);
            prop_assert!(SymmetricEigen::new(m).eigenvalues.min() > 0.0);
            prop_assert_eq!(m, mass_matrix(&p, &Vec2::new(q1b, q[1])));
            prop_assert!((m - mass_matrix(&p, &(-q))).abs().max() < 1e-15);
        }

        #[test]
        fn gravity_is_potential_gradient(q in angles()) {
            let p = PendulumParams::default();
            let h = 1e-6;
            let g = gravity(&p, &q);
            for k in 0..2 {
                let mut e = Vec2::zeros();
                e[k] = h;
                let fd = (potential(&p, &(q + e)) - potential(&p, &(q - e))) / (2.0 * h);
                prop_assert!((fd - g[k]).abs() < 1e-6);
            }
            prop_assert!((potential(&p, &q) - potential(&p, &(-q))).abs() < 1e-12);
            prop_assert!((gravity(&p, &(-q)) + g).norm() < 1e-12);
        }

        #[test]
        fn coriolis_homogeneous_and_power_neutral(q in angles(), w in angles()) {
            let p = PendulumParams::default();
            let c = coriolis(&p, &q, &w);
            let c2 = coriolis(&p, &q, &(2.0 * w));
            prop_assert!((c2 - 4.0 * c).norm() <= 1e-9 * (1.0 + c.norm()));
            // q̇ᵀ(Ṁ q̇ − 2c) = 0
            let (_, a2, _) = p.inertia_coefficients();
            let s2 = q[1].sin();
            let mdot = Mat2::new(-2.0 * a2 * s2, -a2 * s2, -a2 * s2, 0.0) * w[1];
            let skew = w.dot(&(mdot * w - 2.0 * c));
            prop_assert!(skew.abs() <= 1e-9 * (1.0 + w.norm_squared()));
        }

        #[test]
        fn forward_dynamics_residual(q in angles(), w in angles(), t1 in -5.0..5.0f64, t2 in -5.0..5.0f64) {
            let p = PendulumParams::default();
            let s = State { q, qd: w };
            let tau = Vec2::new(t1, t2);
            let qdd = forward_dynamics(&p, &s, &tau);
            let r = mass_matrix(&p, &q) * qdd + coriolis(&p, &q, &w) + gravity(&p, &q) - tau;
            prop_assert!(r.norm() < 1e-10);
            prop_assert!(kinetic_energy(&p, &s) >= 0.0);
            prop_assert!(energy(&p, &s) >= potential(&p, &q));
        }
    }
}
