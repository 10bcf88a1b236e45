mod common;

use std::f64::consts::PI;

use eigenswing::dynamics::{gravity, linear_modes, max_potential, wrap_angle, PendulumParams, Vec2};
use eigenswing::integrate::{flow, SHOOTING_DT};
use eigenswing::modal::*;
use eigenswing::Error;

use common::family;

fn params() -> PendulumParams {
    PendulumParams::default()
}

#[test]
fn every_orbit_is_a_closed_brake_orbit() {
    let p = params();
    for mode in 1..=2 {
        for o in &family(mode).orbits {
            let r = o.report(&p);
            assert!(r.closure < 1e-6, "mode {mode} E {}: closure {}", o.energy, r.closure);
            assert!(r.turning_speed < 1e-8, "mode {mode} E {}: speed {}", o.energy, r.turning_speed);
            assert!(r.energy_mismatch < 1e-8, "mode {mode} E {}", o.energy);
            assert_eq!(r.turning_points, 2, "mode {mode} E {}", o.energy);
        }
    }
}

#[test]
fn families_span_the_energy_range() {
    for mode in 1..=2 {
        let f = family(mode);
        assert_eq!(f.mode_index, mode);
        let e = f.energies();
        assert!(e.windows(2).all(|w| w[1] > w[0]));
        assert!(e[0] < 1e-3);
        assert!(*e.last().unwrap() >= 12.9);
    }
}

#[test]
fn generators_are_odd_symmetric() {
    for mode in 1..=2 {
        for o in &family(mode).orbits {
            let f = family(mode);
            let d = (f.generator_plus(o.energy) + f.generator_minus(o.energy)).norm();
            assert!(d < 1e-6, "mode {mode} E {}: {d}", o.energy);
        }
    }
}

#[test]
fn low_energy_generators_follow_the_linear_modes() {
    let modes = linear_modes(&params()).unwrap();
    for mode in 1..=2 {
        let f = family(mode);
        let first = &f.orbits[0];
        let chord = first.turn_a - first.turn_b;
        let cos = chord.dot(&modes.shape(mode)).abs() / chord.norm();
        assert!(cos.min(1.0).acos().to_degrees() < 1.0, "mode {mode}");
        let rel = (first.period - modes.period(mode)).abs() / modes.period(mode);
        assert!(rel < 5e-3, "mode {mode}: {rel}");
    }
    assert!(family(2).orbits[0].period < family(1).orbits[0].period);
}

#[test]
fn period_grows_towards_the_top() {
    for mode in 1..=2 {
        let f = family(mode);
        let above: Vec<f64> = f.orbits.iter().filter(|o| o.energy > 0.5).map(|o| o.period).collect();
        assert!(above.windows(2).all(|w| w[1] >= w[0]), "mode {mode}");
        let (lo, hi) = f.energy_range();
        let top: Vec<f64> = f
            .orbits
            .iter()
            .filter(|o| o.energy >= hi - 0.2 * (hi - lo))
            .map(|o| o.period)
            .collect();
        assert!(top.windows(2).all(|w| w[1] > w[0]), "mode {mode}");
    }
}

#[test]
fn top_generators_approach_the_upright_position() {
    for mode in 1..=2 {
        let top = family(mode).top();
        let d = Vec2::new(wrap_angle(top.turn_a[0] - PI), wrap_angle(top.turn_a[1]));
        assert!(d.norm() < 0.15, "mode {mode}: {d:?}");
    }
}

#[test]
fn mode_one_period_diverges_past_ten_seconds() {
    let top = family(1).top();
    assert!(top.period > 10.0, "{}", top.period);
}

#[test]
fn orbits_pass_through_the_equilibrium() {
    for mode in 1..=2 {
        for o in family(mode).orbits.iter().step_by(7) {
            let closest = o.samples.samples.iter().map(|s| s.state.q.norm()).fold(f64::INFINITY, f64::min);
            assert!(closest < 1e-3, "mode {mode} E {}: {closest}", o.energy);
        }
    }
}

#[test]
fn gravity_at_the_generators_stays_below_the_horizontal_maximum() {
    let p = params();
    for mode in 1..=2 {
        for o in &family(mode).orbits {
            assert!(gravity(&p, &o.turn_a).amax() <= 6.50);
            assert!(gravity(&p, &o.turn_b).amax() <= 6.50);
        }
    }
}

#[test]
fn orbit_repeats_over_three_periods() {
    let p = params();
    for mode in 1..=2 {
        let o = family(mode).orbit_at(&p, 5.0, &ShootingOptions::default()).unwrap();
        let n = o.samples.len() - 1;
        let mut s = o.samples.samples[0].state;
        for _ in 0..3 {
            let traj = flow(&p, &s, |_, _| Vec2::zeros(), o.period, o.period / (8 * n) as f64).unwrap();
            s = traj.last().state;
            let d = (s.q - o.turn_a).norm() + s.qd.norm();
            assert!(d < 1e-5, "mode {mode}: {d}");
        }
    }
}

#[test]
fn interpolated_orbit_lands_on_the_requested_energy() {
    let p = params();
    let f = family(1);
    let o = f.orbit_at(&p, 11.0, &ShootingOptions::default()).unwrap();
    assert_eq!(o.energy, 11.0);
    let r = o.report(&p);
    assert!(r.closure < 1e-6 && r.energy_mismatch < 1e-8);
    assert!(matches!(f.orbit_at(&p, 13.5, &ShootingOptions::default()), Err(Error::OutOfRange { .. })));
}

#[test]
fn multipliers_at_low_energy_are_all_unit() {
    let p = params();
    for mode in 1..=2 {
        let r = characteristic_multipliers(&p, &family(mode).orbits[0]).unwrap();
        assert!(r.magnitudes.iter().all(|m| (m - 1.0).abs() < 1e-2), "{r:?}");
        assert!((r.determinant - 1.0).abs() < 1e-6);
    }
}

#[test]
fn mode_two_is_unstable_at_five_joules_and_mode_one_is_not() {
    let p = params();
    let opts = ShootingOptions::default();
    let m1 = characteristic_multipliers(&p, &family(1).orbit_at(&p, 5.0, &opts).unwrap()).unwrap();
    let m2 = characteristic_multipliers(&p, &family(2).orbit_at(&p, 5.0, &opts).unwrap()).unwrap();
    assert!(m1.max_magnitude() <= 1.0 + 1e-2, "{m1:?}");
    assert!(m2.max_magnitude() > 1.0, "{m2:?}");
}

#[test]
fn multiplier_grid_keeps_the_hamiltonian_structure() {
    let p = params();
    for mode in 1..=2 {
        let grid = multiplier_grid(&p, family(mode), 50, &ShootingOptions::default()).unwrap();
        for r in &grid {
            assert!(r.unit_count(2e-2) >= 2, "mode {mode}: {r:?}");
            assert!(r.reciprocity_defect() < 1e-3, "mode {mode}: {r:?}");
            assert!((r.product_modulus() - 1.0).abs() < 1e-4, "mode {mode}: {r:?}");
            assert!((r.determinant - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn onset_needs_a_dense_grid_and_some_instability() {
    let p = params();
    let stable: Vec<MultiplierRecord> = (0..60)
        .map(|k| MultiplierRecord {
            energy: k as f64 * 0.2,
            magnitudes: [1.0; 4],
            eigenvalues: [(1.0, 0.0); 4],
            determinant: 1.0,
        })
        .collect();
    assert!(matches!(instability_onset(&p, family(1), &stable), Err(Error::NeverUnstable)));
    assert!(matches!(instability_onset(&p, family(1), &stable[..10]), Err(Error::Invalid(_))));
}

#[test]
fn critical_angle_moves_towards_upright_as_torque_shrinks() {
    let p = params();
    let f = family(1);
    let mut last = 0.0;
    for tau in [0.5, 0.3, 0.2, 0.1, 0.05, 0.02] {
        let (e, q) = critical_energy(&p, f, tau).unwrap();
        assert!(holdable(&p, &q, tau * (1.0 + 1e-9)));
        assert!(e < max_potential(&p));
        assert!(q[0] > last);
        last = q[0];
    }
}

#[test]
fn strong_motors_make_the_horizontal_critical() {
    let p = params();
    let f = family(1);
    let (_, q) = critical_energy(&p, f, 10.0).unwrap();
    assert!((q[0] - PI / 2.0).abs() < 1e-9, "{q:?}");
    let below = f.orbits.iter().rfind(|o| o.turn_a[0] < PI / 2.0).unwrap();
    assert!(below.turn_a[0] < q[0]);
}

#[test]
fn vanishing_torque_is_unreachable() {
    let p = params();
    assert!(matches!(critical_energy(&p, family(1), 1e-9), Err(Error::Unreachable { .. })));
    assert!(matches!(critical_energy(&p, family(1), 0.0), Err(Error::Invalid(_))));
}

#[test]
fn family_round_trips_through_disk() {
    let p = params();
    let controls = ContinuationControls {
        required_energy: 0.5,
        ..Default::default()
    };
    let f = continue_mode(&p, 2, 0.5, &controls).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = f.save(dir.path()).unwrap();
    let back = ModeFamily::load(&path).unwrap();
    assert_eq!(back, f);
}

#[test]
fn continuation_rejects_bad_requests() {
    let p = params();
    let c = ContinuationControls::default();
    assert!(matches!(continue_mode(&p, 3, 1.0, &c), Err(Error::Invalid(_))));
    assert!(matches!(continue_mode(&p, 1, 13.5, &c), Err(Error::Invalid(_))));
}

#[test]
fn shooting_uses_the_fine_step() {
    assert_eq!(ShootingOptions::default().dt, SHOOTING_DT);
}
