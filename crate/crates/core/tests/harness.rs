mod common;

use std::sync::OnceLock;

use eigenswing::control::{ControllerPhase, Failure};
use eigenswing::dynamics::{wrap_distance, Vec2, Q_UPRIGHT};
use eigenswing::harness::*;
use eigenswing::integrate::{Trajectory, TRAJECTORY_CSV_HEADER};
use eigenswing::Error;

use common::{chart, family};

fn run(mode: usize, tau: f64) -> ExperimentResult {
    run_experiment(&ExperimentConfig::new(mode, tau), family(mode), chart(mode)).unwrap()
}

fn half_newton_metre() -> &'static [ExperimentResult; 2] {
    static RUNS: OnceLock<[ExperimentResult; 2]> = OnceLock::new();
    RUNS.get_or_init(|| {
        let (a, b) = rayon::join(|| run(1, 0.5), || run(2, 0.5));
        [a, b]
    })
}

#[test]
fn half_newton_metre_swings_up_on_both_modes() {
    let [m1, m2] = half_newton_metre();
    for r in [m1, m2] {
        assert!(r.success, "{:?} {:?}", r.failure_reason, r.failures);
        let (t_hold, t_end) = (r.t_hold.unwrap(), r.t_end.unwrap());
        assert!(t_end >= t_hold && t_hold > 0.0);
        assert!((7.0..=30.0).contains(&t_end), "t_end {t_end}");
        assert_eq!(r.saturation_violations, 0);
        let last = r.trace.last().unwrap();
        assert!(wrap_distance(&last.state.q, &Vec2::from(Q_UPRIGHT)) < 2e-3);
    }
    assert!(m2.t_end < m1.t_end);
}

#[test]
fn phases_run_start_swing_up_hold() {
    for r in half_newton_metre() {
        let phases: Vec<ControllerPhase> = r.transitions.iter().map(|&(_, ph)| ph).collect();
        assert_eq!(phases, [ControllerPhase::Start, ControllerPhase::SwingUp, ControllerPhase::Hold]);
        assert_eq!(r.transitions[1].0, 1e-3);
        assert!(r.failures.is_empty());
    }
}

#[test]
fn injection_never_removes_energy_below_the_target() {
    for r in half_newton_metre() {
        let mut checked = 0;
        for row in r.trace.iter().filter(|row| row.phase == ControllerPhase::SwingUp) {
            if row.energy < r.e_des && row.state.qd.norm() > 0.05 && row.alpha > 0.0 {
                assert!(row.state.qd.dot(&row.tau_e) >= 0.0, "t = {}", row.t);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }
}

#[test]
fn strong_motors_swing_up_quickly() {
    let r = run(1, 20.0);
    assert!(r.success, "{:?}", r.failure_reason);
    assert!(r.t_end.unwrap() < 15.0, "{:?}", r.t_end);
    assert_eq!(r.saturation_violations, 0);
}

#[test]
fn runs_are_deterministic() {
    let mut c = ExperimentConfig::new(2, 0.3);
    c.max_sim_time = 20.0;
    let a = run_experiment(&c, family(2), chart(2)).unwrap();
    let b = run_experiment(&c, family(2), chart(2)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_round_trips_and_rejects_typos() {
    let mut c = ExperimentConfig::new(2, 0.2);
    c.controller.tau_max = [0.2, 0.15];
    c.controller.gains.k_r = [[1.5, 0.1], [0.1, 1.0]];
    c.controller.e_des = Some(12.9);
    let text = c.to_toml();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    let d = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_toml(&d.to_toml()).unwrap(), d);
    assert!(!d.to_toml().contains("e_des"));
    let typo = d.to_toml().replace("k_p", "kp");
    assert!(matches!(ExperimentConfig::from_toml(&typo), Err(Error::Invalid(_))));
    let bad = d.to_toml().replace("dt = 0.001", "dt = -0.001");
    assert!(ExperimentConfig::from_toml(&bad).is_err());
}

#[test]
fn mismatched_family_is_an_error() {
    let c = ExperimentConfig::new(1, 0.5);
    assert!(matches!(run_experiment(&c, family(2), chart(2)), Err(Error::Invalid(_))));
}

#[test]
fn results_export_trajectory_telemetry_and_summary() {
    let mut c = ExperimentConfig::new(1, 0.5);
    c.max_sim_time = 2.0;
    let r = run_experiment(&c, family(1), chart(1)).unwrap();
    assert!(!r.success);
    assert_eq!(r.failure_reason, Some(Failure::Timeout));
    let dir = tempfile::tempdir().unwrap();
    r.save(dir.path(), "run").unwrap();
    let traj = std::fs::read_to_string(dir.path().join("run_trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), TRAJECTORY_CSV_HEADER.join(","));
    let back = Trajectory::load_csv(&dir.path().join("run_trajectory.csv")).unwrap();
    assert_eq!(back.samples.len(), r.trace.len());
    assert_eq!(back.samples[1234].state, r.trace[1234].state);
    let tel = std::fs::read_to_string(dir.path().join("run_telemetry.csv")).unwrap();
    assert_eq!(tel.lines().next().unwrap(), "t,phase,energy,tau_m1,tau_m2,tau_e1,tau_e2,alpha");
    assert_eq!(tel.lines().count(), r.trace.len() + 1);
    let json: ExperimentResult = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(json.config, r.config);
    assert_eq!(json.steps, 2000);
}

#[test]
fn sweep_table_layout() {
    let models: Vec<ModeModel> = [1, 2].map(|m| ModeModel { family: family(m), chart: chart(m) }).to_vec();
    let base = ExperimentConfig { max_sim_time: 30.0, ..Default::default() };
    let table = run_sweep(&base, &[0.5, 0.02], &[1, 2], &models).unwrap();
    assert_eq!(table.rows.len(), 2);
    assert!(table.all_completed());
    assert_eq!(table.saturation_violations(), 0);
    let r0 = &table.rows[0];
    assert!((r0.percent - 7.70).abs() < 0.1);
    assert!(r0.mode1.as_ref().unwrap().outcome.is_success());
    assert!(r0.mode2.as_ref().unwrap().outcome.is_success());
    assert!(table.rows[1].q_crit1_deg > r0.q_crit1_deg);
    assert!(!table.rows[1].mode1.as_ref().unwrap().outcome.is_success());

    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "max_torque_nm,percent_tau_g,q_crit1_deg,t_end_mode1_s,t_end_mode2_s");
    assert!(lines.next().unwrap().starts_with("0.5,7.70,"));
    assert!(lines.next().unwrap().contains("FAIL (timeout)"));
    let text = table.to_text();
    assert_eq!(text.lines().count(), 3);
    let dir = tempfile::tempdir().unwrap();
    table.save(dir.path()).unwrap();
    let back: SweepTable = serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(back, table);

    assert!(matches!(run_sweep(&base, &[0.5], &[2], &models[..1]), Err(Error::Invalid(_))));
}
