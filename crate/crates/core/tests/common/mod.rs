#![allow(dead_code)]

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::OnceLock;

use eigenswing::dynamics::PendulumParams;
use eigenswing::manifold::{build_chart, ManifoldChart, DEFAULT_SAMPLES_PER_ORBIT};
use eigenswing::modal::{continue_mode, default_ceiling, ContinuationControls, ModeFamily};

/// Both default families, continued once per test binary and cached on
/// disk between binaries.
pub fn families() -> &'static [ModeFamily; 2] {
    static CELL: OnceLock<[ModeFamily; 2]> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = PendulumParams::default();
        let controls = ContinuationControls::default();
        let dir = cache_dir(&p, &controls);
        let load = |m: usize| ModeFamily::load(&dir.join(format!("mode{m}_family.json")));
        if let (Ok(a), Ok(b)) = (load(1), load(2)) {
            return [a, b];
        }
        let [a, b] = compute(&p, &controls);
        let tmp = dir.with_extension("partial");
        let _ = std::fs::remove_dir_all(&tmp);
        a.save(&tmp).unwrap();
        b.save(&tmp).unwrap();
        let _ = std::fs::remove_dir_all(&dir);
        let _ = std::fs::rename(&tmp, &dir);
        [a, b]
    })
}

pub fn family(mode: usize) -> &'static ModeFamily {
    &families()[mode - 1]
}

/// Default-resolution charts of both families, built once per test binary.
pub fn chart(mode: usize) -> &'static ManifoldChart {
    static CHARTS: OnceLock<[ManifoldChart; 2]> = OnceLock::new();
    &CHARTS.get_or_init(|| {
        let p = PendulumParams::default();
        [1, 2].map(|m| build_chart(&p, family(m), DEFAULT_SAMPLES_PER_ORBIT, 1).unwrap())
    })[mode - 1]
}

pub fn compute(p: &PendulumParams, controls: &ContinuationControls) -> [ModeFamily; 2] {
    let ceiling = default_ceiling(p);
    let (a, b) = rayon::join(
        || continue_mode(p, 1, ceiling, controls).unwrap(),
        || continue_mode(p, 2, ceiling, controls).unwrap(),
    );
    [a, b]
}

fn cache_dir(p: &PendulumParams, controls: &ContinuationControls) -> PathBuf {
    let mut h = DefaultHasher::new();
    format!("{p:?}{controls:?}{}", env!("CARGO_PKG_VERSION")).hash(&mut h);
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("families-{:016x}", h.finish()))
}
