//! Interpolated eigenmanifold chart `(E, φ) → (q, q̇)`.
//!
//! Points sampled from the orbits of a family are placed in the plane of
//! energy and modal phase `φ = atan2(q̇₁, q₁)`, triangulated, and queried by
//! barycentric interpolation of the vertex states. Points near the phase
//! seam are repeated at `φ ∓ 2π` so queries close to `±π` see neighbours
//! from both sides.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::delaunay::{Location, Triangulation};
use crate::dynamics::{energy, PendulumParams, State, Vec2};
use crate::error::{Error, Result};
use crate::integrate::{step, SHOOTING_DT};
use crate::modal::ModeFamily;

/// Below this `|q₁|` and `|q̇₁|` the phase is undefined.
pub const PHASE_EPS: f64 = 1e-9;

/// Modal phase `atan2(q̇₁, q₁)` in `(-π, π]`.
pub fn phase(s: &State) -> Result<f64> {
    let (q1, qd1) = (s.q[0], s.qd[0]);
    if q1.abs() < PHASE_EPS && qd1.abs() < PHASE_EPS {
        return Err(Error::DegeneratePhase { q1, qd1 });
    }
    let phi = qd1.atan2(q1);
    Ok(if phi <= -PI { PI } else { phi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldPoint {
    pub energy: f64,
    pub phase: f64,
    pub state: State,
}

/// Stored copy of a point in the triangulated plane, with its phase
/// shifted by `shift · 2π`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Vertex {
    point: usize,
    shift: i8,
}

/// Interpolated state returned by a chart query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub state: State,
    /// The query energy lay outside the chart and was moved to its edge.
    pub clamped: bool,
}

/// Outcome of [`ManifoldChart::nearest`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nearest {
    /// Point of the manifold with the state's energy and phase.
    Projected(Projection),
    /// The phase is undefined; the state itself is returned.
    Degenerate(State),
}

impl Nearest {
    pub fn state(&self) -> State {
        match self {
            Nearest::Projected(p) => p.state,
            Nearest::Degenerate(s) => *s,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, Nearest::Degenerate(_))
    }
}

/// Uniform grid of walk start triangles over the triangulated plane.
#[derive(Debug, Clone)]
struct Locator {
    lo: [f64; 2],
    cell: [f64; 2],
    n: [usize; 2],
    seeds: Vec<usize>,
}

impl Locator {
    fn new(tri: &Triangulation) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &tri.points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let cells = ((tri.triangles.len() as f64).sqrt().ceil() as usize).clamp(1, 512);
        let n = [cells, cells];
        let cell = [0, 1].map(|d| ((hi[d] - lo[d]) / n[d] as f64).max(f64::MIN_POSITIVE));
        let mut seeds = vec![usize::MAX; n[0] * n[1]];
        let mut loc = Locator { lo, cell, n, seeds: Vec::new() };
        for (t, v) in tri.triangles.iter().enumerate() {
            let c = v.iter().fold([0.0, 0.0], |acc, &i| [acc[0] + tri.points[i][0] / 3.0, acc[1] + tri.points[i][1] / 3.0]);
            let k = loc.index(c);
            if seeds[k] == usize::MAX {
                seeds[k] = t;
            }
        }
        // Empty cells borrow the nearest filled cell along their row, then column.
        let mut last = 0;
        for seed in seeds.iter_mut() {
            if *seed == usize::MAX {
                *seed = last;
            } else {
                last = *seed;
            }
        }
        loc.seeds = seeds;
        loc
    }

    fn index(&self, p: [f64; 2]) -> usize {
        let i = [0, 1].map(|d| (((p[d] - self.lo[d]) / self.cell[d]).floor().max(0.0) as usize).min(self.n[d] - 1));
        i[1] * self.n[0] + i[0]
    }

    fn seed(&self, p: [f64; 2]) -> usize {
        self.seeds[self.index(p)]
    }
}

/// Relative distance outside the energy range that is still clamped.
pub const CLAMP_FRACTION: f64 = 0.02;

/// Version tag written into chart files.
pub const CHART_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ManifoldChart {
    pub mode_index: usize,
    pub points: Vec<ManifoldPoint>,
    pub energy_range: (f64, f64),
    vertices: Vec<Vertex>,
    tri: Triangulation,
    locator: Locator,
}

/// Default number of samples taken from each orbit.
pub const DEFAULT_SAMPLES_PER_ORBIT: usize = 400;

/// Largest velocity change, in rad/s, between consecutive samples of one
/// orbit before the interval is subdivided.
pub const MAX_VELOCITY_CHORD: f64 = 0.25;
/// Largest phase step between consecutive samples of one orbit.
pub const MAX_PHASE_STEP: f64 = 0.02;

/// Samples every `orbit_stride`-th orbit of `family` at `samples_per_orbit`
/// instants evenly spaced over one period. Points carry the energy of their
/// orbit, so each orbit lies on one line of the chart.
///
/// Where consecutive samples differ in `q̇` by more than
/// [`MAX_VELOCITY_CHORD`], or in phase by more than [`MAX_PHASE_STEP`], the
/// interval is refined by integrating from the left sample. Fast passes
/// through the hanging configuration, and turning points of orbits whose
/// phase runs much faster than time, would otherwise lose a visible share of
/// their energy to the linear interpolation.
///
/// Fails with [`Error::PhaseNotMonotone`] if the phase along any selected
/// orbit does not sweep `(-π, π]` exactly once, monotonically.
pub fn sample_family(
    p: &PendulumParams,
    family: &ModeFamily,
    samples_per_orbit: usize,
    orbit_stride: usize,
) -> Result<Vec<ManifoldPoint>> {
    if samples_per_orbit < 4 || orbit_stride == 0 {
        return Err(Error::Invalid(format!(
            "need at least 4 samples per orbit and a positive stride, got {samples_per_orbit}, {orbit_stride}"
        )));
    }
    let mut points = Vec::new();
    for o in family.orbits.iter().step_by(orbit_stride) {
        check_phase_sweep(o.energy, o.samples.states())?;
        let n = o.samples.len() - 1;
        let pick = |i: usize| &o.samples.samples[((i * n) as f64 / samples_per_orbit as f64).round() as usize];
        let mut push = |state: State| -> Result<()> {
            debug_assert!((energy(p, &state) - o.energy).abs() < 1e-6);
            points.push(ManifoldPoint { energy: o.energy, phase: phase(&state)?, state });
            Ok(())
        };
        for i in 0..samples_per_orbit {
            let (a, b) = (pick(i), pick(i + 1));
            push(a.state)?;
            let chord = ((b.state.qd[0] - a.state.qd[0]).powi(2) + (b.state.qd[1] - a.state.qd[1]).powi(2)).sqrt();
            let dphi = wrap_phase(phase(&b.state)? - phase(&a.state)?).abs();
            let pieces = (chord / MAX_VELOCITY_CHORD).max(dphi / MAX_PHASE_STEP).ceil() as usize;
            if pieces > 1 {
                let h = (b.t - a.t) / pieces as f64;
                let sub = (h / SHOOTING_DT).ceil() as usize;
                let mut s = a.state;
                for _ in 1..pieces {
                    for _ in 0..sub {
                        s = step(p, &s, &Vec2::zeros(), h / sub as f64);
                    }
                    push(s)?;
                }
            }
        }
    }
    Ok(points)
}

/// The phase along one period must change monotonically by a total of
/// exactly one turn.
fn check_phase_sweep<'a>(e: f64, states: impl IntoIterator<Item = &'a State>) -> Result<()> {
    let phases = states.into_iter().map(phase).collect::<Result<Vec<f64>>>()?;
    let steps: Vec<f64> = phases
        .windows(2)
        .map(|w| {
            let d = w[1] - w[0];
            d - 2.0 * PI * (d / (2.0 * PI)).round()
        })
        .collect();
    let total: f64 = steps.iter().sum();
    let sign = total.signum();
    if steps.iter().any(|d| d * sign <= 0.0) || ((total.abs() - 2.0 * PI).abs() > 1e-6) {
        return Err(Error::PhaseNotMonotone { energy: e });
    }
    Ok(())
}

/// Builds the chart of `family` from `samples_per_orbit` samples of every
/// `orbit_stride`-th orbit.
pub fn build_chart(
    p: &PendulumParams,
    family: &ModeFamily,
    samples_per_orbit: usize,
    orbit_stride: usize,
) -> Result<ManifoldChart> {
    if family.orbits.len() < 10 {
        return Err(Error::Invalid(format!("chart needs at least 10 orbits, got {}", family.orbits.len())));
    }
    let points = sample_family(p, family, samples_per_orbit, orbit_stride)?;
    ManifoldChart::from_points(family.mode_index, points, family.energy_range())
}

impl ManifoldChart {
    /// Triangulates arbitrary manifold points over `energy_range`.
    pub fn from_points(mode_index: usize, points: Vec<ManifoldPoint>, energy_range: (f64, f64)) -> Result<Self> {
        if !(energy_range.1 > energy_range.0) {
            return Err(Error::Invalid(format!("empty energy range {energy_range:?}")));
        }
        let mut vertices = Vec::with_capacity(points.len() * 3 / 2);
        for (i, pt) in points.iter().enumerate() {
            vertices.push(Vertex { point: i, shift: 0 });
            if pt.phase > FRAC_PI_2 {
                vertices.push(Vertex { point: i, shift: -1 });
            } else if pt.phase < -FRAC_PI_2 {
                vertices.push(Vertex { point: i, shift: 1 });
            }
        }
        let coords: Vec<[f64; 2]> = vertices
            .iter()
            .map(|v| {
                let pt = &points[v.point];
                scaled(energy_range, pt.energy, pt.phase + 2.0 * PI * v.shift as f64)
            })
            .collect();
        let tri = Triangulation::new(&coords)?;
        Ok(Self::assemble(mode_index, points, energy_range, vertices, tri))
    }

    fn assemble(
        mode_index: usize,
        points: Vec<ManifoldPoint>,
        energy_range: (f64, f64),
        vertices: Vec<Vertex>,
        tri: Triangulation,
    ) -> Self {
        let locator = Locator::new(&tri);
        ManifoldChart {
            mode_index,
            points,
            energy_range,
            vertices,
            tri,
            locator,
        }
    }

    pub fn triangle_count(&self) -> usize {
        self.tri.triangles.len()
    }

    /// Containing triangle and barycentric weights at chart coordinates
    /// `(e, phi)`, with `e` already inside the energy range.
    fn weights(&self, e: f64, phi: f64) -> Result<(usize, [f64; 3])> {
        let x = scaled(self.energy_range, e, wrap_phase(phi));
        let t = match self.tri.locate(x, self.locator.seed(x)) {
            Location::Inside(t) => t,
            Location::Outside(_) => {
                return Err(Error::OutOfRange {
                    energy: e,
                    lo: self.energy_range.0,
                    hi: self.energy_range.1,
                })
            }
        };
        let mut w = self.tri.barycentric(t, x);
        // Roundoff can leave a query on an edge marginally outside.
        for wi in &mut w {
            *wi = wi.max(0.0);
        }
        let sum: f64 = w.iter().sum();
        Ok((t, w.map(|wi| wi / sum)))
    }

    /// Interpolated manifold state at energy `e` and phase `phi`.
    ///
    /// Energies up to [`CLAMP_FRACTION`] of the range width outside the
    /// chart are moved to its edge and flagged.
    pub fn project(&self, e: f64, phi: f64) -> Result<Projection> {
        let (lo, hi) = self.energy_range;
        let margin = CLAMP_FRACTION * (hi - lo);
        if !(e >= lo - margin && e <= hi + margin) {
            return Err(Error::OutOfRange { energy: e, lo, hi });
        }
        let clamped = e < lo || e > hi;
        let (t, w) = self.weights(e.clamp(lo, hi), phi)?;
        let mut q = nalgebra::Vector2::zeros();
        let mut qd = nalgebra::Vector2::zeros();
        for (k, &vi) in self.tri.triangles[t].iter().enumerate() {
            if w[k] == 0.0 {
                continue;
            }
            let s = &self.points[self.vertices[vi].point].state;
            q += w[k] * s.q;
            qd += w[k] * s.qd;
        }
        Ok(Projection {
            state: State { q, qd },
            clamped,
        })
    }

    /// Barycentric weights of a query, for diagnostics.
    pub fn barycentric_weights(&self, e: f64, phi: f64) -> Result<[f64; 3]> {
        Ok(self.weights(e, phi)?.1)
    }

    /// Manifold state with the same energy and phase as `s`.
    ///
    /// Energies outside the chart are clamped to its edge (flagged), however
    /// far out they lie.
    pub fn nearest(&self, p: &PendulumParams, s: &State) -> Nearest {
        let phi = match phase(s) {
            Ok(phi) => phi,
            Err(_) => return Nearest::Degenerate(*s),
        };
        let (lo, hi) = self.energy_range;
        let e = energy(p, s);
        let (e_in, out) = if e < lo || e > hi { (e.clamp(lo, hi), true) } else { (e, false) };
        match self.project(e_in, phi) {
            Ok(mut pr) => {
                pr.clamped |= out;
                Nearest::Projected(pr)
            }
            Err(_) => Nearest::Degenerate(*s),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ChartFile {
            schema_version: CHART_SCHEMA_VERSION,
            mode_index: self.mode_index,
            energy_range: self.energy_range,
            points: self.points.clone(),
            vertices: self.vertices.clone(),
            triangles: self.tri.triangles.clone(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::format(path, e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ChartFile = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if file.schema_version != CHART_SCHEMA_VERSION {
            return Err(Error::Schema {
                found: file.schema_version,
                expected: CHART_SCHEMA_VERSION,
            });
        }
        if file.vertices.iter().any(|v| v.point >= file.points.len()) {
            return Err(Error::format(path, "vertex references a missing point"));
        }
        let coords = file
            .vertices
            .iter()
            .map(|v| {
                let pt = &file.points[v.point];
                scaled(file.energy_range, pt.energy, pt.phase + 2.0 * PI * v.shift as f64)
            })
            .collect();
        let tri = Triangulation::from_triangles(coords, file.triangles)?;
        Ok(Self::assemble(file.mode_index, file.points, file.energy_range, file.vertices, tri))
    }
}

#[derive(Serialize, Deserialize)]
struct ChartFile {
    schema_version: u32,
    mode_index: usize,
    energy_range: (f64, f64),
    points: Vec<ManifoldPoint>,
    vertices: Vec<Vertex>,
    triangles: Vec<[usize; 3]>,
}

/// Energy to `[0, 1]` over the chart range, phase to `[-1, 1]`.
fn scaled(range: (f64, f64), e: f64, phi: f64) -> [f64; 2] {
    [(e - range.0) / (range.1 - range.0), phi / PI]
}

fn wrap_phase(phi: f64) -> f64 {
    let w = phi - 2.0 * PI * (phi / (2.0 * PI)).round();
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_quadrants() {
        let s = |q: [f64; 2], qd: [f64; 2]| State::new(q, qd);
        assert_eq!(phase(&s([0.5, 0.2], [0.0, 0.0])).unwrap(), 0.0);
        assert!((phase(&s([0.0, -0.3], [1.0, 0.0])).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(phase(&s([-0.5, 0.0], [0.0, 1.0])).unwrap(), PI);
        assert_eq!(phase(&s([-0.5, 0.0], [-0.0, 1.0])).unwrap(), PI);
        assert!(matches!(phase(&State::at_rest([0.0, 0.3].into())), Err(Error::DegeneratePhase { .. })));
    }

    #[test]
    fn wrap_phase_range() {
        for k in -5..5 {
            let w = wrap_phase(0.3 + 2.0 * PI * k as f64);
            assert!((w - 0.3).abs() < 1e-12);
        }
        assert_eq!(wrap_phase(-PI), PI);
    }

    #[test]
    fn sweep_check_rejects_a_curl() {
        let ring = |n: usize| -> Vec<State> {
            (0..=n)
                .map(|i| {
                    let t = 2.0 * PI * i as f64 / n as f64;
                    State::new([t.cos(), 0.0], [-t.sin(), 0.0])
                })
                .collect()
        };
        assert!(check_phase_sweep(1.0, &ring(64)).is_ok());
        let mut curl = ring(64);
        curl[10].qd[0] = -curl[10].qd[0];
        assert!(matches!(check_phase_sweep(1.0, &curl), Err(Error::PhaseNotMonotone { .. })));
    }
}
