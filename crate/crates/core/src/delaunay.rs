//! Incremental Bowyer–Watson Delaunay triangulation of planar points.
//!
//! Orientation and in-circle tests use adaptive-precision predicates, so the
//! result is exact for any finite input, including long runs of collinear
//! or cocircular points.

use std::collections::HashMap;

use robust::{incircle, orient2d, Coord};

use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Half-width of the enclosing triangle, relative to the input extent.
const SUPER_SCALE: f64 = 1e5;

fn coord(p: [f64; 2]) -> Coord<f64> {
    Coord { x: p[0], y: p[1] }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    orient2d(coord(a), coord(b), coord(c))
}

/// A triangulation of `points`. Triangles are counterclockwise and
/// `neighbors[t][k]` is the triangle across the edge opposite vertex `k`.
#[derive(Debug, Clone)]
pub struct Triangulation {
    pub points: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub neighbors: Vec<[Option<usize>; 3]>,
    /// Input indices left out because they repeat an earlier point.
    pub duplicates: Vec<usize>,
}

/// Result of walking towards a query point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    /// Inside or on the boundary of this triangle.
    Inside(usize),
    /// Beyond the hull edge of this triangle.
    Outside(usize),
}

struct Builder {
    verts: Vec<[f64; 2]>,
    tris: Vec<[usize; 3]>,
    nbrs: Vec<[usize; 3]>,
    alive: Vec<bool>,
    free: Vec<usize>,
    mark: Vec<u32>,
    stamp: u32,
}

impl Builder {
    fn alloc(&mut self, t: [usize; 3]) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.tris[i] = t;
                self.nbrs[i] = [NONE; 3];
                self.alive[i] = true;
                i
            }
            None => {
                self.tris.push(t);
                self.nbrs.push([NONE; 3]);
                self.alive.push(true);
                self.mark.push(0);
                self.tris.len() - 1
            }
        }
    }

    fn walk(&self, mut t: usize, p: [f64; 2]) -> usize {
        'outer: loop {
            let v = self.tris[t];
            for k in 0..3 {
                let (a, b) = (self.verts[v[(k + 1) % 3]], self.verts[v[(k + 2) % 3]]);
                if orient(a, b, p) < 0.0 && self.nbrs[t][k] != NONE {
                    t = self.nbrs[t][k];
                    continue 'outer;
                }
            }
            return t;
        }
    }

    fn in_circle(&self, t: usize, p: [f64; 2]) -> bool {
        let v = self.tris[t];
        incircle(
            coord(self.verts[v[0]]),
            coord(self.verts[v[1]]),
            coord(self.verts[v[2]]),
            coord(p),
        ) > 0.0
    }

    /// Inserts vertex `pi`; returns a triangle touching it, or `None` for a
    /// repeated point.
    fn insert(&mut self, pi: usize, hint: usize) -> Option<usize> {
        let p = self.verts[pi];
        let t0 = self.walk(hint, p);
        if self.tris[t0].iter().any(|&v| self.verts[v] == p) {
            return None;
        }
        self.stamp += 1;
        let stamp = self.stamp;
        let mut cavity = vec![t0];
        self.mark[t0] = stamp;
        let mut i = 0;
        while i < cavity.len() {
            let t = cavity[i];
            i += 1;
            for k in 0..3 {
                let n = self.nbrs[t][k];
                if n != NONE && self.mark[n] != stamp && self.in_circle(n, p) {
                    self.mark[n] = stamp;
                    cavity.push(n);
                }
            }
        }
        let mut boundary = Vec::new();
        for &t in &cavity {
            for k in 0..3 {
                let n = self.nbrs[t][k];
                if n == NONE || self.mark[n] != stamp {
                    let v = self.tris[t];
                    boundary.push((v[(k + 1) % 3], v[(k + 2) % 3], n, t));
                }
            }
        }
        let mut by_start = HashMap::with_capacity(boundary.len());
        let mut by_end = HashMap::with_capacity(boundary.len());
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, outer, old) in &boundary {
            let t = self.alloc([a, b, pi]);
            self.nbrs[t][2] = outer;
            if outer != NONE {
                if let Some(k) = self.nbrs[outer].iter().position(|&x| x == old) {
                    self.nbrs[outer][k] = t;
                }
            }
            by_start.insert(a, t);
            by_end.insert(b, t);
            created.push(t);
        }
        for &t in &created {
            let [a, b, _] = self.tris[t];
            self.nbrs[t][0] = by_start.get(&b).copied().unwrap_or(NONE);
            self.nbrs[t][1] = by_end.get(&a).copied().unwrap_or(NONE);
        }
        // Freed only now so no new triangle reuses a slot a neighbour
        // still points to.
        for &t in &cavity {
            self.alive[t] = false;
            self.free.push(t);
        }
        created.first().copied()
    }
}

/// Point indices sorted along a Hilbert curve over the bounding box, so each
/// insertion starts its walk next to the previous one. Ties keep input order.
fn insertion_order(points: &[[f64; 2]], lo: [f64; 2], hi: [f64; 2]) -> Vec<usize> {
    const SIDE: u32 = 1 << 16;
    let cell = |x: f64, d: usize| {
        let w = hi[d] - lo[d];
        if w > 0.0 {
            (((x - lo[d]) / w * (SIDE - 1) as f64).round() as u32).min(SIDE - 1)
        } else {
            0
        }
    };
    let keys: Vec<u64> = points.iter().map(|p| hilbert_key(cell(p[0], 0), cell(p[1], 1), SIDE)).collect();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| keys[i]);
    order
}

fn hilbert_key(mut x: u32, mut y: u32, side: u32) -> u64 {
    let mut d = 0u64;
    let mut s = side / 2;
    while s > 0 {
        let rx = u32::from(x & s > 0);
        let ry = u32::from(y & s > 0);
        d += u64::from(s) * u64::from(s) * u64::from((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = side - 1 - x;
                y = side - 1 - y;
            }
            std::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

impl Triangulation {
    /// Delaunay triangulation of `points`, inserted in the given order.
    /// Exact repeats of an earlier point are skipped and listed in
    /// [`Triangulation::duplicates`].
    pub fn new(points: &[[f64; 2]]) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateTriangulation(format!("{} points", points.len())));
        }
        if let Some(i) = points.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::DegenerateTriangulation(format!("point {i} is not finite")));
        }
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in points {
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let c = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let r = SUPER_SCALE * (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
        let n = points.len();
        let mut verts = points.to_vec();
        verts.push([c[0] - 2.0 * r, c[1] - r]);
        verts.push([c[0] + 2.0 * r, c[1] - r]);
        verts.push([c[0], c[1] + 2.0 * r]);
        let mut b = Builder {
            verts,
            tris: Vec::new(),
            nbrs: Vec::new(),
            alive: Vec::new(),
            free: Vec::new(),
            mark: Vec::new(),
            stamp: 0,
        };
        let mut hint = b.alloc([n, n + 1, n + 2]);
        let mut duplicates = Vec::new();
        for i in insertion_order(points, lo, hi) {
            match b.insert(i, hint) {
                Some(t) => hint = t,
                None => duplicates.push(i),
            }
        }
        duplicates.sort_unstable();

        let mut remap = vec![NONE; b.tris.len()];
        let mut triangles = Vec::new();
        for (t, v) in b.tris.iter().enumerate() {
            if b.alive[t] && v.iter().all(|&x| x < n) {
                remap[t] = triangles.len();
                triangles.push(*v);
            }
        }
        if triangles.is_empty() {
            return Err(Error::DegenerateTriangulation("all points are collinear".into()));
        }
        let neighbors = b
            .tris
            .iter()
            .enumerate()
            .filter(|&(t, _)| remap[t] != NONE)
            .map(|(t, _)| b.nbrs[t].map(|x| (x != NONE && remap[x] != NONE).then(|| remap[x])))
            .collect();
        Ok(Triangulation {
            points: points.to_vec(),
            triangles,
            neighbors,
            duplicates,
        })
    }

    /// Rebuilds adjacency for a stored triangle list.
    pub fn from_triangles(points: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mut edges: HashMap<(usize, usize), (usize, usize)> = HashMap::with_capacity(3 * triangles.len());
        for (t, v) in triangles.iter().enumerate() {
            if v.iter().any(|&x| x >= points.len()) {
                return Err(Error::DegenerateTriangulation(format!("triangle {t} references a missing point")));
            }
            if orient(points[v[0]], points[v[1]], points[v[2]]) <= 0.0 {
                return Err(Error::DegenerateTriangulation(format!("triangle {t} is not counterclockwise")));
            }
            for k in 0..3 {
                edges.insert((v[(k + 1) % 3], v[(k + 2) % 3]), (t, k));
            }
        }
        let mut neighbors = vec![[None; 3]; triangles.len()];
        for (t, v) in triangles.iter().enumerate() {
            for k in 0..3 {
                if let Some(&(u, _)) = edges.get(&(v[(k + 2) % 3], v[(k + 1) % 3])) {
                    neighbors[t][k] = Some(u);
                }
            }
        }
        Ok(Triangulation {
            points,
            triangles,
            neighbors,
            duplicates: Vec::new(),
        })
    }

    /// Visibility walk from triangle `start` towards `p`.
    pub fn locate(&self, p: [f64; 2], start: usize) -> Location {
        let mut t = start;
        // A Delaunay walk never revisits a triangle; the bound guards
        // against a hand-made, non-Delaunay triangle list.
        for _ in 0..=self.triangles.len() {
            let v = self.triangles[t];
            let mut next = None;
            for k in 0..3 {
                let (a, b) = (self.points[v[(k + 1) % 3]], self.points[v[(k + 2) % 3]]);
                if orient(a, b, p) < 0.0 {
                    match self.neighbors[t][k] {
                        Some(n) => {
                            next = Some(n);
                            break;
                        }
                        None => return Location::Outside(t),
                    }
                }
            }
            match next {
                Some(n) => t = n,
                None => return Location::Inside(t),
            }
        }
        Location::Outside(t)
    }

    /// Barycentric weights of `p` in triangle `t`, in vertex order.
    pub fn barycentric(&self, t: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.points[i]);
        let d = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        let wb = ((p[0] - a[0]) * (c[1] - a[1]) - (p[1] - a[1]) * (c[0] - a[0])) / d;
        let wc = ((b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])) / d;
        [1.0 - wb - wc, wb, wc]
    }

    /// Whether every triangle's circumcircle is free of other points.
    /// Quadratic; meant for tests on small inputs.
    pub fn is_delaunay(&self) -> bool {
        self.triangles.iter().all(|v| {
            let [a, b, c] = v.map(|i| coord(self.points[i]));
            self.points
                .iter()
                .enumerate()
                .filter(|(i, _)| !v.contains(i))
                .all(|(_, p)| incircle(a, b, c, coord(*p)) <= 0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn square_gives_two_triangles() {
        let t = Triangulation::new(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]).unwrap();
        assert_eq!(t.triangles.len(), 2);
        assert!(t.is_delaunay());
    }

    #[test]
    fn grid_with_cocircular_points() {
        let pts: Vec<[f64; 2]> = (0..100).map(|i| [(i % 10) as f64, (i / 10) as f64]).collect();
        let t = Triangulation::new(&pts).unwrap();
        assert_eq!(t.triangles.len(), 2 * 81);
        assert!(t.is_delaunay());
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts: Vec<[f64; 2]> = (0..5).map(|i| [i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(Triangulation::new(&pts), Err(Error::DegenerateTriangulation(_))));
    }

    #[test]
    fn duplicates_are_skipped() {
        let t = Triangulation::new(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(t.duplicates, vec![3]);
        assert_eq!(t.triangles.len(), 1);
    }

    #[test]
    fn rebuilt_adjacency_matches() {
        let pts: Vec<[f64; 2]> = (0..40).map(|i| [(i as f64 * 0.7).sin(), (i as f64 * 1.3).cos() * 0.5]).collect();
        let t = Triangulation::new(&pts).unwrap();
        let r = Triangulation::from_triangles(pts, t.triangles.clone()).unwrap();
        assert_eq!(r.neighbors, t.neighbors);
    }

    proptest! {
        #[test]
        fn random_points_are_delaunay_and_locatable(
            pts in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 3..60),
            q in (0.0f64..1.0, 0.0f64..1.0),
        ) {
            let pts: Vec<[f64; 2]> = pts.into_iter().map(|(x, y)| [x, y]).collect();
            if let Ok(t) = Triangulation::new(&pts) {
                prop_assert!(t.is_delaunay());
                // Every inserted point is a vertex.
                let used: std::collections::HashSet<usize> = t.triangles.iter().flatten().copied().collect();
                prop_assert_eq!(used.len() + t.duplicates.len(), pts.len());
                if let Location::Inside(k) = t.locate([q.0, q.1], 0) {
                    let w = t.barycentric(k, [q.0, q.1]);
                    prop_assert!(w.iter().all(|x| *x >= -1e-9));
                    prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}
