//! Convex polytope calculus in dimensions one and two.
//!
//! A [`Polytope`] is a bounded intersection of halfspaces `n·x <= b` kept in a
//! canonical form: unit normals, sorted by angle, no coincident directions, no
//! redundant rows. Construction always reduces to canonical form and caches
//! the vertex set, so every value is immutable and self-consistent afterward.
//! Halfspaces answer membership, erosion, and preimage queries; vertices
//! answer support, subset, and Minkowski queries. Emptiness is a value
//! ([`Polytope::empty`]), unboundedness is a construction error: none of the
//! closed-loop set recursions can produce or use an unbounded set.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default slack for membership, subset, and emptiness comparisons.
pub const DEFAULT_GEOM_EPS: f64 = 1e-9;

// Rows with norm below this are zero rows: vacuous or infeasible by sign of b.
const ZERO_ROW_EPS: f64 = 1e-14;
// Normals closer than this in angle collapse onto the tighter offset.
const ANG_COALESCE_EPS: f64 = 1e-10;
// 2x2 solves need at least this determinant (the sine of the normal gap).
const PARALLEL_DET_EPS: f64 = 1e-12;
// A halfspace implied by its angular neighbors within this slack is dropped.
const REDUNDANCY_DROP_EPS: f64 = 1e-9;
// Consecutive intersection points closer than this are the same vertex.
const VERTEX_DEDUP_EPS: f64 = 1e-9;
// An angular gap this close to pi (or wider) admits a recession direction.
const GAP_UNBOUNDED_MARGIN: f64 = 1e-9;
// Candidate vertices may violate rows by slack*(1+|b|) before the set is empty.
const VALIDATION_SLACK: f64 = 1e-7;
// Hull turns with cross product at or below this count as collinear.
const HULL_CROSS_EPS: f64 = 1e-10;
// 2-D sets with area at or below this have no usable interior.
const AREA_DEGENERATE_EPS: f64 = 1e-10;

/// Bounded convex polytope with a canonical halfspace form and cached vertices.
#[derive(Clone, Debug)]
pub struct Polytope {
    dim: usize,
    normals: Vec<DVector<f64>>,
    offsets: Vec<f64>,
    vertices: Vec<DVector<f64>>,
    empty: bool,
}

enum Reduced {
    Empty,
    Nonempty {
        normals: Vec<DVector<f64>>,
        offsets: Vec<f64>,
        vertices: Vec<DVector<f64>>,
    },
}

struct Row {
    n: DVector<f64>,
    b: f64,
    theta: f64,
}

fn cross2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Intersection of two halfspace boundaries; `None` when nearly parallel.
fn solve2(n1: &DVector<f64>, b1: f64, n2: &DVector<f64>, b2: f64) -> Option<DVector<f64>> {
    let det = cross2(n1, n2);
    if det.abs() < PARALLEL_DET_EPS {
        return None;
    }
    let x = (b1 * n2[1] - b2 * n1[1]) / det;
    let y = (n1[0] * b2 - n2[0] * b1) / det;
    Some(DVector::from_column_slice(&[x, y]))
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 1 || dim == 2 {
        Ok(())
    } else {
        Err(Error::Unsupported(format!(
            "state dimension {dim} (only 1 and 2 are supported)"
        )))
    }
}

fn check_finite(values: impl IntoIterator<Item = f64>) -> Result<()> {
    for v in values {
        if !v.is_finite() {
            return Err(Error::Unsupported("non-finite value in input".into()));
        }
    }
    Ok(())
}

fn reduce_rows(dim: usize, rows: Vec<(DVector<f64>, f64)>, normalize: bool) -> Result<Reduced> {
    match dim {
        1 => reduce_1d(rows, normalize),
        2 => reduce_2d(rows, normalize),
        _ => Err(Error::Unsupported(format!("state dimension {dim}"))),
    }
}

fn reduce_1d(rows: Vec<(DVector<f64>, f64)>, normalize: bool) -> Result<Reduced> {
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for (n, b) in rows {
        let v = n[0];
        let len = v.abs();
        if len < ZERO_ROW_EPS {
            if b < -DEFAULT_GEOM_EPS {
                return Ok(Reduced::Empty);
            }
            continue;
        }
        let (nn, bb) = if normalize { (v / len, b / len) } else { (v, b) };
        if nn > 0.0 {
            hi = hi.min(bb);
        } else {
            lo = lo.max(-bb);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::UnboundedSet("interval missing a finite bound"));
    }
    if hi - lo < -DEFAULT_GEOM_EPS {
        return Ok(Reduced::Empty);
    }
    let (lo, hi) = if hi <= lo {
        let mid = 0.5 * (lo + hi);
        (mid, mid)
    } else {
        (lo, hi)
    };
    let vertices = if hi > lo {
        vec![
            DVector::from_column_slice(&[lo]),
            DVector::from_column_slice(&[hi]),
        ]
    } else {
        vec![DVector::from_column_slice(&[lo])]
    };
    Ok(Reduced::Nonempty {
        normals: vec![
            DVector::from_column_slice(&[-1.0]),
            DVector::from_column_slice(&[1.0]),
        ],
        offsets: vec![-lo, hi],
        vertices,
    })
}

fn reduce_2d(rows: Vec<(DVector<f64>, f64)>, normalize: bool) -> Result<Reduced> {
    use std::f64::consts::{PI, TAU};

    let mut kept: Vec<Row> = Vec::with_capacity(rows.len());
    for (mut n, mut b) in rows {
        let len = n.norm();
        if len < ZERO_ROW_EPS {
            if b < -DEFAULT_GEOM_EPS {
                return Ok(Reduced::Empty);
            }
            continue;
        }
        if normalize {
            n /= len;
            b /= len;
        }
        // +0.0 folds any -0.0 component so angle sorting is reproducible
        n[0] += 0.0;
        n[1] += 0.0;
        let theta = n[1].atan2(n[0]);
        kept.push(Row { n, b, theta });
    }
    if kept.is_empty() {
        return Err(Error::UnboundedSet("no effective halfspaces"));
    }

    kept.sort_by(|r, s| r.theta.total_cmp(&s.theta).then(r.b.total_cmp(&s.b)));

    // coalesce near-identical directions, keeping the tighter offset
    let mut merged: Vec<Row> = Vec::with_capacity(kept.len());
    for r in kept {
        match merged.last_mut() {
            Some(last) if r.theta - last.theta <= ANG_COALESCE_EPS => {
                if r.b < last.b {
                    *last = r;
                }
            }
            _ => merged.push(r),
        }
    }
    // the angle seam at +-pi can split one direction group in two
    if merged.len() >= 2 {
        let wrap = (merged[0].theta + TAU) - merged[merged.len() - 1].theta;
        if wrap <= ANG_COALESCE_EPS {
            if merged[0].b <= merged[merged.len() - 1].b {
                merged.pop();
            } else {
                merged.remove(0);
            }
        }
    }

    // opposite-direction pairs certify emptiness when their slab has negative width
    for i in 0..merged.len() {
        for j in (i + 1)..merged.len() {
            let d = merged[j].theta - merged[i].theta;
            if (d - PI).abs() <= 1e-9 && merged[i].b + merged[j].b < -DEFAULT_GEOM_EPS {
                return Ok(Reduced::Empty);
            }
        }
    }

    let max_gap = |list: &[&Row]| -> f64 {
        let mut g: f64 = 0.0;
        for i in 0..list.len() {
            let next = if i + 1 == list.len() {
                list[0].theta + TAU
            } else {
                list[i + 1].theta
            };
            g = g.max(next - list[i].theta);
        }
        g
    };
    {
        let all: Vec<&Row> = merged.iter().collect();
        if all.len() < 3 || max_gap(&all) >= PI - GAP_UNBOUNDED_MARGIN {
            return Err(Error::UnboundedSet("normals leave an open halfplane"));
        }
    }

    // drop rows implied by their angular neighbors; a row whose neighbors span
    // at least pi is the sole bound of some direction cone and stays
    let mut active: Vec<bool> = vec![true; merged.len()];
    loop {
        let idx: Vec<usize> = (0..merged.len()).filter(|&i| active[i]).collect();
        if idx.len() <= 3 {
            break;
        }
        let mut changed = false;
        for p in 0..idx.len() {
            let j = idx[p];
            let prev = &merged[idx[(p + idx.len() - 1) % idx.len()]];
            let next = &merged[idx[(p + 1) % idx.len()]];
            let mut span = next.theta - prev.theta;
            while span <= 0.0 {
                span += TAU;
            }
            if span >= PI - 1e-12 {
                continue;
            }
            if let Some(v) = solve2(&prev.n, prev.b, &next.n, next.b) {
                if merged[j].n.dot(&v) <= merged[j].b + REDUNDANCY_DROP_EPS {
                    active[j] = false;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }

    let final_rows: Vec<&Row> = merged
        .iter()
        .zip(&active)
        .filter_map(|(r, &a)| a.then_some(r))
        .collect();
    if final_rows.len() < 3 || max_gap(&final_rows) >= PI - GAP_UNBOUNDED_MARGIN {
        // only reachable for slivers whose boundedness sat inside the drop slack
        return Err(Error::UnboundedSet("set is not robustly bounded"));
    }

    let normals: Vec<DVector<f64>> = final_rows.iter().map(|r| r.n.clone()).collect();
    let offsets: Vec<f64> = final_rows.iter().map(|r| r.b).collect();
    let dedup = adjacency_vertices(&normals, &offsets);
    if dedup.is_empty() {
        return Ok(Reduced::Empty);
    }

    // every candidate vertex must satisfy every row, dropped ones included;
    // a macroscopic violation means the rows had no common point
    for v in &dedup {
        for r in &merged {
            if r.n.dot(v) > r.b + VALIDATION_SLACK * (1.0 + r.b.abs()) {
                return Ok(Reduced::Empty);
            }
        }
    }

    Ok(Reduced::Nonempty {
        normals,
        offsets,
        vertices: dedup,
    })
}

/// Vertex cache from canonical, cyclically angle-ordered rows: adjacent-row
/// intersections with consecutive and wraparound near-duplicates removed.
/// Every nondegenerate 2-D polytope derives its vertices through this single
/// path, so a set rebuilt from its serialized rows reproduces them bit for
/// bit.
fn adjacency_vertices(normals: &[DVector<f64>], offsets: &[f64]) -> Vec<DVector<f64>> {
    let m = normals.len();
    let mut vertices: Vec<DVector<f64>> = Vec::with_capacity(m);
    for i in 0..m {
        let j = (i + 1) % m;
        if let Some(v) = solve2(&normals[i], offsets[i], &normals[j], offsets[j]) {
            vertices.push(v);
        }
    }
    let mut dedup: Vec<DVector<f64>> = Vec::with_capacity(vertices.len());
    for v in vertices {
        let dup = dedup
            .last()
            .is_some_and(|u| (&v - u).amax() <= VERTEX_DEDUP_EPS);
        if !dup {
            dedup.push(v);
        }
    }
    if dedup.len() > 1 {
        let wrap_dup = (&dedup[dedup.len() - 1] - &dedup[0]).amax() <= VERTEX_DEDUP_EPS;
        if wrap_dup {
            dedup.pop();
        }
    }
    dedup
}

/// Convex hull of a 2-D point cloud, counterclockwise (monotone chain).
fn convex_hull_2d(pts: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut p: Vec<DVector<f64>> = pts.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup_by(|a, b| (&*a as &DVector<f64> - &*b).amax() <= 1e-12);
    if p.len() <= 2 {
        return p;
    }
    let cross = |o: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let chain = |iter: &mut dyn Iterator<Item = &DVector<f64>>| -> Vec<DVector<f64>> {
        let mut c: Vec<DVector<f64>> = Vec::new();
        for pt in iter {
            while c.len() >= 2 && cross(&c[c.len() - 2], &c[c.len() - 1], pt) <= HULL_CROSS_EPS {
                c.pop();
            }
            c.push(pt.clone());
        }
        c.pop(); // shared with the other chain's start
        c
    };
    let mut hull = chain(&mut p.iter());
    hull.extend(chain(&mut p.iter().rev()));
    hull
}

impl Polytope {
    /// The empty set in the given dimension.
    pub fn empty(dim: usize) -> Self {
        assert!(dim == 1 || dim == 2, "unsupported dimension {dim}");
        Polytope {
            dim,
            normals: Vec::new(),
            offsets: Vec::new(),
            vertices: Vec::new(),
            empty: true,
        }
    }

    fn from_reduced(dim: usize, r: Reduced) -> Self {
        match r {
            Reduced::Empty => Polytope::empty(dim),
            Reduced::Nonempty {
                normals,
                offsets,
                vertices,
            } => Polytope {
                dim,
                normals,
                offsets,
                vertices,
                empty: false,
            },
        }
    }

    /// Intersection of halfspaces `normals[i]·x <= offsets[i]`, reduced to
    /// canonical form. Errors if the intersection is unbounded or the inputs
    /// are malformed; an empty intersection is a valid result.
    pub fn from_halfspaces(normals: Vec<DVector<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::Unsupported(
                "normals and offsets must have equal length".into(),
            ));
        }
        if normals.is_empty() {
            return Err(Error::UnboundedSet("no halfspaces given"));
        }
        let dim = normals[0].len();
        check_dim(dim)?;
        for n in &normals {
            if n.len() != dim {
                return Err(Error::Unsupported("mixed normal dimensions".into()));
            }
            check_finite(n.iter().copied())?;
        }
        check_finite(offsets.iter().copied())?;
        let rows = normals.into_iter().zip(offsets).collect();
        Ok(Polytope::from_reduced(dim, reduce_rows(dim, rows, true)?))
    }

    /// Convex hull of a finite point set.
    pub fn from_vertices(dim: usize, pts: &[DVector<f64>]) -> Result<Self> {
        check_dim(dim)?;
        if pts.is_empty() {
            return Ok(Polytope::empty(dim));
        }
        for p in pts {
            if p.len() != dim {
                return Err(Error::Unsupported("mixed point dimensions".into()));
            }
            check_finite(p.iter().copied())?;
        }
        if dim == 1 {
            let lo = pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let hi = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            return Polytope::interval(lo, hi);
        }
        let hull = convex_hull_2d(pts);
        let rows: Vec<(DVector<f64>, f64)> = match hull.len() {
            1 => {
                let p = &hull[0];
                vec![
                    (DVector::from_column_slice(&[1.0, 0.0]), p[0]),
                    (DVector::from_column_slice(&[0.0, 1.0]), p[1]),
                    (DVector::from_column_slice(&[-1.0, 0.0]), -p[0]),
                    (DVector::from_column_slice(&[0.0, -1.0]), -p[1]),
                ]
            }
            2 => {
                let (p, q) = (&hull[0], &hull[1]);
                let e = q - p;
                let u = &e / e.norm();
                let n = DVector::from_column_slice(&[u[1], -u[0]]);
                vec![
                    (n.clone(), n.dot(p)),
                    (-n.clone(), -(n.dot(p))),
                    (u.clone(), u.dot(q)),
                    (-u.clone(), -(u.dot(p))),
                ]
            }
            _ => hull
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let q = &hull[(i + 1) % hull.len()];
                    let e = q - p;
                    let n = DVector::from_column_slice(&[e[1], -e[0]]);
                    let b = n.dot(p);
                    (n, b)
                })
                .collect(),
        };
        match reduce_rows(dim, rows, true)? {
            Reduced::Empty => Err(Error::InternalInconsistency(
                "hull of a point set reduced to empty".into(),
            )),
            r => Ok(Polytope::from_reduced(dim, r)),
        }
    }

    /// Closed interval `[lo, hi]` as a 1-D polytope; empty when `lo > hi`.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        check_finite([lo, hi])?;
        let rows = vec![
            (DVector::from_column_slice(&[-1.0]), -lo),
            (DVector::from_column_slice(&[1.0]), hi),
        ];
        Ok(Polytope::from_reduced(1, reduce_rows(1, rows, true)?))
    }

    /// Axis-aligned box from per-coordinate bounds; empty if any `lo > hi`.
    pub fn axis_box(bounds: &[(f64, f64)]) -> Result<Self> {
        let dim = bounds.len();
        check_dim(dim)?;
        check_finite(bounds.iter().flat_map(|&(lo, hi)| [lo, hi]))?;
        if dim == 1 {
            return Polytope::interval(bounds[0].0, bounds[0].1);
        }
        let rows = vec![
            (DVector::from_column_slice(&[1.0, 0.0]), bounds[0].1),
            (DVector::from_column_slice(&[-1.0, 0.0]), -bounds[0].0),
            (DVector::from_column_slice(&[0.0, 1.0]), bounds[1].1),
            (DVector::from_column_slice(&[0.0, -1.0]), -bounds[1].0),
        ];
        Ok(Polytope::from_reduced(2, reduce_rows(2, rows, true)?))
    }

    /// Origin-centered cube `[-half, half]^dim`.
    pub fn cube(dim: usize, half: f64) -> Result<Self> {
        let bounds: Vec<(f64, f64)> = (0..dim).map(|_| (-half, half)).collect();
        Polytope::axis_box(&bounds)
    }

    /// Single point as a degenerate polytope.
    pub fn singleton(x: &DVector<f64>) -> Result<Self> {
        Polytope::from_vertices(x.len(), std::slice::from_ref(x))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.empty
    }

    /// Nonempty but without interior: a point, or a 2-D set of negligible area.
    pub fn is_degenerate(&self) -> bool {
        if self.empty {
            return false;
        }
        match self.dim {
            1 => self.vertices.len() < 2,
            _ => self.vertices.len() < 3 || self.area() <= AREA_DEGENERATE_EPS,
        }
    }

    /// Cached vertices in counterclockwise order (2-D) or ascending (1-D).
    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn normals(&self) -> &[DVector<f64>] {
        &self.normals
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn num_halfspaces(&self) -> usize {
        self.normals.len()
    }

    /// Shoelace area (2-D); zero for 1-D sets and the empty set.
    pub fn area(&self) -> f64 {
        if self.dim != 2 || self.vertices.len() < 3 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..self.vertices.len() {
            let a = &self.vertices[i];
            let b = &self.vertices[(i + 1) % self.vertices.len()];
            acc += a[0] * b[1] - b[0] * a[1];
        }
        0.5 * acc.abs()
    }

    /// Membership within slack `eps` on every halfspace.
    pub fn contains(&self, x: &DVector<f64>, eps: f64) -> bool {
        assert_eq!(x.len(), self.dim, "point dimension mismatch");
        if self.empty {
            return false;
        }
        self.normals
            .iter()
            .zip(&self.offsets)
            .all(|(n, &b)| n.dot(x) <= b + eps)
    }

    /// Support value `max_{x in P} a·x`; the direction is used as given.
    pub fn support(&self, a: &DVector<f64>) -> Result<f64> {
        assert_eq!(a.len(), self.dim, "direction dimension mismatch");
        check_finite(a.iter().copied())?;
        if self.empty {
            return Err(Error::EmptySet("support of the empty set"));
        }
        Ok(self
            .vertices
            .iter()
            .map(|v| a.dot(v))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Minkowski sum `{p + q}` via the hull of pairwise vertex sums.
    pub fn minkowski_sum(&self, q: &Polytope) -> Self {
        assert_eq!(self.dim, q.dim, "operand dimension mismatch");
        if self.empty || q.empty {
            return Polytope::empty(self.dim);
        }
        let sums: Vec<DVector<f64>> = self
            .vertices
            .iter()
            .flat_map(|a| q.vertices.iter().map(move |b| a + b))
            .collect();
        Polytope::from_vertices(self.dim, &sums)
            .expect("sum of bounded polytopes is a bounded polytope")
    }

    /// Pontryagin difference `{x : x + q in P for all q in Q}`: every offset
    /// is tightened by the support of `Q` in its normal direction. The result
    /// may be empty or degenerate; `Q` must be nonempty.
    pub fn pontryagin_diff(&self, q: &Polytope) -> Self {
        assert_eq!(self.dim, q.dim, "operand dimension mismatch");
        assert!(!q.empty, "erosion by the empty set is undefined");
        if self.empty {
            return Polytope::empty(self.dim);
        }
        let rows: Vec<(DVector<f64>, f64)> = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, &b)| {
                let s = q.support(n).expect("q is nonempty");
                (n.clone(), b - s)
            })
            .collect();
        let red = reduce_rows(self.dim, rows, false).expect("erosion preserves boundedness");
        Polytope::from_reduced(self.dim, red)
    }

    /// Image `{M x : x in P}` as the hull of mapped vertices.
    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Self> {
        assert_eq!(m.ncols(), self.dim, "matrix/polytope dimension mismatch");
        let out = m.nrows();
        check_dim(out)?;
        if self.empty {
            return Ok(Polytope::empty(out));
        }
        let mapped: Vec<DVector<f64>> = self.vertices.iter().map(|v| m * v).collect();
        Polytope::from_vertices(out, &mapped)
    }

    /// Preimage `{x : M x in P}`: rows become `(n·M, b)`, re-normalized and
    /// reduced. Errors when the preimage is unbounded (rank-deficient `M`).
    pub fn linear_preimage(&self, m: &DMatrix<f64>) -> Result<Self> {
        assert_eq!(m.nrows(), self.dim, "matrix/polytope dimension mismatch");
        let out = m.ncols();
        check_dim(out)?;
        if self.empty {
            return Ok(Polytope::empty(out));
        }
        let rows: Vec<(DVector<f64>, f64)> = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, &b)| ((m.transpose() * n), b))
            .collect();
        Ok(Polytope::from_reduced(out, reduce_rows(out, rows, true)?))
    }

    /// Intersection of two polytopes.
    pub fn intersection(&self, q: &Polytope) -> Self {
        assert_eq!(self.dim, q.dim, "operand dimension mismatch");
        if self.empty || q.empty {
            return Polytope::empty(self.dim);
        }
        let rows: Vec<(DVector<f64>, f64)> = self
            .normals
            .iter()
            .cloned()
            .zip(self.offsets.iter().copied())
            .chain(q.normals.iter().cloned().zip(q.offsets.iter().copied()))
            .collect();
        let red =
            reduce_rows(self.dim, rows, false).expect("intersection of bounded sets is bounded");
        Polytope::from_reduced(self.dim, red)
    }

    /// Translate by `t`: offsets shift by `n·t`. Nondegenerate sets re-derive
    /// their vertices from the shifted rows so the cache stays a pure
    /// function of the halfspace description; degenerate sets translate their
    /// stored points directly.
    pub fn translate(&self, t: &DVector<f64>) -> Self {
        assert_eq!(t.len(), self.dim, "translation dimension mismatch");
        if self.empty {
            return self.clone();
        }
        let offsets: Vec<f64> = self
            .normals
            .iter()
            .zip(&self.offsets)
            .map(|(n, &b)| b + n.dot(t))
            .collect();
        let vertices = if self.dim == 2 && self.vertices.len() >= 3 {
            adjacency_vertices(&self.normals, &offsets)
        } else {
            self.vertices.iter().map(|v| v + t).collect()
        };
        Polytope {
            dim: self.dim,
            normals: self.normals.clone(),
            offsets,
            vertices,
            empty: false,
        }
    }

    /// Scale about the origin by `alpha > 0`. Vertices are re-derived from
    /// the scaled rows for nondegenerate sets, as in [`Polytope::translate`].
    pub fn scale(&self, alpha: f64) -> Self {
        assert!(
            alpha.is_finite() && alpha > 0.0,
            "scale factor must be positive"
        );
        if self.empty {
            return self.clone();
        }
        let offsets: Vec<f64> = self.offsets.iter().map(|b| b * alpha).collect();
        let vertices = if self.dim == 2 && self.vertices.len() >= 3 {
            adjacency_vertices(&self.normals, &offsets)
        } else {
            self.vertices.iter().map(|v| v * alpha).collect()
        };
        Polytope {
            dim: self.dim,
            normals: self.normals.clone(),
            offsets,
            vertices,
            empty: false,
        }
    }

    /// True iff every vertex of `self` satisfies every halfspace of `q`
    /// within `eps`. The empty set is a subset of everything.
    pub fn is_subset(&self, q: &Polytope, eps: f64) -> bool {
        assert_eq!(self.dim, q.dim, "operand dimension mismatch");
        if self.empty {
            return true;
        }
        if q.empty {
            return false;
        }
        self.vertices.iter().all(|v| q.contains(v, eps))
    }

    /// Mutual inclusion within `eps`.
    pub fn same_set(&self, q: &Polytope, eps: f64) -> bool {
        self.is_subset(q, eps) && q.is_subset(self, eps)
    }

    /// Largest absolute vertex coordinate; 0 for the empty set. Useful for
    /// scaling tolerances: float noise in vertex computations grows with the
    /// coordinate magnitude, so near-equality checks on large sets must widen
    /// accordingly.
    pub fn bounding_radius(&self) -> f64 {
        self.vertices
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |acc, &c| acc.max(c.abs()))
    }

    /// Mean of the vertex set; `None` for the empty set.
    pub fn vertex_centroid(&self) -> Option<DVector<f64>> {
        if self.empty {
            return None;
        }
        let mut c = DVector::zeros(self.dim);
        for v in &self.vertices {
            c += v;
        }
        Some(c / self.vertices.len() as f64)
    }

    /// Serialize as a text block: a header line `polytope v1 <rows>` followed
    /// by one `n1 n2 b` line per halfspace, full-precision floats. Only
    /// nonempty 2-D sets are serializable.
    pub fn write_block(&self, out: &mut String) -> Result<()> {
        if self.empty || self.dim != 2 {
            return Err(Error::Unsupported(
                "only nonempty 2-D polytopes serialize".into(),
            ));
        }
        out.push_str(&format!("polytope v1 {}\n", self.normals.len()));
        for (n, b) in self.normals.iter().zip(&self.offsets) {
            out.push_str(&format!(
                "{} {} {}\n",
                fmt_f64(n[0]),
                fmt_f64(n[1]),
                fmt_f64(*b)
            ));
        }
        Ok(())
    }

    /// Parse one block written by [`Polytope::write_block`] from a stream of
    /// 1-based numbered lines. Rows are trusted bit-for-bit (no
    /// re-normalization) but must already be canonical: unit normals, sorted,
    /// irredundant, bounded. Vertices are re-derived from the rows.
    pub fn read_block<'a, I>(lines: &mut I) -> Result<Self>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let (lno, header) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: "missing polytope header".into(),
            })?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 3 || parts[0] != "polytope" || parts[1] != "v1" {
            return Err(Error::Parse {
                line: lno,
                msg: format!("expected `polytope v1 <rows>`, got `{header}`"),
            });
        }
        let nrows: usize = parts[2].parse().map_err(|_| Error::Parse {
            line: lno,
            msg: format!("invalid row count `{}`", parts[2]),
        })?;
        let mut rows: Vec<(DVector<f64>, f64)> = Vec::with_capacity(nrows);
        for _ in 0..nrows {
            let (lno, line) = lines.next().ok_or_else(|| Error::Parse {
                line: lno,
                msg: "unexpected end of input inside polytope block".into(),
            })?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    line: lno,
                    msg: format!("expected 3 fields `n1 n2 b`, got {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 3];
            for (slot, f) in vals.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| Error::Parse {
                    line: lno,
                    msg: format!("invalid float `{f}`"),
                })?;
            }
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: lno,
                    msg: "non-finite value".into(),
                });
            }
            let n = DVector::from_column_slice(&vals[0..2]);
            if (n.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::Parse {
                    line: lno,
                    msg: "normal is not unit length".into(),
                });
            }
            rows.push((n, vals[2]));
        }
        let count = rows.len();
        match reduce_rows(2, rows, false)? {
            Reduced::Nonempty {
                normals,
                offsets,
                vertices,
            } if normals.len() == count => Ok(Polytope {
                dim: 2,
                normals,
                offsets,
                vertices,
                empty: false,
            }),
            _ => Err(Error::InternalInconsistency(
                "stored polytope rows are not reduced and consistent".into(),
            )),
        }
    }
}

/// Full-precision float formatting: 17 significant digits round-trip exactly.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn v2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_column_slice(&[x, y])
    }

    fn unit_box() -> Polytope {
        Polytope::cube(2, 1.0).unwrap()
    }

    fn unit_triangle() -> Polytope {
        Polytope::from_vertices(2, &[v2(0.0, 0.0), v2(1.0, 0.0), v2(0.0, 1.0)]).unwrap()
    }

    #[test]
    fn box_membership_with_eps() {
        let p = unit_box();
        assert!(p.contains(&v2(0.5, -0.5), 1e-9));
        assert!(!p.contains(&v2(1.0 + 2e-9, 0.0), 1e-9));
        assert!(p.contains(&v2(1.0 + 0.5e-9, 0.0), 1e-9));
    }

    #[test]
    fn support_of_box_and_triangle() {
        let p = unit_box();
        assert_eq!(p.support(&v2(0.6, 0.8)).unwrap(), 1.4);
        assert_eq!(p.support(&v2(1.0, 0.0)).unwrap(), 1.0);
        let t = unit_triangle();
        assert_eq!(t.support(&v2(1.0, 1.0)).unwrap(), 1.0);
    }

    #[test]
    fn support_of_empty_set_errors() {
        let e = Polytope::empty(2);
        assert!(matches!(e.support(&v2(1.0, 0.0)), Err(Error::EmptySet(_))));
    }

    #[test]
    fn minkowski_sum_of_boxes() {
        let p = unit_box();
        let q = Polytope::cube(2, 0.5).unwrap();
        let s = p.minkowski_sum(&q);
        assert!(s.same_set(&Polytope::cube(2, 1.5).unwrap(), 1e-12));
    }

    #[test]
    fn minkowski_sum_with_singleton_translates() {
        let p = unit_triangle();
        let s = p.minkowski_sum(&Polytope::singleton(&v2(2.0, -1.0)).unwrap());
        let expected = p.translate(&v2(2.0, -1.0));
        assert!(s.same_set(&expected, 1e-12));
    }

    #[test]
    fn minkowski_sum_triangle_segment() {
        let t = unit_triangle();
        let seg = Polytope::from_vertices(2, &[v2(-1.0, 0.0), v2(1.0, 0.0)]).unwrap();
        let s = t.minkowski_sum(&seg);
        let expected = Polytope::from_vertices(
            2,
            &[v2(-1.0, 0.0), v2(2.0, 0.0), v2(1.0, 1.0), v2(-1.0, 1.0)],
        )
        .unwrap();
        assert!(s.same_set(&expected, 1e-12));
        assert_eq!(s.vertices().len(), 4);
    }

    #[test]
    fn erosion_of_box_by_box() {
        let p = unit_box();
        let q = Polytope::cube(2, 0.12).unwrap();
        let d = p.pontryagin_diff(&q);
        assert!(d.same_set(&Polytope::cube(2, 0.88).unwrap(), 1e-12));
    }

    #[test]
    fn erosion_by_origin_is_identity() {
        let p = unit_triangle();
        let origin = Polytope::singleton(&v2(0.0, 0.0)).unwrap();
        assert!(p.pontryagin_diff(&origin).same_set(&p, 1e-12));
    }

    #[test]
    fn erosion_can_be_empty() {
        let p = Polytope::cube(2, 0.1).unwrap();
        let q = Polytope::cube(2, 0.2).unwrap();
        assert!(p.pontryagin_diff(&q).is_empty());
    }

    #[test]
    fn erosion_by_itself_is_degenerate_not_empty() {
        let p = Polytope::cube(2, 0.12).unwrap();
        let d = p.pontryagin_diff(&p);
        assert!(!d.is_empty());
        assert!(d.is_degenerate());
        assert!(d.contains(&v2(0.0, 0.0), 1e-9));
    }

    #[test]
    fn preimage_under_scaling_matrix() {
        let p = unit_box();
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 2.0]);
        let pre = p.linear_preimage(&m).unwrap();
        assert!(pre.same_set(&Polytope::cube(2, 0.5).unwrap(), 1e-12));
        let id = DMatrix::identity(2, 2);
        assert!(p.linear_preimage(&id).unwrap().same_set(&p, 1e-12));
    }

    #[test]
    fn preimage_under_plant_matrix_matches_sampling() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0975, 0.0, 0.9512]);
        let p = unit_box();
        let pre = p.linear_preimage(&a).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let mut checked = 0usize;
        while checked < 10_000 {
            let x = v2(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let image_in = p.contains(&(&a * &x), 1e-9);
            let margin = pre
                .normals()
                .iter()
                .zip(pre.offsets())
                .map(|(n, &b)| b - n.dot(&x))
                .fold(f64::INFINITY, f64::min);
            if margin.abs() <= 1e-6 {
                continue; // boundary band
            }
            assert_eq!(margin > 0.0, image_in, "x = {x:?}");
            checked += 1;
        }
    }

    #[test]
    fn scaling_boxes() {
        let d = Polytope::cube(2, 0.12).unwrap();
        assert!(d.scale(2.0).same_set(&Polytope::cube(2, 0.24).unwrap(), 1e-12));
        assert!(d.scale(8.0).same_set(&Polytope::cube(2, 0.96).unwrap(), 1e-12));
    }

    #[test]
    fn subset_checks() {
        let small = Polytope::cube(2, 0.5).unwrap();
        let big = unit_box();
        assert!(small.is_subset(&big, 1e-9));
        assert!(!big.is_subset(&small, 1e-9));
        let shifted = big.translate(&v2(1e-10, 0.0));
        assert!(big.is_subset(&shifted, 1e-9));
    }

    #[test]
    fn empty_set_behaviors() {
        let e = Polytope::empty(2);
        let p = unit_box();
        assert!(e.is_empty());
        assert!(!e.contains(&v2(0.0, 0.0), 1e-9));
        assert!(e.is_subset(&p, 1e-9));
        assert!(!p.is_subset(&e, 1e-9));
        assert!(e.minkowski_sum(&p).is_empty());
        assert!(p.intersection(&e).is_empty());
    }

    #[test]
    fn unbounded_constructions_error() {
        let single = Polytope::from_halfspaces(vec![v2(1.0, 0.0)], vec![1.0]);
        assert!(matches!(single, Err(Error::UnboundedSet(_))));
        let slab = Polytope::from_halfspaces(vec![v2(1.0, 0.0), v2(-1.0, 0.0)], vec![1.0, 1.0]);
        assert!(matches!(slab, Err(Error::UnboundedSet(_))));
        let wedge = Polytope::from_halfspaces(
            vec![v2(1.0, 0.0), v2(0.0, 1.0), v2(0.7, 0.7)],
            vec![1.0, 1.0, 1.0],
        );
        assert!(matches!(wedge, Err(Error::UnboundedSet(_))));
    }

    #[test]
    fn infeasible_halfspaces_give_empty() {
        // x <= -1 and x >= 2, still bounded in y by two more rows
        let p = Polytope::from_halfspaces(
            vec![v2(1.0, 0.0), v2(-1.0, 0.0), v2(0.0, 1.0), v2(0.0, -1.0)],
            vec![-1.0, -2.0, 1.0, 1.0],
        )
        .unwrap();
        assert!(p.is_empty());
    }

    #[test]
    fn nonfinite_inputs_rejected() {
        let r = Polytope::from_halfspaces(vec![v2(f64::NAN, 0.0)], vec![1.0]);
        assert!(matches!(r, Err(Error::Unsupported(_))));
        let r = Polytope::from_vertices(2, &[v2(f64::INFINITY, 0.0)]);
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn redundant_rows_are_dropped() {
        let mut normals = vec![v2(1.0, 0.0), v2(-1.0, 0.0), v2(0.0, 1.0), v2(0.0, -1.0)];
        let mut offsets = vec![1.0, 1.0, 1.0, 1.0];
        normals.push(v2(1.0, 1.0));
        offsets.push(5.0); // far outside the box
        let p = Polytope::from_halfspaces(normals, offsets).unwrap();
        assert_eq!(p.num_halfspaces(), 4);
        assert!(p.same_set(&unit_box(), 1e-12));
    }

    #[test]
    fn singleton_roundtrip() {
        let s = Polytope::singleton(&v2(0.3, -0.7)).unwrap();
        assert!(!s.is_empty());
        assert!(s.is_degenerate());
        assert_eq!(s.vertices().len(), 1);
        assert!(s.contains(&v2(0.3, -0.7), 1e-12));
        assert!(!s.contains(&v2(0.3, -0.699), 1e-9));
    }

    #[test]
    fn segment_roundtrip() {
        let seg = Polytope::from_vertices(2, &[v2(1.0, 1.0), v2(-1.0, 0.0)]).unwrap();
        assert!(seg.is_degenerate());
        assert_eq!(seg.vertices().len(), 2);
        assert!(seg.contains(&v2(0.0, 0.5), 1e-9));
        assert!(!seg.contains(&v2(0.0, 0.6), 1e-9));
    }

    #[test]
    fn collinear_points_hull_to_segment() {
        let pts = [v2(0.0, 0.0), v2(0.5, 0.5), v2(1.0, 1.0), v2(0.25, 0.25)];
        let seg = Polytope::from_vertices(2, &pts).unwrap();
        assert_eq!(seg.vertices().len(), 2);
        assert!(seg.contains(&v2(0.75, 0.75), 1e-9));
    }

    #[test]
    fn one_dimensional_interval_ops() {
        let a = Polytope::interval(-1.0, 2.0).unwrap();
        let b = Polytope::interval(-0.5, 0.5).unwrap();
        assert!(a.minkowski_sum(&b).same_set(&Polytope::interval(-1.5, 2.5).unwrap(), 1e-12));
        assert!(a.pontryagin_diff(&b).same_set(&Polytope::interval(-0.5, 1.5).unwrap(), 1e-12));
        assert!(Polytope::interval(1.0, -1.0).unwrap().is_empty());
        assert_eq!(a.support(&DVector::from_column_slice(&[-1.0])).unwrap(), 1.0);
        let sing = Polytope::interval(0.25, 0.25).unwrap();
        assert!(sing.is_degenerate());
        assert!(sing.contains(&DVector::from_column_slice(&[0.25]), 0.0));
    }

    #[test]
    fn serialization_roundtrips_bit_exactly() {
        let p = Polytope::from_vertices(
            2,
            &[v2(0.1, 0.2), v2(1.7, -0.3), v2(0.9, 1.4), v2(-0.6, 0.8)],
        )
        .unwrap();
        let mut s = String::new();
        p.write_block(&mut s).unwrap();
        let mut lines = s.lines().enumerate().map(|(i, l)| (i + 1, l));
        let q = Polytope::read_block(&mut lines).unwrap();
        assert_eq!(p.num_halfspaces(), q.num_halfspaces());
        for (n1, n2) in p.normals().iter().zip(q.normals()) {
            assert_eq!(n1[0].to_bits(), n2[0].to_bits());
            assert_eq!(n1[1].to_bits(), n2[1].to_bits());
        }
        for (b1, b2) in p.offsets().iter().zip(q.offsets()) {
            assert_eq!(b1.to_bits(), b2.to_bits());
        }
        for (u, w) in p.vertices().iter().zip(q.vertices()) {
            assert_eq!(u[0].to_bits(), w[0].to_bits());
            assert_eq!(u[1].to_bits(), w[1].to_bits());
        }
    }

    #[test]
    fn read_block_reports_line_numbers() {
        let text = "polytope v1 2\n1 0 1\nnot a float here\n";
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match Polytope::read_block(&mut lines) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn minkowski_membership_agrees_with_grid_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut disagreements = 0usize;
        let trials = 1000usize;
        for _ in 0..trials {
            let p = Polytope::axis_box(&[
                (rng.gen_range(-1.0..0.0), rng.gen_range(0.1..1.5)),
                (rng.gen_range(-1.5..0.0), rng.gen_range(0.1..1.0)),
            ])
            .unwrap();
            let q = random_hull(&mut rng, 5);
            let s = p.minkowski_sum(&q);
            let x = v2(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
            let ours = s.contains(&x, 1e-9);

            // grid over q's bounding box, filtered to q, testing x - q in p
            let (qlo, qhi) = bounding_box(&q);
            let steps = 120;
            let mut best = f64::NEG_INFINITY;
            for i in 0..=steps {
                for j in 0..=steps {
                    let qx = qlo[0] + (qhi[0] - qlo[0]) * i as f64 / steps as f64;
                    let qy = qlo[1] + (qhi[1] - qlo[1]) * j as f64 / steps as f64;
                    let qpt = v2(qx, qy);
                    if !q.contains(&qpt, 1e-9) {
                        continue;
                    }
                    let m = p
                        .normals()
                        .iter()
                        .zip(p.offsets())
                        .map(|(n, &b)| b - n.dot(&(&x - &qpt)))
                        .fold(f64::INFINITY, f64::min);
                    best = best.max(m);
                }
            }
            let h = ((qhi[0] - qlo[0]).max(qhi[1] - qlo[1])) / steps as f64;
            let band = 3.0 * h.max(1e-6);
            if best.abs() <= band {
                continue; // within grid resolution of the boundary
            }
            if ours != (best > 0.0) {
                disagreements += 1;
            }
        }
        assert!(
            disagreements <= trials / 1000,
            "{disagreements} grid-oracle disagreements"
        );
    }

    fn bounding_box(p: &Polytope) -> (DVector<f64>, DVector<f64>) {
        let mut lo = v2(f64::INFINITY, f64::INFINITY);
        let mut hi = v2(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in p.vertices() {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        (lo, hi)
    }

    fn random_hull(rng: &mut ChaCha12Rng, npts: usize) -> Polytope {
        loop {
            let pts: Vec<DVector<f64>> = (0..npts)
                .map(|_| v2(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            let p = Polytope::from_vertices(2, &pts).unwrap();
            if !p.is_degenerate() {
                return p;
            }
        }
    }

    proptest! {
        #[test]
        fn erosion_then_sum_is_contained(
            cx in -1.0f64..1.0, cy in -1.0f64..1.0,
            hx in 0.3f64..1.5, hy in 0.3f64..1.5,
            qx in 0.01f64..0.25, qy in 0.01f64..0.25,
        ) {
            let p = Polytope::axis_box(&[(cx - hx, cx + hx), (cy - hy, cy + hy)]).unwrap();
            let q = Polytope::cube(2, qx.min(qy)).unwrap();
            let eroded = p.pontryagin_diff(&q);
            prop_assert!(!eroded.is_empty());
            prop_assert!(eroded.minkowski_sum(&q).is_subset(&p, 1e-9));
        }

        #[test]
        fn erosion_then_sum_is_contained_for_hulls(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_hull(&mut rng, 6).scale(3.0);
            let q = random_hull(&mut rng, 4).scale(0.2);
            let eroded = p.pontryagin_diff(&q);
            prop_assert!(eroded.minkowski_sum(&q).is_subset(&p, 1e-7));
        }

        #[test]
        fn support_is_positively_homogeneous_and_subadditive(
            seed in 0u64..500, lam in 0.01f64..10.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_hull(&mut rng, 6);
            let a = v2(ax, ay);
            let b = v2(bx, by);
            let ha = p.support(&a).unwrap();
            let hb = p.support(&b).unwrap();
            let hlam = p.support(&(&a * lam)).unwrap();
            prop_assert!((hlam - lam * ha).abs() <= 1e-9 * (1.0 + hlam.abs()));
            let hsum = p.support(&(&a + &b)).unwrap();
            prop_assert!(hsum <= ha + hb + 1e-9);
        }

        #[test]
        fn reduction_is_idempotent(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_hull(&mut rng, 7);
            let again = Polytope::from_halfspaces(
                p.normals().to_vec(),
                p.offsets().to_vec(),
            ).unwrap();
            prop_assert_eq!(p.vertices().len(), again.vertices().len());
            for (u, w) in p.vertices().iter().zip(again.vertices()) {
                prop_assert!((u - w).amax() < 1e-12);
            }
        }

        #[test]
        fn scaling_is_monotone_for_symmetric_sets(
            seed in 0u64..500, a1 in 0.1f64..4.0, a2 in 0.1f64..4.0,
        ) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let h = random_hull(&mut rng, 5);
            // symmetrize so the origin is inside and scaling nests
            let pts: Vec<DVector<f64>> = h.vertices().iter()
                .flat_map(|v| [v.clone(), -v.clone()])
                .collect();
            let p = Polytope::from_vertices(2, &pts).unwrap();
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            prop_assert!(p.scale(lo).is_subset(&p.scale(hi), 1e-9));
        }

        #[test]
        fn sum_contains_both_translates(seed in 0u64..500) {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let p = random_hull(&mut rng, 5);
            let q = random_hull(&mut rng, 5);
            let s = p.minkowski_sum(&q);
            for v in q.vertices() {
                prop_assert!(p.translate(v).is_subset(&s, 1e-9));
            }
        }
    }
}
