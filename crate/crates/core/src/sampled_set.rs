//! Weighted point samples standing in for `(Sigma, H^m)`: shape generators,
//! CSV/OBJ ingestion, radius queries and the sample diameter.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphpatch::{GraphFunction, GraphPatch};
use crate::grassmann::Plane;
use crate::kdtree::{Ball, KdTree};
use crate::linalg::{compensated_sum, dist_sq, dot, norm};

/// Sample size up to which `sample_diam` is exact.
pub const EXACT_DIAM_LIMIT: usize = 4096;

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653; // pi * (3 - sqrt 5)

#[derive(Debug, Clone)]
pub struct WeightedSample {
    ambient_dim: usize,
    intrinsic_dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    tangents: Option<Vec<Plane>>,
    index: KdTree,
}

/// Result of `sample_diam`; `exact == false` means a lower estimate within
/// a factor `max(1/2, 1/sqrt(n))` of the true diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DiamEstimate {
    pub value: f64,
    pub exact: bool,
}

impl WeightedSample {
    /// `points` is flat with stride `ambient_dim`.
    pub fn new(
        ambient_dim: usize,
        intrinsic_dim: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        tangents: Option<Vec<Plane>>,
    ) -> Result<Self> {
        if intrinsic_dim == 0 || intrinsic_dim >= ambient_dim {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= m < n, got m = {intrinsic_dim}, n = {ambient_dim}"
            )));
        }
        if !points.len().is_multiple_of(ambient_dim) {
            return Err(Error::DimensionMismatch {
                expected: ambient_dim,
                actual: points.len() % ambient_dim,
            });
        }
        let count = points.len() / ambient_dim;
        if count < intrinsic_dim + 2 {
            return Err(Error::TooFewPoints { needed: intrinsic_dim + 2, found: count });
        }
        if weights.len() != count {
            return Err(Error::Inconsistent(format!(
                "{} weights for {} points",
                weights.len(),
                count
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "weight {} of point {i} is not a positive number",
                weights[i]
            )));
        }
        if let Some(i) = points.iter().position(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite coordinate in point {}",
                i / ambient_dim
            )));
        }
        if let Some(ts) = &tangents {
            if ts.len() != count {
                return Err(Error::Inconsistent(format!(
                    "{} tangent planes for {} points",
                    ts.len(),
                    count
                )));
            }
            for t in ts {
                if t.dim() != intrinsic_dim || t.ambient_dim() != ambient_dim {
                    return Err(Error::InvalidPlane(format!(
                        "tangent plane of dimension {} in R^{}, expected {} in R^{}",
                        t.dim(),
                        t.ambient_dim(),
                        intrinsic_dim,
                        ambient_dim
                    )));
                }
            }
        }
        let index = KdTree::build(&points, ambient_dim);
        Ok(Self { ambient_dim, intrinsic_dim, points, weights, tangents, index })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    pub fn points_flat(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tangents(&self) -> Option<&[Plane]> {
        self.tangents.as_deref()
    }

    pub fn total_measure(&self) -> f64 {
        compensated_sum(self.weights.iter().copied())
    }

    /// `(total measure / N)^(1/m)`: the side of the cell each sample point
    /// stands for.
    pub fn mean_spacing(&self) -> f64 {
        (self.total_measure() / self.len() as f64).powf(1.0 / self.intrinsic_dim as f64)
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }

    /// Indices with `|p_i - x| < r`, ascending.
    pub fn neighbors_within(&self, x: &[f64], r: f64) -> Vec<usize> {
        self.index.within(&self.points, x, r, Ball::Open)
    }

    /// Indices with `|p_i - x| <= r`, ascending.
    pub fn neighbors_within_closed(&self, x: &[f64], r: f64) -> Vec<usize> {
        self.index.within(&self.points, x, r, Ball::Closed)
    }

    pub fn for_each_within<F: FnMut(usize, f64)>(&self, x: &[f64], r: f64, ball: Ball, f: F) {
        self.index.for_each_within(&self.points, x, r, ball, f)
    }

    /// Total weight of the points in the open ball, summed in index order.
    pub fn ball_weight(&self, x: &[f64], r: f64) -> f64 {
        compensated_sum(self.neighbors_within(x, r).into_iter().map(|i| self.weights[i]))
    }

    pub fn knn(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.index.knn(&self.points, x, k)
    }

    pub fn nearest_filtered<P: Fn(usize) -> bool>(&self, x: &[f64], keep: P) -> Option<(usize, f64)> {
        self.index.nearest_filtered(&self.points, x, keep)
    }

    pub fn sample_diam(&self) -> DiamEstimate {
        let n = self.len();
        if n <= EXACT_DIAM_LIMIT {
            let mut best = 0.0_f64;
            for i in 0..n {
                let p = self.point(i);
                for j in i + 1..n {
                    best = best.max(dist_sq(p, self.point(j)));
                }
            }
            return DiamEstimate { value: best.sqrt(), exact: true };
        }
        let farthest = |from: usize| -> (usize, f64) {
            let p = self.point(from);
            let mut best = (from, 0.0);
            for j in 0..n {
                let d = dist_sq(p, self.point(j));
                if d > best.1 {
                    best = (j, d);
                }
            }
            best
        };
        let mut best = 0.0_f64;
        let mut a = 0;
        for _ in 0..3 {
            let (b, d) = farthest(a);
            best = best.max(d);
            a = b;
        }
        // Axis extremes: the largest extent is at least diam / sqrt(n).
        let mut extremes = Vec::with_capacity(2 * self.ambient_dim);
        for d in 0..self.ambient_dim {
            let (mut lo, mut hi) = (0, 0);
            for j in 0..n {
                if self.point(j)[d] < self.point(lo)[d] {
                    lo = j;
                }
                if self.point(j)[d] > self.point(hi)[d] {
                    hi = j;
                }
            }
            extremes.push(lo);
            extremes.push(hi);
        }
        for (k, &i) in extremes.iter().enumerate() {
            for &j in &extremes[k + 1..] {
                best = best.max(dist_sq(self.point(i), self.point(j)));
            }
        }
        DiamEstimate { value: best.sqrt(), exact: false }
    }

    /// `x -> scale * rotation * x + translation` with `rotation` an
    /// orthogonal `n x n` matrix (row-major). Weights scale by `scale^m`,
    /// tangent frames are rotated.
    pub fn transformed(&self, rotation: &[f64], translation: &[f64], scale: f64) -> Result<Self> {
        let n = self.ambient_dim;
        if rotation.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, actual: rotation.len() });
        }
        if translation.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: translation.len() });
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidParameter("scale must be positive".into()));
        }
        let rotate = |v: &[f64]| -> Vec<f64> {
            (0..n).map(|r| dot(&rotation[r * n..(r + 1) * n], v)).collect()
        };
        let mut points = Vec::with_capacity(self.points.len());
        for i in 0..self.len() {
            let q = rotate(self.point(i));
            points.extend(q.iter().zip(translation).map(|(a, t)| scale * a + t));
        }
        let wscale = scale.powi(self.intrinsic_dim as i32);
        let weights = self.weights.iter().map(|w| w * wscale).collect();
        let tangents = match &self.tangents {
            Some(ts) => Some(
                ts.iter()
                    .map(|t| Plane::new(&t.frame_vectors().map(rotate).collect::<Vec<_>>()))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Self::new(n, self.intrinsic_dim, points, weights, tangents)
    }

    /// Same points and tangents with every weight multiplied by `factor`.
    pub fn reweighted(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.ambient_dim,
            self.intrinsic_dim,
            self.points.clone(),
            self.weights.iter().map(|w| w * factor).collect(),
            self.tangents.clone(),
        )
    }

    /// Drops analytic tangents.
    pub fn without_tangents(&self) -> Self {
        let mut s = self.clone();
        s.tangents = None;
        s
    }
}

/// Builtin shapes. Curves and surfaces live in the first coordinates of
/// `R^n`; `ambient_dim` pads with zeros where a kind allows it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle { radius: f64, ambient_dim: usize },
    /// Round 2-sphere in R^3.
    Sphere { radius: f64 },
    /// Two semi-axes give an ellipse in R^2, three an ellipsoid in R^3.
    Ellipsoid { axes: Vec<f64> },
    Torus { major: f64, minor: f64 },
    FlatDisk { radius: f64, ambient_dim: usize },
    /// Graph over `[-2R, 2R]^m` with `intervals` grid cells per axis.
    GraphOfFunction {
        function: GraphFunction,
        m: usize,
        ambient_dim: usize,
        radius: f64,
        intervals: usize,
    },
    /// Spheres `S(c_i, 2^{-i-2})`, `i < depth`, consecutive ones touching at
    /// `(2^{-i-1}, 0, 0)`.
    StackedSpheres { depth: usize },
    /// Smooth trefoil knot `scale * (sin t + 2 sin 2t, cos t - 2 cos 2t, -sin 3t)`.
    Trefoil { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub count: usize,
    pub seed: u64,
}

impl Shape {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Shape::Circle { ambient_dim, .. } => (*ambient_dim, 1),
            Shape::Sphere { .. } | Shape::Torus { .. } | Shape::StackedSpheres { .. } => (3, 2),
            Shape::Ellipsoid { axes } => (axes.len(), axes.len() - 1),
            Shape::FlatDisk { ambient_dim, .. } => (*ambient_dim, 2),
            Shape::GraphOfFunction { m, ambient_dim, .. } => (*ambient_dim, *m),
            Shape::Trefoil { .. } => (3, 1),
        }
    }

    /// Closed-form `H^m` measure where one is available.
    pub fn analytic_measure(&self) -> Option<f64> {
        match self {
            Shape::Circle { radius, .. } => Some(2.0 * PI * radius),
            Shape::Sphere { radius } => Some(4.0 * PI * radius * radius),
            Shape::Torus { major, minor } => Some(4.0 * PI * PI * major * minor),
            Shape::FlatDisk { radius, .. } => Some(PI * radius * radius),
            Shape::StackedSpheres { depth } => {
                Some((0..*depth).map(|i| 4.0 * PI * 4f64.powi(-(i as i32) - 2)).sum())
            }
            Shape::Ellipsoid { axes } if axes.len() == 3 => {
                let (a, b, c) = (axes[0], axes[1], axes[2]);
                if b == c {
                    Some(spheroid_area(a, b))
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        match self {
            Shape::Circle { radius, ambient_dim } => {
                positive("radius", *radius)?;
                if *ambient_dim < 2 {
                    return Err(Error::InvalidParameter("circle needs n >= 2".into()));
                }
            }
            Shape::Sphere { radius } => positive("radius", *radius)?,
            Shape::Ellipsoid { axes } => {
                if axes.len() != 2 && axes.len() != 3 {
                    return Err(Error::InvalidParameter(format!(
                        "ellipsoid needs 2 or 3 semi-axes, got {}",
                        axes.len()
                    )));
                }
                for &a in axes {
                    positive("semi-axis", a)?;
                }
            }
            Shape::Torus { major, minor } => {
                positive("major radius", *major)?;
                positive("minor radius", *minor)?;
                if minor >= major {
                    return Err(Error::InvalidParameter(
                        "torus minor radius must be below the major radius".into(),
                    ));
                }
            }
            Shape::FlatDisk { radius, ambient_dim } => {
                positive("radius", *radius)?;
                if *ambient_dim < 3 {
                    return Err(Error::InvalidParameter("flat disk needs n >= 3".into()));
                }
            }
            Shape::GraphOfFunction { m, ambient_dim, radius, intervals, .. } => {
                positive("radius", *radius)?;
                if *m == 0 || m >= ambient_dim {
                    return Err(Error::InvalidParameter(format!(
                        "graph needs 1 <= m < n, got m = {m}, n = {ambient_dim}"
                    )));
                }
                if *intervals < 4 {
                    return Err(Error::InvalidParameter("graph needs at least 4 intervals".into()));
                }
            }
            Shape::StackedSpheres { depth } => {
                if *depth == 0 || *depth > 30 {
                    return Err(Error::InvalidParameter(format!(
                        "stacked spheres depth must be in 1..=30, got {depth}"
                    )));
                }
            }
            Shape::Trefoil { scale } => positive("scale", *scale)?,
        }
        Ok(())
    }
}

/// Surface area of the spheroid with semi-axes `(a, b, b)`.
pub fn spheroid_area(a: f64, b: f64) -> f64 {
    if (a - b).abs() <= 1e-15 * a.max(b) {
        return 4.0 * PI * a * a;
    }
    if a > b {
        let e = (1.0 - b * b / (a * a)).sqrt();
        2.0 * PI * b * b * (1.0 + a / (b * e) * e.asin())
    } else {
        let e = (1.0 - a * a / (b * b)).sqrt();
        2.0 * PI * b * b * (1.0 + (1.0 - e * e) / e * e.atanh())
    }
}

/// Centers and radii of the stacked spheres.
pub fn stacked_sphere_geometry(depth: usize) -> Vec<([f64; 3], f64)> {
    (0..depth)
        .map(|i| {
            let p_i = 2f64.powi(-(i as i32));
            let p_next = 2f64.powi(-(i as i32) - 1);
            ([(p_i + p_next) / 2.0, 0.0, 0.0], 2f64.powi(-(i as i32) - 2))
        })
        .collect()
}

/// Phase offset in `[0, 2 pi)`; zero for seed 0 so the canonical lattices
/// stay aligned with the axes.
fn phase(seed: u64) -> f64 {
    if seed == 0 {
        0.0
    } else {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0.0..2.0 * PI)
    }
}

pub fn generate(spec: &ShapeSpec) -> Result<WeightedSample> {
    spec.shape.validate()?;
    let (_, m) = spec.shape.dims();
    if spec.count < m + 2 {
        return Err(Error::TooFewPoints { needed: m + 2, found: spec.count });
    }
    let count = spec.count;
    let phi0 = phase(spec.seed);
    match &spec.shape {
        Shape::Circle { radius, ambient_dim } => {
            let r = *radius;
            closed_curve(*ambient_dim, count, |t| {
                let t = t + phi0;
                (vec![r * t.cos(), r * t.sin()], vec![-r * t.sin(), r * t.cos()])
            })
        }
        Shape::Ellipsoid { axes } if axes.len() == 2 => {
            let (a, b) = (axes[0], axes[1]);
            closed_curve(2, count, |t| {
                let t = t + phi0;
                (vec![a * t.cos(), b * t.sin()], vec![-a * t.sin(), b * t.cos()])
            })
        }
        Shape::Trefoil { scale } => {
            let s = *scale;
            closed_curve(3, count, |t| {
                (
                    vec![
                        s * (t.sin() + 2.0 * (2.0 * t).sin()),
                        s * (t.cos() - 2.0 * (2.0 * t).cos()),
                        -s * (3.0 * t).sin(),
                    ],
                    vec![
                        s * (t.cos() + 4.0 * (2.0 * t).cos()),
                        s * (-t.sin() + 4.0 * (2.0 * t).sin()),
                        -3.0 * s * (3.0 * t).cos(),
                    ],
                )
            })
        }
        Shape::Sphere { radius } => {
            let (pts, ws, ts) = fibonacci_sphere([0.0; 3], *radius, count, phi0)?;
            WeightedSample::new(3, 2, pts, ws, Some(ts))
        }
        Shape::Ellipsoid { axes } => ellipsoid(axes[0], axes[1], axes[2], count, phi0),
        Shape::Torus { major, minor } => torus(*major, *minor, count, phi0),
        Shape::FlatDisk { radius, ambient_dim } => flat_disk(*radius, *ambient_dim, count, phi0),
        Shape::GraphOfFunction { function, m, ambient_dim, radius, intervals } => {
            GraphPatch::builtin(function.clone(), *m, *ambient_dim, *radius, *intervals)?
                .sample_graph()
        }
        Shape::StackedSpheres { depth } => stacked_spheres(*depth, count, phi0),
    }
}

/// Parameter-uniform samples of a closed curve `gamma` on `[0, 2 pi)` with
/// weights `|gamma'| dt` (periodic trapezoid rule).
fn closed_curve<F>(n: usize, count: usize, gamma: F) -> Result<WeightedSample>
where
    F: Fn(f64) -> (Vec<f64>, Vec<f64>),
{
    let dt = 2.0 * PI / count as f64;
    let mut pts = Vec::with_capacity(n * count);
    let mut ws = Vec::with_capacity(count);
    let mut ts = Vec::with_capacity(count);
    for i in 0..count {
        let (mut p, mut v) = gamma(i as f64 * dt);
        p.resize(n, 0.0);
        v.resize(n, 0.0);
        let speed = norm(&v);
        ws.push(speed * dt);
        v.iter_mut().for_each(|c| *c /= speed);
        ts.push(Plane::new(&[v])?);
        pts.extend_from_slice(&p);
    }
    WeightedSample::new(n, 1, pts, ws, Some(ts))
}

/// Fibonacci lattice on the unit sphere: `(unit point, e_phi, e_theta)`.
fn fibonacci_unit(count: usize, phi0: f64) -> Vec<([f64; 3], [f64; 3], [f64; 3])> {
    (0..count)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / count as f64;
            let s = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * GOLDEN_ANGLE + phi0;
            let (sp, cp) = phi.sin_cos();
            ([s * cp, s * sp, z], [-sp, cp, 0.0], [z * cp, z * sp, -s])
        })
        .collect()
}

type Lattice = (Vec<f64>, Vec<f64>, Vec<Plane>);

fn fibonacci_sphere(center: [f64; 3], radius: f64, count: usize, phi0: f64) -> Result<Lattice> {
    let w = 4.0 * PI * radius * radius / count as f64;
    let mut pts = Vec::with_capacity(3 * count);
    let mut ts = Vec::with_capacity(count);
    for (u, e1, e2) in fibonacci_unit(count, phi0) {
        for d in 0..3 {
            pts.push(center[d] + radius * u[d]);
        }
        ts.push(Plane::new(&[e1.to_vec(), e2.to_vec()])?);
    }
    Ok((pts, vec![w; count], ts))
}

/// Fibonacci sphere without tangent frames, for samples too large to carry
/// one frame per point.
pub fn sphere_without_tangents(radius: f64, count: usize) -> Result<WeightedSample> {
    if !(radius > 0.0) || count < 4 {
        return Err(Error::InvalidParameter(format!("sphere needs radius > 0 and 4 points, got {radius}, {count}")));
    }
    let mut pts = Vec::with_capacity(3 * count);
    for (u, _, _) in fibonacci_unit(count, 0.0) {
        pts.extend(u.iter().map(|c| radius * c));
    }
    WeightedSample::new(3, 2, pts, vec![4.0 * PI * radius * radius / count as f64; count], None)
}

/// Image of the Fibonacci lattice under `diag(a, b, c)` with Jacobian
/// weights `abc |diag(1/a, 1/b, 1/c) u| * 4 pi / N`.
fn ellipsoid(a: f64, b: f64, c: f64, count: usize, phi0: f64) -> Result<WeightedSample> {
    let base = 4.0 * PI / count as f64;
    let mut pts = Vec::with_capacity(3 * count);
    let mut ws = Vec::with_capacity(count);
    let mut ts = Vec::with_capacity(count);
    for (u, e1, e2) in fibonacci_unit(count, phi0) {
        pts.extend_from_slice(&[a * u[0], b * u[1], c * u[2]]);
        let g = [u[0] / a, u[1] / b, u[2] / c];
        ws.push(a * b * c * norm(&g) * base);
        let t1 = vec![a * e1[0], b * e1[1], c * e1[2]];
        let t2 = vec![a * e2[0], b * e2[1], c * e2[2]];
        ts.push(Plane::from_span(&[t1, t2])?);
    }
    WeightedSample::new(3, 2, pts, ws, Some(ts))
}

fn torus(major: f64, minor: f64, count: usize, phi0: f64) -> Result<WeightedSample> {
    let nu = ((count as f64 * major / minor).sqrt().round() as usize).max(3);
    let nv = (count / nu).max(3);
    let (du, dv) = (2.0 * PI / nu as f64, 2.0 * PI / nv as f64);
    let mut pts = Vec::with_capacity(3 * nu * nv);
    let mut ws = Vec::with_capacity(nu * nv);
    let mut ts = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = i as f64 * du + phi0;
        let (su, cu) = u.sin_cos();
        for j in 0..nv {
            let v = j as f64 * dv;
            let (sv, cv) = v.sin_cos();
            let rho = major + minor * cv;
            pts.extend_from_slice(&[rho * cu, rho * su, minor * sv]);
            ws.push(minor * rho * du * dv);
            ts.push(Plane::new(&[vec![-su, cu, 0.0], vec![-sv * cu, -sv * su, cv]])?);
        }
    }
    WeightedSample::new(3, 2, pts, ws, Some(ts))
}

/// Vogel sunflower lattice on the disk of radius `radius` in the
/// `(x_1, x_2)` plane.
fn flat_disk(radius: f64, n: usize, count: usize, phi0: f64) -> Result<WeightedSample> {
    let w = PI * radius * radius / count as f64;
    let plane = Plane::coordinate(n, 2)?;
    let mut pts = Vec::with_capacity(n * count);
    for i in 0..count {
        let rho = radius * ((i as f64 + 0.5) / count as f64).sqrt();
        let phi = i as f64 * GOLDEN_ANGLE + phi0;
        pts.push(rho * phi.cos());
        pts.push(rho * phi.sin());
        pts.extend(std::iter::repeat_n(0.0, n - 2));
    }
    WeightedSample::new(n, 2, pts, vec![w; count], Some(vec![plane; count]))
}

/// Point counts proportional to area, at least 8 per sphere, remainder on
/// the largest sphere so the total is `count`.
fn stacked_spheres(depth: usize, count: usize, phi0: f64) -> Result<WeightedSample> {
    let geometry = stacked_sphere_geometry(depth);
    let area: f64 = geometry.iter().map(|(_, r)| r * r).sum();
    let mut counts: Vec<usize> = geometry
        .iter()
        .map(|(_, r)| ((count as f64 * r * r / area).round() as usize).max(8))
        .collect();
    let rest: usize = counts[1..].iter().sum();
    if rest + 8 > count {
        return Err(Error::TooFewPoints { needed: 8 * depth, found: count });
    }
    counts[0] = count - rest;
    let (mut pts, mut ws, mut ts) = (Vec::new(), Vec::new(), Vec::new());
    for ((center, r), k) in geometry.into_iter().zip(counts) {
        let (p, w, t) = fibonacci_sphere(center, r, k, phi0)?;
        pts.extend(p);
        ws.extend(w);
        ts.extend(t);
    }
    WeightedSample::new(3, 2, pts, ws, Some(ts))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Csv,
    Obj,
}

impl InputFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" | "txt" => Some(InputFormat::Csv),
            "obj" => Some(InputFormat::Obj),
            _ => None,
        }
    }
}

/// Options for `load_points`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Ambient dimension for header-less CSV; a row of `n + 1` values then
    /// carries a weight.
    pub ambient_dim: Option<usize>,
    /// Total measure spread uniformly when the CSV has no weight column.
    pub total_measure: Option<f64>,
}

pub fn load_points(path: &Path, format: InputFormat, m: usize, opts: LoadOptions) -> Result<WeightedSample> {
    let text = std::fs::read_to_string(path)?;
    match format {
        InputFormat::Csv => parse_csv(&text, m, opts),
        InputFormat::Obj => parse_obj(&text, m),
    }
}

pub fn parse_csv(text: &str, m: usize, opts: LoadOptions) -> Result<WeightedSample> {
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut header: Option<(usize, bool)> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> = fields.iter().map(|f| f.parse::<f64>()).collect();
        match parsed {
            Ok(v) => rows.push((lineno + 1, v)),
            Err(_) if rows.is_empty() && header.is_none() => {
                let weighted = fields.last().map(|f| f.eq_ignore_ascii_case("w")).unwrap_or(false);
                let n = fields.len() - usize::from(weighted);
                header = Some((n, weighted));
            }
            Err(e) => {
                return Err(Error::Parse { line: lineno + 1, message: format!("bad number: {e}") })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Parse { line: 0, message: "no data rows".into() });
    }
    let first_len = rows[0].1.len();
    let (n, weighted) = match (header, opts.ambient_dim) {
        (Some(h), _) => h,
        (None, Some(n)) if first_len == n => (n, false),
        (None, Some(n)) if first_len == n + 1 => (n, true),
        (None, Some(n)) => {
            return Err(Error::Parse {
                line: rows[0].0,
                message: format!("expected {n} or {} values, found {first_len}", n + 1),
            })
        }
        (None, None) => (first_len, false),
    };
    let width = n + usize::from(weighted);
    let mut pts = Vec::with_capacity(rows.len() * n);
    let mut ws = Vec::with_capacity(rows.len());
    for (line, row) in &rows {
        if row.len() != width {
            return Err(Error::Parse {
                line: *line,
                message: format!("row has {} values, expected {width}", row.len()),
            });
        }
        pts.extend_from_slice(&row[..n]);
        if weighted {
            ws.push(row[n]);
        }
    }
    if !weighted {
        let total = opts.total_measure.unwrap_or(1.0);
        if !(total > 0.0) {
            return Err(Error::InvalidParameter("total measure must be positive".into()));
        }
        ws = vec![total / rows.len() as f64; rows.len()];
    }
    WeightedSample::new(n, m, pts, ws, None)
}

pub fn parse_obj(text: &str, m: usize) -> Result<WeightedSample> {
    if m != 2 {
        return Err(Error::InvalidParameter("OBJ meshes describe surfaces (m = 2)".into()));
    }
    let mut verts: Vec<[f64; 3]> = Vec::new();
    let mut faces: Vec<(usize, [usize; 3])> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut it = line.split_whitespace();
        let bad = |message: String| Error::Parse { line: lineno + 1, message };
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("bad vertex coordinate: {e}")))?;
                if c.len() < 3 {
                    return Err(bad(format!("vertex has {} coordinates", c.len())));
                }
                verts.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("bad face index: {e}")))?;
                if idx.len() != 3 {
                    return Err(bad(format!("only triangular faces are supported, got {}", idx.len())));
                }
                let mut tri = [0usize; 3];
                for (k, &i) in idx.iter().enumerate() {
                    let resolved = if i > 0 { i - 1 } else { verts.len() as i64 + i };
                    if resolved < 0 || resolved >= verts.len() as i64 {
                        return Err(bad(format!("face index {i} out of range")));
                    }
                    tri[k] = resolved as usize;
                }
                faces.push((lineno + 1, tri));
            }
            _ => {}
        }
    }
    let mut ws = vec![0.0; verts.len()];
    let mut total = 0.0;
    for (_, [a, b, c]) in &faces {
        let area = triangle_area(&verts[*a], &verts[*b], &verts[*c]);
        total += area;
        for &v in &[*a, *b, *c] {
            ws[v] += area / 3.0;
        }
    }
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("mesh has zero total area".into()));
    }
    if let Some(v) = ws.iter().position(|w| *w <= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "vertex {} has zero weight (unreferenced or only in degenerate faces)",
            v + 1
        )));
    }
    let pts = verts.iter().flatten().copied().collect();
    WeightedSample::new(3, 2, pts, ws, None)
}

pub fn triangle_area(a: &[f64; 3], b: &[f64; 3], c: &[f64; 3]) -> f64 {
    let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    0.5 * norm(&x)
}

/// Writes `x1..xn,w` rows with 17 significant digits.
pub fn to_csv(sample: &WeightedSample) -> String {
    let n = sample.ambient_dim();
    let mut out = String::new();
    let header: Vec<String> = (1..=n).map(|i| format!("x{i}")).chain(["w".to_string()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..sample.len() {
        let row: Vec<String> = sample
            .point(i)
            .iter()
            .chain(std::iter::once(&sample.weights()[i]))
            .map(|v| crate::report::fmt_machine(*v))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(shape: Shape, count: usize) -> ShapeSpec {
        ShapeSpec { shape, count, seed: 0 }
    }

    #[test]
    fn circle_weights_and_tangents() {
        let s = generate(&spec(Shape::Circle { radius: 1.0, ambient_dim: 2 }, 100)).unwrap();
        for &w in s.weights() {
            assert_relative_eq!(w, 2.0 * PI / 100.0, max_relative = 1e-14);
        }
        let phi = 2.0 * PI * 7.0 / 100.0;
        let t = &s.tangents().unwrap()[7];
        let v = t.frame_vector(0);
        assert!((v[0] + phi.sin()).abs() < 1e-14 && (v[1] - phi.cos()).abs() < 1e-14);
    }

    #[test]
    fn sphere_area_and_diameter() {
        let s = generate(&spec(Shape::Sphere { radius: 2.0 }, 5000)).unwrap();
        assert_relative_eq!(s.total_measure(), 16.0 * PI, max_relative = 1e-3);
        let unit = generate(&spec(Shape::Sphere { radius: 1.0 }, 5000)).unwrap();
        let d = unit.sample_diam();
        assert!(!d.exact);
        assert!((d.value - 2.0).abs() < 0.01, "{d:?}");
    }

    #[test]
    fn stacked_spheres_geometry() {
        let g = stacked_sphere_geometry(3);
        let radii: Vec<f64> = g.iter().map(|(_, r)| *r).collect();
        assert_eq!(radii, vec![0.25, 0.125, 0.0625]);
        for i in 0..2 {
            let touch = 2f64.powi(-(i as i32) - 1);
            assert_eq!(g[i].0[0] - g[i].1, touch);
            assert_eq!(g[i + 1].0[0] + g[i + 1].1, touch);
        }
        let s = generate(&spec(Shape::StackedSpheres { depth: 3 }, 600)).unwrap();
        assert_eq!(s.len(), 600);
    }

    #[test]
    fn torus_and_ellipsoid_measures() {
        let t = generate(&spec(Shape::Torus { major: 2.0, minor: 0.5 }, 4000)).unwrap();
        assert_relative_eq!(t.total_measure(), 4.0 * PI * PI, max_relative = 1e-12);
        let e = generate(&spec(Shape::Ellipsoid { axes: vec![2.0, 1.0, 1.0] }, 20000)).unwrap();
        assert_relative_eq!(e.total_measure(), spheroid_area(2.0, 1.0), max_relative = 1e-3);
        let ell = generate(&spec(Shape::Ellipsoid { axes: vec![1.0, 1.0] }, 64)).unwrap();
        assert_relative_eq!(ell.total_measure(), 2.0 * PI, max_relative = 1e-12);
    }

    #[test]
    fn seed_determinism() {
        let a = generate(&ShapeSpec { shape: Shape::Sphere { radius: 1.0 }, count: 300, seed: 9 }).unwrap();
        let b = generate(&ShapeSpec { shape: Shape::Sphere { radius: 1.0 }, count: 300, seed: 9 }).unwrap();
        assert_eq!(a.points_flat(), b.points_flat());
    }

    #[test]
    fn too_few_points_and_bad_parameters() {
        assert!(matches!(
            generate(&spec(Shape::Sphere { radius: 1.0 }, 3)),
            Err(Error::TooFewPoints { needed: 4, found: 3 })
        ));
        assert!(generate(&spec(Shape::Sphere { radius: -1.0 }, 30)).is_err());
        assert!(generate(&spec(Shape::Torus { major: 1.0, minor: 2.0 }, 30)).is_err());
    }

    #[test]
    fn open_ball_queries() {
        let s = generate(&spec(Shape::Sphere { radius: 1.0 }, 500)).unwrap();
        let x = s.point(3).to_vec();
        assert!(s.neighbors_within(&x, 0.0).is_empty());
        assert_eq!(s.neighbors_within(&x, 2.5).len(), 500);
    }

    #[test]
    fn csv_with_weights_and_bad_row() {
        let text = "# comment\nx1,x2,x3,w\n0,0,0,0.5\n1,0,0,0.25\n0,1,0,0.125\n0,0,1,1\n";
        let s = parse_csv(text, 2, LoadOptions::default()).unwrap();
        assert_eq!(s.weights(), &[0.5, 0.25, 0.125, 1.0]);
        let bad = "0,0,0\n1,0,0\n0,1\n0,0,1\n";
        match parse_csv(bad, 2, LoadOptions::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let plain = "0,0,0\n1,0,0\n0,1,0\n0,0,1\n";
        let u = parse_csv(plain, 2, LoadOptions { ambient_dim: None, total_measure: Some(2.0) }).unwrap();
        assert_eq!(u.weights(), &[0.5; 4]);
    }

    #[test]
    fn cube_mesh_area() {
        let mut obj = String::new();
        for z in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for x in [0.0, 1.0] {
                    obj.push_str(&format!("v {x} {y} {z}\n"));
                }
            }
        }
        // Vertex (x,y,z) has index 1 + x + 2y + 4z.
        let quads = [
            [1, 3, 4, 2],
            [5, 6, 8, 7],
            [1, 2, 6, 5],
            [3, 7, 8, 4],
            [1, 5, 7, 3],
            [2, 4, 8, 6],
        ];
        for q in quads {
            obj.push_str(&format!("f {} {} {}\nf {} {} {}\n", q[0], q[1], q[2], q[0], q[2], q[3]));
        }
        let s = parse_obj(&obj, 2).unwrap();
        assert!((s.total_measure() - 6.0).abs() < 1e-9);
        assert!(parse_obj("v 0 0 0\nv 1 0 0\nv 2 0 0\nf 1 2 3\n", 2).is_err());
    }
}
