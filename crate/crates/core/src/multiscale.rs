//! One-sided beta and bilateral theta flatness numbers, dyadic scale
//! profiles, m-fineness estimates and decay-exponent fits.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grassmann::Plane;
use crate::kdtree::Ball;
use crate::linalg::{axpy, dist_sq, dot, linear_fit, norm, sub};
use crate::sampled_set::WeightedSample;

/// Sup-norm polish iterations after the PCA fit.
pub const POLISH_ITERATIONS: usize = 20;
/// Probe spacing (relative to `r`) for the plane-to-set term of theta.
pub const THETA_GRID_DELTA: f64 = 0.05;
/// Scales whose radius is below this multiple of the mean spacing are
/// dropped from every grid.
pub const SPACING_FLOOR: f64 = 4.0;
/// Hole ratios theta/beta are only formed when `beta > HOLE_GUARD * spacing / r`.
pub const HOLE_GUARD: f64 = 10.0;
/// Beta values below this are treated as numerically flat in decay fits.
pub const BETA_NOISE_FLOOR: f64 = 1e-9;
/// Default number of dyadic scales.
pub const DEFAULT_SCALES: usize = 8;

#[derive(Debug, Clone)]
pub enum PlaneStrategy {
    /// PCA fit, polished towards the sup-norm optimum; seeded with the
    /// analytic tangent when the sample has one.
    Optimize,
    AnalyticTangent,
    Given(Plane),
}

/// Points of the ball around `x` other than (near-)duplicates of `x`.
fn ball_points(sample: &WeightedSample, x: &[f64], r: f64, ball: Ball) -> Vec<usize> {
    let dup2 = (1e-12 * r).powi(2);
    let mut idx = Vec::new();
    sample.for_each_within(x, r, ball, |i, d2| {
        if d2 > dup2 {
            idx.push(i)
        }
    });
    idx.sort_unstable();
    idx
}

/// Offsets `p_i - x` of a point set, stored contiguously in `idx` order.
struct Offsets {
    n: usize,
    data: Vec<f64>,
}

impl Offsets {
    fn new(sample: &WeightedSample, x: &[f64], idx: &[usize]) -> Self {
        let n = x.len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend(sample.point(i).iter().zip(x).map(|(p, q)| p - q));
        }
        Self { n, data }
    }

    fn get(&self, k: usize) -> &[f64] {
        &self.data[k * self.n..(k + 1) * self.n]
    }

    /// Largest distance to `x + H` and the first position attaining it.
    fn worst(&self, plane: &Plane) -> (f64, usize) {
        let n = self.n;
        let count = self.data.len() / n;
        let mut best = (0.0_f64, usize::MAX);
        // Large sets: project on the normal directions when there are fewer
        // of them than frame vectors.
        if count > 64 && n - plane.dim() < plane.dim() {
            let normals: Vec<f64> = plane.complement_frame().concat();
            for (k, v) in self.data.chunks_exact(n).enumerate() {
                let q2: f64 = normals.chunks_exact(n).map(|nu| dot(nu, v).powi(2)).sum();
                if q2 > best.0 || best.1 == usize::MAX {
                    best = (q2, k);
                }
            }
            return (best.0.sqrt(), best.1);
        }
        for (k, v) in self.data.chunks_exact(n).enumerate() {
            let dist = plane.rejection_norm(v);
            if dist > best.0 || best.1 == usize::MAX {
                best = (dist, k);
            }
        }
        best
    }
}

/// Sup over `idx` of `dist(p_i, x + H)`.
pub fn sup_distance(sample: &WeightedSample, x: &[f64], idx: &[usize], plane: &Plane) -> f64 {
    Offsets::new(sample, x, idx).worst(plane).0
}

/// Top-m eigenvectors of the covariance of the ball points about their
/// centroid, each point weighted by `w_i (1 - |p_i - x|^2 / r^2)^2`. The
/// smooth taper keeps points entering or leaving at the rim from tilting
/// the plane. The matrix is normalized by its trace so that dilations by
/// powers of two leave the result bit-identical. Each eigenvector is signed
/// so that its first nonzero component is positive.
fn pca_plane(sample: &WeightedSample, x: &[f64], r: f64, idx: &[usize]) -> Result<Plane> {
    let n = sample.ambient_dim();
    let m = sample.intrinsic_dim();
    if idx.len() < m {
        return Err(Error::TooFewPoints { needed: m, found: idx.len() });
    }
    let w = sample.weights();
    let r2 = r * r;
    let mut taper: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let t = 1.0 - dist_sq(sample.point(i), x) / r2;
            w[i] * t * t
        })
        .collect();
    let mut total: f64 = taper.iter().sum();
    if !(total > 0.0) {
        // Every point sits on the rim: fall back to plain weights.
        taper = idx.iter().map(|&i| w[i]).collect();
        total = taper.iter().sum();
    }
    let mut centre = vec![0.0; n];
    for (&i, &t) in idx.iter().zip(&taper) {
        axpy(t / total, sample.point(i), &mut centre);
    }
    let mut mom = DMatrix::<f64>::zeros(n, n);
    for (&i, &t) in idx.iter().zip(&taper) {
        let v = sub(sample.point(i), &centre);
        for a in 0..n {
            for b in a..n {
                mom[(a, b)] += t * v[a] * v[b];
            }
        }
    }
    for a in 0..n {
        for b in 0..a {
            mom[(a, b)] = mom[(b, a)];
        }
    }
    let trace = mom.trace();
    if !(trace > 0.0) {
        return Err(Error::TooFewPoints { needed: m, found: 0 });
    }
    mom /= trace;
    // The matrix is positive semidefinite, so its SVD is its eigensystem;
    // the SVD stays accurate when the top eigenvalues nearly coincide.
    let svd = mom.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    let frame: Vec<Vec<f64>> = order[..m]
        .iter()
        .map(|&k| {
            let mut v: Vec<f64> = u.column(k).iter().copied().collect();
            if let Some(first) = v.iter().find(|c| **c != 0.0) {
                if *first < 0.0 {
                    v.iter_mut().for_each(|c| *c = -*c);
                }
            }
            v
        })
        .collect();
    Plane::new(&frame)
}

pub fn best_plane_through(sample: &WeightedSample, x: &[f64], r: f64) -> Result<Plane> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let idx = ball_points(sample, x, r, Ball::Open);
    pca_plane(sample, x, r, &idx)
}

/// Rotates the plane so that its in-plane direction of `v` tilts by
/// `angle` towards `v`'s normal component.
fn tilt_towards(plane: &Plane, v: &[f64], angle: f64) -> Option<Plane> {
    let a = plane.project(v).ok()?;
    let b: Vec<f64> = v.iter().zip(&a).map(|(x, y)| x - y).collect();
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let ah: Vec<f64> = a.iter().map(|c| c / na).collect();
    let bh: Vec<f64> = b.iter().map(|c| c / nb).collect();
    let (s, c) = angle.sin_cos();
    let frame: Vec<Vec<f64>> = plane
        .frame_vectors()
        .map(|e| {
            let k = dot(e, &ah);
            e.iter()
                .zip(&ah)
                .zip(&bh)
                .map(|((ei, ai), bi)| ei + (c - 1.0) * k * ai + s * k * bi)
                .collect()
        })
        .collect();
    Plane::new(&frame).ok()
}

/// Best plane found for the sup-distance objective: returns `(plane, sup)`.
/// Candidates are the PCA plane and `seeds`; the best one is polished by a
/// diminishing-step subgradient method and the best iterate is kept.
pub fn optimize_plane(
    sample: &WeightedSample,
    x: &[f64],
    r: f64,
    idx: &[usize],
    seeds: &[Plane],
) -> Result<(Plane, f64)> {
    let mut cands: Vec<Plane> = Vec::with_capacity(seeds.len() + 1);
    match pca_plane(sample, x, r, idx) {
        Ok(p) => cands.push(p),
        Err(e) if seeds.is_empty() => return Err(e),
        Err(_) => {}
    }
    cands.extend(seeds.iter().cloned());
    let offsets = Offsets::new(sample, x, idx);
    let mut best: Option<(Plane, f64)> = None;
    for c in cands {
        let s = offsets.worst(&c).0;
        if best.as_ref().is_none_or(|(_, b)| s < *b) {
            best = Some((c, s));
        }
    }
    let (mut best_plane, mut best_sup) = best.expect("at least one candidate");
    let mut current = best_plane.clone();
    for k in 0..POLISH_ITERATIONS {
        if best_sup == 0.0 {
            break;
        }
        let (dist, pos) = offsets.worst(&current);
        let v = offsets.get(pos).to_vec();
        let len = norm(&v);
        if len == 0.0 || dist == 0.0 {
            break;
        }
        let phi = (dist / len).min(1.0).asin();
        let Some(next) = tilt_towards(&current, &v, phi / (k as f64 + 2.0)) else { break };
        let s = offsets.worst(&next).0;
        if s < best_sup {
            best_sup = s;
            best_plane = next.clone();
        }
        current = next;
    }
    Ok((best_plane, best_sup))
}

/// Analytic tangent at `x_index`, if the sample carries tangents.
fn analytic(sample: &WeightedSample, x_index: usize) -> Option<Plane> {
    sample.tangents().map(|t| t[x_index].clone())
}

/// `beta` together with the plane realizing it.
pub fn beta_with_plane(
    sample: &WeightedSample,
    x_index: usize,
    r: f64,
    strategy: &PlaneStrategy,
    ball: Ball,
) -> Result<(f64, Option<Plane>)> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let x = sample.point(x_index);
    let idx = ball_points(sample, x, r, ball);
    let m = sample.intrinsic_dim();
    match strategy {
        PlaneStrategy::Given(h) => {
            if h.ambient_dim() != sample.ambient_dim() || h.dim() != m {
                return Err(Error::DimensionMismatch { expected: m, actual: h.dim() });
            }
            Ok((sup_distance(sample, x, &idx, h) / r, Some(h.clone())))
        }
        PlaneStrategy::AnalyticTangent => {
            let h = analytic(sample, x_index).ok_or(Error::MissingTangents)?;
            Ok((sup_distance(sample, x, &idx, &h) / r, Some(h)))
        }
        PlaneStrategy::Optimize => {
            // Up to m points always lie on some m-plane through x.
            if idx.len() < m + 1 && analytic(sample, x_index).is_none() {
                return Ok((0.0, None));
            }
            let seeds: Vec<Plane> = analytic(sample, x_index).into_iter().collect();
            beta_seeded_idx(sample, x, &idx, r, &seeds)
        }
    }
}

fn beta_seeded_idx(
    sample: &WeightedSample,
    x: &[f64],
    idx: &[usize],
    r: f64,
    seeds: &[Plane],
) -> Result<(f64, Option<Plane>)> {
    if idx.is_empty() {
        return Ok((0.0, seeds.first().cloned()));
    }
    if idx.len() < sample.intrinsic_dim() + 1 && seeds.is_empty() {
        return Ok((0.0, None));
    }
    let (plane, sup) = optimize_plane(sample, x, r, idx, seeds)?;
    Ok(((sup / r).min(1.0), Some(plane)))
}

/// `beta_Sigma(x, r)` over the open ball.
pub fn beta(sample: &WeightedSample, x_index: usize, r: f64, strategy: &PlaneStrategy) -> Result<f64> {
    Ok(beta_with_plane(sample, x_index, r, strategy, Ball::Open)?.0)
}

/// `Optimize` with extra seed planes; never worse than any seed.
pub fn beta_seeded(sample: &WeightedSample, x_index: usize, r: f64, seeds: &[Plane]) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius must be positive, got {r}")));
    }
    let x = sample.point(x_index);
    let idx = ball_points(sample, x, r, Ball::Open);
    let mut all: Vec<Plane> = seeds.to_vec();
    all.extend(analytic(sample, x_index));
    Ok(beta_seeded_idx(sample, x, &idx, r, &all)?.0)
}

/// Smallest sup-distance `h` (not divided by r) found for the closed ball,
/// i.e. `r * beta` over `closed B(x, r)`. Any plane gives an upper bound on
/// the true infimum.
pub fn flatness_height(sample: &WeightedSample, x_index: usize, r: f64) -> Result<f64> {
    let x = sample.point(x_index);
    let idx = ball_points(sample, x, r, Ball::Closed);
    if idx.is_empty() {
        return Ok(0.0);
    }
    let seeds: Vec<Plane> = analytic(sample, x_index).into_iter().collect();
    if idx.len() < sample.intrinsic_dim() + 1 && seeds.is_empty() {
        return Ok(0.0);
    }
    Ok(optimize_plane(sample, x, r, &idx, &seeds)?.1)
}

/// Probe points `x + sum u_j e_j` on a grid of spacing `delta * r` over
/// `[-r, r]^m` (cell centers), kept inside the closed ball.
fn probe_grid(plane: &Plane, x: &[f64], r: f64) -> Vec<Vec<f64>> {
    let m = plane.dim();
    let per_axis = (2.0 / THETA_GRID_DELTA).round() as usize * 2;
    let step = 2.0 * r / per_axis as f64;
    let total = per_axis.pow(m as u32);
    let mut out = Vec::new();
    let mut coords = vec![0.0; m];
    for flat in 0..total {
        let mut rem = flat;
        let mut len2 = 0.0;
        for c in coords.iter_mut() {
            *c = -r + ((rem % per_axis) as f64 + 0.5) * step;
            rem /= per_axis;
            len2 += *c * *c;
        }
        if len2 > r * r {
            continue;
        }
        let mut q = x.to_vec();
        for (j, e) in plane.frame_vectors().enumerate() {
            for (qd, ed) in q.iter_mut().zip(e) {
                *qd += coords[j] * ed;
            }
        }
        out.push(q);
    }
    out
}

/// Discrete `d_H(Sigma cap B, (x + H) cap B)` as the sum of the set-to-plane
/// and plane-to-set terms over the closed ball.
fn hausdorff_sum(sample: &WeightedSample, x: &[f64], r: f64, idx: &[usize], plane: &Plane) -> f64 {
    let to_plane = sup_distance(sample, x, idx, plane);
    let r2 = r * r;
    let mut to_set = 0.0_f64;
    for q in probe_grid(plane, x, r) {
        let d = sample
            .nearest_filtered(&q, |i| dist_sq(sample.point(i), x) <= r2)
            .map(|(_, d)| d)
            .unwrap_or(r);
        to_set = to_set.max(d);
    }
    to_plane + to_set
}

/// `theta_Sigma(x, r)` with candidate planes: the open-ball PCA plane, the
/// polished plane behind `beta`, and the analytic tangent. Each candidate's
/// set-to-plane term over the closed ball dominates `r * beta`, so
/// `beta <= theta` holds by construction.
pub fn theta(sample: &WeightedSample, x_index: usize, r: f64) -> Result<f64> {
    Ok(theta_with_beta(sample, x_index, r)?.0)
}

/// `(theta, beta, beta plane)` sharing the plane fit.
pub fn theta_with_beta(sample: &WeightedSample, x_index: usize, r: f64) -> Result<(f64, f64, Option<Plane>)> {
    let (b, plane) = beta_with_plane(sample, x_index, r, &PlaneStrategy::Optimize, Ball::Open)?;
    let x = sample.point(x_index);
    let open = ball_points(sample, x, r, Ball::Open);
    let closed = {
        let mut c = ball_points(sample, x, r, Ball::Closed);
        // x itself belongs to the closed ball.
        if let Err(pos) = c.binary_search(&x_index) {
            c.insert(pos, x_index);
        }
        c
    };
    let mut cands: Vec<Plane> = Vec::new();
    if let Ok(p) = pca_plane(sample, x, r, &open) {
        cands.push(p);
    }
    cands.extend(plane.iter().cloned());
    cands.extend(analytic(sample, x_index));
    if cands.is_empty() {
        // Fewer than m points besides x: any plane through them is exact,
        // only holes can register.
        let coord = Plane::coordinate(sample.ambient_dim(), sample.intrinsic_dim())?;
        cands.push(coord);
    }
    let mut best = f64::INFINITY;
    for c in &cands {
        best = best.min(hausdorff_sum(sample, x, r, &closed, c));
    }
    Ok((best / r, b, plane))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleProfile {
    pub base_indices: Vec<usize>,
    pub radii: Vec<f64>,
    /// `beta[point][scale]`
    pub beta: Vec<Vec<f64>>,
    /// Empty when theta was not requested.
    pub theta: Vec<Vec<f64>>,
    /// Plane behind each beta entry (flat frames), `None` where no fit was needed.
    #[serde(skip)]
    pub planes: Vec<Vec<Option<Plane>>>,
}

impl ScaleProfile {
    /// Reifenberg-style diagnostic: max over base points of theta per scale.
    pub fn max_theta_per_scale(&self) -> Vec<f64> {
        (0..self.radii.len())
            .map(|k| self.theta.iter().map(|row| row[k]).fold(0.0, f64::max))
            .collect()
    }
}

/// `R * 2^-k`, `k < count`, dropping radii below the spacing floor.
pub fn dyadic_grid(top: f64, count: usize, spacing: f64) -> Vec<f64> {
    (0..count)
        .map(|k| top * 2f64.powi(-(k as i32)))
        .filter(|r| *r >= SPACING_FLOOR * spacing)
        .collect()
}

/// Default grid: `count` dyadic scales from `diam / 4`.
pub fn default_grid(sample: &WeightedSample, count: usize) -> Vec<f64> {
    dyadic_grid(sample.sample_diam().value / 4.0, count, sample.mean_spacing())
}

/// Evenly spread base points: every `N / count`-th index.
pub fn spread_indices(len: usize, count: usize) -> Vec<usize> {
    if count >= len {
        return (0..len).collect();
    }
    (0..count).map(|k| k * len / count).collect()
}

pub fn scale_profile(
    sample: &WeightedSample,
    base_indices: &[usize],
    radii: &[f64],
    with_theta: bool,
) -> Result<ScaleProfile> {
    if radii.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "every radius is below {SPACING_FLOOR} x mean spacing"
        )));
    }
    let rows: Vec<Result<(Vec<f64>, Vec<f64>, Vec<Option<Plane>>)>> = base_indices
        .par_iter()
        .map(|&i| {
            let mut b = Vec::with_capacity(radii.len());
            let mut t = Vec::with_capacity(radii.len());
            let mut pl = Vec::with_capacity(radii.len());
            for &r in radii {
                if with_theta {
                    let (th, be, p) = theta_with_beta(sample, i, r)?;
                    b.push(be);
                    t.push(th);
                    pl.push(p);
                } else {
                    let (be, p) = beta_with_plane(sample, i, r, &PlaneStrategy::Optimize, Ball::Open)?;
                    b.push(be);
                    pl.push(p);
                }
            }
            Ok((b, t, pl))
        })
        .collect();
    let mut profile = ScaleProfile {
        base_indices: base_indices.to_vec(),
        radii: radii.to_vec(),
        beta: Vec::new(),
        theta: Vec::new(),
        planes: Vec::new(),
    };
    for row in rows {
        let (b, t, p) = row?;
        profile.beta.push(b);
        if with_theta {
            profile.theta.push(t);
        }
        profile.planes.push(p);
    }
    Ok(profile)
}

#[derive(Debug, Clone, Serialize)]
pub struct WorstPair {
    pub point_index: usize,
    pub r: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FinenessReport {
    /// `min weight(B(x, r)) / r^m` over guarded pairs.
    pub ahlfors_constant: f64,
    /// `max(2, hole_ratio_max)`; Def. 1.1 asks for a constant of at least 2.
    pub hole_constant: f64,
    /// Largest guarded theta/beta, `None` when no pair passed the guard.
    pub hole_ratio_max: Option<f64>,
    pub ahlfors_pairs: usize,
    pub hole_pairs: usize,
    /// Worst pairs: smallest mass ratios, then largest hole ratios.
    pub violating_pairs: Vec<WorstPair>,
}

/// Fineness constants over a theta profile.
pub fn fineness(sample: &WeightedSample, profile: &ScaleProfile) -> Result<FinenessReport> {
    if profile.theta.is_empty() {
        return Err(Error::InvalidParameter("fineness needs a profile with theta".into()));
    }
    let spacing = sample.mean_spacing();
    let m = sample.intrinsic_dim() as i32;
    let mut mass: Vec<WorstPair> = Vec::new();
    let mut holes: Vec<WorstPair> = Vec::new();
    for (row, &i) in profile.base_indices.iter().enumerate() {
        for (k, &r) in profile.radii.iter().enumerate() {
            if r < SPACING_FLOOR * spacing {
                continue;
            }
            let w = sample.ball_weight(sample.point(i), r);
            mass.push(WorstPair { point_index: i, r, value: w / r.powi(m) });
            let b = profile.beta[row][k];
            if b > HOLE_GUARD * spacing / r {
                holes.push(WorstPair { point_index: i, r, value: profile.theta[row][k] / b });
            }
        }
    }
    if mass.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "no radius at or above {SPACING_FLOOR} x mean spacing ({spacing})"
        )));
    }
    mass.sort_by(|a, b| a.value.total_cmp(&b.value));
    holes.sort_by(|a, b| b.value.total_cmp(&a.value));
    let hole_ratio_max = holes.first().map(|p| p.value);
    let mut violating: Vec<WorstPair> = mass.iter().take(5).cloned().collect();
    violating.extend(holes.iter().take(5).cloned());
    Ok(FinenessReport {
        ahlfors_constant: mass[0].value,
        hole_constant: hole_ratio_max.unwrap_or(2.0).max(2.0),
        hole_ratio_max,
        ahlfors_pairs: mass.len(),
        hole_pairs: holes.len(),
        violating_pairs: violating,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyKind {
    Menger,
    TangentPoint,
}

pub fn kappa1(p: f64, m: usize) -> f64 {
    let m = m as f64;
    (p - m) / (p * (m + 1.0) + 2.0 * m)
}

pub fn kappa2(p: f64, m: usize) -> f64 {
    let m = m as f64;
    (p - m) / (p + m)
}

pub fn tau(p: f64, m: usize) -> f64 {
    1.0 - m as f64 / p
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub kappa_hat: f64,
    /// `exp(intercept)`: the fitted `beta / r^kappa_hat`.
    pub constant_hat: f64,
    pub residual: f64,
    pub kappa_bound: f64,
    pub scales_used: usize,
    pub passes: bool,
}

/// Log-log fit of the per-scale max beta against r.
pub fn decay_fit(profile: &ScaleProfile, p: f64, m: usize, kind: EnergyKind) -> Result<DecayFit> {
    if !(p > m as f64) {
        return Err(Error::InvalidParameter(format!("need p > m, got p = {p}, m = {m}")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, &r) in profile.radii.iter().enumerate() {
        let b = profile.beta.iter().map(|row| row[k]).fold(0.0, f64::max);
        if b > BETA_NOISE_FLOOR {
            xs.push(r.ln());
            ys.push(b.ln());
        }
    }
    if xs.is_empty() {
        return Err(Error::TooFlatToFit);
    }
    if xs.len() < 4 {
        return Err(Error::EmptyGrid(format!(
            "decay fit needs 4 scales above the beta noise floor, found {}",
            xs.len()
        )));
    }
    let (slope, intercept, rms) = linear_fit(&xs, &ys).ok_or(Error::TooFlatToFit)?;
    let kappa_bound = match kind {
        EnergyKind::Menger => kappa1(p, m),
        EnergyKind::TangentPoint => kappa2(p, m),
    };
    Ok(DecayFit {
        kappa_hat: slope,
        constant_hat: intercept.exp(),
        residual: rms,
        kappa_bound,
        scales_used: xs.len(),
        passes: slope >= kappa_bound - 0.05,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampled_set::{generate, Shape, ShapeSpec};

    fn sample(shape: Shape, count: usize) -> WeightedSample {
        generate(&ShapeSpec { shape, count, seed: 0 }).unwrap()
    }

    #[test]
    fn flat_disk_is_flat() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 20000);
        for i in [0, 100, 500] {
            let b = beta(&s, i, 0.3, &PlaneStrategy::Optimize).unwrap();
            assert!(b < 1e-12, "{b}");
        }
        let normal = Plane::new(&[vec![0.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]]).unwrap();
        let b = beta(&s, 0, 0.3, &PlaneStrategy::Given(normal)).unwrap();
        assert!(b > 0.9 && b <= 1.0, "{b}");
        // Only the sampling holes remain: about one spacing over r.
        let t = theta(&s, 0, 0.3).unwrap();
        assert!(t < 0.05, "{t}");
    }

    #[test]
    fn sphere_cap_height() {
        let s = sample(Shape::Sphere { radius: 1.0 }, 40000);
        let b = beta(&s, 1234, 0.2, &PlaneStrategy::AnalyticTangent).unwrap();
        assert!(b / 0.2 > 0.48 && b / 0.2 < 0.52, "{b}");
    }

    #[test]
    fn circle_pca_tangent_close() {
        let s = sample(Shape::Circle { radius: 1.0, ambient_dim: 2 }, 2000);
        let p = best_plane_through(&s, s.point(0), 0.05).unwrap();
        let d = crate::grassmann::grassmann_distance(&p, &s.tangents().unwrap()[0]).unwrap();
        assert!(d < 0.05, "{d}");
    }

    #[test]
    fn pca_sign_convention() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 500);
        let p = best_plane_through(&s, s.point(0), 0.5).unwrap();
        for v in p.frame_vectors() {
            assert!(*v.iter().find(|c| **c != 0.0).unwrap() > 0.0);
        }
    }

    #[test]
    fn theta_detects_a_gap() {
        // Segment [-1, 1] on the x-axis with the gap (0.1, 0.5) removed.
        let mut xs: Vec<f64> = (0..=400).map(|i| -1.0 + i as f64 * 0.005).collect();
        xs.retain(|x| (x - 0.3).abs() >= 0.2 - 1e-12);
        let pts: Vec<f64> = xs.iter().flat_map(|&x| [x, 0.0]).collect();
        let s = WeightedSample::new(2, 1, pts, vec![0.005; xs.len()], None).unwrap();
        let centre = xs.iter().position(|x| x.abs() < 1e-12).unwrap();
        let t = theta(&s, centre, 0.8).unwrap();
        // gap / (2r) = 0.4 / 1.6
        assert!((t - 0.25).abs() < 0.02, "{t}");
        assert!(beta(&s, centre, 0.8, &PlaneStrategy::Optimize).unwrap() < 1e-12);
    }

    #[test]
    fn kappa_values() {
        assert_eq!(kappa1(4.0, 2), 0.125);
        assert!((kappa2(4.0, 2) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(tau(4.0, 2), 0.5);
    }

    #[test]
    fn flat_disk_is_too_flat_to_fit() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 4000);
        let grid = dyadic_grid(0.5, 5, s.mean_spacing());
        let prof = scale_profile(&s, &[0, 10, 20], &grid, false).unwrap();
        assert!(matches!(decay_fit(&prof, 4.0, 2, EnergyKind::TangentPoint), Err(Error::TooFlatToFit)));
    }
}
