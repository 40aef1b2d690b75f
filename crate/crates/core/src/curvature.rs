//! Global Menger and tangent-point curvature fields with witnesses: exact
//! scans, a certified pruned Menger search, and high-energy-couple checks.

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::omega;
use crate::error::{Error, Result};
use crate::grassmann::Plane;
use crate::linalg::{compensated_sum, dist_sq, dot, norm_sq, sub_into};
use crate::multiscale::{beta, best_plane_through, flatness_height, EnergyKind, PlaneStrategy, SPACING_FLOOR};
use crate::sampled_set::WeightedSample;
use crate::simplex::{menger_beta_constant, menger_curvature};

/// Largest sample for which the exact Menger search runs without override.
pub const EXACT_CUTOFF: usize = 60;
/// Local-search restarts in the pruned Menger search.
pub const LOCAL_STARTS: usize = 32;
/// Spatial candidates per vertex move.
pub const LOCAL_NEIGHBORS: usize = 16;
/// Tuple evaluations after which the pruned search gives up certification.
pub const DEFAULT_TUPLE_BUDGET: u64 = 2_000_000;
/// Relative slack on the pruning bound against round-off.
const BOUND_SLACK: f64 = 1e-9;
/// `|Q_H(y - x)| <= PLANE_TOL * |y - x|` counts as `y in x + H`.
const PLANE_TOL: f64 = 1e-13;

/// `1 / R_tp(x, y; H)` for a fixed `x` and `H`. The rejection `|Q_H v|` is
/// taken through the normal directions when there are fewer of them than
/// frame vectors, otherwise through the frame.
pub struct TpKernel<'a> {
    x: &'a [f64],
    normals: Option<Vec<f64>>,
    plane: &'a Plane,
}

impl<'a> TpKernel<'a> {
    pub fn new(x: &'a [f64], plane: &'a Plane) -> Self {
        let n = plane.ambient_dim();
        let normals = (n - plane.dim() < plane.dim()).then(|| plane.complement_frame().concat());
        Self { x, normals, plane }
    }

    /// Zero when `y` lies in `x + H`, including `y = x`.
    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        let n = self.x.len();
        let mut v = [0.0; 16];
        let mut heap;
        let v: &mut [f64] = if n <= 16 {
            &mut v[..n]
        } else {
            heap = vec![0.0; n];
            &mut heap
        };
        sub_into(y, self.x, v);
        let d2 = norm_sq(v);
        if d2 == 0.0 {
            return 0.0;
        }
        let q = match &self.normals {
            Some(nu) => nu.chunks_exact(n).map(|e| dot(e, v).powi(2)).sum::<f64>().sqrt(),
            None => self.plane.rejection_norm(v),
        };
        if q <= PLANE_TOL * d2.sqrt() {
            return 0.0;
        }
        2.0 * q / d2
    }
}

/// `1 / R_tp(x, y; H) = 2 |Q_H(y - x)| / |y - x|^2`, zero when `y` lies in
/// `x + H` (including `y = x`).
pub fn tangent_point_inv_radius(x: &[f64], y: &[f64], h: &Plane) -> f64 {
    TpKernel::new(x, h).eval(y)
}

/// Exact O(N) scan of `sup_y 1/R_tp(x, y; H)`; witness is the lowest
/// maximizing index.
pub fn tp_global(sample: &WeightedSample, x_index: usize, h: &Plane) -> (f64, usize) {
    let kernel = TpKernel::new(sample.point(x_index), h);
    let mut best = (0.0, 0);
    for (j, y) in sample.points_flat().chunks_exact(sample.ambient_dim()).enumerate() {
        let v = kernel.eval(y);
        if v > best.0 {
            best = (v, j);
        }
    }
    best
}

/// Same answer as `tp_global` via branch and bound on the kd-tree: on a
/// box, `|Q_H(y - x)|` is bounded through interval arithmetic on each
/// normal direction and `|y - x|` from below by the box distance.
pub fn tp_global_pruned(sample: &WeightedSample, x_index: usize, h: &Plane) -> (f64, usize) {
    let x = sample.point(x_index);
    let n = x.len();
    let normals = h.complement_frame();
    let bound = |lo: &[f64], hi: &[f64]| -> f64 {
        let mut dmin2 = 0.0;
        let mut dmax2 = 0.0;
        for d in 0..n {
            let (a, b) = (lo[d] - x[d], hi[d] - x[d]);
            let near = if a > 0.0 {
                a
            } else if b < 0.0 {
                -b
            } else {
                0.0
            };
            dmin2 += near * near;
            let far = a.abs().max(b.abs());
            dmax2 += far * far;
        }
        if dmin2 == 0.0 {
            return f64::INFINITY;
        }
        let mut q2 = 0.0;
        for nu in &normals {
            let (mut smin, mut smax) = (0.0, 0.0);
            for d in 0..n {
                let (a, b) = (nu[d] * (lo[d] - x[d]), nu[d] * (hi[d] - x[d]));
                smin += a.min(b);
                smax += a.max(b);
            }
            let m = smin.abs().max(smax.abs());
            q2 += m * m;
        }
        let q = q2.min(dmax2).sqrt();
        (2.0 * q / dmin2).min(2.0 / dmin2.sqrt()) * (1.0 + BOUND_SLACK)
    };
    let kernel = TpKernel::new(x, h);
    let eval = |j: usize| kernel.eval(sample.point(j));
    match sample.index().branch_and_bound_max(bound, eval) {
        Some((j, v)) if v > 0.0 => (v, j),
        _ => (0.0, 0),
    }
}

fn menger_of(sample: &WeightedSample, x_index: usize, tuple: &[usize]) -> f64 {
    let x = sample.point(x_index);
    if tuple.len() < 8 {
        let mut pts: [&[f64]; 8] = [x; 8];
        for (p, &i) in pts[1..].iter_mut().zip(tuple) {
            *p = sample.point(i);
        }
        return menger_curvature(&pts[..tuple.len() + 1]);
    }
    let mut pts: Vec<&[f64]> = Vec::with_capacity(tuple.len() + 1);
    pts.push(x);
    pts.extend(tuple.iter().map(|&i| sample.point(i)));
    menger_curvature(&pts)
}

/// Canonical incumbent order: larger value wins, equal values go to the
/// lexicographically smaller sorted tuple.
fn better(value: f64, tuple: &[usize], best_value: f64, best_tuple: &[usize]) -> bool {
    value > best_value || (value == best_value && tuple < best_tuple)
}

/// Advances `c` to the next k-combination of `0..n` in lex order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MengerResult {
    pub value: f64,
    /// The other `m + 1` vertices, ascending.
    pub witness: Vec<usize>,
    /// Exact search, or pruned search whose scale pass completed.
    pub certified: bool,
    pub stats: PruneStats,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PruneStats {
    pub tuples_examined: u64,
    pub scales_enumerated: u64,
    pub scales_skipped: u64,
}

impl PruneStats {
    fn add(&mut self, o: &PruneStats) {
        self.tuples_examined += o.tuples_examined;
        self.scales_enumerated += o.scales_enumerated;
        self.scales_skipped += o.scales_skipped;
    }
}

/// Brute force over all `C(N - 1, m + 1)` tuples of other points.
pub fn menger_global_exact(sample: &WeightedSample, x_index: usize, override_cutoff: bool) -> Result<MengerResult> {
    let n = sample.len();
    if n > EXACT_CUTOFF && !override_cutoff {
        return Err(Error::CutoffExceeded { n, cutoff: EXACT_CUTOFF });
    }
    let k = sample.intrinsic_dim() + 1;
    let others: Vec<usize> = (0..n).filter(|&i| i != x_index).collect();
    let mut comb: Vec<usize> = (0..k).collect();
    let mut tuple: Vec<usize> = comb.iter().map(|&c| others[c]).collect();
    let mut best = (menger_of(sample, x_index, &tuple), tuple.clone());
    let mut examined = 1u64;
    while next_combination(&mut comb, others.len()) {
        for (t, &c) in tuple.iter_mut().zip(&comb) {
            *t = others[c];
        }
        let v = menger_of(sample, x_index, &tuple);
        examined += 1;
        if v > best.0 {
            best = (v, tuple.clone());
        }
    }
    Ok(MengerResult {
        value: best.0,
        witness: best.1,
        certified: true,
        stats: PruneStats { tuples_examined: examined, ..Default::default() },
    })
}

/// Pruned Menger search with precomputed neighbor lists.
pub struct MengerSearch<'a> {
    sample: &'a WeightedSample,
    neighbors: Vec<Vec<usize>>,
    pub budget: u64,
}

impl<'a> MengerSearch<'a> {
    pub fn new(sample: &'a WeightedSample) -> Self {
        let neighbors = (0..sample.len())
            .into_par_iter()
            .map(|i| {
                sample
                    .knn(sample.point(i), LOCAL_NEIGHBORS + 1)
                    .into_iter()
                    .map(|(j, _)| j)
                    .filter(|&j| j != i)
                    .take(LOCAL_NEIGHBORS)
                    .collect()
            })
            .collect();
        Self { sample, neighbors, budget: DEFAULT_TUPLE_BUDGET }
    }

    /// Per-point seed stream so results do not depend on scheduling.
    fn rng(seed: u64, x_index: usize) -> ChaCha8Rng {
        let mix = seed ^ (x_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        ChaCha8Rng::seed_from_u64(mix)
    }

    fn local_search(&self, x_index: usize, seed: u64, stats: &mut PruneStats) -> (f64, Vec<usize>) {
        let s = self.sample;
        let k = s.intrinsic_dim() + 1;
        let others = s.len() - 1;
        let mut rng = Self::rng(seed, x_index);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for _ in 0..LOCAL_STARTS {
            let mut tuple: Vec<usize> = sample_indices(&mut rng, others, k)
                .into_iter()
                .map(|i| if i >= x_index { i + 1 } else { i })
                .collect();
            tuple.sort_unstable();
            let mut value = menger_of(s, x_index, &tuple);
            stats.tuples_examined += 1;
            loop {
                let mut improved: Option<(f64, Vec<usize>)> = None;
                for slot in 0..k {
                    for &cand in &self.neighbors[tuple[slot]] {
                        if cand == x_index || tuple.contains(&cand) {
                            continue;
                        }
                        let mut t = tuple.clone();
                        t[slot] = cand;
                        t.sort_unstable();
                        let v = menger_of(s, x_index, &t);
                        stats.tuples_examined += 1;
                        let (bv, bt) = improved.as_ref().map_or((value, &tuple), |(a, b)| (*a, b));
                        if v > bv || (v == bv && improved.is_some() && t < *bt) {
                            improved = Some((v, t));
                        }
                    }
                }
                match improved {
                    Some((v, t)) if v > value => {
                        value = v;
                        tuple = t;
                    }
                    _ => break,
                }
            }
            if best.as_ref().is_none_or(|(bv, bt)| better(value, &tuple, *bv, bt)) {
                best = Some((value, tuple));
            }
        }
        best.expect("at least one start")
    }

    /// Certified-or-flagged lower bound on `K_G(x)`. After local search,
    /// tuple diameters are binned dyadically; the bin `(d_{k+1}, d_k]` is
    /// bounded by `C(n, m) h(d_k) d_k^m / d_{k+1}^{m+2}` (volume bound
    /// through the flatness height `h = d beta`) and by
    /// `1 / ((m+1)! d_{k+1})`, and is enumerated only when its bound
    /// reaches the incumbent.
    pub fn search(&self, x_index: usize, seed: u64) -> MengerResult {
        let s = self.sample;
        let m = s.intrinsic_dim();
        let k = m + 1;
        let mut stats = PruneStats::default();
        let (mut best_v, mut best_t) = self.local_search(x_index, seed, &mut stats);
        let x = s.point(x_index);
        let mut by_dist: Vec<(f64, usize)> = (0..s.len())
            .filter(|&j| j != x_index)
            .map(|j| (dist_sq(x, s.point(j)), j))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let c_nm = menger_beta_constant(s.ambient_dim(), m);
        let fact: f64 = (1..=k).map(|i| i as f64).product();
        let rho_max = by_dist.last().map_or(0.0, |e| e.0.sqrt());
        let mut certified = true;
        let mut d_hi = 2.0 * rho_max;
        loop {
            // Points within the closed ball B(x, d_hi).
            let count = by_dist.partition_point(|e| e.0 <= d_hi * d_hi);
            if count < k || d_hi == 0.0 {
                break;
            }
            let d_lo = d_hi / 2.0;
            let h = flatness_height(s, x_index, d_hi).unwrap_or(d_hi);
            let last = by_dist.partition_point(|e| e.0 <= d_lo * d_lo) < k;
            let bound = if h == 0.0 {
                0.0
            } else if last {
                f64::INFINITY
            } else {
                let vol = c_nm * h * d_hi.powi(m as i32) / d_lo.powi(m as i32 + 2);
                vol.min(1.0 / (fact * d_lo)) * (1.0 + BOUND_SLACK)
            };
            if bound < best_v || (bound == 0.0 && best_v == 0.0) {
                stats.scales_skipped += 1;
            } else {
                stats.scales_enumerated += 1;
                let ball: Vec<usize> = {
                    let mut b: Vec<usize> = by_dist[..count].iter().map(|e| e.1).collect();
                    b.sort_unstable();
                    b
                };
                let lo2 = if last { -1.0 } else { d_lo * d_lo };
                let hi2 = d_hi * d_hi;
                let mut comb: Vec<usize> = (0..k).collect();
                let mut tuple = vec![0usize; k];
                loop {
                    for (t, &c) in tuple.iter_mut().zip(&comb) {
                        *t = ball[c];
                    }
                    let mut diam2 = 0.0_f64;
                    for i in 0..k {
                        diam2 = diam2.max(dist_sq(x, s.point(tuple[i])));
                        for j in i + 1..k {
                            diam2 = diam2.max(dist_sq(s.point(tuple[i]), s.point(tuple[j])));
                        }
                    }
                    if diam2 > lo2 && diam2 <= hi2 {
                        let v = menger_of(s, x_index, &tuple);
                        stats.tuples_examined += 1;
                        if better(v, &tuple, best_v, &best_t) {
                            best_v = v;
                            best_t.copy_from_slice(&tuple);
                        }
                    }
                    if stats.tuples_examined > self.budget {
                        certified = false;
                        break;
                    }
                    if !next_combination(&mut comb, ball.len()) {
                        break;
                    }
                }
                if !certified {
                    break;
                }
            }
            if last {
                break;
            }
            d_hi = d_lo;
        }
        if certified && best_v == 0.0 {
            // Every tuple is flat: the exact search reports the first one.
            best_t = (0..s.len()).filter(|&j| j != x_index).take(k).collect();
        }
        MengerResult { value: best_v, witness: best_t, certified, stats }
    }
}

/// One-shot pruned search (builds the neighbor table).
pub fn menger_global_pruned(sample: &WeightedSample, x_index: usize, seed: u64) -> MengerResult {
    MengerSearch::new(sample).search(x_index, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TangentSource {
    Analytic,
    /// Local PCA plane on the open ball of this radius.
    Pca(f64),
}

impl TangentSource {
    pub fn planes(&self, sample: &WeightedSample) -> Result<Vec<Plane>> {
        match self {
            TangentSource::Analytic => sample.tangents().map(|t| t.to_vec()).ok_or(Error::MissingTangents),
            TangentSource::Pca(r) => (0..sample.len())
                .into_par_iter()
                .map(|i| best_plane_through(sample, sample.point(i), *r))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Pruned,
}

#[derive(Debug, Clone, Serialize)]
pub struct CurvatureField {
    pub kind: EnergyKind,
    pub method: Method,
    pub values: Vec<f64>,
    pub witnesses: Vec<Vec<usize>>,
    /// Per point: exact, or pruned with a completed scale pass.
    pub certified: Vec<bool>,
    pub prune_stats: PruneStats,
}

#[derive(Debug, Clone, Serialize)]
pub struct FieldSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub all_certified: bool,
}

impl CurvatureField {
    pub fn summary(&self) -> FieldSummary {
        let n = self.values.len().max(1) as f64;
        FieldSummary {
            min: self.values.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.values.iter().copied().fold(0.0, f64::max),
            mean: compensated_sum(self.values.iter().copied()) / n,
            all_certified: self.certified.iter().all(|c| *c),
        }
    }
}

/// Options for `curvature_field`.
#[derive(Debug, Clone)]
pub struct FieldOptions {
    pub tangents: TangentSource,
    pub method: Method,
    pub seed: u64,
    /// Lets the exact Menger search run above `EXACT_CUTOFF`.
    pub override_cutoff: bool,
}

impl Default for FieldOptions {
    fn default() -> Self {
        Self { tangents: TangentSource::Analytic, method: Method::Pruned, seed: 0, override_cutoff: false }
    }
}

pub fn curvature_field(sample: &WeightedSample, kind: EnergyKind, opts: &FieldOptions) -> Result<CurvatureField> {
    let n = sample.len();
    match kind {
        EnergyKind::TangentPoint => {
            let planes = opts.tangents.planes(sample)?;
            let res: Vec<(f64, usize)> = (0..n)
                .into_par_iter()
                .map(|i| match opts.method {
                    Method::Exact => tp_global(sample, i, &planes[i]),
                    Method::Pruned => tp_global_pruned(sample, i, &planes[i]),
                })
                .collect();
            Ok(CurvatureField {
                kind,
                method: opts.method,
                values: res.iter().map(|r| r.0).collect(),
                witnesses: res.iter().map(|r| vec![r.1]).collect(),
                certified: vec![true; n],
                prune_stats: PruneStats::default(),
            })
        }
        EnergyKind::Menger => {
            let res: Vec<MengerResult> = match opts.method {
                Method::Exact => {
                    if n > EXACT_CUTOFF && !opts.override_cutoff {
                        return Err(Error::CutoffExceeded { n, cutoff: EXACT_CUTOFF });
                    }
                    (0..n)
                        .into_par_iter()
                        .map(|i| menger_global_exact(sample, i, true))
                        .collect::<Result<_>>()?
                }
                Method::Pruned => {
                    let search = MengerSearch::new(sample);
                    (0..n).into_par_iter().map(|i| search.search(i, opts.seed)).collect()
                }
            };
            let mut stats = PruneStats::default();
            for r in &res {
                stats.add(&r.stats);
            }
            Ok(CurvatureField {
                kind,
                method: opts.method,
                values: res.iter().map(|r| r.value).collect(),
                witnesses: res.iter().map(|r| r.witness.clone()).collect(),
                certified: res.iter().map(|r| r.certified).collect(),
                prune_stats: stats,
            })
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CoupleCheck {
    pub is_couple: bool,
    pub distance_ok: bool,
    /// `S(x, y; alpha, d)`, ascending.
    pub s_set: Vec<usize>,
    pub s_weight: f64,
    pub required_weight: f64,
    /// `K_tp(z) > alpha / (9 d)` on all of `S`; `None` when `alpha >= 1/2`.
    pub tp_lower_bound_ok: Option<bool>,
    pub note: Option<String>,
}

/// `(lambda, alpha, d)` high-energy-couple test for `(x, y)` with the given
/// tangent planes.
pub fn high_energy_couple_check(
    sample: &WeightedSample,
    planes: &[Plane],
    x_index: usize,
    y_index: usize,
    lambda: f64,
    alpha: f64,
    d: f64,
) -> Result<CoupleCheck> {
    if planes.len() != sample.len() {
        return Err(Error::Inconsistent(format!("{} planes for {} points", planes.len(), sample.len())));
    }
    if !(alpha > 0.0 && d > 0.0 && lambda >= 0.0) {
        return Err(Error::InvalidParameter("need alpha > 0, d > 0, lambda >= 0".into()));
    }
    let m = sample.intrinsic_dim();
    let x = sample.point(x_index);
    let y = sample.point(y_index);
    let dxy = dist_sq(x, y).sqrt();
    let distance_ok = d / 2.0 <= dxy && dxy <= 2.0 * d;
    let mut v = vec![0.0; x.len()];
    let s_set: Vec<usize> = sample
        .neighbors_within(x, alpha * alpha * d)
        .into_iter()
        .filter(|&z| {
            sub_into(y, sample.point(z), &mut v);
            planes[z].rejection_norm(&v) >= alpha * d
        })
        .collect();
    let s_weight = compensated_sum(s_set.iter().map(|&z| sample.weights()[z]));
    let required_weight = lambda * omega(m) * alpha.powi(2 * m as i32) * d.powi(m as i32);
    let is_couple = distance_ok && !s_set.is_empty() && s_weight >= required_weight;
    let (tp_lower_bound_ok, note) = if alpha >= 0.5 {
        (None, Some("alpha >= 1/2: the lower bound on K_tp over S is not asserted".to_string()))
    } else {
        let threshold = alpha / (9.0 * d);
        let ok = s_set.par_iter().all(|&z| tp_global_pruned(sample, z, &planes[z]).0 > threshold);
        (Some(ok), None)
    };
    Ok(CoupleCheck { is_couple, distance_ok, s_set, s_weight, required_weight, tp_lower_bound_ok, note })
}

/// Scans pairs `(x, y)` with `x` among `base` and `y` in the annulus
/// `d/2 <= |x - y| <= 2d`, returning the couples found.
pub fn scan_couples(
    sample: &WeightedSample,
    planes: &[Plane],
    base: &[usize],
    lambda: f64,
    alpha: f64,
    d: f64,
) -> Result<Vec<(usize, usize, CoupleCheck)>> {
    let mut found = Vec::new();
    for &x in base {
        let ys: Vec<usize> = sample
            .neighbors_within_closed(sample.point(x), 2.0 * d)
            .into_iter()
            .filter(|&y| dist_sq(sample.point(x), sample.point(y)) >= d * d / 4.0)
            .collect();
        for y in ys {
            let c = high_energy_couple_check(sample, planes, x, y, lambda, alpha, d)?;
            if c.is_couple {
                found.push((x, y, c));
            }
        }
    }
    Ok(found)
}

#[derive(Debug, Clone, Serialize)]
pub struct TpBetaRow {
    pub point_index: usize,
    pub k_tp: f64,
    /// `1/R + max_k beta(x, r_k) / r_k`
    pub control: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TpBetaControl {
    /// Smallest `c` with `K_tp(x) <= c (1/R + sup_{r<R} beta(x, r)/r)` at
    /// every base point.
    pub c: f64,
    pub big_r: f64,
    pub radii: Vec<f64>,
    pub rows: Vec<TpBetaRow>,
}

/// Calibrates the constant in `K_tp(x) <= c (1/R + sup_{r<R} beta(x, r)/r)`
/// over base points, with the sup taken on the dyadic radii `R 2^-k`,
/// `1 <= k <= scales`, kept above the spacing floor.
pub fn tp_beta_control(
    sample: &WeightedSample,
    k_tp: &[f64],
    base: &[usize],
    big_r: f64,
    scales: usize,
) -> Result<TpBetaControl> {
    if k_tp.len() != sample.len() {
        return Err(Error::Inconsistent(format!("{} field values for {} points", k_tp.len(), sample.len())));
    }
    if !(big_r > 0.0) {
        return Err(Error::InvalidParameter(format!("R must be positive, got {big_r}")));
    }
    let floor = SPACING_FLOOR * sample.mean_spacing();
    let radii: Vec<f64> = (1..=scales as i32).map(|k| big_r * 2f64.powi(-k)).filter(|r| *r >= floor).collect();
    if radii.is_empty() {
        return Err(Error::EmptyGrid(format!("no radius below R = {big_r} clears the spacing floor {floor}")));
    }
    let rows: Vec<TpBetaRow> = base
        .par_iter()
        .map(|&i| {
            let mut sup = 0.0_f64;
            for &r in &radii {
                sup = sup.max(beta(sample, i, r, &PlaneStrategy::Optimize)? / r);
            }
            let control = 1.0 / big_r + sup;
            Ok(TpBetaRow { point_index: i, k_tp: k_tp[i], control, ratio: k_tp[i] / control })
        })
        .collect::<Result<_>>()?;
    let c = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(TpBetaControl { c, big_r, radii, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampled_set::{generate, Shape, ShapeSpec};

    fn sample(shape: Shape, count: usize) -> WeightedSample {
        generate(&ShapeSpec { shape, count, seed: 0 }).unwrap()
    }

    #[test]
    fn inverse_radius_conventions() {
        let h = Plane::coordinate(3, 2).unwrap();
        let x = [0.0, 0.0, 0.0];
        assert_eq!(tangent_point_inv_radius(&x, &x, &h), 0.0);
        assert_eq!(tangent_point_inv_radius(&x, &[1.0, 2.0, 0.0], &h), 0.0);
        // Chord-tangent identity on the unit sphere at the north pole.
        let t = 0.7_f64;
        let y = [t.sin(), 0.0, t.cos() - 1.0];
        let v = tangent_point_inv_radius(&x, &y, &h);
        assert!((v - 1.0).abs() < 1e-14, "{v}");
    }

    #[test]
    fn sphere_tp_field_is_constant() {
        let s = sample(Shape::Sphere { radius: 2.0 }, 3000);
        let f = curvature_field(&s, EnergyKind::TangentPoint, &FieldOptions::default()).unwrap();
        for v in &f.values {
            assert!((v - 0.5).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn pruned_tp_matches_scan() {
        let s = sample(Shape::Torus { major: 2.0, minor: 0.7 }, 1500);
        let t = s.tangents().unwrap();
        for i in (0..s.len()).step_by(37) {
            assert_eq!(tp_global(&s, i, &t[i]), tp_global_pruned(&s, i, &t[i]));
        }
    }

    #[test]
    fn wrong_plane_on_flat_disk_diverges() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 2000);
        let h = Plane::new(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]).unwrap();
        let (v, w) = tp_global(&s, 0, &h);
        assert!(v > 10.0, "{v} via {w}");
        let (z, _) = tp_global(&s, 0, &s.tangents().unwrap()[0]);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn exact_menger_cutoff_and_witness() {
        let s = sample(Shape::Circle { radius: 1.0, ambient_dim: 2 }, 24);
        let r = menger_global_exact(&s, 0, false).unwrap();
        assert_eq!(r.stats.tuples_examined, 253);
        assert_eq!(menger_of(&s, 0, &r.witness), r.value);
        assert!(r.value <= 0.25);
        let big = sample(Shape::Circle { radius: 1.0, ambient_dim: 2 }, 61);
        assert!(matches!(menger_global_exact(&big, 0, false), Err(Error::CutoffExceeded { .. })));
    }

    #[test]
    fn pruned_menger_on_flat_disk_skips_everything() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 50);
        let r = menger_global_pruned(&s, 3, 0);
        let e = menger_global_exact(&s, 3, false).unwrap();
        assert_eq!(r.value, 0.0);
        assert!(r.certified);
        assert_eq!(r.stats.scales_enumerated, 0);
        assert!(r.stats.scales_skipped > 0);
        assert_eq!(r.witness, e.witness);
    }

    #[test]
    fn pruned_equals_exact_on_small_sphere() {
        let s = sample(Shape::Sphere { radius: 1.0 }, 40);
        let search = MengerSearch::new(&s);
        for i in 0..s.len() {
            let e = menger_global_exact(&s, i, false).unwrap();
            let p = search.search(i, 7);
            assert!(p.certified);
            assert_eq!((p.value, &p.witness), (e.value, &e.witness));
        }
    }

    #[test]
    fn flat_disk_has_no_couples() {
        let s = sample(Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 2000);
        let planes = s.tangents().unwrap().to_vec();
        let c = high_energy_couple_check(&s, &planes, 0, 500, 0.0, 0.3, 0.4).unwrap();
        assert!(c.s_set.is_empty());
        assert!(!c.is_couple);
    }
}
