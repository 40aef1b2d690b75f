//! Acceptance suites. Every criterion runs its checks, times itself against
//! its budget and names the check that used the largest share of its
//! tolerance.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::Normal;

use crate::cli::{analyze, AnalyzeConfig, Source};
use crate::curvature::{
    curvature_field, menger_global_exact, tp_beta_control, FieldOptions, MengerSearch, Method, TangentSource,
};
use crate::energy::{ahlfors_scan, lp_energy_values, omega, sphere_bound, uniform_radius_scaling};
use crate::error::{Error, Result};
use crate::grassmann::{check_basis_class, const_c2, const_c3, const_c4, grassmann_distance, Plane};
use crate::graphpatch::{
    beta_bound_check, hajlasz_check, oscillation_energy_fit, oscillation_field_nodes, tp_field_on, GraphFunction,
    GraphPatch,
};
use crate::kdtree::Ball;
use crate::linalg::{dist, norm};
use crate::multiscale::{
    beta_with_plane, decay_fit, default_grid, kappa1, kappa2, scale_profile, spread_indices, EnergyKind,
    PlaneStrategy,
};
use crate::report::fmt_human;
use crate::sampled_set::{generate, sphere_without_tangents, spheroid_area, Shape, ShapeSpec, WeightedSample};
use crate::simplex::{menger_beta_constant, menger_curvature, Simplex};

/// Suite names with their criterion number and time budget in seconds.
pub const SUITES: &[(&str, u32, f64)] = &[
    ("circle-equality", 1, 1.0),
    ("sphere-equality", 2, 30.0),
    ("strict-minimality", 3, 30.0),
    ("menger-oracle", 4, 120.0),
    ("menger-beta", 5, 120.0),
    ("beta-decay", 6, 10.0),
    ("ahlfors", 7, 60.0),
    ("simplex", 8, 30.0),
    ("grassmann", 9, 30.0),
    ("graph", 10, 120.0),
    ("invariance", 11, 60.0),
];

/// Margin `ratio - 1` of the 2:1:1 ellipsoid over the sphere bound at
/// `p = 4`, from a dense reference run (N = 80000).
pub const ELLIPSOID_MARGIN: f64 = 0.6170117927;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub suite: String,
    pub passed: bool,
    pub checks_passed: bool,
    pub within_budget: bool,
    pub elapsed_s: f64,
    pub budget_s: f64,
    pub checks: u64,
    pub failures: u64,
    /// Failing check, or the one closest to its tolerance.
    pub worst: String,
    pub worst_load: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "[{}] criterion {:>2} {:<18} {:>9}s / {:>4}s  checks {:>7}  failures {:>3}  worst: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.suite,
            fmt_human(self.elapsed_s),
            self.budget_s,
            self.checks,
            self.failures,
            self.worst
        )
    }
}

/// Running verdict of one criterion. `load` is the share of the tolerance a
/// check used; failing checks rank above passing ones.
#[derive(Default)]
pub struct Tally {
    checks: u64,
    failures: u64,
    worst: Option<(bool, f64, String)>,
    metrics: BTreeMap<String, f64>,
}

impl Tally {
    pub fn check<L: FnOnce() -> String>(&mut self, ok: bool, load: f64, label: L) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
        }
        let load = if load.is_nan() { f64::INFINITY } else { load };
        let worse = match &self.worst {
            None => true,
            Some((wok, wload, _)) => (!ok && *wok) || (ok == *wok && load > *wload),
        };
        if worse {
            self.worst = Some((ok, load, label()));
        }
    }

    pub fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }
}

pub fn suite_names() -> Vec<&'static str> {
    SUITES.iter().map(|s| s.0).chain(["all"]).collect()
}

/// Runs a named suite (`all` runs every criterion in order).
pub fn run_suite(name: &str) -> Result<Vec<CriterionResult>> {
    if name == "all" {
        return Ok(SUITES.iter().map(|s| run_criterion(s.0)).collect());
    }
    if !SUITES.iter().any(|s| s.0 == name) {
        return Err(Error::InvalidParameter(format!(
            "unknown suite {name:?}; expected one of {}",
            suite_names().join(", ")
        )));
    }
    Ok(vec![run_criterion(name)])
}

fn run_criterion(name: &str) -> CriterionResult {
    let &(suite, id, budget) = SUITES.iter().find(|s| s.0 == name).expect("known suite");
    let body: fn(&mut Tally) -> Result<()> = match id {
        1 => circle_equality,
        2 => sphere_equality,
        3 => strict_minimality,
        4 => menger_oracle,
        5 => menger_beta,
        6 => beta_decay,
        7 => ahlfors,
        8 => simplex_identities,
        9 => grassmann_constants,
        10 => graph_suite,
        _ => invariance,
    };
    timed(id, suite, budget, body)
}

fn timed<F: FnOnce(&mut Tally) -> Result<()>>(id: u32, suite: &str, budget: f64, body: F) -> CriterionResult {
    let start = Instant::now();
    let mut t = Tally::default();
    if let Err(e) = body(&mut t) {
        t.check(false, f64::INFINITY, || format!("error: {e}"));
    }
    let elapsed = start.elapsed().as_secs_f64();
    let within_budget = elapsed < budget;
    let checks_passed = t.failures == 0 && t.checks > 0;
    let (worst, worst_load) = match t.worst {
        Some((_, load, label)) => (label, load),
        None => ("no checks ran".to_string(), f64::INFINITY),
    };
    let worst = if checks_passed && !within_budget {
        format!("runtime {}s over the {budget}s budget", fmt_human(elapsed))
    } else {
        worst
    };
    CriterionResult {
        id,
        suite: suite.to_string(),
        passed: checks_passed && within_budget,
        checks_passed,
        within_budget,
        elapsed_s: elapsed,
        budget_s: budget,
        checks: t.checks,
        failures: t.failures,
        worst,
        worst_load,
        metrics: t.metrics,
    }
}

fn shape(shape: Shape, count: usize) -> Result<WeightedSample> {
    generate(&ShapeSpec { shape, count, seed: 0 })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn circle_equality(t: &mut Tally) -> Result<()> {
    let s = shape(Shape::Circle { radius: 1.0, ambient_dim: 2 }, 2000)?;
    let f = curvature_field(&s, EnergyKind::TangentPoint, &FieldOptions::default())?;
    for p in [2.0, 4.0] {
        let (lp, _) = lp_energy_values(&f.values, s.weights(), p)?;
        let target = 2.0 * PI * (2.0 * PI).powf(1.0 / p - 1.0);
        let e = (lp / target - 1.0).abs();
        t.metric(format!("ratio_p{p}"), lp / target);
        t.check(e <= 0.01, e / 0.01, || format!("p = {p}: norm {} vs bound {}", fmt_human(lp), fmt_human(target)));
    }
    Ok(())
}

fn sphere_equality(t: &mut Tally) -> Result<()> {
    let s = shape(Shape::Sphere { radius: 1.0 }, 5000)?;
    let f = curvature_field(&s, EnergyKind::TangentPoint, &FieldOptions::default())?;
    for p in [3.0, 5.0] {
        let (lp, _) = lp_energy_values(&f.values, s.weights(), p)?;
        let target = (4.0 * PI).powf(1.0 / p - 0.5) * (3.0 * omega(3)).sqrt();
        let e = (lp / target - 1.0).abs();
        t.metric(format!("ratio_p{p}"), lp / target);
        t.check(e <= 0.02, e / 0.02, || format!("p = {p}: norm {} vs bound {}", fmt_human(lp), fmt_human(target)));
    }
    let pca = FieldOptions { tangents: TangentSource::Pca(0.5), ..Default::default() };
    let g = curvature_field(&s, EnergyKind::TangentPoint, &pca)?;
    for (label, field, tol) in [("analytic", &f, 1e-6), ("pca(0.5)", &g, 1e-2)] {
        let (i, dev) = field
            .values
            .iter()
            .map(|v| (v - 1.0).abs())
            .enumerate()
            .fold((0, 0.0), |a, (i, d)| if d > a.1 { (i, d) } else { a });
        t.metric(format!("max_pointwise_dev_{label}"), dev);
        t.check(dev <= tol, dev / tol, || format!("{label} tangents: |K_tp - 1| = {dev:e} at point {i}"));
    }
    Ok(())
}

fn strict_minimality(t: &mut Tally) -> Result<()> {
    let a = (4.0 * PI / spheroid_area(2.0, 1.0)).sqrt();
    let s = shape(Shape::Ellipsoid { axes: vec![2.0 * a, a, a] }, 20000)?;
    let f = curvature_field(&s, EnergyKind::TangentPoint, &FieldOptions::default())?;
    let (lp, _) = lp_energy_values(&f.values, s.weights(), 4.0)?;
    let margin = lp / sphere_bound(3, 4.0, 4.0 * PI)? - 1.0;
    let e = (margin / ELLIPSOID_MARGIN - 1.0).abs();
    t.metric("margin", margin);
    t.check(margin > 0.0 && e <= 0.01, e / 0.01, || {
        format!("margin {} vs frozen {}", fmt_human(margin), fmt_human(ELLIPSOID_MARGIN))
    });
    Ok(())
}

/// Test shapes for the exhaustive comparison: curves at 60 points, surfaces
/// at 30, and a 5 x 5 graph grid.
fn oracle_shapes() -> Vec<(Shape, usize)> {
    vec![
        (Shape::Circle { radius: 1.0, ambient_dim: 2 }, 60),
        (Shape::Circle { radius: 1.0, ambient_dim: 3 }, 60),
        (Shape::Ellipsoid { axes: vec![2.0, 1.0] }, 60),
        (Shape::Trefoil { scale: 1.0 }, 60),
        (Shape::Sphere { radius: 1.0 }, 30),
        (Shape::Ellipsoid { axes: vec![2.0, 1.0, 1.0] }, 30),
        (Shape::Torus { major: 1.0, minor: 0.4 }, 30),
        (Shape::FlatDisk { radius: 1.0, ambient_dim: 3 }, 30),
        (Shape::StackedSpheres { depth: 3 }, 30),
        (
            Shape::GraphOfFunction {
                function: GraphFunction::Paraboloid,
                m: 2,
                ambient_dim: 3,
                radius: 1.0,
                intervals: 4,
            },
            25,
        ),
    ]
}

fn shape_name(s: &Shape) -> String {
    let full = format!("{s:?}");
    full.split([' ', '{']).next().unwrap_or("").to_string()
}

fn menger_oracle(t: &mut Tally) -> Result<()> {
    for (sh, n) in oracle_shapes() {
        let s = shape(sh.clone(), n)?;
        let name = shape_name(&sh);
        let exact: Vec<_> = (0..s.len())
            .into_par_iter()
            .map(|i| menger_global_exact(&s, i, false))
            .collect::<Result<_>>()?;
        let search = MengerSearch::new(&s);
        for seed in 0..100u64 {
            let got: Vec<_> = (0..s.len()).into_par_iter().map(|i| search.search(i, seed)).collect();
            for (i, (g, e)) in got.iter().zip(&exact).enumerate() {
                let ok = g.value == e.value && g.witness == e.witness;
                t.check(ok, if ok { 0.0 } else { 1.0 + rel(g.value, e.value) }, || {
                    format!(
                        "{name} seed {seed} point {i}: pruned {:e} {:?} vs exact {:e} {:?}",
                        g.value, g.witness, e.value, e.witness
                    )
                });
            }
        }
    }
    Ok(())
}

/// Random tuples `(x_0, ..., x_{m+1})` at dyadic scales, each checked
/// against `K <= C(n,m) beta(x_0, d) / d` with `d` the tuple diameter and
/// beta optimized over the closed ball.
pub fn menger_beta_sweep(t: &mut Tally, label: &str, s: &WeightedSample, tuples: usize, seed: u64) -> Result<()> {
    let (n, m) = (s.ambient_dim(), s.intrinsic_dim());
    let c = menger_beta_constant(n, m);
    let diam = s.sample_diam().value;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drawn: Vec<Vec<usize>> = Vec::with_capacity(tuples);
    let mut tries = 0usize;
    while drawn.len() < tuples {
        tries += 1;
        if tries > 100 * tuples {
            return Err(Error::TooFewPoints { needed: m + 2, found: s.len() });
        }
        let x0 = rng.gen_range(0..s.len());
        let r = diam * 2f64.powf(-rng.gen_range(0.0..5.0));
        let near: Vec<usize> = s.neighbors_within_closed(s.point(x0), r).into_iter().filter(|&j| j != x0).collect();
        if near.len() < m + 1 {
            continue;
        }
        let mut tuple = vec![x0];
        tuple.extend(rand::seq::index::sample(&mut rng, near.len(), m + 1).into_iter().map(|k| near[k]));
        drawn.push(tuple);
    }
    let rows: Vec<(f64, f64, f64)> = drawn
        .par_iter()
        .map(|tuple| {
            let pts: Vec<&[f64]> = tuple.iter().map(|&i| s.point(i)).collect();
            let k = menger_curvature(&pts);
            let d = crate::simplex::diameter(&pts);
            let (b, _) = beta_with_plane(s, tuple[0], d, &PlaneStrategy::Optimize, Ball::Closed)?;
            Ok((k, d, b))
        })
        .collect::<Result<_>>()?;
    let mut max_ratio = 0.0_f64;
    for (tuple, &(k, d, b)) in drawn.iter().zip(&rows) {
        let lhs = k * d;
        let rhs = c * b;
        let ok = lhs <= rhs * (1.0 + 1e-9) + 1e-15;
        let load = if rhs > 0.0 { lhs / rhs } else if lhs > 0.0 { f64::INFINITY } else { 0.0 };
        max_ratio = max_ratio.max(load);
        t.check(ok, load, || format!("{label} tuple {tuple:?}: K d = {lhs:e} vs C beta = {rhs:e}"));
    }
    t.metric(format!("{label}_max_K_d_over_C_beta"), max_ratio);
    Ok(())
}

fn menger_beta(t: &mut Tally) -> Result<()> {
    let graph = Shape::GraphOfFunction {
        function: GraphFunction::Paraboloid,
        m: 2,
        ambient_dim: 3,
        radius: 1.0,
        intervals: 20,
    };
    let cases = [
        ("sphere", Shape::Sphere { radius: 1.0 }),
        ("torus", Shape::Torus { major: 1.0, minor: 0.4 }),
        ("graph", graph),
    ];
    for (k, (label, sh)) in cases.into_iter().enumerate() {
        let s = shape(sh, 441)?;
        menger_beta_sweep(t, label, &s, 100_000, 50 + k as u64)?;
    }
    Ok(())
}

fn beta_decay(t: &mut Tally) -> Result<()> {
    let s = sphere_without_tangents(1.0, 4_000_000)?;
    let radii: Vec<f64> = (0..8).map(|k| 2f64.powi(-k)).collect();
    let base = spread_indices(s.len(), 8);
    let prof = scale_profile(&s, &base, &radii, false)?;
    let fit = decay_fit(&prof, 4.0, 2, EnergyKind::TangentPoint)?;
    t.metric("slope", fit.kappa_hat);
    t.metric("beta_over_r", fit.constant_hat);
    t.metric("scales_used", fit.scales_used as f64);
    let e = (fit.kappa_hat - 1.0).abs();
    t.check(e <= 0.1, e / 0.1, || format!("slope {}", fmt_human(fit.kappa_hat)));
    let e = (fit.constant_hat / 0.5 - 1.0).abs();
    t.check(e <= 0.05, e / 0.05, || format!("beta/r limit {} vs 1/(2R) = 0.5", fmt_human(fit.constant_hat)));
    for p in [4.0, 8.0] {
        for (name, kappa) in [("kappa1", kappa1(p, 2)), ("kappa2", kappa2(p, 2))] {
            t.check(fit.kappa_hat > kappa, kappa / fit.kappa_hat, || {
                format!("slope {} vs {name}(p = {p}) = {}", fmt_human(fit.kappa_hat), fmt_human(kappa))
            });
        }
    }
    Ok(())
}

fn ahlfors(t: &mut Tally) -> Result<()> {
    for (label, sh) in [("sphere", Shape::Sphere { radius: 1.0 }), ("torus", Shape::Torus { major: 1.0, minor: 0.4 })] {
        let s = shape(sh, 5000)?;
        let base = spread_indices(s.len(), 64);
        let scan = ahlfors_scan(&s, &base, &default_grid(&s, 8))?;
        t.metric(format!("{label}_min_ratio"), scan.min_ratio);
        for row in &scan.rows {
            t.check(row.ok, 0.5 / row.ratio, || {
                format!("{label} point {} r = {}: mass ratio {}", row.point_index, fmt_human(row.r), fmt_human(row.ratio))
            });
        }
    }
    let family = [1.0, 2.0, 4.0]
        .iter()
        .map(|&r| shape(Shape::Sphere { radius: r }, 5000))
        .collect::<Result<Vec<_>>>()?;
    let rep = uniform_radius_scaling(&family, 4.0, EnergyKind::TangentPoint, &FieldOptions::default(), 16)?;
    t.metric("scaling_exponent", rep.fitted_exponent);
    let e = (rep.fitted_exponent - rep.predicted_exponent).abs();
    t.check(e <= 0.1, e / 0.1, || {
        format!("scaling exponent {} vs {}", fmt_human(rep.fitted_exponent), fmt_human(rep.predicted_exponent))
    });
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let d = Normal::new(0.0, 1.0).expect("standard normal");
    (0..n).map(|_| rng.sample(d)).collect()
}

fn unit(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    loop {
        let g = gaussian(rng, n);
        let l = norm(&g);
        if l > 1e-3 {
            return g.iter().map(|x| x / l).collect();
        }
    }
}

/// Haar-distributed orthogonal matrix (QR of a Gaussian matrix, signs fixed).
pub fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n * n);
    let qr = DMatrix::from_vec(n, n, g).qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn columns(q: &DMatrix<f64>, m: usize) -> Vec<Vec<f64>> {
    (0..m).map(|j| q.column(j).iter().copied().collect()).collect()
}

fn simplex_identities(t: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..n);
        let verts: Vec<Vec<f64>> = (0..m + 2).map(|_| gaussian(&mut rng, n)).collect();
        let s = Simplex::new(&verts)?;
        let vol = s.volume();
        for j in 0..m + 2 {
            let rhs = s.height(j)? * s.face_volume(j)? / (m + 1) as f64;
            let e = rel(vol, rhs);
            t.check(e <= 1e-9, e / 1e-9, || format!("face identity n = {n} m = {m} vertex {j}: {vol:e} vs {rhs:e}"));
        }
        let lower = s.h_min().powi(m as i32 + 1) / (1..=m + 1).map(|i| i as f64).product::<f64>();
        t.check(vol >= lower * (1.0 - 1e-9), lower / vol, || {
            format!("volume lower bound n = {n} m = {m}: {vol:e} vs {lower:e}")
        });
    }
    for _ in 0..10_000 {
        let n = rng.gen_range(2..=5);
        let m = rng.gen_range(1..n);
        let mut verts: Vec<Vec<f64>> = (0..m + 2).map(|_| gaussian(&mut rng, n)).collect();
        let s = Simplex::new(&verts)?;
        let d = s.diam() * (1.0 + 0.5 * rng.gen::<f64>());
        let eta = s.h_min() / d;
        let alpha = eta * eta / 8.0;
        // A quarter of the moves use the full allowance.
        let len = if rng.gen_bool(0.25) { alpha * d } else { alpha * d * rng.gen::<f64>().powf(1.0 / n as f64) };
        let dir = unit(&mut rng, n);
        for (x, u) in verts[0].iter_mut().zip(&dir) {
            *x += len * u;
        }
        let moved = Simplex::new(&verts)?;
        let (dm, hm) = (moved.diam(), moved.h_min());
        t.check(dm <= 1.125 * d * (1.0 + 1e-9), dm / (1.125 * d), || {
            format!("perturbed diameter n = {n} m = {m}: {dm:e} vs 9d/8 = {:e}", 1.125 * d)
        });
        t.check(hm >= 0.5 * eta * d * (1.0 - 1e-9), 0.5 * eta * d / hm, || {
            format!("perturbed min height n = {n} m = {m}: {hm:e} vs eta d / 2 = {:e}", 0.5 * eta * d)
        });
    }
    Ok(())
}

fn grassmann_constants(t: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dims = |rng: &mut ChaCha8Rng| {
        let n = rng.gen_range(2..=6);
        let m = rng.gen_range(1..n).min(3);
        (n, m)
    };
    // Orthonormal bases e, f = Q e with Q a Cayley rotation.
    for _ in 0..10_000 {
        let (n, m) = dims(&mut rng);
        let e = columns(&random_orthogonal(&mut rng, n), m);
        let size = 10f64.powf(rng.gen_range(-6.0..0.0));
        let g = DMatrix::from_vec(n, n, gaussian(&mut rng, n * n));
        let a = (&g - g.transpose()) * (size / 2.0);
        let id = DMatrix::<f64>::identity(n, n);
        let q = (&id - &a).lu().solve(&(&id + &a)).ok_or_else(|| Error::Inconsistent("Cayley solve".into()))?;
        let f: Vec<Vec<f64>> = e
            .iter()
            .map(|v| (&q * nalgebra::DVector::from_column_slice(v)).iter().copied().collect())
            .collect();
        let theta = e.iter().zip(&f).map(|(a, b)| dist(a, b)).fold(0.0, f64::max);
        let dg = grassmann_distance(&Plane::new(&e)?, &Plane::new(&f)?)?;
        let bound = 2.0 * m as f64 * theta;
        t.check(dg <= bound + 1e-9, dg / bound, || format!("close bases n = {n} m = {m}: {dg:e} vs 2 m theta = {bound:e}"));
    }
    // |Q_U e_i| <= theta < 1/sqrt 2.
    let mut done = 0;
    while done < 10_000 {
        let (n, m) = dims(&mut rng);
        let e = columns(&random_orthogonal(&mut rng, n), m);
        let size = 10f64.powf(rng.gen_range(-6.0..0.0));
        let span: Vec<Vec<f64>> =
            e.iter().map(|v| v.iter().zip(gaussian(&mut rng, n)).map(|(a, g)| a + size * g).collect()).collect();
        let Ok(u) = Plane::from_span(&span) else { continue };
        let theta = e.iter().map(|v| u.rejection_norm(v)).fold(0.0, f64::max);
        if !(theta > 0.0 && theta < 0.5f64.sqrt()) {
            continue;
        }
        done += 1;
        let dg = grassmann_distance(&u, &Plane::new(&e)?)?;
        let bound = const_c3(m) * theta;
        t.check(dg <= bound + 1e-9, dg / bound, || format!("angle bound n = {n} m = {m}: {dg:e} vs C3 theta = {bound:e}"));
    }
    // (rho, eps, delta)-basis v and |u_i - v_i| <= theta rho.
    let theta_max = 0.5f64.sqrt() - 0.25;
    let mut done = 0;
    while done < 10_000 {
        let (n, m) = dims(&mut rng);
        let e = columns(&random_orthogonal(&mut rng, n), m);
        let rho = 10f64.powf(rng.gen_range(-1.0..1.0));
        let sigma = 10f64.powf(rng.gen_range(-7.0..-2.0));
        let v: Vec<Vec<f64>> = e
            .iter()
            .map(|ei| {
                let stretch = 1.0 + sigma * rng.gen_range(-1.0..1.0);
                let g = gaussian(&mut rng, n);
                ei.iter().zip(g).map(|(a, g)| rho * (stretch * a + sigma * g / (n as f64).sqrt())).collect()
            })
            .collect();
        let eps = v.iter().map(|x| (norm(x) / rho - 1.0).abs()).fold(f64::MIN_POSITIVE, f64::max);
        let mut delta = f64::MIN_POSITIVE;
        for i in 0..m {
            for j in i + 1..m {
                delta = delta.max(crate::linalg::dot(&v[i], &v[j]).abs() / (rho * rho));
            }
        }
        let Ok(c4) = const_c4(m, eps, delta) else { continue };
        if !(eps < 0.5 && delta < 1.0) || !check_basis_class(&v, rho, eps, delta)? {
            continue;
        }
        let size = 10f64.powf(rng.gen_range(-6.0..theta_max.log10()));
        let u: Vec<Vec<f64>> = v
            .iter()
            .map(|vi| {
                let w = unit(&mut rng, n);
                let len = size * rho * rng.gen::<f64>().powf(1.0 / n as f64);
                vi.iter().zip(w).map(|(a, b)| a + len * b).collect()
            })
            .collect();
        let theta = u.iter().zip(&v).map(|(a, b)| dist(a, b)).fold(0.0, f64::max) / rho;
        if !(theta > 0.0 && theta < theta_max) {
            continue;
        }
        let Ok(up) = Plane::from_span(&u) else { continue };
        done += 1;
        let dg = grassmann_distance(&up, &Plane::from_span(&v)?)?;
        let bound = c4 * theta;
        t.check(dg <= bound + 1e-9, dg / bound, || {
            format!("perturbed basis n = {n} m = {m} eps = {eps:e} delta = {delta:e}: {dg:e} vs C4 theta = {bound:e}")
        });
    }
    t.metric("c2_m2", const_c2(2));
    t.metric("c3_m2", const_c3(2));
    Ok(())
}

fn stable(a: f64, b: f64) -> (bool, f64) {
    let top = a.abs().max(b.abs());
    if top == 0.0 {
        return (true, 0.0);
    }
    let load = (a - b).abs() / (0.2 * top);
    (load <= 1.0, load)
}

fn graph_functions() -> Vec<(&'static str, GraphFunction)> {
    vec![
        ("affine", GraphFunction::Affine { slope: vec![0.3, -0.2], offset: 0.1 }),
        ("quadratic", GraphFunction::Quadratic { matrix: vec![1.0, 0.3, 0.3, 0.5] }),
        ("paraboloid", GraphFunction::Paraboloid),
        ("sinusoidal", GraphFunction::Sinusoidal { amplitude: 0.1, frequency: 3.0 }),
    ]
}

fn graph_suite(t: &mut Tally) -> Result<()> {
    for (label, f) in graph_functions() {
        // [coarse, fine] x [p = 4, p = 8]
        let mut c_min = [[0.0; 2]; 2];
        let mut c_hat = [[0.0; 2]; 2];
        for (g, k) in [256usize, 512].into_iter().enumerate() {
            let patch = GraphPatch::builtin(f.clone(), 2, 3, 1.0, k)?;
            for (q, p) in [4.0, 8.0].into_iter().enumerate() {
                let s = (2.0 + p) / 2.0;
                let h = hajlasz_check(&patch, p, s, 10)?;
                t.check(h.c_min.is_finite() && !h.contradiction, 0.0, || {
                    format!("{label} h = R/{} p = {p}: c_min {}", k / 4, h.c_min)
                });
                let b = beta_bound_check(&patch, s, p)?;
                t.check(b.finite && b.c_hat.is_finite(), 0.0, || {
                    format!("{label} h = R/{} p = {p}: C_hat {}", k / 4, b.c_hat)
                });
                c_min[g][q] = h.c_min;
                c_hat[g][q] = b.c_hat;
            }
            if g == 0 {
                let sample = patch.sample_graph()?;
                let field = tp_field_on(&sample, &oscillation_field_nodes(&patch))?;
                for p in [4.0, 8.0] {
                    let fit = oscillation_energy_fit(&patch, &sample, p, &field)?;
                    let slope = fit.fitted_exponent.unwrap_or(f64::NAN);
                    if let Some(x) = fit.fitted_exponent {
                        t.metric(format!("{label}_oscillation_slope_p{p}"), x);
                    }
                    let ok = fit.passes && !fit.inconsistent;
                    let load = if fit.vacuous { 0.0 } else { (fit.tau - 0.05) / slope };
                    t.check(ok, load, || {
                        format!("{label} p = {p}: oscillation slope {} vs tau - 0.05 = {}", fmt_human(slope), fit.tau - 0.05)
                    });
                }
            }
        }
        for (q, p) in [4.0, 8.0].into_iter().enumerate() {
            t.metric(format!("{label}_c_min_p{p}"), c_min[1][q]);
            t.metric(format!("{label}_c_hat_p{p}"), c_hat[1][q]);
            let (ok, load) = stable(c_min[0][q], c_min[1][q]);
            t.check(ok, load, || format!("{label} p = {p}: c_min {} -> {}", c_min[0][q], c_min[1][q]));
            let (ok, load) = stable(c_hat[0][q], c_hat[1][q]);
            t.check(ok, load, || format!("{label} p = {p}: C_hat {} -> {}", c_hat[0][q], c_hat[1][q]));
        }
    }
    Ok(())
}

/// Field values and witnesses of `kind` on `s`.
fn field_of(s: &WeightedSample, kind: EnergyKind, method: Method) -> Result<(Vec<f64>, Vec<Vec<usize>>)> {
    let opts = FieldOptions { method, override_cutoff: true, ..Default::default() };
    let f = curvature_field(s, kind, &opts)?;
    Ok((f.values, f.witnesses))
}

fn invariance(t: &mut Tally) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = [
        ("ellipsoid tp", Shape::Ellipsoid { axes: vec![1.5, 1.0, 0.75] }, 1500, EnergyKind::TangentPoint, Method::Pruned),
        ("trefoil tp", Shape::Trefoil { scale: 1.0 }, 400, EnergyKind::TangentPoint, Method::Pruned),
        ("trefoil menger", Shape::Trefoil { scale: 1.0 }, 200, EnergyKind::Menger, Method::Pruned),
        ("ellipsoid menger", Shape::Ellipsoid { axes: vec![1.5, 1.0, 0.75] }, 40, EnergyKind::Menger, Method::Exact),
    ];
    for (label, sh, count, kind, method) in cases {
        let s = shape(sh, count)?;
        let n = s.ambient_dim();
        let (base, wit) = field_of(&s, kind, method)?;
        let q = random_orthogonal(&mut rng, n);
        let rot: Vec<f64> = (0..n).flat_map(|r| (0..n).map(move |c| (r, c))).map(|rc| q[rc]).collect();
        let shift: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (moved, _) = field_of(&s.transformed(&rot, &shift, 1.0)?, kind, method)?;
        for (i, (a, b)) in base.iter().zip(&moved).enumerate() {
            let e = rel(*a, *b);
            t.check(e <= 1e-9, e / 1e-9, || format!("{label} rigid motion point {i}: {a:e} vs {b:e}"));
        }
        let id: Vec<f64> = (0..n * n).map(|k| if k % (n + 1) == 0 { 1.0 } else { 0.0 }).collect();
        for lambda in [2.0, 0.25] {
            let (scaled, sw) = field_of(&s.transformed(&id, &vec![0.0; n], lambda)?, kind, method)?;
            for (i, (a, b)) in base.iter().zip(&scaled).enumerate() {
                let ok = b * lambda == *a && sw[i] == wit[i];
                t.check(ok, if ok { 0.0 } else { 1.0 + rel(b * lambda, *a) }, || {
                    format!("{label} scale {lambda} point {i}: {b:e} x {lambda} vs {a:e}")
                });
            }
        }
    }
    let configs = [
        AnalyzeConfig::for_shape(ShapeSpec { shape: Shape::Sphere { radius: 1.0 }, count: 2000, seed: 3 }),
        AnalyzeConfig {
            kind: EnergyKind::Menger,
            ..AnalyzeConfig::for_shape(ShapeSpec { shape: Shape::Trefoil { scale: 1.0 }, count: 200, seed: 0 })
        },
        AnalyzeConfig {
            tangents: Some(TangentSource::Pca(0.3)),
            ..AnalyzeConfig::for_shape(ShapeSpec { shape: Shape::Torus { major: 1.0, minor: 0.4 }, count: 1500, seed: 1 })
        },
    ];
    for cfg in configs {
        let label = match &cfg.source {
            Source::Shape(spec) => shape_name(&spec.shape),
            Source::Input { path, .. } => path.display().to_string(),
        };
        let runs: Vec<Vec<(String, String)>> = [1usize, 4]
            .iter()
            .map(|&k| {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(k)
                    .build()
                    .map_err(|e| Error::Inconsistent(e.to_string()))?;
                Ok(pool.install(|| analyze(&cfg))?.files)
            })
            .collect::<Result<_>>()?;
        for ((name, a), (_, b)) in runs[0].iter().zip(&runs[1]) {
            t.check(a == b, if a == b { 0.0 } else { 1.0 }, || format!("{label} {name} differs between 1 and 4 threads"));
        }
    }
    Ok(())
}

/// Checks applicable to an arbitrary sample: the Ahlfors scan and the
/// Menger/beta sweep.
pub fn input_suite(s: &WeightedSample) -> Vec<CriterionResult> {
    let a = timed(7, "ahlfors", 60.0, |t| {
        let base = spread_indices(s.len(), 64);
        let scan = ahlfors_scan(s, &base, &default_grid(s, 8))?;
        t.metric("min_ratio", scan.min_ratio);
        for row in &scan.rows {
            t.check(row.ok, 0.5 / row.ratio, || {
                format!("point {} r = {}: mass ratio {}", row.point_index, fmt_human(row.r), fmt_human(row.ratio))
            });
        }
        Ok(())
    });
    let b = timed(5, "menger-beta", 120.0, |t| menger_beta_sweep(t, "input", s, 10_000, 5));
    vec![a, b]
}

/// Smallest tangent-point/beta control constant over smooth test
/// shapes, at `R = diam / 2`.
pub fn tp_beta_constant() -> Result<(f64, Vec<(String, f64)>)> {
    let shapes = [
        Shape::Circle { radius: 1.0, ambient_dim: 2 },
        Shape::Ellipsoid { axes: vec![2.0, 1.0] },
        Shape::Trefoil { scale: 1.0 },
        Shape::Sphere { radius: 1.0 },
        Shape::Ellipsoid { axes: vec![2.0, 1.0, 1.0] },
        Shape::Torus { major: 1.0, minor: 0.4 },
    ];
    let mut per = Vec::new();
    for sh in shapes {
        let s = shape(sh.clone(), 3000)?;
        let f = curvature_field(&s, EnergyKind::TangentPoint, &FieldOptions::default())?;
        let ctl = tp_beta_control(&s, &f.values, &spread_indices(s.len(), 32), s.sample_diam().value / 2.0, 6)?;
        per.push((shape_name(&sh), ctl.c));
    }
    let c = per.iter().map(|p| p.1).fold(0.0, f64::max);
    Ok((c, per))
}
