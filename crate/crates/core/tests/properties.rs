use curvametric::curvature::{curvature_field, tangent_point_inv_radius, FieldOptions, Method};
use curvametric::energy::lp_energy_values;
use curvametric::grassmann::{const_c2, grassmann_distance, Plane};
use curvametric::graphpatch::{maximal_function, GraphPatch};
use curvametric::kdtree::{Ball, KdTree};
use curvametric::multiscale::{beta, beta_seeded, EnergyKind, PlaneStrategy};
use curvametric::report::fmt_machine;
use curvametric::sampled_set::{generate, Shape, ShapeSpec};
use curvametric::simplex::{menger_curvature, Simplex};
use proptest::prelude::*;

fn vec_in(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn frame(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(vec_in(n), m)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn grassmann_distance_is_a_metric(a in frame(4, 2), b in frame(4, 2), c in frame(4, 2)) {
        let (Ok(u), Ok(v), Ok(w)) = (Plane::from_span(&a), Plane::from_span(&b), Plane::from_span(&c)) else {
            return Ok(());
        };
        let uv = grassmann_distance(&u, &v).unwrap();
        prop_assert!((0.0..=1.0).contains(&uv));
        prop_assert_eq!(uv, grassmann_distance(&v, &u).unwrap());
        prop_assert!(grassmann_distance(&u, &u).unwrap() < 1e-12);
        let uw = grassmann_distance(&u, &w).unwrap();
        let vw = grassmann_distance(&v, &w).unwrap();
        prop_assert!(uv <= uw + vw + 1e-12);
    }

    #[test]
    fn rejection_is_orthogonal_to_the_plane(a in frame(5, 2), x in vec_in(5)) {
        let Ok(u) = Plane::from_span(&a) else { return Ok(()) };
        let r = u.reject(&x).unwrap();
        for e in u.frame_vectors() {
            let d: f64 = e.iter().zip(&r).map(|(p, q)| p * q).sum();
            prop_assert!(d.abs() < 1e-12);
        }
        let p = u.project(&x).unwrap();
        for k in 0..5 {
            prop_assert!((p[k] + r[k] - x[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn face_identity_and_scaling(pts in frame(3, 4), lambda in 0.1..10.0f64) {
        let s = Simplex::new(&pts).unwrap();
        let vol = s.volume();
        prop_assume!(vol > 1e-6);
        for j in 0..4 {
            let rhs = s.height(j).unwrap() * s.face_volume(j).unwrap() / 3.0;
            prop_assert!((vol - rhs).abs() <= 1e-9 * vol);
        }
        let scaled: Vec<Vec<f64>> = pts.iter().map(|p| p.iter().map(|x| lambda * x).collect()).collect();
        let t = Simplex::new(&scaled).unwrap();
        prop_assert!((t.volume() - lambda.powi(3) * vol).abs() <= 1e-9 * lambda.powi(3) * vol);
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let srefs: Vec<&[f64]> = scaled.iter().map(|p| &p[..]).collect();
        let k = menger_curvature(&refs);
        prop_assert!((menger_curvature(&srefs) * lambda - k).abs() <= 1e-9 * k);
    }

    #[test]
    fn menger_kernel_is_symmetric(pts in frame(3, 3)) {
        let refs: Vec<&[f64]> = pts.iter().map(|p| &p[..]).collect();
        let k = menger_curvature(&refs);
        let rev: Vec<&[f64]> = refs.iter().rev().copied().collect();
        prop_assert!((menger_curvature(&rev) - k).abs() <= 1e-12 * k.max(1.0));
    }

    #[test]
    fn tangent_point_kernel_scales_and_vanishes_in_plane(a in frame(3, 2), x in vec_in(3), y in vec_in(3), c in -3.0..3.0f64) {
        let Ok(h) = Plane::from_span(&a) else { return Ok(()) };
        let v = tangent_point_inv_radius(&x, &y, &h);
        prop_assert!(v >= 0.0);
        let lx: Vec<f64> = x.iter().map(|t| 2.0 * t).collect();
        let ly: Vec<f64> = y.iter().map(|t| 2.0 * t).collect();
        prop_assert_eq!(tangent_point_inv_radius(&lx, &ly, &h) * 2.0, v);
        let inplane: Vec<f64> = x.iter().zip(h.frame_vector(0)).map(|(p, e)| p + c * e).collect();
        // Rounding in x + c e leaves a residue of order eps / c^2.
        prop_assert!(tangent_point_inv_radius(&x, &inplane, &h) * c * c <= 1e-13);
    }

    #[test]
    fn lp_norm_is_homogeneous(vals in prop::collection::vec(0.0..5.0f64, 1..50), p in 1.0..8.0f64, c in 0.5..4.0f64) {
        let w = vec![0.1; vals.len()];
        let (a, _) = lp_energy_values(&vals, &w, p).unwrap();
        let scaled: Vec<f64> = vals.iter().map(|v| c * v).collect();
        let (b, _) = lp_energy_values(&scaled, &w, p).unwrap();
        prop_assert!((b - c * a).abs() <= 1e-12 * (1.0 + c * a));
    }

    #[test]
    fn radius_queries_match_brute_force(coords in prop::collection::vec(-1.0..1.0f64, 3..120), r in 0.0..1.5f64) {
        let n = coords.len() / 3 * 3;
        let coords = &coords[..n];
        let tree = KdTree::build(coords, 3);
        let x = [0.1, -0.2, 0.05];
        for ball in [Ball::Open, Ball::Closed] {
            let mut got = tree.within(coords, &x, r, ball);
            got.sort_unstable();
            let want: Vec<usize> = (0..n / 3)
                .filter(|&i| {
                    let d2: f64 = (0..3).map(|k| (coords[3 * i + k] - x[k]).powi(2)).sum();
                    match ball { Ball::Open => d2 < r * r, Ball::Closed => d2 <= r * r }
                })
                .collect();
            prop_assert_eq!(got, want);
        }
    }

    #[test]
    fn maximal_function_dominates_and_is_monotone(field in prop::collection::vec(0.0..3.0f64, 81), bump in 0.0..2.0f64, node in 0usize..81) {
        let patch = GraphPatch::from_values(2, 1, 1.0, 8, vec![0.0; 81]).unwrap();
        let m = maximal_function(&patch, &field, 1.0).unwrap();
        for (g, mg) in field.iter().zip(&m) {
            prop_assert!(*mg >= g * (1.0 - 1e-12));
        }
        let mut larger = field.clone();
        larger[node] += bump;
        let ml = maximal_function(&patch, &larger, 1.0).unwrap();
        for (a, b) in m.iter().zip(&ml) {
            prop_assert!(*b >= a * (1.0 - 1e-12));
        }
    }

    #[test]
    fn machine_floats_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
        prop_assert_eq!(fmt_machine(v).parse::<f64>().unwrap(), v);
    }
}

#[test]
fn c2_is_increasing() {
    for m in 1..10 {
        assert!(const_c2(m + 1) > const_c2(m));
    }
}

#[test]
fn optimized_beta_never_exceeds_a_given_plane() {
    let s = generate(&ShapeSpec { shape: Shape::Torus { major: 1.0, minor: 0.4 }, count: 3000, seed: 2 }).unwrap();
    let tangents = s.tangents().unwrap().to_vec();
    for (k, i) in [0usize, 411, 1250, s.len() - 1].into_iter().enumerate() {
        for r in [0.1, 0.3, 0.8] {
            let seed_plane = &tangents[(i + 7 * k + 1) % s.len()];
            let given = beta(&s, i, r, &PlaneStrategy::Given(seed_plane.clone())).unwrap();
            let opt = beta_seeded(&s, i, r, std::slice::from_ref(seed_plane)).unwrap();
            assert!(opt <= given, "point {i} r {r}: {opt} > {given}");
        }
    }
}

#[test]
fn witnesses_ignore_weight_rescaling() {
    let s = generate(&ShapeSpec { shape: Shape::Ellipsoid { axes: vec![1.5, 1.0, 0.5] }, count: 100, seed: 0 }).unwrap();
    let heavy = s.reweighted(3.5).unwrap();
    for kind in [EnergyKind::TangentPoint, EnergyKind::Menger] {
        let opts = FieldOptions { method: Method::Pruned, ..Default::default() };
        let a = curvature_field(&s, kind, &opts).unwrap();
        let b = curvature_field(&heavy, kind, &opts).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.witnesses, b.witnesses);
    }
}
