//! Linear m-planes in R^n: projections, the operator-norm angle metric,
//! (rho, eps, delta)-bases and the explicit perturbation constants C2, C3, C4.
//!
//! A [`Plane`] always stores an orthonormal frame. The metric between two
//! planes is `||pi_U - pi_V||`, the operator norm of the difference of the
//! orthogonal projectors, which for planes of equal dimension lies in `[0, 1]`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};

/// Frames whose Gram matrix is this close to the identity are accepted as is.
pub const ORTHONORMAL_TOL: f64 = 1e-10;
/// Frames within this distance of orthonormal are silently re-orthonormalized.
pub const REORTHONORMALIZE_TOL: f64 = 1e-6;
/// Gram-Schmidt residual norm below which a basis counts as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

/// An m-dimensional linear subspace of R^n with an orthonormal frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    ambient_dim: usize,
    /// `m` frame vectors stored row after row, each of length `ambient_dim`.
    frame: Vec<f64>,
}

impl Plane {
    /// Builds a plane from an (almost) orthonormal frame.
    ///
    /// Frames off by less than [`REORTHONORMALIZE_TOL`] in the max norm of
    /// `G - I` are re-orthonormalized; worse frames are rejected.
    pub fn new(frame: &[Vec<f64>]) -> Result<Self> {
        let (n, m) = check_shape(frame)?;
        let dev = gram_deviation(frame);
        if !(dev < REORTHONORMALIZE_TOL) {
            return Err(Error::InvalidPlane(format!(
                "frame deviates from orthonormal by {dev:e} (limit {REORTHONORMALIZE_TOL:e})"
            )));
        }
        if dev < ORTHONORMAL_TOL {
            let flat = frame.iter().flatten().copied().collect();
            return Ok(Self { ambient_dim: n, frame: flat });
        }
        let ortho = orthonormalize(frame)?;
        debug_assert_eq!(ortho.len(), m);
        Ok(Self { ambient_dim: n, frame: ortho.into_iter().flatten().collect() })
    }

    /// Plane spanned by an arbitrary linearly independent family.
    pub fn from_span(vectors: &[Vec<f64>]) -> Result<Self> {
        let (n, _) = check_shape(vectors)?;
        let ortho = orthonormalize(vectors)?;
        Ok(Self { ambient_dim: n, frame: ortho.into_iter().flatten().collect() })
    }

    /// Span of the first `m` standard basis vectors of R^n.
    pub fn coordinate(n: usize, m: usize) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(Error::InvalidPlane(format!("need 1 <= m < n, got m={m}, n={n}")));
        }
        let mut frame = vec![0.0; m * n];
        for i in 0..m {
            frame[i * n + i] = 1.0;
        }
        Ok(Self { ambient_dim: n, frame })
    }

    /// Orthogonal complement of a unit normal in R^n (a hyperplane).
    pub fn normal_complement(normal: &[f64]) -> Result<Self> {
        let n = normal.len();
        let len = norm(normal);
        if n < 2 || !(len > 0.0) {
            return Err(Error::InvalidPlane("zero normal".into()));
        }
        let unit: Vec<f64> = normal.iter().map(|x| x / len).collect();
        let comp = complete_basis(&[unit], n);
        Self::from_span(&comp[1..])
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.frame.len() / self.ambient_dim
    }

    pub fn frame_vector(&self, i: usize) -> &[f64] {
        &self.frame[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    pub fn frame_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.frame.chunks_exact(self.ambient_dim)
    }

    pub fn frame_flat(&self) -> &[f64] {
        &self.frame
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.ambient_dim {
            return Err(Error::DimensionMismatch { expected: self.ambient_dim, actual: v.len() });
        }
        Ok(())
    }

    /// Coordinates of `v` in the frame: `<v, e_i>`.
    #[inline]
    pub fn coords_into(&self, v: &[f64], out: &mut [f64]) {
        for (o, e) in out.iter_mut().zip(self.frame_vectors()) {
            *o = dot(v, e);
        }
    }

    /// `pi_H(v)`.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = vec![0.0; self.ambient_dim];
        for e in self.frame_vectors() {
            axpy(dot(v, e), e, &mut out);
        }
        Ok(out)
    }

    /// `Q_H(v) = v - pi_H(v)`.
    pub fn reject(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(v)?;
        let mut out = v.to_vec();
        for e in self.frame_vectors() {
            axpy(-dot(v, e), e, &mut out);
        }
        Ok(out)
    }

    /// `|Q_H(v)|`; `v` must have the ambient dimension.
    #[inline]
    pub fn rejection_norm(&self, v: &[f64]) -> f64 {
        let n = self.ambient_dim;
        if n <= 16 {
            let mut buf = [0.0; 16];
            let r = &mut buf[..n];
            r.copy_from_slice(v);
            for e in self.frame_vectors() {
                axpy(-dot(v, e), e, r);
            }
            norm(r)
        } else {
            let mut r = v.to_vec();
            for e in self.frame_vectors() {
                axpy(-dot(v, e), e, &mut r);
            }
            norm(&r)
        }
    }

    /// The n x n orthogonal projector onto the plane.
    pub fn projector(&self) -> DMatrix<f64> {
        let n = self.ambient_dim;
        let mut p = DMatrix::zeros(n, n);
        for e in self.frame_vectors() {
            for i in 0..n {
                for j in 0..n {
                    p[(i, j)] += e[i] * e[j];
                }
            }
        }
        p
    }

    /// Orthonormal frame of the orthogonal complement.
    pub fn complement_frame(&self) -> Vec<Vec<f64>> {
        let own: Vec<Vec<f64>> = self.frame_vectors().map(<[f64]>::to_vec).collect();
        let full = complete_basis(&own, self.ambient_dim);
        full[own.len()..].to_vec()
    }
}

/// An affine plane `base + direction`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePlane {
    pub base: Vec<f64>,
    pub direction: Plane,
}

impl AffinePlane {
    pub fn new(base: Vec<f64>, direction: Plane) -> Result<Self> {
        if base.len() != direction.ambient_dim() {
            return Err(Error::DimensionMismatch {
                expected: direction.ambient_dim(),
                actual: base.len(),
            });
        }
        Ok(Self { base, direction })
    }

    /// Euclidean distance from `y` to the affine plane.
    pub fn distance(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.base.len() {
            return Err(Error::DimensionMismatch { expected: self.base.len(), actual: y.len() });
        }
        let v: Vec<f64> = y.iter().zip(&self.base).map(|(a, b)| a - b).collect();
        Ok(self.direction.rejection_norm(&v))
    }
}

fn check_shape(frame: &[Vec<f64>]) -> Result<(usize, usize)> {
    let m = frame.len();
    if m == 0 {
        return Err(Error::EmptyBasis);
    }
    let n = frame[0].len();
    if let Some(bad) = frame.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
    }
    if m >= n {
        return Err(Error::InvalidPlane(format!("need 1 <= m < n, got m={m}, n={n}")));
    }
    if frame.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::InvalidPlane("non-finite frame entry".into()));
    }
    Ok((n, m))
}

fn gram_deviation(frame: &[Vec<f64>]) -> f64 {
    let mut dev: f64 = 0.0;
    for (i, a) in frame.iter().enumerate() {
        for (j, b) in frame.iter().enumerate() {
            let target = if i == j { 1.0 } else { 0.0 };
            dev = dev.max((dot(a, b) - target).abs());
        }
    }
    dev
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for (k, v) in vectors.iter().enumerate() {
        let mut f = v.clone();
        for _ in 0..2 {
            for e in &out {
                let c = dot(&f, e);
                axpy(-c, e, &mut f);
            }
        }
        let len = norm(&f);
        let scale = norm(v).max(1.0);
        if len < RANK_TOL * scale {
            return Err(Error::RankDeficient { index: k, residual: len });
        }
        f.iter_mut().for_each(|x| *x /= len);
        out.push(f);
    }
    Ok(out)
}

/// Extends an orthonormal family to an orthonormal basis of R^n using the
/// standard basis vectors in order.
fn complete_basis(family: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = family.to_vec();
    for i in 0..n {
        if out.len() == n {
            break;
        }
        let mut f = vec![0.0; n];
        f[i] = 1.0;
        for _ in 0..2 {
            for e in &out {
                let c = dot(&f, e);
                axpy(-c, e, &mut f);
            }
        }
        let len = norm(&f);
        if len > 1e-8 {
            f.iter_mut().for_each(|x| *x /= len);
            out.push(f);
        }
    }
    out
}

/// `||pi_U - pi_V||`, the largest singular value of the projector difference.
pub fn grassmann_distance(u: &Plane, v: &Plane) -> Result<f64> {
    if u.ambient_dim() != v.ambient_dim() {
        return Err(Error::DimensionMismatch { expected: u.ambient_dim(), actual: v.ambient_dim() });
    }
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch { expected: u.dim(), actual: v.dim() });
    }
    let diff = u.projector() - v.projector();
    let sv = diff.singular_values();
    let s = sv.iter().copied().fold(0.0_f64, f64::max);
    Ok(s.min(1.0))
}

/// True iff `(1-eps) rho <= |v_i| <= (1+eps) rho` and
/// `|<v_i, v_j>| <= delta rho^2` for `i != j`.
pub fn check_basis_class(basis: &[Vec<f64>], rho: f64, eps: f64, delta: f64) -> Result<bool> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let n = basis[0].len();
    if let Some(bad) = basis.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let lengths_ok = basis.iter().all(|v| {
        let l = norm(v);
        (1.0 - eps) * rho <= l && l <= (1.0 + eps) * rho
    });
    if !lengths_ok {
        return Ok(false);
    }
    for i in 0..basis.len() {
        for j in i + 1..basis.len() {
            if dot(&basis[i], &basis[j]).abs() > delta * rho * rho {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Result of the normalized recursive Gram-Schmidt scheme.
#[derive(Debug, Clone)]
pub struct RhoOrthonormalized {
    /// `rho * v_hat_k`, an ortho-rho-normal basis of the same span.
    pub vectors: Vec<Vec<f64>>,
    /// `max_i |v_i - rho * v_hat_i|`.
    pub max_deviation: f64,
}

/// Normalizes first (`w_k = v_k/|v_k|`), then orthogonalizes
/// `f_k = w_k - sum_{i<k} <w_k, v_hat_i> v_hat_i`, `v_hat_k = f_k / |f_k|`.
pub fn gram_schmidt_rho(basis: &[Vec<f64>], rho: f64) -> Result<RhoOrthonormalized> {
    if basis.is_empty() {
        return Err(Error::EmptyBasis);
    }
    let n = basis[0].len();
    if let Some(bad) = basis.iter().find(|v| v.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
    }
    if !(rho > 0.0) {
        return Err(Error::InvalidParameter(format!("rho must be positive, got {rho}")));
    }
    let mut hats: Vec<Vec<f64>> = Vec::with_capacity(basis.len());
    for (k, v) in basis.iter().enumerate() {
        let len = norm(v);
        if len < RANK_TOL {
            return Err(Error::RankDeficient { index: k, residual: len });
        }
        let w: Vec<f64> = v.iter().map(|x| x / len).collect();
        let mut f = w.clone();
        for e in &hats {
            axpy(-dot(&w, e), e, &mut f);
        }
        let flen = norm(&f);
        if flen < RANK_TOL {
            return Err(Error::RankDeficient { index: k, residual: flen });
        }
        f.iter_mut().for_each(|x| *x /= flen);
        hats.push(f);
    }
    let vectors: Vec<Vec<f64>> =
        hats.iter().map(|e| e.iter().map(|x| x * rho).collect()).collect();
    let max_deviation = basis
        .iter()
        .zip(&vectors)
        .map(|(v, w)| crate::linalg::dist(v, w))
        .fold(0.0, f64::max);
    Ok(RhoOrthonormalized { vectors, max_deviation })
}

/// `C2(m) = 8 [ (m-1) + 2 sum_{i=0}^{m-3} 3^i (m-i-2) ]`.
pub fn const_c2(m: usize) -> f64 {
    assert!(m >= 1, "m must be at least 1");
    let mut inner = 0.0;
    if m >= 3 {
        for i in 0..=(m - 3) {
            inner += 3f64.powi(i as i32) * (m - i - 2) as f64;
        }
    }
    8.0 * ((m - 1) as f64 + 2.0 * inner)
}

/// `C3(m) = 2m (2 + C2(m))`.
pub fn const_c3(m: usize) -> f64 {
    2.0 * m as f64 * (2.0 + const_c2(m))
}

/// `C4(m, eps, delta) = C3 / (1 - C3 (eps + C2 delta))`, defined only under
/// the smallness condition `C3 (eps + C2 delta) < 1/2`.
pub fn const_c4(m: usize, eps: f64, delta: f64) -> Result<f64> {
    let c2 = const_c2(m);
    let c3 = const_c3(m);
    let value = c3 * (eps + c2 * delta);
    if !(value < 0.5) {
        return Err(Error::SmallnessCondition { value });
    }
    Ok(c3 / (1.0 - value))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn line(angle: f64) -> Plane {
        Plane::new(&[vec![angle.cos(), angle.sin()]]).unwrap()
    }

    #[test]
    fn project_onto_axis() {
        let p = Plane::coordinate(2, 1).unwrap();
        assert_eq!(p.project(&[3.0, 4.0]).unwrap(), vec![3.0, 0.0]);
        assert_eq!(p.reject(&[3.0, 4.0]).unwrap(), vec![0.0, 4.0]);
        assert_eq!(p.project(&[2.0, 0.0]).unwrap(), vec![2.0, 0.0]);
        assert_eq!(p.reject(&[2.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn project_onto_diagonal() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let p = Plane::new(&[vec![s, s]]).unwrap();
        let v = p.project(&[1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(v[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v[1], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let p = Plane::coordinate(3, 2).unwrap();
        assert!(matches!(p.project(&[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn plane_construction_tolerances() {
        // Slight drift gets repaired.
        let p = Plane::new(&[vec![1.0 + 1e-8, 0.0, 0.0]]).unwrap();
        assert_abs_diff_eq!(norm(p.frame_vector(0)), 1.0, epsilon = 1e-15);
        // Gross error is rejected.
        assert!(Plane::new(&[vec![1.1, 0.0, 0.0]]).is_err());
        assert!(Plane::new(&[vec![1.0, 0.0], vec![1.0, 0.0]]).is_err());
        assert!(Plane::coordinate(2, 2).is_err());
    }

    #[test]
    fn distance_examples() {
        let e1 = line(0.0);
        assert_eq!(grassmann_distance(&e1, &e1).unwrap(), 0.0);
        assert_abs_diff_eq!(
            grassmann_distance(&e1, &line(std::f64::consts::FRAC_PI_2)).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // Projector difference of two lines at angle phi has eigenvalues +-sin(phi).
        assert_abs_diff_eq!(
            grassmann_distance(&e1, &line(std::f64::consts::PI / 6.0)).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn distance_equals_complement_distance() {
        let u = Plane::from_span(&[vec![1.0, 2.0, 0.5, 0.0], vec![0.0, 1.0, -1.0, 2.0]]).unwrap();
        let v = Plane::from_span(&[vec![0.3, 1.0, 0.0, 1.0], vec![1.0, 0.0, 1.0, 0.0]]).unwrap();
        let n = 4;
        let id = DMatrix::<f64>::identity(n, n);
        let qu = &id - u.projector();
        let qv = &id - v.projector();
        let d_q = (qv - qu).singular_values().max();
        assert_abs_diff_eq!(grassmann_distance(&u, &v).unwrap(), d_q, epsilon = 1e-12);
    }

    #[test]
    fn basis_class_examples() {
        let ortho = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        assert!(check_basis_class(&ortho, 1.0, 0.1, 0.1).unwrap());
        let doubled = vec![vec![2.0, 0.0, 0.0], vec![0.0, 2.0, 0.0]];
        assert!(!check_basis_class(&doubled, 1.0, 0.5, 0.1).unwrap());
        let a = 80f64.to_radians();
        let pair = vec![vec![1.0, 0.0], vec![a.cos(), a.sin()]];
        assert!(check_basis_class(&pair, 1.0, 0.01, 0.2).unwrap());
        assert!(!check_basis_class(&pair, 1.0, 0.01, 0.17).unwrap());
        assert_eq!(check_basis_class(&[], 1.0, 0.1, 0.1), Err(Error::EmptyBasis));
    }

    #[test]
    fn gram_schmidt_examples() {
        let ortho = vec![vec![0.0, 2.0, 0.0], vec![0.0, 0.0, 2.0]];
        let r = gram_schmidt_rho(&ortho, 2.0).unwrap();
        assert_eq!(r.vectors, ortho);
        assert_eq!(r.max_deviation, 0.0);

        let a = 85f64.to_radians();
        let r = gram_schmidt_rho(&[vec![1.0, 0.0], vec![a.cos(), a.sin()]], 1.0).unwrap();
        assert_abs_diff_eq!(r.vectors[1][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.vectors[1][1], 1.0, epsilon = 1e-15);
        // |(cos 85, sin 85 - 1)| = sqrt(2 - 2 sin 85)
        let expected = (2.0 - 2.0 * a.sin()).sqrt();
        assert_abs_diff_eq!(r.max_deviation, expected, epsilon = 1e-14);
        assert_abs_diff_eq!(r.max_deviation, 0.0872, epsilon = 1e-4);

        let err = gram_schmidt_rho(&[vec![1.0, 0.0], vec![2.0, 0.0]], 1.0).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { index: 1, .. }));
    }

    #[test]
    fn constants() {
        assert_eq!(const_c2(1), 0.0);
        assert_eq!(const_c2(2), 8.0);
        assert_eq!(const_c2(3), 32.0);
        assert_eq!(const_c2(4), 104.0);
        assert_eq!(const_c3(1), 4.0);
        assert_eq!(const_c3(2), 40.0);
        assert!(matches!(const_c4(1, 0.125, 0.0), Err(Error::SmallnessCondition { .. })));
        assert!(matches!(const_c4(1, 0.2, 0.0), Err(Error::SmallnessCondition { .. })));
        assert_abs_diff_eq!(const_c4(1, 0.0625, 0.0).unwrap(), 4.0 / 0.75, epsilon = 1e-14);
    }

    #[test]
    fn complement_is_orthogonal() {
        let p = Plane::from_span(&[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0, 1.0]]).unwrap();
        let c = p.complement_frame();
        assert_eq!(c.len(), 2);
        for q in &c {
            for e in p.frame_vectors() {
                assert!(dot(q, e).abs() < 1e-14);
            }
            assert_abs_diff_eq!(norm(q), 1.0, epsilon = 1e-14);
        }
    }
}
