//! (m+1)-simplices `conv(x_0, ..., x_{m+1})` in R^n: volumes, heights,
//! diameter, the Menger kernel `K = vol / diam^(m+2)` and the voluminous class.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dist_sq, dot, norm};

/// Face-degeneracy threshold relative to `diam^m`.
pub const FACE_DEGENERACY_TOL: f64 = 1e-14;

/// Relative edge residual below which a simplex counts as flat.
pub const DEGENERATE_RESIDUAL: f64 = 1e-13;

/// `m + 2` vertices in R^n. Degenerate configurations are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    ambient_dim: usize,
    vertices: Vec<f64>,
}

impl Simplex {
    pub fn new(vertices: &[Vec<f64>]) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "a simplex needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        let n = vertices[0].len();
        if let Some(bad) = vertices.iter().find(|v| v.len() != n) {
            return Err(Error::DimensionMismatch { expected: n, actual: bad.len() });
        }
        Ok(Self { ambient_dim: n, vertices: vertices.iter().flatten().copied().collect() })
    }

    pub fn from_refs(vertices: &[&[f64]]) -> Result<Self> {
        let owned: Vec<Vec<f64>> = vertices.iter().map(|v| v.to_vec()).collect();
        Self::new(&owned)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len() / self.ambient_dim
    }

    /// `m`, so that the simplex is (m+1)-dimensional.
    pub fn intrinsic_dim(&self) -> usize {
        self.vertex_count() - 2
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.vertices[i * self.ambient_dim..(i + 1) * self.ambient_dim]
    }

    fn vertex_refs(&self) -> Vec<&[f64]> {
        (0..self.vertex_count()).map(|i| self.vertex(i)).collect()
    }

    pub fn diam(&self) -> f64 {
        diameter(&self.vertex_refs())
    }

    /// `H^{m+1}(conv(vertices))`.
    pub fn volume(&self) -> f64 {
        simplex_volume(&self.vertex_refs())
    }

    /// m-volume of the face opposite to vertex `j`.
    pub fn face_volume(&self, j: usize) -> Result<f64> {
        let k = self.vertex_count();
        if j >= k {
            return Err(Error::IndexOutOfRange { index: j, len: k });
        }
        let face: Vec<&[f64]> = (0..k).filter(|&i| i != j).map(|i| self.vertex(i)).collect();
        Ok(simplex_volume(&face))
    }

    /// Distance from `x_j` to the affine span of the remaining vertices.
    pub fn height(&self, j: usize) -> Result<f64> {
        let k = self.vertex_count();
        if j >= k {
            return Err(Error::IndexOutOfRange { index: j, len: k });
        }
        let face_vol = self.face_volume(j)?;
        let m = self.intrinsic_dim();
        let threshold = FACE_DEGENERACY_TOL * self.diam().powi(m as i32);
        if !(face_vol >= threshold) || face_vol == 0.0 {
            return Err(Error::DegenerateFace { face: j, volume: face_vol });
        }
        let others: Vec<&[f64]> = (0..k).filter(|&i| i != j).map(|i| self.vertex(i)).collect();
        Ok(distance_to_affine_span(self.vertex(j), &others))
    }

    /// Minimum height; 0 for degenerate simplices.
    pub fn h_min(&self) -> f64 {
        if self.volume() == 0.0 {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..self.vertex_count() {
            match self.height(j) {
                Ok(h) => best = best.min(h),
                Err(_) => return 0.0,
            }
        }
        best
    }

    /// `diam <= d` and `h_min >= eta d`.
    pub fn is_voluminous(&self, eta: f64, d: f64) -> bool {
        self.diam() <= d && self.h_min() >= eta * d
    }
}

/// Diameter of a finite point set.
pub fn diameter(points: &[&[f64]]) -> f64 {
    let mut best = 0.0_f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max(dist_sq(points[i], points[j]));
        }
    }
    best.sqrt()
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// k-volume of the simplex spanned by `k + 1` points: the product of the
/// successive residual norms of the edge vectors from the first vertex
/// (column-pivoted Gram-Schmidt, two passes) over `k!`. Exactly 0 when a
/// residual drops below `DEGENERATE_RESIDUAL` times its edge length.
pub fn simplex_volume(points: &[&[f64]]) -> f64 {
    let k = points.len().saturating_sub(1);
    if k == 0 {
        return 0.0;
    }
    let n = points[0].len();
    if k > n {
        return 0.0;
    }
    let base = points[0];
    let mut buf = [0.0; 64];
    let mut heap;
    let edges: &mut [f64] = if k * n <= 64 {
        &mut buf[..k * n]
    } else {
        heap = vec![0.0; k * n];
        &mut heap[..]
    };
    let mut lens = [0.0; 16];
    let mut lens_heap;
    let lens: &mut [f64] = if k <= 16 {
        &mut lens[..k]
    } else {
        lens_heap = vec![0.0; k];
        &mut lens_heap[..]
    };
    for (i, p) in points[1..].iter().enumerate() {
        for d in 0..n {
            edges[i * n + d] = p[d] - base[d];
        }
        lens[i] = norm(&edges[i * n..(i + 1) * n]);
        if lens[i] == 0.0 {
            return 0.0;
        }
    }
    let mut vol = 1.0;
    for step in 0..k {
        // Pivot: the remaining edge with the largest relative residual.
        let mut pivot = step;
        let mut best = -1.0;
        for i in step..k {
            let r = norm(&edges[i * n..(i + 1) * n]) / lens[i];
            if r > best {
                best = r;
                pivot = i;
            }
        }
        if pivot != step {
            for d in 0..n {
                edges.swap(step * n + d, pivot * n + d);
            }
            lens.swap(step, pivot);
        }
        let (done, rest) = edges.split_at_mut((step + 1) * n);
        let q = &mut done[step * n..];
        let r = norm(q);
        if !(r > DEGENERATE_RESIDUAL * lens[step]) {
            return 0.0;
        }
        vol *= r;
        q.iter_mut().for_each(|v| *v /= r);
        for i in 0..k - step - 1 {
            let e = &mut rest[i * n..(i + 1) * n];
            for _ in 0..2 {
                let c = dot(q, e);
                axpy(-c, q, e);
            }
        }
    }
    vol / factorial(k)
}

/// Distance from `x` to `aff(face)`.
pub fn distance_to_affine_span(x: &[f64], face: &[&[f64]]) -> f64 {
    let base = face[0];
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(face.len());
    for p in &face[1..] {
        let mut e: Vec<f64> = p.iter().zip(base).map(|(a, b)| a - b).collect();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&e, b);
                axpy(-c, b, &mut e);
            }
        }
        let len = norm(&e);
        if len > 0.0 {
            e.iter_mut().for_each(|v| *v /= len);
            basis.push(e);
        }
    }
    let mut r: Vec<f64> = x.iter().zip(base).map(|(a, b)| a - b).collect();
    for _ in 0..2 {
        for b in &basis {
            let c = dot(&r, b);
            axpy(-c, b, &mut r);
        }
    }
    norm(&r)
}

/// Menger kernel `K(x_0, ..., x_{m+1}) = vol(conv) / diam^{m+2}`, with
/// `0/0 := 0` for coincident points.
pub fn menger_curvature(points: &[&[f64]]) -> f64 {
    let vol = simplex_volume(points);
    if vol == 0.0 {
        return 0.0;
    }
    let d = diameter(points);
    if d == 0.0 {
        return 0.0;
    }
    vol / d.powi(points.len() as i32)
}

/// `C(n, m) = (2 + 4 sqrt(n - m - 1))^n 2^{-(n-m-1)}` from the volume bound
/// `vol(T) <= C beta(x_0, d) d^{m+1}`.
pub fn menger_beta_constant(n: usize, m: usize) -> f64 {
    assert!(m < n, "need m < n");
    let k = (n - m - 1) as f64;
    (2.0 + 4.0 * k.sqrt()).powi(n as i32) * 2f64.powf(-k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn regular_tetrahedron() -> Simplex {
        let s = 1.0 / 2f64.sqrt();
        // Edge length 1: scaled alternating cube corners.
        Simplex::new(&[
            vec![s / 2.0, s / 2.0, s / 2.0],
            vec![s / 2.0, -s / 2.0, -s / 2.0],
            vec![-s / 2.0, s / 2.0, -s / 2.0],
            vec![-s / 2.0, -s / 2.0, s / 2.0],
        ])
        .unwrap()
    }

    #[test]
    fn triangle_volume_and_heights() {
        let t = Simplex::new(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_abs_diff_eq!(t.volume(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(t.height(2).unwrap(), 1.0, epsilon = 1e-15);
        let collinear = Simplex::new(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(collinear.volume(), 0.0);
        assert_eq!(collinear.h_min(), 0.0);
    }

    #[test]
    fn regular_tetrahedron_values() {
        let t = regular_tetrahedron();
        assert_abs_diff_eq!(t.diam(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.volume(), 1.0 / (6.0 * 2f64.sqrt()), epsilon = 1e-14);
        for j in 0..4 {
            assert_abs_diff_eq!(t.height(j).unwrap(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-14);
        }
        assert!(t.is_voluminous(0.5, 1.0));
        assert!(!t.is_voluminous(0.9, 1.0));
    }

    #[test]
    fn equilateral_and_right_triangles() {
        let a = 2.0;
        let t = Simplex::new(&[
            vec![0.0, 0.0],
            vec![a, 0.0],
            vec![a / 2.0, a * 3f64.sqrt() / 2.0],
        ])
        .unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(t.height(j).unwrap(), a * 3f64.sqrt() / 2.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(t.h_min(), a * 3f64.sqrt() / 2.0, epsilon = 1e-14);
        let k = menger_curvature(&[t.vertex(0), t.vertex(1), t.vertex(2)]);
        assert_abs_diff_eq!(k, 3f64.sqrt() / (4.0 * a), epsilon = 1e-14);

        let r = Simplex::new(&[vec![0.0, 0.0], vec![3.0, 0.0], vec![0.0, 4.0]]).unwrap();
        assert_abs_diff_eq!(r.h_min(), 2.4, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_face_reports_index() {
        // x_0 is off the line through the other three collinear vertices:
        // the face opposite x_0 is degenerate.
        let s = Simplex::new(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![2.0, 0.0, 0.0],
        ])
        .unwrap();
        assert!(matches!(s.height(0), Err(Error::DegenerateFace { face: 0, .. })));
        assert_eq!(s.h_min(), 0.0);
        assert!(!s.is_voluminous(0.1, 10.0));
    }

    #[test]
    fn menger_kernel_edge_cases() {
        let p = [0.0, 0.0, 0.0];
        assert_eq!(menger_curvature(&[&p, &p, &p]), 0.0);
        let flat = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let refs: Vec<&[f64]> = flat.iter().map(|v| &v[..]).collect();
        assert_eq!(menger_curvature(&refs), 0.0);
    }

    #[test]
    fn menger_constant_values() {
        // n = 3, m = 2: (2 + 0)^3 * 2^0
        assert_eq!(menger_beta_constant(3, 2), 8.0);
        // n = 3, m = 1: (2 + 4)^3 * 2^-1
        assert_eq!(menger_beta_constant(3, 1), 108.0);
        assert_eq!(menger_beta_constant(2, 1), 4.0);
    }
}
