//! L^p curvature energies, the sharp sphere and curve lower bounds,
//! Ahlfors-regularity scans and the uniform-radius scaling law.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::gamma::gamma;

use crate::curvature::{curvature_field, CurvatureField, FieldOptions};
use crate::error::{Error, Result};
use crate::linalg::{linear_fit, CompensatedSum};
use crate::multiscale::{EnergyKind, SPACING_FLOOR};
use crate::sampled_set::WeightedSample;

/// Volume of the unit m-ball, `pi^{m/2} / Gamma(m/2 + 1)`.
pub fn omega(m: usize) -> f64 {
    let h = m as f64 / 2.0;
    PI.powf(h) / gamma(h + 1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct EnergyReport {
    pub kind: EnergyKind,
    pub p: f64,
    /// `(sum K_i^p w_i)^{1/p}`
    pub lp_norm: f64,
    /// `lp_norm^p`
    pub energy: f64,
    pub total_measure: f64,
    pub bound: Option<f64>,
    pub ratio: Option<f64>,
}

/// Weighted power sum in index order with compensated accumulation.
pub fn lp_energy_values(values: &[f64], weights: &[f64], p: f64) -> Result<(f64, f64)> {
    if values.len() != weights.len() {
        return Err(Error::Inconsistent(format!(
            "{} field values for {} weights",
            values.len(),
            weights.len()
        )));
    }
    if !(p > 0.0) {
        return Err(Error::InvalidParameter(format!("p must be positive, got {p}")));
    }
    let mut acc = CompensatedSum::new();
    for (k, w) in values.iter().zip(weights) {
        acc.add(k.powf(p) * w);
    }
    let energy = acc.value();
    Ok((energy.powf(1.0 / p), energy))
}

/// Energy of a field, with the applicable sharp bound when one exists:
/// the curve bound for closed curves (`m = 1`), the sphere bound for
/// hypersurfaces (`m = n - 1 >= 2`, `p > m`).
pub fn lp_energy(field: &CurvatureField, sample: &WeightedSample, p: f64) -> Result<EnergyReport> {
    let (lp_norm, energy) = lp_energy_values(&field.values, sample.weights(), p)?;
    let total = sample.total_measure();
    let (n, m) = (sample.ambient_dim(), sample.intrinsic_dim());
    let bound = if field.kind != EnergyKind::TangentPoint {
        None
    } else if m == 1 {
        Some(curve_bound(p, total)?)
    } else if m == n - 1 && p > m as f64 {
        Some(sphere_bound(n, p, total)?)
    } else {
        None
    };
    Ok(EnergyReport {
        kind: field.kind,
        p,
        lp_norm,
        energy,
        total_measure: total,
        bound,
        ratio: bound.map(|b| lp_norm / b),
    })
}

/// `area^{1/p - 1/(n-1)} (n omega_n)^{1/(n-1)}`, attained by round spheres.
pub fn sphere_bound(n: usize, p: f64, area: f64) -> Result<f64> {
    if n < 2 || !(p > 0.0) || !(area > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sphere bound needs n >= 2, p > 0, area > 0 (got n = {n}, p = {p}, area = {area})"
        )));
    }
    let k = (n - 1) as f64;
    Ok(area.powf(1.0 / p - 1.0 / k) * (n as f64 * omega(n)).powf(1.0 / k))
}

/// `2 pi L^{1/p - 1}`, attained by round circles.
pub fn curve_bound(p: f64, length: f64) -> Result<f64> {
    if !(p > 0.0) || !(length > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "curve bound needs p > 0 and length > 0 (got p = {p}, length = {length})"
        )));
    }
    Ok(2.0 * PI * length.powf(1.0 / p - 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct AhlforsRow {
    pub point_index: usize,
    pub r: f64,
    pub ratio: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AhlforsScan {
    pub min_ratio: f64,
    pub rows: Vec<AhlforsRow>,
}

impl AhlforsScan {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.ok)
    }
}

/// `weight(B(x, r)) / (omega_m r^m)` over base points and the radii at or
/// above the spacing floor; `ok` marks ratio >= 1/2.
pub fn ahlfors_scan(sample: &WeightedSample, base: &[usize], radii: &[f64]) -> Result<AhlforsScan> {
    let floor = SPACING_FLOOR * sample.mean_spacing();
    let used: Vec<f64> = radii.iter().copied().filter(|r| *r >= floor).collect();
    if used.is_empty() || base.is_empty() {
        return Err(Error::EmptyGrid(format!(
            "need base points and radii at or above {SPACING_FLOOR} x mean spacing ({floor})"
        )));
    }
    let m = sample.intrinsic_dim();
    let om = omega(m);
    let rows: Vec<AhlforsRow> = base
        .par_iter()
        .flat_map_iter(|&i| {
            used.iter().map(move |&r| {
                let ratio = sample.ball_weight(sample.point(i), r) / (om * r.powi(m as i32));
                AhlforsRow { point_index: i, r, ratio, ok: ratio >= 0.5 }
            })
        })
        .collect();
    let min_ratio = rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min);
    Ok(AhlforsScan { min_ratio, rows })
}

/// Largest dyadic `r = 2^j` such that every dyadic radius from the spacing
/// floor up to `r` keeps the mass ratio at or above 1/2 at every base point.
pub fn empirical_uniform_radius(sample: &WeightedSample, base: &[usize]) -> Result<f64> {
    let floor = SPACING_FLOOR * sample.mean_spacing();
    let top = sample.sample_diam().value * 2.0;
    let mut j = top.log2().ceil() as i32;
    let mut radii = Vec::new();
    while 2f64.powi(j) >= floor {
        radii.push(2f64.powi(j));
        j -= 1;
    }
    radii.reverse();
    let scan = ahlfors_scan(sample, base, &radii)?;
    let mut best = None;
    for &r in &radii {
        if scan.rows.iter().filter(|row| row.r == r).all(|row| row.ok) {
            best = Some(r);
        } else {
            break;
        }
    }
    best.ok_or_else(|| Error::EmptyGrid("mass ratio below 1/2 already at the spacing floor".into()))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingMember {
    pub energy: f64,
    pub uniform_radius: f64,
    pub excluded: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingReport {
    pub members: Vec<ScalingMember>,
    pub fitted_exponent: f64,
    pub predicted_exponent: f64,
    pub residual: f64,
}

/// Fits `log R_0` against `log E` over a family of samples; the expected
/// slope is `-1 / (p - m)`. Zero-energy members are excluded.
pub fn uniform_radius_scaling(
    family: &[WeightedSample],
    p: f64,
    kind: EnergyKind,
    opts: &FieldOptions,
    base_count: usize,
) -> Result<ScalingReport> {
    let mut members = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut m = None;
    for s in family {
        if *m.get_or_insert(s.intrinsic_dim()) != s.intrinsic_dim() {
            return Err(Error::InsufficientFamily("members differ in intrinsic dimension".into()));
        }
        let field = curvature_field(s, kind, opts)?;
        let (_, energy) = lp_energy_values(&field.values, s.weights(), p)?;
        if !(energy > 0.0) {
            members.push(ScalingMember {
                energy,
                uniform_radius: f64::NAN,
                excluded: Some("zero energy (flat member)".into()),
            });
            continue;
        }
        let base = crate::multiscale::spread_indices(s.len(), base_count);
        let r0 = empirical_uniform_radius(s, &base)?;
        members.push(ScalingMember { energy, uniform_radius: r0, excluded: None });
        xs.push(energy.ln());
        ys.push(r0.ln());
    }
    let mut distinct = xs.clone();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InsufficientFamily(format!(
            "need at least 3 members with distinct nonzero energies, found {}",
            distinct.len()
        )));
    }
    let m = m.unwrap_or(1) as f64;
    let (slope, _, rms) = linear_fit(&xs, &ys).ok_or_else(|| Error::InsufficientFamily("degenerate fit".into()))?;
    Ok(ScalingReport { members, fitted_exponent: slope, predicted_exponent: -1.0 / (p - m), residual: rms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_ball_volumes() {
        assert_relative_eq!(omega(1), 2.0, max_relative = 1e-14);
        assert_relative_eq!(omega(2), PI, max_relative = 1e-14);
        assert_relative_eq!(omega(3), 4.0 * PI / 3.0, max_relative = 1e-14);
    }

    #[test]
    fn bounds_at_round_shapes() {
        let s = sphere_bound(3, 3.0, 4.0 * PI).unwrap();
        assert_relative_eq!(s, (4.0 * PI).powf(1.0 / 3.0), max_relative = 1e-14);
        let c = sphere_bound(2, 2.0, 2.0 * PI).unwrap();
        assert_relative_eq!(c, (2.0 * PI).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(curve_bound(2.0, 2.0 * PI).unwrap(), (2.0 * PI).sqrt(), max_relative = 1e-14);
        assert_relative_eq!(curve_bound(1.0, 1.0).unwrap(), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(curve_bound(1e12, 3.0).unwrap(), 2.0 * PI / 3.0, max_relative = 1e-9);
        assert!(sphere_bound(3, 0.0, 1.0).is_err());
    }

    #[test]
    fn area_scaling_of_sphere_bound() {
        let (n, p, a, l) = (3usize, 4.0, 2.5, 1.7_f64);
        let lhs = sphere_bound(n, p, l.powi(2) * a).unwrap();
        let rhs = l.powf(2.0 / p - 1.0) * sphere_bound(n, p, a).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-13);
    }

    #[test]
    fn zero_field_and_misalignment() {
        assert_eq!(lp_energy_values(&[0.0; 3], &[1.0; 3], 2.0).unwrap().0, 0.0);
        assert!(lp_energy_values(&[0.0; 3], &[1.0; 2], 2.0).is_err());
    }
}
