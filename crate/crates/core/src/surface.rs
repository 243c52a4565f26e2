//! Deformed top surface of the elastomer slab under a hemispherical indenter.
//!
//! The surface sits at `z = 0` when undisturbed, with `z` pointing out of the
//! slab. Under indentation the surface conforms to the rigid tip inside the
//! contact disc of radius `a` and relaxes outside it along an exponential
//! skirt `-A exp(-(r - a) / L)`. The contact radius is chosen so that height
//! and slope are continuous at `r = a`:
//!
//! ```text
//!   cap:    h(r) = -d + r^2 / (R + sqrt(R^2 - r^2))        r <= a
//!   skirt:  h(r) = -A exp(-(r - a) / L)                    r >  a
//!   join:   A = d - R + sqrt(R^2 - a^2),   a / sqrt(R^2 - a^2) = A / L
//! ```
//!
//! The steepest slope of the whole profile is `A / L`, reached at the join.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optics::Vec3;

/// Probe tip axis position and penetration below the undisturbed surface.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndenterState {
    pub x: f64,
    pub y: f64,
    /// Positive into the elastomer; zero or negative means no contact.
    pub depth: f64,
}

impl IndenterState {
    pub fn new(x: f64, y: f64, depth: f64) -> Self {
        IndenterState { x, y, depth }
    }

    /// An indenter that does not touch the surface.
    pub fn hovering() -> Self {
        IndenterState::new(0.0, 0.0, -1.0)
    }

    pub fn in_contact(&self) -> bool {
        self.depth > 0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub slab_thickness_mm: f64,
    pub tip_radius_mm: f64,
    pub decay_length_mm: f64,
}

impl Default for SurfaceModel {
    fn default() -> Self {
        SurfaceModel {
            slab_thickness_mm: 8.0,
            tip_radius_mm: 3.0,
            decay_length_mm: 1.0,
        }
    }
}

impl SurfaceModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("slab_thickness_mm", self.slab_thickness_mm),
            ("tip_radius_mm", self.tip_radius_mm),
            ("decay_length_mm", self.decay_length_mm),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn check_indenter(&self, indenter: &IndenterState) -> Result<()> {
        if !indenter.depth.is_finite() || !indenter.x.is_finite() || !indenter.y.is_finite() {
            return Err(Error::invalid("indenter state must be finite"));
        }
        if indenter.depth > self.slab_thickness_mm {
            return Err(Error::invalid(format!(
                "indentation depth {} mm exceeds slab thickness {} mm",
                indenter.depth, self.slab_thickness_mm
            )));
        }
        Ok(())
    }
}

/// Precomputed radial profile for one indenter state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Imprint {
    pub center_x: f64,
    pub center_y: f64,
    pub depth: f64,
    pub tip_radius: f64,
    pub decay_length: f64,
    /// Radius of the disc where the surface touches the tip.
    pub contact_radius: f64,
    /// Skirt displacement at the contact boundary.
    pub skirt_amplitude: f64,
}

/// Contact radius solving the slope-matching condition by bisection.
fn contact_radius(depth: f64, tip_radius: f64, decay_length: f64) -> f64 {
    let r2 = tip_radius * tip_radius;
    let mismatch = |a: f64| {
        let s = (r2 - a * a).sqrt();
        a * decay_length / s - (depth - tip_radius + s)
    };
    let (mut lo, mut hi) = (0.0, tip_radius);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mismatch(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

impl Imprint {
    /// Profile for a contacting indenter; `None` when the tip is not below the
    /// surface.
    pub fn new(indenter: &IndenterState, model: &SurfaceModel) -> Option<Imprint> {
        if !indenter.in_contact() {
            return None;
        }
        let r = model.tip_radius_mm;
        let a = contact_radius(indenter.depth, r, model.decay_length_mm);
        let amp = indenter.depth - r + (r * r - a * a).sqrt();
        Some(Imprint {
            center_x: indenter.x,
            center_y: indenter.y,
            depth: indenter.depth,
            tip_radius: r,
            decay_length: model.decay_length_mm,
            contact_radius: a,
            skirt_amplitude: amp.max(0.0),
        })
    }

    /// Largest surface slope anywhere on the profile.
    #[inline]
    pub fn max_slope(&self) -> f64 {
        self.skirt_amplitude / self.decay_length
    }

    /// Bounds on `|grad h|` and on the second directional derivative of `h`
    /// over the region `r >= r_min`.
    pub fn slope_and_curvature_bounds(&self, r_min: f64) -> (f64, f64) {
        let a = self.contact_radius;
        let l = self.decay_length;
        let amp = self.skirt_amplitude;
        if r_min <= a {
            let rr = self.tip_radius;
            let s = (rr * rr - a * a).sqrt();
            let cap = rr * rr / (s * s * s);
            (self.max_slope(), cap.max(amp / (l * l)).max(1.0 / s))
        } else {
            let e = (-(r_min - a) / l).exp();
            let slope = amp / l * e;
            (slope, slope * (1.0 / l).max(1.0 / r_min))
        }
    }

    /// Centre of the tip sphere; the apex sits at `z = -depth`.
    pub fn sphere_center(&self) -> Vec3 {
        Vec3::new(self.center_x, self.center_y, self.tip_radius - self.depth)
    }

    #[inline]
    pub fn height_at_radius(&self, r: f64) -> f64 {
        let a = self.contact_radius;
        if r <= a {
            let rr = self.tip_radius;
            -self.depth + r * r / (rr + (rr * rr - r * r).sqrt())
        } else {
            -self.skirt_amplitude * (-(r - a) / self.decay_length).exp()
        }
    }

    #[inline]
    pub fn height(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        self.height_at_radius((dx * dx + dy * dy).sqrt())
    }

    /// Height and its gradient `(dh/dx, dh/dy)`.
    #[inline]
    pub fn height_and_gradient(&self, x: f64, y: f64) -> (f64, f64, f64) {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        let a = self.contact_radius;
        if r <= a {
            let rr = self.tip_radius;
            let s = (rr * rr - r2).sqrt();
            (-self.depth + r2 / (rr + s), dx / s, dy / s)
        } else {
            let e = self.skirt_amplitude * (-(r - a) / self.decay_length).exp();
            let g = e / (self.decay_length * r);
            (-e, g * dx, g * dy)
        }
    }

    /// Upward unit normal of the height field.
    #[inline]
    pub fn normal(&self, x: f64, y: f64) -> Vec3 {
        let (_, gx, gy) = self.height_and_gradient(x, y);
        let inv = 1.0 / (gx * gx + gy * gy + 1.0).sqrt();
        Vec3::new(-gx * inv, -gy * inv, inv)
    }

    #[inline]
    pub fn in_contact_disc(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center_x;
        let dy = y - self.center_y;
        dx * dx + dy * dy <= self.contact_radius * self.contact_radius
    }
}

/// Surface displacement (mm, never positive) at `(x, y)`.
pub fn surface_height(x: f64, y: f64, indenter: &IndenterState, model: &SurfaceModel) -> f64 {
    Imprint::new(indenter, model).map_or(0.0, |p| p.height(x, y))
}

/// Upward unit normal of the deformed surface at `(x, y)`.
pub fn surface_normal(x: f64, y: f64, indenter: &IndenterState, model: &SurfaceModel) -> Vec3 {
    Imprint::new(indenter, model).map_or(Vec3::Z, |p| p.normal(x, y))
}

/// Piecewise-linear load/indentation curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StiffnessCurve {
    /// `(depth_mm, force_n)` knots, depths strictly increasing from 0.
    knots: Vec<(f64, f64)>,
}

const DEFAULT_STIFFNESS: &str = include_str!("../data/stiffness_1to20_approx.txt");

impl Default for StiffnessCurve {
    fn default() -> Self {
        StiffnessCurve::parse(DEFAULT_STIFFNESS).expect("bundled stiffness curve is valid")
    }
}

impl StiffnessCurve {
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("stiffness curve needs at least two knots"));
        }
        if knots[0] != (0.0, 0.0) {
            return Err(Error::invalid("stiffness curve must start at (0, 0)"));
        }
        for w in knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid("stiffness depths must be strictly increasing"));
            }
            if !(w[1].1 >= w[0].1) {
                return Err(Error::invalid("stiffness forces must be non-decreasing"));
            }
        }
        Ok(StiffnessCurve { knots })
    }

    /// Parses two whitespace- or comma-separated columns `depth_mm force_n`;
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut knots = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::invalid(format!("line {}: bad number {s:?}", lineno + 1)))
            };
            match cols.as_slice() {
                [d, f] => knots.push((parse(d)?, parse(f)?)),
                _ => {
                    return Err(Error::invalid(format!(
                        "line {}: expected two columns",
                        lineno + 1
                    )))
                }
            }
        }
        StiffnessCurve::new(knots)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        StiffnessCurve::parse(&text).map_err(|e| Error::Format {
            kind: "stiffness curve",
            path: path.to_owned(),
            msg: e.to_string(),
        })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn max_depth(&self) -> f64 {
        self.knots.last().map_or(0.0, |k| k.0)
    }
}

/// Indentation force for a given depth. Non-positive depths carry no load.
pub fn depth_to_force(depth: f64, curve: &StiffnessCurve) -> Result<f64> {
    if depth <= 0.0 {
        return Ok(0.0);
    }
    let max = curve.max_depth();
    if depth > max || !depth.is_finite() {
        return Err(Error::OutsideCalibration {
            depth,
            min: 0.0,
            max,
        });
    }
    let k = &curve.knots;
    let i = k.partition_point(|&(d, _)| d < depth).max(1);
    let (d0, f0) = k[i - 1];
    let (d1, f1) = k[i];
    let t = (depth - d0) / (d1 - d0);
    Ok(f0 + t * (f1 - f0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Independent scalar radial profile: Newton's method on the join
    /// condition written in terms of the cap half-angle.
    fn radial_oracle(r: f64, d: f64, tip: f64, l: f64) -> f64 {
        // With a = R sin(phi), s = R cos(phi): L sin(phi) = (d - R) cos(phi) + R cos^2(phi).
        let g = |p: f64| l * p.sin() - (d - tip) * p.cos() - tip * p.cos().powi(2);
        let dg = |p: f64| l * p.cos() + (d - tip) * p.sin() + 2.0 * tip * p.cos() * p.sin();
        let mut p = 0.5;
        for _ in 0..100 {
            let step = g(p) / dg(p);
            p = (p - step).clamp(1e-12, std::f64::consts::FRAC_PI_2 - 1e-12);
            if step.abs() < 1e-16 {
                break;
            }
        }
        let a = tip * p.sin();
        let amp = d - tip + tip * p.cos();
        if r <= a {
            // Lowest point of the sphere minus the cap rise.
            -(d - (tip - (tip * tip - r * r).sqrt()))
        } else {
            -amp * (-(r - a) / l).exp()
        }
    }

    #[test]
    fn hovering_tip_leaves_surface_flat() {
        let m = SurfaceModel::default();
        let ind = IndenterState::new(1.0, 2.0, -2.0);
        for (x, y) in [(0.0, 0.0), (1.0, 2.0), (-5.0, 7.0)] {
            assert_eq!(surface_height(x, y, &ind, &m), 0.0);
            assert_eq!(surface_normal(x, y, &ind, &m), Vec3::Z);
        }
    }

    #[test]
    fn apex_depth_matches_penetration() {
        let m = SurfaceModel::default();
        let ind = IndenterState::new(0.5, -1.0, 1.5);
        assert_abs_diff_eq!(surface_height(0.5, -1.0, &ind, &m), -1.5, epsilon = 1e-15);
        assert_eq!(surface_normal(0.5, -1.0, &ind, &m), Vec3::Z);
    }

    #[test]
    fn radial_profile_matches_scalar_oracle() {
        let m = SurfaceModel::default();
        for &d in &[0.1, 0.6, 2.0, 3.0, 4.5] {
            let ind = IndenterState::new(0.0, 0.0, d);
            for i in 0..200 {
                let r = i as f64 * 0.07;
                let got = surface_height(r, 0.0, &ind, &m);
                let want = radial_oracle(r, d, m.tip_radius_mm, m.decay_length_mm);
                assert_abs_diff_eq!(got, want, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn profile_is_c1_at_contact_boundary() {
        let m = SurfaceModel::default();
        let p = Imprint::new(&IndenterState::new(0.0, 0.0, 2.0), &m).unwrap();
        let a = p.contact_radius;
        let eps = 1e-9;
        assert_abs_diff_eq!(p.height_at_radius(a - eps), p.height_at_radius(a + eps), epsilon = 1e-8);
        let (_, gin, _) = p.height_and_gradient(a - eps, 0.0);
        let (_, gout, _) = p.height_and_gradient(a + eps, 0.0);
        assert_abs_diff_eq!(gin, gout, epsilon = 1e-6);
        assert_abs_diff_eq!(gin, p.max_slope(), epsilon = 1e-6);
    }

    #[test]
    fn normal_matches_finite_differences() {
        let m = SurfaceModel::default();
        let ind = IndenterState::new(0.3, -0.2, 2.2);
        let h = 1e-5;
        for &(x, y) in &[(1.0, 0.5), (-2.0, 1.7), (3.3, -2.4), (0.9, 0.1), (6.0, 4.0)] {
            let n = surface_normal(x, y, &ind, &m);
            let gx = (surface_height(x + h, y, &ind, &m) - surface_height(x - h, y, &ind, &m)) / (2.0 * h);
            let gy = (surface_height(x, y + h, &ind, &m) - surface_height(x, y - h, &ind, &m)) / (2.0 * h);
            let fd = Vec3::new(-gx, -gy, 1.0).try_normalize().unwrap();
            for (a, b) in [(n.x, fd.x), (n.y, fd.y), (n.z, fd.z)] {
                assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-3), "{n:?} vs {fd:?}");
            }
        }
    }

    #[test]
    fn stiffness_curve_interpolation() {
        let c = StiffnessCurve::default();
        assert_eq!(depth_to_force(0.0, &c).unwrap(), 0.0);
        assert_abs_diff_eq!(depth_to_force(0.6, &c).unwrap(), 2.0, epsilon = 1e-12);
        let k = c.knots();
        for w in k.windows(2) {
            let mid = 0.5 * (w[0].0 + w[1].0);
            assert_abs_diff_eq!(depth_to_force(mid, &c).unwrap(), 0.5 * (w[0].1 + w[1].1), epsilon = 1e-12);
        }
        assert_eq!(depth_to_force(-1.0, &c).unwrap(), 0.0);
        assert!(matches!(
            depth_to_force(c.max_depth() + 0.1, &c),
            Err(Error::OutsideCalibration { .. })
        ));
    }

    #[test]
    fn stiffness_curve_rejects_bad_knots() {
        assert!(StiffnessCurve::parse("0 0\n1 2\n0.5 3\n").is_err());
        assert!(StiffnessCurve::parse("0 0\n1 2\n2 1\n").is_err());
        assert!(StiffnessCurve::parse("0.1 0\n1 2\n").is_err());
        assert!(StiffnessCurve::parse("0 0 1\n").is_err());
        let c = StiffnessCurve::parse("# header\n0, 0\n1.0, 4.0 # comment\n").unwrap();
        assert_eq!(c.knots().len(), 2);
    }

    #[test]
    fn depth_beyond_slab_is_rejected() {
        let m = SurfaceModel::default();
        assert!(m.check_indenter(&IndenterState::new(0.0, 0.0, 8.5)).is_err());
        assert!(m.check_indenter(&IndenterState::new(0.0, 0.0, 5.0)).is_ok());
    }
}
