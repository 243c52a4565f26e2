//! Geometric primitives and the optical laws at the elastomer/air interface.
//!
//! All lengths are in millimetres and all angles in radians. The interface
//! model is binary: above the critical angle a ray is totally internally
//! reflected with its full power, below it the ray escapes entirely. Partial
//! Fresnel reflectance is not modelled.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);
    pub const X: Vec3 = Vec3::new(1.0, 0.0, 0.0);
    pub const Y: Vec3 = Vec3::new(0.0, 1.0, 0.0);
    pub const Z: Vec3 = Vec3::new(0.0, 0.0, 1.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn try_normalize(self) -> Option<Vec3> {
        let n = self.norm();
        if n.is_finite() && n > 1e-300 {
            Some(self * (1.0 / n))
        } else {
            None
        }
    }

    pub fn is_unit(self, tol: f64) -> bool {
        (self.norm() - 1.0).abs() < tol
    }

    /// Rotation by a quarter turn counter-clockwise about the z axis.
    #[inline]
    pub fn rot90(self) -> Vec3 {
        Vec3::new(-self.y, self.x, self.z)
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// A light path segment carrying a dimensionless radiant weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub power: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, power: f64) -> Self {
        Ray {
            origin,
            direction,
            power,
        }
    }

    #[inline]
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpticalMedium {
    pub refractive_index: f64,
}

impl OpticalMedium {
    pub const AIR: OpticalMedium = OpticalMedium {
        refractive_index: 1.0,
    };
    /// Cured PDMS, approximately.
    pub const PDMS: OpticalMedium = OpticalMedium {
        refractive_index: 1.4,
    };

    pub fn new(refractive_index: f64) -> Result<Self> {
        if !(refractive_index >= 1.0) || !refractive_index.is_finite() {
            return Err(Error::invalid(format!(
                "refractive index must be >= 1, got {refractive_index}"
            )));
        }
        Ok(OpticalMedium { refractive_index })
    }
}

/// Angle from the surface normal above which light travelling from the inner
/// medium is totally internally reflected.
pub fn critical_angle(n_inner: f64, n_outer: f64) -> Result<f64> {
    if !(n_outer >= 1.0) || !n_inner.is_finite() || !n_outer.is_finite() {
        return Err(Error::invalid(format!(
            "refractive indices must be finite and >= 1 (inner {n_inner}, outer {n_outer})"
        )));
    }
    if n_inner < n_outer {
        return Err(Error::NoTotalInternalReflection {
            inner: n_inner,
            outer: n_outer,
        });
    }
    Ok((n_outer / n_inner).asin())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InterfaceOutcome {
    Reflected(Ray),
    Transmitted(Ray),
}

impl InterfaceOutcome {
    pub fn ray(&self) -> &Ray {
        match self {
            InterfaceOutcome::Reflected(r) | InterfaceOutcome::Transmitted(r) => r,
        }
    }

    pub fn is_reflected(&self) -> bool {
        matches!(self, InterfaceOutcome::Reflected(_))
    }
}

/// Unchecked interface law used in the tracer's inner loop.
///
/// `normal` is unit length and points from the inner medium into the outer
/// one; `eta` is `n_inner / n_outer`. Returns the new direction and whether
/// the ray was reflected.
#[inline]
pub(crate) fn scatter_direction(d: Vec3, normal: Vec3, eta: f64) -> (Vec3, bool) {
    let cos_i = d.dot(normal);
    let (n, cos_i) = if cos_i < 0.0 {
        (-normal, -cos_i)
    } else {
        (normal, cos_i)
    };
    let sin2_t = eta * eta * (1.0 - cos_i * cos_i);
    if sin2_t > 1.0 {
        (d - n * (2.0 * cos_i), true)
    } else {
        let cos_t = (1.0 - sin2_t).sqrt();
        (d * eta + n * (cos_t - eta * cos_i), false)
    }
}

/// Applies the critical-angle dichotomy at an interface.
///
/// `ray.origin` is taken to be the point on the interface. `normal` may point
/// either way; it is oriented toward the outer medium internally.
pub fn interact_at_interface(
    ray: &Ray,
    normal: Vec3,
    n_inner: f64,
    n_outer: f64,
) -> Result<InterfaceOutcome> {
    let normal = normal
        .try_normalize()
        .ok_or(Error::Degenerate("zero-length interface normal"))?;
    if !(n_outer > 0.0) || !(n_inner > 0.0) {
        return Err(Error::invalid("refractive indices must be positive"));
    }
    let (dir, reflected) = scatter_direction(ray.direction, normal, n_inner / n_outer);
    let out = Ray::new(ray.origin, dir, ray.power);
    Ok(if reflected {
        InterfaceOutcome::Reflected(out)
    } else {
        InterfaceOutcome::Transmitted(out)
    })
}

/// Distance along `ray` at which it enters the sphere, if it does.
///
/// Rays starting inside (or on) the sphere never "enter" it and yield `None`.
/// `ray.direction` must be unit length.
#[inline]
pub fn intersect_sphere(ray: &Ray, center: Vec3, radius: f64) -> Option<f64> {
    let oc = ray.origin - center;
    let b = oc.dot(ray.direction);
    let c = oc.norm_squared() - radius * radius;
    if c <= 0.0 || b >= 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    // t1 * t2 = c, so the near root avoids cancellation as c / (-b + sqrt(disc)).
    Some(c / (-b + disc.sqrt()))
}
