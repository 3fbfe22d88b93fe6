//! Ambient Riemannian manifolds: flat space and the round sphere.
//!
//! The sphere is handled extrinsically as a submanifold of ℝ³. Curvature
//! follows the convention R(X,Y)Z = K(⟨Y,Z⟩X − ⟨X,Z⟩Y), so that
//! ⟨R(X,Y)Y, X⟩ = K for orthonormal X, Y. Every curvature-bearing formula in
//! the crate consumes this convention.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Tolerance for "on the sphere" and "tangent to the sphere" checks.
pub const SPHERE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Ambient {
    Euclidean { dim: usize },
    Sphere { radius: f64 },
}

impl Ambient {
    pub fn plane() -> Self {
        Ambient::Euclidean { dim: 2 }
    }

    pub fn unit_sphere() -> Self {
        Ambient::Sphere { radius: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Ambient::Euclidean { dim } if dim == 2 || dim == 3 => Ok(()),
            Ambient::Euclidean { dim } => Err(Error::Domain(format!(
                "euclidean ambient dimension must be 2 or 3, got {dim}"
            ))),
            Ambient::Sphere { radius } if radius > 0.0 && radius.is_finite() => Ok(()),
            Ambient::Sphere { radius } => {
                Err(Error::Domain(format!("sphere radius must be positive, got {radius}")))
            }
        }
    }

    /// Dimension of the embedding space used for storage.
    pub fn embedding_dim(&self) -> usize {
        match *self {
            Ambient::Euclidean { dim } => dim,
            Ambient::Sphere { .. } => 3,
        }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self, Ambient::Euclidean { .. })
    }

    /// Sectional curvature K (0 for flat space, 1/R² on the sphere).
    pub fn sectional_curvature(&self) -> f64 {
        match *self {
            Ambient::Euclidean { .. } => 0.0,
            Ambient::Sphere { radius } => 1.0 / (radius * radius),
        }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        match *self {
            Ambient::Euclidean { dim } => dim == 3 || x.z == 0.0,
            Ambient::Sphere { radius } => (x.norm() - radius).abs() <= SPHERE_TOL * radius.max(1.0),
        }
    }

    pub fn is_tangent(&self, x: &Vec3, v: &Vec3) -> bool {
        match *self {
            Ambient::Euclidean { dim } => dim == 3 || v.z == 0.0,
            Ambient::Sphere { radius } => {
                x.dot(v).abs() <= SPHERE_TOL * radius * v.norm().max(1.0)
            }
        }
    }

    /// Orthogonal projection of an ambient vector onto T_xN.
    pub fn project_tangent(&self, x: &Vec3, v: &Vec3) -> Vec3 {
        match *self {
            Ambient::Euclidean { .. } => *v,
            Ambient::Sphere { radius } => v - x * (x.dot(v) / (radius * radius)),
        }
    }

    /// Derivative of the tangent projection at x in direction m, applied to v:
    /// d/dε Π_{x+εm} v.
    pub(crate) fn projection_derivative(&self, x: &Vec3, m: &Vec3, v: &Vec3) -> Vec3 {
        match *self {
            Ambient::Euclidean { .. } => Vec3::zeros(),
            Ambient::Sphere { radius } => -(x * m.dot(v) + m * x.dot(v)) / (radius * radius),
        }
    }

    /// Metric retraction x + v mapped back onto N.
    pub fn retract(&self, x: &Vec3, v: &Vec3) -> Vec3 {
        match *self {
            Ambient::Euclidean { .. } => x + v,
            Ambient::Sphere { radius } => {
                let y = x + v;
                y * (radius / y.norm())
            }
        }
    }

    /// Curvature tensor R(X,Y)Z at x.
    pub fn curvature_apply(&self, x: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Result<Vec3> {
        match *self {
            Ambient::Euclidean { .. } => Ok(Vec3::zeros()),
            Ambient::Sphere { .. } => {
                for v in [a, b, c] {
                    if !self.is_tangent(x, v) {
                        return Err(Error::Domain(format!(
                            "curvature argument {v:?} is not tangent at {x:?}"
                        )));
                    }
                }
                Ok(self.curvature_unchecked(a, b, c))
            }
        }
    }

    #[inline]
    pub(crate) fn curvature_unchecked(&self, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
        let k = self.sectional_curvature();
        if k == 0.0 {
            return Vec3::zeros();
        }
        (a * b.dot(c) - b * a.dot(c)) * k
    }

    /// Discrete ∇_{∂t} of a field h(t) along a path x(t) sampled at spacing dt.
    ///
    /// Interior samples use the centered difference, the two end samples the
    /// second-order one-sided stencils; on the sphere the result is projected
    /// to the tangent space at the foot point.
    pub fn covariant_time_derivative(
        &self,
        path: &[Vec3],
        field: &[Vec3],
        dt: f64,
    ) -> Result<Vec<Vec3>> {
        if path.len() != field.len() {
            return Err(Error::Shape {
                expected: path.len(),
                got: field.len(),
            });
        }
        let n = path.len();
        if n < 3 {
            return Err(Error::Domain(format!(
                "covariant time derivative needs at least 3 samples, got {n}"
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        let out = (0..n)
            .map(|i| {
                let raw = if i == 0 {
                    (field[0] * -3.0 + field[1] * 4.0 - field[2]) / (2.0 * dt)
                } else if i == n - 1 {
                    (field[n - 1] * 3.0 - field[n - 2] * 4.0 + field[n - 3]) / (2.0 * dt)
                } else {
                    (field[i + 1] - field[i - 1]) / (2.0 * dt)
                };
                self.project_tangent(&path[i], &raw)
            })
            .collect();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn flat_curvature_vanishes() {
        let amb = Ambient::Euclidean { dim: 3 };
        let r = amb
            .curvature_apply(&v(1.0, 2.0, 3.0), &v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0), &v(0.3, 0.2, 0.1))
            .unwrap();
        assert_eq!(r, Vec3::zeros());
    }

    #[test]
    fn sphere_curvature_examples() {
        let x = v(0.0, 0.0, 1.0);
        let (e1, e2) = (v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        let unit = Ambient::unit_sphere();
        assert_abs_diff_eq!(unit.curvature_apply(&x, &e1, &e2, &e2).unwrap(), e1, epsilon = 1e-15);
        let big = Ambient::Sphere { radius: 2.0 };
        let r = big.curvature_apply(&(x * 2.0), &e1, &e2, &e2).unwrap();
        assert_abs_diff_eq!(r, e1 / 4.0, epsilon = 1e-15);
        // positive sectional curvature
        assert!(r.dot(&e1) > 0.0);
    }

    #[test]
    fn sphere_curvature_rejects_normal_input() {
        let amb = Ambient::unit_sphere();
        let x = v(0.0, 0.0, 1.0);
        assert!(amb.curvature_apply(&x, &x, &v(1.0, 0.0, 0.0), &v(0.0, 1.0, 0.0)).is_err());
    }

    #[test]
    fn projection_examples() {
        let plane = Ambient::plane();
        assert_eq!(plane.project_tangent(&v(1.0, 1.0, 0.0), &v(1.0, 2.0, 0.0)), v(1.0, 2.0, 0.0));
        let s = Ambient::unit_sphere();
        let x = v(0.0, 0.0, 1.0);
        assert_eq!(s.project_tangent(&x, &v(1.0, 2.0, 3.0)), v(1.0, 2.0, 0.0));
        assert_eq!(s.project_tangent(&x, &v(1.0, 2.0, 0.0)), v(1.0, 2.0, 0.0));
    }

    #[test]
    fn covariant_time_derivative_examples() {
        let flat = Ambient::Euclidean { dim: 3 };
        let dt = 0.01;
        let pts = vec![Vec3::zeros(); 5];
        let constant = vec![v(1.0, 2.0, 3.0); 5];
        for d in flat.covariant_time_derivative(&pts, &constant, dt).unwrap() {
            assert_eq!(d, Vec3::zeros());
        }
        let linear: Vec<Vec3> = (0..5).map(|i| v(i as f64 * dt, 0.0, 0.0)).collect();
        for d in flat.covariant_time_derivative(&pts, &linear, dt).unwrap() {
            assert_abs_diff_eq!(d, v(1.0, 0.0, 0.0), epsilon = 1e-12);
        }
        // great circle: the velocity field is parallel
        let s = Ambient::unit_sphere();
        let ts: Vec<f64> = (0..7).map(|i| i as f64 * dt).collect();
        let path: Vec<Vec3> = ts.iter().map(|t| v(t.cos(), t.sin(), 0.0)).collect();
        let vel: Vec<Vec3> = ts.iter().map(|t| v(-t.sin(), t.cos(), 0.0)).collect();
        for d in s.covariant_time_derivative(&path, &vel, dt).unwrap() {
            assert!(d.norm() < 1e-4);
        }
        assert!(s.covariant_time_derivative(&path[..2], &vel[..2], dt).is_err());
    }

    proptest! {
        #[test]
        fn curvature_symmetries(a in prop::array::uniform3(-1.0f64..1.0),
                                b in prop::array::uniform3(-1.0f64..1.0),
                                c in prop::array::uniform3(-1.0f64..1.0),
                                w in prop::array::uniform3(-1.0f64..1.0),
                                p in prop::array::uniform3(-1.0f64..1.0)) {
            let amb = Ambient::Sphere { radius: 1.5 };
            let x = Vec3::from(p);
            prop_assume!(x.norm() > 0.1);
            let x = x * (1.5 / x.norm());
            let t = |q: [f64; 3]| amb.project_tangent(&x, &Vec3::from(q));
            let (a, b, c, w) = (t(a), t(b), t(c), t(w));
            let r_abc = amb.curvature_apply(&x, &a, &b, &c).unwrap();
            let r_bac = amb.curvature_apply(&x, &b, &a, &c).unwrap();
            prop_assert!((r_abc + r_bac).norm() < 1e-12);
            let r_abw = amb.curvature_apply(&x, &a, &b, &w).unwrap();
            prop_assert!((r_abc.dot(&w) + r_abw.dot(&c)).abs() < 1e-12);
            // projection is idempotent and self-adjoint
            let pa = amb.project_tangent(&x, &a);
            prop_assert!((pa - a).norm() < 1e-12);
            let raw_b = Vec3::from(p) + b;
            let lhs = amb.project_tangent(&x, &raw_b).dot(&c);
            let rhs = raw_b.dot(&amb.project_tangent(&x, &c));
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
