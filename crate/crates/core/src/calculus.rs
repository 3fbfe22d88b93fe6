//! Discrete calculus on the uniform periodic grid over the parameter circle.
//!
//! Every operator here is a sparse circulant stencil. The centered difference
//! is skew-symmetric, so summation by parts holds exactly and the weak-form
//! operators built on top of it are symmetric to rounding.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use crate::error::{check_len, Error, Result};
use crate::Vec3;

/// Values that can live at grid nodes: reals and ambient vectors.
pub trait Nodal: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<f64, Output = Self> {
    fn zero() -> Self;
}

impl Nodal for f64 {
    fn zero() -> Self {
        0.0
    }
}

impl Nodal for Vec3 {
    fn zero() -> Self {
        Vec3::zeros()
    }
}

/// Uniform grid θ_j = 2πj/N on the circle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    n: usize,
}

impl Grid {
    pub const MIN_NODES: usize = 8;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_NODES {
            return Err(Error::InvalidGrid(format!(
                "need at least {} nodes, got {n}",
                Self::MIN_NODES
            )));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("node count must be even, got {n}")));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Parameter spacing 2π/N.
    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    #[inline]
    pub fn theta(&self, j: usize) -> f64 {
        self.spacing() * j as f64
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.theta(j)).collect()
    }

    #[inline]
    pub fn next(&self, j: usize) -> usize {
        if j + 1 == self.n {
            0
        } else {
            j + 1
        }
    }

    #[inline]
    pub fn prev(&self, j: usize) -> usize {
        if j == 0 {
            self.n - 1
        } else {
            j - 1
        }
    }

    /// Sample a function of θ at the nodes.
    pub fn sample<T>(&self, f: impl Fn(f64) -> T) -> Vec<T> {
        (0..self.n).map(|j| f(self.theta(j))).collect()
    }
}

/// Centered difference (u_{j+1} - u_{j-1}) / (2h).
pub fn d_theta<T: Nodal>(grid: &Grid, u: &[T]) -> Result<Vec<T>> {
    check_len(grid.len(), u.len())?;
    Ok(centered(grid, u))
}

pub(crate) fn centered<T: Nodal>(grid: &Grid, u: &[T]) -> Vec<T> {
    let scale = 0.5 / grid.spacing();
    (0..grid.len())
        .map(|j| (u[grid.next(j)] - u[grid.prev(j)]) * scale)
        .collect()
}

/// Three-point second difference (u_{j+1} - 2u_j + u_{j-1}) / h².
pub(crate) fn second_difference<T: Nodal>(grid: &Grid, u: &[T]) -> Vec<T> {
    let h = grid.spacing();
    let scale = 1.0 / (h * h);
    (0..grid.len())
        .map(|j| (u[grid.next(j)] - u[j] * 2.0 + u[grid.prev(j)]) * scale)
        .collect()
}

/// Forward edge difference (u_{j+1} - u_j) / h, indexed by the edge j + 1/2.
pub(crate) fn forward<T: Nodal>(grid: &Grid, u: &[T]) -> Vec<T> {
    let inv_h = 1.0 / grid.spacing();
    (0..grid.len())
        .map(|j| (u[grid.next(j)] - u[j]) * inv_h)
        .collect()
}

/// Periodic rectangle rule (2π/N) Σ ρ_j.
pub fn integrate(grid: &Grid, rho: &[f64]) -> Result<f64> {
    check_len(grid.len(), rho.len())?;
    Ok(grid.spacing() * rho.iter().sum::<f64>())
}

/// Periodic cubic spline through nodal values (C² across nodes).
#[derive(Debug, Clone)]
pub struct PeriodicSpline<T> {
    grid: Grid,
    values: Vec<T>,
    /// Second derivatives at the nodes.
    curvature: Vec<T>,
}

impl<T: Nodal> PeriodicSpline<T> {
    pub fn new(grid: &Grid, values: &[T]) -> Result<Self> {
        check_len(grid.len(), values.len())?;
        let h = grid.spacing();
        let rhs: Vec<T> = second_difference(grid, values)
            .into_iter()
            .map(|v| v * 6.0)
            .collect();
        // M_{j-1} + 4 M_j + M_{j+1} = 6 δ²u_j
        let curvature = solve_cyclic_141(&rhs);
        debug_assert!(h > 0.0);
        Ok(Self {
            grid: *grid,
            values: values.to_vec(),
            curvature,
        })
    }

    fn locate(&self, theta: f64) -> (usize, f64) {
        let two_pi = 2.0 * PI;
        let t = theta.rem_euclid(two_pi);
        let s = t / self.grid.spacing();
        let mut j = s.floor() as usize;
        let mut frac = s - j as f64;
        if j >= self.grid.len() {
            j = 0;
            frac = 0.0;
        }
        (j, frac)
    }

    /// Value at an arbitrary angle (wrapped mod 2π).
    pub fn eval(&self, theta: f64) -> T {
        let (j, a) = self.locate(theta);
        if a == 0.0 {
            return self.values[j];
        }
        let k = self.grid.next(j);
        let h = self.grid.spacing();
        let b = 1.0 - a;
        let (u0, u1) = (self.values[j], self.values[k]);
        let (m0, m1) = (self.curvature[j], self.curvature[k]);
        u0 * b + u1 * a + (m0 * (b * b * b - b) + m1 * (a * a * a - a)) * (h * h / 6.0)
    }

    /// θ-derivative at an arbitrary angle.
    pub fn derivative(&self, theta: f64) -> T {
        let (j, a) = self.locate(theta);
        let k = self.grid.next(j);
        let h = self.grid.spacing();
        let b = 1.0 - a;
        let (u0, u1) = (self.values[j], self.values[k]);
        let (m0, m1) = (self.curvature[j], self.curvature[k]);
        (u1 - u0) * (1.0 / h) + (m1 * (3.0 * a * a - 1.0) - m0 * (3.0 * b * b - 1.0)) * (h / 6.0)
    }
}

/// Solves the circulant system x_{j-1} + 4 x_j + x_{j+1} = r_j.
///
/// The matrix is strictly diagonally dominant; the Sherman-Morrison split
/// reduces it to two tridiagonal sweeps.
fn solve_cyclic_141<T: Nodal>(rhs: &[T]) -> Vec<T> {
    let n = rhs.len();
    // Cyclic Thomas: A = T + u vᵀ with corner entries folded into u, v.
    let gamma = -4.0;
    let mut diag = vec![4.0; n];
    diag[0] -= gamma;
    diag[n - 1] -= 1.0 / gamma;
    let x = thomas(&diag, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = 1.0;
    let z = thomas(&diag, &u);
    let vx = x[0] + x[n - 1] * (1.0 / gamma);
    let vz = z[0] + z[n - 1] / gamma;
    let factor = 1.0 / (1.0 + vz);
    (0..n).map(|i| x[i] - vx * (z[i] * factor)).collect()
}

/// Tridiagonal solve with unit off-diagonals.
fn thomas<T: Nodal>(diag: &[f64], rhs: &[T]) -> Vec<T> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![T::zero(); n];
    c[0] = 1.0 / diag[0];
    d[0] = rhs[0] * (1.0 / diag[0]);
    for i in 1..n {
        let denom = diag[i] - c[i - 1];
        c[i] = 1.0 / denom;
        d[i] = (rhs[i] - d[i - 1]) * (1.0 / denom);
    }
    let mut x = vec![T::zero(); n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - x[i + 1] * c[i];
    }
    x
}

/// Periodic cubic interpolation of nodal data at θ.
pub fn interp_periodic(grid: &Grid, u: &[f64], theta: f64) -> Result<f64> {
    Ok(PeriodicSpline::new(grid, u)?.eval(theta))
}
