//! Induced geometry of a discrete immersed curve.
//!
//! All quantities are built from the centered difference (for f_θ) and the
//! three-point second difference (for ∇_θ f_θ). On the sphere both are
//! projected to the tangent space of the sphere at the node.

use crate::ambient::Ambient;
use crate::calculus::{centered, second_difference, Grid};
use crate::error::{check_len, Error, Result};
use crate::Vec3;

/// Immersion condition threshold on |f_θ| (ambient length units).
pub const EPS_IMM: f64 = 1e-8;

/// A closed curve sampled at the nodes of a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Immersion {
    ambient: Ambient,
    grid: Grid,
    nodes: Vec<Vec3>,
}

impl Immersion {
    /// Validates ambient membership; the immersion condition is checked when
    /// the geometry is computed.
    pub fn new(ambient: Ambient, nodes: Vec<Vec3>) -> Result<Self> {
        ambient.validate()?;
        let grid = Grid::new(nodes.len())?;
        for (j, x) in nodes.iter().enumerate() {
            if !x.iter().all(|c| c.is_finite()) {
                return Err(Error::Domain(format!("node {j} is not finite")));
            }
            if !ambient.contains(x) {
                return Err(Error::Domain(format!("node {j} = {x:?} does not lie in {ambient:?}")));
            }
        }
        Ok(Self {
            ambient,
            grid,
            nodes,
        })
    }

    pub(crate) fn new_unchecked(ambient: Ambient, grid: Grid, nodes: Vec<Vec3>) -> Self {
        Self {
            ambient,
            grid,
            nodes,
        }
    }

    /// Planar circle of the given radius centered at the origin.
    pub fn circle(n: usize, radius: f64) -> Result<Self> {
        let grid = Grid::new(n)?;
        let nodes = grid.sample(|t| Vec3::new(radius * t.cos(), radius * t.sin(), 0.0));
        Self::new(Ambient::plane(), nodes)
    }

    /// Planar curve θ ↦ curve(θ).
    pub fn from_fn(ambient: Ambient, n: usize, curve: impl Fn(f64) -> Vec3) -> Result<Self> {
        let grid = Grid::new(n)?;
        Self::new(ambient, grid.sample(curve))
    }

    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn nodes(&self) -> &[Vec3] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Displace every node by ε·m and retract onto the ambient manifold.
    pub fn perturbed(&self, m: &[Vec3], eps: f64) -> Result<Self> {
        check_len(self.len(), m.len())?;
        let nodes = self
            .nodes
            .iter()
            .zip(m)
            .map(|(x, v)| self.ambient.retract(x, &(v * eps)))
            .collect();
        Ok(Self::new_unchecked(self.ambient, self.grid, nodes))
    }

    /// Grid rotation f ∘ ρ_k: node j of the result is node j + k of self.
    pub fn rotated(&self, k: usize) -> Self {
        Self::new_unchecked(self.ambient, self.grid, rotate(&self.nodes, k))
    }

    /// Scaling about the origin (flat ambient only).
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        if !self.ambient.is_flat() {
            return Err(Error::Unsupported("scaling requires a flat ambient".into()));
        }
        Ok(Self::new_unchecked(
            self.ambient,
            self.grid,
            self.nodes.iter().map(|x| x * lambda).collect(),
        ))
    }

    pub fn translated(&self, c: &Vec3) -> Result<Self> {
        if !self.ambient.is_flat() {
            return Err(Error::Unsupported("translation requires a flat ambient".into()));
        }
        Ok(Self::new_unchecked(
            self.ambient,
            self.grid,
            self.nodes.iter().map(|x| x + c).collect(),
        ))
    }

    /// Checks that h is a field along this curve (right length, tangent to N).
    pub fn check_field(&self, h: &[Vec3]) -> Result<()> {
        check_len(self.len(), h.len())?;
        for (j, (x, v)) in self.nodes.iter().zip(h).enumerate() {
            if !self.ambient.is_tangent(x, v) {
                return Err(Error::Domain(format!("field value at node {j} is not tangent to N")));
            }
        }
        Ok(())
    }

    /// Tangent projection applied nodewise.
    pub fn project_field(&self, h: &[Vec3]) -> Vec<Vec3> {
        self.nodes
            .iter()
            .zip(h)
            .map(|(x, v)| self.ambient.project_tangent(x, v))
            .collect()
    }
}

pub(crate) fn rotate<T: Clone>(v: &[T], k: usize) -> Vec<T> {
    let n = v.len();
    (0..n).map(|j| v[(j + k) % n].clone()).collect()
}

/// Induced metric, volume, and curvature data of an immersion.
#[derive(Debug, Clone)]
pub struct Geometry {
    /// f_θ (tangent to N).
    pub tangent: Vec<Vec3>,
    /// g = |f_θ|².
    pub g: Vec<f64>,
    /// √g, the density of vol(g) against dθ.
    pub sqrt_g: Vec<f64>,
    /// Quadrature weights √g_j · 2π/N.
    pub weights: Vec<f64>,
    /// Total length.
    pub vol: f64,
    pub unit_tangent: Vec<Vec3>,
    /// ∇_θ f_θ before removing its tangential part.
    pub(crate) accel: Vec<Vec3>,
    /// S(∂_θ, ∂_θ), normal.
    pub s: Vec<Vec3>,
    /// Mean curvature vector Tr^g S = S / g.
    pub trace_s: Vec<Vec3>,
}

impl Geometry {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    /// ‖Tr^g S‖² nodewise.
    pub fn curvature_sq(&self) -> Vec<f64> {
        self.trace_s.iter().map(|k| k.norm_squared()).collect()
    }

    /// Discrete H⁰ inner product Σ ḡ(h_j,k_j) w_j.
    pub fn h0(&self, h: &[Vec3], k: &[Vec3]) -> f64 {
        h.iter()
            .zip(k)
            .zip(&self.weights)
            .map(|((a, b), w)| a.dot(b) * w)
            .sum()
    }
}

pub fn induced_geometry(f: &Immersion) -> Result<Geometry> {
    let grid = f.grid();
    let amb = f.ambient();
    let raw = centered(grid, f.nodes());
    let tangent: Vec<Vec3> = f
        .nodes()
        .iter()
        .zip(&raw)
        .map(|(x, d)| amb.project_tangent(x, d))
        .collect();
    let mut g = Vec::with_capacity(f.len());
    for (j, t) in tangent.iter().enumerate() {
        let speed = t.norm();
        if !(speed > EPS_IMM) {
            return Err(Error::Degenerate { node: j, speed });
        }
        g.push(t.norm_squared());
    }
    let sqrt_g: Vec<f64> = g.iter().map(|v| v.sqrt()).collect();
    let h = grid.spacing();
    let weights: Vec<f64> = sqrt_g.iter().map(|s| s * h).collect();
    let vol = weights.iter().sum();
    let unit_tangent = tangent.iter().zip(&sqrt_g).map(|(t, s)| t / *s).collect();
    let accel: Vec<Vec3> = second_difference(grid, f.nodes())
        .iter()
        .zip(f.nodes())
        .map(|(q, x)| amb.project_tangent(x, q))
        .collect();
    let s: Vec<Vec3> = accel
        .iter()
        .zip(&tangent)
        .zip(&g)
        .map(|((a, t), gj)| a - t * (a.dot(t) / gj))
        .collect();
    let trace_s = s.iter().zip(&g).map(|(sj, gj)| sj / *gj).collect();
    Ok(Geometry {
        tangent,
        g,
        sqrt_g,
        weights,
        vol,
        unit_tangent,
        accel,
        s,
        trace_s,
    })
}

/// Directional derivative of the geometry in the direction m (exact
/// linearization of the discrete formulas).
#[derive(Debug, Clone)]
pub struct GeometryJvp {
    pub tangent: Vec<Vec3>,
    pub g: Vec<f64>,
    pub sqrt_g: Vec<f64>,
    pub weights: Vec<f64>,
    pub vol: f64,
    pub s: Vec<Vec3>,
    /// Raw (unprojected) derivative of the ambient vector Tr^g S.
    pub trace_s: Vec<Vec3>,
}

pub fn geometry_jvp(f: &Immersion, geo: &Geometry, m: &[Vec3]) -> GeometryJvp {
    let grid = f.grid();
    let amb = f.ambient();
    let raw = centered(grid, f.nodes());
    let draw = centered(grid, m);
    let q = second_difference(grid, f.nodes());
    let dq = second_difference(grid, m);
    let n = f.len();
    let h = grid.spacing();
    let mut out = GeometryJvp {
        tangent: Vec::with_capacity(n),
        g: Vec::with_capacity(n),
        sqrt_g: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        vol: 0.0,
        s: Vec::with_capacity(n),
        trace_s: Vec::with_capacity(n),
    };
    for j in 0..n {
        let x = &f.nodes()[j];
        let t = &geo.tangent[j];
        let a = &geo.accel[j];
        let gj = geo.g[j];
        let dt = amb.projection_derivative(x, &m[j], &raw[j]) + amb.project_tangent(x, &draw[j]);
        let dg = 2.0 * t.dot(&dt);
        let dsg = dg / (2.0 * geo.sqrt_g[j]);
        let da = amb.projection_derivative(x, &m[j], &q[j]) + amb.project_tangent(x, &dq[j]);
        let at = a.dot(t);
        let dat = da.dot(t) + a.dot(&dt);
        let ds = da - t * (dat / gj - at * dg / (gj * gj)) - dt * (at / gj);
        let dk = ds / gj - geo.s[j] * (dg / (gj * gj));
        out.tangent.push(dt);
        out.g.push(dg);
        out.sqrt_g.push(dsg);
        out.weights.push(dsg * h);
        out.s.push(ds);
        out.trace_s.push(dk);
    }
    out.vol = out.weights.iter().sum();
    out
}

/// Tangential/normal split h = a·f_θ + h^⊥.
pub fn split(geo: &Geometry, h: &[Vec3]) -> Result<(Vec<f64>, Vec<Vec3>)> {
    check_len(geo.len(), h.len())?;
    let a: Vec<f64> = h
        .iter()
        .zip(&geo.tangent)
        .zip(&geo.g)
        .map(|((v, t), g)| v.dot(t) / g)
        .collect();
    let perp = h
        .iter()
        .zip(&geo.tangent)
        .zip(&a)
        .map(|((v, t), aj)| v - t * *aj)
        .collect();
    Ok((a, perp))
}

/// Coefficient of grad^g u against ∂_θ.
pub fn grad_scalar(f: &Immersion, geo: &Geometry, u: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len(), u.len())?;
    Ok(centered(f.grid(), u)
        .into_iter()
        .zip(&geo.g)
        .map(|(d, g)| d / g)
        .collect())
}
