//! Bochner Laplacian along a discrete curve, its powers, and the assembled
//! metric operator P with its inverse.
//!
//! The Laplacian is built in weak form. With c_e = f_{j+1} − f_j the edge
//! chord, σ_e = |c_e|/h the edge speed and P_e the tangent projection at the
//! edge midpoint (identity in flat space), the stiffness form is
//!
//!   uᵀ K v = Σ_e (h/σ_e) ⟨P_e D_e u, P_e D_e v⟩,   D_e u = (u_{j+1} − u_j)/h,
//!
//! and L = Π K Π, M = diag(w), Δ = M⁻¹ L. Hence M Δ is symmetric exactly.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::ambient::Ambient;
use crate::calculus::{forward, Grid};
use crate::error::{check_len, Error, Result};
use crate::geometry::{geometry_jvp, induced_geometry, Geometry, Immersion, EPS_IMM};
use crate::linalg::{assemble, conjugate_gradient, flatten, unflatten, DenseSpd, SolverOptions};
use crate::metrics::MetricSpec;
use crate::Vec3;

/// Weak-form Laplacian at a fixed immersion.
#[derive(Debug, Clone)]
pub struct Laplacian {
    ambient: Ambient,
    grid: Grid,
    nodes: Vec<Vec3>,
    /// σ_e for the edge (j, j+1), stored at index j.
    speed: Vec<f64>,
    /// Unit midpoint direction and |f_j + f_{j+1}| (sphere only).
    mid: Vec<Vec3>,
    mid_norm: Vec<f64>,
    weights: Vec<f64>,
}

impl Laplacian {
    pub fn new(f: &Immersion, geo: &Geometry) -> Result<Self> {
        let n = f.len();
        let h = f.grid().spacing();
        let nodes = f.nodes().to_vec();
        let mut speed = Vec::with_capacity(n);
        for j in 0..n {
            let s = (nodes[(j + 1) % n] - nodes[j]).norm() / h;
            if !(s > EPS_IMM) {
                return Err(Error::Degenerate { node: j, speed: s });
            }
            speed.push(s);
        }
        let (mut mid, mut mid_norm) = (Vec::new(), Vec::new());
        if !f.ambient().is_flat() {
            for j in 0..n {
                let s = nodes[j] + nodes[(j + 1) % n];
                let r = s.norm();
                if !(r > EPS_IMM) {
                    return Err(Error::Degenerate { node: j, speed: r });
                }
                mid.push(s / r);
                mid_norm.push(r);
            }
        }
        Ok(Self {
            ambient: *f.ambient(),
            grid: *f.grid(),
            nodes,
            speed,
            mid,
            mid_norm,
            weights: geo.weights.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn ambient(&self) -> &Ambient {
        &self.ambient
    }

    pub(crate) fn project(&self, u: &[Vec3]) -> Vec<Vec3> {
        if self.ambient.is_flat() {
            return u.to_vec();
        }
        self.nodes
            .iter()
            .zip(u)
            .map(|(x, v)| self.ambient.project_tangent(x, v))
            .collect()
    }

    #[inline]
    fn edge_project(&self, e: usize, v: &Vec3) -> Vec3 {
        if self.mid.is_empty() {
            *v
        } else {
            let x = &self.mid[e];
            v - x * x.dot(v)
        }
    }

    /// d/dε of P_e v when the endpoints move by m_j, m_{j+1}.
    #[inline]
    fn edge_project_jvp(&self, e: usize, ds: &Vec3, v: &Vec3) -> Vec3 {
        if self.mid.is_empty() {
            return Vec3::zeros();
        }
        let x = &self.mid[e];
        let dx = (ds - x * x.dot(ds)) / self.mid_norm[e];
        -(dx * x.dot(v) + x * dx.dot(v))
    }

    fn edge_fluxes(&self, v: &[Vec3]) -> Vec<Vec3> {
        forward(&self.grid, v)
            .iter()
            .enumerate()
            .map(|(e, d)| self.edge_project(e, d) / self.speed[e])
            .collect()
    }

    /// L u = Π K Π u.
    pub fn stiffness(&self, u: &[Vec3]) -> Vec<Vec3> {
        let n = self.len();
        let v = self.project(u);
        let a = self.edge_fluxes(&v);
        let raw: Vec<Vec3> = (0..n).map(|j| a[(j + n - 1) % n] - a[j]).collect();
        self.project(&raw)
    }

    /// Δu = M⁻¹ L u.
    pub fn apply(&self, u: &[Vec3]) -> Vec<Vec3> {
        self.stiffness(u)
            .into_iter()
            .zip(&self.weights)
            .map(|(v, w)| v / *w)
            .collect()
    }

    pub fn power(&self, u: &[Vec3], i: usize) -> Vec<Vec3> {
        let mut y = u.to_vec();
        for _ in 0..i {
            y = self.apply(&y);
        }
        y
    }

    /// Derivative of L u in the immersion direction m, holding the ambient
    /// vectors u fixed.
    pub fn stiffness_jvp(&self, m: &[Vec3], u: &[Vec3]) -> Vec<Vec3> {
        let n = self.len();
        let h = self.grid.spacing();
        let amb = &self.ambient;
        let v = self.project(u);
        let dv: Vec<Vec3> = (0..n)
            .map(|j| amb.projection_derivative(&self.nodes[j], &m[j], &u[j]))
            .collect();
        let mut a = Vec::with_capacity(n);
        let mut da = Vec::with_capacity(n);
        for e in 0..n {
            let k = (e + 1) % n;
            let c = self.nodes[k] - self.nodes[e];
            let dc = m[k] - m[e];
            let sigma = self.speed[e];
            let dsigma = c.dot(&dc) / (h * h * sigma);
            let alpha = (v[k] - v[e]) / h;
            let dalpha = (dv[k] - dv[e]) / h;
            let pa = self.edge_project(e, &alpha);
            let dpa = self.edge_project_jvp(e, &(m[e] + m[k]), &alpha) + self.edge_project(e, &dalpha);
            a.push(pa / sigma);
            da.push(dpa / sigma - pa * (dsigma / (sigma * sigma)));
        }
        (0..n)
            .map(|j| {
                let p = (j + n - 1) % n;
                let kv = a[p] - a[j];
                let dkv = da[p] - da[j];
                amb.projection_derivative(&self.nodes[j], &m[j], &kv)
                    + amb.project_tangent(&self.nodes[j], &dkv)
            })
            .collect()
    }
}

/// Δh along f.
pub fn laplacian(f: &Immersion, h: &[Vec3]) -> Result<Vec<Vec3>> {
    laplacian_power(f, h, 1)
}

/// Δⁱh along f; i = 0 returns h.
pub fn laplacian_power(f: &Immersion, h: &[Vec3], i: usize) -> Result<Vec<Vec3>> {
    f.check_field(h)?;
    if i == 0 {
        return Ok(h.to_vec());
    }
    let geo = induced_geometry(f)?;
    Ok(Laplacian::new(f, &geo)?.power(h, i))
}

/// Structure of P at a fixed immersion: P = ψ·Id + Σ c_i Δⁱ with ψ a nodal
/// multiplier and c_i scalars (powers i ≥ 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Composition {
    pub multiplier: Vec<f64>,
    pub powers: Vec<(usize, f64)>,
}

impl Composition {
    pub fn order(&self) -> usize {
        self.powers.iter().map(|(i, _)| *i).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
enum Solver {
    Diagonal,
    Dense(DenseSpd),
    Iterative,
}

/// Assembled P at a fixed immersion, with apply and inverse application.
#[derive(Debug, Clone)]
pub struct OperatorHandle {
    lap: Laplacian,
    comp: Composition,
    dims: usize,
    options: SolverOptions,
    solver: Solver,
}

/// Assemble P for a metric spec at f.
pub fn assemble_p(spec: &MetricSpec, f: &Immersion) -> Result<OperatorHandle> {
    let geo = induced_geometry(f)?;
    OperatorHandle::from_spec(spec, f, &geo, SolverOptions::default())
}

impl OperatorHandle {
    pub fn from_spec(
        spec: &MetricSpec,
        f: &Immersion,
        geo: &Geometry,
        options: SolverOptions,
    ) -> Result<Self> {
        let comp = spec.composition(geo)?;
        Self::new(f, geo, comp, options)
    }

    pub fn new(f: &Immersion, geo: &Geometry, comp: Composition, options: SolverOptions) -> Result<Self> {
        check_len(f.len(), comp.multiplier.len())?;
        if let Some(j) = comp.multiplier.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::Spec(format!(
                "order-zero weight is not positive at node {j}: {}",
                comp.multiplier[j]
            )));
        }
        if let Some((i, c)) = comp.powers.iter().find(|(_, c)| !(*c >= 0.0)) {
            return Err(Error::Spec(format!("weight of Δ^{i} is not nonnegative: {c}")));
        }
        let lap = Laplacian::new(f, geo)?;
        let dims = f.ambient().embedding_dim();
        let mut handle = Self {
            lap,
            comp,
            dims,
            options,
            solver: Solver::Iterative,
        };
        handle.solver = if handle.comp.order() == 0 {
            Solver::Diagonal
        } else if handle.system_size() <= options.dense_limit {
            Solver::Dense(DenseSpd::new(handle.system_matrix())?)
        } else {
            Solver::Iterative
        };
        Ok(handle)
    }

    pub fn laplacian(&self) -> &Laplacian {
        &self.lap
    }

    pub fn composition(&self) -> &Composition {
        &self.comp
    }

    pub fn weights(&self) -> &[f64] {
        &self.lap.weights
    }

    fn flat(&self) -> bool {
        self.lap.ambient.is_flat()
    }

    /// Unknowns in one linear solve: N per component when flat, 3N on the sphere.
    fn system_size(&self) -> usize {
        if self.flat() {
            self.lap.len()
        } else {
            3 * self.lap.len()
        }
    }

    /// M P h.
    pub fn apply_weighted(&self, h: &[Vec3]) -> Vec<Vec3> {
        let w = &self.lap.weights;
        let v = self.lap.project(h);
        let mut out: Vec<Vec3> = v
            .iter()
            .zip(w)
            .zip(&self.comp.multiplier)
            .map(|((x, wj), p)| x * (wj * p))
            .collect();
        let order = self.comp.order();
        let mut y = v;
        for r in 1..=order {
            let ly = self.lap.stiffness(&y);
            let c: f64 = self.comp.powers.iter().filter(|(i, _)| *i == r).map(|(_, c)| c).sum();
            if c != 0.0 {
                for (o, l) in out.iter_mut().zip(&ly) {
                    *o += l * c;
                }
            }
            if r < order {
                y = ly.into_iter().zip(w).map(|(l, wj)| l / *wj).collect();
            }
        }
        out
    }

    /// P h.
    pub fn apply(&self, h: &[Vec3]) -> Vec<Vec3> {
        self.apply_weighted(h)
            .into_iter()
            .zip(&self.lap.weights)
            .map(|(v, w)| v / *w)
            .collect()
    }

    /// The solver matrix: M P with the normal directions of the sphere filled
    /// by the mass matrix so that the system is definite.
    fn system_apply(&self, x: &[Vec3]) -> Vec<Vec3> {
        let mut out = self.apply_weighted(x);
        if !self.flat() {
            let r2 = match self.lap.ambient {
                Ambient::Sphere { radius } => radius * radius,
                _ => unreachable!(),
            };
            for j in 0..out.len() {
                let p = &self.lap.nodes[j];
                out[j] += p * (p.dot(&x[j]) / r2 * self.lap.weights[j]);
            }
        }
        out
    }

    fn system_matrix(&self) -> DMatrix<f64> {
        let n = self.lap.len();
        if self.flat() {
            assemble(n, |col| {
                let field: Vec<Vec3> = col.iter().map(|c| Vec3::new(*c, 0.0, 0.0)).collect();
                self.system_apply(&field).iter().map(|v| v.x).collect()
            })
        } else {
            assemble(3 * n, |col| flatten(&self.system_apply(&unflatten(col, 3)), 3))
        }
    }

    /// Assembled M P (N × N per component in flat space, 3N × 3N on the sphere).
    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.lap.len();
        if self.flat() {
            assemble(n, |col| {
                let field: Vec<Vec3> = col.iter().map(|c| Vec3::new(*c, 0.0, 0.0)).collect();
                self.apply_weighted(&field).iter().map(|v| v.x).collect()
            })
        } else {
            assemble(3 * n, |col| flatten(&self.apply_weighted(&unflatten(col, 3)), 3))
        }
    }

    /// Relative asymmetry ‖A − Aᵀ‖_max / ‖A‖_max of the assembled matrix.
    pub fn asymmetry(&self) -> f64 {
        let a = self.matrix();
        let scale = a.amax();
        (&a - a.transpose()).amax() / scale
    }

    /// (M P)⁻¹ p for a covector p (momentum density with weights folded in).
    pub fn solve_weighted(&self, p: &[Vec3]) -> Result<Vec<Vec3>> {
        check_len(self.lap.len(), p.len())?;
        let rhs = self.lap.project(p);
        match &self.solver {
            Solver::Diagonal => Ok(rhs
                .iter()
                .zip(&self.lap.weights)
                .zip(&self.comp.multiplier)
                .map(|((v, w), psi)| v / (w * psi))
                .collect()),
            Solver::Dense(chol) => {
                if self.flat() {
                    let mut out = vec![Vec3::zeros(); rhs.len()];
                    for d in 0..self.dims {
                        let b: Vec<f64> = rhs.iter().map(|v| v[d]).collect();
                        for (o, x) in out.iter_mut().zip(chol.solve(&b)) {
                            o[d] = x;
                        }
                    }
                    Ok(out)
                } else {
                    Ok(self.lap.project(&unflatten(&chol.solve(&flatten(&rhs, 3)), 3)))
                }
            }
            Solver::Iterative => self.solve_iterative(&rhs),
        }
    }

    fn jacobi_diagonal(&self) -> Vec<f64> {
        let n = self.lap.len();
        let h = self.lap.grid.spacing();
        (0..n)
            .map(|j| {
                let w = self.lap.weights[j];
                let k = (1.0 / self.lap.speed[(j + n - 1) % n] + 1.0 / self.lap.speed[j]) / h;
                let mut d = w * self.comp.multiplier[j];
                for (i, c) in &self.comp.powers {
                    d += c * w * (k / w).powi(*i as i32);
                }
                d
            })
            .collect()
    }

    fn solve_iterative(&self, rhs: &[Vec3]) -> Result<Vec<Vec3>> {
        let n = self.lap.len();
        let diag = self.jacobi_diagonal();
        let max_iter = self.options.max_iter.unwrap_or(50 * self.dims * n);
        if self.flat() {
            let mut out = vec![Vec3::zeros(); n];
            for d in 0..self.dims {
                let b: Vec<f64> = rhs.iter().map(|v| v[d]).collect();
                let apply = |x: &[f64]| -> Vec<f64> {
                    let field: Vec<Vec3> = x.iter().map(|c| Vec3::new(*c, 0.0, 0.0)).collect();
                    self.system_apply(&field).iter().map(|v| v.x).collect()
                };
                let (x, _) = conjugate_gradient(apply, &diag, &b, self.options.tol, max_iter)?;
                for (o, v) in out.iter_mut().zip(x) {
                    o[d] = v;
                }
            }
            Ok(out)
        } else {
            let diag3: Vec<f64> = diag.iter().flat_map(|d| [*d; 3]).collect();
            let apply = |x: &[f64]| flatten(&self.system_apply(&unflatten(x, 3)), 3);
            let (x, _) = conjugate_gradient(apply, &diag3, &flatten(rhs, 3), self.options.tol, max_iter)?;
            Ok(self.lap.project(&unflatten(&x, 3)))
        }
    }

    /// P⁻¹ h.
    pub fn solve(&self, h: &[Vec3]) -> Result<Vec<Vec3>> {
        let mh: Vec<Vec3> = h.iter().zip(&self.lap.weights).map(|(v, w)| v * *w).collect();
        self.solve_weighted(&mh)
    }

    /// Derivative of M P̃ h in the immersion direction m with h held fixed,
    /// for fixed coefficients (the Vol-dependence of the weights and the
    /// curvature dependence of ψ are handled by the caller).
    pub(crate) fn weighted_jvp_fixed_coefficients(
        &self,
        f: &Immersion,
        geo: &Geometry,
        m: &[Vec3],
        h: &[Vec3],
    ) -> Vec<Vec3> {
        let lap = &self.lap;
        let amb = &lap.ambient;
        let n = lap.len();
        let dw = geometry_jvp(f, geo, m).weights;
        let w = &lap.weights;
        let psi = &self.comp.multiplier;
        // order zero: Π diag(wψ) Π h
        let v = lap.project(h);
        let dv: Vec<Vec3> = (0..n).map(|j| amb.projection_derivative(&lap.nodes[j], &m[j], &h[j])).collect();
        let mut out: Vec<Vec3> = (0..n)
            .map(|j| {
                let core = v[j] * w[j];
                let dcore = v[j] * dw[j] + dv[j] * w[j];
                (amb.projection_derivative(&lap.nodes[j], &m[j], &core) + amb.project_tangent(&lap.nodes[j], &dcore)) * psi[j]
            })
            .collect();
        // y_r = Δ̃ʳ h, with dy_r = M⁻¹(dL y_{r−1} + L dy_{r−1} − dM y_r)
        let order = self.comp.order();
        let mut y = v;
        let mut dy = dv;
        for r in 1..=order {
            let ly = lap.stiffness(&y);
            let mut dly = lap.stiffness_jvp(m, &y);
            let l_dy = lap.stiffness(&dy);
            for (a, b) in dly.iter_mut().zip(&l_dy) {
                *a += b;
            }
            let c: f64 = self.comp.powers.iter().filter(|(i, _)| *i == r).map(|(_, c)| c).sum();
            if c != 0.0 {
                for (o, d) in out.iter_mut().zip(&dly) {
                    *o += d * c;
                }
            }
            if r < order {
                let ynext: Vec<Vec3> = ly.iter().zip(w).map(|(l, wj)| l / *wj).collect();
                dy = (0..n).map(|j| (dly[j] - ynext[j] * dw[j]) / w[j]).collect();
                y = ynext;
            }
        }
        out
    }
}

/// Eigenvalues of Δ on tangent fields, ascending: the generalized problem
/// L v = λ M v reduced to M^{-1/2} L M^{-1/2}. Flat space returns one copy per
/// scalar component; the sphere uses an orthonormal tangent frame per node.
pub fn laplacian_spectrum(f: &Immersion) -> Result<Vec<f64>> {
    let geo = induced_geometry(f)?;
    let lap = Laplacian::new(f, &geo)?;
    let n = lap.len();
    let isw: Vec<f64> = lap.weights.iter().map(|w| 1.0 / w.sqrt()).collect();
    let sym = if f.ambient().is_flat() {
        assemble(n, |col| {
            let field: Vec<Vec3> = col.iter().zip(&isw).map(|(c, s)| Vec3::new(c * s, 0.0, 0.0)).collect();
            lap.stiffness(&field).iter().zip(&isw).map(|(v, s)| v.x * s).collect()
        })
    } else {
        let frames: Vec<[Vec3; 2]> = f.nodes().iter().map(tangent_frame).collect();
        assemble(2 * n, |col| {
            let field: Vec<Vec3> = (0..n)
                .map(|j| (frames[j][0] * col[2 * j] + frames[j][1] * col[2 * j + 1]) * isw[j])
                .collect();
            let out = lap.stiffness(&field);
            (0..n)
                .flat_map(|j| [out[j].dot(&frames[j][0]) * isw[j], out[j].dot(&frames[j][1]) * isw[j]])
                .collect()
        })
    };
    let sym = (&sym + sym.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

fn tangent_frame(x: &Vec3) -> [Vec3; 2] {
    let nrm = x.normalize();
    let seed = if nrm.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (seed - nrm * nrm.dot(&seed)).normalize();
    let e2 = nrm.cross(&e1);
    [e1, e2]
}
