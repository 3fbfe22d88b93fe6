//! Linear solvers and gradient probing for the nodal systems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::Vec3;

/// Settings for the iterative solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance.
    pub tol: f64,
    /// Iteration cap; `None` means 50 × system size.
    pub max_iter: Option<usize>,
    /// Systems up to this size are factored densely instead of iterated.
    pub dense_limit: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: None,
            dense_limit: 768,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator given as a closure, with a diagonal (Jacobi) preconditioner.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, CgStats)> {
    let n = rhs.len();
    let bnorm = norm(rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            CgStats {
                iterations: 0,
                residual: 0.0,
            },
        ));
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        r.iter()
            .zip(diag)
            .map(|(ri, di)| if *di > 0.0 { ri / di } else { *ri })
            .collect()
    };
    let mut r = rhs.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Solver {
                iterations: it,
                residual: norm(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let res = norm(&r) / bnorm;
        if res <= tol {
            return Ok((
                x,
                CgStats {
                    iterations: it + 1,
                    residual: res,
                },
            ));
        }
        z = precond(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver {
        iterations: max_iter,
        residual: norm(&r) / bnorm,
    })
}

/// Cholesky factorization of a dense SPD matrix.
#[derive(Debug, Clone)]
pub struct DenseSpd {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl DenseSpd {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        let chol = nalgebra::Cholesky::new(matrix).ok_or(Error::Solver {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
        debug_assert_eq!(chol.l_dirty().nrows(), n);
        Ok(Self { chol })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(rhs);
        self.chol.solve(&b).as_slice().to_vec()
    }
}

/// Dense matrix of a linear map by applying it to the unit vectors.
pub fn assemble(n: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut e = vec![0.0; n];
    for j in 0..n {
        e[j] = 1.0;
        let col = apply(&e);
        e[j] = 0.0;
        for (i, v) in col.into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    m
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Smallest period q ≥ 2r + 1 dividing n, so that nodes of equal color are
/// at cyclic distance ≥ 2r + 1.
fn color_period(n: usize, radius: usize) -> usize {
    (2 * radius + 1..=n).find(|q| n % q == 0).unwrap_or(n)
}

/// Gradient of a sum Σ_j φ_j(f) of local terms, where φ_j depends on the nodes
/// within `radius` of j.
///
/// `jvp(m)` must return the directional derivatives dφ_j in direction m.
/// Nodes are probed in color classes, so the cost is (2r + 1)·dims
/// directional derivatives instead of N·dims.
pub(crate) fn local_gradient(
    n: usize,
    dims: usize,
    radius: usize,
    jvp: impl Fn(&[Vec3]) -> Vec<f64>,
) -> Vec<Vec3> {
    let q = color_period(n, radius);
    let mut grad = vec![Vec3::zeros(); n];
    let mut m = vec![Vec3::zeros(); n];
    for color in 0..q {
        for d in 0..dims {
            for i in (color..n).step_by(q) {
                m[i][d] = 1.0;
            }
            let dphi = jvp(&m);
            for i in (color..n).step_by(q) {
                m[i][d] = 0.0;
                let mut s = 0.0;
                for off in 0..=2 * radius {
                    let j = (i + n + off - radius) % n;
                    s += dphi[j];
                }
                grad[i][d] = s;
            }
        }
    }
    grad
}

/// Flattening helpers between nodal vector fields and component vectors.
pub(crate) fn flatten(field: &[Vec3], dims: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(field.len() * dims);
    for v in field {
        out.extend(v.iter().take(dims));
    }
    out
}

pub(crate) fn unflatten(data: &[f64], dims: usize) -> Vec<Vec3> {
    data.chunks(dims)
        .map(|c| {
            let mut v = Vec3::zeros();
            for (d, x) in c.iter().enumerate() {
                v[d] = *x;
            }
            v
        })
        .collect()
}

/// Settings for `lbfgs`.
#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    /// Stop when ‖∇E‖ ≤ gtol·max(1, |E|).
    pub gtol: f64,
    pub max_iter: usize,
    /// Number of stored correction pairs.
    pub memory: usize,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Limited-memory BFGS with a symmetric positive definite initial inverse
/// Hessian `precond` and Armijo backtracking. Failed objective evaluations
/// during the line search shrink the step.
pub fn lbfgs(
    x0: &[f64],
    mut objective: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    precond: impl Fn(&[f64]) -> Vec<f64>,
    opts: &LbfgsOptions,
) -> Result<LbfgsOutcome> {
    let mut x = x0.to_vec();
    let (mut e, mut g) = objective(&x)?;
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    let mut iterations = 0;
    loop {
        let gnorm = norm(&g);
        if gnorm <= opts.gtol * e.abs().max(1.0) {
            return Ok(LbfgsOutcome {
                x,
                value: e,
                grad_norm: gnorm,
                iterations,
                converged: true,
            });
        }
        if iterations >= opts.max_iter {
            break;
        }
        iterations += 1;
        let mut d = two_loop(&g, &pairs, &precond);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = precond(&g).iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + alpha * b).collect();
            if let Ok((et, gt)) = objective(&trial) {
                let armijo = et <= e + 1e-4 * alpha * slope;
                // Near the minimum the decrease drops below the rounding of E.
                let flat = (et - e).abs() <= 64.0 * f64::EPSILON * e.abs() && norm(&gt) < gnorm;
                if et.is_finite() && (armijo || flat) {
                    accepted = Some((trial, et, gt));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((xn, en, gn)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = xn;
        e = en;
        g = gn;
    }
    let grad_norm = norm(&g);
    Ok(LbfgsOutcome {
        x,
        value: e,
        grad_norm,
        iterations,
        converged: false,
    })
}

fn two_loop(
    g: &[f64],
    pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    precond: &impl Fn(&[f64]) -> Vec<f64>,
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    let mut r = precond(&q);
    if let Some((s, y, _)) = pairs.back() {
        let hy = precond(y);
        let gamma = dot(s, y) / dot(y, &hy);
        if gamma.is_finite() && gamma > 0.0 {
            r.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &r);
        for (ri, si) in r.iter_mut().zip(s) {
            *ri += (a - b) * si;
        }
    }
    r.iter().map(|v| -v).collect()
}
