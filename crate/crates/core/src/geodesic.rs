//! Geodesics of G^P on immersed curves.
//!
//! The discrete geodesic equations are the Euler–Lagrange equations of
//! L(f, v) = ½ vᵀ A(f) v with A = M P̃ the assembled weighted operator. In
//! momentum form p = A v and ṗ = ½ ∇_f G̃(v, v); in velocity form
//! v̇ = ½ H(v, v) − K(v, v). On the sphere the constraint |f_j| = R adds the
//! normal terms −⟨p_j, v_j⟩ f_j / R² and −|v_j|² f_j / R² respectively.
//! Both are integrated with classical RK4.

use log::warn;
use nalgebra::DMatrix;

use crate::ambient::Ambient;
use crate::calculus::{Grid, PeriodicSpline};
use crate::error::{check_len, Error, Result};
use crate::geometry::Immersion;
use crate::invariants::{record, ConservedRecord};
use crate::linalg::{conjugate_gradient, dot, flatten, lbfgs, unflatten, DenseSpd, LbfgsOptions, SolverOptions};
use crate::metrics::{field_dot, MetricAt, MetricSpec};
use crate::Vec3;

/// One sample of a geodesic: position, velocity f_t and weighted momentum
/// p = M P f_t.
#[derive(Debug, Clone)]
pub struct GeodesicState {
    pub f: Immersion,
    pub velocity: Vec<Vec3>,
    pub momentum: Vec<Vec3>,
}

#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub times: Vec<f64>,
    pub states: Vec<GeodesicState>,
    pub diagnostics: Vec<ConservedRecord>,
    /// Set when an iterative construction stopped before its tolerance.
    pub warning: Option<String>,
}

impl GeodesicPath {
    pub fn curves(&self) -> Vec<&Immersion> {
        self.states.iter().map(|s| &s.f).collect()
    }

    pub fn last(&self) -> &GeodesicState {
        self.states.last().expect("paths are never empty")
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ShootOptions {
    pub solver: SolverOptions,
    /// Remove the tangential part of the momentum after every step.
    pub horizontal_projection: bool,
}

type Pair = (Vec<Vec3>, Vec<Vec3>);

fn axpy(y: &[Vec3], a: f64, x: &[Vec3]) -> Vec<Vec3> {
    y.iter().zip(x).map(|(u, v)| u + v * a).collect()
}

fn radius_sq(amb: &Ambient) -> Option<f64> {
    match *amb {
        Ambient::Sphere { radius } => Some(radius * radius),
        Ambient::Euclidean { .. } => None,
    }
}

fn check_steps(t_final: f64, steps: usize) -> Result<f64> {
    if steps == 0 || !(t_final > 0.0) || !t_final.is_finite() {
        return Err(Error::Domain(format!(
            "need T > 0 and at least one step, got T = {t_final}, steps = {steps}"
        )));
    }
    Ok(t_final / steps as f64)
}

/// Pull the nodes back onto the sphere and the second component into its
/// tangent spaces.
fn renormalize(amb: &Ambient, nodes: &mut [Vec3], field: &mut [Vec3]) {
    if let Ambient::Sphere { radius } = *amb {
        for (x, v) in nodes.iter_mut().zip(field.iter_mut()) {
            *x *= radius / x.norm();
            *v = amb.project_tangent(x, v);
        }
    }
}

/// The first component of the system is always the nodes.
struct Integrator<'a> {
    spec: &'a MetricSpec,
    amb: Ambient,
    grid: Grid,
    opts: ShootOptions,
}

impl Integrator<'_> {
    fn immersion(&self, nodes: &[Vec3]) -> Immersion {
        Immersion::new_unchecked(self.amb, self.grid, nodes.to_vec())
    }

    fn metric(&self, nodes: &[Vec3]) -> Result<MetricAt> {
        MetricAt::with_options(self.spec, &self.immersion(nodes), self.opts.solver)
    }

    /// (v, ṗ) from (f, p); also returns v for reuse.
    fn momentum_rhs(&self, metric: &MetricAt, p: &[Vec3]) -> Result<(Pair, Vec<Vec3>)> {
        let v = metric.operator().solve_weighted(p)?;
        let grad = metric.foot_gradient(&v, &v)?;
        let nodes = metric.immersion().nodes();
        let dp: Vec<Vec3> = match radius_sq(&self.amb) {
            None => grad.iter().map(|g| g * 0.5).collect(),
            Some(r2) => (0..grad.len())
                .map(|j| self.amb.project_tangent(&nodes[j], &(grad[j] * 0.5)) - nodes[j] * (p[j].dot(&v[j]) / r2))
                .collect(),
        };
        Ok(((v.clone(), dp), v))
    }

    fn velocity_rhs(&self, metric: &MetricAt, v: &[Vec3]) -> Result<Pair> {
        let h = metric.h_gradient(v, v)?;
        let k = metric.k_gradient(v, v)?;
        let nodes = metric.immersion().nodes();
        let mut acc: Vec<Vec3> = h.iter().zip(&k).map(|(a, b)| a * 0.5 - b).collect();
        if let Some(r2) = radius_sq(&self.amb) {
            for j in 0..acc.len() {
                acc[j] -= nodes[j] * (v[j].norm_squared() / r2);
            }
        }
        Ok((v.to_vec(), acc))
    }

    /// Classical RK4 where the first stage is given.
    fn rk4(
        &self,
        y: &Pair,
        k1: Pair,
        dt: f64,
        rhs: impl Fn(&MetricAt, &[Vec3]) -> Result<Pair>,
    ) -> Result<Pair> {
        let stage = |k: &Pair, c: f64| -> Result<Pair> {
            let nodes = axpy(&y.0, c * dt, &k.0);
            let second = axpy(&y.1, c * dt, &k.1);
            rhs(&self.metric(&nodes)?, &second)
        };
        let k2 = stage(&k1, 0.5)?;
        let k3 = stage(&k2, 0.5)?;
        let k4 = stage(&k3, 1.0)?;
        let combine = |y: &[Vec3], a: &[Vec3], b: &[Vec3], c: &[Vec3], d: &[Vec3]| -> Vec<Vec3> {
            (0..y.len())
                .map(|j| y[j] + (a[j] + (b[j] + c[j]) * 2.0 + d[j]) * (dt / 6.0))
                .collect()
        };
        Ok((
            combine(&y.0, &k1.0, &k2.0, &k3.0, &k4.0),
            combine(&y.1, &k1.1, &k2.1, &k3.1, &k4.1),
        ))
    }
}

fn breakdown(time: f64, nodes: &[Vec3], err: Error) -> Error {
    if err.is_numerical() || matches!(err, Error::Domain(_)) {
        Error::FlowBreakdown {
            time,
            reason: err.to_string(),
            last_nodes: nodes.to_vec(),
        }
    } else {
        err
    }
}

/// Relative energy change beyond which a step is taken to have jumped over
/// a singularity of the flow.
const ENERGY_BREAKDOWN: f64 = 1e-2;

fn check_energy(path: &GeodesicPath, rec: &crate::invariants::ConservedRecord) -> Result<()> {
    let (Some(first), Some(last)) = (path.diagnostics.first(), path.states.last()) else {
        return Ok(());
    };
    let jump = (rec.energy - first.energy).abs();
    if jump.is_finite() && jump <= ENERGY_BREAKDOWN * first.energy.abs() {
        return Ok(());
    }
    Err(Error::FlowBreakdown {
        time: *path.times.last().unwrap(),
        reason: format!(
            "energy changed from {:e} to {:e} at t = {}",
            first.energy, rec.energy, rec.time
        ),
        last_nodes: last.f.nodes().to_vec(),
    })
}

fn prepare_shot(f0: &Immersion, u0: &[Vec3], t_final: f64, steps: usize) -> Result<f64> {
    f0.check_field(u0)?;
    check_steps(t_final, steps)
}

/// Geodesic from (f0, u0) integrated in momentum form.
pub fn shoot_momentum(spec: &MetricSpec, f0: &Immersion, u0: &[Vec3], t_final: f64, steps: usize) -> Result<GeodesicPath> {
    shoot_momentum_with(spec, f0, u0, t_final, steps, &ShootOptions::default())
}

pub fn shoot_momentum_with(
    spec: &MetricSpec,
    f0: &Immersion,
    u0: &[Vec3],
    t_final: f64,
    steps: usize,
    opts: &ShootOptions,
) -> Result<GeodesicPath> {
    let dt = prepare_shot(f0, u0, t_final, steps)?;
    let integ = Integrator {
        spec,
        amb: *f0.ambient(),
        grid: *f0.grid(),
        opts: *opts,
    };
    let metric0 = MetricAt::with_options(spec, f0, opts.solver)?;
    let mut y: Pair = (f0.nodes().to_vec(), metric0.operator().apply_weighted(u0));
    let mut path = GeodesicPath {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps + 1),
        warning: None,
    };
    let mut metric = metric0;
    for step in 0..=steps {
        let t = step as f64 * dt;
        let (k1, v) = integ
            .momentum_rhs(&metric, &y.1)
            .map_err(|e| breakdown(t, &y.0, e))?;
        let rec = record(&metric, &v, &y.1, t);
        check_energy(&path, &rec)?;
        path.times.push(t);
        path.diagnostics.push(rec);
        path.states.push(GeodesicState {
            f: metric.immersion().clone(),
            velocity: v,
            momentum: y.1.clone(),
        });
        if step == steps {
            break;
        }
        let mut next = integ
            .rk4(&y, k1, dt, |m, p| integ.momentum_rhs(m, p).map(|(k, _)| k))
            .map_err(|e| breakdown(t, &y.0, e))?;
        renormalize(&integ.amb, &mut next.0, &mut next.1);
        metric = integ.metric(&next.0).map_err(|e| breakdown(t, &y.0, e))?;
        if opts.horizontal_projection {
            let tangent = &metric.geometry().tangent;
            let g = &metric.geometry().g;
            for j in 0..next.1.len() {
                let c = next.1[j].dot(&tangent[j]) / g[j];
                next.1[j] -= tangent[j] * c;
            }
        }
        y = next;
    }
    Ok(path)
}

/// Geodesic from (f0, u0) integrated in velocity form ∇_{∂t} f_t = ½H − K.
pub fn shoot_velocity(spec: &MetricSpec, f0: &Immersion, u0: &[Vec3], t_final: f64, steps: usize) -> Result<GeodesicPath> {
    shoot_velocity_with(spec, f0, u0, t_final, steps, &ShootOptions::default())
}

pub fn shoot_velocity_with(
    spec: &MetricSpec,
    f0: &Immersion,
    u0: &[Vec3],
    t_final: f64,
    steps: usize,
    opts: &ShootOptions,
) -> Result<GeodesicPath> {
    let dt = prepare_shot(f0, u0, t_final, steps)?;
    let integ = Integrator {
        spec,
        amb: *f0.ambient(),
        grid: *f0.grid(),
        opts: *opts,
    };
    let mut y: Pair = (f0.nodes().to_vec(), f0.project_field(u0));
    let mut metric = MetricAt::with_options(spec, f0, opts.solver)?;
    let mut path = GeodesicPath {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        diagnostics: Vec::with_capacity(steps + 1),
        warning: None,
    };
    for step in 0..=steps {
        let t = step as f64 * dt;
        let p = metric.operator().apply_weighted(&y.1);
        let rec = record(&metric, &y.1, &p, t);
        check_energy(&path, &rec)?;
        path.times.push(t);
        path.diagnostics.push(rec);
        path.states.push(GeodesicState {
            f: metric.immersion().clone(),
            velocity: y.1.clone(),
            momentum: p,
        });
        if step == steps {
            break;
        }
        let k1 = integ.velocity_rhs(&metric, &y.1).map_err(|e| breakdown(t, &y.0, e))?;
        let mut next = integ
            .rk4(&y, k1, dt, |m, v| integ.velocity_rhs(m, v))
            .map_err(|e| breakdown(t, &y.0, e))?;
        renormalize(&integ.amb, &mut next.0, &mut next.1);
        metric = integ.metric(&next.0).map_err(|e| breakdown(t, &y.0, e))?;
        y = next;
    }
    Ok(path)
}

/// Coefficient a of the G-orthogonal projection of h onto {a·τ}, for the
/// tangent field τ.
fn vertical_coefficient(metric: &MetricAt, tangent: &[Vec3], h: &[Vec3]) -> Result<Vec<f64>> {
    let n = tangent.len();
    let op = metric.operator();
    let rhs: Vec<f64> = op
        .apply_weighted(h)
        .iter()
        .zip(tangent)
        .map(|(p, t)| p.dot(t))
        .collect();
    if metric.spec().is_order_zero() {
        let diag: Vec<f64> = (0..n)
            .map(|j| {
                let mut e = vec![Vec3::zeros(); n];
                e[j] = tangent[j];
                op.apply_weighted(&e)[j].dot(&tangent[j])
            })
            .collect();
        return Ok(rhs.iter().zip(&diag).map(|(r, d)| r / d).collect());
    }
    let apply = |a: &[f64]| -> Vec<f64> {
        let field: Vec<Vec3> = a.iter().zip(tangent).map(|(c, t)| t * *c).collect();
        op.apply_weighted(&field)
            .iter()
            .zip(tangent)
            .map(|(p, t)| p.dot(t))
            .collect()
    };
    let opts = SolverOptions::default();
    if n <= opts.dense_limit {
        let mut b = DMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for k in 0..n {
            e[k] = 1.0;
            let col = apply(&e);
            e[k] = 0.0;
            for (j, v) in col.iter().enumerate() {
                b[(j, k)] = *v;
            }
        }
        let b = (&b + b.transpose()) * 0.5;
        Ok(DenseSpd::new(b)?.solve(&rhs))
    } else {
        let diag: Vec<f64> = (0..n)
            .map(|j| {
                let mut e = vec![0.0; n];
                e[j] = 1.0;
                apply(&e)[j]
            })
            .collect();
        let (a, _) = conjugate_gradient(apply, &diag, &rhs, opts.tol, opts.max_iter.unwrap_or(20 * n))?;
        Ok(a)
    }
}

/// (h^ver, h^hor) with h = h^ver·f_θ + h^hor and G(a·f_θ, h^hor) = 0 for all
/// nodal a. For order-zero metrics h^hor is the normal part of h.
pub fn horizontal_decompose(spec: &MetricSpec, f: &Immersion, h: &[Vec3]) -> Result<(Vec<f64>, Vec<Vec3>)> {
    check_len(f.len(), h.len())?;
    let metric = MetricAt::new(spec, f)?;
    let h = f.project_field(h);
    let tangent = &metric.geometry().tangent;
    let ver = vertical_coefficient(&metric, tangent, &h)?;
    let hor = (0..h.len()).map(|j| h[j] - tangent[j] * ver[j]).collect();
    Ok((ver, hor))
}

/// Path of immersions sampled at increasing times, optionally with their
/// velocities.
#[derive(Debug, Clone)]
pub struct RawPath {
    pub times: Vec<f64>,
    pub curves: Vec<Immersion>,
    pub velocities: Option<Vec<Vec<Vec3>>>,
}

impl From<&GeodesicPath> for RawPath {
    fn from(path: &GeodesicPath) -> Self {
        Self {
            times: path.times.clone(),
            curves: path.states.iter().map(|s| s.f.clone()).collect(),
            velocities: Some(path.states.iter().map(|s| s.velocity.clone()).collect()),
        }
    }
}

/// Horizontal lift f̃(t, θ) = f(t, φ(t, θ)).
#[derive(Debug, Clone)]
pub struct LiftedPath {
    pub times: Vec<f64>,
    pub curves: Vec<Immersion>,
    /// ∂_t f̃ at the samples.
    pub velocities: Vec<Vec<Vec3>>,
    /// φ(t_k, θ_j), unwrapped.
    pub phi: Vec<Vec<f64>>,
}

/// Tangent field used by the lift: derivative of the periodic cubic spline
/// through the nodes. Its error is O(h⁴) at the nodes, so pure
/// reparametrizations are recognized as vertical to that order.
pub fn spline_tangent(f: &Immersion) -> Result<Vec<Vec3>> {
    let s = PeriodicSpline::new(f.grid(), f.nodes())?;
    let t: Vec<Vec3> = f.grid().thetas().iter().map(|&x| s.derivative(x)).collect();
    Ok(f.project_field(&t))
}

pub fn sample_velocities(raw: &RawPath) -> Result<Vec<Vec<Vec3>>> {
    if let Some(v) = &raw.velocities {
        if v.len() != raw.curves.len() {
            return Err(Error::Shape {
                expected: raw.curves.len(),
                got: v.len(),
            });
        }
        return Ok(v.clone());
    }
    let k = raw.curves.len();
    let n = raw.curves[0].len();
    let amb = raw.curves[0].ambient();
    let mut out = vec![vec![Vec3::zeros(); n]; k];
    if k == 2 {
        let dt = raw.times[1] - raw.times[0];
        for j in 0..n {
            let d = (raw.curves[1].nodes()[j] - raw.curves[0].nodes()[j]) / dt;
            out[0][j] = amb.project_tangent(&raw.curves[0].nodes()[j], &d);
            out[1][j] = amb.project_tangent(&raw.curves[1].nodes()[j], &d);
        }
        return Ok(out);
    }
    // Three-point stencils for possibly nonuniform spacing.
    for i in 0..k {
        let (a, b, c) = if i == 0 {
            (0, 1, 2)
        } else if i == k - 1 {
            (k - 3, k - 2, k - 1)
        } else {
            (i - 1, i, i + 1)
        };
        let (ta, tb, tc) = (raw.times[a], raw.times[b], raw.times[c]);
        let t = raw.times[i];
        let la = (2.0 * t - tb - tc) / ((ta - tb) * (ta - tc));
        let lb = (2.0 * t - ta - tc) / ((tb - ta) * (tb - tc));
        let lc = (2.0 * t - ta - tb) / ((tc - ta) * (tc - tb));
        for j in 0..n {
            let d = raw.curves[a].nodes()[j] * la + raw.curves[b].nodes()[j] * lb + raw.curves[c].nodes()[j] * lc;
            out[i][j] = amb.project_tangent(&raw.curves[i].nodes()[j], &d);
        }
    }
    Ok(out)
}

pub(crate) fn validate_raw(raw: &RawPath) -> Result<()> {
    if raw.curves.len() < 2 || raw.curves.len() != raw.times.len() {
        return Err(Error::Domain(format!(
            "a path needs at least two samples with matching times, got {} curves and {} times",
            raw.curves.len(),
            raw.times.len()
        )));
    }
    if raw.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("path times must be strictly increasing".into()));
    }
    let n = raw.curves[0].len();
    for c in &raw.curves {
        check_len(n, c.len())?;
        if c.ambient() != raw.curves[0].ambient() {
            return Err(Error::Domain("path samples live in different ambients".into()));
        }
    }
    Ok(())
}

/// Vertical coefficient of (f, u) with respect to the spline tangent, as a
/// periodic spline in θ.
fn vertical_spline(spec: &MetricSpec, f: &Immersion, u: &[Vec3]) -> Result<PeriodicSpline<f64>> {
    let metric = MetricAt::new(spec, f)?;
    let tangent = spline_tangent(f)?;
    let a = vertical_coefficient(&metric, &tangent, &f.project_field(u))?;
    PeriodicSpline::new(f.grid(), &a)
}

fn check_monotone(phi: &[f64], time: f64) -> Result<()> {
    let n = phi.len();
    for j in 0..n {
        let gap = if j + 1 < n {
            phi[j + 1] - phi[j]
        } else {
            phi[0] + 2.0 * std::f64::consts::PI - phi[j]
        };
        if !(gap > 0.0) {
            return Err(Error::LiftBreakdown {
                time,
                reason: format!("φ lost monotonicity between nodes {j} and {}", (j + 1) % n),
            });
        }
    }
    Ok(())
}

fn resample(f: &Immersion, phi: &[f64]) -> Result<(Immersion, PeriodicSpline<Vec3>)> {
    let s = PeriodicSpline::new(f.grid(), f.nodes())?;
    let amb = f.ambient();
    let nodes: Vec<Vec3> = phi
        .iter()
        .map(|&x| {
            let y = s.eval(x);
            match *amb {
                Ambient::Sphere { radius } => y * (radius / y.norm()),
                Ambient::Euclidean { .. } => y,
            }
        })
        .collect();
    Ok((Immersion::new_unchecked(*amb, *f.grid(), nodes), s))
}

/// Horizontal lift: integrates φ_t = −a(t, φ), with a the vertical
/// coefficient of ∂_t f, by RK4 over the sample intervals. Midpoint states
/// come from cubic Hermite interpolation in time.
pub fn horizontal_lift(spec: &MetricSpec, raw: &RawPath) -> Result<LiftedPath> {
    validate_raw(raw)?;
    let vel = sample_velocities(raw)?;
    let grid = *raw.curves[0].grid();
    let amb = *raw.curves[0].ambient();
    let mut phi = grid.thetas();
    let mut out = LiftedPath {
        times: raw.times.clone(),
        curves: Vec::with_capacity(raw.curves.len()),
        velocities: Vec::with_capacity(raw.curves.len()),
        phi: Vec::with_capacity(raw.curves.len()),
    };
    let lift_err = |time: f64| move |e: Error| Error::LiftBreakdown {
        time,
        reason: e.to_string(),
    };
    let mut a_now = vertical_spline(spec, &raw.curves[0], &vel[0]).map_err(lift_err(raw.times[0]))?;
    for k in 0..raw.curves.len() {
        let t = raw.times[k];
        let (curve, s) = resample(&raw.curves[k], &phi)?;
        let us = PeriodicSpline::new(&grid, &vel[k])?;
        let velocity: Vec<Vec3> = phi
            .iter()
            .enumerate()
            .map(|(j, &x)| {
                let v = us.eval(x) - s.derivative(x) * a_now.eval(x);
                amb.project_tangent(&curve.nodes()[j], &v)
            })
            .collect();
        out.curves.push(curve);
        out.velocities.push(velocity);
        out.phi.push(phi.clone());
        if k + 1 == raw.curves.len() {
            break;
        }
        let dt = raw.times[k + 1] - t;
        let (f0, f1) = (raw.curves[k].nodes(), raw.curves[k + 1].nodes());
        let (u0, u1) = (&vel[k], &vel[k + 1]);
        let mut mid: Vec<Vec3> = (0..f0.len())
            .map(|j| (f0[j] + f1[j]) * 0.5 + (u0[j] - u1[j]) * (dt / 8.0))
            .collect();
        let mut umid: Vec<Vec3> = (0..f0.len())
            .map(|j| (f1[j] - f0[j]) * (1.5 / dt) - (u0[j] + u1[j]) * 0.25)
            .collect();
        renormalize(&amb, &mut mid, &mut umid);
        let fmid = Immersion::new_unchecked(amb, grid, mid);
        let a_mid = vertical_spline(spec, &fmid, &umid).map_err(lift_err(t + 0.5 * dt))?;
        let a_next = vertical_spline(spec, &raw.curves[k + 1], &vel[k + 1]).map_err(lift_err(raw.times[k + 1]))?;
        let slope = |a: &PeriodicSpline<f64>, base: &[f64], k: &[f64], c: f64| -> Vec<f64> {
            base.iter().zip(k).map(|(p, d)| -a.eval(p + c * d)).collect()
        };
        let zero = vec![0.0; phi.len()];
        let k1 = slope(&a_now, &phi, &zero, 0.0);
        let k2 = slope(&a_mid, &phi, &k1, 0.5 * dt);
        let k3 = slope(&a_mid, &phi, &k2, 0.5 * dt);
        let k4 = slope(&a_next, &phi, &k3, dt);
        for j in 0..phi.len() {
            phi[j] += dt / 6.0 * (k1[j] + 2.0 * (k2[j] + k3[j]) + k4[j]);
        }
        check_monotone(&phi, raw.times[k + 1])?;
        a_now = a_next;
    }
    Ok(out)
}

/// max over samples and nodal basis fields X_j of
/// |G(∂_t f̃, τ̃·X_j)| / (‖∂_t f̃‖_G ‖τ̃·X_j‖_G), τ̃ the spline tangent.
pub fn horizontality_residual(spec: &MetricSpec, curves: &[Immersion], velocities: &[Vec<Vec3>]) -> Result<f64> {
    check_len(curves.len(), velocities.len())?;
    let mut worst: f64 = 0.0;
    for (f, v) in curves.iter().zip(velocities) {
        let metric = MetricAt::new(spec, f)?;
        let tangent = spline_tangent(f)?;
        let op = metric.operator();
        let pv = op.apply_weighted(v);
        let norm_v = field_dot(v, &pv).max(0.0).sqrt();
        if norm_v == 0.0 {
            continue;
        }
        let n = f.len();
        for j in 0..n {
            let mut e = vec![Vec3::zeros(); n];
            e[j] = tangent[j];
            let norm_x = field_dot(&e, &op.apply_weighted(&e)).sqrt();
            worst = worst.max(pv[j].dot(&tangent[j]).abs() / (norm_v * norm_x));
        }
    }
    Ok(worst)
}

/// Options for the path-energy minimization.
#[derive(Debug, Clone, Copy)]
pub struct MatchOptions {
    /// Stop when ‖∇E‖ ≤ gtol·max(1, E).
    pub gtol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            gtol: 1e-8,
            max_iter: 500,
            memory: 12,
        }
    }
}

fn check_bvp_inputs(f0: &Immersion, f1: &Immersion, time_nodes: usize) -> Result<()> {
    if !f0.ambient().is_flat() || !f1.ambient().is_flat() {
        return Err(Error::Unsupported("the boundary value problem requires a flat ambient".into()));
    }
    check_len(f0.len(), f1.len())?;
    if f0.ambient() != f1.ambient() {
        return Err(Error::Domain("endpoints live in different ambients".into()));
    }
    if time_nodes < 2 {
        return Err(Error::Domain(format!("need at least 2 time nodes, got {time_nodes}")));
    }
    Ok(())
}

/// Discrete path energy ½ Σ_k G_{f_{k+½}}(Δf_k/dt, Δf_k/dt) dt on the unit
/// time interval, f_{k+½} the midpoint, with its gradient in every node.
pub fn path_energy_gradient(spec: &MetricSpec, curves: &[Immersion]) -> Result<(f64, Vec<Vec<Vec3>>)> {
    if curves.len() < 2 {
        return Err(Error::Domain("a path needs at least two curves".into()));
    }
    let n = curves[0].len();
    let amb = *curves[0].ambient();
    let grid = *curves[0].grid();
    let dt = 1.0 / (curves.len() - 1) as f64;
    let mut energy = 0.0;
    let mut grad = vec![vec![Vec3::zeros(); n]; curves.len()];
    for k in 0..curves.len() - 1 {
        let (a, b) = (curves[k].nodes(), curves[k + 1].nodes());
        check_len(n, b.len())?;
        let mid: Vec<Vec3> = a.iter().zip(b).map(|(x, y)| (x + y) * 0.5).collect();
        let v: Vec<Vec3> = a.iter().zip(b).map(|(x, y)| (y - x) / dt).collect();
        let metric = MetricAt::new(spec, &Immersion::new_unchecked(amb, grid, mid))?;
        let av = metric.operator().apply_weighted(&v);
        energy += 0.5 * dt * field_dot(&v, &av);
        let foot = metric.foot_gradient(&v, &v)?;
        for j in 0..n {
            let shared = foot[j] * (0.25 * dt);
            grad[k][j] += shared - av[j];
            grad[k + 1][j] += shared + av[j];
        }
    }
    Ok((energy, grad))
}

pub fn path_energy(spec: &MetricSpec, curves: &[Immersion]) -> Result<f64> {
    Ok(path_energy_gradient(spec, curves)?.0)
}

/// Preconditioner (T ⊗ A_ref)⁻¹·dt for the interior unknowns: T the time
/// second-difference matrix and A_ref the weighted operator at a reference
/// curve.
struct BvpPreconditioner {
    op: MetricAt,
    interior: usize,
    n: usize,
    dims: usize,
    dt: f64,
}

impl BvpPreconditioner {
    fn apply(&self, g: &[f64]) -> Vec<f64> {
        let (n, d, m) = (self.n, self.dims, self.interior);
        let mut slices: Vec<Vec<Vec3>> = (0..m)
            .map(|k| {
                let field = unflatten(&g[k * n * d..(k + 1) * n * d], d);
                self.op.operator().solve_weighted(&field).unwrap_or(field)
            })
            .collect();
        // Thomas algorithm for tridiag(−1, 2, −1) along time, per node and component.
        let mut c = vec![0.0; m];
        for j in 0..n {
            for comp in 0..d {
                let mut rhs: Vec<f64> = slices.iter().map(|s| s[j][comp]).collect();
                c[0] = -0.5;
                rhs[0] /= 2.0;
                for k in 1..m {
                    let denom = 2.0 + c[k - 1];
                    c[k] = -1.0 / denom;
                    rhs[k] = (rhs[k] + rhs[k - 1]) / denom;
                }
                for k in (0..m.saturating_sub(1)).rev() {
                    rhs[k] -= c[k] * rhs[k + 1];
                }
                for k in 0..m {
                    slices[k][j][comp] = rhs[k] * self.dt;
                }
            }
        }
        slices.iter().flat_map(|s| flatten(s, d)).collect()
    }
}

/// Geodesic between f0 and f1 by minimizing the discrete path energy over
/// the interior curves with L-BFGS, starting from linear interpolation.
pub fn match_bvp(spec: &MetricSpec, f0: &Immersion, f1: &Immersion, time_nodes: usize) -> Result<GeodesicPath> {
    match_bvp_with(spec, f0, f1, time_nodes, &MatchOptions::default())
}

pub fn match_bvp_with(
    spec: &MetricSpec,
    f0: &Immersion,
    f1: &Immersion,
    time_nodes: usize,
    opts: &MatchOptions,
) -> Result<GeodesicPath> {
    check_bvp_inputs(f0, f1, time_nodes)?;
    spec.validate()?;
    let amb = *f0.ambient();
    let grid = *f0.grid();
    let dims = amb.embedding_dim();
    let n = f0.len();
    let k_last = time_nodes - 1;
    let dt = 1.0 / k_last as f64;
    let linear = |k: usize| -> Vec<Vec3> {
        let s = k as f64 * dt;
        f0.nodes().iter().zip(f1.nodes()).map(|(a, b)| a * (1.0 - s) + b * s).collect()
    };
    let build = |x: &[f64]| -> Vec<Immersion> {
        let mut curves = vec![f0.clone()];
        for k in 1..k_last {
            let off = (k - 1) * n * dims;
            curves.push(Immersion::new_unchecked(amb, grid, unflatten(&x[off..off + n * dims], dims)));
        }
        curves.push(f1.clone());
        curves
    };
    let x0: Vec<f64> = (1..k_last).flat_map(|k| flatten(&linear(k), dims)).collect();
    let mut warning = None;
    let x = if x0.is_empty() {
        x0
    } else {
        let reference = Immersion::new_unchecked(amb, grid, linear(time_nodes / 2));
        let pre = BvpPreconditioner {
            op: MetricAt::new(spec, &reference)?,
            interior: k_last - 1,
            n,
            dims,
            dt,
        };
        let objective = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let (e, g) = path_energy_gradient(spec, &build(x))?;
            Ok((e, g[1..k_last].iter().flat_map(|s| flatten(s, dims)).collect()))
        };
        let lopts = LbfgsOptions {
            gtol: opts.gtol,
            max_iter: opts.max_iter,
            memory: opts.memory,
        };
        let outcome = lbfgs(&x0, objective, |g| pre.apply(g), &lopts)?;
        if !outcome.converged {
            let msg = format!(
                "path energy minimization stopped after {} iterations with gradient norm {:.3e}",
                outcome.iterations, outcome.grad_norm
            );
            warn!("{msg}");
            warning = Some(msg);
        }
        outcome.x
    };
    let curves = build(&x);
    for c in &curves {
        crate::geometry::induced_geometry(c)?;
    }
    let times: Vec<f64> = (0..time_nodes).map(|k| k as f64 * dt).collect();
    let raw = RawPath {
        times: times.clone(),
        curves: curves.clone(),
        velocities: None,
    };
    let velocities = sample_velocities(&raw)?;
    let mut path = GeodesicPath {
        times,
        states: Vec::with_capacity(time_nodes),
        diagnostics: Vec::with_capacity(time_nodes),
        warning,
    };
    for (k, (f, v)) in curves.into_iter().zip(velocities).enumerate() {
        let metric = MetricAt::new(spec, &f)?;
        let p = metric.operator().apply_weighted(&v);
        path.diagnostics.push(record(&metric, &v, &p, path.times[k]));
        path.states.push(GeodesicState {
            f,
            velocity: v,
            momentum: p,
        });
    }
    Ok(path)
}

/// Directional derivative of the path energy along a perturbation of the
/// interior curves, from the analytic gradient.
pub fn path_energy_directional(grad: &[Vec<Vec3>], direction: &[Vec<Vec3>]) -> f64 {
    grad.iter()
        .zip(direction)
        .map(|(g, d)| dot(&flatten(g, 3), &flatten(d, 3)))
        .sum()
}
