//! Closed-form adjoints adj(∇P)(h,k) and the gradient brackets built from
//! them, discretized on the grid. These converge to the exact discrete
//! gradients of `MetricAt` at second order in 1/N.

use super::{MetricAt, MetricSpec, Part};
use crate::calculus::{centered, integrate};
use crate::error::{check_len, Result};
use crate::geometry::{geometry_jvp, induced_geometry, split, Geometry, Immersion};
use crate::operators::Laplacian;
use crate::variations::laplacian_power_jvp;
use crate::Vec3;

/// ∇_θ u = Π ∂_θ u.
pub fn covariant_theta(f: &Immersion, u: &[Vec3]) -> Result<Vec<Vec3>> {
    check_len(f.len(), u.len())?;
    Ok(f.project_field(&centered(f.grid(), u)))
}

/// Coefficient against ∂_θ of (ḡ(∇(Qh), k) − ḡ(∇h, Qk))♯, the tangential
/// part grad^g ḡ(Qh,k) − (ḡ(Qh,∇k) + ḡ(∇h,Qk))♯ with the gradient expanded
/// by the product rule.
fn tangential_coefficient(f: &Immersion, geo: &Geometry, h: &[Vec3], k: &[Vec3], qh: &[Vec3], qk: &[Vec3]) -> Vec<f64> {
    let dqh = f.project_field(&centered(f.grid(), qh));
    let dh = f.project_field(&centered(f.grid(), h));
    (0..f.len())
        .map(|j| (dqh[j].dot(&k[j]) - dh[j].dot(&qk[j])) / geo.g[j])
        .collect()
}

/// Σ_i Φ_i(Vol)·adj(∇P_i)(h,k)^⊤ as a coefficient against ∂_θ.
pub fn adjoint_tangential(spec: &MetricSpec, f: &Immersion, h: &[Vec3], k: &[Vec3]) -> Result<Vec<f64>> {
    let metric = MetricAt::new(spec, f)?;
    check_len(f.len(), h.len())?;
    check_len(f.len(), k.len())?;
    let geo = metric.geometry();
    let qh = metric.term_apply(h);
    let qk = metric.term_apply(k);
    let mut out = vec![0.0; f.len()];
    for ((t, ph), (_, pk)) in qh.iter().zip(&qk) {
        for (o, c) in out.iter_mut().zip(tangential_coefficient(f, geo, h, k, ph, pk)) {
            *o += t.phi * c;
        }
    }
    Ok(out)
}

fn normal_part(geo: &Geometry, v: &[Vec3]) -> Vec<Vec3> {
    v.iter()
        .zip(&geo.tangent)
        .zip(&geo.g)
        .map(|((x, t), g)| x - t * (x.dot(t) / g))
        .collect()
}

/// Normal part of adj(∇Δⁱ)(h,k): for each l < i, with a = Δ^{i−l−1}h and
/// b = Δ^l k,
///
///   2ḡ(a_s, b_s) Tr^g S − ∂_s ḡ(a_s, b) Tr^g S + g⁻¹ (R(∇a, b) f_θ − R(a, ∇b) f_θ)^⊥.
fn laplacian_power_normal(f: &Immersion, geo: &Geometry, lap: &Laplacian, h: &[Vec3], k: &[Vec3], i: usize) -> Vec<Vec3> {
    let n = f.len();
    let amb = f.ambient();
    let mut out = vec![Vec3::zeros(); n];
    let mut hp = vec![h.to_vec()];
    let mut kp = vec![k.to_vec()];
    for l in 1..i {
        hp.push(lap.apply(&hp[l - 1]));
        kp.push(lap.apply(&kp[l - 1]));
    }
    for l in 0..i {
        let a = &hp[i - l - 1];
        let b = &kp[l];
        let at = f.project_field(&centered(f.grid(), a));
        let bt = f.project_field(&centered(f.grid(), b));
        let flux: Vec<f64> = (0..n).map(|j| at[j].dot(&b[j]) / geo.sqrt_g[j]).collect();
        let dflux = centered(f.grid(), &flux);
        let mut curv = Vec::with_capacity(n);
        for j in 0..n {
            let kap = &geo.trace_s[j];
            let g = geo.g[j];
            out[j] += kap * (2.0 * at[j].dot(&bt[j]) / g - dflux[j] / geo.sqrt_g[j]);
            let t = &geo.tangent[j];
            curv.push((amb.curvature_unchecked(&at[j], &b[j], t) - amb.curvature_unchecked(&a[j], &bt[j], t)) / g);
        }
        for (o, c) in out.iter_mut().zip(normal_part(geo, &curv)) {
            *o += c;
        }
    }
    out
}

/// adj(∇Δⁱ)(h,k) (normal terms plus the tangential part).
pub fn adjoint_laplacian_power(f: &Immersion, h: &[Vec3], k: &[Vec3], i: usize) -> Result<Vec<Vec3>> {
    check_len(f.len(), h.len())?;
    check_len(f.len(), k.len())?;
    if i == 0 {
        return Ok(vec![Vec3::zeros(); f.len()]);
    }
    let geo = induced_geometry(f)?;
    let lap = Laplacian::new(f, &geo)?;
    let mut out = laplacian_power_normal(f, &geo, &lap, h, k, i);
    let qh = lap.power(h, i);
    let qk = lap.power(k, i);
    let c = tangential_coefficient(f, &geo, h, k, &qh, &qk);
    for j in 0..f.len() {
        out[j] += geo.tangent[j] * c[j];
    }
    Ok(out)
}

/// Normal part of the adjoint for P = 1 + A‖Tr^g S‖², u = ḡ(h,k):
/// 4A‖Tr^g S‖² Tr^g S u − 2A (Δ(Tr^g S u))^⊥ + 2A K u Tr^g S.
fn ga_normal(f: &Immersion, geo: &Geometry, lap: &Laplacian, h: &[Vec3], k: &[Vec3], a: f64) -> Vec<Vec3> {
    let kk = f.ambient().sectional_curvature();
    let u: Vec<f64> = h.iter().zip(k).map(|(x, y)| x.dot(y)).collect();
    let ku: Vec<Vec3> = geo.trace_s.iter().zip(&u).map(|(x, uj)| x * *uj).collect();
    let dku = normal_part(geo, &lap.apply(&ku));
    (0..f.len())
        .map(|j| {
            let kap = &geo.trace_s[j];
            kap * (4.0 * a * kap.norm_squared() * u[j] + 2.0 * a * kk * u[j]) - dku[j] * (2.0 * a)
        })
        .collect()
}

/// adj(∇P)(h,k) for P = 1 + A‖Tr^g S‖².
pub fn adjoint_ga(f: &Immersion, h: &[Vec3], k: &[Vec3], a: f64) -> Result<Vec<Vec3>> {
    check_len(f.len(), h.len())?;
    check_len(f.len(), k.len())?;
    let geo = induced_geometry(f)?;
    let lap = Laplacian::new(f, &geo)?;
    let mut out = ga_normal(f, &geo, &lap, h, k, a);
    let psi: Vec<f64> = geo.curvature_sq().iter().map(|k2| 1.0 + a * k2).collect();
    let qh: Vec<Vec3> = h.iter().zip(&psi).map(|(v, p)| v * *p).collect();
    let qk: Vec<Vec3> = k.iter().zip(&psi).map(|(v, p)| v * *p).collect();
    let c = tangential_coefficient(f, &geo, h, k, &qh, &qk);
    for j in 0..f.len() {
        out[j] += geo.tangent[j] * c[j];
    }
    Ok(out)
}

/// H-gradient from the closed-form bracket
///
///   Σ_i Φ_i (adj(∇P_i)(h,k)^⊥ − ḡ(P_i h,k) Tr^g S − Tf.(ḡ(P_i h,∇k) + ḡ(∇h,P_i k))♯)
///   − Σ_i Φ_i′ (∫ ḡ(P_i h,k) vol) Tr^g S,
///
/// followed by P⁻¹.
pub fn h_gradient_formula(spec: &MetricSpec, f: &Immersion, h: &[Vec3], k: &[Vec3]) -> Result<Vec<Vec3>> {
    let metric = MetricAt::new(spec, f)?;
    check_len(f.len(), h.len())?;
    check_len(f.len(), k.len())?;
    let geo = metric.geometry();
    let lap = metric.operator().laplacian();
    let n = f.len();
    let dh = covariant_theta(f, h)?;
    let dk = covariant_theta(f, k)?;
    let qh = metric.term_apply(h);
    let qk = metric.term_apply(k);
    let mut bracket = vec![Vec3::zeros(); n];
    for ((t, ph), (_, pk)) in qh.iter().zip(&qk) {
        let adj = match t.part {
            Part::Power(0) => vec![Vec3::zeros(); n],
            Part::Power(i) => laplacian_power_normal(f, geo, lap, h, k, i),
            Part::Curvature(a) => ga_normal(f, geo, lap, h, k, a),
        };
        let density: Vec<f64> = (0..n).map(|j| ph[j].dot(&k[j])).collect();
        let weighted: Vec<f64> = density.iter().zip(&geo.sqrt_g).map(|(d, s)| d * s).collect();
        let total = integrate(f.grid(), &weighted)?;
        for j in 0..n {
            let kap = &geo.trace_s[j];
            let sharp = (ph[j].dot(&dk[j]) + dh[j].dot(&pk[j])) / geo.g[j];
            bracket[j] += (adj[j] - kap * density[j] - geo.tangent[j] * sharp) * t.phi - kap * (t.dphi * total);
        }
    }
    metric.operator().solve(&bracket)
}

/// K-gradient from
///
///   Σ_i Φ_i (∇_m P_i) h − (∫ ḡ(m, Tr^g S) vol) Σ_i Φ_i′ P_i h + Tr^g(ḡ(∇m, Tf)) P h,
///
/// followed by P⁻¹. The operator variations (∇_m P_i) are the exact
/// discrete ones.
pub fn k_gradient_formula(spec: &MetricSpec, f: &Immersion, h: &[Vec3], m: &[Vec3]) -> Result<Vec<Vec3>> {
    let metric = MetricAt::new(spec, f)?;
    check_len(f.len(), h.len())?;
    check_len(f.len(), m.len())?;
    let geo = metric.geometry();
    let lap = metric.operator().laplacian();
    let n = f.len();
    let (_, mperp) = split(geo, m)?;
    let mk: Vec<f64> = (0..n).map(|j| mperp[j].dot(&geo.trace_s[j]) * geo.sqrt_g[j]).collect();
    let mk = integrate(f.grid(), &mk)?;
    let dm = covariant_theta(f, m)?;
    let div: Vec<f64> = (0..n).map(|j| dm[j].dot(&geo.tangent[j]) / geo.g[j]).collect();
    let ph = metric.operator().apply(h);
    let jvp = geometry_jvp(f, geo, m);
    let mut rhs: Vec<Vec3> = (0..n).map(|j| ph[j] * div[j]).collect();
    for (t, qh) in metric.term_apply(h) {
        let dq = match t.part {
            Part::Power(i) => laplacian_power_jvp(f, geo, lap, m, h, i),
            Part::Curvature(a) => {
                let dk = f.project_field(&jvp.trace_s);
                (0..n).map(|j| h[j] * (2.0 * a * geo.trace_s[j].dot(&dk[j]))).collect()
            }
        };
        for j in 0..n {
            rhs[j] += dq[j] * t.phi - qh[j] * (mk * t.dphi);
        }
    }
    metric.operator().solve(&rhs)
}

/// Operator whose adjoint identity is checked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AdjointOperator {
    LaplacianPower(usize),
    CurvatureWeighted(f64),
}

/// Both sides of ∫ ḡ((∇_m P) h, k) vol = ∫ ḡ(m, adj(∇P)(h, k)) vol.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AdjointIdentity {
    pub lhs: f64,
    pub rhs: f64,
    /// |lhs − rhs| / max(|lhs|, |rhs|).
    pub discrepancy: f64,
}

/// Evaluates the adjoint identity. The left side comes from the exact
/// variations of Δⁱ and Tr^g S, the right side from the closed-form adjoint.
pub fn adjoint_identity(op: AdjointOperator, f: &Immersion, h: &[Vec3], k: &[Vec3], m: &[Vec3]) -> Result<AdjointIdentity> {
    check_len(f.len(), m.len())?;
    let geo = induced_geometry(f)?;
    let pair = |a: &[Vec3], b: &[Vec3]| -> f64 { a.iter().zip(b).zip(&geo.weights).map(|((x, y), w)| x.dot(y) * w).sum() };
    let (dp_h, adj) = match op {
        AdjointOperator::LaplacianPower(i) => (
            crate::variations::variation_laplacian_power(f, m, h, i)?,
            adjoint_laplacian_power(f, h, k, i)?,
        ),
        AdjointOperator::CurvatureWeighted(a) => {
            let dk = crate::variations::variation_mean_curvature(f, m)?;
            let dp: Vec<Vec3> = (0..f.len())
                .map(|j| h[j] * (2.0 * a * geo.trace_s[j].dot(&dk[j])))
                .collect();
            (dp, adjoint_ga(f, h, k, a)?)
        }
    };
    let lhs = pair(&dp_h, k);
    let rhs = pair(m, &adj);
    let scale = lhs.abs().max(rhs.abs());
    Ok(AdjointIdentity {
        lhs,
        rhs,
        discrepancy: if scale > 0.0 { (lhs - rhs).abs() / scale } else { 0.0 },
    })
}
