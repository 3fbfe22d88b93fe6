//! Weighted metrics G_f(h,k) = ∫ Σ Φ_i(Vol) ḡ(P_i h, k) vol(g) and their
//! derivatives with respect to the foot point.
//!
//! The discrete metric is G̃_f(h,k) = hᵀ (M P̃_f) k, where the tilde marks
//! that the ambient vectors h, k are projected to T_fN inside the operator.
//! Differentiating G̃ with h, k held fixed gives the covariant derivative
//! (∇_m G)(h,k), since the projected extension of a tangent vector is
//! parallel at the foot point. The H- and K-gradients below are the exact
//! gradients of this discrete form.

mod adjoint;

pub use adjoint::{
    adjoint_ga, adjoint_identity, adjoint_laplacian_power, adjoint_tangential, covariant_theta, h_gradient_formula,
    AdjointIdentity, AdjointOperator,
    k_gradient_formula,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{geometry_jvp, induced_geometry, Geometry, Immersion};
use crate::linalg::{local_gradient, SolverOptions};
use crate::operators::{Composition, OperatorHandle};
use crate::Vec3;

/// Positive weight Φ(V) of the total volume, with its exact derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum WeightFunction {
    Constant { c: f64 },
    Power { c: f64, alpha: f64 },
    Exponential { c: f64, beta: f64 },
}

impl WeightFunction {
    pub fn one() -> Self {
        WeightFunction::Constant { c: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, e) = match *self {
            WeightFunction::Constant { c } => (c, 0.0),
            WeightFunction::Power { c, alpha } => (c, alpha),
            WeightFunction::Exponential { c, beta } => (c, beta),
        };
        if !(c > 0.0 && c.is_finite()) || !e.is_finite() {
            return Err(Error::Spec(format!("weight function {self:?} is not positive")));
        }
        Ok(())
    }

    pub fn value(&self, v: f64) -> f64 {
        match *self {
            WeightFunction::Constant { c } => c,
            WeightFunction::Power { c, alpha } => c * v.powf(alpha),
            WeightFunction::Exponential { c, beta } => c * (beta * v).exp(),
        }
    }

    pub fn derivative(&self, v: f64) -> f64 {
        match *self {
            WeightFunction::Constant { .. } => 0.0,
            WeightFunction::Power { c, alpha } => {
                if alpha == 0.0 {
                    0.0
                } else {
                    c * alpha * v.powf(alpha - 1.0)
                }
            }
            WeightFunction::Exponential { c, beta } => c * beta * (beta * v).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevTerm {
    pub power: usize,
    pub phi: WeightFunction,
}

fn default_m() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricSpec {
    /// P = Φ(Vol)·Id.
    Conformal { phi: WeightFunction },
    /// P = 1 + A‖Tr^g S‖².
    CurvatureWeighted {
        #[serde(rename = "A")]
        a: f64,
    },
    /// P = Σ_{i ≤ p} Vol^{2(i−1)/m − 1} Δⁱ.
    ScaleInvariantSobolev {
        p: usize,
        #[serde(default = "default_m")]
        m: usize,
    },
    /// P = Σ Φ_i(Vol) Δ^{power_i}.
    WeightedSobolev { terms: Vec<SobolevTerm> },
}

/// One summand Φ(Vol)·Q of P.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Part {
    /// Δⁱ (the identity for i = 0).
    Power(usize),
    /// Multiplication by 1 + A‖Tr^g S‖².
    Curvature(f64),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Term {
    pub phi: f64,
    pub dphi: f64,
    pub part: Part,
}

impl MetricSpec {
    pub fn h0() -> Self {
        MetricSpec::Conformal {
            phi: WeightFunction::one(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MetricSpec::Conformal { phi } => phi.validate(),
            MetricSpec::CurvatureWeighted { a } => {
                if *a >= 0.0 && a.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Spec(format!("curvature weight A must be nonnegative, got {a}")))
                }
            }
            MetricSpec::ScaleInvariantSobolev { m, .. } => {
                if *m == 1 {
                    Ok(())
                } else {
                    Err(Error::Unsupported(format!(
                        "only curves (m = 1) are implemented, got m = {m}"
                    )))
                }
            }
            MetricSpec::WeightedSobolev { terms } => {
                for t in terms {
                    t.phi.validate()?;
                }
                if terms.iter().any(|t| t.power == 0) {
                    Ok(())
                } else {
                    Err(Error::Spec("weighted Sobolev metric needs a Δ⁰ term".into()))
                }
            }
        }
    }

    /// Whether P is a multiplication operator (no derivatives).
    pub fn is_order_zero(&self) -> bool {
        match self {
            MetricSpec::Conformal { .. } | MetricSpec::CurvatureWeighted { .. } => true,
            MetricSpec::ScaleInvariantSobolev { p, .. } => *p == 0,
            MetricSpec::WeightedSobolev { terms } => terms.iter().all(|t| t.power == 0),
        }
    }

    /// Exponent of Vol in front of Δⁱ for the scale-invariant family.
    pub fn scale_invariant_exponent(i: usize, m: usize) -> f64 {
        2.0 * (i as f64 - 1.0) / m as f64 - 1.0
    }

    pub(crate) fn terms(&self, vol: f64) -> Vec<Term> {
        match self {
            MetricSpec::Conformal { phi } => vec![Term {
                phi: phi.value(vol),
                dphi: phi.derivative(vol),
                part: Part::Power(0),
            }],
            MetricSpec::CurvatureWeighted { a } => vec![Term {
                phi: 1.0,
                dphi: 0.0,
                part: Part::Curvature(*a),
            }],
            MetricSpec::ScaleInvariantSobolev { p, m } => (0..=*p)
                .map(|i| {
                    let phi = WeightFunction::Power {
                        c: 1.0,
                        alpha: Self::scale_invariant_exponent(i, *m),
                    };
                    Term {
                        phi: phi.value(vol),
                        dphi: phi.derivative(vol),
                        part: Part::Power(i),
                    }
                })
                .collect(),
            MetricSpec::WeightedSobolev { terms } => terms
                .iter()
                .map(|t| Term {
                    phi: t.phi.value(vol),
                    dphi: t.phi.derivative(vol),
                    part: Part::Power(t.power),
                })
                .collect(),
        }
    }

    /// P at the immersion with the given geometry, as ψ·Id + Σ c_i Δⁱ.
    pub fn composition(&self, geo: &Geometry) -> Result<Composition> {
        self.validate()?;
        Ok(compose(&self.terms(geo.vol), geo))
    }
}

fn curvature_multiplier(a: f64, geo: &Geometry) -> Vec<f64> {
    geo.curvature_sq().iter().map(|k2| 1.0 + a * k2).collect()
}

fn compose(terms: &[Term], geo: &Geometry) -> Composition {
    let n = geo.len();
    let mut multiplier = vec![0.0; n];
    let mut powers: Vec<(usize, f64)> = Vec::new();
    for t in terms {
        match t.part {
            Part::Power(0) => multiplier.iter_mut().for_each(|v| *v += t.phi),
            Part::Power(i) => match powers.iter_mut().find(|(j, _)| *j == i) {
                Some((_, c)) => *c += t.phi,
                None => powers.push((i, t.phi)),
            },
            Part::Curvature(a) => {
                for (v, psi) in multiplier.iter_mut().zip(curvature_multiplier(a, geo)) {
                    *v += t.phi * psi;
                }
            }
        }
    }
    powers.sort_by_key(|(i, _)| *i);
    Composition { multiplier, powers }
}

pub(crate) fn field_dot(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

/// Metric data at a fixed immersion: geometry, assembled P, and the exact
/// derivatives of the discrete metric in the foot point.
#[derive(Debug, Clone)]
pub struct MetricAt {
    spec: MetricSpec,
    f: Immersion,
    geo: Geometry,
    terms: Vec<Term>,
    op: OperatorHandle,
}

/// Per-term data reused by the foot-point derivative of G̃(h,k).
struct FormData {
    /// Δ̃^l h and Δ̃^l k for l = 0..=i; l = 0 is the raw input.
    hs: Vec<Vec<Vec<Vec3>>>,
    ks: Vec<Vec<Vec<Vec3>>>,
    /// hᵀ M Q k for each term.
    values: Vec<f64>,
}

impl MetricAt {
    pub fn new(spec: &MetricSpec, f: &Immersion) -> Result<Self> {
        Self::with_options(spec, f, SolverOptions::default())
    }

    pub fn with_options(spec: &MetricSpec, f: &Immersion, options: SolverOptions) -> Result<Self> {
        spec.validate()?;
        let geo = induced_geometry(f)?;
        let terms = spec.terms(geo.vol);
        let comp = compose(&terms, &geo);
        let op = OperatorHandle::new(f, &geo, comp, options)?;
        Ok(Self {
            spec: spec.clone(),
            f: f.clone(),
            geo,
            terms,
            op,
        })
    }

    pub fn spec(&self) -> &MetricSpec {
        &self.spec
    }

    pub fn immersion(&self) -> &Immersion {
        &self.f
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geo
    }

    pub fn operator(&self) -> &OperatorHandle {
        &self.op
    }

    fn check(&self, h: &[Vec3]) -> Result<()> {
        check_len(self.f.len(), h.len())
    }

    /// G_f(h,k).
    pub fn eval(&self, h: &[Vec3], k: &[Vec3]) -> Result<f64> {
        self.check(h)?;
        self.check(k)?;
        Ok(field_dot(h, &self.op.apply_weighted(k)))
    }

    /// M Q h for a single summand (without its weight Φ).
    fn term_weighted(&self, part: Part, h: &[Vec3]) -> Vec<Vec3> {
        let lap = self.op.laplacian();
        let w = &self.geo.weights;
        match part {
            Part::Power(i) => {
                let y = lap.power(&lap.project(h), i);
                y.iter().zip(w).map(|(v, wj)| v * *wj).collect()
            }
            Part::Curvature(a) => {
                let psi = curvature_multiplier(a, &self.geo);
                lap.project(h)
                    .iter()
                    .zip(w)
                    .zip(&psi)
                    .map(|((v, wj), p)| v * (wj * p))
                    .collect()
            }
        }
    }

    /// P_i h for each summand, in order, without the weights.
    pub(crate) fn term_apply(&self, h: &[Vec3]) -> Vec<(Term, Vec<Vec3>)> {
        self.terms
            .iter()
            .map(|t| {
                let mq = self.term_weighted(t.part, h);
                let q = mq.iter().zip(&self.geo.weights).map(|(v, w)| v / *w).collect();
                (*t, q)
            })
            .collect()
    }

    fn form_data(&self, h: &[Vec3], k: &[Vec3]) -> FormData {
        let lap = self.op.laplacian();
        let mut data = FormData {
            hs: Vec::new(),
            ks: Vec::new(),
            values: Vec::new(),
        };
        for t in &self.terms {
            let depth = match t.part {
                Part::Power(i) => i,
                Part::Curvature(_) => 0,
            };
            let mut hs = vec![h.to_vec()];
            let mut ks = vec![k.to_vec()];
            for l in 1..=depth {
                hs.push(lap.apply(&hs[l - 1]));
                ks.push(lap.apply(&ks[l - 1]));
            }
            data.values.push(field_dot(h, &self.term_weighted(t.part, k)));
            data.hs.push(hs);
            data.ks.push(ks);
        }
        data
    }

    /// Nodal contributions to D_m G̃(h,k); entry j depends on nodes j−1..j+1.
    fn form_jvp(&self, data: &FormData, m: &[Vec3]) -> Vec<f64> {
        let n = self.f.len();
        let lap = self.op.laplacian();
        let amb = self.f.ambient();
        let nodes = self.f.nodes();
        let jvp = geometry_jvp(&self.f, &self.geo, m);
        let dw = &jvp.weights;
        let w = &self.geo.weights;
        let mut out = vec![0.0; n];
        for (ti, t) in self.terms.iter().enumerate() {
            let (hs, ks) = (&data.hs[ti], &data.ks[ti]);
            if t.dphi != 0.0 {
                for j in 0..n {
                    out[j] += t.dphi * data.values[ti] * dw[j];
                }
            }
            match t.part {
                Part::Power(0) | Part::Curvature(_) => {
                    let (a, kap) = match t.part {
                        Part::Curvature(a) => (a, Some(&self.geo.trace_s)),
                        _ => (0.0, None),
                    };
                    for j in 0..n {
                        let (rh, rk) = (&hs[0][j], &ks[0][j]);
                        let ph = amb.project_tangent(&nodes[j], rh);
                        let pk = amb.project_tangent(&nodes[j], rk);
                        let dph = amb.projection_derivative(&nodes[j], &m[j], rh);
                        let dpk = amb.projection_derivative(&nodes[j], &m[j], rk);
                        let hk = ph.dot(&pk);
                        let (psi, dpsi) = match kap {
                            Some(kap) => (1.0 + a * kap[j].norm_squared(), 2.0 * a * kap[j].dot(&jvp.trace_s[j])),
                            None => (1.0, 0.0),
                        };
                        let d = psi * w[j] * (dph.dot(&pk) + ph.dot(&dpk)) + hk * (psi * dw[j] + w[j] * dpsi);
                        out[j] += t.phi * d;
                    }
                }
                Part::Power(i) => {
                    for l in 0..i {
                        let dl = lap.stiffness_jvp(m, &ks[i - 1 - l]);
                        for j in 0..n {
                            out[j] += t.phi * hs[l][j].dot(&dl[j]);
                        }
                    }
                    for l in 1..i {
                        for j in 0..n {
                            out[j] -= t.phi * hs[l][j].dot(&ks[i - l][j]) * dw[j];
                        }
                    }
                }
            }
        }
        out
    }

    /// D_m G̃(h,k) = (∇_m G)(h,k).
    pub fn derivative(&self, m: &[Vec3], h: &[Vec3], k: &[Vec3]) -> Result<f64> {
        for v in [m, h, k] {
            self.check(v)?;
        }
        let data = self.form_data(h, k);
        Ok(self.form_jvp(&data, m).iter().sum())
    }

    /// Ambient gradient ∇_f G̃(h,k) (not projected).
    pub fn foot_gradient(&self, h: &[Vec3], k: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check(h)?;
        self.check(k)?;
        let data = self.form_data(h, k);
        let dims = self.f.ambient().embedding_dim();
        Ok(local_gradient(self.f.len(), dims, 1, |m| self.form_jvp(&data, m)))
    }

    /// D_m(M P̃) h, including the dependence of the weights on Vol and on the
    /// curvature.
    pub fn weighted_jvp(&self, m: &[Vec3], h: &[Vec3]) -> Result<Vec<Vec3>> {
        self.check(m)?;
        self.check(h)?;
        let mut out = self.op.weighted_jvp_fixed_coefficients(&self.f, &self.geo, m, h);
        let jvp = geometry_jvp(&self.f, &self.geo, m);
        let lap = self.op.laplacian();
        for t in &self.terms {
            if t.dphi != 0.0 {
                let s = t.dphi * jvp.vol;
                for (o, v) in out.iter_mut().zip(self.term_weighted(t.part, h)) {
                    *o += v * s;
                }
            }
            if let Part::Curvature(a) = t.part {
                let ph = lap.project(h);
                for j in 0..out.len() {
                    let dpsi = 2.0 * a * self.geo.trace_s[j].dot(&jvp.trace_s[j]);
                    out[j] += ph[j] * (t.phi * self.geo.weights[j] * dpsi);
                }
            }
        }
        Ok(out)
    }

    /// H_f(h,k): G(m, H(h,k)) = (∇_m G)(h,k) for all m.
    pub fn h_gradient(&self, h: &[Vec3], k: &[Vec3]) -> Result<Vec<Vec3>> {
        let grad = self.foot_gradient(h, k)?;
        self.op.solve_weighted(&grad)
    }

    /// K_f(h,m): G(K(h,m), k) = (∇_m G)(h,k) for all k.
    pub fn k_gradient(&self, h: &[Vec3], m: &[Vec3]) -> Result<Vec<Vec3>> {
        let rhs = self.weighted_jvp(m, h)?;
        self.op.solve_weighted(&rhs)
    }
}

/// G^P_f(h,k) for the given spec.
pub fn eval_metric(spec: &MetricSpec, f: &Immersion, h: &[Vec3], k: &[Vec3]) -> Result<f64> {
    f.check_field(h)?;
    f.check_field(k)?;
    MetricAt::new(spec, f)?.eval(h, k)
}

pub fn h_gradient(spec: &MetricSpec, f: &Immersion, h: &[Vec3], k: &[Vec3]) -> Result<Vec<Vec3>> {
    MetricAt::new(spec, f)?.h_gradient(h, k)
}

pub fn k_gradient(spec: &MetricSpec, f: &Immersion, h: &[Vec3], m: &[Vec3]) -> Result<Vec<Vec3>> {
    MetricAt::new(spec, f)?.k_gradient(h, m)
}
