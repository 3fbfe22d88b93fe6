//! Conserved quantities along geodesics, scale-invariance checks, and the
//! lower bounds on geodesic distance.
//!
//! Momenta are evaluated from the weighted momentum p_j = (M P f_t)_j, so the
//! linear momentum is Σ p_j, the angular momentum Σ f_j ∧ p_j and the
//! reparametrization momentum density ⟨p_j, f_θ,j⟩.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::geodesic::{sample_velocities, validate_raw, GeodesicPath, RawPath};
use crate::geometry::{split, Immersion};
use crate::metrics::{eval_metric, field_dot, MetricAt, MetricSpec, SobolevTerm, WeightFunction};
use crate::samples::Sampler;
use crate::Vec3;

/// Snapshot of the momenta at one time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConservedRecord {
    pub time: f64,
    /// G(f_t, f_t).
    pub energy: f64,
    /// Euclidean ambient only.
    pub linear_momentum: Option<Vec3>,
    /// Euclidean ambient only. For planar curves only the z component is
    /// nonzero and it is the scalar angular momentum.
    pub angular_momentum: Option<Vec3>,
    /// Nodal density ⟨p_j, f_θ,j⟩.
    pub reparam_momentum: Vec<f64>,
    /// Σ|p_j|, Σ|f_j||p_j| and max_j |p_j||f_θ,j|: magnitudes of the summands,
    /// used to normalize drifts of quantities that start at zero.
    pub scales: [f64; 3],
}

/// Record at the foot point of `metric` with velocity `ft` and weighted
/// momentum `p` = M P f_t.
pub(crate) fn record(metric: &MetricAt, ft: &[Vec3], p: &[Vec3], time: f64) -> ConservedRecord {
    let f = metric.immersion();
    let tangent = &metric.geometry().tangent;
    let flat = f.ambient().is_flat();
    let reparam: Vec<f64> = p.iter().zip(tangent).map(|(a, t)| a.dot(t)).collect();
    let lin_scale = p.iter().map(|a| a.norm()).sum();
    let ang_scale = p.iter().zip(f.nodes()).map(|(a, x)| a.norm() * x.norm()).sum();
    let rep_scale = p
        .iter()
        .zip(tangent)
        .map(|(a, t)| a.norm() * t.norm())
        .fold(0.0, f64::max);
    ConservedRecord {
        time,
        energy: field_dot(p, ft),
        linear_momentum: flat.then(|| p.iter().sum()),
        angular_momentum: flat.then(|| f.nodes().iter().zip(p).map(|(x, a)| x.cross(a)).sum()),
        reparam_momentum: reparam,
        scales: [lin_scale, ang_scale, rep_scale],
    }
}

/// Momenta of (f, f_t) for the given metric.
pub fn conserved_quantities(spec: &MetricSpec, f: &Immersion, ft: &[Vec3]) -> Result<ConservedRecord> {
    check_len(f.len(), ft.len())?;
    let metric = MetricAt::new(spec, f)?;
    let ft = f.project_field(ft);
    let p = metric.operator().apply_weighted(&ft);
    Ok(record(&metric, &ft, &p, 0.0))
}

/// Angular momentum Σ f_j ∧ p_j; refused on the sphere.
pub fn angular_momentum(spec: &MetricSpec, f: &Immersion, ft: &[Vec3]) -> Result<Vec3> {
    if !f.ambient().is_flat() {
        return Err(Error::Unsupported("angular momentum is only reported for a flat ambient".into()));
    }
    Ok(conserved_quantities(spec, f, ft)?.angular_momentum.unwrap_or_default())
}

/// Largest relative change of each conserved quantity along a path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DriftReport {
    pub energy: f64,
    pub linear_momentum: Option<f64>,
    pub angular_momentum: Option<f64>,
    pub reparam_momentum: f64,
}

impl DriftReport {
    /// Maximum over the reported quantities.
    pub fn max(&self) -> f64 {
        [Some(self.energy), self.linear_momentum, self.angular_momentum, Some(self.reparam_momentum)]
            .into_iter()
            .flatten()
            .fold(0.0, f64::max)
    }
}

const DRIFT_FLOOR: f64 = 1e-300;

/// max_t |Q(t) − Q(0)| / max(|Q(0)|, s), where s is the size of the summands
/// of Q at t = 0. The second term keeps quantities that start at zero (the
/// momenta of symmetric data) from dividing by rounding noise.
pub fn conservation_drift(path: &GeodesicPath) -> DriftReport {
    let recs = &path.diagnostics;
    let Some(r0) = recs.first() else {
        return DriftReport {
            energy: 0.0,
            linear_momentum: None,
            angular_momentum: None,
            reparam_momentum: 0.0,
        };
    };
    let rel = |d: f64, q0: f64, scale: f64| {
        let den = q0.max(scale).max(DRIFT_FLOOR);
        if d == 0.0 { 0.0 } else { d / den }
    };
    let energy = recs
        .iter()
        .map(|r| rel((r.energy - r0.energy).abs(), r0.energy.abs(), 0.0))
        .fold(0.0, f64::max);
    let vector_drift = |get: fn(&ConservedRecord) -> Option<Vec3>, scale: f64| {
        let q0 = get(r0)?;
        Some(
            recs.iter()
                .filter_map(|r| get(r).map(|q| rel((q - q0).norm(), q0.norm(), scale)))
                .fold(0.0, f64::max),
        )
    };
    let linear = vector_drift(|r| r.linear_momentum, r0.scales[0]);
    let angular = vector_drift(|r| r.angular_momentum, r0.scales[1]);
    let q0 = r0.reparam_momentum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let reparam = recs
        .iter()
        .map(|r| {
            let d = r
                .reparam_momentum
                .iter()
                .zip(&r0.reparam_momentum)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            rel(d, q0, r0.scales[2])
        })
        .fold(0.0, f64::max);
    DriftReport {
        energy,
        linear_momentum: linear,
        angular_momentum: angular,
        reparam_momentum: reparam,
    }
}

fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// ∫∫ |f_t^⊥| vol(g) dt: the area swept out by the path, trapezoid in time.
/// Velocities are taken from the path if present, otherwise differenced.
pub fn area_swept(path: &RawPath) -> Result<f64> {
    validate_raw(path)?;
    let vel = sample_velocities(path)?;
    let per_time = path
        .curves
        .iter()
        .zip(&vel)
        .map(|(f, v)| {
            let geo = crate::induced_geometry(f)?;
            let (_, perp) = split(&geo, v)?;
            Ok(perp.iter().zip(&geo.weights).map(|(p, w)| p.norm() * w).sum())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(&path.times, &per_time))
}

/// ∫ √G(f_t, f_t) dt, trapezoid in time.
pub fn path_length(spec: &MetricSpec, path: &RawPath) -> Result<f64> {
    validate_raw(path)?;
    let vel = sample_velocities(path)?;
    let speeds = path
        .curves
        .iter()
        .zip(&vel)
        .map(|(f, v)| Ok(MetricAt::new(spec, f)?.eval(v, v)?.max(0.0).sqrt()))
        .collect::<Result<Vec<f64>>>()?;
    Ok(trapezoid(&path.times, &speeds))
}

/// Conditions under which a metric induces non-vanishing distance:
/// ‖h‖_G ≥ C₁‖h‖_{H¹}, ≥ C₂√Vol‖h‖_{H⁰} or ≥ C₃‖h‖_{G^A}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BoundCondition {
    Sobolev = 1,
    VolumeWeighted = 2,
    Curvature = 3,
}

impl BoundCondition {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Self::Sobolev),
            2 => Ok(Self::VolumeWeighted),
            3 => Ok(Self::Curvature),
            _ => Err(Error::Domain(format!("condition must be 1, 2 or 3, got {i}"))),
        }
    }
}

/// Constant for which `spec` is known to satisfy `which`, if any.
///
/// | spec | condition | constant |
/// |------|-----------|----------|
/// | Conformal Φ = cV | 2 | √c |
/// | Sobolev with order-0 weight cV | 2 | √c |
/// | G^A | 3 | 1 |
/// | Sobolev with constant order-0 and order-1 weights c₀, c₁ | 1 | √min(c₀, c₁) |
pub fn known_constant(spec: &MetricSpec, which: BoundCondition) -> Option<f64> {
    let volume_weight = |phi: &WeightFunction| match phi {
        WeightFunction::Power { c, alpha } if *alpha == 1.0 => Some(c.sqrt()),
        _ => None,
    };
    let constant_weight = |terms: &[SobolevTerm], power: usize| {
        terms.iter().find(|t| t.power == power).and_then(|t| match t.phi {
            WeightFunction::Constant { c } => Some(c),
            _ => None,
        })
    };
    match (spec, which) {
        (MetricSpec::Conformal { phi }, BoundCondition::VolumeWeighted) => volume_weight(phi),
        (MetricSpec::WeightedSobolev { terms }, BoundCondition::VolumeWeighted) => {
            terms.iter().find(|t| t.power == 0).and_then(|t| volume_weight(&t.phi))
        }
        (MetricSpec::CurvatureWeighted { a }, BoundCondition::Curvature) if *a > 0.0 => Some(1.0),
        (MetricSpec::WeightedSobolev { terms }, BoundCondition::Sobolev) => {
            let c0 = constant_weight(terms, 0)?;
            let c1 = constant_weight(terms, 1)?;
            Some(c0.min(c1).sqrt())
        }
        _ => None,
    }
}

/// One inequality lhs ≥ rhs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundRow {
    fn new(name: &str, lhs: f64, rhs: f64) -> Self {
        let slack = 1e-12 * lhs.abs().max(rhs.abs()) + 1e-14;
        Self {
            name: name.into(),
            lhs,
            rhs,
            holds: lhs + slack >= rhs,
        }
    }

    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub condition: BoundCondition,
    pub constant: f64,
    pub rows: Vec<BoundRow>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

fn sqrt_vol(f: &Immersion) -> Result<f64> {
    Ok(crate::induced_geometry(f)?.vol.sqrt())
}

/// Checks the inequalities behind the distance bound along `path`.
///
/// Condition 2: Length ≥ C₂·area swept, and
/// |√Vol(f₁) − √Vol(f₀)| ≤ Length / (2√C₂).
/// Condition 3: Length ≥ C₃·area swept / max_t √Vol, and the same Lipschitz
/// estimate with C₃²·A in place of C₂.
/// Condition 1: a Rayleigh scan of G(h,h) / ‖h‖²_{H¹} over random and
/// oscillating fields at each sample, against C₁².
pub fn distance_bound_check(spec: &MetricSpec, path: &RawPath, which: BoundCondition) -> Result<BoundReport> {
    validate_raw(path)?;
    let constant = known_constant(spec, which)
        .ok_or_else(|| Error::Unsupported(format!("no known constant for condition {} with {spec:?}", which as u8)))?;
    let first = &path.curves[0];
    let last = &path.curves[path.curves.len() - 1];
    let mut rows = Vec::new();
    match which {
        BoundCondition::VolumeWeighted => {
            let length = path_length(spec, path)?;
            rows.push(BoundRow::new("length >= C2 * area_swept", length, constant * area_swept(path)?));
            let dv = (sqrt_vol(last)? - sqrt_vol(first)?).abs();
            rows.push(BoundRow::new(
                "length / (2 sqrt(C2)) >= |sqrt(Vol1) - sqrt(Vol0)|",
                length / (2.0 * constant.sqrt()),
                dv,
            ));
        }
        BoundCondition::Curvature => {
            let MetricSpec::CurvatureWeighted { a } = spec else { unreachable!() };
            let length = path_length(spec, path)?;
            let max_root = path.curves.iter().map(sqrt_vol).collect::<Result<Vec<_>>>()?;
            let max_root = max_root.into_iter().fold(0.0, f64::max);
            rows.push(BoundRow::new(
                "length >= C3 * area_swept / max sqrt(Vol)",
                length,
                constant * area_swept(path)? / max_root,
            ));
            let dv = (sqrt_vol(last)? - sqrt_vol(first)?).abs();
            rows.push(BoundRow::new(
                "length / (2 C3 sqrt(A)) >= |sqrt(Vol1) - sqrt(Vol0)|",
                length / (2.0 * constant * a.sqrt()),
                dv,
            ));
        }
        BoundCondition::Sobolev => {
            let mut sampler = Sampler::new(0x5eed);
            let mut worst = f64::INFINITY;
            for f in &path.curves {
                let metric = MetricAt::new(spec, f)?;
                let lap = metric.operator().laplacian();
                let mut probes: Vec<Vec<Vec3>> = (0..16).map(|_| sampler.field(f)).collect();
                let n = f.len();
                for k in [1, n / 4, n / 2] {
                    for d in 0..f.ambient().embedding_dim() {
                        let h = f.grid().sample(|t| {
                            let mut v = Vec3::zeros();
                            v[d] = (k as f64 * t).cos();
                            v
                        });
                        probes.push(f.project_field(&h));
                    }
                }
                for h in probes {
                    let mass: f64 = h.iter().zip(lap.weights()).map(|(v, w)| v.norm_squared() * w).sum();
                    let h1 = mass + field_dot(&h, &lap.stiffness(&h));
                    if h1 > 0.0 {
                        worst = worst.min(metric.eval(&h, &h)? / h1);
                    }
                }
            }
            rows.push(BoundRow::new("min G(h,h) / |h|_H1^2 >= C1^2", worst, constant * constant));
        }
    }
    Ok(BoundReport {
        condition: which,
        constant,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleReport {
    pub lambda: f64,
    pub base: f64,
    pub scaled: f64,
    /// scaled / base − 1.
    pub deviation: f64,
}

/// Compares G_{λf}(λh, λk) with G_f(h, k) for a scale-invariant spec.
pub fn scale_invariance_check(spec: &MetricSpec, f: &Immersion, h: &[Vec3], k: &[Vec3], lambda: f64) -> Result<ScaleReport> {
    if !f.ambient().is_flat() {
        return Err(Error::Unsupported("scale invariance needs a flat ambient".into()));
    }
    if !matches!(spec, MetricSpec::ScaleInvariantSobolev { .. }) {
        return Err(Error::Unsupported("scale invariance is only claimed for the scale-invariant Sobolev metric".into()));
    }
    let base = eval_metric(spec, f, h, k)?;
    let scale = |v: &[Vec3]| v.iter().map(|x| x * lambda).collect::<Vec<_>>();
    let scaled = eval_metric(spec, &f.scaled(lambda)?, &scale(h), &scale(k))?;
    Ok(ScaleReport {
        lambda,
        base,
        scaled,
        deviation: scaled / base - 1.0,
    })
}
