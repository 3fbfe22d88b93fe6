//! First variations of the induced geometry and of the Laplacian.
//!
//! The `variation_*` functions are exact linearizations of the discrete
//! quantities, so they agree with central differences up to O(ε²). The
//! `formula_*` functions discretize the continuum formulas, split into the
//! normal part of f_t and the Lie derivative along its tangential part; they
//! agree with the exact ones up to O(N⁻²).

use serde::Serialize;

use crate::calculus::{centered, integrate};
use crate::error::{check_len, Error, Result};
use crate::geometry::{geometry_jvp, induced_geometry, split, Geometry, Immersion};
use crate::operators::Laplacian;
use crate::Vec3;

/// Lower bound on the denominator of relative errors.
pub const EPS_FLOOR: f64 = 1e-14;
/// Admissible finite-difference steps.
pub const EPS_RANGE: (f64, f64) = (1e-8, 1e-2);
/// Safety factor on the rounding-noise estimate ε_mach·‖Q‖·h^{-d}/ε of a
/// central difference, d the number of stacked grid differences in Q; below
/// this the order estimate is not meaningful.
pub const ROUNDING_FACTOR: f64 = 100.0;

fn prepare(f: &Immersion, ft: &[Vec3]) -> Result<Geometry> {
    check_len(f.len(), ft.len())?;
    induced_geometry(f)
}

/// (Dg, Dg⁻¹) nodewise.
pub fn variation_pullback_metric(f: &Immersion, ft: &[Vec3]) -> Result<(Vec<f64>, Vec<f64>)> {
    let geo = prepare(f, ft)?;
    let dg = geometry_jvp(f, &geo, ft).g;
    let dginv = dg.iter().zip(&geo.g).map(|(d, g)| -d / (g * g)).collect();
    Ok((dg, dginv))
}

/// (coefficient of D vol against dθ, DVol).
pub fn variation_volume(f: &Immersion, ft: &[Vec3]) -> Result<(Vec<f64>, f64)> {
    let geo = prepare(f, ft)?;
    let dsg = geometry_jvp(f, &geo, ft).sqrt_g;
    let dvol = integrate(f.grid(), &dsg)?;
    Ok((dsg, dvol))
}

/// ∇_{f_t} Tr^g S.
pub fn variation_mean_curvature(f: &Immersion, ft: &[Vec3]) -> Result<Vec<Vec3>> {
    let geo = prepare(f, ft)?;
    Ok(f.project_field(&geometry_jvp(f, &geo, ft).trace_s))
}

/// (∇_{f_t} Δ) h.
pub fn variation_laplacian(f: &Immersion, ft: &[Vec3], h: &[Vec3]) -> Result<Vec<Vec3>> {
    variation_laplacian_power(f, ft, h, 1)
}

/// (∇_{f_t} Δⁱ) h.
pub fn variation_laplacian_power(f: &Immersion, ft: &[Vec3], h: &[Vec3], i: usize) -> Result<Vec<Vec3>> {
    let geo = prepare(f, ft)?;
    check_len(f.len(), h.len())?;
    let lap = Laplacian::new(f, &geo)?;
    Ok(laplacian_power_jvp(f, &geo, &lap, ft, h, i))
}

/// Π d/dε (Δ̃ⁱ h) with Δ̃ = M⁻¹ Π K Π and h held fixed.
pub(crate) fn laplacian_power_jvp(
    f: &Immersion,
    geo: &Geometry,
    lap: &Laplacian,
    m: &[Vec3],
    h: &[Vec3],
    i: usize,
) -> Vec<Vec3> {
    let n = f.len();
    if i == 0 {
        let amb = f.ambient();
        let d: Vec<Vec3> = (0..n)
            .map(|j| amb.projection_derivative(&f.nodes()[j], &m[j], &h[j]))
            .collect();
        return f.project_field(&d);
    }
    let dw = geometry_jvp(f, geo, m).weights;
    let w = &geo.weights;
    let mut y = h.to_vec();
    let mut dy = vec![Vec3::zeros(); n];
    for r in 1..=i {
        let ly = lap.stiffness(&y);
        let mut d = lap.stiffness_jvp(m, &y);
        if r > 1 {
            for (a, b) in d.iter_mut().zip(lap.stiffness(&dy)) {
                *a += b;
            }
        }
        let ynext: Vec<Vec3> = ly.iter().zip(w).map(|(l, wj)| l / *wj).collect();
        dy = (0..n).map(|j| (d[j] - ynext[j] * dw[j]) / w[j]).collect();
        y = ynext;
    }
    f.project_field(&dy)
}

/// Continuum formula for (Dg, Dg⁻¹): −2ḡ(f_t^⊥, S) + L_{f_t^⊤} g, with
/// L_{a∂θ} g = a g_θ + 2 g a_θ.
pub fn formula_pullback_metric(f: &Immersion, ft: &[Vec3]) -> Result<(Vec<f64>, Vec<f64>)> {
    let geo = prepare(f, ft)?;
    let (a, perp) = split(&geo, ft)?;
    let gt = centered(f.grid(), &geo.g);
    let at = centered(f.grid(), &a);
    let dg: Vec<f64> = (0..f.len())
        .map(|j| -2.0 * perp[j].dot(&geo.s[j]) + a[j] * gt[j] + 2.0 * geo.g[j] * at[j])
        .collect();
    let dginv = dg.iter().zip(&geo.g).map(|(d, g)| -d / (g * g)).collect();
    Ok((dg, dginv))
}

/// Continuum formula for D vol = (div^g f_t^⊤ − ḡ(f_t^⊥, Tr^g S)) vol(g) and
/// DVol = −∫ ḡ(f_t^⊥, Tr^g S) vol(g).
pub fn formula_volume(f: &Immersion, ft: &[Vec3]) -> Result<(Vec<f64>, f64)> {
    let geo = prepare(f, ft)?;
    let (a, perp) = split(&geo, ft)?;
    let flux: Vec<f64> = a.iter().zip(&geo.sqrt_g).map(|(x, s)| x * s).collect();
    let div = centered(f.grid(), &flux);
    let normal: Vec<f64> = (0..f.len())
        .map(|j| perp[j].dot(&geo.trace_s[j]) * geo.sqrt_g[j])
        .collect();
    let density = div.iter().zip(&normal).map(|(d, n)| d - n).collect();
    let total = -integrate(f.grid(), &normal)?;
    Ok((density, total))
}

/// Continuum formula for ∇_{f_t} Tr^g S with f_t = a f_θ + n:
/// 2ḡ(n, Tr^g S) Tr^g S − Δn + K n + a ∇_θ Tr^g S.
/// Only the normal part is meaningful: the variation of the Levi-Civita
/// connection of g adds a tangential term that this form leaves out.
pub fn formula_mean_curvature(f: &Immersion, ft: &[Vec3]) -> Result<Vec<Vec3>> {
    let geo = prepare(f, ft)?;
    let (a, perp) = split(&geo, ft)?;
    let lap = Laplacian::new(f, &geo)?;
    let dn = lap.apply(&perp);
    let k = f.ambient().sectional_curvature();
    let kt = f.project_field(&centered(f.grid(), &geo.trace_s));
    let out = (0..f.len())
        .map(|j| {
            let kap = &geo.trace_s[j];
            kap * (2.0 * perp[j].dot(kap)) - dn[j] + perp[j] * k + kt[j] * a[j]
        })
        .collect();
    Ok(out)
}

/// Continuum formula for (∇_{f_t} Δ) h. With G = Dg and ∇ = ∇_θ,
///
///   G g⁻² ∇∇h − G g_θ g⁻³ ∇h + ½ G_θ g⁻² ∇h
///   − g^{-1/2} ∇(g^{-1/2} R(f_t, f_θ)h) − g⁻¹ R(f_t, f_θ)∇h.
pub fn formula_laplacian(f: &Immersion, ft: &[Vec3], h: &[Vec3]) -> Result<Vec<Vec3>> {
    let geo = prepare(f, ft)?;
    check_len(f.len(), h.len())?;
    let (dg, _) = formula_pullback_metric(f, ft)?;
    let grid = f.grid();
    let amb = f.ambient();
    let ht = f.project_field(&centered(grid, h));
    let htt = f.project_field(&centered(grid, &ht));
    let gt = centered(grid, &geo.g);
    let dgt = centered(grid, &dg);
    let n = f.len();
    let r: Vec<Vec3> = (0..n)
        .map(|j| amb.curvature_unchecked(&ft[j], &geo.tangent[j], &h[j]) / geo.sqrt_g[j])
        .collect();
    let rt = f.project_field(&centered(grid, &r));
    let out = (0..n)
        .map(|j| {
            let g = geo.g[j];
            let (gg, ggg) = (g * g, g * g * g);
            htt[j] * (dg[j] / gg) - ht[j] * (dg[j] * gt[j] / ggg)
                + ht[j] * (0.5 * dgt[j] / gg)
                - rt[j] / geo.sqrt_g[j]
                - amb.curvature_unchecked(&ft[j], &geo.tangent[j], &ht[j]) / g
        })
        .collect();
    Ok(out)
}

/// Quantity selector for the finite-difference harness.
#[derive(Debug, Clone)]
pub enum Quantity {
    Metric,
    InverseMetric,
    VolumeDensity,
    Volume,
    MeanCurvature,
    Laplacian(Vec<Vec3>),
    LaplacianPower(Vec<Vec3>, usize),
}

impl Quantity {
    pub fn name(&self) -> String {
        match self {
            Quantity::Metric => "g".into(),
            Quantity::InverseMetric => "g_inv".into(),
            Quantity::VolumeDensity => "vol".into(),
            Quantity::Volume => "Vol".into(),
            Quantity::MeanCurvature => "trace_S".into(),
            Quantity::Laplacian(_) => "laplacian".into(),
            Quantity::LaplacianPower(_, i) => format!("laplacian^{i}"),
        }
    }

    fn flatten(field: &[Vec3]) -> Vec<f64> {
        field.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    /// Value of the quantity at f (ambient-vector quantities are not yet
    /// projected).
    fn value(&self, f: &Immersion) -> Result<Vec<f64>> {
        let geo = induced_geometry(f)?;
        Ok(match self {
            Quantity::Metric => geo.g,
            Quantity::InverseMetric => geo.g.iter().map(|g| 1.0 / g).collect(),
            Quantity::VolumeDensity => geo.sqrt_g,
            Quantity::Volume => vec![geo.vol],
            Quantity::MeanCurvature => Self::flatten(&geo.trace_s),
            Quantity::Laplacian(h) | Quantity::LaplacianPower(h, _) => {
                let i = match self {
                    Quantity::LaplacianPower(_, i) => *i,
                    _ => 1,
                };
                let lap = Laplacian::new(f, &geo)?;
                Self::flatten(&lap.power(&f.project_field(h), i))
            }
        })
    }

    /// Exact variation at f in direction f_t.
    fn variation(&self, f: &Immersion, ft: &[Vec3]) -> Result<Vec<f64>> {
        Ok(match self {
            Quantity::Metric => variation_pullback_metric(f, ft)?.0,
            Quantity::InverseMetric => variation_pullback_metric(f, ft)?.1,
            Quantity::VolumeDensity => variation_volume(f, ft)?.0,
            Quantity::Volume => vec![variation_volume(f, ft)?.1],
            Quantity::MeanCurvature => Self::flatten(&variation_mean_curvature(f, ft)?),
            Quantity::Laplacian(h) => Self::flatten(&variation_laplacian(f, ft, h)?),
            Quantity::LaplacianPower(h, i) => Self::flatten(&variation_laplacian_power(f, ft, h, *i)?),
        })
    }

    /// Number of stacked grid differences in the evaluation. Rounding in
    /// the value is amplified by h^{-depth}.
    fn cancellation_depth(&self) -> i32 {
        match self {
            Quantity::Metric | Quantity::InverseMetric | Quantity::VolumeDensity | Quantity::Volume => 1,
            Quantity::MeanCurvature | Quantity::Laplacian(_) => 2,
            Quantity::LaplacianPower(_, i) => 2 * *i as i32,
        }
    }

    fn is_field(&self) -> bool {
        matches!(
            self,
            Quantity::MeanCurvature | Quantity::Laplacian(_) | Quantity::LaplacianPower(..)
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VariationReport {
    pub quantity: String,
    pub n: usize,
    pub eps: f64,
    pub analytic: Vec<f64>,
    pub fd: Vec<f64>,
    pub rel_error: f64,
    /// log₂ of the error ratio between ε and ε/2, when computed.
    pub order_estimate: Option<f64>,
    /// The error at ε/2 is within the rounding noise of the difference
    /// quotient, so the order estimate carries no information.
    pub rounding_limited: bool,
}

impl VariationReport {
    /// Passes the tolerance and, if an order was estimated, the order bound
    /// (rounding-limited estimates pass).
    pub fn passes(&self, tol: f64, min_order: f64) -> bool {
        let order_ok = match self.order_estimate {
            None => true,
            Some(o) => self.rounding_limited || o >= min_order,
        };
        self.rel_error <= tol && order_ok
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct FdOutcome {
    fd: Vec<f64>,
    abs_error: f64,
    value_norm: f64,
}

fn central_difference(q: &Quantity, f: &Immersion, ft: &[Vec3], eps: f64, analytic: &[f64]) -> Result<FdOutcome> {
    let plus = q.value(&f.perturbed(ft, eps)?)?;
    let minus = q.value(&f.perturbed(ft, -eps)?)?;
    let mut fd: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * eps)).collect();
    if q.is_field() {
        let field: Vec<Vec3> = fd.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
        fd = Quantity::flatten(&f.project_field(&field));
    }
    let abs_error = norm(&fd.iter().zip(analytic).map(|(a, b)| a - b).collect::<Vec<_>>());
    Ok(FdOutcome {
        fd,
        abs_error,
        value_norm: norm(&plus).max(norm(&minus)),
    })
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= EPS_RANGE.0 && eps <= EPS_RANGE.1 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "finite-difference step {eps} outside [{}, {}]",
            EPS_RANGE.0, EPS_RANGE.1
        )))
    }
}

/// Compare the exact variation with the central difference
/// (Q(f + ε f_t) − Q(f − ε f_t))/(2ε). Sphere perturbations are retracted.
pub fn fd_check(q: &Quantity, f: &Immersion, ft: &[Vec3], eps: f64) -> Result<VariationReport> {
    check_eps(eps)?;
    let analytic = q.variation(f, ft)?;
    let out = central_difference(q, f, ft, eps, &analytic)?;
    let denom = norm(&analytic).max(EPS_FLOOR);
    Ok(VariationReport {
        quantity: q.name(),
        n: f.len(),
        eps,
        rel_error: out.abs_error / denom,
        analytic,
        fd: out.fd,
        order_estimate: None,
        rounding_limited: false,
    })
}

/// As `fd_check`, plus an order estimate from the steps ε and ε/2.
pub fn fd_order_check(q: &Quantity, f: &Immersion, ft: &[Vec3], eps: f64) -> Result<VariationReport> {
    let mut report = fd_check(q, f, ft, eps)?;
    check_eps(eps / 2.0)?;
    let half = central_difference(q, f, ft, eps / 2.0, &report.analytic)?;
    let coarse = report.rel_error * norm(&report.analytic).max(EPS_FLOOR);
    let amplification = f.grid().spacing().powi(-q.cancellation_depth());
    let noise = ROUNDING_FACTOR * f64::EPSILON * half.value_norm * amplification / (eps / 2.0);
    report.rounding_limited = half.abs_error <= noise;
    report.order_estimate = Some(if half.abs_error > 0.0 && coarse > 0.0 {
        (coarse / half.abs_error).log2()
    } else {
        f64::INFINITY
    });
    Ok(report)
}
