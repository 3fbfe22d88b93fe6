//! Seeded random trigonometric immersions and fields for the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ambient::Ambient;
use crate::error::Result;
use crate::geometry::Immersion;
use crate::Vec3;

/// Largest harmonic used by the samplers.
pub const MAX_DEGREE: usize = 5;
/// Coefficient range of the perturbations.
pub const AMPLITUDE: f64 = 0.3;
/// Minimum speed |f_θ| accepted for a random immersion.
pub const MIN_SPEED: f64 = 0.3;

/// Deterministic sampler of trigonometric curves and fields.
#[derive(Debug, Clone)]
pub struct Sampler {
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
struct TrigSeries {
    /// (degree k, cos coefficient, sin coefficient)
    modes: Vec<(usize, Vec3, Vec3)>,
}

impl TrigSeries {
    fn eval(&self, t: f64) -> Vec3 {
        self.modes
            .iter()
            .map(|(k, a, b)| a * (*k as f64 * t).cos() + b * (*k as f64 * t).sin())
            .sum()
    }

    fn derivative(&self, t: f64) -> Vec3 {
        self.modes
            .iter()
            .map(|(k, a, b)| {
                let k = *k as f64;
                (b * (k * t).cos() - a * (k * t).sin()) * k
            })
            .sum()
    }
}

impl Sampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn coefficient(&mut self, dims: usize, scale: f64) -> Vec3 {
        let mut v = Vec3::zeros();
        for d in 0..dims {
            v[d] = self.rng.gen_range(-scale..=scale);
        }
        v
    }

    fn series(&mut self, dims: usize, min_degree: usize, damping: impl Fn(usize) -> f64) -> TrigSeries {
        let degree = self.rng.gen_range(min_degree.max(1)..=MAX_DEGREE);
        let modes = (min_degree..=degree)
            .map(|k| {
                let s = AMPLITUDE * damping(k);
                (k, self.coefficient(dims, s), self.coefficient(dims, s))
            })
            .collect();
        TrigSeries { modes }
    }

    /// Perturbation of the unit circle (planar) or of a latitude circle of the
    /// sphere by a random trigonometric polynomial of degree ≤ 5. Mode k is
    /// damped by 1/k², and draws whose speed drops below `MIN_SPEED` are
    /// rejected.
    pub fn immersion(&mut self, ambient: Ambient, n: usize) -> Result<Immersion> {
        ambient.validate()?;
        loop {
            let pert = self.series(ambient.embedding_dim(), 1, |k| 1.0 / (k * k) as f64);
            let ok = (0..512).all(|i| {
                let t = i as f64 * std::f64::consts::TAU / 512.0;
                let base = Vec3::new(-t.sin(), t.cos(), 0.0);
                (base + pert.derivative(t)).norm() >= MIN_SPEED
            });
            if !ok {
                continue;
            }
            return match ambient {
                Ambient::Euclidean { .. } => Immersion::from_fn(ambient, n, |t| {
                    Vec3::new(t.cos(), t.sin(), 0.0) + pert.eval(t)
                }),
                Ambient::Sphere { radius } => Immersion::from_fn(ambient, n, |t| {
                    let p = Vec3::new(t.cos(), t.sin(), 0.4) + pert.eval(t) * 0.5;
                    p * (radius / p.norm())
                }),
            };
        }
    }

    /// Random trigonometric field of degree ≤ 5 along f, projected to TN.
    pub fn field(&mut self, f: &Immersion) -> Vec<Vec3> {
        let dims = f.ambient().embedding_dim();
        let s = self.series(dims, 0, |k| 1.0 / (1 + k) as f64);
        f.project_field(&f.grid().sample(|t| s.eval(t)))
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::induced_geometry;

    #[test]
    fn sampling_is_deterministic() {
        let a = Sampler::new(7).immersion(Ambient::plane(), 64).unwrap();
        let b = Sampler::new(7).immersion(Ambient::plane(), 64).unwrap();
        assert_eq!(a, b);
        let c = Sampler::new(8).immersion(Ambient::plane(), 64).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn samples_are_valid() {
        let mut s = Sampler::new(1);
        for amb in [Ambient::plane(), Ambient::Sphere { radius: 2.0 }] {
            for _ in 0..10 {
                let f = s.immersion(amb, 128).unwrap();
                let geo = induced_geometry(&f).unwrap();
                assert!(geo.sqrt_g.iter().all(|v| *v > 0.2));
                let h = s.field(&f);
                f.check_field(&h).unwrap();
            }
        }
    }
}
