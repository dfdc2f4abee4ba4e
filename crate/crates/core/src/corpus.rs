//! Seeded corpora of smooth, rapidly decaying test fields.
//!
//! Fields are stored as analytic descriptions so that the same member can be
//! sampled on grids of different resolution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{Field, Grid};

/// Identifier of the generator behind every corpus, recorded in run manifests.
pub const PRNG_ALGORITHM: &str = "ChaCha8Rng (rand_chacha 0.3), seed_from_u64";

/// `A exp(-|x - c|^2 / (2 sigma^2))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

impl GaussianBump {
    pub fn value(&self, x: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(&self.center).map(|(a, c)| (a - c) * (a - c)).sum();
        self.amplitude * (-0.5 * d2 / (self.width * self.width)).exp()
    }

    /// Value and gradient.
    pub fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.value(x);
        let s2 = self.width * self.width;
        for (a, g) in grad.iter_mut().enumerate() {
            *g = -v * (x[a] - self.center[a]) / s2;
        }
        v
    }
}

/// Sum of Gaussian bumps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarSample {
    pub bumps: Vec<GaussianBump>,
}

impl ScalarSample {
    pub fn sample(&self, grid: &Grid) -> Field {
        Field::scalar_from_fn(grid, |x| self.bumps.iter().map(|b| b.value(x)).sum())
    }

    /// Analytic gradient.
    pub fn sample_gradient(&self, grid: &Grid) -> Field {
        let n = grid.dim();
        Field::from_fn(grid, n, |x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut g = vec![0.0; n];
            for b in &self.bumps {
                b.value_grad(x, &mut g);
                out.iter_mut().zip(&g).for_each(|(o, gi)| *o += gi);
            }
        })
    }
}

/// `u_i = sum_j A_ij d_j psi` with `A` antisymmetric, hence divergence-free.
/// In three dimensions this is `curl(psi a)` for the axial vector of `A`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolenoidalSample {
    pub potentials: Vec<(GaussianBump, Vec<f64>)>,
}

impl SolenoidalSample {
    pub fn sample(&self, grid: &Grid) -> Field {
        let n = grid.dim();
        Field::from_fn(grid, n, |x, out| {
            out.iter_mut().for_each(|v| *v = 0.0);
            let mut g = vec![0.0; n];
            for (b, a) in &self.potentials {
                b.value_grad(x, &mut g);
                for i in 0..n {
                    for j in 0..n {
                        out[i] += a[i * n + j] * g[j];
                    }
                }
            }
        })
    }
}

/// Seeded generator of test fields.
#[derive(Clone, Debug)]
pub struct Corpus {
    rng: ChaCha8Rng,
    dim: usize,
}

impl Corpus {
    pub fn new(seed: u64, dim: usize) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
        }
    }

    fn bump(&mut self) -> GaussianBump {
        let center = (0..self.dim).map(|_| self.rng.gen_range(-1.0..1.0)).collect();
        let sign = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        GaussianBump {
            center,
            width: self.rng.gen_range(0.7..1.2),
            amplitude: sign * self.rng.gen_range(0.5..1.5),
        }
    }

    pub fn scalar(&mut self) -> ScalarSample {
        ScalarSample {
            bumps: vec![self.bump(), self.bump()],
        }
    }

    pub fn scalars(&mut self, count: usize) -> Vec<ScalarSample> {
        (0..count).map(|_| self.scalar()).collect()
    }

    pub fn solenoidal(&mut self) -> SolenoidalSample {
        let n = self.dim;
        let potentials = (0..2)
            .map(|_| {
                let b = self.bump();
                let mut a = vec![0.0; n * n];
                for i in 0..n {
                    for j in (i + 1)..n {
                        let v = self.rng.gen_range(-1.0..1.0);
                        a[i * n + j] = v;
                        a[j * n + i] = -v;
                    }
                }
                (b, a)
            })
            .collect();
        SolenoidalSample { potentials }
    }

    pub fn solenoidals(&mut self, count: usize) -> Vec<SolenoidalSample> {
        (0..count).map(|_| self.solenoidal()).collect()
    }

    /// Vector field with independent scalar components (generally not
    /// divergence-free).
    pub fn vector(&mut self, grid: &Grid) -> Field {
        let parts: Vec<Field> = (0..grid.dim()).map(|_| self.scalar().sample(grid)).collect();
        Field::stack(&parts).expect("same grid")
    }

    /// Independent uniform samples in `[-1, 1]`.
    pub fn noise(&mut self, grid: &Grid, components: usize) -> Field {
        let data = (0..components * grid.len())
            .map(|_| self.rng.gen_range(-1.0..1.0))
            .collect();
        Field::from_vec(grid, components, data).expect("sized")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_corpus() {
        let a = Corpus::new(7, 3).solenoidals(3);
        let b = Corpus::new(7, 3).solenoidals(3);
        assert_eq!(a, b);
        assert_ne!(a, Corpus::new(8, 3).solenoidals(3));
    }

    #[test]
    fn analytic_gradient_matches_spectral() {
        let grid = Grid::new(3, 64, 8.0).unwrap();
        let s = Corpus::new(1, 3).scalar();
        let f = s.sample(&grid);
        let g = s.sample_gradient(&grid);
        let gs = f.gradient().unwrap();
        let r = g.sub(&gs).unwrap().l2_norm() / g.l2_norm();
        assert!(r < 1e-6, "{r}");
    }

    #[test]
    fn solenoidal_samples_are_divergence_free() {
        let grid = Grid::new(3, 64, 8.0).unwrap();
        let u = Corpus::new(2, 3).solenoidal().sample(&grid);
        let div = u.divergence().unwrap();
        let r = div.l2_norm() / u.gradient_tensor().unwrap().l2_norm();
        assert!(r < 1e-6, "{r}");
    }
}
