//! Heat kernel, heat and Stokes semigroups on the periodic cube, the Leray
//! projection, fractional integrals and the two-weight decay harness.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{fft_nd, weighted_norm, weighted_norm_of, Field, Grid, Mode, SpectralField};
use crate::weights::{unit_sphere_area, RadialWeight};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelParams {
    pub n: usize,
    pub t: f64,
}

impl HeatKernelParams {
    pub fn new(n: usize, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param("t", t, "heat kernel time must be positive"));
        }
        if n == 0 {
            return Err(Error::param("n", 0.0, "dimension must be positive"));
        }
        Ok(Self { n, t })
    }
}

/// `(4 pi t)^(-n/2) exp(-|x|^2 / (4t))`.
pub fn heat_kernel(params: &HeatKernelParams, x: &[f64]) -> f64 {
    let r2: f64 = x.iter().map(|v| v * v).sum();
    heat_kernel_sq(params, r2)
}

fn heat_kernel_sq(params: &HeatKernelParams, r2: f64) -> f64 {
    let t = params.t;
    (4.0 * std::f64::consts::PI * t).powf(-0.5 * params.n as f64) * (-r2 / (4.0 * t)).exp()
}

/// The heat kernel sampled on a grid (dimension taken from the grid).
pub fn heat_kernel_field(grid: &Grid, t: f64) -> Result<Field> {
    let params = HeatKernelParams::new(grid.dim(), t)?;
    Ok(Field::scalar_from_fn(grid, |x| heat_kernel(&params, x)))
}

fn check_time(t: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { t >= 0.0 } else { t > 0.0 };
    if !(ok && t.is_finite()) {
        let reason = if allow_zero {
            "time must be non-negative"
        } else {
            "time must be positive"
        };
        return Err(Error::param("t", t, reason));
    }
    Ok(())
}

/// Multiplier `exp(-t |xi|^2)` applied to every component.
pub fn heat_apply(u0: &Field, t: f64) -> Result<Field> {
    check_time(t, true)?;
    if t == 0.0 {
        u0.check_finite()?;
        return Ok(u0.clone());
    }
    let mut spec = u0.to_spectral()?;
    spec.apply_real_multiplier(|m| (-t * m.k_sq).exp());
    Ok(spec.to_physical())
}

/// In-place Leray projection of a vector spectrum. Uses the derivative
/// wavenumbers, so the spectral divergence of the result vanishes exactly;
/// bins with `xi_d = 0` (the zero mode in particular) are sent to zero.
pub(crate) fn leray_spectral(spec: &mut SpectralField) {
    let grid = spec.grid().clone();
    let n = grid.dim();
    let len = grid.len();
    let data = spec.data_mut();
    let mut planes: Vec<&mut [Complex64]> = data.chunks_mut(len).collect();
    // Gather per-point, project, scatter back; chunked over points.
    let mut tmp = vec![Complex64::new(0.0, 0.0); n * len];
    for (c, plane) in planes.iter().enumerate() {
        for (p, v) in plane.iter().enumerate() {
            tmp[p * n + c] = *v;
        }
    }
    exec::for_each_chunk_mut(&mut tmp, n * exec::CHUNK, |ci, chunk| {
        let off = ci * exec::CHUNK;
        for (k, v) in chunk.chunks_mut(n).enumerate() {
            let m = grid.mode_info(off + k);
            project_point(&m, v);
        }
    });
    for (c, plane) in planes.iter_mut().enumerate() {
        for (p, v) in plane.iter_mut().enumerate() {
            *v = tmp[p * n + c];
        }
    }
}

fn project_point(m: &Mode, v: &mut [Complex64]) {
    if m.kd_sq == 0.0 {
        v.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
        return;
    }
    let dot: Complex64 = v.iter().enumerate().map(|(d, z)| z * m.xi_d[d]).sum();
    let s = dot / m.kd_sq;
    for (d, z) in v.iter_mut().enumerate() {
        *z -= s * m.xi_d[d];
    }
}

/// Helmholtz-Leray projection onto divergence-free, mean-zero fields.
pub fn leray_project(v: &Field) -> Result<Field> {
    v.require_vector()?;
    let mut spec = v.to_spectral()?;
    leray_spectral(&mut spec);
    Ok(spec.to_physical())
}

/// `exp(t Delta) P u0`.
pub fn stokes_apply(u0: &Field, t: f64) -> Result<Field> {
    check_time(t, true)?;
    u0.require_vector()?;
    let mut spec = u0.to_spectral()?;
    leray_spectral(&mut spec);
    if t > 0.0 {
        spec.apply_real_multiplier(|m| (-t * m.k_sq).exp());
    }
    Ok(spec.to_physical())
}

/// `d_j exp(t Delta) u0`, the multiplier `i xi_j exp(-t |xi|^2)`, applied to
/// every component.
pub fn semigroup_gradient_apply(u0: &Field, t: f64, j: usize) -> Result<Field> {
    check_time(t, false)?;
    if j >= u0.grid().dim() {
        return Err(Error::param("j", j as f64, "derivative index exceeds the dimension"));
    }
    let mut spec = u0.to_spectral()?;
    spec.apply_multiplier(|m| Complex64::new(0.0, m.xi_d[j] * (-t * m.k_sq).exp()));
    Ok(spec.to_physical())
}

/// Riesz potential `int f(x - y) |y|^(lambda - n) dy`, `0 < lambda < n`.
///
/// The grid sum is the non-periodic discrete convolution, evaluated by FFT
/// on a zero-padded grid of twice the size. The cell at `y = 0` carries the
/// exact integral of `|y|^(lambda - n)` over the ball of equal volume.
pub fn fractional_integral(f: &Field, lambda: f64) -> Result<Field> {
    f.check_finite()?;
    f.require_scalar()?;
    let grid = f.grid();
    let n = grid.dim();
    let nf = n as f64;
    if !(lambda > 0.0 && lambda < nf) {
        return Err(Error::param("lambda", lambda, format!("order must lie in (0, {n})")));
    }
    let points = grid.points();
    let h = grid.spacing();
    let cell = grid.cell_volume();
    let padded = Grid::new(n, 2 * points, 2.0 * grid.half_extent())?;
    let plen = padded.len();
    let big = 2 * points;

    let rho = (cell * nf / unit_sphere_area(n)).powf(1.0 / nf);
    let singular = unit_sphere_area(n) * rho.powf(lambda) / lambda / cell;
    let mut kernel = vec![Complex64::new(0.0, 0.0); plen];
    exec::for_each_chunk_mut(&mut kernel, exec::CHUNK, |ci, chunk| {
        let mut idx = [0usize; crate::grid::MAX_DIM];
        for (k, v) in chunk.iter_mut().enumerate() {
            padded.unflatten(ci * exec::CHUNK + k, &mut idx);
            let r2: f64 = idx[..n]
                .iter()
                .map(|&i| {
                    let off = if i < points { i as f64 } else { i as f64 - big as f64 };
                    (off * h).powi(2)
                })
                .sum();
            let val = if r2 == 0.0 {
                singular
            } else {
                r2.powf(0.5 * (lambda - nf))
            };
            *v = Complex64::new(val * cell, 0.0);
        }
    });

    let mut src = vec![Complex64::new(0.0, 0.0); plen];
    let mut idx = [0usize; crate::grid::MAX_DIM];
    for (p, &v) in f.component(0).iter().enumerate() {
        grid.unflatten(p, &mut idx);
        src[padded.flat(&idx[..n])] = Complex64::new(v, 0.0);
    }
    fft_nd(&padded, &mut kernel, false);
    fft_nd(&padded, &mut src, false);
    src.iter_mut().zip(&kernel).for_each(|(a, b)| *a *= b);
    fft_nd(&padded, &mut src, true);

    let mut out = vec![0.0; grid.len()];
    for (p, o) in out.iter_mut().enumerate() {
        grid.unflatten(p, &mut idx);
        *o = src[padded.flat(&idx[..n])].re;
    }
    Field::from_vec(grid, 1, out)
}

/// Smallest constant with `E_t(x) <= C |x|^(lambda - n) t^(-lambda/2)` for
/// all `x` and `t`.
pub fn kernel_domination_constant(n: usize, lambda: f64) -> f64 {
    let m = n as f64 - lambda;
    (4.0 * std::f64::consts::PI).powf(-0.5 * n as f64) * (2.0 * m).powf(0.5 * m) * (-0.5 * m).exp()
}

/// `||grad v||_{L^q_s} / ||(-Delta)^(1/2) v||_{L^q_s}`, with `(-Delta)^(1/2)`
/// the multiplier `|xi|` (derivative wavenumbers, so the ratio is exactly 1
/// at `q = 2`, `s = 0`).
pub fn riesz_gradient_check(v: &Field, q: f64, s: f64) -> Result<f64> {
    let weight = RadialWeight::bracket(s)?;
    let spec = v.to_spectral()?;
    let grad = spec.gradient_tensor().to_physical();
    let mut half = spec;
    half.apply_real_multiplier(|m| m.kd_sq.sqrt());
    let half = half.to_physical();
    let den = crate::grid::integrate(&half, q, Some(&weight))?;
    if den < 1e-14 {
        return Err(Error::Degenerate(format!(
            "||(-Delta)^(1/2) v|| = {den:e} is below 1e-14 (constant field)"
        )));
    }
    Ok(crate::grid::integrate(&grad, q, Some(&weight))? / den)
}

// ---------------------------------------------------------------------------
// Decay harness

/// Exponents of one two-weight estimate: `L^p_s -> L^q_{s0}` for
/// derivatives of order `order`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayParams {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub s0: f64,
    pub order: usize,
}

impl DecayParams {
    pub fn new(p: f64, q: f64, s: f64, s0: f64, order: usize) -> Result<Self> {
        let out = Self { p, q, s, s0, order };
        out.validate(3)?;
        Ok(out)
    }

    fn validate(&self, n: usize) -> Result<()> {
        let nf = n as f64;
        if !(self.p > 1.0 && self.p <= self.q && self.q.is_finite()) {
            return Err(Error::param("p", self.p, "need 1 < p <= q < inf"));
        }
        if !(self.s0 > -nf / self.q) {
            return Err(Error::param(
                "s0",
                self.s0,
                format!("need s0 > -n/q = {}", -nf / self.q),
            ));
        }
        if !(self.s0 <= self.s) {
            return Err(Error::param("s", self.s, "need s0 <= s"));
        }
        let upper = nf * (1.0 - 1.0 / self.p);
        if !(self.s < upper) {
            return Err(Error::param("s", self.s, format!("need s < n(1 - 1/p) = {upper}")));
        }
        if self.order > 2 {
            return Err(Error::param(
                "order",
                self.order as f64,
                "derivative order must be 0, 1 or 2",
            ));
        }
        Ok(())
    }

    /// `(a, b)` with predicted rate `t^(-a) (1 + t)^(-b)`.
    pub fn rate_exponents(&self, n: usize) -> (f64, f64) {
        let a = 0.5 * n as f64 * (1.0 / self.p - 1.0 / self.q) + 0.5 * self.order as f64;
        (a, 0.5 * (self.s - self.s0))
    }

    /// Large-time exponent of the predicted rate (negative).
    pub fn predicted_exponent(&self, n: usize) -> f64 {
        let (a, b) = self.rate_exponents(n);
        -(a + b)
    }

    pub fn rate(&self, n: usize, t: f64) -> f64 {
        let (a, b) = self.rate_exponents(n);
        t.powf(-a) * (1.0 + t).powf(-b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecaySeries {
    pub params: DecayParams,
    pub t: Vec<f64>,
    pub values: Vec<f64>,
}

impl DecaySeries {
    pub fn new(params: DecayParams, t: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if t.len() != values.len() || t.is_empty() {
            return Err(Error::Shape(
                "times and values must be non-empty and equally long".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) || !(t[0] > 0.0) {
            return Err(Error::Degenerate(
                "times must be positive and strictly increasing".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::param("value", *v, "decay series values must be positive"));
        }
        Ok(Self { params, t, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares line through `(ln t, ln v)` for the samples with `t >= 1`.
pub fn fit_exponent(t: &[f64], values: &[f64]) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= 1.0)
        .map(|(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Degenerate("need at least two samples with t >= 1".into()));
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("all fit times coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(ExponentFit { slope, intercept, r2 })
}

#[derive(Clone, Debug, Serialize)]
pub struct DecayReport {
    pub series: DecaySeries,
    pub fit: ExponentFit,
    pub envelope: Vec<f64>,
    pub ratios: Vec<f64>,
    /// Max of `value / envelope`, the envelope scaled to touch the series at
    /// the smallest time.
    pub bound_compliance: f64,
    pub predicted_exponent: f64,
}

impl DecayReport {
    /// Build the envelope, ratios and fit for a measured series.
    pub fn from_series(series: DecaySeries, n: usize) -> Result<Self> {
        let p = series.params;
        let t0 = series.t[0];
        let scale = series.values[0] / p.rate(n, t0);
        let envelope: Vec<f64> = series.t.iter().map(|&t| scale * p.rate(n, t)).collect();
        let ratios: Vec<f64> = series.values.iter().zip(&envelope).map(|(v, e)| v / e).collect();
        let bound_compliance = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let fit = fit_exponent(&series.t, &series.values)?;
        Ok(Self {
            predicted_exponent: p.predicted_exponent(n),
            series,
            fit,
            envelope,
            ratios,
            bound_compliance,
        })
    }

    /// CSV with columns `t,norm,predicted_envelope,ratio`, followed by a
    /// `# {json}` line holding the fit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,norm,predicted_envelope,ratio\r\n");
        for i in 0..self.series.t.len() {
            let _ = write!(
                out,
                "{:e},{:e},{:e},{:e}\r\n",
                self.series.t[i], self.series.values[i], self.envelope[i], self.ratios[i]
            );
        }
        let footer = serde_json::json!({
            "slope": self.fit.slope,
            "intercept": self.fit.intercept,
            "r2": self.fit.r2,
            "predicted_exponent": self.predicted_exponent,
            "bound_compliance": self.bound_compliance,
        });
        let _ = write!(out, "# {footer}\r\n");
        out
    }
}

/// `t = 2^(k/2)` from 1 up to `t_max` inclusive (when it lies on the ladder).
pub fn default_t_ladder(t_max: f64) -> Vec<f64> {
    (0..)
        .map(|k| 2f64.powf(0.5 * k as f64))
        .take_while(|t| *t <= t_max * (1.0 + 1e-12))
        .collect()
}

/// Relative share of the `L^p_s` norm carried outside the central half of
/// the cube; the torus truncation is trusted when it is below 2%.
pub fn tail_fraction(u: &Field, p: f64, s: f64) -> Result<f64> {
    let grid = u.grid();
    let weight = RadialWeight::bracket(s)?;
    let full = weighted_norm(u, p, Some(&weight));
    let half = 0.5 * grid.half_extent();
    let dim = grid.dim();
    let mut mags = u.magnitudes();
    let mut x = [0.0; crate::grid::MAX_DIM];
    for (k, m) in mags.iter_mut().enumerate() {
        grid.point(k, &mut x);
        if x[..dim].iter().any(|v| v.abs() >= half) {
            *m = 0.0;
        }
    }
    let inner = weighted_norm_of(grid, &mags, p, Some(&weight));
    if full == 0.0 {
        return Err(Error::Degenerate("initial field vanishes".into()));
    }
    Ok(1.0 - inner / full)
}

/// Measure `||grad^order exp(t Delta) P u0||_{L^q_{s0}}` along a time ladder
/// and compare it with the predicted rate
/// `t^(-(n/2)(1/p - 1/q) - order/2) (1 + t)^(-(s - s0)/2)`.
pub fn decay_harness(u0: &Field, params: &DecayParams, t_ladder: &[f64]) -> Result<DecayReport> {
    u0.require_vector()?;
    let grid = u0.grid();
    let n = grid.dim();
    params.validate(n)?;
    let tail = tail_fraction(u0, params.p, params.s)?;
    if tail > 0.02 {
        return Err(Error::param(
            "u0",
            tail,
            "initial field is not resolved by the cube: over 2% of its L^p_s norm lies in the outer half",
        ));
    }
    let weight = RadialWeight::bracket(params.s0)?;
    let mut base = u0.to_spectral()?;
    leray_spectral(&mut base);
    for _ in 0..params.order {
        base = base.gradient_tensor();
    }
    let mut values = Vec::with_capacity(t_ladder.len());
    for &t in t_ladder {
        check_time(t, false)?;
        let mut spec = base.clone();
        spec.apply_real_multiplier(|m| (-t * m.k_sq).exp());
        values.push(weighted_norm(&spec.to_physical(), params.q, Some(&weight)));
    }
    let series = DecaySeries::new(*params, t_ladder.to_vec(), values)?;
    DecayReport::from_series(series, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn kernel_point_values() {
        let p = HeatKernelParams::new(3, 1.0 / (4.0 * PI)).unwrap();
        assert!((heat_kernel(&p, &[0.0; 3]) - 1.0).abs() < 1e-15);
        let t = 0.7;
        let p = HeatKernelParams::new(3, t).unwrap();
        let r = (4.0 * t).sqrt();
        let want = (4.0 * PI * t).powf(-1.5) * (-1.0f64).exp();
        assert!((heat_kernel(&p, &[r, 0.0, 0.0]) / want - 1.0).abs() < 1e-14);
        assert!(HeatKernelParams::new(3, 0.0).is_err());
        assert!(HeatKernelParams::new(3, -1.0).is_err());
    }

    #[test]
    fn kernel_has_unit_mass() {
        for t in [0.25f64, 1.0] {
            let grid = Grid::new(3, 64, 10.0 * t.sqrt()).unwrap();
            let e = heat_kernel_field(&grid, t).unwrap();
            let m = crate::grid::integral(&e);
            assert!((m - 1.0).abs() < 1e-10, "t = {t}: {m}");
        }
    }

    #[test]
    fn heat_zero_time_is_identity_and_negative_rejected() {
        let grid = Grid::new(3, 8, 2.0).unwrap();
        let u = Field::scalar_from_fn(&grid, |x| x[0].sin());
        assert_eq!(heat_apply(&u, 0.0).unwrap(), u);
        assert!(heat_apply(&u, -0.1).is_err());
        assert!(stokes_apply(&Field::zeros(&grid, 3), -1.0).is_err());
        assert!(semigroup_gradient_apply(&u, 0.0, 0).is_err());
    }

    #[test]
    fn gaussian_flows_to_gaussian() {
        let grid = Grid::new(3, 64, 12.0).unwrap();
        let u0 = heat_kernel_field(&grid, 0.5).unwrap();
        let got = heat_apply(&u0, 1.0).unwrap();
        let want = heat_kernel_field(&grid, 1.5).unwrap();
        assert!(got.sub(&want).unwrap().max_abs() < 1e-8 * want.max_abs());
    }

    #[test]
    fn single_mode_factor() {
        let grid = Grid::new(3, 16, PI).unwrap();
        // cos(2 x1 + x2) has |xi|^2 = 5.
        let u = Field::scalar_from_fn(&grid, |x| (2.0 * x[0] + x[1]).cos());
        let out = heat_apply(&u, 0.3).unwrap();
        let want = u.scaled((-0.3f64 * 5.0).exp());
        assert!(out.sub(&want).unwrap().max_abs() < 1e-13);
        let g = semigroup_gradient_apply(&u, 0.3, 0).unwrap();
        let want = Field::scalar_from_fn(&grid, |x| -2.0 * (2.0 * x[0] + x[1]).sin() * (-1.5f64).exp());
        assert!(g.sub(&want).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn semigroup_law() {
        let grid = Grid::new(3, 32, 8.0).unwrap();
        let u = crate::corpus::Corpus::new(3, 3).vector(&grid);
        for a in [0.1, 0.5, 1.0] {
            for b in [0.1, 0.5, 1.0] {
                let one = heat_apply(&u, a + b).unwrap();
                let two = heat_apply(&heat_apply(&u, a).unwrap(), b).unwrap();
                assert!(one.sub(&two).unwrap().l2_norm() <= 1e-10 * one.l2_norm());
            }
        }
    }

    #[test]
    fn mass_is_conserved() {
        let grid = Grid::new(3, 16, 4.0).unwrap();
        let u = crate::corpus::Corpus::new(5, 3).noise(&grid, 1);
        let m0 = u.means()[0];
        let m1 = heat_apply(&u, 2.0).unwrap().means()[0];
        assert!((m0 - m1).abs() < 1e-15);
    }

    #[test]
    fn leray_examples() {
        let grid = Grid::new(3, 16, PI).unwrap();
        let g = Field::scalar_from_fn(&grid, |x| (x[0] - 2.0 * x[2]).sin() + (3.0 * x[1]).cos());
        let grad = g.gradient().unwrap();
        assert!(leray_project(&grad).unwrap().l2_norm() <= 1e-12 * grad.l2_norm());

        // e1 * cos(x3) is divergence-free.
        let v = Field::from_fn(&grid, 3, |x, o| {
            o[0] = x[2].cos();
            o[1] = 0.0;
            o[2] = 0.0;
        });
        assert!(leray_project(&v).unwrap().sub(&v).unwrap().max_abs() < 1e-13);

        // (sin x2, sin x1 + cos x3, 0): solenoidal mix.
        let w = Field::from_fn(&grid, 3, |x, o| {
            o[0] = x[1].sin();
            o[1] = x[0].sin() + x[2].cos();
            o[2] = 0.0;
        });
        assert!(leray_project(&w).unwrap().sub(&w).unwrap().max_abs() < 1e-13);
    }

    #[test]
    fn stokes_is_heat_on_solenoidal() {
        let grid = Grid::new(3, 32, 8.0).unwrap();
        let u = crate::corpus::Corpus::new(4, 3).solenoidal().sample(&grid);
        let u = leray_project(&u).unwrap();
        let a = stokes_apply(&u, 0.7).unwrap();
        let b = heat_apply(&u, 0.7).unwrap();
        assert!(a.sub(&b).unwrap().max_abs() <= 1e-12 * b.max_abs());
    }

    #[test]
    fn fractional_integral_of_gaussian_at_origin() {
        let grid = Grid::new(3, 64, 3.5).unwrap();
        let f = Field::scalar_from_fn(&grid, |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp());
        let i = fractional_integral(&f, 2.0).unwrap();
        let v = i.component(0)[grid.origin_index()];
        assert!((v / (2.0 * PI) - 1.0).abs() < 1e-3, "{v}");
        assert!(fractional_integral(&f, 0.0).is_err());
        assert!(fractional_integral(&f, 3.0).is_err());
    }

    #[test]
    fn fractional_integral_matches_direct_sum() {
        let grid = Grid::new(3, 8, 2.0).unwrap();
        let f = crate::corpus::Corpus::new(9, 3).noise(&grid, 1);
        let lambda = 1.3;
        let fast = fractional_integral(&f, lambda).unwrap();
        let cell = grid.cell_volume();
        let rho = (cell * 3.0 / (4.0 * PI)).cbrt();
        let singular = 4.0 * PI * rho.powf(lambda) / lambda / cell;
        let mut xi = [0.0; 3];
        let mut yj = [0.0; 3];
        for i in 0..grid.len() {
            grid.point(i, &mut xi);
            let mut acc = 0.0;
            for j in 0..grid.len() {
                grid.point(j, &mut yj);
                let r2: f64 = (0..3).map(|d| (xi[d] - yj[d]).powi(2)).sum();
                let k = if i == j {
                    singular
                } else {
                    r2.powf(0.5 * (lambda - 3.0))
                };
                acc += f.component(0)[j] * k * cell;
            }
            assert!((fast.component(0)[i] - acc).abs() < 1e-11 * (1.0 + acc.abs()), "{i}");
        }
    }

    #[test]
    fn riesz_ratio_is_one_in_l2() {
        let grid = Grid::new(3, 32, 8.0).unwrap();
        let v = crate::corpus::Corpus::new(11, 3).vector(&grid);
        let r = riesz_gradient_check(&v, 2.0, 0.0).unwrap();
        assert!((r - 1.0).abs() < 1e-10, "{r}");
        let c = Field::from_fn(&grid, 3, |_, o| o.iter_mut().for_each(|v| *v = 1.5));
        assert!(matches!(riesz_gradient_check(&c, 2.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn exact_power_law_fit() {
        let t: Vec<f64> = default_t_ladder(64.0);
        let v: Vec<f64> = t.iter().map(|t| 1.0 / t).collect();
        let fit = fit_exponent(&t, &v).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decay_params_validation() {
        assert!(DecayParams::new(2.0, 2.0, 1.0, 0.0, 0).is_ok());
        assert!(DecayParams::new(2.0, 1.5, 0.0, 0.0, 0).is_err());
        assert!(DecayParams::new(2.0, 2.0, 1.5, 0.0, 0).is_err());
        assert!(DecayParams::new(2.0, 2.0, 0.0, -1.6, 0).is_err());
        assert!(DecayParams::new(2.0, 2.0, 0.0, 0.5, 0).is_err());
    }

    #[test]
    fn csv_has_header_rows_and_footer() {
        let p = DecayParams::new(2.0, 2.0, 0.0, 0.0, 0).unwrap();
        let t = vec![1.0, 2.0, 4.0];
        let series = DecaySeries::new(p, t, vec![1.0, 0.5, 0.25]).unwrap();
        let report = DecayReport::from_series(series, 3).unwrap();
        let csv = report.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,norm,predicted_envelope,ratio");
        assert_eq!(lines.len(), 5);
        assert!(csv.ends_with("\r\n") && csv.matches("\r\n").count() == 5);
        let footer: serde_json::Value = serde_json::from_str(lines[4].trim_start_matches("# ")).unwrap();
        assert!((footer["slope"].as_f64().unwrap() + 1.0).abs() < 1e-12);
    }
}
