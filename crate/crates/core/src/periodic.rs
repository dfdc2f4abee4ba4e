//! Time-periodic mild solutions of the forced Navier-Stokes equations.
//!
//! A periodic solution is represented by its values at `M` equispaced nodes
//! `t_m = m T / M`. The Poincare map
//!
//! ```text
//! H[u](t) = int_{-inf}^t e^{-(t - tau) A} (B[u](tau) + P f(tau)) dtau
//! ```
//!
//! is evaluated by folding the history integral over periods,
//! `H[u](t) = sum_{k >= 0} S(kT) J(t)` with `J(t)` the integral over the last
//! period, and by integrating the trigonometric interpolant of the integrand
//! exactly in time, Fourier mode by Fourier mode. The zero spatial mode is
//! removed from forcing and solution.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{weighted_norm, Field, Grid, SpectralField};
use crate::semigroup::leray_spectral;
use crate::weights::RadialWeight;

type Sampler = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// A `T`-periodic body force `amplitude * sampler(t mod T, x)`.
#[derive(Clone)]
pub struct PeriodicForce {
    period: f64,
    amplitude: f64,
    sampler: Arc<Sampler>,
}

impl fmt::Debug for PeriodicForce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PeriodicForce")
            .field("period", &self.period)
            .field("amplitude", &self.amplitude)
            .finish_non_exhaustive()
    }
}

impl PeriodicForce {
    /// `sampler(t, x, out)` writes the unscaled force at phase `t in [0, T)`.
    pub fn new<F>(period: f64, amplitude: f64, sampler: F) -> Result<Self>
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::param("T", period, "period must be positive and finite"));
        }
        if !amplitude.is_finite() {
            return Err(Error::param("epsilon", amplitude, "amplitude must be finite"));
        }
        Ok(Self {
            period,
            amplitude,
            sampler: Arc::new(sampler),
        })
    }

    pub fn zero(period: f64) -> Result<Self> {
        Self::new(period, 0.0, |_, _, out| out.iter_mut().for_each(|v| *v = 0.0))
    }

    /// Two Gaussian vortices (n = 3) pulsing out of phase: a swirl about
    /// the `x3` axis through the origin with amplitude `cos(wt)`, and a
    /// swirl about a tilted axis through `(1, -1/2, 1/2)` mixing `sin(wt)`
    /// and `cos(wt)`. Divergence-free pointwise.
    pub fn vortex_pair(period: f64, amplitude: f64) -> Result<Self> {
        let omega = 2.0 * std::f64::consts::PI / period;
        Self::new(period, amplitude, move |t, x, out| {
            let g1 = (-0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp();
            let y = [x[0] - 1.0, x[1] + 0.5, x[2] - 0.5];
            let g2 = (-0.5 * (y[0] * y[0] + y[1] * y[1] + y[2] * y[2])).exp();
            let (c, s) = ((omega * t).cos(), (omega * t).sin());
            out[0] = c * g1 * x[1] + s * g2 * y[2];
            out[1] = -c * g1 * x[0] + c * g2 * y[2];
            out[2] = -s * g2 * y[0] - c * g2 * y[1];
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    /// Same profile, new amplitude.
    pub fn with_amplitude(&self, amplitude: f64) -> Self {
        Self {
            amplitude,
            ..self.clone()
        }
    }

    /// The same force delayed by `shift`: `g(t) = f(t - shift)`.
    pub fn shifted(&self, shift: f64) -> Self {
        let inner = Arc::clone(&self.sampler);
        let period = self.period;
        Self {
            sampler: Arc::new(move |t, x, out| inner((t - shift).rem_euclid(period), x, out)),
            ..self.clone()
        }
    }

    /// Force at time `t` (any real) and point `x`.
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sampler)(t.rem_euclid(self.period), x, out);
        out.iter_mut().for_each(|v| *v *= self.amplitude);
    }

    /// Force at time `t` sampled on the grid.
    pub fn sample(&self, grid: &Grid, t: f64) -> Field {
        let phase = t.rem_euclid(self.period);
        let a = self.amplitude;
        if a == 0.0 {
            return Field::zeros(grid, grid.dim());
        }
        Field::from_fn(grid, grid.dim(), |x, out| {
            (self.sampler)(phase, x, out);
            out.iter_mut().for_each(|v| *v *= a);
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct PicardConfig {
    /// Time nodes per period, even and at least 8.
    pub nodes: usize,
    /// Fixed-point residual tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Truncation threshold for the sum over past periods.
    pub tail_eps: f64,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            nodes: 16,
            tol: 1e-8,
            max_iter: 20,
            tail_eps: 1e-12,
        }
    }
}

impl PicardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes < 8 || !self.nodes.is_multiple_of(2) {
            return Err(Error::param(
                "M",
                self.nodes as f64,
                "node count must be even and at least 8",
            ));
        }
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", self.tol, "tolerance must be positive"));
        }
        if !(self.tail_eps > 0.0 && self.tail_eps < 1.0) {
            return Err(Error::param(
                "tail_eps",
                self.tail_eps,
                "tail threshold must lie in (0, 1)",
            ));
        }
        if self.max_iter == 0 {
            return Err(Error::param("max_iter", 0.0, "at least one iteration is required"));
        }
        Ok(())
    }

    /// Node times `m T / M`.
    pub fn node_times(&self, period: f64) -> Vec<f64> {
        (0..self.nodes).map(|m| m as f64 * period / self.nodes as f64).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PeriodicSolution {
    pub period: f64,
    /// `u(t_m)`, `m = 0..M`.
    pub snapshots: Vec<Field>,
    /// `||u(t_m) - H[u](t_m)|| / max_m ||u(t_m)||` for the last iterate.
    pub node_residuals: Vec<f64>,
    /// Maximum node residual after each iteration.
    pub residual_history: Vec<f64>,
    pub iterations: usize,
}

impl PeriodicSolution {
    pub fn residual(&self) -> f64 {
        self.node_residuals.iter().copied().fold(0.0, f64::max)
    }

    /// `max_m ||u(t_m)||_{L^2}`.
    pub fn max_l2(&self) -> f64 {
        self.snapshots.iter().map(Field::l2_norm).fold(0.0, f64::max)
    }

    /// Ratios of consecutive residuals.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.residual_history
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Nonlinearity

/// Signed wavenumber index of an FFT bin.
fn signed(i: usize, points: usize) -> i64 {
    if i <= points / 2 {
        i as i64
    } else {
        i as i64 - points as i64
    }
}

/// Zero the bins with `|k_a| > N/3` on some axis.
fn dealias(spec: &mut SpectralField) {
    let points = spec.grid().points();
    let dim = spec.grid().dim();
    let cut = points as i64 / 3;
    spec.apply_real_multiplier(|m| {
        let keep = m.idx[..dim].iter().all(|&i| signed(i, points).abs() <= cut);
        if keep {
            1.0
        } else {
            0.0
        }
    });
}

/// `sqrt(sum |xi_d . u_k|^2 / sum |xi|^2 |u_k|^2)` over the spectrum; zero
/// when the root-mean-square divergence is at rounding level.
fn spectral_divergence_defect(spec: &SpectralField) -> f64 {
    let grid = spec.grid();
    let n = grid.dim();
    let len = grid.len();
    let data = spec.data();
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..len {
        let m = grid.mode_info(p);
        let mut d = Complex64::new(0.0, 0.0);
        for a in 0..n {
            d += data[a * len + p] * m.xi_d[a];
            den += m.k_sq * data[a * len + p].norm_sqr();
        }
        num += d.norm_sqr();
    }
    if den == 0.0 || num.sqrt() / len as f64 <= 1e-14 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

fn nonlinearity_spectral(u: &Field) -> Result<SpectralField> {
    u.require_vector()?;
    u.check_finite()?;
    let grid = u.grid();
    let n = grid.dim();
    let len = grid.len();
    let mut spec = u.to_spectral()?;
    let defect = spectral_divergence_defect(&spec);
    if defect > 1e-8 {
        return Err(Error::NotSolenoidal { defect, allowed: 1e-8 });
    }
    dealias(&mut spec);
    let vel = spec.to_physical();
    let grad = spec.gradient_tensor().to_physical();
    let mut adv = vec![0.0; n * len];
    for i in 0..n {
        let dst = &mut adv[i * len..(i + 1) * len];
        exec::for_each_chunk_mut(dst, exec::CHUNK, |ci, chunk| {
            let off = ci * exec::CHUNK;
            for (k, v) in chunk.iter_mut().enumerate() {
                let p = off + k;
                *v = -(0..n)
                    .map(|j| vel.component(j)[p] * grad.component(i * n + j)[p])
                    .sum::<f64>();
            }
        });
    }
    let mut out = Field::from_vec(grid, n, adv)?.to_spectral()?;
    dealias(&mut out);
    leray_spectral(&mut out);
    Ok(out)
}

/// `B[u] = -P (u . grad) u`, spectral with 2/3-rule de-aliasing.
pub fn nonlinearity(u: &Field) -> Result<Field> {
    Ok(nonlinearity_spectral(u)?.to_physical())
}

// ---------------------------------------------------------------------------
// Poincare map

/// Number of past periods kept: the first `K` with `e^{-K T kappa_min}` below
/// `tail_eps`.
pub fn tail_periods(grid: &Grid, period: f64, tail_eps: f64) -> Result<usize> {
    let product = grid.kappa_min() * period;
    if product < 1e-6 {
        return Err(Error::NonConvergentTail { product });
    }
    Ok((-tail_eps.ln() / product).floor() as usize + 1)
}

/// Integrand spectra `P f(t_m) + B[u](t_m)` at every node.
fn integrand(grid: &Grid, u: Option<&[Field]>, f: &PeriodicForce, cfg: &PicardConfig) -> Result<Vec<SpectralField>> {
    let times = cfg.node_times(f.period());
    let mut out = Vec::with_capacity(times.len());
    for (m, &t) in times.iter().enumerate() {
        let mut h = f.sample(grid, t).to_spectral()?;
        leray_spectral(&mut h);
        if let Some(u) = u {
            let b = nonlinearity_spectral(&u[m])?;
            h.data_mut().iter_mut().zip(b.data()).for_each(|(a, b)| *a += b);
        }
        out.push(h);
    }
    Ok(out)
}

/// Apply `H` to node spectra of the integrand; returns node snapshots.
fn fold_history(grid: &Grid, mut h: Vec<SpectralField>, period: f64, cfg: &PicardConfig) -> Result<Vec<Field>> {
    let m_nodes = cfg.nodes;
    let periods = tail_periods(grid, period, cfg.tail_eps)? as f64;
    let omega = 2.0 * PI / period;
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(m_nodes);
    let inverse = planner.plan_fft_inverse(m_nodes);
    let len = grid.len();
    let comps = h[0].components();
    let half = m_nodes / 2;
    // Per bin: gather the M node values, move to temporal frequencies,
    // multiply by (1 - e^{-K kappa T}) / (kappa + i l omega), move back.
    let mut line = vec![Complex64::new(0.0, 0.0); m_nodes];
    let mut scratch = vec![Complex64::new(0.0, 0.0); forward.get_inplace_scratch_len()];
    for p in 0..len {
        let kappa = grid.mode_info(p).k_sq;
        if kappa == 0.0 {
            for s in h.iter_mut() {
                for c in 0..comps {
                    s.component_mut(c)[p] = Complex64::new(0.0, 0.0);
                }
            }
            continue;
        }
        let tail = -(-periods * kappa * period).exp_m1();
        for c in 0..comps {
            for (m, s) in h.iter().enumerate() {
                line[m] = s.component(c)[p];
            }
            forward.process_with_scratch(&mut line, &mut scratch);
            for (l, v) in line.iter_mut().enumerate() {
                let gain = if l == half {
                    // The Nyquist harmonic of the real interpolant is a
                    // cosine: average the +/- frequencies.
                    let nu = half as f64 * omega;
                    Complex64::new(tail * kappa / (kappa * kappa + nu * nu), 0.0)
                } else {
                    let freq = signed(l, m_nodes) as f64 * omega;
                    tail / Complex64::new(kappa, freq)
                };
                *v *= gain / m_nodes as f64;
            }
            inverse.process_with_scratch(&mut line, &mut scratch);
            for (m, s) in h.iter_mut().enumerate() {
                s.component_mut(c)[p] = line[m];
            }
        }
    }
    Ok(h.iter().map(SpectralField::to_physical).collect())
}

fn check_nodes(grid: &Grid, u: &[Field], cfg: &PicardConfig) -> Result<()> {
    if u.len() != cfg.nodes {
        return Err(Error::Shape(format!(
            "expected {} node snapshots, got {}",
            cfg.nodes,
            u.len()
        )));
    }
    for s in u {
        s.require_vector()?;
        if s.grid().points() != grid.points()
            || s.grid().dim() != grid.dim()
            || s.grid().half_extent() != grid.half_extent()
        {
            return Err(Error::Shape("node snapshots live on different grids".into()));
        }
    }
    Ok(())
}

/// Node values of `H[u]` for node values `u`.
pub fn poincare_map(u: &[Field], f: &PeriodicForce, cfg: &PicardConfig) -> Result<Vec<Field>> {
    cfg.validate()?;
    let grid = u
        .first()
        .ok_or_else(|| Error::Shape("no node snapshots".into()))?
        .grid()
        .clone();
    check_nodes(&grid, u, cfg)?;
    let h = integrand(&grid, Some(u), f, cfg)?;
    fold_history(&grid, h, f.period(), cfg)
}

/// Node values of the linear periodic response, `H` with `B = 0`.
pub fn linear_response(grid: &Grid, f: &PeriodicForce, cfg: &PicardConfig) -> Result<Vec<Field>> {
    cfg.validate()?;
    let h = integrand(grid, None, f, cfg)?;
    fold_history(grid, h, f.period(), cfg)
}

fn node_residuals(u: &[Field], next: &[Field]) -> Result<Vec<f64>> {
    let scale = u
        .iter()
        .chain(next)
        .map(Field::l2_norm)
        .fold(0.0, f64::max)
        .max(f64::EPSILON);
    u.iter()
        .zip(next)
        .map(|(a, b)| Ok(b.sub(a)?.l2_norm() / scale))
        .collect()
}

/// Picard iteration `u <- H[u]` from `u = 0`.
pub fn picard_solve(grid: &Grid, f: &PeriodicForce, cfg: &PicardConfig) -> Result<PeriodicSolution> {
    cfg.validate()?;
    tail_periods(grid, f.period(), cfg.tail_eps)?;
    let mut u: Vec<Field> = (0..cfg.nodes).map(|_| Field::zeros(grid, grid.dim())).collect();
    let mut history = Vec::new();
    let mut growth_run = 0;
    for it in 1..=cfg.max_iter {
        let next = poincare_map(&u, f, cfg)?;
        let res = node_residuals(&u, &next)?;
        let r = res.iter().copied().fold(0.0, f64::max);
        if let Some(&prev) = history.last() {
            if r >= prev {
                growth_run += 1;
                if growth_run >= 3 {
                    history.push(r);
                    return Err(Error::OutsideContraction {
                        growth: r / prev,
                        residuals: history,
                    });
                }
            } else {
                growth_run = 0;
            }
        }
        history.push(r);
        u = next;
        if r <= cfg.tol {
            return Ok(PeriodicSolution {
                period: f.period(),
                snapshots: u,
                node_residuals: res,
                residual_history: history,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

// ---------------------------------------------------------------------------
// Periodicity check by time marching

/// Coefficients of the fourth-order exponential Runge-Kutta scheme of Cox
/// and Matthews for `v' = -kappa v + N`, evaluated by contour averages.
#[derive(Clone, Copy)]
struct EtdCoefficients {
    e: f64,
    e_half: f64,
    q: f64,
    f1: f64,
    f2: f64,
    f3: f64,
}

impl EtdCoefficients {
    fn new(kappa: f64, dt: f64) -> Self {
        const POINTS: usize = 32;
        let l = -kappa * dt;
        let (mut q, mut f1, mut f2, mut f3) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..POINTS {
            let z = l + Complex64::from_polar(1.0, PI * (j as f64 + 0.5) / POINTS as f64);
            let ez = z.exp();
            let z3 = z * z * z;
            q += (((z * 0.5).exp() - 1.0) / z).re;
            f1 += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).re;
            f2 += ((2.0 + z + ez * (z - 2.0)) / z3).re;
            f3 += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).re;
        }
        let avg = dt / POINTS as f64;
        Self {
            e: l.exp(),
            e_half: (0.5 * l).exp(),
            q: q * avg,
            f1: f1 * avg,
            f2: f2 * avg,
            f3: f3 * avg,
        }
    }
}

/// A stage field, its scale and the coefficient that weights it.
type EtdTerm<'a> = (&'a SpectralField, f64, fn(&EtdCoefficients) -> f64);

/// `out = lin(c) * base + sum_i w_i(c) * terms_i`, bin by bin.
fn etd_combine(
    base: &SpectralField,
    lin: impl Fn(&EtdCoefficients) -> f64,
    terms: &[EtdTerm<'_>],
    coeffs: &[EtdCoefficients],
) -> SpectralField {
    let mut out = base.clone();
    let len = coeffs.len();
    for c in 0..out.components() {
        let dst = out.component_mut(c);
        for p in 0..len {
            let co = &coeffs[p];
            let mut v = dst[p] * lin(co);
            for (field, scale, w) in terms {
                v += field.component(c)[p] * (scale * w(co));
            }
            dst[p] = v;
        }
    }
    out
}

/// Relative defect `||u_T - u(0)|| / ||u(0)||` after advancing `u(0)` over
/// one period of the mild formulation with `steps` fourth-order
/// exponential Runge-Kutta steps.
pub fn periodicity_check(sol: &PeriodicSolution, f: &PeriodicForce, steps: usize) -> Result<f64> {
    let u0 = sol
        .snapshots
        .first()
        .ok_or_else(|| Error::Shape("solution has no snapshots".into()))?;
    if steps == 0 {
        return Err(Error::param("steps", 0.0, "at least one step is required"));
    }
    let grid = u0.grid().clone();
    let dt = f.period() / steps as f64;
    let n = grid.dim();

    // Coefficients depend only on |xi|^2.
    let mut table: HashMap<u64, EtdCoefficients> = HashMap::new();
    let coeffs: Vec<EtdCoefficients> = (0..grid.len())
        .map(|p| {
            let k = grid.mode_info(p).k_sq;
            *table.entry(k.to_bits()).or_insert_with(|| EtdCoefficients::new(k, dt))
        })
        .collect();

    let clear_mean = |v: &mut SpectralField| {
        for c in 0..n {
            v.component_mut(c)[0] = Complex64::new(0.0, 0.0);
        }
    };
    let rhs = |v: &SpectralField, t: f64| -> Result<SpectralField> {
        let mut h = f.sample(&grid, t).to_spectral()?;
        leray_spectral(&mut h);
        let b = nonlinearity_spectral(&v.to_physical())?;
        h.data_mut().iter_mut().zip(b.data()).for_each(|(a, b)| *a += b);
        clear_mean(&mut h);
        Ok(h)
    };

    let mut v = u0.to_spectral()?;
    clear_mean(&mut v);
    for step in 0..steps {
        let t = step as f64 * dt;
        let nv = rhs(&v, t)?;
        let a = etd_combine(&v, |c| c.e_half, &[(&nv, 1.0, |c| c.q)], &coeffs);
        let na = rhs(&a, t + 0.5 * dt)?;
        let b = etd_combine(&v, |c| c.e_half, &[(&na, 1.0, |c| c.q)], &coeffs);
        let nb = rhs(&b, t + 0.5 * dt)?;
        let cc = etd_combine(&a, |c| c.e_half, &[(&nb, 2.0, |c| c.q), (&nv, -1.0, |c| c.q)], &coeffs);
        let nc = rhs(&cc, t + dt)?;
        v = etd_combine(
            &v,
            |c| c.e,
            &[
                (&nv, 1.0, |c| c.f1),
                (&na, 2.0, |c| c.f2),
                (&nb, 2.0, |c| c.f2),
                (&nc, 1.0, |c| c.f3),
            ],
            &coeffs,
        );
    }
    let diff = v.to_physical().sub(u0)?.l2_norm();
    let norm0 = u0.l2_norm();
    Ok(if norm0 > 0.0 {
        diff / norm0
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    })
}

// ---------------------------------------------------------------------------
// Weighted report

#[derive(Clone, Debug, Serialize)]
pub struct WeightedReport {
    pub q1: f64,
    pub q2: f64,
    pub s: f64,
    /// `sup_m (||<x>^s u||_{L^q1} + ||<x>^s grad u||_{L^q2})`.
    pub solution_norm: f64,
    /// `sup_m max(||<x>^{2s} f||_{L^q12}, ||<x>^{2s} f||_{L^q22*})`.
    pub forcing_norm: f64,
    /// `solution_norm / forcing_norm`; `None` when both vanish.
    pub ratio: Option<f64>,
    pub q12: f64,
    pub q22_star: f64,
}

pub fn weighted_report(sol: &PeriodicSolution, f: &PeriodicForce, q1: f64, q2: f64, s: f64) -> Result<WeightedReport> {
    let grid = sol
        .snapshots
        .first()
        .ok_or_else(|| Error::Shape("solution has no snapshots".into()))?
        .grid()
        .clone();
    let n = grid.dim() as f64;
    if !(q1 >= 1.0 && q1.is_finite()) {
        return Err(Error::param("q1", q1, "requires 1 <= q1 < inf"));
    }
    if !(q2 >= 1.0 && q2 < n) {
        return Err(Error::param("q2", q2, "requires 1 <= q2 < n"));
    }
    let q12 = q1 * q2 / (q1 + q2);
    let q2s = n * q2 / (n - q2);
    let q22s = q2s * q2 / (q2s + q2);
    let w1 = RadialWeight::bracket(s)?;
    let w2 = RadialWeight::bracket(2.0 * s)?;
    let times = (0..sol.snapshots.len()).map(|m| m as f64 * sol.period / sol.snapshots.len() as f64);
    let mut solution_norm: f64 = 0.0;
    let mut forcing_norm: f64 = 0.0;
    for (u, t) in sol.snapshots.iter().zip(times) {
        let a = weighted_norm(u, q1, Some(&w1));
        let b = weighted_norm(&u.gradient_tensor()?, q2, Some(&w1));
        solution_norm = solution_norm.max(a + b);
        let force = f.sample(&grid, t);
        let c = weighted_norm(&force, q12, Some(&w2)).max(weighted_norm(&force, q22s, Some(&w2)));
        forcing_norm = forcing_norm.max(c);
    }
    let ratio = if forcing_norm > 0.0 {
        Some(solution_norm / forcing_norm)
    } else if solution_norm == 0.0 {
        None
    } else {
        Some(f64::INFINITY)
    };
    Ok(WeightedReport {
        q1,
        q2,
        s,
        solution_norm,
        forcing_norm,
        ratio,
        q12,
        q22_star: q22s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::leray_project;

    /// `cos(t) (0, sin x1, 0)` on `[-pi, pi)^3`, period `2 pi`: a single
    /// solenoidal mode with `kappa = 1`.
    fn single_mode(period: f64) -> PeriodicForce {
        let omega = 2.0 * PI / period;
        PeriodicForce::new(period, 1.0, move |t, x, out| {
            out[0] = 0.0;
            out[1] = (omega * t).cos() * x[0].sin();
            out[2] = 0.0;
        })
        .unwrap()
    }

    fn cfg(nodes: usize) -> PicardConfig {
        PicardConfig {
            nodes,
            ..PicardConfig::default()
        }
    }

    #[test]
    fn force_is_periodic() {
        let f = single_mode(3.0);
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        f.eval(0.7, &[0.3, 0.1, 0.2], &mut a);
        f.eval(0.7 + 6.0, &[0.3, 0.1, 0.2], &mut b);
        assert!((a[1] - b[1]).abs() < 1e-14 && a[0] == b[0]);
        assert!(PeriodicForce::new(0.0, 1.0, |_, _, _| {}).is_err());
        assert!(cfg(6).validate().is_err());
        assert!(cfg(9).validate().is_err());
    }

    #[test]
    fn vortex_pair_is_divergence_free() {
        let f = PeriodicForce::vortex_pair(2.0, 1.0).unwrap();
        let d = 1e-5;
        for (t, x) in [
            (0.3, [0.2, -0.4, 0.9]),
            (1.1, [1.3, 0.1, -0.6]),
            (1.7, [-0.5, 0.8, 0.4]),
        ] {
            let mut div = 0.0;
            for a in 0..3 {
                let (mut p, mut m) = (x, x);
                p[a] += d;
                m[a] -= d;
                let (mut fp, mut fm) = ([0.0; 3], [0.0; 3]);
                f.eval(t, &p, &mut fp);
                f.eval(t, &m, &mut fm);
                div += (fp[a] - fm[a]) / (2.0 * d);
            }
            assert!(div.abs() < 1e-9, "div = {div:e}");
        }
    }

    #[test]
    fn zero_force_gives_zero_in_one_iteration() {
        let grid = Grid::new(3, 8, PI).unwrap();
        let sol = picard_solve(&grid, &PeriodicForce::zero(1.0).unwrap(), &cfg(8)).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.snapshots.iter().all(|s| s.max_abs() == 0.0));
        assert_eq!(
            periodicity_check(&sol, &PeriodicForce::zero(1.0).unwrap(), 4).unwrap(),
            0.0
        );
    }

    #[test]
    fn linear_single_mode_matches_closed_form() {
        let grid = Grid::new(3, 8, PI).unwrap();
        for period in [2.0 * PI, 1.0] {
            let f = single_mode(period);
            let c = cfg(32);
            let nodes = linear_response(&grid, &f, &c).unwrap();
            let omega = 2.0 * PI / period;
            let kappa = 1.0;
            let mut worst: f64 = 0.0;
            for (t, u) in c.node_times(period).iter().zip(&nodes) {
                let amp = (kappa * (omega * t).cos() + omega * (omega * t).sin()) / (kappa * kappa + omega * omega);
                let exact = Field::from_fn(&grid, 3, |x, out| {
                    out[0] = 0.0;
                    out[1] = amp * x[0].sin();
                    out[2] = 0.0;
                });
                worst = worst.max(u.sub(&exact).unwrap().max_abs());
            }
            assert!(worst < 1e-10, "period {period}: {worst:e}");
        }
    }

    #[test]
    fn half_period_shift_rotates_nodes() {
        let grid = Grid::new(3, 8, PI).unwrap();
        let f = PeriodicForce::new(2.0, 1.0, |t, x, out| {
            let a = (PI * t).sin() + 0.3 * (2.0 * PI * t).cos();
            out[0] = a * x[1].cos();
            out[1] = 0.5 * a * x[2].sin();
            out[2] = (1.0 - a) * x[0].sin();
        })
        .unwrap();
        let c = cfg(8);
        let base = linear_response(&grid, &f, &c).unwrap();
        let moved = linear_response(&grid, &f.shifted(1.0), &c).unwrap();
        for m in 0..8 {
            let d = moved[(m + 4) % 8].sub(&base[m]).unwrap().max_abs();
            assert!(d < 1e-13, "{d:e}");
        }
    }

    #[test]
    fn nonlinearity_of_a_single_mode_vanishes() {
        let grid = Grid::new(3, 16, PI).unwrap();
        let zero = Field::zeros(&grid, 3);
        assert_eq!(nonlinearity(&zero).unwrap().max_abs(), 0.0);
        // a sin(xi . x) with a orthogonal to xi: (u . grad) u = 0.
        let u = Field::from_fn(&grid, 3, |x, out| {
            let s = (x[0] + 2.0 * x[1]).sin();
            out[0] = 2.0 * s;
            out[1] = -s;
            out[2] = 0.5 * s;
        });
        assert!(nonlinearity(&u).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn nonlinearity_is_solenoidal_and_mean_zero() {
        let grid = Grid::new(3, 16, 4.0).unwrap();
        let raw = Field::from_fn(&grid, 3, |x, out| {
            let g = (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / 2.0).exp();
            out[0] = g * x[1];
            out[1] = g * (x[2] - x[0]);
            out[2] = g;
        });
        let u = leray_project(&raw).unwrap();
        let b = nonlinearity(&u).unwrap();
        let div = b.divergence().unwrap().l2_norm();
        assert!(div < 1e-10 * b.gradient_tensor().unwrap().l2_norm());
        assert!(b.means().iter().all(|m| m.abs() < 1e-14));
        assert!(matches!(nonlinearity(&raw), Err(Error::NotSolenoidal { .. })));
    }

    #[test]
    fn linear_periodicity_defect_is_small() {
        let grid = Grid::new(3, 8, PI).unwrap();
        let f = single_mode(2.0 * PI);
        let c = cfg(16);
        let sol = picard_solve(&grid, &f, &c).unwrap();
        // B vanishes on the single mode, so the fixed point is the linear
        // response, reached after two maps.
        assert!(sol.iterations <= 2);
        let defect = periodicity_check(&sol, &f, 128).unwrap();
        assert!(defect < 1e-6, "{defect:e}");
    }

    #[test]
    fn tail_rejects_tiny_period() {
        let grid = Grid::new(3, 8, 1000.0).unwrap();
        let f = single_mode(1e-3);
        assert!(matches!(
            linear_response(&grid, &f, &cfg(8)),
            Err(Error::NonConvergentTail { .. })
        ));
    }

    #[test]
    fn weighted_report_scales_with_amplitude() {
        let grid = Grid::new(3, 8, PI).unwrap();
        let zero = PeriodicForce::zero(1.0).unwrap();
        let sol0 = picard_solve(&grid, &zero, &cfg(8)).unwrap();
        assert_eq!(weighted_report(&sol0, &zero, 2.0, 2.0, 1.0).unwrap().ratio, None);
        let f = single_mode(2.0 * PI);
        let sol = picard_solve(&grid, &f, &cfg(8)).unwrap();
        let a = weighted_report(&sol, &f, 2.0, 2.0, 1.0).unwrap();
        let b = weighted_report(&sol, &f.with_amplitude(2.0), 2.0, 2.0, 1.0).unwrap();
        assert!((b.forcing_norm / a.forcing_norm - 2.0).abs() < 1e-12);
        assert!(a.ratio.unwrap().is_finite());
    }
}
