//! Cut-off functions, a Bogovskii operator on spherical shells, and the
//! cut-off-plus-Bogovskii solenoidal extension of exterior fields.
//!
//! A shell is not star-shaped with respect to any ball, so the operator is
//! assembled from angular sectors. Each sector is the part of the shell
//! inside a cone around a direction `e_k`; for a small enough cone it is
//! star-shaped with respect to a ball `B_k` centered on the mid-radius. The
//! data is split with a smooth angular partition of unity, and the pieces
//! are made mean-zero by moving mass between overlapping sectors with small
//! bumps along a spanning tree. On every sector the classical kernel
//!
//! ```text
//! v(x) = int f(y) (x - y)/|x - y|^n int_{|x-y|}^inf theta(y + r e) r^(n-1) dr dy
//! ```
//!
//! with `e = (x - y)/|x - y|` and `theta` a normalized bump on `B_k` is
//! summed directly over the grid.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Field, Grid};
use crate::weights::unit_sphere_area;

/// `6t^5 - 15t^4 + 10t^3` on `[0, 1]`, clamped outside.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

pub fn smoothstep_deriv(t: f64) -> f64 {
    if !(0.0..=1.0).contains(&t) {
        return 0.0;
    }
    30.0 * t * t * (t - 1.0) * (t - 1.0)
}

/// Radial cut-off equal to 1 for `r <= inner` and 0 for `r >= outer`;
/// returns the value and the radial derivative.
pub fn radial_cutoff(r: f64, inner: f64, outer: f64) -> (f64, f64) {
    let w = outer - inner;
    let t = (r - inner) / w;
    (1.0 - smoothstep(t), -smoothstep_deriv(t) / w)
}

/// The shell `{R < |x| < R + 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AnnulusSpec {
    pub inner: f64,
}

impl AnnulusSpec {
    pub fn new(inner: f64) -> Result<Self> {
        if !(inner > 0.0 && inner.is_finite()) {
            return Err(Error::param("R", inner, "inner radius must be positive"));
        }
        Ok(Self { inner })
    }

    pub fn outer(&self) -> f64 {
        self.inner + 1.0
    }

    pub fn contains(&self, r: f64) -> bool {
        self.inner < r && r < self.outer()
    }

    /// The shell must sit inside the cube with a margin of at least 1.
    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if grid.dim() != 3 {
            return Err(Error::param(
                "n",
                grid.dim() as f64,
                "the shell Bogovskii operator is implemented for n = 3",
            ));
        }
        if self.outer() + 1.0 > grid.half_extent() {
            return Err(Error::param(
                "R",
                self.inner,
                format!("need R + 2 <= L = {}", grid.half_extent()),
            ));
        }
        Ok(())
    }
}

/// `phi_R` (1 on `|x| <= R+2`, 0 on `|x| >= R+3`) and `psi_R` (radii `R+1`,
/// `R+2`), sampled with their analytic gradients.
#[derive(Clone, Debug)]
pub struct CutoffPair {
    pub radius: f64,
    pub phi: Field,
    pub grad_phi: Field,
    pub psi: Field,
    pub grad_psi: Field,
}

impl CutoffPair {
    pub fn new(grid: &Grid, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::param("R", radius, "cut-off radius must be positive"));
        }
        if radius + 3.0 > grid.half_extent() {
            return Err(Error::param(
                "R",
                radius,
                format!("need R + 3 <= L = {}", grid.half_extent()),
            ));
        }
        let (phi, grad_phi) = sample_cutoff(grid, radius + 2.0, radius + 3.0);
        let (psi, grad_psi) = sample_cutoff(grid, radius + 1.0, radius + 2.0);
        Ok(Self {
            radius,
            phi,
            grad_phi,
            psi,
            grad_psi,
        })
    }
}

fn sample_cutoff(grid: &Grid, inner: f64, outer: f64) -> (Field, Field) {
    let n = grid.dim();
    let value = Field::scalar_from_fn(grid, |x| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        radial_cutoff(r, inner, outer).0
    });
    let grad = Field::from_fn(grid, n, |x, out| {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let d = radial_cutoff(r, inner, outer).1;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = if r > 0.0 { d * xi / r } else { 0.0 };
        }
    });
    (value, grad)
}

// ---------------------------------------------------------------------------
// Sector cover

/// Angular decomposition of the shell `{a < |x| < b}` into star-shaped
/// sectors.
#[derive(Clone, Debug, Serialize)]
pub struct SectorCover {
    pub inner: f64,
    pub outer: f64,
    /// Unit axis of each sector.
    pub axes: Vec<[f64; 3]>,
    /// Half-angle of the cone defining each sector.
    pub cap_angle: f64,
    /// Half-angle of the partition-of-unity functions, below `cap_angle`.
    pub support_angle: f64,
    /// Radius of the ball `B_k`, centered at `mid_radius * e_k`.
    pub ball_radius: f64,
    pub mid_radius: f64,
}

impl SectorCover {
    pub fn new(inner: f64, outer: f64) -> Result<Self> {
        if !(inner > 0.0 && outer > inner) {
            return Err(Error::param("R", inner, "shell radii must satisfy 0 < a < b"));
        }
        let mid = 0.5 * (inner + outer);
        let ball = 0.4 * (outer - inner);
        // Every segment from x in the sector to y in B_k stays in the
        // half-space {z . x/|x| >= a}, hence outside the inner ball, when
        // mid cos(beta) - ball >= a.
        let cap = 0.98 * ((inner + ball) / mid).acos();
        let support = 0.95 * cap;
        let target = 0.7 * support;
        let probe = fibonacci_sphere(4000);
        let mut k = 8;
        let axes = loop {
            let axes = fibonacci_sphere(k);
            let cover = probe
                .iter()
                .map(|p| axes.iter().map(|a| angle(p, a)).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max);
            if cover <= target {
                break axes;
            }
            k += k / 8 + 1;
        };
        Ok(Self {
            inner,
            outer,
            axes,
            cap_angle: cap,
            support_angle: support,
            ball_radius: ball,
            mid_radius: mid,
        })
    }

    pub fn ball_center(&self, k: usize) -> [f64; 3] {
        let a = self.axes[k];
        [a[0] * self.mid_radius, a[1] * self.mid_radius, a[2] * self.mid_radius]
    }

    /// Whether `x` lies in sector `k`.
    pub fn in_sector(&self, k: usize, x: &[f64; 3]) -> bool {
        let r = norm(x);
        self.inner < r && r < self.outer && angle(x, &self.axes[k]) < self.cap_angle
    }

    /// Partition-of-unity weights at direction `x` (not necessarily unit);
    /// returns `(sector, weight)` pairs with positive weight.
    fn partition(&self, x: &[f64; 3]) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = self
            .axes
            .iter()
            .enumerate()
            .filter_map(|(k, a)| {
                let t = angle(x, a) / self.support_angle;
                (t < 1.0).then(|| (k, 1.0 - smoothstep(t)))
            })
            .collect();
        let total: f64 = out.iter().map(|p| p.1).sum();
        out.iter_mut().for_each(|p| p.1 /= total);
        out
    }
}

fn fibonacci_sphere(count: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / count as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn norm(x: &[f64; 3]) -> f64 {
    (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
}

fn angle(x: &[f64; 3], unit: &[f64; 3]) -> f64 {
    let c = (x[0] * unit[0] + x[1] * unit[1] + x[2] * unit[2]) / norm(x);
    c.clamp(-1.0, 1.0).acos()
}

// ---------------------------------------------------------------------------
// Bogovskii operator

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

/// `theta(z) = c (1 - |z - m|^2 / rho^2)^3` with unit integral.
#[derive(Clone, Copy, Debug)]
struct Bump {
    center: [f64; 3],
    rho2: f64,
    scale: f64,
}

impl Bump {
    fn new(center: [f64; 3], rho: f64) -> Self {
        // int_0^1 (1 - u^2)^k u^(n-1) du = I_k, I_k = I_{k-1} 2k / (2k + n).
        let n = 3.0;
        let mut moment = 1.0 / n;
        for k in 1..=3 {
            moment *= 2.0 * k as f64 / (2.0 * k as f64 + n);
        }
        let scale = 1.0 / (unit_sphere_area(3) * rho.powi(3) * moment);
        Self {
            center,
            rho2: rho * rho,
            scale,
        }
    }

    /// Kernel vector `(x - y)/|x - y|^3 int_{|x-y|}^inf theta(y + r e) r^2 dr`.
    /// The integrand is a polynomial of degree 8 in `r` on the chord through
    /// the ball, integrated exactly by 5-point Gauss-Legendre.
    #[inline]
    fn kernel(&self, x: &[f64; 3], y: &[f64; 3]) -> Option<[f64; 3]> {
        let dx = [x[0] - y[0], x[1] - y[1], x[2] - y[2]];
        let d2 = dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2];
        if d2 == 0.0 {
            return None;
        }
        let d = d2.sqrt();
        let ym = [y[0] - self.center[0], y[1] - self.center[1], y[2] - self.center[2]];
        let b = (dx[0] * ym[0] + dx[1] * ym[1] + dx[2] * ym[2]) / d;
        let ym2 = ym[0] * ym[0] + ym[1] * ym[1] + ym[2] * ym[2];
        let disc = b * b - (ym2 - self.rho2);
        if disc <= 0.0 {
            return None;
        }
        let sq = disc.sqrt();
        let hi = -b + sq;
        let lo = (-b - sq).max(d);
        if hi <= lo {
            return None;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut acc = 0.0;
        for (gx, gw) in GL5_X.iter().zip(&GL5_W) {
            let r = mid + half * gx;
            let u = 1.0 - (r * r + 2.0 * b * r + ym2) / self.rho2;
            acc += gw * u * u * u * r * r;
        }
        let s = self.scale * half * acc / (d2 * d);
        Some([dx[0] * s, dx[1] * s, dx[2] * s])
    }

    /// Moments `int_0^inf theta(x + s w) s^m ds`, `m = 0, 1, 2`, for a unit
    /// direction `w`.
    #[inline]
    fn ray_moments(&self, x: &[f64; 3], w: &[f64; 3]) -> [f64; 3] {
        let xm = [x[0] - self.center[0], x[1] - self.center[1], x[2] - self.center[2]];
        let b = w[0] * xm[0] + w[1] * xm[1] + w[2] * xm[2];
        let xm2 = xm[0] * xm[0] + xm[1] * xm[1] + xm[2] * xm[2];
        let disc = b * b - (xm2 - self.rho2);
        if disc <= 0.0 {
            return [0.0; 3];
        }
        let sq = disc.sqrt();
        let hi = -b + sq;
        let lo = (-b - sq).max(0.0);
        if hi <= lo {
            return [0.0; 3];
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut m = [0.0; 3];
        for (gx, gw) in GL5_X.iter().zip(&GL5_W) {
            let r = mid + half * gx;
            let u = 1.0 - (r * r + 2.0 * b * r + xm2) / self.rho2;
            let t = gw * u * u * u;
            m[0] += t;
            m[1] += t * r;
            m[2] += t * r * r;
        }
        m.map(|v| v * self.scale * half)
    }

    /// `int zeta(|z| / r0) K(x, x - z) dz` for the local cut-off
    /// `zeta = 1 - smoothstep`, by quadrature over the directions that see
    /// the ball from `x`.
    fn local_integral(&self, x: &[f64; 3], r0: f64) -> [f64; 3] {
        // int_0^1 (1 - S(t)) t^k dt
        let zeta = |k: f64| 1.0 / (k + 1.0) - (6.0 / (k + 6.0) - 15.0 / (k + 5.0) + 10.0 / (k + 4.0));
        let (z0, z1, z2) = (zeta(0.0), zeta(1.0), zeta(2.0));
        let to_m = [self.center[0] - x[0], self.center[1] - x[1], self.center[2] - x[2]];
        let dist = norm(&to_m);
        let rho = self.rho2.sqrt();
        // Directions within angle alpha of the axis; the whole sphere when x
        // is inside the ball.
        let (axis, cos_min) = if dist > rho * (1.0 + 1e-9) {
            (
                [to_m[0] / dist, to_m[1] / dist, to_m[2] / dist],
                (1.0 - (rho / dist).powi(2)).sqrt(),
            )
        } else {
            ([0.0, 0.0, 1.0], -1.0)
        };
        let (e1, e2) = orthonormal_pair(&axis);
        const POLAR: usize = 4;
        const AZIMUTH: usize = 24;
        let mut out = [0.0; 3];
        let span = 1.0 - cos_min;
        for panel in 0..POLAR {
            let a = cos_min + span * panel as f64 / POLAR as f64;
            let b = cos_min + span * (panel + 1) as f64 / POLAR as f64;
            for (gx, gw) in GL5_X.iter().zip(&GL5_W) {
                let c = 0.5 * (a + b) + 0.5 * (b - a) * gx;
                let sn = (1.0 - c * c).max(0.0).sqrt();
                let wc = 0.5 * (b - a) * gw;
                for j in 0..AZIMUTH {
                    let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / AZIMUTH as f64;
                    let (sp, cp) = phi.sin_cos();
                    let w = [
                        c * axis[0] + sn * (cp * e1[0] + sp * e2[0]),
                        c * axis[1] + sn * (cp * e1[1] + sp * e2[1]),
                        c * axis[2] + sn * (cp * e1[2] + sp * e2[2]),
                    ];
                    let m = self.ray_moments(x, &w);
                    let radial = m[2] * z0 * r0 + 2.0 * m[1] * z1 * r0 * r0 + m[0] * z2 * r0.powi(3);
                    let q = wc * 2.0 * std::f64::consts::PI / AZIMUTH as f64 * radial;
                    out[0] += q * w[0];
                    out[1] += q * w[1];
                    out[2] += q * w[2];
                }
            }
        }
        out
    }
}

fn orthonormal_pair(a: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let t = if a[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let d = t[0] * a[0] + t[1] * a[1] + t[2] * a[2];
    let u = [t[0] - d * a[0], t[1] - d * a[1], t[2] - d * a[2]];
    let nu = norm(&u);
    let u = [u[0] / nu, u[1] / nu, u[2] / nu];
    let v = [
        a[1] * u[2] - a[2] * u[1],
        a[2] * u[0] - a[0] * u[2],
        a[0] * u[1] - a[1] * u[0],
    ];
    (u, v)
}

/// Sparse scalar data: sorted `(flat index, value)` pairs.
type Sparse = BTreeMap<usize, f64>;

/// Smooth normalized bump `(1 - |x - m|^2 / r^2)^4` sampled on the grid and
/// scaled to unit grid integral.
fn transfer_bump(grid: &Grid, center: &[f64; 3], radius: f64) -> Result<Vec<(usize, f64)>> {
    let mut pts = Vec::new();
    for_points_in_box(grid, center, radius, |p, x| {
        let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2);
        let u = 1.0 - d2 / (radius * radius);
        if u > 0.0 {
            pts.push((p, u.powi(4)));
        }
    });
    let total: f64 = pts.iter().map(|p| p.1).sum::<f64>() * grid.cell_volume();
    if pts.is_empty() || total <= 0.0 {
        return Err(Error::Degenerate(format!(
            "grid too coarse to resolve a transfer bump of radius {radius}"
        )));
    }
    pts.iter_mut().for_each(|p| p.1 /= total);
    Ok(pts)
}

/// Unit-mass profile on the overlap of sectors `k` and `p`: the product of
/// their angular cut-offs times a radial bump across the shell.
fn transfer_profile(grid: &Grid, cover: &SectorCover, k: usize, p: usize) -> Result<Vec<(usize, f64)>> {
    let (a, b) = (cover.axes[k], cover.axes[p]);
    let half_width = 0.5 * (cover.outer - cover.inner);
    let mid = [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
    let len = norm(&mid);
    let center = [
        mid[0] / len * cover.mid_radius,
        mid[1] / len * cover.mid_radius,
        mid[2] / len * cover.mid_radius,
    ];
    let reach = cover.outer * cover.support_angle.sin() + half_width;
    let mut pts = Vec::new();
    for_points_in_box(grid, &center, reach, |q, x| {
        let r = norm(&x);
        let s = (r - cover.mid_radius) / half_width;
        if s.abs() >= 1.0 {
            return;
        }
        let ta = angle(&x, &a) / cover.support_angle;
        let tb = angle(&x, &b) / cover.support_angle;
        if ta >= 1.0 || tb >= 1.0 {
            return;
        }
        let w = (1.0 - smoothstep(ta)) * (1.0 - smoothstep(tb)) * (1.0 - s * s).powi(4);
        if w > 0.0 {
            pts.push((q, w));
        }
    });
    let total: f64 = pts.iter().map(|p| p.1).sum::<f64>() * grid.cell_volume();
    if pts.is_empty() || total <= 0.0 {
        return Err(Error::Degenerate(format!(
            "grid too coarse to resolve the overlap of sectors {k} and {p}"
        )));
    }
    pts.iter_mut().for_each(|p| p.1 /= total);
    Ok(pts)
}

/// Visit the grid points inside the axis-aligned box of half-width `half`
/// around `center` (no periodic wrap).
fn for_points_in_box<F: FnMut(usize, [f64; 3])>(grid: &Grid, center: &[f64; 3], half: f64, mut f: F) {
    let lo_hi = |c: f64| {
        let h = grid.spacing();
        let l = grid.half_extent();
        let lo = (((c - half) + l) / h).ceil().max(0.0) as usize;
        let hi = ((((c + half) + l) / h).floor() as i64).min(grid.points() as i64 - 1);
        (lo, hi)
    };
    let ranges = [lo_hi(center[0]), lo_hi(center[1]), lo_hi(center[2])];
    if ranges.iter().any(|&(lo, hi)| (lo as i64) > hi) {
        return;
    }
    for i in ranges[0].0..=ranges[0].1 as usize {
        for j in ranges[1].0..=ranges[1].1 as usize {
            for k in ranges[2].0..=ranges[2].1 as usize {
                let p = grid.flat(&[i, j, k]);
                f(p, [grid.coord(i), grid.coord(j), grid.coord(k)]);
            }
        }
    }
}

/// Bogovskii operator on the shell `{a < |x| < b}`: a vector field `v`,
/// vanishing outside the open shell, with `div v = f` for mean-zero `f`
/// supported in the shell.
pub fn bogovskii_shell(f: &Field, inner: f64, outer: f64) -> Result<Field> {
    f.require_scalar()?;
    f.check_finite()?;
    let grid = f.grid();
    if grid.dim() != 3 {
        return Err(Error::param(
            "n",
            grid.dim() as f64,
            "the shell Bogovskii operator is implemented for n = 3",
        ));
    }
    let cell = grid.cell_volume();
    let data = f.component(0);
    let mut x = [0.0; 3];
    let mut support = Vec::new();
    for (p, &v) in data.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        grid.point(p, &mut x);
        let r = norm(&x);
        if !(inner < r && r < outer) {
            return Err(Error::Degenerate(format!(
                "data must vanish outside the shell {inner} < |x| < {outer}; found {v:e} at |x| = {r}"
            )));
        }
        support.push((p, v, x));
    }
    let l1: f64 = support.iter().map(|s| s.1.abs()).sum::<f64>() * cell;
    let mean: f64 = support.iter().map(|s| s.1).sum::<f64>() * cell;
    let allowed = 1e-10 * l1;
    if mean.abs() > allowed {
        return Err(Error::NotMeanZero { mean, allowed });
    }
    if support.is_empty() {
        return Ok(Field::zeros(grid, 3));
    }
    let cover = SectorCover::new(inner, outer)?;
    shell_pass(grid, &cover, &support)
}

/// One evaluation of the sector-decomposed kernel operator.
fn shell_pass(grid: &Grid, cover: &SectorCover, support: &[(usize, f64, [f64; 3])]) -> Result<Field> {
    let n = grid.dim();
    let mut out = Field::zeros(grid, n);
    let sectors = cover.axes.len();
    let mut pieces: Vec<Sparse> = vec![Sparse::new(); sectors];
    for (p, v, x) in support {
        for (k, w) in cover.partition(x) {
            pieces[k].insert(*p, v * w);
        }
    }
    balance_pieces(grid, cover, &mut pieces)?;

    let bumps: Vec<Bump> = (0..sectors)
        .map(|k| Bump::new(cover.ball_center(k), cover.ball_radius))
        .collect();
    for k in 0..sectors {
        if pieces[k].values().all(|v| *v == 0.0) {
            continue;
        }
        let partial = sector_apply(grid, cover, k, &bumps[k], &pieces[k]);
        let len = grid.len();
        let dst = out.data_mut();
        for (p, val) in partial {
            for c in 0..n {
                dst[c * len + p] += val[c];
            }
        }
    }
    Ok(out)
}

/// Bogovskii operator on the annulus `D_R = {R < |x| < R + 1}`.
pub fn bogovskii_apply(f: &Field, spec: &AnnulusSpec) -> Result<Field> {
    spec.check_grid(f.grid())?;
    bogovskii_shell(f, spec.inner, spec.outer())
}

/// Make every piece mean-zero by moving mass between overlapping sectors.
///
/// Edge flows are the minimum-norm solution of the balance equations on the
/// overlap graph: `flow_ij = pot_i - pot_j` with `Lap pot = mass`.
fn balance_pieces(grid: &Grid, cover: &SectorCover, pieces: &mut [Sparse]) -> Result<()> {
    let cell = grid.cell_volume();
    let sectors = pieces.len();
    let mut mass: Vec<f64> = pieces.iter().map(|p| p.values().sum::<f64>() * cell).collect();
    let mean = mass.iter().sum::<f64>() / sectors as f64;
    mass.iter_mut().for_each(|m| *m -= mean);

    let link = cover.support_angle;
    let mut edges = Vec::new();
    let mut nbrs = vec![Vec::new(); sectors];
    for i in 0..sectors {
        for j in (i + 1)..sectors {
            if angle(&cover.axes[i], &cover.axes[j]) <= link {
                edges.push((i, j));
                nbrs[i].push(j);
                nbrs[j].push(i);
            }
        }
    }
    let pot = graph_potential(&nbrs, &mass)?;

    let scale = mass.iter().map(|m| m.abs()).fold(0.0, f64::max);
    for (i, j) in edges {
        let flow = pot[i] - pot[j];
        if flow.abs() <= 1e-15 * scale {
            continue;
        }
        for (q, v) in transfer_profile(grid, cover, i, j)? {
            *pieces[i].entry(q).or_insert(0.0) -= flow * v;
            *pieces[j].entry(q).or_insert(0.0) += flow * v;
        }
    }
    Ok(())
}

/// Conjugate gradients for the graph Laplacian with mean-zero right-hand
/// side; the solution is taken mean-zero as well.
fn graph_potential(nbrs: &[Vec<usize>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            *o = nbrs[i].len() as f64 * x[i] - nbrs[i].iter().map(|&j| x[j]).sum::<f64>();
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut d = r.clone();
    let mut ad = vec![0.0; n];
    let target = 1e-26 * dot(rhs, rhs);
    let mut rr = dot(&r, &r);
    for _ in 0..10 * n.max(10) {
        if rr <= target {
            break;
        }
        apply(&d, &mut ad);
        let alpha = rr / dot(&d, &ad);
        x.iter_mut().zip(&d).for_each(|(x, d)| *x += alpha * d);
        r.iter_mut().zip(&ad).for_each(|(r, a)| *r -= alpha * a);
        let next = dot(&r, &r);
        let beta = next / rr;
        rr = next;
        d.iter_mut().zip(&r).for_each(|(d, r)| *d = r + beta * *d);
    }
    if !(rr <= 1e-20 * dot(rhs, rhs).max(f64::MIN_POSITIVE)) {
        return Err(Error::Degenerate("sector overlap graph is disconnected".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    Ok(x)
}

/// Apply the sector kernel to one piece; returns `(flat index, value)` for
/// the targets in the sector that receive a nonzero value.
fn sector_apply(grid: &Grid, cover: &SectorCover, k: usize, bump: &Bump, piece: &Sparse) -> Vec<(usize, [f64; 3])> {
    let cell = grid.cell_volume();
    let mut sources: Vec<([f64; 3], f64)> = Vec::with_capacity(piece.len());
    let mut lo = bump.center.map(|c| c - cover.ball_radius);
    let mut hi = bump.center.map(|c| c + cover.ball_radius);
    let mut x = [0.0; 3];
    for (&p, &v) in piece {
        if v == 0.0 {
            continue;
        }
        grid.point(p, &mut x);
        for a in 0..3 {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
        sources.push((x, v * cell));
    }
    // Targets: grid points of the sector inside the bounding box of the
    // sources and the ball, which contains the support of the result.
    let h = grid.spacing();
    let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2])];
    let half = (0..3).map(|a| 0.5 * (hi[a] - lo[a])).fold(0.0, f64::max) + h;
    let mut targets = Vec::new();
    for_points_in_box(grid, &center, half, |p, x| {
        if (0..3).all(|a| x[a] >= lo[a] - 1e-12 && x[a] <= hi[a] + 1e-12) && cover.in_sector(k, &x) {
            targets.push((p, x));
        }
    });
    // Near x the integrand behaves like f(x) |x - y|^(1-n); subtract
    // f(x) zeta(|x - y| / r0) K(x, y) on the lattice and add its exact
    // integral, leaving a milder singularity for the grid sum.
    let h = grid.spacing();
    let r0 = 3.0 * h;
    let reach = (r0 / h).floor() as i64;
    let mut offsets = Vec::new();
    for i in -reach..=reach {
        for j in -reach..=reach {
            for l in -reach..=reach {
                let z = [i as f64 * h, j as f64 * h, l as f64 * h];
                let t = norm(&z) / r0;
                if t > 0.0 && t < 1.0 {
                    offsets.push((z, (1.0 - smoothstep(t)) * cell));
                }
            }
        }
    }
    let values = exec::map_indexed(targets.len(), |t| {
        let (p, x) = &targets[t];
        let mut acc = [0.0; 3];
        for (y, w) in &sources {
            if let Some(kv) = bump.kernel(x, y) {
                acc[0] += w * kv[0];
                acc[1] += w * kv[1];
                acc[2] += w * kv[2];
            }
        }
        if let Some(&fx) = piece.get(p) {
            if fx != 0.0 {
                let exact = bump.local_integral(x, r0);
                let mut lattice = [0.0; 3];
                for (z, w) in &offsets {
                    let y = [x[0] - z[0], x[1] - z[1], x[2] - z[2]];
                    if let Some(kv) = bump.kernel(x, &y) {
                        lattice[0] += w * kv[0];
                        lattice[1] += w * kv[1];
                        lattice[2] += w * kv[2];
                    }
                }
                for a in 0..3 {
                    acc[a] += fx * (exact[a] - lattice[a]);
                }
            }
        }
        acc
    });
    targets
        .into_iter()
        .zip(values)
        .filter(|(_, v)| v.iter().any(|c| *c != 0.0))
        .map(|((p, _), v)| (p, v))
        .collect()
}

// ---------------------------------------------------------------------------
// Discrete calculus

/// Periodic second-order central-difference divergence.
pub fn discrete_divergence(v: &Field) -> Result<Field> {
    v.require_vector()?;
    let grid = v.grid();
    let n = grid.dim();
    let pts = grid.points();
    let h = grid.spacing();
    let mut out = vec![0.0; grid.len()];
    exec::for_each_chunk_mut(&mut out, exec::CHUNK, |ci, chunk| {
        let mut idx = [0usize; crate::grid::MAX_DIM];
        for (k, o) in chunk.iter_mut().enumerate() {
            let p = ci * exec::CHUNK + k;
            grid.unflatten(p, &mut idx);
            let mut acc = 0.0;
            for (a, &i) in idx[..n].iter().enumerate() {
                let stride = pts.pow((n - 1 - a) as u32);
                let up = if i + 1 == pts {
                    p + stride - pts * stride
                } else {
                    p + stride
                };
                let dn = if i == 0 { p + pts * stride - stride } else { p - stride };
                let comp = v.component(a);
                acc += (comp[up] - comp[dn]) / (2.0 * h);
            }
            *o = acc;
        }
    });
    Field::from_vec(grid, 1, out)
}

/// Periodic central-difference gradient of every component, stored at
/// component `i * n + j` for `d_j v_i`.
pub fn discrete_gradient_tensor(v: &Field) -> Result<Field> {
    let grid = v.grid();
    let n = grid.dim();
    let pts = grid.points();
    let h = grid.spacing();
    let len = grid.len();
    let mut parts = Vec::with_capacity(v.components() * n);
    for i in 0..v.components() {
        let comp = v.component(i);
        for a in 0..n {
            let stride = pts.pow((n - 1 - a) as u32);
            let mut out = vec![0.0; len];
            exec::for_each_chunk_mut(&mut out, exec::CHUNK, |ci, chunk| {
                for (k, o) in chunk.iter_mut().enumerate() {
                    let p = ci * exec::CHUNK + k;
                    let ia = (p / stride) % pts;
                    let up = if ia + 1 == pts {
                        p + stride - pts * stride
                    } else {
                        p + stride
                    };
                    let dn = if ia == 0 { p + pts * stride - stride } else { p - stride };
                    *o = (comp[up] - comp[dn]) / (2.0 * h);
                }
            });
            parts.push(Field::from_vec(grid, 1, out)?);
        }
    }
    Field::stack(&parts)
}

/// `(||v||^2 + ||grad v||^2)^(1/2)` with the spectral gradient. The
/// central-difference gradient under-resolves the kinks of a compactly
/// supported field and creeps up slowly under refinement.
pub fn w12_norm(v: &Field) -> Result<f64> {
    let g = v.gradient_tensor()?;
    Ok((v.l2_norm().powi(2) + g.l2_norm().powi(2)).sqrt())
}

// ---------------------------------------------------------------------------
// Solenoidal extension

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExtensionOptions {
    /// Allowed `||div u0|| / ||grad u0||` on `|x| > R` (spectral derivatives).
    pub div_tol: f64,
    /// Allowed `|int (grad phi) . u0| / ||(grad phi) . u0||_{L^1}` before
    /// the residual mean is removed.
    pub mean_tol: f64,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        Self {
            div_tol: 1e-8,
            mean_tol: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Extension {
    #[serde(skip)]
    pub field: Field,
    /// Grid integral of `(grad phi_R) . u0` before correction.
    pub flux_mean: f64,
    /// `||(grad phi_R) . u0||_{L^1}`.
    pub flux_l1: f64,
}

/// `v0 = (1 - phi_R) u0 + B[(grad phi_R) . u0]`, with the Bogovskii operator
/// taken on the shell `{R + 2 < |x| < R + 3}` where `grad phi_R` lives.
pub fn solenoidal_extension(u0: &Field, spec: &AnnulusSpec) -> Result<Field> {
    Ok(solenoidal_extension_with(u0, spec, &ExtensionOptions::default())?.field)
}

pub fn solenoidal_extension_with(u0: &Field, spec: &AnnulusSpec, opts: &ExtensionOptions) -> Result<Extension> {
    u0.require_vector()?;
    u0.check_finite()?;
    let grid = u0.grid();
    let r = spec.inner;
    let shell = AnnulusSpec::new(r + 2.0)?;
    shell.check_grid(grid)?;
    check_exterior_divergence(u0, r, opts.div_tol)?;

    let cut = CutoffPair::new(grid, r)?;
    let n = grid.dim();
    let len = grid.len();
    let mut flux = vec![0.0; len];
    for c in 0..n {
        let g = cut.grad_phi.component(c);
        let u = u0.component(c);
        flux.iter_mut().zip(g.iter().zip(u)).for_each(|(f, (g, u))| *f += g * u);
    }
    let cell = grid.cell_volume();
    let flux_mean: f64 = flux.iter().sum::<f64>() * cell;
    let flux_l1: f64 = flux.iter().map(|v| v.abs()).sum::<f64>() * cell;
    if flux_mean.abs() > opts.mean_tol * flux_l1 {
        return Err(Error::NotMeanZero {
            mean: flux_mean,
            allowed: opts.mean_tol * flux_l1,
        });
    }
    if flux_mean != 0.0 {
        // Quadrature leaves a small mean; remove it with a bump in the shell.
        let mid = shell.inner + 0.5;
        let center = [mid, 0.0, 0.0];
        for (p, v) in transfer_bump(grid, &center, 0.4)? {
            flux[p] -= flux_mean * v;
        }
    }
    let g = Field::from_vec(grid, 1, flux)?;
    let correction = bogovskii_shell(&g, shell.inner, shell.outer())?;

    let mut field = u0.clone();
    for c in 0..n {
        let phi = cut.phi.component(0);
        let add = correction.component(c);
        for ((v, p), a) in field.component_mut(c).iter_mut().zip(phi).zip(add) {
            *v = (1.0 - p) * *v + a;
        }
    }
    Ok(Extension {
        field,
        flux_mean,
        flux_l1,
    })
}

fn check_exterior_divergence(u0: &Field, r: f64, tol: f64) -> Result<()> {
    let grid = u0.grid();
    let div = u0.divergence()?;
    let grad = u0.gradient_tensor()?;
    let n = grid.dim();
    let len = grid.len();
    let mut num = 0.0;
    let mut den = 0.0;
    for p in 0..len {
        if grid.radius_sq(p) <= r * r {
            continue;
        }
        num += div.component(0)[p].powi(2);
        den += (0..n * n).map(|c| grad.component(c)[p].powi(2)).sum::<f64>();
    }
    if den == 0.0 {
        return Ok(());
    }
    let defect = (num / den).sqrt();
    if defect > tol {
        return Err(Error::NotSolenoidal { defect, allowed: tol });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoothstep_profile() {
        assert_eq!(smoothstep(0.0), 0.0);
        assert_eq!(smoothstep(1.0), 1.0);
        assert_eq!(smoothstep(-3.0), 0.0);
        assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
        let e = 1e-6;
        for t in [0.1, 0.4, 0.8] {
            let fd = (smoothstep(t + e) - smoothstep(t - e)) / (2.0 * e);
            assert!((fd - smoothstep_deriv(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn cutoff_plateaus() {
        let grid = Grid::new(3, 32, 6.0).unwrap();
        let c = CutoffPair::new(&grid, 1.0).unwrap();
        let mut x = [0.0; 3];
        for p in 0..grid.len() {
            grid.point(p, &mut x);
            let r = norm(&x);
            let phi = c.phi.component(0)[p];
            let psi = c.psi.component(0)[p];
            assert!((0.0..=1.0).contains(&phi) && (0.0..=1.0).contains(&psi));
            if r <= 3.0 {
                assert_eq!(phi, 1.0);
            }
            if r >= 4.0 {
                assert_eq!(phi, 0.0);
            }
            if r <= 2.0 {
                assert_eq!(psi, 1.0);
            }
            if r >= 3.0 {
                assert_eq!(psi, 0.0);
            }
            let g: f64 = (0..3).map(|a| c.grad_phi.component(a)[p].abs()).sum();
            if !(3.0 < r && r < 4.0) {
                assert_eq!(g, 0.0);
            }
        }
        assert!(CutoffPair::new(&grid, 3.5).is_err());
    }

    #[test]
    fn sectors_are_star_shaped() {
        let cover = SectorCover::new(1.0, 2.0).unwrap();
        let k = 3;
        let m = cover.ball_center(k);
        let axis = cover.axes[k];
        // Sample points of the sector and of the ball; every segment must
        // stay in the sector.
        let probe = fibonacci_sphere(400);
        let mut checked = 0;
        for d in &probe {
            if angle(d, &axis) >= cover.cap_angle {
                continue;
            }
            for r in [1.001, 1.3, 1.7, 1.999] {
                let x = [d[0] * r, d[1] * r, d[2] * r];
                for e in probe.iter().step_by(7) {
                    let y = [
                        m[0] + 0.999 * cover.ball_radius * e[0],
                        m[1] + 0.999 * cover.ball_radius * e[1],
                        m[2] + 0.999 * cover.ball_radius * e[2],
                    ];
                    for s in 1..20 {
                        let t = s as f64 / 20.0;
                        let z = [
                            x[0] + t * (y[0] - x[0]),
                            x[1] + t * (y[1] - x[1]),
                            x[2] + t * (y[2] - x[2]),
                        ];
                        assert!(cover.in_sector(k, &z));
                    }
                    checked += 1;
                }
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn partition_sums_to_one() {
        let cover = SectorCover::new(1.0, 2.0).unwrap();
        for d in fibonacci_sphere(500) {
            let w = cover.partition(&d);
            let s: f64 = w.iter().map(|p| p.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(w.iter().all(|(k, _)| angle(&d, &cover.axes[*k]) < cover.support_angle));
        }
    }

    #[test]
    fn bump_has_unit_mass() {
        let b = Bump::new([0.0; 3], 0.7);
        // Radial quadrature of 4 pi r^2 theta(r).
        let m = 4000;
        let mut acc = 0.0;
        for i in 0..m {
            let r = (i as f64 + 0.5) / m as f64 * 0.7;
            let u = 1.0 - r * r / 0.49;
            acc += 4.0 * std::f64::consts::PI * r * r * b.scale * u.powi(3) * 0.7 / m as f64;
        }
        assert!((acc - 1.0).abs() < 1e-6);
    }

    #[test]
    fn local_integral_matches_brute_force() {
        let b = Bump::new([1.5, 0.0, 0.0], 0.25);
        for x in [[1.2, 0.1, 0.0], [1.45, 0.05, 0.02], [1.1, -0.3, 0.2]] {
            let r0 = 0.15;
            let fast = b.local_integral(&x, r0);
            let dirs = fibonacci_sphere(40000);
            let mut slow = [0.0; 3];
            let m = 40;
            for i in 0..m {
                let r = (i as f64 + 0.5) / m as f64 * r0;
                let zeta = 1.0 - smoothstep(r / r0);
                for w in &dirs {
                    let y = [x[0] - r * w[0], x[1] - r * w[1], x[2] - r * w[2]];
                    if let Some(k) = b.kernel(&x, &y) {
                        let q = zeta * r * r * (r0 / m as f64) * 4.0 * std::f64::consts::PI / dirs.len() as f64;
                        for a in 0..3 {
                            slow[a] += q * k[a];
                        }
                    }
                }
            }
            let scale = slow.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for a in 0..3 {
                assert!((fast[a] - slow[a]).abs() < 2e-3 * scale, "{x:?} {fast:?} {slow:?}");
            }
        }
    }

    #[test]
    fn kernel_divergence_is_minus_bump() {
        let b = Bump::new([1.5, 0.0, 0.0], 0.25);
        let y0 = [1.0, 0.3, -0.1];
        let e = 1e-5;
        for x in [
            [1.45, 0.05, 0.02],
            [1.3, 0.2, 0.0],
            [1.2, 0.25, -0.05],
            [1.6, -0.1, 0.1],
        ] {
            let mut div = 0.0;
            for a in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[a] += e;
                xm[a] -= e;
                let kp = b.kernel(&xp, &y0).unwrap_or([0.0; 3]);
                let km = b.kernel(&xm, &y0).unwrap_or([0.0; 3]);
                div += (kp[a] - km[a]) / (2.0 * e);
            }
            let d2 = (x[0] - 1.5f64).powi(2) + x[1] * x[1] + x[2] * x[2];
            let theta = b.scale * (1.0 - d2 / b.rho2).max(0.0).powi(3);
            assert!((div + theta).abs() < 1e-4 * (1.0 + theta), "{x:?}: {div} vs {}", -theta);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let grid = Grid::new(3, 16, 3.0).unwrap();
        let spec = AnnulusSpec::new(1.0).unwrap();
        let v = bogovskii_apply(&Field::zeros(&grid, 1), &spec).unwrap();
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn rejects_mean_and_support_violations() {
        let grid = Grid::new(3, 16, 3.0).unwrap();
        let spec = AnnulusSpec::new(1.0).unwrap();
        let f = Field::scalar_from_fn(&grid, |x| {
            let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if spec.contains(r) {
                1.0
            } else {
                0.0
            }
        });
        assert!(matches!(bogovskii_apply(&f, &spec), Err(Error::NotMeanZero { .. })));
        let g = Field::scalar_from_fn(&grid, |_| 1.0);
        assert!(matches!(bogovskii_apply(&g, &spec), Err(Error::Degenerate(_))));
        assert!(AnnulusSpec::new(0.0).is_err());
        assert!(AnnulusSpec::new(1.5).unwrap().check_grid(&grid).is_err());
    }
}
