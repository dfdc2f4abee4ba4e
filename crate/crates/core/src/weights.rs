//! Radial weights, Muckenhoupt diagnostics, the maximal function and the
//! exponent feasibility checker for the periodic existence hypotheses.

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exec;
use crate::grid::{Field, Grid, MAX_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightForm {
    /// `<x>^s = (1 + |x|^2)^(s/2)`
    Inhomogeneous,
    /// `|x|^s`
    Homogeneous,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialWeight {
    pub form: WeightForm,
    pub s: f64,
}

impl RadialWeight {
    pub fn new(form: WeightForm, s: f64) -> Result<Self> {
        if !s.is_finite() {
            return Err(Error::param("s", s, "weight exponent must be finite"));
        }
        Ok(Self { form, s })
    }

    /// `<x>^s`.
    pub fn bracket(s: f64) -> Result<Self> {
        Self::new(WeightForm::Inhomogeneous, s)
    }

    /// `|x|^s`.
    pub fn homogeneous(s: f64) -> Result<Self> {
        Self::new(WeightForm::Homogeneous, s)
    }

    /// Weight value at a point with `|x|^2 = r2`. The homogeneous form at the
    /// origin returns `+inf` for `s < 0`.
    pub fn eval_sq(&self, r2: f64) -> f64 {
        match self.form {
            WeightForm::Inhomogeneous => (1.0 + r2).powf(0.5 * self.s),
            WeightForm::Homogeneous => {
                if r2 == 0.0 {
                    if self.s < 0.0 {
                        f64::INFINITY
                    } else if self.s == 0.0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    r2.powf(0.5 * self.s)
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_sq(x.iter().map(|v| v * v).sum())
    }

    /// The weight raised to the power `p`.
    pub fn powf(&self, p: f64) -> RadialWeight {
        RadialWeight {
            form: self.form,
            s: self.s * p,
        }
    }
}

/// Open interval `(lower, upper)`; empty when `lower >= upper`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpenInterval {
    pub lower: f64,
    pub upper: f64,
}

impl OpenInterval {
    pub fn is_empty(&self) -> bool {
        self.lower >= self.upper
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

/// Exponents `s` for which `<x>^(sq)` is an `A_q` weight on `R^n`:
/// `(-n/q, n(1 - 1/q))`.
pub fn admissible_range(q: f64, n: usize) -> Result<OpenInterval> {
    check_lebesgue(q)?;
    let n = n as f64;
    Ok(OpenInterval {
        lower: -n / q,
        upper: n * (1.0 - 1.0 / q),
    })
}

fn check_lebesgue(q: f64) -> Result<()> {
    if !(q > 1.0 && q.is_finite()) {
        return Err(Error::param("q", q, "Lebesgue index must satisfy 1 < q < inf"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// A_q checker

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Finite,
    Diverging,
    Inconclusive,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CubeSample {
    pub center: Vec<f64>,
    pub side: f64,
    /// `(avg w)(avg w^(-1/(q-1)))^(q-1)`; serialized as `"inf"` when the
    /// weight or its dual is not locally integrable on the cube.
    #[serde(serialize_with = "ser_extended")]
    pub product: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct AqReport {
    pub q: f64,
    pub weight: RadialWeight,
    pub samples: Vec<CubeSample>,
    #[serde(rename = "sup", serialize_with = "ser_extended")]
    pub sup_estimate: f64,
    /// Ratio of the running sup at the largest side to the running sup one
    /// decade earlier.
    #[serde(serialize_with = "ser_extended")]
    pub last_decade_growth: f64,
    pub verdict: Verdict,
}

/// Cube centers: the origin plus points `(r, 0, ..., 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CenterSpec {
    pub axis_offsets: Vec<f64>,
}

impl CenterSpec {
    pub fn origin_only() -> Self {
        Self {
            axis_offsets: Vec::new(),
        }
    }

    /// Origin plus `first * ratio^k`, `k = 0..count`.
    pub fn axis_ladder(first: f64, ratio: f64, count: usize) -> Self {
        Self {
            axis_offsets: (0..count).map(|k| first * ratio.powi(k as i32)).collect(),
        }
    }
}

/// Sides `10^lo, ..., 10^hi` with `per_decade` points per decade.
pub fn side_ladder(lo_exp: i32, hi_exp: i32, per_decade: usize) -> Vec<f64> {
    let steps = (hi_exp - lo_exp) as usize * per_decade;
    (0..=steps)
        .map(|k| 10f64.powf(lo_exp as f64 + k as f64 / per_decade as f64))
        .collect()
}

const FINITE_GROWTH: f64 = 1.05;
const DIVERGING_GROWTH: f64 = 1.5;

/// Sample the `A_q` product of a radial weight over a family of cubes.
///
/// The verdict compares the running sup at the largest side with the
/// running sup one decade earlier: growth below 5% is `finite`, growth by a
/// factor of at least 1.5 is `diverging`; any cube on which the weight or
/// its dual is not locally integrable also yields `diverging`.
pub fn aq_check(weight: &RadialWeight, q: f64, n: usize, sides: &[f64], centers: &CenterSpec) -> Result<AqReport> {
    check_lebesgue(q)?;
    if !(3..=MAX_DIM).contains(&n) {
        return Err(Error::param(
            "n",
            n as f64,
            format!("dimension must lie in 3..={MAX_DIM}"),
        ));
    }
    if sides.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::Degenerate("cube sides must be positive".into()));
    }
    let lo = sides.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = sides.iter().copied().fold(0.0, f64::max);
    if !(hi / lo >= 1000.0 * (1.0 - 1e-12)) {
        return Err(Error::param(
            "cube_ladder",
            hi / lo,
            "side ladder must span at least 3 decades",
        ));
    }

    let mut cubes = Vec::new();
    let mut offsets = vec![0.0];
    offsets.extend(centers.axis_offsets.iter().copied());
    for &r in &offsets {
        for &side in sides {
            let mut c = vec![0.0; n];
            c[0] = r;
            cubes.push((c, side));
        }
    }
    let products = exec::map_indexed(cubes.len(), |i| {
        let (c, side) = &cubes[i];
        cube_product(weight, q, c, *side)
    });
    let samples: Vec<CubeSample> = cubes
        .into_iter()
        .zip(products)
        .map(|((center, side), product)| CubeSample { center, side, product })
        .collect();

    let sup_estimate = samples.iter().map(|s| s.product).fold(0.0, f64::max);
    let cut = hi / 10.0 * (1.0 + 1e-9);
    let sup_prev = samples
        .iter()
        .filter(|s| s.side <= cut)
        .map(|s| s.product)
        .fold(0.0, f64::max);
    let growth = if sup_estimate.is_infinite() {
        f64::INFINITY
    } else {
        sup_estimate / sup_prev
    };
    let verdict = if !sup_estimate.is_finite() || growth >= DIVERGING_GROWTH {
        Verdict::Diverging
    } else if growth < FINITE_GROWTH {
        Verdict::Finite
    } else {
        Verdict::Inconclusive
    };
    Ok(AqReport {
        q,
        weight: *weight,
        samples,
        sup_estimate,
        last_decade_growth: growth,
        verdict,
    })
}

/// Points per axis of the cube quadrature for the inhomogeneous weight.
fn graded_points(n: usize) -> usize {
    match n {
        3 => 48,
        4 => 32,
        _ => 16,
    }
}

/// Points per axis of the uniform rule for homogeneous weights (odd, so an
/// origin-centered cube has the origin at a cell center).
fn uniform_points(n: usize) -> usize {
    match n {
        3 => 33,
        4 => 33,
        _ => 15,
    }
}

/// `(avg_Q w)(avg_Q w^(-1/(q-1)))^(q-1)` over the cube with the given
/// center and side.
pub fn cube_product(weight: &RadialWeight, q: f64, center: &[f64], side: f64) -> f64 {
    let dual = weight.powf(-1.0 / (q - 1.0));
    let n = center.len();
    let axes: Vec<(Vec<f64>, Vec<f64>)> = match weight.form {
        WeightForm::Inhomogeneous => center
            .iter()
            .map(|&c| graded_rule(c - 0.5 * side, c + 0.5 * side, graded_points(n)))
            .collect(),
        WeightForm::Homogeneous => center
            .iter()
            .map(|&c| uniform_rule(c - 0.5 * side, c + 0.5 * side, uniform_points(n)))
            .collect(),
    };

    // Cell that contains the origin, for the homogeneous singular cell.
    let singular: Option<Vec<usize>> = match weight.form {
        WeightForm::Homogeneous => center
            .iter()
            .map(|&c| {
                let lo = c - 0.5 * side;
                let m = uniform_points(n);
                let t = (0.0 - lo) / side * m as f64;
                if (0.0..(m as f64)).contains(&t) {
                    Some(t.floor() as usize)
                } else {
                    None
                }
            })
            .collect(),
        WeightForm::Inhomogeneous => None,
    };

    let mut sum_w = 0.0;
    let mut sum_d = 0.0;
    let mut sum_q = 0.0;
    let mut idx = vec![0usize; n];
    loop {
        let mut r2 = 0.0;
        let mut qw = 1.0;
        for a in 0..n {
            let (x, w) = (&axes[a].0, &axes[a].1);
            r2 += x[idx[a]] * x[idx[a]];
            qw *= w[idx[a]];
        }
        let (vw, vd) = if singular.as_deref() == Some(&idx[..]) {
            let h = side / uniform_points(n) as f64;
            (ball_average_power(weight.s, h, n), ball_average_power(dual.s, h, n))
        } else {
            (weight.eval_sq(r2), dual.eval_sq(r2))
        };
        sum_w += qw * vw;
        sum_d += qw * vd;
        sum_q += qw;

        let mut a = n;
        loop {
            if a == 0 {
                let avg_w = sum_w / sum_q;
                let avg_d = sum_d / sum_q;
                return avg_w * avg_d.powf(q - 1.0);
            }
            a -= 1;
            idx[a] += 1;
            if idx[a] < axes[a].0.len() {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Average of `|x|^e` over the ball with volume `h^n` centered at the origin;
/// `+inf` when `e <= -n`.
pub(crate) fn ball_average_power(e: f64, h: f64, n: usize) -> f64 {
    let nf = n as f64;
    if e <= -nf {
        return f64::INFINITY;
    }
    let rho = (h.powi(n as i32) / unit_ball_volume(n)).powf(1.0 / nf);
    nf / (nf + e) * rho.powf(e)
}

/// Volume of the unit ball in `R^n`.
pub fn unit_ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    // V_n = 2 pi / n * V_{n-2}
    let mut v = if n.is_multiple_of(2) { 1.0 } else { 2.0 };
    let mut k = if n.is_multiple_of(2) { 0 } else { 1 };
    while k < n {
        k += 2;
        v *= 2.0 * PI / k as f64;
    }
    v
}

/// Surface area of the unit sphere in `R^n`.
pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

fn uniform_rule(lo: f64, hi: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / m as f64;
    let x = (0..m).map(|i| lo + (i as f64 + 0.5) * h).collect();
    (x, vec![h; m])
}

/// Four-point Gauss-Legendre panels in a sinh-stretched variable, clustering
/// nodes near the point of `[lo, hi]` closest to zero, where `<x>^s` varies
/// on unit scale. `m` is rounded down to a multiple of 4.
fn graded_rule(lo: f64, hi: f64, m: usize) -> (Vec<f64>, Vec<f64>) {
    const GL_X: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const GL_W: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let panels = (m / 4).max(2);
    let p = 0.0f64.clamp(lo, hi);
    let segments: Vec<(f64, f64)> = [(p - lo, -1.0), (hi - p, 1.0)]
        .into_iter()
        .filter(|(len, _)| *len > 0.0)
        .collect();
    let total = hi - lo;
    let mut xs = Vec::with_capacity(4 * panels);
    let mut ws = Vec::with_capacity(4 * panels);
    let mut remaining = panels;
    for (k, (len, dir)) in segments.iter().enumerate() {
        let count = if k + 1 == segments.len() {
            remaining
        } else {
            ((panels as f64 * len / total).round() as usize).clamp(1, panels - 1)
        };
        remaining -= count;
        let c = len.min(1.0);
        let umax = (len / c).asinh();
        let du = umax / count as f64;
        for i in 0..count {
            let mid = (i as f64 + 0.5) * du;
            for (gx, gw) in GL_X.iter().zip(&GL_W) {
                let u = mid + 0.5 * du * gx;
                xs.push(p + dir * c * u.sinh());
                ws.push(c * u.cosh() * 0.5 * du * gw);
            }
        }
    }
    (xs, ws)
}

// ---------------------------------------------------------------------------
// Maximal function

/// Radii `h, 2h, ..., L`.
pub fn default_radius_ladder(grid: &Grid) -> Vec<f64> {
    let h = grid.spacing();
    (1..=grid.points() / 2).map(|k| k as f64 * h).collect()
}

/// Centered maximal function sampled over a ladder of radii: the pointwise
/// sup of `|f(x)|` and of the discrete ball averages of `|f|` around `x`.
///
/// Ball averages use the grid points within (periodic) distance `r`,
/// normalized by their count, and are evaluated as FFT convolutions.
pub fn maximal_function(f: &Field, radii: &[f64]) -> Result<Field> {
    f.check_finite()?;
    let grid = f.grid();
    let h = grid.spacing();
    let l = grid.half_extent();
    if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(Error::Degenerate("radius ladder must be non-empty and positive".into()));
    }
    let rmin = radii.iter().copied().fold(f64::INFINITY, f64::min);
    let rmax = radii.iter().copied().fold(0.0, f64::max);
    if rmin > h * (1.0 + 1e-12) || rmax < l * (1.0 - 1e-12) {
        return Err(Error::param(
            "radius_ladder",
            rmin,
            format!("ladder must cover [h, L] = [{h}, {l}]"),
        ));
    }

    let mags = Field::from_vec(grid, 1, f.magnitudes())?;
    let spec = mags.to_spectral()?;
    let mut out = mags.clone();
    let len = grid.len();

    for batch in radii.chunks(8) {
        let kernels: Vec<Field> = batch.iter().map(|&r| ball_kernel(grid, r)).collect();
        let kspec = Field::stack(&kernels)?.to_spectral()?;
        let mut prod = kspec.clone();
        for c in 0..batch.len() {
            let src = spec.component(0);
            prod.component_mut(c).iter_mut().zip(src).for_each(|(k, s)| *k *= s);
        }
        let conv = prod.to_physical();
        let o = out.component_mut(0);
        for c in 0..batch.len() {
            let avg = conv.component(c);
            for p in 0..len {
                o[p] = o[p].max(avg[p]);
            }
        }
    }
    Ok(out)
}

/// Normalized indicator of the grid points within periodic distance `r` of
/// the origin bin (flat index 0).
fn ball_kernel(grid: &Grid, r: f64) -> Field {
    let n = grid.points();
    let h = grid.spacing();
    let dim = grid.dim();
    let r2 = (r * (1.0 + 1e-12)).powi(2);
    let mut data = vec![0.0; grid.len()];
    let mut count = 0usize;
    let mut idx = [0usize; MAX_DIM];
    for (p, d) in data.iter_mut().enumerate() {
        grid.unflatten(p, &mut idx);
        let dist2: f64 = idx[..dim]
            .iter()
            .map(|&i| {
                let k = i.min(n - i) as f64 * h;
                k * k
            })
            .sum();
        if dist2 <= r2 {
            *d = 1.0;
            count += 1;
        }
    }
    let inv = 1.0 / count as f64;
    data.iter_mut().for_each(|v| *v *= inv);
    Field::from_vec(grid, 1, data).expect("kernel shape")
}

// ---------------------------------------------------------------------------
// Feasibility of the existence hypotheses

/// Exponents `(n, q1, q2)` with `1 < q1 < n` and `n/2 < q2 < n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    pub n: usize,
    pub q1: f64,
    pub q2: f64,
}

impl HypothesisSet {
    pub fn new(n: usize, q1: f64, q2: f64) -> Result<Self> {
        let nf = n as f64;
        if n < 3 {
            return Err(Error::param("n", nf, "dimension must be at least 3"));
        }
        if !(q1 > 1.0 && q1 < nf) {
            return Err(Error::param("q1", q1, format!("requires 1 < q1 < n = {n}")));
        }
        if !(q2 > nf / 2.0 && q2 < nf) {
            return Err(Error::param("q2", q2, format!("requires n/2 < q2 < n = {n}")));
        }
        Ok(Self { n, q1, q2 })
    }

    /// `q1 q2 / (q1 + q2)`
    pub fn q12(&self) -> f64 {
        self.q1 * self.q2 / (self.q1 + self.q2)
    }

    /// Sobolev exponent `n q2 / (n - q2)`.
    pub fn q2_star(&self) -> f64 {
        let n = self.n as f64;
        n * self.q2 / (n - self.q2)
    }

    /// `q2* q2 / (q2* + q2)`
    pub fn q22_star(&self) -> f64 {
        let s = self.q2_star();
        s * self.q2 / (s + self.q2)
    }
}

/// Interval of weight exponents `s` allowed by the hypotheses:
/// `max(0, 2 - n/q2) < s < min{n(1-1/q1), n/2 (1-1/q12), n/2 (1-1/q22*)}`.
pub fn feasibility(h: &HypothesisSet) -> OpenInterval {
    let n = h.n as f64;
    let lower = (2.0 - n / h.q2).max(0.0);
    let upper = [
        n * (1.0 - 1.0 / h.q1),
        0.5 * n * (1.0 - 1.0 / h.q12()),
        0.5 * n * (1.0 - 1.0 / h.q22_star()),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min);
    OpenInterval { lower, upper }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ladder() -> Vec<f64> {
        side_ladder(-1, 3, 4)
    }

    #[test]
    fn constant_weight_has_unit_product() {
        let w = RadialWeight::bracket(0.0).unwrap();
        let r = aq_check(&w, 2.0, 3, &ladder(), &CenterSpec::axis_ladder(1.0, 10.0, 3)).unwrap();
        assert!((r.sup_estimate - 1.0).abs() < 1e-12);
        assert_eq!(r.verdict, Verdict::Finite);
    }

    #[test]
    fn bracket_inside_range_is_finite() {
        let w = RadialWeight::bracket(2.0).unwrap();
        let r = aq_check(&w, 2.0, 3, &ladder(), &CenterSpec::origin_only()).unwrap();
        assert_eq!(r.verdict, Verdict::Finite, "growth {}", r.last_decade_growth);
    }

    #[test]
    fn homogeneous_minus_n_diverges_at_origin() {
        let w = RadialWeight::homogeneous(-3.0).unwrap();
        let r = aq_check(&w, 2.0, 3, &ladder(), &CenterSpec::origin_only()).unwrap();
        assert_eq!(r.verdict, Verdict::Diverging);
        assert!(r.sup_estimate.is_infinite());
    }

    #[test]
    fn homogeneous_inside_range_is_scale_invariant() {
        let w = RadialWeight::homogeneous(-2.0).unwrap();
        let r = aq_check(&w, 2.0, 3, &ladder(), &CenterSpec::origin_only()).unwrap();
        assert_eq!(r.verdict, Verdict::Finite);
        let p0 = r.samples[0].product;
        assert!(r.samples.iter().all(|s| (s.product / p0 - 1.0).abs() < 1e-9));
    }

    #[test]
    fn rejects_short_ladder_and_bad_q() {
        let w = RadialWeight::bracket(1.0).unwrap();
        let short = side_ladder(0, 2, 2);
        assert!(aq_check(&w, 2.0, 3, &short, &CenterSpec::origin_only()).is_err());
        assert!(aq_check(&w, 1.0, 3, &ladder(), &CenterSpec::origin_only()).is_err());
    }

    #[test]
    fn graded_rule_converges() {
        // 48 points per axis against a 160-point rule on the same family.
        for (alpha, side) in [(-3.0, 100.0), (2.0, 1000.0), (-2.0, 10.0)] {
            let w = RadialWeight::bracket(alpha).unwrap();
            let dual = w.powf(-1.0);
            let avg = |wt: &RadialWeight, m: usize| {
                let (x, h) = graded_rule(-0.5 * side, 0.5 * side, m);
                let m = x.len();
                let mut s = 0.0;
                let mut t = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            let q = h[i] * h[j] * h[k];
                            s += q * wt.eval_sq(x[i] * x[i] + x[j] * x[j] + x[k] * x[k]);
                            t += q;
                        }
                    }
                }
                s / t
            };
            let fine = avg(&w, 160) * avg(&dual, 160);
            let coarse = cube_product(&w, 2.0, &[0.0; 3], side);
            assert!((coarse / fine - 1.0).abs() < 0.01, "alpha {alpha}: {coarse} vs {fine}");
        }
    }

    #[test]
    fn ball_volumes() {
        use std::f64::consts::PI;
        assert!((unit_ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-14);
        assert!((unit_ball_volume(4) - PI * PI / 2.0).abs() < 1e-14);
        assert!((unit_sphere_area(3) - 4.0 * PI).abs() < 1e-14);
    }

    #[test]
    fn admissible_range_examples() {
        let r = admissible_range(3.0, 3).unwrap();
        assert!((r.lower + 1.0).abs() < 1e-15 && (r.upper - 2.0).abs() < 1e-15);
        let r = admissible_range(2.0, 4).unwrap();
        assert!((r.lower + 2.0).abs() < 1e-15 && (r.upper - 2.0).abs() < 1e-15);
        assert!(admissible_range(1.0, 3).is_err());
    }

    #[test]
    fn feasibility_n5() {
        let h = HypothesisSet::new(5, 4.0, 3.0).unwrap();
        // min-terms 3.75, 25/24, 4/3 evaluated by hand.
        let terms: [f64; 3] = [
            5.0 * (1.0 - 1.0 / 4.0),
            2.5 * (1.0 - 7.0 / 12.0),
            2.5 * (1.0 - 7.0 / 15.0),
        ];
        assert!((terms[0] - 3.75).abs() < 1e-15);
        assert!((terms[1] - 25.0 / 24.0).abs() < 1e-15);
        assert!((terms[2] - 4.0 / 3.0).abs() < 1e-15);
        let iv = feasibility(&h);
        assert!((iv.lower - 1.0 / 3.0).abs() < 1e-14);
        assert!((iv.upper - 25.0 / 24.0).abs() < 1e-14);

        let h = HypothesisSet::new(5, 4.0, 2.6).unwrap();
        let iv = feasibility(&h);
        assert!((iv.lower - (2.0 - 5.0 / 2.6)).abs() < 1e-14);
        assert!(!iv.is_empty());
    }

    #[test]
    fn feasibility_rejects_out_of_range() {
        assert!(HypothesisSet::new(3, 1.0, 2.0).is_err());
        assert!(HypothesisSet::new(3, 2.0, 1.5).is_err());
        assert!(HypothesisSet::new(3, 2.0, 3.0).is_err());
    }

    proptest! {
        #[test]
        fn feasibility_monotone_in_n(a in 0.05f64..0.95, b in 0.51f64..0.99) {
            let mut seen_nonempty = false;
            for n in 3..=20usize {
                let nf = n as f64;
                let (q1, q2) = (a * nf, b * nf);
                let Ok(h) = HypothesisSet::new(n, q1, q2) else { continue };
                let iv = feasibility(&h);
                if seen_nonempty {
                    prop_assert!(!iv.is_empty(), "n={} emptied", n);
                }
                seen_nonempty |= !iv.is_empty();
            }
        }
    }
}
