//! Subcommand arguments and their runners.

use std::f64::consts::PI;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use stokeslab::corpus::Corpus;
use stokeslab::exterior::{
    bogovskii_apply, discrete_divergence, solenoidal_extension_with, AnnulusSpec, CutoffPair, ExtensionOptions,
};
use stokeslab::periodic::{
    linear_response, periodicity_check, picard_solve, weighted_report, PeriodicForce, PeriodicSolution, PicardConfig,
};
use stokeslab::semigroup::{decay_harness, default_t_ladder, fractional_integral, DecayParams};
use stokeslab::weights::{
    admissible_range, aq_check, default_radius_ladder, feasibility, maximal_function, side_ladder, CenterSpec,
    HypothesisSet, RadialWeight, WeightForm,
};
use stokeslab::{integrate, Field, Grid};

use crate::config::{need, GridArgs, Layered, RunArgs};
use crate::output::{num, Artifact, Outcome};
use crate::CliError;

macro_rules! layered {
    ($ty:ty, $defaults:expr) => {
        impl Layered for $ty {
            fn run(&self) -> &RunArgs {
                &self.run
            }
            fn run_mut(&mut self) -> &mut RunArgs {
                &mut self.run
            }
            fn defaults() -> Value {
                let mut base = json!({ "out": "stokeslab-out", "seed": 1 });
                let extra: Value = $defaults;
                base.as_object_mut()
                    .expect("object")
                    .extend(extra.as_object().expect("object").clone());
                base
            }
        }
    };
}

fn grid_defaults(points: usize, half_extent: f64) -> Value {
    json!({ "n": 3, "points": points, "half_extent": half_extent })
}

fn merge(a: Value, b: Value) -> Value {
    let mut a = a;
    a.as_object_mut()
        .expect("object")
        .extend(b.as_object().expect("object").clone());
    a
}

// ---------------------------------------------------------------------------
// check-weight

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct CheckWeightArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    /// Weight exponent alpha of <x>^alpha (or |x|^alpha).
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Lebesgue index q > 1.
    #[arg(long)]
    pub q: Option<f64>,
    /// Dimension n.
    #[arg(long)]
    pub n: Option<usize>,
    /// `bracket` for <x>^alpha, `homogeneous` for |x|^alpha.
    #[arg(long)]
    pub form: Option<String>,
    /// Smallest cube side is 10^lo_exp.
    #[arg(long, allow_hyphen_values = true)]
    pub lo_exp: Option<i32>,
    /// Largest cube side is 10^hi_exp.
    #[arg(long, allow_hyphen_values = true)]
    pub hi_exp: Option<i32>,
    /// Cube sides per decade.
    #[arg(long)]
    pub per_decade: Option<usize>,
    /// Extra centres (10^k, 0, ..., 0), k = 0..offsets, besides the origin.
    #[arg(long)]
    pub offsets: Option<usize>,
}

layered!(
    CheckWeightArgs,
    json!({ "q": 2.0, "n": 3, "form": "bracket", "lo_exp": -1, "hi_exp": 3, "per_decade": 4, "offsets": 0 })
);

fn weight_form(name: &str) -> Result<WeightForm, CliError> {
    match name {
        "bracket" => Ok(WeightForm::Inhomogeneous),
        "homogeneous" => Ok(WeightForm::Homogeneous),
        other => Err(CliError::Config(format!(
            "form must be `bracket` or `homogeneous`, got `{other}`"
        ))),
    }
}

pub fn check_weight(a: &CheckWeightArgs) -> Result<Outcome, CliError> {
    let alpha = need(a.alpha, "alpha")?;
    let q = need(a.q, "q")?;
    let n = need(a.n, "n")?;
    let form = weight_form(&need(a.form.clone(), "form")?)?;
    let weight = RadialWeight::new(form, alpha)?;
    let sides = side_ladder(
        need(a.lo_exp, "lo_exp")?,
        need(a.hi_exp, "hi_exp")?,
        need(a.per_decade, "per_decade")?,
    );
    let centers = CenterSpec::axis_ladder(1.0, 10.0, need(a.offsets, "offsets")?);
    let report = aq_check(&weight, q, n, &sides, &centers)?;
    let range = admissible_range(q, n)?;
    let rows: Vec<Vec<String>> = report
        .samples
        .iter()
        .map(|s| vec![num(s.center[0]), num(s.side), num(s.product)])
        .collect();
    let summary = json!({
        "alpha": alpha,
        "q": q,
        "n": n,
        "form": a.form,
        "verdict": report.verdict,
        "sup": serde_json::to_value(&report)?["sup"],
        "last_decade_growth": serde_json::to_value(&report)?["last_decade_growth"],
        "analytic_alpha_range": { "lower": q * range.lower, "upper": q * range.upper },
        "alpha_in_analytic_range": range.contains(alpha / q),
    });
    Ok(Outcome::summary(summary)
        .with(Artifact::json("aq_report.json", &serde_json::to_value(&report)?)?)
        .with(Artifact::csv("cubes.csv", &["center_x1", "side", "product"], &rows)?))
}

// ---------------------------------------------------------------------------
// admissible-range

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct AdmissibleRangeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    /// Lebesgue index q > 1.
    #[arg(long)]
    pub q: Option<f64>,
    /// Dimension n.
    #[arg(long)]
    pub n: Option<usize>,
}

layered!(AdmissibleRangeArgs, json!({ "q": 2.0, "n": 3 }));

pub fn admissible(a: &AdmissibleRangeArgs) -> Result<Outcome, CliError> {
    let q = need(a.q, "q")?;
    let n = need(a.n, "n")?;
    let r = admissible_range(q, n)?;
    Ok(Outcome::summary(json!({
        "q": q,
        "n": n,
        "s_range": { "lower": r.lower, "upper": r.upper },
        "alpha_range": { "lower": q * r.lower, "upper": q * r.upper },
        "empty": r.is_empty(),
    })))
}

// ---------------------------------------------------------------------------
// feasibility

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct FeasibilityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    /// Dimension n.
    #[arg(long)]
    pub n: Option<usize>,
    /// Exponent q1 in (1, n); with q2, evaluates a single point.
    #[arg(long)]
    pub q1: Option<f64>,
    /// Exponent q2 in (n/2, n).
    #[arg(long)]
    pub q2: Option<f64>,
    /// Scan step over the open box (1, n) x (n/2, n) when q1, q2 are absent.
    #[arg(long)]
    pub step: Option<f64>,
}

layered!(FeasibilityArgs, json!({ "n": 3, "step": 0.01 }));

fn interval_json(h: &HypothesisSet) -> Value {
    let r = feasibility(h);
    json!({
        "n": h.n,
        "q1": h.q1,
        "q2": h.q2,
        "q12": h.q12(),
        "q2_star": h.q2_star(),
        "q22_star": h.q22_star(),
        "lower": r.lower,
        "upper": r.upper,
        "empty": r.is_empty(),
    })
}

/// Interior points `lo + k step` of the open interval `(lo, hi)`.
fn open_ladder(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    (1..)
        .map(|k| lo + k as f64 * step)
        .take_while(|v| *v < hi - 1e-9 * step)
        .collect()
}

pub fn feasibility_cmd(a: &FeasibilityArgs) -> Result<Outcome, CliError> {
    let n = need(a.n, "n")?;
    match (a.q1, a.q2) {
        (Some(q1), Some(q2)) => {
            let h = HypothesisSet::new(n, q1, q2)?;
            Ok(Outcome::summary(interval_json(&h)))
        }
        (None, None) => {
            let step = need(a.step, "step")?;
            if !(step > 0.0 && step < 1.0) {
                return Err(CliError::Config(format!("step must lie in (0, 1), got {step}")));
            }
            let nf = n as f64;
            let mut rows = Vec::new();
            let mut feasible = 0usize;
            let mut widest: Option<Value> = None;
            let mut best = 0.0;
            for q1 in open_ladder(1.0, nf, step) {
                for q2 in open_ladder(0.5 * nf, nf, step) {
                    let h = HypothesisSet::new(n, q1, q2)?;
                    let r = feasibility(&h);
                    if !r.is_empty() {
                        feasible += 1;
                        if r.upper - r.lower > best {
                            best = r.upper - r.lower;
                            widest = Some(interval_json(&h));
                        }
                    }
                    rows.push(vec![
                        num(q1),
                        num(q2),
                        num(r.lower),
                        num(r.upper),
                        (!r.is_empty()).to_string(),
                    ]);
                }
            }
            let summary = json!({
                "n": n,
                "step": step,
                "points": rows.len(),
                "feasible_points": feasible,
                "widest": widest,
            });
            Ok(Outcome::summary(summary).with(Artifact::csv(
                "feasibility.csv",
                &["q1", "q2", "lower", "upper", "feasible"],
                &rows,
            )?))
        }
        _ => Err(CliError::Config("give both q1 and q2, or neither to scan".into())),
    }
}

// ---------------------------------------------------------------------------
// maximal

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct MaximalArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Lebesgue index q > 1.
    #[arg(long)]
    pub q: Option<f64>,
    /// Weight exponent s of the norm ||<x>^s f||_q.
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<f64>,
    /// Corpus fields to test.
    #[arg(long)]
    pub samples: Option<usize>,
}

layered!(
    MaximalArgs,
    merge(grid_defaults(32, 8.0), json!({ "q": 2.0, "s": 0.0, "samples": 3 }))
);

pub fn maximal(a: &MaximalArgs) -> Result<Outcome, CliError> {
    let grid = a.grid.build()?;
    let q = need(a.q, "q")?;
    let s = need(a.s, "s")?;
    let weight = RadialWeight::bracket(s)?;
    let radii = default_radius_ladder(&grid);
    let mut corpus = Corpus::new(need(a.run.seed, "seed")?, grid.dim());
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    let mut files = Vec::new();
    for (k, sample) in corpus.scalars(need(a.samples, "samples")?).iter().enumerate() {
        let f = sample.sample(&grid);
        let mf = maximal_function(&f, &radii)?;
        let nf = integrate(&f, q, Some(&weight))?;
        let nm = integrate(&mf, q, Some(&weight))?;
        worst = worst.max(nm / nf);
        rows.push(vec![k.to_string(), num(nf), num(nm), num(nm / nf)]);
        if k == 0 {
            files.push(Artifact::field("maximal_0.bin", &mf)?);
        }
    }
    let alpha = s * q;
    let range = admissible_range(q, grid.dim())?;
    let mut out = Outcome::summary(json!({
        "q": q,
        "s": s,
        "weight_exponent": alpha,
        "weight_in_analytic_range": range.contains(s),
        "radii": radii.len(),
        "max_ratio": worst,
    }))
    .with(Artifact::csv(
        "maximal.csv",
        &["sample", "norm_f", "norm_mf", "ratio"],
        &rows,
    )?);
    out.files.extend(files);
    Ok(out)
}

// ---------------------------------------------------------------------------
// decay

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct DecayArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Source index p.
    #[arg(long)]
    pub p: Option<f64>,
    /// Target index q >= p.
    #[arg(long)]
    pub q: Option<f64>,
    /// Source weight exponent s.
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<f64>,
    /// Target weight exponent s0 <= s.
    #[arg(long, allow_hyphen_values = true)]
    pub s0: Option<f64>,
    /// Derivative order |alpha| (0, 1 or 2).
    #[arg(long)]
    pub order: Option<usize>,
    /// Largest time of the ladder t = 2^(k/2).
    #[arg(long)]
    pub tmax: Option<f64>,
    /// Corpus fields to test.
    #[arg(long)]
    pub samples: Option<usize>,
}

layered!(
    DecayArgs,
    merge(
        grid_defaults(64, 16.0),
        json!({ "p": 2.0, "q": 2.0, "s": 0.0, "s0": 0.0, "order": 0, "tmax": 64.0, "samples": 10 })
    )
);

pub fn decay(a: &DecayArgs) -> Result<Outcome, CliError> {
    let grid = a.grid.build()?;
    let params = DecayParams::new(
        need(a.p, "p")?,
        need(a.q, "q")?,
        need(a.s, "s")?,
        need(a.s0, "s0")?,
        need(a.order, "order")?,
    )?;
    let ladder = default_t_ladder(need(a.tmax, "tmax")?);
    let mut corpus = Corpus::new(need(a.run.seed, "seed")?, grid.dim());
    let mut per_sample = Vec::new();
    let mut files = Vec::new();
    let (mut compliance, mut excess) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (k, sample) in corpus.solenoidals(need(a.samples, "samples")?).iter().enumerate() {
        let u0 = sample.sample(&grid);
        let report = decay_harness(&u0, &params, &ladder)?;
        compliance = compliance.max(report.bound_compliance);
        excess = excess.max(report.fit.slope - report.predicted_exponent);
        per_sample.push(json!({
            "sample": k,
            "bound_compliance": report.bound_compliance,
            "slope": report.fit.slope,
            "r2": report.fit.r2,
        }));
        files.push(Artifact::raw(format!("decay_{k:02}.csv"), report.to_csv().into_bytes()));
    }
    let mut out = Outcome::summary(json!({
        "params": params,
        "predicted_exponent": params.predicted_exponent(grid.dim()),
        "max_bound_compliance": compliance,
        "max_slope_excess": excess,
        "samples": per_sample,
    }));
    out.files = files;
    Ok(out)
}

// ---------------------------------------------------------------------------
// frac-integral

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct FracIntegralArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Order lambda in (0, n).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Source index p in (1, n / lambda); the target index q solves
    /// 1/q = 1/p - lambda/n.
    #[arg(long)]
    pub p: Option<f64>,
    /// Corpus fields to test.
    #[arg(long)]
    pub samples: Option<usize>,
}

layered!(
    FracIntegralArgs,
    merge(grid_defaults(32, 8.0), json!({ "lambda": 1.0, "p": 2.0, "samples": 3 }))
);

pub fn frac_integral(a: &FracIntegralArgs) -> Result<Outcome, CliError> {
    let grid = a.grid.build()?;
    let lambda = need(a.lambda, "lambda")?;
    let p = need(a.p, "p")?;
    let nf = grid.dim() as f64;
    let inv_q = 1.0 / p - lambda / nf;
    if !(p > 1.0 && inv_q > 0.0) {
        return Err(CliError::Config(format!(
            "need 1 < p < n / lambda = {} for a finite target index",
            nf / lambda
        )));
    }
    let q = 1.0 / inv_q;
    let mut corpus = Corpus::new(need(a.run.seed, "seed")?, grid.dim());
    let mut rows = Vec::new();
    let mut files = Vec::new();
    let mut worst: f64 = 0.0;
    for (k, sample) in corpus.scalars(need(a.samples, "samples")?).iter().enumerate() {
        let f = sample.sample(&grid);
        let g = fractional_integral(&f, lambda)?;
        let nf_ = integrate(&f, p, None)?;
        let ng = integrate(&g, q, None)?;
        worst = worst.max(ng / nf_);
        rows.push(vec![k.to_string(), num(nf_), num(ng), num(ng / nf_)]);
        if k == 0 {
            files.push(Artifact::field("frac_0.bin", &g)?);
        }
    }
    let mut out = Outcome::summary(json!({
        "lambda": lambda,
        "p": p,
        "q": q,
        "max_ratio": worst,
    }))
    .with(Artifact::csv(
        "frac.csv",
        &["sample", "norm_f_p", "norm_if_q", "ratio"],
        &rows,
    )?);
    out.files.extend(files);
    Ok(out)
}

// ---------------------------------------------------------------------------
// bogovskii-test

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct BogovskiiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Inner radius R of the annulus {R < |x| < R + 1}.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Radius of the test bump centred at (R + 1/2, 0, 0); below 1/2.
    #[arg(long)]
    pub bump_radius: Option<f64>,
}

layered!(
    BogovskiiArgs,
    merge(grid_defaults(64, 3.0), json!({ "radius": 1.0, "bump_radius": 0.45 }))
);

/// `d/dx1 (1 - |x - c|^2 / r^2)^3`: mean-zero on any lattice symmetric
/// about `c`.
fn bump_derivative(grid: &Grid, center: [f64; 3], radius: f64) -> Field {
    let r2 = radius * radius;
    Field::scalar_from_fn(grid, |x| {
        let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2) + (x[2] - center[2]).powi(2);
        let s = 1.0 - d2 / r2;
        if s <= 0.0 {
            0.0
        } else {
            -6.0 * (x[0] - center[0]) / r2 * s * s
        }
    })
}

pub fn bogovskii_test(a: &BogovskiiArgs) -> Result<Outcome, CliError> {
    let grid = a.grid.build()?;
    let radius = need(a.radius, "radius")?;
    let bump = need(a.bump_radius, "bump_radius")?;
    if !(bump > 0.0 && bump < 0.5) {
        return Err(CliError::Config(format!(
            "bump_radius must lie in (0, 0.5), got {bump}"
        )));
    }
    let spec = AnnulusSpec::new(radius)?;
    spec.check_grid(&grid)?;
    let c = radius + 0.5;
    let offset = (c + grid.half_extent()) / grid.spacing();
    if (offset - offset.round()).abs() > 1e-9 {
        return Err(CliError::Config(format!(
            "bump centre R + 1/2 = {c} must be a grid point (spacing {})",
            grid.spacing()
        )));
    }
    let f = bump_derivative(&grid, [c, 0.0, 0.0], bump);
    let v = bogovskii_apply(&f, &spec)?;
    let div = discrete_divergence(&v)?;
    let rel = div.sub(&f)?.l2_norm() / f.l2_norm();
    let mags = v.magnitudes();
    let outside = (0..grid.len())
        .filter(|&p| !spec.contains(grid.radius_sq(p).sqrt()))
        .map(|p| mags[p])
        .fold(0.0, f64::max);
    Ok(Outcome::summary(json!({
        "radius": radius,
        "bump_radius": bump,
        "spacing": grid.spacing(),
        "relative_divergence_error": rel,
        "max_abs_outside_annulus": outside,
        "support_contained": outside == 0.0,
        "data_l2": f.l2_norm(),
    }))
    .with(Artifact::field("bogovskii.bin", &v)?))
}

// ---------------------------------------------------------------------------
// extend

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExtendArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Obstacle radius R; the extension acts on {R + 2 < |x| < R + 3}.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Allowed relative divergence of u0 on |x| > R.
    #[arg(long)]
    pub div_tol: Option<f64>,
    /// Allowed relative mean of (grad phi) . u0 before it is corrected.
    #[arg(long)]
    pub mean_tol: Option<f64>,
}

layered!(
    ExtendArgs,
    merge(
        grid_defaults(64, 8.0),
        json!({ "radius": 1.0, "div_tol": 1e-8, "mean_tol": 1e-3 })
    )
);

pub fn extend(a: &ExtendArgs) -> Result<Outcome, CliError> {
    let grid = a.grid.build()?;
    let radius = need(a.radius, "radius")?;
    let spec = AnnulusSpec::new(radius)?;
    let opts = ExtensionOptions {
        div_tol: need(a.div_tol, "div_tol")?,
        mean_tol: need(a.mean_tol, "mean_tol")?,
    };
    let mut corpus = Corpus::new(need(a.run.seed, "seed")?, grid.dim());
    let u0 = corpus.solenoidal().sample(&grid);
    let ext = solenoidal_extension_with(&u0, &spec, &opts)?;
    let cut = CutoffPair::new(&grid, radius)?;
    let mut flux = Field::zeros(&grid, 1);
    for c in 0..grid.dim() {
        let g = cut.grad_phi.component(c);
        let u = u0.component(c);
        for (p, f) in flux.component_mut(0).iter_mut().enumerate() {
            *f += g[p] * u[p];
        }
    }
    let div = discrete_divergence(&ext.field)?;
    let diff = ext.field.sub(&u0)?.magnitudes();
    let far = (radius + 3.0).powi(2);
    let outside = (0..grid.len())
        .filter(|&p| grid.radius_sq(p) >= far)
        .map(|p| diff[p])
        .fold(0.0, f64::max);
    Ok(Outcome::summary(json!({
        "radius": radius,
        "spacing": grid.spacing(),
        "divergence_l2": div.l2_norm(),
        "relative_divergence": div.l2_norm() / flux.l2_norm(),
        "flux_l2": flux.l2_norm(),
        "flux_mean": ext.flux_mean,
        "flux_l1": ext.flux_l1,
        "max_abs_change_outside": outside,
        "unchanged_outside": outside == 0.0,
    }))
    .with(Artifact::field("extension.bin", &ext.field)?))
}

// ---------------------------------------------------------------------------
// Time-periodic solver

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct PeriodicArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: GridArgs,
    /// Period T of the forcing.
    #[arg(long)]
    pub period: Option<f64>,
    /// Forcing amplitude epsilon; when absent it is calibrated so that the
    /// linear response has L2 norm `target`.
    #[arg(long, allow_hyphen_values = true)]
    pub eps: Option<f64>,
    /// Calibration target for the first iterate.
    #[arg(long)]
    pub target: Option<f64>,
    /// Time nodes M per period (even, >= 8).
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Picard residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Picard iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Truncation level of the history tail.
    #[arg(long)]
    pub tail_eps: Option<f64>,
}

fn periodic_defaults() -> Value {
    merge(
        grid_defaults(64, 16.0),
        json!({
            "period": 2.0 * PI,
            "target": 1e-2,
            "nodes": 16,
            "tol": 1e-8,
            "max_iter": 20,
            "tail_eps": 1e-12,
        }),
    )
}

struct Solved {
    solution: PeriodicSolution,
    force: PeriodicForce,
    eps: f64,
    calibrated: bool,
}

impl PeriodicArgs {
    fn picard(&self) -> Result<PicardConfig, CliError> {
        Ok(PicardConfig {
            nodes: need(self.nodes, "nodes")?,
            tol: need(self.tol, "tol")?,
            max_iter: need(self.max_iter, "max_iter")?,
            tail_eps: need(self.tail_eps, "tail_eps")?,
        })
    }

    fn solve(&self) -> Result<Solved, CliError> {
        let grid = self.grid.build()?;
        let cfg = self.picard()?;
        let unit = PeriodicForce::vortex_pair(need(self.period, "period")?, 1.0)?;
        let (eps, calibrated) = match self.eps {
            Some(e) => (e, false),
            None => {
                let target = need(self.target, "target")?;
                let lin = linear_response(&grid, &unit, &cfg)?;
                let norm = lin.iter().map(Field::l2_norm).fold(0.0, f64::max);
                (target / norm, true)
            }
        };
        let force = unit.with_amplitude(eps);
        let solution = picard_solve(&grid, &force, &cfg)?;
        Ok(Solved {
            solution,
            force,
            eps,
            calibrated,
        })
    }
}

fn solution_json(s: &Solved) -> Value {
    let sol = &s.solution;
    let norm = sol.max_l2();
    json!({
        "eps": s.eps,
        "eps_calibrated": s.calibrated,
        "period": sol.period,
        "nodes": sol.snapshots.len(),
        "iterations": sol.iterations,
        "residual": sol.residual(),
        "residual_history": sol.residual_history,
        "node_residuals": sol.node_residuals,
        "contraction_factors": sol.contraction_factors(),
        "max_l2": norm,
        "norm_over_eps": if s.eps != 0.0 { Some(norm / s.eps) } else { None },
    })
}

fn node_files(sol: &PeriodicSolution) -> Result<Vec<Artifact>, CliError> {
    sol.snapshots
        .iter()
        .enumerate()
        .map(|(m, u)| Artifact::field(format!("node_{m:03}.bin"), u))
        .collect()
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct SolvePeriodicArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub periodic: PeriodicArgs,
}

layered!(SolvePeriodicArgs, periodic_defaults());

pub fn solve_periodic(a: &SolvePeriodicArgs) -> Result<Outcome, CliError> {
    let solved = a.periodic.solve()?;
    let mut out = Outcome::summary(solution_json(&solved));
    out.files = node_files(&solved.solution)?;
    Ok(out)
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct PeriodicityCheckArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub periodic: PeriodicArgs,
    /// Exponential Runge-Kutta steps over one period.
    #[arg(long)]
    pub steps: Option<usize>,
}

layered!(PeriodicityCheckArgs, merge(periodic_defaults(), json!({ "steps": 32 })));

pub fn periodicity(a: &PeriodicityCheckArgs) -> Result<Outcome, CliError> {
    let steps = need(a.steps, "steps")?;
    let solved = a.periodic.solve()?;
    let defect = periodicity_check(&solved.solution, &solved.force, steps)?;
    Ok(Outcome::summary(json!({
        "steps": steps,
        "periodicity_defect": defect,
        "solution": solution_json(&solved),
    })))
}

#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
pub struct WeightedReportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub periodic: PeriodicArgs,
    /// Index q1 of the solution norm.
    #[arg(long)]
    pub q1: Option<f64>,
    /// Index q2 of the gradient norm, below n.
    #[arg(long)]
    pub q2: Option<f64>,
    /// Weight exponent s.
    #[arg(long, allow_hyphen_values = true)]
    pub s: Option<f64>,
}

layered!(
    WeightedReportArgs,
    merge(periodic_defaults(), json!({ "q1": 2.0, "q2": 2.0, "s": 1.0 }))
);

pub fn weighted(a: &WeightedReportArgs) -> Result<Outcome, CliError> {
    let solved = a.periodic.solve()?;
    let report = weighted_report(
        &solved.solution,
        &solved.force,
        need(a.q1, "q1")?,
        need(a.q2, "q2")?,
        need(a.s, "s")?,
    )?;
    Ok(Outcome::summary(json!({
        "report": report,
        "solution": solution_json(&solved),
    })))
}
