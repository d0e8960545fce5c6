//! Numerical checks of the local analysis: second-order residual scaling,
//! the unit-radius witness for `A`, the tightness sweep along the dominant
//! eigenvector of `H`, and first-order trace comparisons.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{eigenvalues, real_eigenvector};
use crate::error::{invalid, Error, Result};
use crate::gd::{gd_step, run_gd, ConvergenceTrace, GdConfig};
use crate::linalg::min_eigenvalue;
use crate::linops::{
    materialize, unvec, vec_matrix, LinearOperator, Projection, RateOperator, StepOperator,
    DEFAULT_DENSE_CAP,
};
use crate::problem::{feasibility_check, ProblemInstance};
use crate::rate::{implied_constant, rate_radius, theoretical_curve, RateMethod, RateOptions};
use crate::rng::{gaussian_matrix, stream_rng, Stream};

pub use crate::linalg::truncated_eig;

/// Default perturbation sizes for the scaling sweeps.
pub const DEFAULT_DELTAS: [f64; 4] = [1e-2, 5e-3, 2.5e-3, 1.25e-3];
/// Accepted log-log slope range for a second-order residual.
pub const SLOPE_RANGE: (f64, f64) = (1.8, 2.2);

/// Mean residual at each `δ` together with the least-squares log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSweepResult {
    pub deltas: Vec<f64>,
    pub residuals: Vec<f64>,
    /// `None` when fewer than two residuals are strictly positive (for
    /// instance when the residual vanishes identically).
    pub fitted_slope: Option<f64>,
}

impl ScalingSweepResult {
    fn new(deltas: Vec<f64>, residuals: Vec<f64>) -> Self {
        let fitted_slope = fit_loglog_slope(&deltas, &residuals);
        Self {
            deltas,
            residuals,
            fitted_slope,
        }
    }

    pub fn slope_in(&self, lo: f64, hi: f64) -> bool {
        self.fitted_slope.is_some_and(|s| s >= lo && s <= hi)
    }

    pub fn second_order(&self) -> bool {
        self.slope_in(SLOPE_RANGE.0, SLOPE_RANGE.1)
    }
}

/// Ordinary least-squares slope of `ln y` against `ln x`, over the pairs
/// where both are strictly positive.
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| **x > 0.0 && **y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let len = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / len;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / len;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn check_deltas(deltas: &[f64]) -> Result<()> {
    if deltas.is_empty() {
        return Err(invalid("deltas", "at least one value is required"));
    }
    if deltas.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
        return Err(invalid("deltas", "values must be finite and >= 0"));
    }
    if deltas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("deltas", "values must be strictly decreasing"));
    }
    Ok(())
}

/// Unit-Frobenius-norm `n×r` directions, shared across all `δ`.
fn directions(instance: &ProblemInstance, trials: usize, seed: u64) -> Result<Vec<DMatrix<f64>>> {
    if trials == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let mut rng = stream_rng(seed, Stream::Directions, 0);
    Ok((0..trials)
        .map(|_| {
            let g = gaussian_matrix(&mut rng, instance.n(), instance.r());
            let norm = g.norm();
            g / norm
        })
        .collect())
}

/// `‖vec(E¹) − A·vec(E⁰)‖₂` for `X⁰ = X* + δG`, averaged over `trials`
/// random unit directions `G`. A second-order remainder gives slope ≈ 2.
pub fn check_recursion_residual(
    instance: &ProblemInstance,
    eta: f64,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ScalingSweepResult> {
    check_deltas(deltas)?;
    let a = StepOperator::for_instance(instance, eta)?;
    let m = instance.m();
    let observed = instance.observed();
    let dirs = directions(instance, trials, seed)?;
    let mut residuals = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut total = 0.0;
        for g in &dirs {
            let x0 = &instance.truth.xstar + g * delta;
            let e0 = &x0 * x0.transpose() - m;
            let x1 = gd_step(&x0, &instance.mask, &observed, eta)?;
            let e1 = &x1 * x1.transpose() - m;
            let predicted = a.apply(&vec_matrix(&e0)?)?;
            total += (vec_matrix(&e1)? - predicted).norm();
        }
        residuals.push(total / dirs.len() as f64);
    }
    Ok(ScalingSweepResult::new(deltas.to_vec(), residuals))
}

/// `‖P·vec(E) − vec(E)‖₂` for feasible `E = (X*+δG)(X*+δG)ᵀ − M`,
/// averaged over `trials` unit directions. Expected slope ≈ 2.
pub fn check_projection_residual(
    instance: &ProblemInstance,
    deltas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ScalingSweepResult> {
    check_deltas(deltas)?;
    let p = Projection::new(instance.u().clone())?;
    let m = instance.m();
    let dirs = directions(instance, trials, seed)?;
    let mut residuals = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let mut total = 0.0;
        for g in &dirs {
            let x = &instance.truth.xstar + g * delta;
            let e = vec_matrix(&(&x * x.transpose() - m))?;
            total += (p.apply(&e)? - e).norm();
        }
        residuals.push(total / dirs.len() as f64);
    }
    Ok(ScalingSweepResult::new(deltas.to_vec(), residuals))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum WitnessOutcome {
    /// Ω is the full index set; no unsampled entry exists.
    NotApplicable,
    /// `A·e_{ij} = e_{ij}` held exactly at every unsampled index.
    Verified { checked: usize },
    Failed { i: usize, j: usize, deviation: f64 },
}

/// For every `(i, j) ∉ Ω`, checks `A·vec(e_i e_jᵀ) = vec(e_i e_jᵀ)` with
/// exact floating-point equality, which forces `ρ(A) ≥ 1`.
pub fn check_rho_a_witness(instance: &ProblemInstance, eta: f64) -> Result<WitnessOutcome> {
    let a = StepOperator::for_instance(instance, eta)?;
    let unsampled = instance.mask.complement();
    if unsampled.is_empty() {
        return Ok(WitnessOutcome::NotApplicable);
    }
    let n = instance.n();
    let mut basis = DVector::zeros(n * n);
    for &k in &unsampled {
        basis[k] = 1.0;
        let image = a.apply(&basis)?;
        if image != basis {
            let deviation = (&image - &basis).norm();
            return Ok(WitnessOutcome::Failed {
                i: k % n,
                j: k / n,
                deviation,
            });
        }
        basis[k] = 0.0;
    }
    Ok(WitnessOutcome::Verified {
        checked: unsampled.len(),
    })
}

/// Dominant eigenpair requirements for the tightness sweep.
const DOMINANCE_GAP: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-10;

/// Details of a tightness sweep that could be carried out.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TightSweepResult {
    pub sweep: ScalingSweepResult,
    /// Real dominant eigenvalue `λ₁(H)`.
    pub dominant: f64,
    pub eigvec_residual: f64,
    /// `max_δ ‖G − Gᵀ‖_F / δ`.
    pub g_asymmetry: f64,
    /// `max_δ ‖P⊥ G P⊥‖_F / δ`.
    pub g_normal_block: f64,
    /// `min_δ λ_min(M + F)`.
    pub min_eig_m_plus_f: f64,
    /// Every `E(δ)` passed the feasibility check.
    pub all_feasible: bool,
    pub feasibility_tol: f64,
}

impl TightSweepResult {
    pub fn passed(&self) -> bool {
        self.sweep.second_order()
            && self.all_feasible
            && self.g_asymmetry <= 1e-10
            && self.g_normal_block <= 1e-10
            && self.min_eig_m_plus_f >= -1e-12
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TightSweep {
    NotApplicable { reason: String },
    Done(TightSweepResult),
}

/// Builds feasible errors along the dominant eigenvector `q₁` of `H`:
/// `G = δ·unvec(q₁)`, `F = G + (2/λ_r)δ²I`, `E = P_r(M+F) − M`, and
/// measures `‖E − G‖_F`, which should scale as `δ²`.
///
/// Requires a real, simple, strictly dominant eigenvalue of `H`; otherwise
/// the sweep is reported as not applicable.
pub fn check_tight_sweep(
    instance: &ProblemInstance,
    eta: f64,
    deltas: &[f64],
) -> Result<TightSweep> {
    check_deltas(deltas)?;
    let h = materialize(&RateOperator::for_instance(instance, eta)?, DEFAULT_DENSE_CAP)?;
    let mut vals = eigenvalues(&h)?;
    vals.sort_by(|a, b| b.modulus().total_cmp(&a.modulus()));
    let top = vals[0];
    let rho = top.modulus();
    if !(rho > 0.0) {
        return Ok(TightSweep::NotApplicable {
            reason: "H is nilpotent".into(),
        });
    }
    if top.im.abs() > IMAG_TOL * rho {
        return Ok(TightSweep::NotApplicable {
            reason: format!("dominant eigenvalue is complex ({} + {}i)", top.re, top.im),
        });
    }
    if vals.len() > 1 && vals[1].modulus() >= rho * (1.0 - DOMINANCE_GAP) {
        return Ok(TightSweep::NotApplicable {
            reason: format!(
                "dominant eigenvalue is not strictly dominant (|λ₂| = {})",
                vals[1].modulus()
            ),
        });
    }
    let (q, eigvec_residual) = real_eigenvector(&h, top.re)?;
    if eigvec_residual > 1e-8 * h.norm().max(1.0) {
        return Ok(TightSweep::NotApplicable {
            reason: format!("inverse iteration residual {eigvec_residual:e}"),
        });
    }
    let direction = unvec(&q)?;
    let truth = &instance.truth;
    let n = truth.n;
    let m = &truth.m;
    let p_perp = truth.null_projector();
    let feasibility_tol = 1e-9 * m.norm();
    let shift = 2.0 / truth.lambda_min();

    let mut residuals = Vec::with_capacity(deltas.len());
    let mut g_asymmetry: f64 = 0.0;
    let mut g_normal_block: f64 = 0.0;
    let mut min_eig = f64::INFINITY;
    let mut all_feasible = true;
    for &delta in deltas {
        let g = &direction * delta;
        if delta > 0.0 {
            g_asymmetry = g_asymmetry.max((&g - g.transpose()).norm() / delta);
            g_normal_block = g_normal_block.max((&p_perp * &g * &p_perp).norm() / delta);
        }
        let f = &g + DMatrix::identity(n, n) * (shift * delta * delta);
        let shifted = m + &f;
        let shifted = (&shifted + shifted.transpose()) * 0.5;
        min_eig = min_eig.min(min_eigenvalue(&shifted));
        let e = truncated_eig(&shifted, truth.r)? - m;
        all_feasible &= feasibility_check(&e, truth, feasibility_tol)?.feasible();
        residuals.push((&e - &g).norm());
    }
    Ok(TightSweep::Done(TightSweepResult {
        sweep: ScalingSweepResult::new(deltas.to_vec(), residuals),
        dominant: top.re,
        eigvec_residual,
        g_asymmetry,
        g_normal_block,
        min_eig_m_plus_f: min_eig,
        all_feasible,
        feasibility_tol,
    }))
}

/// One row of the GD-versus-linear-model comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstOrderRow {
    pub k: usize,
    pub err_fro: f64,
    /// `‖Aᵏe⁰‖₂`.
    pub pred_a: f64,
    /// `‖Hᵏe⁰‖₂`.
    pub pred_h: f64,
    /// `‖e⁰‖·ρ(H)ᵏ`.
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstOrderComparison {
    pub eta: f64,
    pub rho_h: f64,
    pub rho_method: RateMethod,
    pub e0_norm: f64,
    /// `max_k err_k / (‖e⁰‖ρᵏ)` over the run; reported, not asserted.
    pub implied_constant: Option<f64>,
    pub rows: Vec<FirstOrderRow>,
}

/// Agreement of the linear models with GD inside an error window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityCheck {
    pub lo: f64,
    pub hi: f64,
    pub log_tol: f64,
    pub rows_in_window: usize,
    pub max_log_gap_h: f64,
    pub max_log_gap_a: f64,
    /// `min_k ‖Aᵏe⁰‖ / ‖e⁰‖` over all rows.
    pub a_floor_rel: f64,
}

impl FidelityCheck {
    pub fn h_tracks(&self) -> bool {
        self.rows_in_window > 0 && self.max_log_gap_h <= self.log_tol
    }

    pub fn a_deviates(&self) -> bool {
        self.rows_in_window > 0 && self.max_log_gap_a > self.log_tol
    }
}

impl FirstOrderComparison {
    /// Compares `ln‖Hᵏe⁰‖` and `ln‖Aᵏe⁰‖` with `ln err_k` on rows with
    /// `err_k ∈ [lo, hi]`.
    pub fn fidelity(&self, lo: f64, hi: f64, log_tol: f64) -> FidelityCheck {
        let mut rows_in_window = 0;
        let mut gap_h: f64 = 0.0;
        let mut gap_a: f64 = 0.0;
        for row in &self.rows {
            if row.err_fro >= lo && row.err_fro <= hi {
                rows_in_window += 1;
                gap_h = gap_h.max((row.pred_h.ln() - row.err_fro.ln()).abs());
                gap_a = gap_a.max((row.pred_a.ln() - row.err_fro.ln()).abs());
            }
        }
        let a_floor_rel = self
            .rows
            .iter()
            .map(|r| r.pred_a / self.e0_norm)
            .fold(f64::INFINITY, f64::min);
        FidelityCheck {
            lo,
            hi,
            log_tol,
            rows_in_window,
            max_log_gap_h: gap_h,
            max_log_gap_a: gap_a,
            a_floor_rel,
        }
    }

    pub fn to_csv(&self) -> String {
        use crate::report::fmt_f64;
        let mut out = String::from("iter,err_fro,pred_A,pred_H,bound\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.k,
                fmt_f64(r.err_fro),
                fmt_f64(r.pred_a),
                fmt_f64(r.pred_h),
                fmt_f64(r.bound)
            ));
        }
        out
    }
}

/// Fills `predicted_a`, `predicted_h` and `bound` of a trace started at
/// `x0`: `‖Aᵏe⁰‖₂`, `‖Hᵏe⁰‖₂` and `‖e⁰‖·ρᵏ` at every recorded iteration.
pub fn attach_first_order_predictions(
    trace: &mut ConvergenceTrace,
    instance: &ProblemInstance,
    x0: &DMatrix<f64>,
    eta: f64,
    rho: f64,
) -> Result<()> {
    let h = RateOperator::for_instance(instance, eta)?;
    let e0 = vec_matrix(&(x0 * x0.transpose() - instance.m()))?;
    let e0_norm = e0.norm();
    let mut ak = e0.clone();
    let mut hk = e0;
    let mut k = 0;
    let (mut pa, mut ph) = (Vec::with_capacity(trace.len()), Vec::with_capacity(trace.len()));
    for &iter in &trace.iters {
        while k < iter {
            ak = h.step().apply_unchecked(&ak);
            hk = h.apply_unchecked(&hk);
            k += 1;
        }
        pa.push(ak.norm());
        ph.push(hk.norm());
    }
    trace.bound = Some(theoretical_curve(e0_norm, rho, 1.0, &trace.iters));
    trace.predicted_a = Some(pa);
    trace.predicted_h = Some(ph);
    Ok(())
}

/// Runs `k_max` GD steps from `x0` (no early stop) alongside `Aᵏe⁰` and
/// `Hᵏe⁰`.
pub fn compare_first_order_traces(
    instance: &ProblemInstance,
    x0: &DMatrix<f64>,
    eta: f64,
    k_max: usize,
) -> Result<FirstOrderComparison> {
    let rate = rate_radius(instance, eta, &RateOptions::default())?;
    compare_with_rate(instance, x0, eta, k_max, rate)
}

fn compare_with_rate(
    instance: &ProblemInstance,
    x0: &DMatrix<f64>,
    eta: f64,
    k_max: usize,
    (rho_h, rho_method): (f64, RateMethod),
) -> Result<FirstOrderComparison> {
    let config = GdConfig {
        eta,
        max_iters: k_max.max(1),
        stop_tol: 0.0,
        record_every: 1,
    };
    let mut trace = run_gd(instance, x0, &config)?.trace;
    attach_first_order_predictions(&mut trace, instance, x0, eta, rho_h)?;
    let (pa, ph, b) = (
        trace.predicted_a.as_deref().unwrap_or_default(),
        trace.predicted_h.as_deref().unwrap_or_default(),
        trace.bound.as_deref().unwrap_or_default(),
    );
    let rows = (0..trace.len())
        .map(|i| FirstOrderRow {
            k: trace.iters[i],
            err_fro: trace.err_fro[i],
            pred_a: pa[i],
            pred_h: ph[i],
            bound: b[i],
        })
        .collect();
    Ok(FirstOrderComparison {
        eta,
        rho_h,
        rho_method,
        e0_norm: pa[0],
        implied_constant: implied_constant(&trace, rho_h),
        rows,
    })
}

/// Largest `‖op(e)‖/‖e‖` found over random feasible errors
/// `E = (X*+tG)(X*+tG)ᵀ − M` with `‖E‖_F ≤ radius`.
///
/// This samples the constrained supremum from below; it is not a bound.
pub fn sampled_constrained_ratio<O: LinearOperator + ?Sized>(
    op: &O,
    instance: &ProblemInstance,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(invalid("radius", "must be > 0"));
    }
    let m = instance.m();
    let xstar = &instance.truth.xstar;
    let mut rng = stream_rng(seed, Stream::Directions, 1);
    let mut best: f64 = 0.0;
    for s in 0..samples {
        let g = gaussian_matrix(&mut rng, instance.n(), instance.r());
        let linear = (xstar * g.transpose() + &g * xstar.transpose()).norm();
        if linear == 0.0 {
            continue;
        }
        // Spread the sampled radii over (0, radius].
        let frac = (s + 1) as f64 / samples as f64;
        let t = 0.5 * frac * radius / linear;
        let x = xstar + g * t;
        let e = vec_matrix(&(&x * x.transpose() - m))?;
        let norm = e.norm();
        if norm == 0.0 || norm > radius {
            continue;
        }
        best = best.max(op.apply(&e)?.norm() / norm);
    }
    Ok(best)
}

/// Which checks to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Recursion,
    Projection,
    Witness,
    Tight,
    Traces,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] =
        ["recursion", "projection", "witness", "tight", "traces", "all"];

    fn includes(self, other: Suite) -> bool {
        self == Suite::All || self == other
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "recursion" => Self::Recursion,
            "projection" => Self::Projection,
            "witness" => Self::Witness,
            "tight" => Self::Tight,
            "traces" => Self::Traces,
            "all" => Self::All,
            other => {
                return Err(invalid(
                    "suite",
                    format!("unknown suite {other:?}; expected one of {:?}", Self::NAMES),
                ))
            }
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx = match self {
            Self::Recursion => 0,
            Self::Projection => 1,
            Self::Witness => 2,
            Self::Tight => 3,
            Self::Traces => 4,
            Self::All => 5,
        };
        f.write_str(Self::NAMES[idx])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckRecord {
    pub name: String,
    pub outcome: Outcome,
    pub detail: String,
    pub measured: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
}

impl CheckRecord {
    fn new(name: &str, outcome: Outcome, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            outcome,
            detail: detail.into(),
            measured: BTreeMap::new(),
            tolerances: BTreeMap::new(),
        }
    }

    fn measure(mut self, key: &str, value: f64) -> Self {
        self.measured.insert(key.to_string(), value);
        self
    }

    fn tolerance(mut self, key: &str, value: f64) -> Self {
        self.tolerances.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub seed: u64,
    pub n: usize,
    pub r: usize,
    pub p: Option<f64>,
    pub eta: f64,
    pub suite: Suite,
    pub checks: Vec<CheckRecord>,
}

impl VerificationReport {
    /// No check failed (not-applicable checks do not count as failures).
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.outcome != Outcome::Fail)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub deltas: Vec<f64>,
    pub trials: usize,
    pub direction_seed: u64,
    /// GD steps for the trace comparison; derived from `ρ(H)` when `None`.
    pub trace_iters: Option<usize>,
    /// Error window (absolute) and log tolerance for the trace comparison.
    pub trace_window: (f64, f64),
    pub trace_log_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            deltas: DEFAULT_DELTAS.to_vec(),
            trials: 5,
            direction_seed: 0,
            trace_iters: None,
            trace_window: (1e-8, 1e-4),
            trace_log_tol: 0.5,
        }
    }
}

fn sweep_record(name: &str, sweep: &ScalingSweepResult) -> CheckRecord {
    let outcome = if sweep.second_order() {
        Outcome::Pass
    } else {
        Outcome::Fail
    };
    let detail = match sweep.fitted_slope {
        Some(s) => format!("log-log slope {s:.4}"),
        None => "fewer than two positive residuals".to_string(),
    };
    let mut rec = CheckRecord::new(name, outcome, detail)
        .measure("slope", sweep.fitted_slope.unwrap_or(f64::NAN))
        .tolerance("slope_min", SLOPE_RANGE.0)
        .tolerance("slope_max", SLOPE_RANGE.1);
    for (d, r) in sweep.deltas.iter().zip(&sweep.residuals) {
        rec = rec.measure(&format!("residual@{d:e}"), *r);
    }
    rec
}

/// `ρ(H)` at or above this is treated as 1 by the trace comparison.
pub const NUMERICALLY_ONE: f64 = 1.0 - 1e-6;

/// Iterations needed for `‖e⁰‖ρᵏ` to fall below `target`, plus slack.
fn trace_length(rho: f64, e0: f64, target: f64) -> usize {
    if !(rho > 0.0 && rho < 1.0) || !(e0 > target) {
        return 200;
    }
    let k = ((target / e0).ln() / rho.ln()).ceil() + 50.0;
    (k as usize).clamp(100, 20_000)
}

/// Runs the selected checks and collects them into one report.
pub fn run_suite(
    instance: &ProblemInstance,
    x0: &DMatrix<f64>,
    eta: f64,
    suite: Suite,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let mut checks = Vec::new();

    if suite.includes(Suite::Recursion) {
        let sweep = check_recursion_residual(
            instance,
            eta,
            &opts.deltas,
            opts.trials,
            opts.direction_seed,
        )?;
        checks.push(sweep_record("recursion", &sweep));
    }

    if suite.includes(Suite::Projection) {
        let sweep =
            check_projection_residual(instance, &opts.deltas, opts.trials, opts.direction_seed)?;
        checks.push(sweep_record("projection", &sweep));
    }

    if suite.includes(Suite::Witness) {
        let rec = match check_rho_a_witness(instance, eta)? {
            WitnessOutcome::NotApplicable => {
                CheckRecord::new("witness", Outcome::NotApplicable, "mask is full")
            }
            WitnessOutcome::Verified { checked } => CheckRecord::new(
                "witness",
                Outcome::Pass,
                format!("A fixes all {checked} unsampled basis matrices"),
            )
            .measure("checked", checked as f64),
            WitnessOutcome::Failed { i, j, deviation } => CheckRecord::new(
                "witness",
                Outcome::Fail,
                format!("A moves the unsampled basis matrix at ({i}, {j})"),
            )
            .measure("deviation", deviation),
        };
        checks.push(rec);
    }

    if suite.includes(Suite::Tight) {
        let rec = match check_tight_sweep(instance, eta, &opts.deltas)? {
            TightSweep::NotApplicable { reason } => {
                CheckRecord::new("tight", Outcome::NotApplicable, reason)
            }
            TightSweep::Done(res) => {
                let outcome = if res.passed() {
                    Outcome::Pass
                } else {
                    Outcome::Fail
                };
                let mut rec = sweep_record("tight", &res.sweep);
                rec.outcome = outcome;
                rec.detail = format!(
                    "{}; feasible={}, lambda1={:.6}",
                    rec.detail, res.all_feasible, res.dominant
                );
                rec.measure("dominant", res.dominant)
                    .measure("g_asymmetry_rel", res.g_asymmetry)
                    .measure("g_normal_block_rel", res.g_normal_block)
                    .measure("min_eig_m_plus_f", res.min_eig_m_plus_f)
                    .tolerance("g_asymmetry_rel", 1e-10)
                    .tolerance("g_normal_block_rel", 1e-10)
                    .tolerance("min_eig_m_plus_f", -1e-12)
                    .tolerance("feasibility", res.feasibility_tol)
            }
        };
        checks.push(rec);
    }

    if suite.includes(Suite::Traces) {
        let rate = rate_radius(instance, eta, &RateOptions::default())?;
        let (lo, hi) = opts.trace_window;
        let rec = if rate.0 >= NUMERICALLY_ONE {
            CheckRecord::new(
                "traces",
                Outcome::NotApplicable,
                format!("rho(H) = {} is numerically 1; GD does not converge linearly", rate.0),
            )
            .measure("rho_h", rate.0)
        } else {
            let e0 = (x0 * x0.transpose() - instance.m()).norm();
            let k_max = opts
                .trace_iters
                .unwrap_or_else(|| trace_length(rate.0, e0, 0.1 * lo));
            let cmp = compare_with_rate(instance, x0, eta, k_max, rate)?;
            let fid = cmp.fidelity(lo, hi, opts.trace_log_tol);
            let (outcome, detail) = if fid.rows_in_window == 0 {
                (
                    Outcome::NotApplicable,
                    "no iterate reached the comparison window".to_string(),
                )
            } else if fid.h_tracks() && fid.a_deviates() {
                (
                    Outcome::Pass,
                    format!("H tracks GD over {} iterations; A does not", fid.rows_in_window),
                )
            } else {
                (
                    Outcome::Fail,
                    format!(
                        "H tracks: {}, A deviates: {}",
                        fid.h_tracks(),
                        fid.a_deviates()
                    ),
                )
            };
            CheckRecord::new("traces", outcome, detail)
                .measure("rho_h", cmp.rho_h)
                .measure("rows_in_window", fid.rows_in_window as f64)
                .measure("max_log_gap_h", fid.max_log_gap_h)
                .measure("max_log_gap_a", fid.max_log_gap_a)
                .measure("a_floor_rel", fid.a_floor_rel)
                .measure("implied_constant", cmp.implied_constant.unwrap_or(f64::NAN))
                .tolerance("log_tol", fid.log_tol)
                .tolerance("window_lo", lo)
                .tolerance("window_hi", hi)
        };
        checks.push(rec);
    }

    Ok(VerificationReport {
        seed: instance.seed(),
        n: instance.n(),
        r: instance.r(),
        p: instance.p,
        eta,
        suite,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{init_perturbed, SamplingMask};

    fn setup(n: usize, r: usize, p: f64, seed: u64) -> (ProblemInstance, f64) {
        let inst = ProblemInstance::generate(n, r, p, seed).unwrap();
        let eta = 0.5 / inst.truth.spectral_norm();
        (inst, eta)
    }

    #[test]
    fn slope_fit() {
        let xs = [1e-2, 5e-3, 2.5e-3];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((fit_loglog_slope(&xs, &ys).unwrap() - 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&xs, &[0.0, 0.0, 1.0]).is_none());
    }

    #[test]
    fn recursion_and_projection_are_second_order() {
        let (inst, eta) = setup(8, 2, 0.6, 3);
        let rec = check_recursion_residual(&inst, eta, &DEFAULT_DELTAS, 5, 0).unwrap();
        assert!(rec.second_order(), "{rec:?}");
        let proj = check_projection_residual(&inst, &DEFAULT_DELTAS, 5, 0).unwrap();
        assert!(proj.second_order(), "{proj:?}");
    }

    #[test]
    fn zero_delta_and_zero_step() {
        let (inst, _) = setup(5, 1, 0.6, 1);
        let res = check_recursion_residual(&inst, 0.0, &DEFAULT_DELTAS, 2, 0).unwrap();
        assert!(res.residuals.iter().all(|&r| r == 0.0));
        assert!(res.fitted_slope.is_none());
        let res = check_projection_residual(&inst, &[1e-2, 0.0], 2, 0).unwrap();
        assert_eq!(res.residuals[1], 0.0);
        assert!(check_projection_residual(&inst, &[1e-3, 1e-2], 2, 0).is_err());
        assert!(check_projection_residual(&inst, &[], 2, 0).is_err());
    }

    #[test]
    fn witness() {
        let (inst, eta) = setup(6, 2, 0.5, 4);
        match check_rho_a_witness(&inst, eta).unwrap() {
            WitnessOutcome::Verified { checked } => {
                assert_eq!(checked, 36 - inst.mask.len())
            }
            other => panic!("{other:?}"),
        }
        let (full, eta) = setup(4, 1, 1.0, 4);
        assert_eq!(
            check_rho_a_witness(&full, eta).unwrap(),
            WitnessOutcome::NotApplicable
        );
    }

    #[test]
    fn tight_sweep_on_small_instance() {
        let mut done = 0;
        for seed in 0..5 {
            let (inst, eta) = setup(6, 2, 0.7, seed);
            if let TightSweep::Done(res) =
                check_tight_sweep(&inst, eta, &DEFAULT_DELTAS).unwrap()
            {
                assert!(res.passed(), "{res:?}");
                done += 1;
            }
        }
        assert!(done >= 3);
    }

    #[test]
    fn tight_sweep_not_applicable_when_h_is_identity_on_range() {
        let (inst, _) = setup(4, 1, 0.5, 2);
        match check_tight_sweep(&inst, 0.0, &DEFAULT_DELTAS).unwrap() {
            TightSweep::NotApplicable { .. } => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn h_tracks_gd_and_a_does_not() {
        let (inst, eta) = setup(10, 2, 0.5, 7);
        let x0 = init_perturbed(&inst.truth.canonical_factor(), 1e-3, 7).unwrap();
        let cmp = compare_first_order_traces(&inst, &x0, eta, 3000).unwrap();
        let fid = cmp.fidelity(1e-8, 1e-4, 0.5);
        assert!(fid.rows_in_window > 0, "{fid:?}");
        assert!(fid.h_tracks(), "{fid:?}");
        assert!(fid.a_deviates(), "{fid:?}");
        assert_eq!(cmp.rows[0].pred_a, cmp.e0_norm);
    }

    #[test]
    fn constrained_ratio_of_h_is_below_one_when_contracting() {
        let (inst, eta) = setup(6, 2, 0.7, 5);
        let rate = crate::rate::contraction_check(&inst, eta).unwrap();
        assert!(rate.contracts);
        let h = RateOperator::for_instance(&inst, eta).unwrap();
        let sampled = sampled_constrained_ratio(&h, &inst, 1e-6, 50, 0).unwrap();
        assert!(sampled > 0.0 && sampled < 1.0 + 1e-6, "{sampled}");
        let _ = SamplingMask::full(1);
    }

    #[test]
    fn suite_parsing() {
        for name in Suite::NAMES {
            assert_eq!(name.parse::<Suite>().unwrap().to_string(), name);
        }
        assert!("bogus".parse::<Suite>().is_err());
    }

    #[test]
    fn full_report() {
        let (inst, eta) = setup(8, 2, 0.6, 9);
        let x0 = init_perturbed(&inst.truth.canonical_factor(), 1e-3, 9).unwrap();
        let report = run_suite(&inst, &x0, eta, Suite::All, &VerifyOptions::default()).unwrap();
        assert_eq!(report.checks.len(), 5);
        assert!(report.passed(), "{report:#?}");
        let json = crate::report::to_precise_json(&report).unwrap();
        assert!(json.contains("\"recursion\""));
    }
}
