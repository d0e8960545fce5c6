//! Factorized gradient descent on `f(X) = ¼‖P_Ω(XXᵀ − M)‖²_F`.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problem::{GroundTruth, ProblemInstance, SamplingMask};
use crate::report::fmt_f64;

/// Runs stop and flag divergence once `‖E^k‖_F > DIVERGENCE_FACTOR·‖M‖_F`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Default stopping threshold relative to `‖M‖_F`.
pub const DEFAULT_STOP_TOL_REL: f64 = 1e-12;

/// How the step size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepSize {
    Absolute { eta: f64 },
    /// `η = c / ‖M‖₂`, with `‖M‖₂ = λ₁` read off the eigendecomposition.
    OverSpectralNorm { c: f64 },
}

impl Default for StepSize {
    fn default() -> Self {
        Self::OverSpectralNorm { c: 0.5 }
    }
}

impl StepSize {
    pub fn resolve(&self, truth: &GroundTruth) -> f64 {
        match *self {
            Self::Absolute { eta } => eta,
            Self::OverSpectralNorm { c } => c / truth.spectral_norm(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once `‖E^k‖_F ≤ stop_tol`.
    pub stop_tol: f64,
    pub record_every: usize,
}

impl GdConfig {
    /// `η = 0.5/‖M‖₂`, `stop_tol = 1e-12·‖M‖_F`.
    pub fn for_truth(truth: &GroundTruth, max_iters: usize) -> Self {
        Self {
            eta: StepSize::default().resolve(truth),
            max_iters,
            stop_tol: DEFAULT_STOP_TOL_REL * truth.m.norm(),
            record_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        // η = 0 is accepted: it is the identity map and a useful control.
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and >= 0, got {}", self.eta)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be >= 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(invalid("stop_tol", format!("must be >= 0, got {}", self.stop_tol)));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-iteration diagnostics of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceTrace {
    pub iters: Vec<usize>,
    /// `‖X^k X^kᵀ − M‖_F`, measured against the full `M`.
    pub err_fro: Vec<f64>,
    pub grad_fro: Vec<f64>,
    pub obj: Vec<f64>,
    /// `‖A^k e⁰‖₂` at the recorded iterations.
    pub predicted_a: Option<Vec<f64>>,
    /// `‖H^k e⁰‖₂` at the recorded iterations.
    pub predicted_h: Option<Vec<f64>>,
    pub bound: Option<Vec<f64>>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.iters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iters.is_empty()
    }

    fn push(&mut self, k: usize, err: f64, grad: f64, obj: f64) {
        self.iters.push(k);
        self.err_fro.push(err);
        self.grad_fro.push(grad);
        self.obj.push(obj);
    }

    pub fn all_finite(&self) -> bool {
        let cols = [&self.err_fro, &self.grad_fro, &self.obj];
        cols.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }

    /// CSV with header `iter,err_fro,pred_A,pred_H,bound`; the prediction
    /// columns must have been attached.
    pub fn to_prediction_csv(&self) -> Result<String> {
        let missing = || invalid("trace", "prediction columns have not been attached");
        let a = self.predicted_a.as_ref().ok_or_else(missing)?;
        let h = self.predicted_h.as_ref().ok_or_else(missing)?;
        let b = self.bound.as_ref().ok_or_else(missing)?;
        if a.len() != self.len() || h.len() != self.len() || b.len() != self.len() {
            return Err(invalid("trace", "prediction columns have the wrong length"));
        }
        let mut out = String::from("iter,err_fro,pred_A,pred_H,bound\n");
        for idx in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.iters[idx],
                fmt_f64(self.err_fro[idx]),
                fmt_f64(a[idx]),
                fmt_f64(h[idx]),
                fmt_f64(b[idx])
            );
        }
        Ok(out)
    }

    /// CSV with header `iter,err_fro,grad_fro,obj`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,err_fro,grad_fro,obj\n");
        for idx in 0..self.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.iters[idx],
                fmt_f64(self.err_fro[idx]),
                fmt_f64(self.grad_fro[idx]),
                fmt_f64(self.obj[idx])
            );
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct GdRun {
    pub trace: ConvergenceTrace,
    pub x_final: DMatrix<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl GdRun {
    pub fn diverged(&self) -> bool {
        self.stop == StopReason::Diverged
    }
}

fn check_shapes(x: &DMatrix<f64>, mask: &SamplingMask, m: &DMatrix<f64>) -> Result<()> {
    let n = mask.n();
    if m.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: n,
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    if x.nrows() != n {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: x.ncols(),
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    Ok(())
}

/// `P_Ω(XXᵀ − M)`.
fn masked_residual(x: &DMatrix<f64>, mask: &SamplingMask, m: &DMatrix<f64>) -> DMatrix<f64> {
    mask.project(&(x * x.transpose() - m))
}

/// `f(X) = ¼‖P_Ω(XXᵀ − M)‖²_F`.
pub fn objective(x: &DMatrix<f64>, mask: &SamplingMask, m: &DMatrix<f64>) -> Result<f64> {
    check_shapes(x, mask, m)?;
    Ok(0.25 * masked_residual(x, mask, m).norm_squared())
}

/// `∇f(X) = P_Ω(XXᵀ − M) X`.
pub fn gradient(x: &DMatrix<f64>, mask: &SamplingMask, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shapes(x, mask, m)?;
    Ok(masked_residual(x, mask, m) * x)
}

/// One update `X − η P_Ω(XXᵀ − M) X`. Only entries of `M` inside Ω are read.
pub fn gd_step(
    x: &DMatrix<f64>,
    mask: &SamplingMask,
    m: &DMatrix<f64>,
    eta: f64,
) -> Result<DMatrix<f64>> {
    Ok(x - gradient(x, mask, m)? * eta)
}

/// Runs gradient descent from `x0` until `max_iters`, `‖E^k‖_F ≤ stop_tol`,
/// or divergence.
///
/// Iteration 0 (the initial point) and the final iteration are always
/// recorded; in between every `record_every`-th iteration is kept.
pub fn run_gd(instance: &ProblemInstance, x0: &DMatrix<f64>, config: &GdConfig) -> Result<GdRun> {
    config.validate()?;
    let m = instance.m();
    check_shapes(x0, &instance.mask, m)?;
    if x0.ncols() != instance.r() {
        return Err(Error::ShapeMismatch {
            expected_rows: instance.n(),
            expected_cols: instance.r(),
            rows: x0.nrows(),
            cols: x0.ncols(),
        });
    }
    let observed = instance.observed();
    let limit = DIVERGENCE_FACTOR * m.norm();

    let mut trace = ConvergenceTrace::default();
    let mut x = x0.clone();
    let mut k = 0;
    let stop = loop {
        let xxt = &x * x.transpose();
        let err = (&xxt - m).norm();
        let residual = instance.mask.project(&xxt) - &observed;
        let grad = &residual * &x;
        let obj = 0.25 * residual.norm_squared();
        let grad_norm = grad.norm();

        let stop = if !err.is_finite() || err > limit {
            Some(StopReason::Diverged)
        } else if err <= config.stop_tol {
            Some(StopReason::Tolerance)
        } else if k == config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if stop.is_some() || k % config.record_every == 0 {
            trace.push(k, err, grad_norm, obj);
        }
        if let Some(reason) = stop {
            break reason;
        }
        x -= grad * config.eta;
        k += 1;
    };
    Ok(GdRun {
        trace,
        x_final: x,
        iterations: k,
        stop,
    })
}
