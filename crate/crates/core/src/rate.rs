//! Spectral radius of the linearized error map and convergence-rate tools.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eigen::{dominant, eigenvalues, Eigenvalue};
use crate::error::{invalid, Result};
use crate::linalg::sym_eigen_desc;
use crate::gd::ConvergenceTrace;
use crate::linops::{materialize, LinearOperator, RateOperator, StepOperator, DEFAULT_DENSE_CAP};
use crate::problem::ProblemInstance;
use crate::rng::{gaussian_vector, stream_rng, Stream};

/// Dense `n²×n²` matrix of `H = P·A·P`.
pub fn build_h(instance: &ProblemInstance, eta: f64, cap: usize) -> Result<DMatrix<f64>> {
    materialize(&RateOperator::for_instance(instance, eta)?, cap)
}

/// Dense `n²×n²` matrix of `A = I − η(M⊕M)SᵀS`.
pub fn build_a(instance: &ProblemInstance, eta: f64, cap: usize) -> Result<DMatrix<f64>> {
    materialize(&StepOperator::for_instance(instance, eta)?, cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectralRadius {
    pub rho: f64,
    /// An eigenvalue with `|λ| = ρ`, as `[re, im]`.
    pub dominant: [f64; 2],
}

/// `ρ` from the full spectrum of a dense matrix.
pub fn spectral_radius_dense(m: &DMatrix<f64>) -> Result<SpectralRadius> {
    let d = dominant(&eigenvalues(m)?);
    Ok(SpectralRadius {
        rho: d.rho,
        dominant: [d.value.re, d.value.im],
    })
}

/// Orthonormal basis (as columns of an `n²×d` matrix, `d = nr − r(r−1)/2`)
/// of the range of `P`: symmetric matrices `E` with `P⊥EP⊥ = 0`.
///
/// Built from `u_a u_bᵀ + u_b u_aᵀ` (`a ≤ b`) and `u_a w_cᵀ + w_c u_aᵀ` with
/// `w_c` an orthonormal basis of the complement of `span(U)`.
pub fn projection_range_basis(u: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, r) = u.shape();
    let (_, vecs) = sym_eigen_desc(&(DMatrix::identity(n, n) - u * u.transpose()));
    let w = vecs.columns(0, n - r).into_owned();
    let d = n * r - r * (r.saturating_sub(1)) / 2;
    let mut basis = DMatrix::zeros(n * n, d);
    let mut col = 0;
    let mut push = |x: &DVector<f64>, y: &DVector<f64>| {
        let sym = x * y.transpose() + y * x.transpose();
        let norm = sym.norm();
        basis.set_column(col, &DVector::from_column_slice((sym / norm).as_slice()));
        col += 1;
    };
    for a in 0..r {
        let ua = u.column(a).into_owned();
        for b in a..r {
            push(&ua, &u.column(b).into_owned());
        }
        for c in 0..n - r {
            push(&ua, &w.column(c).into_owned());
        }
    }
    basis
}

/// `ρ(H)` from the `d×d` compression `QᵀAQ`, where `P = QQᵀ`.
///
/// Since `H = Q(QᵀAQ)Qᵀ`, the nonzero spectrum of `H` is the spectrum of the
/// compression, so this is a complete dense eigensolve on a much smaller
/// matrix (`57×57` instead of `400×400` at `n = 20, r = 3`).
pub fn spectral_radius_reduced(instance: &ProblemInstance, eta: f64) -> Result<SpectralRadius> {
    let a = StepOperator::for_instance(instance, eta)?;
    let q = projection_range_basis(instance.u());
    let mut aq = DMatrix::zeros(q.nrows(), q.ncols());
    for k in 0..q.ncols() {
        aq.set_column(k, &a.apply_unchecked(&q.column(k).into_owned()));
    }
    spectral_radius_dense(&(q.transpose() * aq))
}

/// Power-iteration (Gelfand) estimator settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GelfandOptions {
    pub k_max: usize,
    pub probes: usize,
    pub seed: u64,
}

impl Default for GelfandOptions {
    fn default() -> Self {
        Self {
            k_max: 400,
            probes: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GelfandEstimate {
    /// Median over probes.
    pub rho: f64,
    /// `[min, max]` over probes.
    pub band: [f64; 2],
    /// Set when every probe was annihilated (nilpotent on the probes).
    pub decayed: bool,
    pub per_probe: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let len = values.len();
    if len % 2 == 1 {
        values[len / 2]
    } else {
        0.5 * (values[len / 2 - 1] + values[len / 2])
    }
}

/// Estimates `ρ(op)` as `‖opᵏv‖^{1/k}` using renormalized power iteration.
///
/// Each probe's estimate is the geometric mean of its last two one-step
/// growth factors, which also tracks a dominant pair `±ρ` or a complex pair.
pub fn spectral_radius_gelfand<O: LinearOperator + ?Sized>(
    op: &O,
    opts: &GelfandOptions,
) -> Result<GelfandEstimate> {
    if opts.k_max < 2 {
        return Err(invalid("k_max", "must be >= 2"));
    }
    if opts.probes == 0 {
        return Err(invalid("probes", "must be >= 1"));
    }
    let dim = op.dim();
    let mut rng = stream_rng(opts.seed, Stream::Probes, 0);
    let mut per_probe = Vec::with_capacity(opts.probes);
    for _ in 0..opts.probes {
        let mut v = DVector::from_vec(gaussian_vector(&mut rng, dim));
        v /= v.norm();
        let (mut prev, mut last) = (f64::NAN, f64::NAN);
        let mut annihilated = false;
        for _ in 0..opts.k_max {
            let w = op.apply_unchecked(&v);
            let g = w.norm();
            if !(g > f64::MIN_POSITIVE) || !g.is_finite() {
                annihilated = g.is_finite();
                break;
            }
            v = w / g;
            prev = last;
            last = g;
        }
        if annihilated {
            per_probe.push(0.0);
        } else if prev.is_finite() {
            per_probe.push((prev * last).sqrt());
        } else {
            per_probe.push(last);
        }
    }
    let decayed = per_probe.iter().all(|&g| g == 0.0);
    let lo = per_probe.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_probe.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rho = median(&mut per_probe.clone());
    Ok(GelfandEstimate {
        rho,
        band: [lo, hi],
        decayed,
        per_probe,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Dense,
    Gelfand,
}

/// Settings for [`contraction_check_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateOptions {
    /// Use the dense eigensolver while `n² ≤ dense_limit`.
    pub dense_limit: usize,
    pub gelfand: GelfandOptions,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            dense_limit: 400,
            gelfand: GelfandOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub rho_h_seconds: f64,
    pub rho_a_seconds: f64,
}

/// Spectral radii of `H` and `A` for one instance and step size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    pub eta: f64,
    pub rho_h: f64,
    pub rho_a: f64,
    /// `ρ(H) < 1`.
    pub contracts: bool,
    pub method: RateMethod,
    /// Dominant eigenvalue of `H` as `[re, im]` (dense method only).
    pub dominant_eigenvalue: Option<[f64; 2]>,
    /// Probe spread `[min, max]` for `ρ(H)` (Gelfand method only).
    pub rho_h_band: Option<[f64; 2]>,
    pub timing: Timing,
}

/// `ρ(H)` alone, by the same method selection as [`contraction_check_with`].
pub fn rate_radius(
    instance: &ProblemInstance,
    eta: f64,
    opts: &RateOptions,
) -> Result<(f64, RateMethod)> {
    let h = RateOperator::for_instance(instance, eta)?;
    let dim = h.dim();
    if dim <= opts.dense_limit {
        let m = materialize(&h, dim.max(DEFAULT_DENSE_CAP))?;
        Ok((spectral_radius_dense(&m)?.rho, RateMethod::Dense))
    } else {
        Ok((spectral_radius_gelfand(&h, &opts.gelfand)?.rho, RateMethod::Gelfand))
    }
}

pub fn contraction_check(instance: &ProblemInstance, eta: f64) -> Result<RateReport> {
    contraction_check_with(instance, eta, &RateOptions::default())
}

pub fn contraction_check_with(
    instance: &ProblemInstance,
    eta: f64,
    opts: &RateOptions,
) -> Result<RateReport> {
    let h = RateOperator::for_instance(instance, eta)?;
    let dim = h.dim();
    let dense = dim <= opts.dense_limit;

    let start = Instant::now();
    let (rho_h, dominant_eigenvalue, rho_h_band) = if dense {
        let sr = spectral_radius_dense(&materialize(&h, dim.max(DEFAULT_DENSE_CAP))?)?;
        (sr.rho, Some(sr.dominant), None)
    } else {
        let est = spectral_radius_gelfand(&h, &opts.gelfand)?;
        (est.rho, None, Some(est.band))
    };
    let rho_h_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let a = h.step();
    let rho_a = if dense {
        spectral_radius_dense(&materialize(a, dim.max(DEFAULT_DENSE_CAP))?)?.rho
    } else {
        spectral_radius_gelfand(a, &opts.gelfand)?.rho
    };
    let rho_a_seconds = start.elapsed().as_secs_f64();

    Ok(RateReport {
        n: instance.n(),
        r: instance.r(),
        seed: instance.seed(),
        eta,
        rho_h,
        rho_a,
        contracts: rho_h < 1.0,
        method: if dense { RateMethod::Dense } else { RateMethod::Gelfand },
        dominant_eigenvalue,
        rho_h_band,
        timing: Timing {
            rho_h_seconds,
            rho_a_seconds,
        },
    })
}

/// `c·‖e⁰‖·ρᵏ` at each `k`.
pub fn theoretical_curve(e0_norm: f64, rho: f64, c: f64, ks: &[usize]) -> Vec<f64> {
    ks.iter()
        .map(|&k| c * e0_norm * rho.powi(k as i32))
        .collect()
}

/// Bound for `a_{n+1} ≤ ρ·a_n + q·a_n²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarRecursionBound {
    pub rho: f64,
    pub q: f64,
    pub a0: f64,
    /// `a_n ≤ K·a₀·ρⁿ` holds with this `K` when `a₀ < ρ(1−ρ)/q`.
    pub k: Option<f64>,
    /// `a_n → 0` is guaranteed (`a₀ < (1−ρ)/q`).
    pub converges: bool,
}

impl ScalarRecursionBound {
    pub fn bound_at(&self, n: usize) -> Option<f64> {
        self.k.map(|k| k * self.a0 * self.rho.powi(n as i32))
    }
}

pub fn scalar_bound(rho: f64, q: f64, a0: f64) -> Result<ScalarRecursionBound> {
    if !(0.0..1.0).contains(&rho) {
        return Err(invalid("rho", format!("must lie in [0, 1), got {rho}")));
    }
    if !(q >= 0.0 && q.is_finite()) {
        return Err(invalid("q", format!("must be finite and >= 0, got {q}")));
    }
    if !(a0 >= 0.0 && a0.is_finite()) {
        return Err(invalid("a0", format!("must be finite and >= 0, got {a0}")));
    }
    let (k, converges) = if q == 0.0 {
        (Some(1.0), true)
    } else {
        let margin = rho * (1.0 - rho) / q;
        let k = (a0 < margin).then(|| 1.0 / (1.0 - a0 / margin));
        (k, a0 < (1.0 - rho) / q)
    };
    Ok(ScalarRecursionBound {
        rho,
        q,
        a0,
        k,
        converges,
    })
}

/// Window used to read an asymptotic rate off a trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateWindow {
    /// Lower end of the error window, relative to `‖M‖_F`.
    pub lo: f64,
    /// Upper end, relative to `‖M‖_F`.
    pub hi: f64,
    /// Use at most the last `m` recorded points inside the window.
    pub m: usize,
    pub min_points: usize,
}

impl Default for RateWindow {
    fn default() -> Self {
        Self {
            lo: 1e-11,
            hi: 1e-4,
            m: 50,
            min_points: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmpiricalRate {
    pub rate: f64,
    pub points: usize,
    pub first_iter: usize,
    pub last_iter: usize,
}

/// Geometric-mean per-iteration contraction over the tail of the trace
/// inside the window; `None` with fewer than `min_points` points.
pub fn empirical_rate(
    trace: &ConvergenceTrace,
    m_norm: f64,
    window: &RateWindow,
) -> Option<EmpiricalRate> {
    let (lo, hi) = (window.lo * m_norm, window.hi * m_norm);
    let inside: Vec<usize> = (0..trace.len())
        .filter(|&i| {
            let e = trace.err_fro[i];
            e >= lo && e <= hi && e > 0.0
        })
        .collect();
    if inside.len() < window.min_points.max(2) {
        return None;
    }
    let tail = &inside[inside.len().saturating_sub(window.m)..];
    let (a, b) = (tail[0], tail[tail.len() - 1]);
    let (ka, kb) = (trace.iters[a], trace.iters[b]);
    if kb <= ka {
        return None;
    }
    let rate = (trace.err_fro[b] / trace.err_fro[a]).powf(1.0 / (kb - ka) as f64);
    Some(EmpiricalRate {
        rate,
        points: tail.len(),
        first_iter: ka,
        last_iter: kb,
    })
}

/// Smallest `C` with `err_k ≤ C·‖e⁰‖·ρᵏ` over the trace.
pub fn implied_constant(trace: &ConvergenceTrace, rho: f64) -> Option<f64> {
    let e0 = *trace.err_fro.first()?;
    if !(e0 > 0.0) || !(rho > 0.0) {
        return None;
    }
    trace
        .iters
        .iter()
        .zip(&trace.err_fro)
        .map(|(&k, &e)| e / (e0 * rho.powi(k as i32)))
        .filter(|c| c.is_finite())
        .reduce(f64::max)
}

/// Every eigenvalue of a dense matrix, sorted by decreasing modulus.
pub fn spectrum_sorted(m: &DMatrix<f64>) -> Result<Vec<Eigenvalue>> {
    let mut vals = eigenvalues(m)?;
    vals.sort_by(|a, b| b.modulus().total_cmp(&a.modulus()).then(b.re.total_cmp(&a.re)));
    Ok(vals)
}
