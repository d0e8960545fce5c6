//! Symmetric matrix-completion instances.
//!
//! Index pairs are 0-based everywhere in this crate, including files and
//! error messages. An entry written `(i, j)` with 1-based indices elsewhere
//! corresponds to `(i − 1, j − 1)` here.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{gram_deviation, min_eigenvalue, sym_eigen_desc, truncated_eig};
use crate::linops::VecIndexMap;
use crate::report::to_precise_json;
use crate::rng::{gaussian_matrix, stream_rng, Stream, GENERATOR_NAME};

/// Smallest admissible `σ_min/σ_max` of a ground-truth factor.
pub const RANK_RATIO_TOL: f64 = 1e-8;

/// Redraws attempted before [`generate_instance`] gives up.
pub const MAX_REDRAWS: usize = 16;

/// Symmetric sampling set Ω.
///
/// Stored as the sorted set of column-major linear indices `j·n + i`. Because
/// Ω is symmetric, this set coincides with the row-major set `i·n + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplingMask {
    n: usize,
    indices: Vec<usize>,
}

impl SamplingMask {
    /// Builds Ω from index pairs, adding `(j, i)` for every `(i, j)`.
    pub fn from_pairs<I>(n: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let map = VecIndexMap::new(n);
        let mut set = BTreeSet::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange { i, j, n });
            }
            set.insert(map.linear(i, j));
            set.insert(map.linear(j, i));
        }
        Ok(Self {
            n,
            indices: set.into_iter().collect(),
        })
    }

    pub fn full(n: usize) -> Self {
        Self {
            n,
            indices: (0..n * n).collect(),
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indices: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cardinality `s = |Ω|`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.indices.len() == self.n * self.n
    }

    /// Sorted column-major linear indices.
    pub fn linear_indices(&self) -> &[usize] {
        &self.indices
    }

    /// Sorted row-major linear indices `i·n + j`.
    pub fn row_major_indices(&self) -> Vec<usize> {
        let n = self.n;
        let mut out: Vec<usize> = self.indices.iter().map(|&k| (k % n) * n + k / n).collect();
        out.sort_unstable();
        out
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.indices.binary_search(&(j * self.n + i)).is_ok()
    }

    /// Pairs `(i, j)` in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n;
        let mut out: Vec<(usize, usize)> = self.indices.iter().map(|&k| (k % n, k / n)).collect();
        out.sort_unstable();
        out
    }

    /// Linear indices outside Ω.
    pub fn complement(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n * self.n - self.len());
        let mut it = self.indices.iter().peekable();
        for k in 0..self.n * self.n {
            if it.peek() == Some(&&k) {
                it.next();
            } else {
                out.push(k);
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs().iter().all(|&(i, j)| self.contains(j, i))
    }

    /// `P_Ω` on a slice holding a vectorized matrix; zeroes unsampled entries.
    pub fn apply_slice(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for &k in &self.indices {
            out[k] = x[k];
        }
    }

    /// `P_Ω(Z)` for an `n×n` matrix.
    pub fn project(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        self.apply_slice(z.as_slice(), out.as_mut_slice());
        out
    }
}

/// Symmetric Bernoulli sampling: every unordered pair `{i, j}` with `i ≤ j`
/// (diagonal included) is kept independently with probability `p`, and a kept
/// pair contributes both `(i, j)` and `(j, i)`.
pub fn sample_bernoulli_symmetric(n: usize, p: f64, seed: u64) -> Result<SamplingMask> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1], got {p}")));
    }
    let mut rng = stream_rng(seed, Stream::Mask, 0);
    let mut pairs = Vec::new();
    for j in 0..n {
        for i in 0..=j {
            // Always draw so the stream layout is independent of p.
            let u: f64 = rng.random();
            if u < p {
                pairs.push((i, j));
            }
        }
    }
    SamplingMask::from_pairs(n, pairs)
}

/// Closure sampling: each of the `n²` entries is kept independently with
/// probability `p`, then `(j, i)` is added for every kept `(i, j)`. An
/// off-diagonal pair is therefore observed with probability `1 − (1−p)²`.
pub fn sample_bernoulli_closure(n: usize, p: f64, seed: u64) -> Result<SamplingMask> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1], got {p}")));
    }
    let mut rng = stream_rng(seed, Stream::Mask, 0);
    let mut pairs = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let u: f64 = rng.random();
            if u < p {
                pairs.push((i, j));
            }
        }
    }
    SamplingMask::from_pairs(n, pairs)
}

/// How a Bernoulli mask is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingScheme {
    /// [`sample_bernoulli_symmetric`].
    #[default]
    UpperTriangle,
    /// [`sample_bernoulli_closure`].
    Closure,
}

impl SamplingScheme {
    pub fn sample(self, n: usize, p: f64, seed: u64) -> Result<SamplingMask> {
        match self {
            Self::UpperTriangle => sample_bernoulli_symmetric(n, p, seed),
            Self::Closure => sample_bernoulli_closure(n, p, seed),
        }
    }
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper_triangle" | "upper-triangle" => Ok(Self::UpperTriangle),
            "closure" => Ok(Self::Closure),
            other => Err(invalid(
                "sampling",
                format!("unknown scheme {other:?}; expected upper-triangle or closure"),
            )),
        }
    }
}

/// Ground truth `M = X* X*ᵀ` with its economy eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub n: usize,
    pub r: usize,
    /// Factor the instance was generated from.
    pub xstar: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// `n×r`, orthonormal columns.
    pub u: DMatrix<f64>,
    /// Non-increasing, strictly positive.
    pub lambda: DVector<f64>,
    pub seed: u64,
}

impl GroundTruth {
    /// Builds the instance from a full-column-rank factor.
    ///
    /// The eigendecomposition comes from the `r×r` Gram matrix
    /// `X*ᵀX* = V Σ² Vᵀ`, giving `U = X* V Σ⁻¹` and `Λ = Σ²`, so exactly `r`
    /// positive eigenvalues are produced.
    pub fn from_factor(xstar: DMatrix<f64>, seed: u64) -> Result<Self> {
        let (n, r) = xstar.shape();
        if r == 0 || r > n {
            return Err(Error::RankOutOfRange { n, r });
        }
        let gram = xstar.transpose() * &xstar;
        let (sq, v) = sym_eigen_desc(&gram);
        let smax = sq[0].max(0.0).sqrt();
        let smin = sq[r - 1].max(0.0).sqrt();
        let ratio = if smax > 0.0 { smin / smax } else { 0.0 };
        if !(ratio >= RANK_RATIO_TOL) {
            return Err(Error::RankDeficient { ratio });
        }
        let sigma_inv = DMatrix::from_diagonal(&sq.map(|s| 1.0 / s.sqrt()));
        let u = &xstar * &v * sigma_inv;
        let m = &xstar * xstar.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let truth = Self {
            n,
            r,
            xstar,
            m,
            u,
            lambda: sq,
            seed,
        };
        truth.validate()?;
        Ok(truth)
    }

    /// Checks the construction invariants.
    pub fn validate(&self) -> Result<()> {
        let mnorm = self.m.norm();
        let from_factor = (&self.xstar * self.xstar.transpose() - &self.m).norm();
        let from_eig = (&self.u * DMatrix::from_diagonal(&self.lambda) * self.u.transpose()
            - &self.m)
            .norm();
        if from_factor > 1e-10 * mnorm || from_eig > 1e-10 * mnorm {
            return Err(invalid(
                "ground truth",
                format!("reconstruction error {from_factor:e} / {from_eig:e}"),
            ));
        }
        let deviation = gram_deviation(&self.u);
        if deviation > 1e-12 {
            return Err(Error::NotOrthonormal { deviation });
        }
        let sorted = self.lambda.as_slice().windows(2).all(|w| w[0] >= w[1]);
        if !sorted || self.lambda[self.r - 1] <= 0.0 {
            return Err(invalid("lambda", "eigenvalues must be positive and sorted"));
        }
        Ok(())
    }

    /// `λ₁ = ‖M‖₂`.
    pub fn spectral_norm(&self) -> f64 {
        self.lambda[0]
    }

    pub fn lambda_min(&self) -> f64 {
        self.lambda[self.r - 1]
    }

    /// The balanced factor `U Λ^{1/2}`.
    pub fn canonical_factor(&self) -> DMatrix<f64> {
        &self.u * DMatrix::from_diagonal(&self.lambda.map(f64::sqrt))
    }

    /// `P_{U⊥} = I − UUᵀ`.
    pub fn null_projector(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n, self.n) - &self.u * self.u.transpose()
    }
}

/// Draws `X*` with i.i.d. standard normal entries and builds the ground truth.
///
/// A numerically rank-deficient draw (`σ_min < 1e-8·σ_max`) is discarded and
/// redrawn from the next factor sub-stream.
pub fn generate_instance(n: usize, r: usize, seed: u64) -> Result<GroundTruth> {
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { n, r });
    }
    for attempt in 0..MAX_REDRAWS as u64 {
        let mut rng = stream_rng(seed, Stream::Factor, attempt);
        let xstar = gaussian_matrix(&mut rng, n, r);
        match GroundTruth::from_factor(xstar, seed) {
            Ok(truth) => return Ok(truth),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::RedrawExhausted {
        attempts: MAX_REDRAWS,
    })
}

/// A ground truth together with its sampling set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    pub truth: GroundTruth,
    pub mask: SamplingMask,
    /// Sampling probability, when Ω came from the Bernoulli model.
    pub p: Option<f64>,
}

impl ProblemInstance {
    pub fn new(truth: GroundTruth, mask: SamplingMask, p: Option<f64>) -> Result<Self> {
        if mask.n() != truth.n {
            return Err(Error::DimensionMismatch {
                expected: truth.n,
                actual: mask.n(),
            });
        }
        Ok(Self { truth, mask, p })
    }

    /// Ground truth and upper-triangle Bernoulli mask from one seed.
    pub fn generate(n: usize, r: usize, p: f64, seed: u64) -> Result<Self> {
        Self::generate_with(n, r, p, seed, SamplingScheme::UpperTriangle)
    }

    pub fn generate_with(
        n: usize,
        r: usize,
        p: f64,
        seed: u64,
        scheme: SamplingScheme,
    ) -> Result<Self> {
        let truth = generate_instance(n, r, seed)?;
        let mask = scheme.sample(n, p, seed)?;
        Self::new(truth, mask, Some(p))
    }

    pub fn n(&self) -> usize {
        self.truth.n
    }

    pub fn r(&self) -> usize {
        self.truth.r
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.truth.m
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.truth.u
    }

    pub fn seed(&self) -> u64 {
        self.truth.seed
    }

    /// The observed data `P_Ω(M)`.
    pub fn observed(&self) -> DMatrix<f64> {
        self.mask.project(&self.truth.m)
    }

    pub fn to_file(&self) -> InstanceFile {
        let x = &self.truth.xstar;
        InstanceFile {
            n: self.truth.n,
            r: self.truth.r,
            seed: self.truth.seed,
            xstar: (0..x.nrows())
                .map(|i| (0..x.ncols()).map(|j| x[(i, j)]).collect())
                .collect(),
            omega: self.mask.pairs().into_iter().map(|(i, j)| [i, j]).collect(),
            generator_name: GENERATOR_NAME.to_string(),
            p: self.p,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_precise_json(&self.to_file())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text)?;
        file.into_instance()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// On-disk instance layout. `xstar` is row-major (one array per row) and
/// `omega` lists 0-based pairs in lexicographic order.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub n: usize,
    pub r: usize,
    pub seed: u64,
    #[serde(rename = "Xstar")]
    pub xstar: Vec<Vec<f64>>,
    pub omega: Vec<[usize; 2]>,
    pub generator_name: String,
    pub p: Option<f64>,
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<ProblemInstance> {
        if self.xstar.len() != self.n || self.xstar.iter().any(|row| row.len() != self.r) {
            return Err(Error::Format(format!(
                "Xstar must be {}x{} (row-major)",
                self.n, self.r
            )));
        }
        let x = DMatrix::from_fn(self.n, self.r, |i, j| self.xstar[i][j]);
        let truth = GroundTruth::from_factor(x, self.seed)?;
        let mask = SamplingMask::from_pairs(self.n, self.omega.iter().map(|&[i, j]| (i, j)))?;
        if mask.len() != self.omega.len() {
            return Err(Error::Format(
                "omega must be symmetric and free of duplicates".into(),
            ));
        }
        ProblemInstance::new(truth, mask, self.p)
    }
}

/// `X⁰ = X* + σ·G` with `G` i.i.d. standard normal from the seed's noise stream.
pub fn init_perturbed(xstar: &DMatrix<f64>, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma >= 0.0) {
        return Err(invalid("sigma", format!("must be >= 0, got {sigma}")));
    }
    let mut rng = stream_rng(seed, Stream::InitNoise, 0);
    let noise = gaussian_matrix(&mut rng, xstar.nrows(), xstar.ncols());
    Ok(xstar + noise * sigma)
}

/// Result of spectral initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralInit {
    pub x0: DMatrix<f64>,
    /// Set when fewer than `r` positive eigenvalues were available; the
    /// corresponding columns of `x0` are zero.
    pub deficient: bool,
}

/// Top-`r` eigenpairs of `(1/p)·P_Ω(M)`, negative eigenvalues clipped to 0:
/// `X⁰ = V·diag(max(μ, 0))^{1/2}`.
pub fn init_spectral(
    observed: &DMatrix<f64>,
    mask: &SamplingMask,
    p: f64,
    r: usize,
) -> Result<SpectralInit> {
    let n = mask.n();
    if observed.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: n,
            rows: observed.nrows(),
            cols: observed.ncols(),
        });
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("p", format!("must lie in (0, 1], got {p}")));
    }
    if r == 0 || r > n {
        return Err(Error::RankOutOfRange { n, r });
    }
    let scaled = mask.project(observed) / p;
    let scaled = (&scaled + scaled.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen_desc(&scaled);
    let floor = 1e-14 * scaled.norm();
    let mut x0 = DMatrix::zeros(n, r);
    let mut deficient = false;
    for k in 0..r {
        if vals[k] > floor && vals[k] > 0.0 {
            x0.set_column(k, &(vecs.column(k) * vals[k].sqrt()));
        } else {
            deficient = true;
        }
    }
    Ok(SpectralInit { x0, deficient })
}

/// Outcome of the three membership conditions for `E ∈ {XXᵀ − M}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `‖P_r(M+E) − (M+E)‖_F`.
    pub rank_residual: f64,
    /// `‖E − Eᵀ‖_F`.
    pub asymmetry: f64,
    /// Smallest eigenvalue of the symmetric part of `M+E`.
    pub min_eigenvalue: f64,
    pub tol: f64,
    pub rank_ok: bool,
    pub symmetric_ok: bool,
    pub psd_ok: bool,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.rank_ok && self.symmetric_ok && self.psd_ok
    }
}

/// Reports rank at most r, symmetry and positive
/// semidefiniteness of `M + E`, each at tolerance `tol`.
pub fn feasibility_check(
    e: &DMatrix<f64>,
    truth: &GroundTruth,
    tol: f64,
) -> Result<FeasibilityReport> {
    let n = truth.n;
    if e.shape() != (n, n) {
        return Err(Error::ShapeMismatch {
            expected_rows: n,
            expected_cols: n,
            rows: e.nrows(),
            cols: e.ncols(),
        });
    }
    let total = &truth.m + e;
    let sym = (&total + total.transpose()) * 0.5;
    let asymmetry = (e - e.transpose()).norm();
    let rank_residual = (truncated_eig(&sym, truth.r)? - &sym).norm() + (&total - &sym).norm();
    let min_eig = min_eigenvalue(&sym);
    Ok(FeasibilityReport {
        rank_residual,
        asymmetry,
        min_eigenvalue: min_eig,
        tol,
        rank_ok: rank_residual <= tol,
        symmetric_ok: asymmetry <= tol,
        psd_ok: min_eig >= -tol,
    })
}
