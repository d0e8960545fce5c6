//! Linear maps on vectorized `n×n` matrices.
//!
//! Vectorization stacks columns: entry `(i, j)` of `E` sits at position
//! `j·n + i` of `vec(E)`. This matches nalgebra's column-major storage, so
//! `vec` and `unvec` are plain copies.
//!
//! Every operator here is immutable after construction and can be shared
//! between threads; `apply` is pure.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{invalid, Error, Result};
use crate::linalg::{gram_deviation, symmetrized};
use crate::problem::{ProblemInstance, SamplingMask};

/// Largest operator dimension (`n²`) that may be materialized by default.
pub const DEFAULT_DENSE_CAP: usize = 4096;

/// Gram deviation `‖UᵀU − I‖_F` accepted for an orthonormal basis.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

/// Column-major index bookkeeping for `n×n` matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VecIndexMap {
    n: usize,
}

impl VecIndexMap {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of a vectorized matrix, `n²`.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn linear(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn pair(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    pub fn vec(&self, e: &DMatrix<f64>) -> Result<DVector<f64>> {
        if e.shape() != (self.n, self.n) {
            return Err(Error::ShapeMismatch {
                expected_rows: self.n,
                expected_cols: self.n,
                rows: e.nrows(),
                cols: e.ncols(),
            });
        }
        Ok(DVector::from_column_slice(e.as_slice()))
    }

    pub fn unvec(&self, e: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len(self.dim(), e.len())?;
        Ok(DMatrix::from_column_slice(self.n, self.n, e.as_slice()))
    }
}

/// `vec(E)` for a square matrix.
pub fn vec_matrix(e: &DMatrix<f64>) -> Result<DVector<f64>> {
    if e.nrows() != e.ncols() {
        return Err(Error::NotSquare {
            rows: e.nrows(),
            cols: e.ncols(),
        });
    }
    VecIndexMap::new(e.nrows()).vec(e)
}

/// Inverse of [`vec_matrix`]; the length must be a perfect square.
pub fn unvec(e: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = (e.len() as f64).sqrt().round() as usize;
    if n * n != e.len() {
        return Err(invalid("e", format!("length {} is not a perfect square", e.len())));
    }
    VecIndexMap::new(n).unvec(e)
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

#[inline]
fn as_matrix(n: usize, x: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(n, n, x.as_slice())
}

#[inline]
fn as_vector(m: DMatrix<f64>) -> DVector<f64> {
    let len = m.len();
    m.reshape_generic(nalgebra::Dyn(len), nalgebra::Const::<1>)
}

/// Which operator a [`LinearOperator`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Identity,
    /// `SᵀS`, the diagonal 0/1 sampling mask.
    Mask,
    /// The transpose permutation `T`.
    Transpose,
    /// `P₁ = I − P_{U⊥} ⊗ P_{U⊥}`.
    TangentProjection,
    /// `P₂ = (I + T)/2`.
    SymProjection,
    /// `P = P₁P₂`.
    Projection,
    /// `M ⊕ M`.
    KronSum,
    /// `A = I − η(M ⊕ M)SᵀS`.
    Step,
    /// `H = PAP`.
    Rate,
    Dense,
    Composite,
}

impl fmt::Display for OperatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Self::Identity => "identity",
            Self::Mask => "mask",
            Self::Transpose => "transpose",
            Self::TangentProjection => "P1",
            Self::SymProjection => "P2",
            Self::Projection => "P",
            Self::KronSum => "kron_sum",
            Self::Step => "A",
            Self::Rate => "H",
            Self::Dense => "dense",
            Self::Composite => "composite",
        };
        f.write_str(name)
    }
}

/// A linear map on `R^dim`.
pub trait LinearOperator: Send + Sync {
    fn dim(&self) -> usize;

    fn kind(&self) -> OperatorKind;

    /// Applies the map; `x.len() == self.dim()` is the caller's contract.
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64>;

    fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(self.apply_unchecked(x))
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> OperatorKind {
        (**self).kind()
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).apply_unchecked(x)
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn kind(&self) -> OperatorKind {
        (**self).kind()
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).apply_unchecked(x)
    }
}

/// Dense matrix whose column `j` is `op(e_j)`.
pub fn materialize<O: LinearOperator + ?Sized>(op: &O, cap: usize) -> Result<DMatrix<f64>> {
    let dim = op.dim();
    if dim > cap {
        return Err(Error::DenseCapExceeded { dim, cap });
    }
    let mut out = DMatrix::zeros(dim, dim);
    let mut basis = DVector::zeros(dim);
    for j in 0..dim {
        basis[j] = 1.0;
        out.set_column(j, &op.apply_unchecked(&basis));
        basis[j] = 0.0;
    }
    Ok(out)
}

/// `α·I`.
#[derive(Debug, Clone)]
pub struct ScaledIdentity {
    dim: usize,
    alpha: f64,
}

impl ScaledIdentity {
    pub fn new(dim: usize, alpha: f64) -> Self {
        Self { dim, alpha }
    }
}

impl LinearOperator for ScaledIdentity {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Identity
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        x * self.alpha
    }
}

/// A dense matrix viewed as an operator.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        crate::linalg::require_square(&matrix)?;
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Dense
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }
}

/// `SᵀS`: keeps coordinates in Ω and zeroes the rest.
#[derive(Debug, Clone)]
pub struct MaskOperator {
    mask: SamplingMask,
}

impl MaskOperator {
    pub fn new(mask: SamplingMask) -> Self {
        Self { mask }
    }

    pub fn mask(&self) -> &SamplingMask {
        &self.mask
    }
}

impl LinearOperator for MaskOperator {
    fn dim(&self) -> usize {
        self.mask.n() * self.mask.n()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Mask
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(x.len());
        self.mask.apply_slice(x.as_slice(), out.as_mut_slice());
        out
    }
}

/// `T`: `T·vec(E) = vec(Eᵀ)`. A pure index permutation.
#[derive(Debug, Clone, Copy)]
pub struct TransposeOperator {
    map: VecIndexMap,
}

impl TransposeOperator {
    pub fn new(n: usize) -> Self {
        Self {
            map: VecIndexMap::new(n),
        }
    }
}

impl LinearOperator for TransposeOperator {
    fn dim(&self) -> usize {
        self.map.dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Transpose
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.map.n();
        let mut out = DVector::zeros(x.len());
        for j in 0..n {
            for i in 0..n {
                out[self.map.linear(i, j)] = x[self.map.linear(j, i)];
            }
        }
        out
    }
}

/// `P₂`: `E ↦ (E + Eᵀ)/2`.
#[derive(Debug, Clone, Copy)]
pub struct SymProjection {
    map: VecIndexMap,
}

impl SymProjection {
    pub fn new(n: usize) -> Self {
        Self {
            map: VecIndexMap::new(n),
        }
    }
}

impl LinearOperator for SymProjection {
    fn dim(&self) -> usize {
        self.map.dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::SymProjection
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.map.n();
        let mut out = DVector::zeros(x.len());
        for j in 0..n {
            for i in 0..n {
                let a = self.map.linear(i, j);
                let b = self.map.linear(j, i);
                out[a] = 0.5 * (x[a] + x[b]);
            }
        }
        out
    }
}

/// `P₁`: `E ↦ E − P_{U⊥} E P_{U⊥}`, the orthogonal projection onto the
/// tangent space of rank-`r` matrices at `M = UΛUᵀ`.
///
/// Applied as `UUᵀE + EUUᵀ − UUᵀEUUᵀ`, which costs `O(n²r)`.
#[derive(Debug, Clone)]
pub struct TangentProjection {
    u: DMatrix<f64>,
}

impl TangentProjection {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        let deviation = gram_deviation(&u);
        if !(deviation <= ORTHONORMAL_TOL) {
            return Err(Error::NotOrthonormal { deviation });
        }
        Ok(Self { u })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn apply_matrix(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        let u = &self.u;
        let ut_e = u.transpose() * e;
        let e_u = e * u;
        let core = &ut_e * u;
        u * &ut_e + &e_u * u.transpose() - u * core * u.transpose()
    }
}

impl LinearOperator for TangentProjection {
    fn dim(&self) -> usize {
        self.u.nrows() * self.u.nrows()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::TangentProjection
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.u.nrows();
        as_vector(self.apply_matrix(&as_matrix(n, x)))
    }
}

/// `P = P₁P₂`; applies `P₂` first.
#[derive(Debug, Clone)]
pub struct Projection {
    tangent: TangentProjection,
    sym: SymProjection,
}

impl Projection {
    pub fn new(u: DMatrix<f64>) -> Result<Self> {
        let n = u.nrows();
        Ok(Self {
            tangent: TangentProjection::new(u)?,
            sym: SymProjection::new(n),
        })
    }

    pub fn tangent(&self) -> &TangentProjection {
        &self.tangent
    }

    pub fn sym(&self) -> &SymProjection {
        &self.sym
    }
}

impl LinearOperator for Projection {
    fn dim(&self) -> usize {
        self.sym.dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Projection
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        self.tangent.apply_unchecked(&self.sym.apply_unchecked(x))
    }
}

/// `M ⊕ M = M ⊗ I + I ⊗ M`, acting as `E ↦ ME + EM`.
#[derive(Debug, Clone)]
pub struct KronSum {
    m: DMatrix<f64>,
}

impl KronSum {
    /// Accepts `M` within the symmetry tolerance and keeps its symmetric part.
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        Ok(Self { m: symmetrized(m)? })
    }

    pub fn apply_matrix(&self, e: &DMatrix<f64>) -> DMatrix<f64> {
        &self.m * e + e * &self.m
    }
}

impl LinearOperator for KronSum {
    fn dim(&self) -> usize {
        self.m.nrows() * self.m.nrows()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::KronSum
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.m.nrows();
        as_vector(self.apply_matrix(&as_matrix(n, x)))
    }
}

/// `A = I − η(M ⊕ M)SᵀS`, the linearized error map of one gradient step:
/// `E ↦ E − η(P_Ω(E)M + M P_Ω(E))`.
#[derive(Debug, Clone)]
pub struct StepOperator {
    kron: KronSum,
    mask: MaskOperator,
    eta: f64,
}

impl StepOperator {
    pub fn new(m: &DMatrix<f64>, mask: &SamplingMask, eta: f64) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(invalid("eta", format!("must be finite and >= 0, got {eta}")));
        }
        if mask.n() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: mask.n(),
            });
        }
        Ok(Self {
            kron: KronSum::new(m)?,
            mask: MaskOperator::new(mask.clone()),
            eta,
        })
    }

    pub fn for_instance(instance: &ProblemInstance, eta: f64) -> Result<Self> {
        Self::new(instance.m(), &instance.mask, eta)
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }
}

impl LinearOperator for StepOperator {
    fn dim(&self) -> usize {
        self.kron.dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Step
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let masked = self.mask.apply_unchecked(x);
        x - self.kron.apply_unchecked(&masked) * self.eta
    }
}

/// `H = P A P`, whose spectral radius is the local linear rate.
#[derive(Debug, Clone)]
pub struct RateOperator {
    projection: Projection,
    step: StepOperator,
}

impl RateOperator {
    pub fn new(u: &DMatrix<f64>, m: &DMatrix<f64>, mask: &SamplingMask, eta: f64) -> Result<Self> {
        if u.nrows() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                actual: u.nrows(),
            });
        }
        Ok(Self {
            projection: Projection::new(u.clone())?,
            step: StepOperator::new(m, mask, eta)?,
        })
    }

    pub fn for_instance(instance: &ProblemInstance, eta: f64) -> Result<Self> {
        Self::new(instance.u(), instance.m(), &instance.mask, eta)
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn step(&self) -> &StepOperator {
        &self.step
    }
}

impl LinearOperator for RateOperator {
    fn dim(&self) -> usize {
        self.step.dim()
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Rate
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        let px = self.projection.apply_unchecked(x);
        self.projection
            .apply_unchecked(&self.step.apply_unchecked(&px))
    }
}

/// Product `F₁F₂⋯F_k`; the rightmost factor is applied first.
pub struct Composite {
    dim: usize,
    factors: Vec<Box<dyn LinearOperator>>,
}

impl Composite {
    pub fn product(factors: Vec<Box<dyn LinearOperator>>) -> Result<Self> {
        let dim = factors
            .first()
            .map(|f| f.dim())
            .ok_or_else(|| invalid("factors", "empty product"))?;
        for f in &factors {
            check_len(dim, f.dim())?;
        }
        Ok(Self { dim, factors })
    }
}

impl LinearOperator for Composite {
    fn dim(&self) -> usize {
        self.dim
    }
    fn kind(&self) -> OperatorKind {
        OperatorKind::Composite
    }
    fn apply_unchecked(&self, x: &DVector<f64>) -> DVector<f64> {
        self.factors
            .iter()
            .rev()
            .fold(x.clone(), |acc, f| f.apply_unchecked(&acc))
    }
}
