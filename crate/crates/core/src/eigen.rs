//! Eigenvalues of general real matrices.
//!
//! Householder reduction to upper Hessenberg form followed by the implicit
//! Francis double-shift QR iteration, computing eigenvalues only. The
//! iteration follows the EISPACK `hqr` scheme, including the two exceptional
//! shifts at iterations 10 and 30.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::require_square;

/// Iterations allowed per eigenvalue before giving up.
const MAX_ITERS_PER_EIGENVALUE: usize = 100;

/// One eigenvalue `re + i·im`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

impl Eigenvalue {
    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Row-major dense scratch matrix; the QR sweeps walk rows.
struct RowMajor {
    n: usize,
    a: Vec<f64>,
}

impl RowMajor {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = m[(i, j)];
            }
        }
        Self { n, a }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }
}

/// Orthogonal similarity reduction to upper Hessenberg form.
fn hessenberg(h: &mut RowMajor) {
    let n = h.n;
    if n < 3 {
        return;
    }
    let high = n - 1;
    let mut ort = vec![0.0; n];
    for m in 1..high {
        let scale: f64 = (m..=high).map(|i| h.get(i, m - 1).abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..=high).rev() {
            ort[i] = h.get(i, m - 1) / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // H = (I − u uᵀ/h) H (I − u uᵀ/h)
        for j in m..n {
            let mut f = 0.0;
            for i in (m..=high).rev() {
                f += ort[i] * h.get(i, j);
            }
            f /= hh;
            for i in m..=high {
                let v = h.get(i, j) - f * ort[i];
                h.set(i, j, v);
            }
        }
        for i in 0..=high {
            let mut f = 0.0;
            for j in (m..=high).rev() {
                f += ort[j] * h.get(i, j);
            }
            f /= hh;
            for j in m..=high {
                let v = h.get(i, j) - f * ort[j];
                h.set(i, j, v);
            }
        }
        h.set(m, m - 1, scale * g);
        for i in (m + 1)..=high {
            h.set(i, m - 1, 0.0);
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix.
fn hessenberg_qr(h: &mut RowMajor) -> Result<Vec<Eigenvalue>> {
    let nn = h.n;
    let mut out = vec![Eigenvalue { re: 0.0, im: 0.0 }; nn];
    if nn == 0 {
        return Ok(out);
    }
    let eps = f64::EPSILON;
    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h.get(i, j).abs();
        }
    }

    let mut exshift = 0.0;
    let mut iter = 0usize;
    // `n` is the last row of the active block; signed so it can step past 0.
    let mut n = nn as isize - 1;
    let (mut p, mut q, mut r, mut s, mut z);
    let (mut w, mut x, mut y);

    while n >= 0 {
        let nu = n as usize;
        // Look for a single small subdiagonal element.
        let mut l = nu;
        while l > 0 {
            s = h.get(l - 1, l - 1).abs() + h.get(l, l).abs();
            if s == 0.0 {
                s = norm;
            }
            if h.get(l, l - 1).abs() < eps * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            out[nu] = Eigenvalue {
                re: h.get(nu, nu) + exshift,
                im: 0.0,
            };
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            w = h.get(nu, nu - 1) * h.get(nu - 1, nu);
            p = (h.get(nu - 1, nu - 1) - h.get(nu, nu)) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            x = h.get(nu, nu) + exshift;
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                let first = x + z;
                let second = if z != 0.0 { x - w / z } else { first };
                out[nu - 1] = Eigenvalue { re: first, im: 0.0 };
                out[nu] = Eigenvalue { re: second, im: 0.0 };
            } else {
                out[nu - 1] = Eigenvalue { re: x + p, im: z };
                out[nu] = Eigenvalue { re: x + p, im: -z };
            }
            n -= 2;
            iter = 0;
        } else {
            x = h.get(nu, nu);
            y = h.get(nu - 1, nu - 1);
            w = h.get(nu, nu - 1) * h.get(nu - 1, nu);

            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    let v = h.get(i, i) - x;
                    h.set(i, i, v);
                }
                s = h.get(nu, nu - 1).abs() + h.get(nu - 1, nu - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        let v = h.get(i, i) - s;
                        h.set(i, i, v);
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;
            if iter > MAX_ITERS_PER_EIGENVALUE {
                return Err(Error::EigenNoConvergence {
                    index: nu,
                    iterations: iter,
                });
            }

            // Look for two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            loop {
                z = h.get(m, m);
                r = x - z;
                s = y - z;
                p = (r * s - w) / h.get(m + 1, m) + h.get(m, m + 1);
                q = h.get(m + 1, m + 1) - z - r - s;
                r = h.get(m + 2, m + 1);
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h.get(m, m - 1).abs() * (q.abs() + r.abs());
                let rhs = eps
                    * (p.abs()
                        * (h.get(m - 1, m - 1).abs() + z.abs() + h.get(m + 1, m + 1).abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }

            for i in (m + 2)..=nu {
                h.set(i, i - 2, 0.0);
                if i > m + 2 {
                    h.set(i, i - 3, 0.0);
                }
            }

            // Double QR step on rows l..=n and columns m..=n.
            let mut k = m;
            while k < nu {
                let notlast = k != nu - 1;
                if k != m {
                    p = h.get(k, k - 1);
                    q = h.get(k + 1, k - 1);
                    r = if notlast { h.get(k + 2, k - 1) } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        k += 1;
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                } else {
                    x = 0.0;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s != 0.0 {
                    if k != m {
                        h.set(k, k - 1, -s * x);
                    } else if l != m {
                        let v = -h.get(k, k - 1);
                        h.set(k, k - 1, v);
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;

                    for j in k..=nu {
                        let mut pp = h.get(k, j) + q * h.get(k + 1, j);
                        if notlast {
                            pp += r * h.get(k + 2, j);
                            let v = h.get(k + 2, j) - pp * z;
                            h.set(k + 2, j, v);
                        }
                        let v = h.get(k, j) - pp * x;
                        h.set(k, j, v);
                        let v = h.get(k + 1, j) - pp * y;
                        h.set(k + 1, j, v);
                    }
                    for i in l..=nu.min(k + 3) {
                        let mut pp = x * h.get(i, k) + y * h.get(i, k + 1);
                        if notlast {
                            pp += z * h.get(i, k + 2);
                            let v = h.get(i, k + 2) - pp * r;
                            h.set(i, k + 2, v);
                        }
                        let v = h.get(i, k) - pp;
                        h.set(i, k, v);
                        let v = h.get(i, k + 1) - pp * q;
                        h.set(i, k + 1, v);
                    }
                }
                k += 1;
            }
        }
    }
    Ok(out)
}

/// All eigenvalues of a square real matrix, in the order the QR sweep
/// deflates them.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Eigenvalue>> {
    require_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(crate::error::invalid("matrix", "contains non-finite entries"));
    }
    let mut h = RowMajor::from_matrix(m);
    hessenberg(&mut h);
    hessenberg_qr(&mut h)
}

/// Spectral radius together with an eigenvalue attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DominantEigenvalue {
    pub rho: f64,
    pub value: Eigenvalue,
}

/// Picks the eigenvalue of largest modulus; among near-ties the one with
/// the largest real part, then the nonnegative imaginary part, wins.
pub fn dominant(values: &[Eigenvalue]) -> DominantEigenvalue {
    let rho = values.iter().map(Eigenvalue::modulus).fold(0.0, f64::max);
    let tie = 1e-12 * rho.max(f64::MIN_POSITIVE);
    let value = values
        .iter()
        .filter(|v| rho - v.modulus() <= tie)
        .copied()
        .max_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)))
        .unwrap_or(Eigenvalue { re: 0.0, im: 0.0 });
    DominantEigenvalue { rho, value }
}

/// Eigenvector for a known real eigenvalue via shifted inverse iteration.
///
/// Returns a unit vector `q` and the residual `‖Aq − λq‖₂`.
pub fn real_eigenvector(m: &DMatrix<f64>, lambda: f64) -> Result<(DVector<f64>, f64)> {
    let n = require_square(m)?;
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let shift = lambda + 1e-10 * scale;
    let shifted = m - DMatrix::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut q = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_75).fract());
    q /= q.norm();
    for _ in 0..6 {
        let next = lu
            .solve(&q)
            .ok_or_else(|| Error::Singular("inverse iteration".into()))?;
        let norm = next.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Singular("inverse iteration diverged".into()));
        }
        q = next / norm;
    }
    let residual = (m * &q - &q * lambda).norm();
    Ok((q, residual))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_moduli(m: &DMatrix<f64>) -> Vec<f64> {
        let mut v: Vec<f64> = eigenvalues(m).unwrap().iter().map(|e| e.modulus()).collect();
        v.sort_by(f64::total_cmp);
        v
    }

    #[test]
    fn identity_radius_one() {
        let d = dominant(&eigenvalues(&DMatrix::identity(5, 5)).unwrap());
        assert_eq!(d.rho, 1.0);
    }

    #[test]
    fn rotation_has_imaginary_pair() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let vals = eigenvalues(&m).unwrap();
        assert!((dominant(&vals).rho - 1.0).abs() < 1e-15);
        assert!(vals.iter().all(|v| v.re.abs() < 1e-15 && (v.im.abs() - 1.0).abs() < 1e-15));
    }

    #[test]
    fn diagonal_negative_entry() {
        let m = DMatrix::from_row_slice(2, 2, &[0.3, 0.0, 0.0, -0.7]);
        let d = dominant(&eigenvalues(&m).unwrap());
        assert!((d.rho - 0.7).abs() < 1e-15);
        assert!((d.value.re + 0.7).abs() < 1e-15);
    }

    #[test]
    fn companion_matrix_roots() {
        // x³ − 6x² + 11x − 6 = (x−1)(x−2)(x−3)
        let m = DMatrix::from_row_slice(3, 3, &[6.0, -11.0, 6.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let v = sorted_moduli(&m);
        for (got, want) in v.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }

    #[test]
    fn matches_characteristic_trace_and_determinant() {
        // Sum of eigenvalues equals trace; product equals determinant.
        let m = DMatrix::from_row_slice(
            4,
            4,
            &[
                0.2, -1.3, 0.5, 2.0, 1.1, 0.4, -0.7, 0.3, -0.6, 0.9, 1.5, -0.2, 0.8, 0.1, -1.2, 0.6,
            ],
        );
        let vals = eigenvalues(&m).unwrap();
        let sum_re: f64 = vals.iter().map(|v| v.re).sum();
        let sum_im: f64 = vals.iter().map(|v| v.im).sum();
        assert!((sum_re - m.trace()).abs() < 1e-12);
        assert!(sum_im.abs() < 1e-12);
        let (mut pr, mut pi) = (1.0, 0.0);
        for v in &vals {
            let (a, b) = (pr * v.re - pi * v.im, pr * v.im + pi * v.re);
            pr = a;
            pi = b;
        }
        assert!((pr - m.clone().determinant()).abs() < 1e-12);
        assert!(pi.abs() < 1e-12);
    }

    #[test]
    fn inverse_iteration_recovers_eigenvector() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 0.0, 0.0, 5.0]);
        let (q, res) = real_eigenvector(&m, 5.0).unwrap();
        assert!(res < 1e-10);
        assert!(((&m * &q) - &q * 5.0).norm() < 1e-10);
    }

    #[test]
    fn empty_and_scalar() {
        assert!(eigenvalues(&DMatrix::zeros(0, 0)).unwrap().is_empty());
        let v = eigenvalues(&DMatrix::from_element(1, 1, -2.5)).unwrap();
        assert_eq!(v[0].re, -2.5);
    }
}
