//! Linear algebra for Newton steps whose baseline block is (tri)diagonal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric matrix with bandwidth at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// Sub-diagonal, `diag.len() - 1` entries (all zero for a diagonal matrix).
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn diagonal(diag: Vec<f64>) -> Self {
        let off = vec![0.0; diag.len().saturating_sub(1)];
        Self { diag, off }
    }

    pub fn new(diag: Vec<f64>, off: Vec<f64>) -> Result<Self> {
        if off.len() + 1 != diag.len().max(1) {
            return Err(Error::Dimension { what: "band off-diagonal", expected: diag.len().saturating_sub(1), got: off.len() });
        }
        Ok(Self { diag, off })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// 0 when every off-diagonal entry is zero, else 1.
    pub fn bandwidth(&self) -> usize {
        usize::from(self.off.iter().any(|&v| v != 0.0))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            diag: self.diag.iter().map(|v| v * s).collect(),
            off: self.off.iter().map(|v| v * s).collect(),
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        (0..n)
            .map(|i| {
                let mut v = self.diag[i] * x[i];
                if i > 0 {
                    v += self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    v += self.off[i] * x[i + 1];
                }
                v
            })
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// `L D L^T` factorization of a positive definite [`SymTridiag`], O(K).
#[derive(Debug, Clone)]
pub struct BandLdl {
    d: Vec<f64>,
    l: Vec<f64>,
}

impl BandLdl {
    pub fn factor(m: &SymTridiag) -> Result<Self> {
        let n = m.dim();
        let mut d = Vec::with_capacity(n);
        let mut l = Vec::with_capacity(n.saturating_sub(1));
        for k in 0..n {
            let pivot = if k == 0 {
                m.diag[0]
            } else {
                let lk = m.off[k - 1] / d[k - 1];
                l.push(lk);
                m.diag[k] - lk * m.off[k - 1]
            };
            if !(pivot > 0.0 && pivot.is_finite()) {
                return Err(Error::NotPositiveDefinite { pivot: k });
            }
            d.push(pivot);
        }
        Ok(Self { d, l })
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.d.len();
        for k in 1..n {
            x[k] -= self.l[k - 1] * x[k - 1];
        }
        for k in 0..n {
            x[k] /= self.d[k];
        }
        for k in (0..n.saturating_sub(1)).rev() {
            x[k] -= self.l[k] * x[k + 1];
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Solves `band * x = rhs` for a positive definite band matrix.
pub fn band_ldl_solve(band: &SymTridiag, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != band.dim() {
        return Err(Error::Dimension { what: "band solve rhs", expected: band.dim(), got: rhs.len() });
    }
    Ok(BandLdl::factor(band)?.solve(rhs))
}

/// Hessian of Q (or its penalized version) in block form
/// `[[a_block, cross], [cross^T, dense]]`.
#[derive(Debug, Clone)]
pub struct StructuredHessian {
    pub a_block: SymTridiag,
    /// `K x d` second derivatives in `(a_k, beta_j)`.
    pub cross: DMatrix<f64>,
    /// `d x d` block in beta.
    pub dense: DMatrix<f64>,
}

impl StructuredHessian {
    pub fn dim(&self) -> usize {
        self.a_block.dim() + self.dense.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.a_block.dim();
        let d = self.dense.nrows();
        let mut m = DMatrix::zeros(k + d, k + d);
        m.view_mut((0, 0), (k, k)).copy_from(&self.a_block.to_dense());
        m.view_mut((0, k), (k, d)).copy_from(&self.cross);
        m.view_mut((k, 0), (d, k)).copy_from(&self.cross.transpose());
        m.view_mut((k, k), (d, d)).copy_from(&self.dense);
        m
    }
}

/// Newton direction `-H^{-1} g` through the Schur complement of the band
/// block, O(K d^2 + d^3).
pub fn newton_step_schur(gradient: &[f64], hessian: &StructuredHessian) -> Result<Vec<f64>> {
    let k = hessian.a_block.dim();
    let d = hessian.dense.nrows();
    if gradient.len() != k + d {
        return Err(Error::Dimension { what: "Newton gradient", expected: k + d, got: gradient.len() });
    }
    // Work with the information matrix I = -H = [[A, B], [B^T, C]].
    let ldl = BandLdl::factor(&hessian.a_block.scaled(-1.0))?;
    let b1 = &gradient[..k];
    let a_inv_b1 = ldl.solve(b1);
    if d == 0 {
        return Ok(a_inv_b1);
    }
    let b = -&hessian.cross;
    let mut a_inv_b = DMatrix::zeros(k, d);
    for j in 0..d {
        let col: Vec<f64> = b.column(j).iter().copied().collect();
        a_inv_b.set_column(j, &DVector::from_vec(ldl.solve(&col)));
    }
    let c = -&hessian.dense;
    let schur = &c - b.transpose() * &a_inv_b;
    let b2 = DVector::from_column_slice(&gradient[k..]);
    let rhs = b2 - b.transpose() * DVector::from_column_slice(&a_inv_b1);
    let lower = schur.lu().solve(&rhs).ok_or(Error::SingularSchur)?;
    if lower.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSchur);
    }
    let correction = &a_inv_b * &lower;
    let mut step: Vec<f64> = a_inv_b1.iter().zip(correction.iter()).map(|(x, c)| x - c).collect();
    step.extend(lower.iter());
    Ok(step)
}

/// Dense solve of `m x = rhs`, used for small systems.
pub(crate) fn dense_solve(m: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let x = m.clone().lu().solve(&DVector::from_column_slice(rhs))?;
    x.iter().all(|v| v.is_finite()).then(|| x.iter().copied().collect())
}
