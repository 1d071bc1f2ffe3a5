//! Fréchet distance between feature sets and the attribute L2 distance.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, shape_err, Error, Result};

/// Eigenvalues above this (negative) threshold are treated as rounding
/// noise and clipped to zero.
pub const EIGEN_CLIP: f64 = -1e-8;

/// `N × d` embedding matrix tagged with the extractor that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub extractor_id: String,
    pub rows: usize,
    pub dim: usize,
    /// Row-major `rows × dim`.
    pub data: Vec<f64>,
}

impl FeatureSet {
    pub fn new(extractor_id: &str, rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * dim {
            return Err(shape_err!("{}x{} feature set needs {} values, got {}", rows, dim, rows * dim, data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature set".to_string()));
        }
        Ok(Self { extractor_id: extractor_id.to_string(), rows, dim, data })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Rows `[start, end)` as a new set.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.rows {
            return Err(invalid!("row range {}..{} of {}", start, end, self.rows));
        }
        Self::new(&self.extractor_id, end - start, self.dim, self.data[start * self.dim..end * self.dim].to_vec())
    }

    /// Whether the set has enough rows for a full-rank covariance estimate.
    pub fn well_conditioned(&self) -> bool {
        self.rows > self.dim
    }

    /// Sample mean and unbiased covariance, accumulated in row order.
    pub fn moments(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.rows < 2 {
            return Err(invalid!("need at least 2 feature rows, got {}", self.rows));
        }
        let d = self.dim;
        let mut mean = DVector::zeros(d);
        for i in 0..self.rows {
            for (m, &v) in mean.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        mean /= self.rows as f64;
        let mut cov = DMatrix::zeros(d, d);
        let mut centered = alloc::vec![0.0; d];
        for i in 0..self.rows {
            for (c, (&v, &m)) in centered.iter_mut().zip(self.row(i).iter().zip(mean.iter())) {
                *c = v - m;
            }
            for a in 0..d {
                for b in a..d {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = cov[(a, b)] / (self.rows - 1) as f64;
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Ok((mean, cov))
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Square root (or any power) of a symmetric positive semi-definite matrix
/// by eigendecomposition, clipping eigenvalues at zero.
fn sym_pow(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let vals = eig.eigenvalues.map(|v| if v < 0.0 { 0.0 } else { v }).map(f);
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Eigenvalues of a symmetric matrix after clipping, plus the most negative
/// raw eigenvalue.
pub fn clipped_eigenvalues(m: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    (eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect(), min)
}

/// `Tr((A B)^{1/2})` for symmetric PSD `A`, `B`, computed as
/// `Tr((A^{1/2} B A^{1/2})^{1/2})`.
pub fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    trace_sqrt_product_checked(a, b).0
}

/// Like [`trace_sqrt_product`], also returning the most negative raw
/// eigenvalue of the symmetrized product.
pub fn trace_sqrt_product_checked(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (f64, f64) {
    let ra = sym_pow(a, libm::sqrt);
    let inner = &ra * b * &ra;
    let (vals, min) = clipped_eigenvalues(&inner);
    (vals.iter().map(|&v| libm::sqrt(v)).sum(), min)
}

/// A square root `S` of `A B` (so `S·S = A B`) for symmetric positive
/// definite `A` and symmetric PSD `B`: `A^{1/2} (A^{1/2} B A^{1/2})^{1/2} A^{-1/2}`.
pub fn sqrtm_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || b.shape() != a.shape() {
        return Err(shape_err!("sqrtm: {:?} and {:?}", a.shape(), b.shape()));
    }
    let (vals, _) = clipped_eigenvalues(a);
    if vals.iter().any(|&v| v <= 0.0) {
        return Err(invalid!("sqrtm needs a positive definite left factor"));
    }
    let ra = sym_pow(a, libm::sqrt);
    let ra_inv = sym_pow(a, |v| 1.0 / libm::sqrt(v));
    let inner = sym_pow(&(&ra * b * &ra), libm::sqrt);
    Ok(ra * inner * ra_inv)
}

/// Result of [`fid_detailed`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FidDetail {
    pub fid: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    /// Most negative eigenvalue met in the product square root.
    pub min_eigenvalue: f64,
    /// Whether clipping went beyond [`EIGEN_CLIP`], i.e. the product was
    /// not PSD up to rounding (typically too few rows for the dimension).
    pub clipped_beyond_tolerance: bool,
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μ_A − μ_B‖² + Tr(Σ_A + Σ_B − 2 (Σ_A Σ_B)^{1/2})`.
pub fn fid(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    Ok(fid_detailed(a, b)?.fid)
}

pub fn fid_detailed(a: &FeatureSet, b: &FeatureSet) -> Result<FidDetail> {
    if a.extractor_id != b.extractor_id {
        return Err(invalid!("feature sets come from `{}` and `{}`", a.extractor_id, b.extractor_id));
    }
    if a.dim != b.dim {
        return Err(shape_err!("feature dimensions differ: {} vs {}", a.dim, b.dim));
    }
    let (ma, ca) = a.moments()?;
    let (mb, cb) = b.moments()?;
    let mean_term = (&ma - &mb).norm_squared();
    let (root, min_eigenvalue) = trace_sqrt_product_checked(&ca, &cb);
    // the trace term is non-negative in exact arithmetic
    let trace_term = (ca.trace() + cb.trace() - 2.0 * root).max(0.0);
    Ok(FidDetail {
        fid: mean_term + trace_term,
        mean_term,
        trace_term,
        min_eigenvalue,
        clipped_beyond_tolerance: min_eigenvalue < EIGEN_CLIP,
    })
}

/// Euclidean distance between two predicted attribute vectors.
pub fn attribute_l2(reference: &[f64], synthesized: &[f64]) -> Result<f64> {
    if reference.len() != synthesized.len() {
        return Err(shape_err!("attribute vectors have {} and {} entries", reference.len(), synthesized.len()));
    }
    Ok(libm::sqrt(reference.iter().zip(synthesized).map(|(a, b)| (a - b) * (a - b)).sum()))
}

/// Mean and (population) standard deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid!("no values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, shift: &[f64], scale: f64, seed: u64) -> FeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d)
            .map(|i| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v * scale + shift[i % d]
            })
            .collect();
        FeatureSet::new("test", n, d, data).unwrap()
    }

    #[test]
    fn identical_sets() {
        let a = gaussian(200, 6, &[0.0; 6], 1.0, 1);
        assert!(fid(&a, &a).unwrap() < 1e-6);
    }

    #[test]
    fn symmetric() {
        let a = gaussian(300, 5, &[0.0; 5], 1.0, 1);
        let b = gaussian(300, 5, &[0.5; 5], 1.5, 2);
        assert!((fid(&a, &b).unwrap() - fid(&b, &a).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn one_dimensional_scale() {
        // N(0,1) vs N(0,4): (1 - 2)^2 = 1
        let a = gaussian(20000, 1, &[0.0], 1.0, 3);
        let b = gaussian(20000, 1, &[0.0], 2.0, 4);
        assert!((fid(&a, &b).unwrap() - 1.0).abs() < 0.06);
    }

    #[test]
    fn sqrtm_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let d = 6;
            let r = |rng: &mut ChaCha8Rng| {
                let m = DMatrix::<f64>::from_fn(d, d, |_, _| StandardNormal.sample(rng));
                &m * m.transpose() + DMatrix::identity(d, d) * 0.1
            };
            let a = r(&mut rng);
            let b = r(&mut rng);
            let s = sqrtm_product(&a, &b).unwrap();
            let ab = &a * &b;
            let res = (&s * &s - &ab).norm() / ab.norm();
            assert!(res < 1e-6, "{res}");
            assert!((s.trace() - trace_sqrt_product(&a, &b)).abs() < 1e-8 * s.trace().abs().max(1.0));
        }
    }

    #[test]
    fn errors() {
        let a = gaussian(10, 3, &[0.0; 3], 1.0, 1);
        let b = gaussian(10, 2, &[0.0; 2], 1.0, 1);
        assert!(fid(&a, &b).is_err());
        assert!(FeatureSet::new("x", 1, 1, alloc::vec![f64::NAN]).is_err());
        let mut c = a.clone();
        c.extractor_id = "other".into();
        assert!(fid(&a, &c).is_err());
    }

    #[test]
    fn l2_hand_checked() {
        let a = [0.0; 23];
        let mut b = [0.0; 23];
        b[4] = 2.0;
        assert_eq!(attribute_l2(&a, &b).unwrap(), 2.0);
        let mut c = [0.0; 23];
        for v in c.iter_mut().take(4) {
            *v = 1.0;
        }
        assert_eq!(attribute_l2(&a, &c).unwrap(), 2.0);
        assert_eq!(attribute_l2(&b, &b).unwrap(), 0.0);
    }
}
