//! Affine whitening `θ_W = W (θ − θ̂)` with `W = O D^{-1/2} Oᵀ` built from the
//! empirical covariance `Σ̂ = O D Oᵀ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::targets::TargetPosterior;

/// Relative eigenvalue floor used when none is given explicitly.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-10;

/// Mean and covariance with divisor `n`.
pub fn empirical_moments(samples: &[Vec<f64>]) -> Result<(Vec<f64>, Matrix)> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::Shape {
            context: "empirical moments",
            expected: d,
            got: bad.len(),
        });
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = Matrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                cov[(i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Returns `(O, D)` with eigenvectors in the columns of `O` and eigenvalues in
/// descending order.
pub fn symmetric_eig(matrix: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    if matrix.rows != matrix.cols {
        return Err(Error::Shape {
            context: "symmetric eigendecomposition",
            expected: matrix.rows,
            got: matrix.cols,
        });
    }
    let n = matrix.rows;
    let scale = matrix.max_abs().max(f64::MIN_POSITIVE);
    let mut asym: f64 = 0.0;
    for i in 0..n {
        for j in 0..i {
            asym = asym.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if asym > 1e-10 * scale.max(1.0) {
        return Err(Error::Asymmetric(asym));
    }
    if matrix.data.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteInput("symmetric eigendecomposition"));
    }

    let mut a = matrix.clone();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off.sqrt() <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, col)] = v[(r, src)];
        }
    }
    Ok((vectors, values))
}

/// Frozen affine map between original and whitened coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    pub mean: Vec<f64>,
    pub w_matrix: Matrix,
    pub w_inverse: Matrix,
    pub log_abs_det_w: f64,
    /// Eigenvalues of `Σ̂` after flooring, descending.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues raised to the floor.
    pub floored: usize,
}

impl WhiteningTransform {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            w_matrix: Matrix::identity(dim),
            w_inverse: Matrix::identity(dim),
            log_abs_det_w: 0.0,
            eigenvalues: vec![1.0; dim],
            floored: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn whiten(&self, theta: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = theta.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        self.w_matrix.mat_vec(&centered)
    }

    pub fn unwhiten(&self, theta_w: &[f64]) -> Vec<f64> {
        let mut x = self.w_inverse.mat_vec(theta_w);
        for (xi, m) in x.iter_mut().zip(&self.mean) {
            *xi += m;
        }
        x
    }
}

/// Builds the whitening map from samples. Eigenvalues below
/// `relative_floor × λ_max` are raised to that value.
pub fn build_whitening(samples: &[Vec<f64>], relative_floor: f64) -> Result<WhiteningTransform> {
    if !(relative_floor > 0.0 && relative_floor.is_finite()) {
        return Err(Error::Config("eigenvalue floor must be positive".into()));
    }
    let (mean, cov) = empirical_moments(samples)?;
    let (o, values) = symmetric_eig(&cov)?;
    let lambda_max = values.first().copied().unwrap_or(0.0);
    if !(lambda_max > 0.0) {
        return Err(Error::DegenerateCovariance);
    }
    let floor = relative_floor * lambda_max;
    let mut floored = 0;
    let clamped: Vec<f64> = values
        .iter()
        .map(|&l| {
            if l < floor {
                floored += 1;
                floor
            } else {
                l
            }
        })
        .collect();
    let d = mean.len();
    let assemble = |f: &dyn Fn(f64) -> f64| {
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v: f64 = (0..d).map(|k| o[(i, k)] * f(clamped[k]) * o[(j, k)]).sum();
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    let w_matrix = assemble(&|l| l.powf(-0.5));
    let w_inverse = assemble(&|l| l.sqrt());
    let log_abs_det_w = -0.5 * clamped.iter().map(|l| l.ln()).sum::<f64>();
    Ok(WhiteningTransform {
        mean,
        w_matrix,
        w_inverse,
        log_abs_det_w,
        eigenvalues: clamped,
        floored,
    })
}

/// A target expressed in whitened coordinates, including the Jacobian
/// constant `log|det W⁻¹|` so the evidence is preserved.
pub struct WhitenedTarget<T> {
    inner: T,
    transform: WhiteningTransform,
}

impl<T: TargetPosterior> WhitenedTarget<T> {
    pub fn new(inner: T, transform: WhiteningTransform) -> Result<Self> {
        if inner.dim() != transform.dim() {
            return Err(Error::Shape {
                context: "whitened target",
                expected: inner.dim(),
                got: transform.dim(),
            });
        }
        Ok(Self { inner, transform })
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }

    pub fn transform(&self) -> &WhiteningTransform {
        &self.transform
    }
}

impl<T: TargetPosterior> TargetPosterior for WhitenedTarget<T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, theta_w: &[f64]) -> f64 {
        self.inner.log_density(&self.transform.unwhiten(theta_w)) - self.transform.log_abs_det_w
    }

    fn grad_log_density(&self, theta_w: &[f64]) -> Vec<f64> {
        let g = self.inner.grad_log_density(&self.transform.unwhiten(theta_w));
        // W⁻¹ is symmetric, so W⁻ᵀ g = W⁻¹ g.
        self.transform.w_inverse.mat_vec(&g)
    }

    fn in_support(&self, theta_w: &[f64]) -> bool {
        self.inner.in_support(&self.transform.unwhiten(theta_w))
    }
}
