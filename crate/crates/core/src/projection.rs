//! Two-dimensional PCA projection for inspecting embeddings.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Fitted principal axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `components × dim`, unit rows, by decreasing variance.
    pub axes: Matrix,
    pub variances: Vec<f64>,
}

impl Pca {
    pub fn fit(x: &Matrix, components: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if n < 2 {
            return Err(Error::Contract("PCA needs at least two rows".into()));
        }
        if components == 0 || components > d {
            return Err(Error::Config(format!("{components} components requested for {d} columns")));
        }
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut centered = x.clone();
        for r in 0..n {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&mean) {
                *v -= m;
            }
        }
        let cov = centered.t_matmul(&centered)?.scale(1.0 / (n - 1) as f64);
        let (values, vectors) = symmetric_eigen(&cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let mut axes = Matrix::zeros(components, d);
        let mut variances = Vec::with_capacity(components);
        for (c, &i) in order.iter().take(components).enumerate() {
            let mut axis: Vec<f64> = (0..d).map(|r| vectors[(r, i)]).collect();
            // sign convention: largest-magnitude entry positive
            let lead = axis.iter().copied().fold(0.0_f64, |a, v| if v.abs() > a.abs() { v } else { a });
            if lead < 0.0 {
                axis.iter_mut().for_each(|v| *v = -*v);
            }
            axes.row_mut(c).copy_from_slice(&axis);
            variances.push(values[i].max(0.0));
        }
        Ok(Pca { mean, axes, variances })
    }

    pub fn transform(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::LengthMismatch(x.cols(), self.mean.len()));
        }
        let mut centered = x.clone();
        for r in 0..x.rows() {
            for (v, m) in centered.row_mut(r).iter_mut().zip(&self.mean) {
                *v -= m;
            }
        }
        centered.matmul_t(&self.axes)
    }
}

/// Projects the rows of `x` onto their first two principal axes.
pub fn pca_2d(x: &Matrix) -> Result<Matrix> {
    Pca::fit(x, 2)?.transform(x)
}

/// Cyclic Jacobi rotations; returns eigenvalues and eigenvectors as columns.
fn symmetric_eigen(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)] * m[(i, j)])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m.row_mut(k)[p] = c * mkp - s * mkq;
                    m.row_mut(k)[q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m.row_mut(p)[k] = c * mpk - s * mqk;
                    m.row_mut(q)[k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v.row_mut(k)[p] = c * vkp - s * vkq;
                    v.row_mut(k)[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[(i, i)]).collect(), v)
}
