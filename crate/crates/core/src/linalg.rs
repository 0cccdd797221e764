//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

pub(crate) fn sym_eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Largest singular value.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let (_, max) = sym_eigen_extremes(&(m.transpose() * m));
    max.max(0.0).sqrt()
}

/// Symmetric PSD square root, negative eigenvalues clamped to zero.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumsum += uj;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

/// Finds convex weights θ minimising ‖Σ θ_k V_k − M‖_F. Returns the weights
/// and the attained Frobenius residual.
pub(crate) fn convex_hull_weights(vertices: &[DMatrix<f64>], target: &DMatrix<f64>) -> (Vec<f64>, f64) {
    let k = vertices.len();
    let residual = |theta: &[f64]| -> DMatrix<f64> {
        let mut acc = -target.clone();
        for (w, v) in theta.iter().zip(vertices) {
            acc += v * *w;
        }
        acc
    };
    for (i, v) in vertices.iter().enumerate() {
        if (v - target).norm() <= 1e-14 * (1.0 + target.norm()) {
            let mut theta = vec![0.0; k];
            theta[i] = 1.0;
            return (theta, (v - target).norm());
        }
    }
    let gram = DMatrix::from_fn(k, k, |i, j| vertices[i].dot(&vertices[j]));
    let (_, lmax) = sym_eigen_extremes(&gram);
    if lmax <= 0.0 {
        let theta = vec![1.0 / k as f64; k];
        let r = residual(&theta).norm();
        return (theta, r);
    }
    let step = 1.0 / lmax;
    let mut theta = vec![1.0 / k as f64; k];
    let mut y = theta.clone();
    let mut t = 1.0_f64;
    let mut best = (theta.clone(), residual(&theta).norm());
    for _ in 0..20_000 {
        let r = residual(&y);
        let grad: Vec<f64> = vertices.iter().map(|v| v.dot(&r)).collect();
        let next = project_simplex(&y.iter().zip(&grad).map(|(a, g)| a - step * g).collect::<Vec<_>>());
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        y = next.iter().zip(&theta).map(|(n, o)| n + beta * (n - o)).collect();
        theta = next;
        t = t_next;
        let res = residual(&theta).norm();
        if res < best.1 {
            best = (theta.clone(), res);
        }
        if res <= 1e-13 * (1.0 + target.norm()) {
            break;
        }
    }
    best
}

pub(crate) fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || rows.iter().any(|r| r.len() != m) {
        return Err("matrix rows must be non-empty and equally long".into());
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Serde adapter storing a matrix as a list of rows.
pub(crate) mod matrix_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// Serde adapter for a list of matrices, each stored as rows.
pub(crate) mod matrix_rows_vec {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(ms: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(super::rows_of).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter().map(|rows| super::from_rows(rows).map_err(serde::de::Error::custom)).collect()
    }
}
