//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;

/// Singular values below `PINV_RTOL · σ_max` are treated as zero.
pub const PINV_RTOL: f64 = 1e-8;

/// Moore–Penrose pseudoinverse by truncated SVD.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = PINV_RTOL * smax;
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff && s > 0.0 {
            out += (vt.row(i).transpose() * u.column(i).transpose()) / s;
        }
    }
    out
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Numerical rank with the same relative threshold as [`pseudo_inverse`].
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let s = m.singular_values();
    let cutoff = PINV_RTOL * s.max();
    s.iter().filter(|&&v| v > cutoff && v > 0.0).count()
}

/// Row-major copy of the entries.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Spectral angle in radians between two nonzero vectors.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}
