//! Vertex component analysis.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::HyperCube;
use crate::error::{Result, UnmixError};
use crate::linalg::{numerical_rank, pseudo_inverse};

/// Leading `d` eigenvectors of a symmetric matrix, as columns.
fn leading_eigenvectors(cov: DMatrix<f64>, d: usize) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    DMatrix::from_fn(eig.eigenvectors.nrows(), d, |r, c| eig.eigenvectors[(r, order[c])])
}

fn estimate_snr(y: &DMatrix<f64>, mean: &DVector<f64>, p: usize) -> f64 {
    let (l, n) = y.shape();
    let centered = y - mean * DMatrix::from_element(1, n, 1.0);
    let ud = leading_eigenvectors(&centered * centered.transpose() / n as f64, p);
    let proj = ud.transpose() * &centered;
    let p_y = y.norm_squared() / n as f64;
    let p_x = proj.norm_squared() / n as f64 + mean.norm_squared();
    let num = p_x - p as f64 / l as f64 * p_y;
    let den = p_y - p_x;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    10.0 * (num.abs() / den).log10()
}

/// Picks `P` pixels spanning the data simplex and returns their spectra as
/// the columns of an `L × P` matrix.
pub fn vca<R: Rng + ?Sized>(cube: &HyperCube, p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = cube.num_pixels();
    let l = cube.bands;
    if p == 0 || n < p || l < p {
        return Err(UnmixError::Extraction(format!(
            "cannot extract {p} endmembers from {n} pixels with {l} bands"
        )));
    }
    let y = cube.to_matrix();
    if p == 1 {
        let best = (0..n)
            .max_by(|&i, &j| y.column(i).norm_squared().total_cmp(&y.column(j).norm_squared()))
            .expect("nonempty cube");
        return Ok(y.columns(best, 1).into_owned());
    }
    let rank = numerical_rank(&y);
    if rank < p {
        return Err(UnmixError::Extraction(format!(
            "signal subspace has rank {rank}, fewer than {p} endmembers"
        )));
    }
    let mean = y.column_mean();
    let snr = estimate_snr(&y, &mean, p);
    let threshold = 15.0 + 10.0 * (p as f64).log10();

    let reduced = if snr > threshold {
        let ud = leading_eigenvectors(&y * y.transpose() / n as f64, p);
        let xp = ud.transpose() * &y;
        let u = xp.column_mean();
        let mut out = xp.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let s = u.dot(&xp.column(j));
            if s.abs() < 1e-300 {
                return Err(UnmixError::Extraction("pixel orthogonal to the mean direction".into()));
            }
            col /= s;
        }
        out
    } else {
        let centered = &y - &mean * DMatrix::from_element(1, n, 1.0);
        let ud = leading_eigenvectors(&centered * centered.transpose() / n as f64, p - 1);
        let xp = ud.transpose() * &centered;
        let c = xp.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
        let mut out = DMatrix::from_element(p, n, c);
        out.rows_mut(0, p - 1).copy_from(&xp);
        out
    };

    let mut basis = DMatrix::zeros(p, p);
    basis[(p - 1, 0)] = 1.0;
    let mut picked = Vec::with_capacity(p);
    for i in 0..p {
        let w = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let f = &w - &basis * (pseudo_inverse(&basis) * &w);
        let norm = f.norm();
        if norm == 0.0 {
            return Err(UnmixError::Extraction("degenerate projection direction".into()));
        }
        let f = f / norm;
        let v = f.transpose() * &reduced;
        let best = v
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(j, _)| j)
            .expect("nonempty cube");
        basis.set_column(i, &reduced.column(best));
        picked.push(best);
    }
    Ok(DMatrix::from_fn(l, p, |r, k| y[(r, picked[k])]))
}
