//! Error metrics, the FCLS baseline and report files.

use std::io::{Read, Write};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{EndmemberTruth, GroundTruth, HyperCube};
use crate::error::{Result, UnmixError};
use crate::generative::mixing_mean;
use crate::inference::point_estimate;
use crate::linalg::{spectral_angle, spectral_norm};
use crate::model::UnmixModel;

pub const FCLS_TOL: f64 = 1e-8;
pub const FCLS_MAX_ITER: usize = 5000;

/// `‖X − X̂‖_F / ‖X‖_F` over flattened entries.
pub fn nrmse(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(UnmixError::dim("nrmse operands", x.len(), x_hat.len()));
    }
    let den: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(den > 0.0) {
        return Err(UnmixError::Domain("reference has zero norm".into()));
    }
    let num: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(num / den)
}

fn checked_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    let zero = |v: &[f64]| v.iter().all(|x| *x == 0.0);
    if zero(a) || zero(b) {
        return Err(UnmixError::Domain("spectral angle of a zero signature".into()));
    }
    Ok(spectral_angle(a, b))
}

/// Mean over pixels of the summed per-endmember spectral angles, in radians.
pub fn sam(truth: &[DMatrix<f64>], est: &[DMatrix<f64>]) -> Result<f64> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(UnmixError::dim("sam pixel count", truth.len(), est.len()));
    }
    let mut total = 0.0;
    for (t, e) in truth.iter().zip(est) {
        if t.shape() != e.shape() {
            return Err(UnmixError::dim("sam endmember matrix", t.len(), e.len()));
        }
        for (ct, ce) in t.column_iter().zip(e.column_iter()) {
            total += checked_angle(ct.as_slice(), ce.as_slice())?;
        }
    }
    Ok(total / truth.len() as f64)
}

/// `‖nonlinear‖ / (‖linear‖ + ‖nonlinear‖)`, zero when both streams vanish.
pub fn nonlinearity_degree(linear: &[f64], nonlinear: &[f64]) -> f64 {
    let l = linear.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n = nonlinear.iter().map(|v| v * v).sum::<f64>().sqrt();
    if l + n == 0.0 {
        0.0
    } else {
        n / (l + n)
    }
}

/// Euclidean projection onto the probability simplex.
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclsResult {
    /// `N × P`.
    pub abundances: DMatrix<f64>,
    /// Pixels that hit the iteration cap before the tolerance.
    pub unconverged: usize,
}

/// Accelerated projected gradient for one pixel. Returns the estimate and
/// whether the gradient-mapping norm fell below `FCLS_TOL`.
fn fcls_pixel(gram: &DMatrix<f64>, step: f64, b: &DVector<f64>, p: usize) -> (Vec<f64>, bool) {
    let mut x = vec![1.0 / p as f64; p];
    let mut z = x.clone();
    let mut t = 1.0f64;
    let grad = |a: &[f64]| -> Vec<f64> {
        (0..p)
            .map(|i| (0..p).map(|j| gram[(i, j)] * a[j]).sum::<f64>() - b[i])
            .collect()
    };
    for _ in 0..FCLS_MAX_ITER {
        let gz = grad(&z);
        let stepped: Vec<f64> = z.iter().zip(&gz).map(|(zi, gi)| zi - step * gi).collect();
        let next = project_to_simplex(&stepped);
        // gradient mapping at the current iterate
        let gx = grad(&x);
        let probe = project_to_simplex(&x.iter().zip(&gx).map(|(xi, gi)| xi - step * gi).collect::<Vec<_>>());
        let mapping = x.iter().zip(&probe).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt() / step;
        if mapping <= FCLS_TOL {
            return (x, true);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        z = next.iter().zip(&x).map(|(n, o)| n + momentum * (n - o)).collect();
        x = next;
        t = t_next;
    }
    (x, false)
}

/// Fully constrained least squares per pixel: `min ‖y − M a‖²` over the
/// probability simplex.
pub fn fcls(cube: &HyperCube, m: &DMatrix<f64>) -> Result<FclsResult> {
    if m.nrows() != cube.bands {
        return Err(UnmixError::dim("fcls endmember bands", cube.bands, m.nrows()));
    }
    let p = m.ncols();
    if p == 0 {
        return Err(UnmixError::Input("fcls needs at least one endmember".into()));
    }
    let gram = m.transpose() * m;
    let lip = spectral_norm(&gram);
    if !(lip > 0.0) {
        return Err(UnmixError::Domain("endmember matrix is zero".into()));
    }
    let step = 1.0 / lip;
    let rows: Vec<(Vec<f64>, bool)> = (0..cube.num_pixels())
        .into_par_iter()
        .map(|n| {
            let b = m.transpose() * DVector::from_column_slice(cube.pixel(n));
            fcls_pixel(&gram, step, &b, p)
        })
        .collect();
    let unconverged = rows.iter().filter(|r| !r.1).count();
    if unconverged > 0 {
        log::warn!("fcls: {unconverged} pixels stopped at the iteration cap");
    }
    let mut a = DMatrix::zeros(rows.len(), p);
    for (n, (row, _)) in rows.iter().enumerate() {
        for k in 0..p {
            a[(n, k)] = row[k];
        }
    }
    Ok(FclsResult {
        abundances: a,
        unconverged,
    })
}

/// Minimum-cost perfect matching on a square cost matrix. `result[i]` is the
/// column assigned to row `i`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "hungarian needs a square cost matrix");
    // potentials and matching with 1-based sentinel column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=n {
        if owner[j] > 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// Estimated abundances, endmembers and reconstructions for a cube.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimates {
    /// `N × P`.
    pub abundances: DMatrix<f64>,
    pub endmembers: Option<EndmemberTruth>,
    /// `N × L` reconstructed spectra, row-major.
    pub reconstruction: Option<Vec<f64>>,
    pub eta_d: Option<Vec<f64>>,
    pub runtime_s: f64,
}

impl Estimates {
    /// Reorders the endmember axis so that estimated column `perm[k]`
    /// becomes column `k`.
    pub fn permuted(&self, perm: &[usize]) -> Estimates {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), perm.len(), |i, k| m[(i, perm[k])]);
        Estimates {
            abundances: pick(&self.abundances),
            endmembers: self.endmembers.as_ref().map(|e| match e {
                EndmemberTruth::Global(m) => EndmemberTruth::Global(pick(m)),
                EndmemberTruth::PerPixel(ms) => EndmemberTruth::PerPixel(ms.iter().map(pick).collect()),
            }),
            ..self.clone()
        }
    }
}

/// FCLS abundances with the given endmembers and the linear reconstruction.
pub fn fcls_estimates(cube: &HyperCube, m: &DMatrix<f64>) -> Result<Estimates> {
    let start = Instant::now();
    let res = fcls(cube, m)?;
    let recon = &res.abundances * m.transpose();
    Ok(Estimates {
        reconstruction: Some(crate::linalg::to_row_major(&recon)),
        abundances: res.abundances,
        endmembers: Some(EndmemberTruth::Global(m.clone())),
        eta_d: None,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Point estimates of a trained model for every pixel.
pub fn model_estimates(model: &UnmixModel, cube: &HyperCube) -> Result<Estimates> {
    let start = Instant::now();
    let per_pixel: Vec<Result<(Vec<f64>, DMatrix<f64>, Vec<f64>, f64)>> = (0..cube.num_pixels())
        .into_par_iter()
        .map(|n| {
            let est = point_estimate(model, cube.pixel(n))?;
            let recon = mixing_mean(model, &est.a, &est.m)?;
            let eta = nonlinearity_degree(&est.streams.linear, &est.streams.nonlinear);
            Ok((est.a, est.m, recon, eta))
        })
        .collect();
    let p = model.arch.endmembers;
    let mut a = DMatrix::zeros(cube.num_pixels(), p);
    let mut ms = Vec::with_capacity(cube.num_pixels());
    let mut recon = Vec::with_capacity(cube.pixels.len());
    let mut eta = Vec::with_capacity(cube.num_pixels());
    for (n, r) in per_pixel.into_iter().enumerate() {
        let (an, mn, yn, en) = r?;
        for k in 0..p {
            a[(n, k)] = an[k];
        }
        ms.push(mn);
        recon.extend(yn);
        eta.push(en);
    }
    Ok(Estimates {
        abundances: a,
        endmembers: Some(EndmemberTruth::PerPixel(ms)),
        reconstruction: Some(recon),
        eta_d: Some(eta),
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nrmse_a: f64,
    pub nrmse_m: Option<f64>,
    pub sam_m: Option<f64>,
    pub nrmse_y: Option<f64>,
    pub eta_d_map: Vec<f64>,
    pub runtime_s: f64,
}

impl MetricsReport {
    pub fn eta_d_mean(&self) -> Option<f64> {
        if self.eta_d_map.is_empty() {
            None
        } else {
            Some(self.eta_d_map.iter().sum::<f64>() / self.eta_d_map.len() as f64)
        }
    }
}

fn expand(e: &EndmemberTruth, n: usize) -> Vec<DMatrix<f64>> {
    (0..n).map(|i| e.for_pixel(i).clone()).collect()
}

fn flatten(ms: &[DMatrix<f64>]) -> Vec<f64> {
    ms.iter().flat_map(|m| m.iter().copied()).collect()
}

/// Column matching of estimates to ground truth: by mean spectral angle when
/// both sides have endmembers, by abundance-map distance otherwise.
pub fn alignment(truth: &GroundTruth, est: &Estimates) -> Result<Vec<usize>> {
    let p = truth.abundances.ncols();
    if est.abundances.ncols() != p {
        return Err(UnmixError::dim("estimated endmember count", p, est.abundances.ncols()));
    }
    let n = truth.abundances.nrows();
    let mut cost = DMatrix::zeros(p, p);
    match (&truth.endmembers, &est.endmembers) {
        (Some(t), Some(e)) => {
            for i in 0..n {
                let (mt, me) = (t.for_pixel(i), e.for_pixel(i));
                for k in 0..p {
                    for j in 0..p {
                        cost[(k, j)] += spectral_angle(mt.column(k).as_slice(), me.column(j).as_slice()) / n as f64;
                    }
                }
            }
        }
        _ => {
            for k in 0..p {
                for j in 0..p {
                    cost[(k, j)] = (truth.abundances.column(k) - est.abundances.column(j)).norm_squared();
                }
            }
        }
    }
    Ok(hungarian(&cost))
}

/// Aligns `est` to `truth` and computes every available metric.
pub fn evaluate(cube: &HyperCube, truth: &GroundTruth, est: &Estimates) -> Result<MetricsReport> {
    let n = cube.num_pixels();
    if truth.abundances.nrows() != n || est.abundances.nrows() != n {
        return Err(UnmixError::dim("abundance rows", n, est.abundances.nrows()));
    }
    let est = est.permuted(&alignment(truth, est)?);
    let nrmse_a = nrmse(
        &crate::linalg::to_row_major(&truth.abundances),
        &crate::linalg::to_row_major(&est.abundances),
    )?;
    let (nrmse_m, sam_m) = match (&truth.endmembers, &est.endmembers) {
        (Some(t), Some(e)) => {
            let (t, e) = (expand(t, n), expand(e, n));
            (Some(nrmse(&flatten(&t), &flatten(&e))?), Some(sam(&t, &e)?))
        }
        _ => (None, None),
    };
    let nrmse_y = match &est.reconstruction {
        Some(r) => Some(nrmse(&cube.pixels, r)?),
        None => None,
    };
    let eta_d_map = est.eta_d.clone().unwrap_or_default();
    Ok(MetricsReport {
        nrmse_a,
        nrmse_m,
        sam_m,
        nrmse_y,
        eta_d_map,
        runtime_s: est.runtime_s,
    })
}

pub const REPORT_COLUMNS: [&str; 6] = ["nrmse_a", "nrmse_m", "sam_m", "nrmse_y", "eta_d_mean", "runtime_s"];

/// Cell text for a metric that could not be computed.
pub const MISSING_CELL: &str = "--";

/// One line of a report file; absent metrics are written as [`MISSING_CELL`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub nrmse_a: f64,
    pub nrmse_m: Option<f64>,
    pub sam_m: Option<f64>,
    pub nrmse_y: Option<f64>,
    pub eta_d_mean: Option<f64>,
    pub runtime_s: f64,
}

impl From<&MetricsReport> for ReportRow {
    fn from(r: &MetricsReport) -> Self {
        ReportRow {
            nrmse_a: r.nrmse_a,
            nrmse_m: r.nrmse_m,
            sam_m: r.sam_m,
            nrmse_y: r.nrmse_y,
            eta_d_mean: r.eta_d_mean(),
            runtime_s: r.runtime_s,
        }
    }
}

fn csv_err(e: csv::Error) -> UnmixError {
    UnmixError::format("csv", e.to_string())
}

pub fn write_report_csv<W: Write>(out: W, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    let cell = |v: Option<f64>| v.map_or_else(|| MISSING_CELL.to_string(), |x| x.to_string());
    for r in rows {
        w.write_record([
            r.nrmse_a.to_string(),
            cell(r.nrmse_m),
            cell(r.sam_m),
            cell(r.nrmse_y),
            cell(r.eta_d_mean),
            r.runtime_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(input: R) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(csv_err)?;
    if headers.iter().ne(REPORT_COLUMNS) {
        return Err(UnmixError::format("header", "unexpected report columns"));
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != REPORT_COLUMNS.len() {
            return Err(UnmixError::format("row", "wrong number of cells"));
        }
        let opt = |i: usize| -> Result<Option<f64>> {
            let s = rec[i].trim();
            if s.is_empty() || s == MISSING_CELL {
                return Ok(None);
            }
            s.parse::<f64>()
                .map(Some)
                .map_err(|e| UnmixError::format(REPORT_COLUMNS[i], e.to_string()))
        };
        let req = |i: usize| -> Result<f64> {
            opt(i)?.ok_or_else(|| UnmixError::format(REPORT_COLUMNS[i], "missing value"))
        };
        rows.push(ReportRow {
            nrmse_a: req(0)?,
            nrmse_m: opt(1)?,
            sam_m: opt(2)?,
            nrmse_y: opt(3)?,
            eta_d_mean: opt(4)?,
            runtime_s: req(5)?,
        });
    }
    Ok(rows)
}
