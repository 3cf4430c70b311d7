//! Synthetic endmember libraries, abundance maps and DC1/DC2-style scenes.

use nalgebra::DMatrix;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{EndmemberTruth, GroundTruth, HyperCube};
use crate::distributions::{dirichlet_sample, DirichletParams};
use crate::error::{Result, UnmixError};
use crate::linalg::spectral_angle;
use crate::seeds::{stream_rng, Stream};

const MIN_BANDS: usize = 16;
const MIN_ANGLE: f64 = 0.15;
const MAX_RESAMPLES: usize = 100;
const PURE_REGION_PROB: f64 = 0.4;
const REGION_CONCENTRATION: f64 = 0.7;
const BLUR_SIGMA: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    Linear,
    /// Linear mixing plus `Σ_{i<j} a_i a_j m_i ⊙ m_j`.
    Bilinear,
}

/// Shape and noise settings of a generated scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub endmembers: usize,
    pub snr_db: f64,
    pub variability: f64,
    pub mixing: Mixing,
}

impl SceneConfig {
    pub fn dc1() -> Self {
        SceneConfig {
            width: 50,
            height: 50,
            bands: 64,
            endmembers: 3,
            snr_db: 30.0,
            variability: 0.0,
            mixing: Mixing::Bilinear,
        }
    }

    /// Generates the scene addressed by `seed`: endmember library, abundance
    /// maps and mixing noise each come from their own data sub-stream.
    /// Bilinear scenes use one endmember matrix and reject variability;
    /// linear scenes carry per-pixel endmembers.
    pub fn generate(&self, seed: u64) -> Result<(HyperCube, GroundTruth)> {
        let lib = synth_endmember_library(self.bands, self.endmembers, &mut stream_rng(seed, Stream::Data, &[0, 0]))?;
        let a = abundance_maps(self.width, self.height, self.endmembers, &mut stream_rng(seed, Stream::Data, &[0, 1]))?;
        let mut mix = stream_rng(seed, Stream::Data, &[0, 2]);
        match self.mixing {
            Mixing::Bilinear if self.variability != 0.0 => Err(UnmixError::Input(
                "bilinear scenes do not support endmember variability".into(),
            )),
            Mixing::Bilinear => generate_dc1(self.width, self.height, &a, &lib, self.snr_db, &mut mix),
            Mixing::Linear => generate_dc2(self.width, self.height, &a, &lib, self.variability, self.snr_db, &mut mix),
        }
    }

    pub fn dc2() -> Self {
        SceneConfig {
            endmembers: 5,
            variability: 0.15,
            mixing: Mixing::Linear,
            ..Self::dc1()
        }
    }
}

fn bump(x: f64, center: f64, width: f64) -> f64 {
    let t = (x - center) / width;
    (-0.5 * t * t).exp()
}

fn smooth_spectrum<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Vec<f64> {
    let n_bumps = rng.random_range(3..=6);
    let span = (l - 1) as f64;
    let bumps: Vec<(f64, f64, f64)> = (0..n_bumps)
        .map(|_| {
            (
                rng.random_range(-0.1 * span..=1.1 * span),
                rng.random_range(span / 20.0..=span / 4.0),
                rng.random_range(0.2..=1.0),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..l)
        .map(|i| bumps.iter().map(|&(c, w, h)| h * bump(i as f64, c, w)).sum())
        .collect();
    let lo_raw = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_raw = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = rng.random_range(0.06..=0.3);
    let hi = rng.random_range(0.6..=0.94);
    let range = (hi_raw - lo_raw).max(1e-12);
    raw.iter().map(|v| lo + (hi - lo) * (v - lo_raw) / range).collect()
}

/// `P` smooth spectra in `(0.05, 0.95)` with pairwise angles of at least
/// 0.15 rad, one per column.
pub fn synth_endmember_library<R: Rng + ?Sized>(l: usize, p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if l < MIN_BANDS {
        return Err(UnmixError::Input(format!("need at least {MIN_BANDS} bands, got {l}")));
    }
    if p == 0 {
        return Err(UnmixError::Input("need at least one endmember".into()));
    }
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut resamples = 0;
    while columns.len() < p {
        let s = smooth_spectrum(l, rng);
        if columns.iter().all(|c| spectral_angle(c, &s) >= MIN_ANGLE) {
            columns.push(s);
        } else {
            resamples += 1;
            if resamples > MAX_RESAMPLES {
                return Err(UnmixError::Generation(format!(
                    "no {p} spectra with pairwise angle ≥ {MIN_ANGLE} after {MAX_RESAMPLES} resamples"
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(l, p, |i, k| columns[k][i]))
}

/// Piecewise-constant abundance regions softened by a Gaussian blur,
/// returned as an `N × P` matrix with simplex rows. The first `P` regions are
/// pure, one per endmember, so every material has pure pixels.
pub fn abundance_maps<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    p: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if width == 0 || height == 0 || p == 0 {
        return Err(UnmixError::Input("abundance map needs positive size".into()));
    }
    let n_regions = 4 * p;
    let sites: Vec<(f64, f64)> = (0..n_regions)
        .map(|_| (rng.random_range(0.0..width as f64), rng.random_range(0.0..height as f64)))
        .collect();
    let mixed = DirichletParams::new(vec![REGION_CONCENTRATION; p])?;
    let mut region_abundances = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let pure = r < p || rng.random::<f64>() < PURE_REGION_PROB;
        if pure {
            let k = if r < p { r } else { rng.random_range(0..p) };
            let mut a = vec![0.0; p];
            a[k] = 1.0;
            region_abundances.push(a);
        } else {
            region_abundances.push(dirichlet_sample(&mixed, rng)?);
        }
    }
    let n = width * height;
    let mut maps = vec![vec![0.0; n]; p];
    for yy in 0..height {
        for xx in 0..width {
            let (px, py) = (xx as f64 + 0.5, yy as f64 + 0.5);
            let nearest = sites
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (a.0 - px).powi(2) + (a.1 - py).powi(2);
                    let db = (b.0 - px).powi(2) + (b.1 - py).powi(2);
                    da.total_cmp(&db)
                })
                .map(|(i, _)| i)
                .expect("at least one site");
            for k in 0..p {
                maps[k][yy * width + xx] = region_abundances[nearest][k];
            }
        }
    }
    for map in maps.iter_mut() {
        *map = gaussian_blur(map, width, height, BLUR_SIGMA);
    }
    let mut a = DMatrix::zeros(n, p);
    for i in 0..n {
        let total: f64 = (0..p).map(|k| maps[k][i].max(0.0)).sum();
        let mut acc = 0.0;
        for k in 0..p - 1 {
            let v = maps[k][i].max(0.0) / total;
            a[(i, k)] = v;
            acc += v;
        }
        a[(i, p - 1)] = (1.0 - acc).max(0.0);
    }
    Ok(a)
}

/// Separable Gaussian filter with edge clamping.
fn gaussian_blur(img: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|t| bump(t as f64, 0.0, sigma)).collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|v| v / norm).collect();
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * img[y * width + clamp(x as isize + t as isize - radius, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; img.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(t, w)| w * tmp[clamp(y as isize + t as isize - radius, height) * width + x])
                .sum();
        }
    }
    out
}

fn check_abundances(a: &DMatrix<f64>, p: usize, n: usize) -> Result<()> {
    if a.ncols() != p {
        return Err(UnmixError::dim("abundance columns", p, a.ncols()));
    }
    if a.nrows() != n {
        return Err(UnmixError::dim("abundance rows", n, a.nrows()));
    }
    for row in a.row_iter() {
        let s: f64 = row.iter().sum();
        if row.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
            return Err(UnmixError::Input("abundance rows must lie on the simplex".into()));
        }
    }
    Ok(())
}

fn mix_pixel(m: &DMatrix<f64>, a: &[f64], mixing: Mixing, out: &mut [f64]) {
    let (l, p) = m.shape();
    for i in 0..l {
        let mut v = 0.0;
        for k in 0..p {
            v += m[(i, k)] * a[k];
        }
        if mixing == Mixing::Bilinear {
            for k in 0..p {
                for j in k + 1..p {
                    v += a[k] * a[j] * m[(i, k)] * m[(i, j)];
                }
            }
        }
        out[i] = v;
    }
}

/// Noise standard deviation giving `snr_db` over the whole clean cube.
fn noise_sd(clean: &[f64], snr_db: f64) -> f64 {
    let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
    (power / 10f64.powf(snr_db / 10.0)).sqrt()
}

fn add_noise(clean: &mut [f64], snr_db: f64, seed: u64) {
    let sd = noise_sd(clean, snr_db);
    if sd == 0.0 {
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in clean.iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *v += sd * e;
    }
}

/// Mixes `A` with per-pixel endmembers and adds white Gaussian noise at
/// `snr_db` (infinite for a noiseless cube).
fn render(
    width: usize,
    height: usize,
    a: &DMatrix<f64>,
    truth: &EndmemberTruth,
    mixing: Mixing,
    snr_db: f64,
    noise_seed: u64,
) -> Result<HyperCube> {
    let l = truth.for_pixel(0).nrows();
    let n = width * height;
    let mut pixels = vec![0.0; n * l];
    let mut row = vec![0.0; a.ncols()];
    for i in 0..n {
        for (k, r) in row.iter_mut().enumerate() {
            *r = a[(i, k)];
        }
        mix_pixel(truth.for_pixel(i), &row, mixing, &mut pixels[i * l..(i + 1) * l]);
    }
    add_noise(&mut pixels, snr_db, noise_seed);
    HyperCube::new(width, height, l, pixels)
}

/// Mixes a fixed endmember matrix into a `width × height` cube.
pub fn generate_mixture<R: RngCore + ?Sized>(
    width: usize,
    height: usize,
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
    mixing: Mixing,
    snr_db: f64,
    rng: &mut R,
) -> Result<(HyperCube, GroundTruth)> {
    let noise_seed = rng.next_u64();
    let _variability_seed = rng.next_u64();
    check_abundances(a, m.ncols(), width * height)?;
    let truth = EndmemberTruth::Global(m.clone());
    let cube = render(width, height, a, &truth, mixing, snr_db, noise_seed)?;
    Ok((
        cube,
        GroundTruth {
            abundances: a.clone(),
            endmembers: Some(truth),
        },
    ))
}

/// Bilinear scene with a single endmember matrix.
pub fn generate_dc1<R: RngCore + ?Sized>(
    width: usize,
    height: usize,
    a: &DMatrix<f64>,
    m: &DMatrix<f64>,
    snr_db: f64,
    rng: &mut R,
) -> Result<(HyperCube, GroundTruth)> {
    generate_mixture(width, height, a, m, Mixing::Bilinear, snr_db, rng)
}

/// Linear scene whose endmembers vary from pixel to pixel. Each endmember
/// column is scaled by `1 + (s - 1) ψ_k` with `s ~ U(1-v, 1+v)` drawn per
/// pixel and `ψ_k` a smooth unit-mean spectral envelope, then clipped to
/// `[0, 1]`.
pub fn generate_dc2<R: RngCore + ?Sized>(
    width: usize,
    height: usize,
    a: &DMatrix<f64>,
    base: &DMatrix<f64>,
    variability: f64,
    snr_db: f64,
    rng: &mut R,
) -> Result<(HyperCube, GroundTruth)> {
    let noise_seed = rng.next_u64();
    let variability_seed = rng.next_u64();
    if !(0.0..=0.5).contains(&variability) {
        return Err(UnmixError::Input(format!(
            "variability must lie in [0, 0.5], got {variability}"
        )));
    }
    let n = width * height;
    let (l, p) = base.shape();
    check_abundances(a, p, n)?;
    let mut vrng = ChaCha8Rng::seed_from_u64(variability_seed);
    let envelopes: Vec<Vec<f64>> = (0..p).map(|_| unit_mean_envelope(l, &mut vrng)).collect();
    let mats: Vec<DMatrix<f64>> = (0..n)
        .map(|_| {
            let scales: Vec<f64> = (0..p)
                .map(|_| 1.0 + variability * (2.0 * vrng.random::<f64>() - 1.0))
                .collect();
            DMatrix::from_fn(l, p, |i, k| {
                (base[(i, k)] * (1.0 + (scales[k] - 1.0) * envelopes[k][i])).clamp(0.0, 1.0)
            })
        })
        .collect();
    let truth = EndmemberTruth::PerPixel(mats);
    let cube = render(width, height, a, &truth, Mixing::Linear, snr_db, noise_seed)?;
    Ok((
        cube,
        GroundTruth {
            abundances: a.clone(),
            endmembers: Some(truth),
        },
    ))
}

fn unit_mean_envelope<R: Rng + ?Sized>(l: usize, rng: &mut R) -> Vec<f64> {
    let span = (l - 1).max(1) as f64;
    let bumps: Vec<(f64, f64)> = (0..2)
        .map(|_| (rng.random_range(0.0..=span), rng.random_range(span / 8.0..=span / 3.0)))
        .collect();
    let raw: Vec<f64> = (0..l)
        .map(|i| 0.2 + bumps.iter().map(|&(c, w)| bump(i as f64, c, w)).sum::<f64>())
        .collect();
    let mean = raw.iter().sum::<f64>() / l as f64;
    raw.iter().map(|v| v / mean).collect()
}
