//! Pure-pixel dictionaries and the labeled set built from them.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{HyperCube, SupervisedSample};
use crate::error::{Result, UnmixError};
use crate::linalg::spectral_angle;
use crate::seeds::{stream_rng, Stream};

/// For every reference endmember, the cube pixels closest to it in angle.
#[derive(Debug, Clone, PartialEq)]
pub struct PurePixelDict {
    /// Pixel indices per endmember, closest first.
    pub indices: Vec<Vec<usize>>,
    /// Spectral angles matching `indices`.
    pub angles: Vec<Vec<f64>>,
    /// Spectra matching `indices`.
    pub spectra: Vec<Vec<Vec<f64>>>,
}

impl PurePixelDict {
    pub fn endmembers(&self) -> usize {
        self.spectra.len()
    }
}

pub fn extract_pure_pixels(cube: &HyperCube, reference: &DMatrix<f64>, n_ppx: usize) -> Result<PurePixelDict> {
    if reference.nrows() != cube.bands {
        return Err(UnmixError::dim("reference endmember bands", cube.bands, reference.nrows()));
    }
    let n = cube.num_pixels();
    if n_ppx == 0 || n < n_ppx {
        return Err(UnmixError::Input(format!(
            "cannot select {n_ppx} pure pixels from {n} pixels"
        )));
    }
    let mut dict = PurePixelDict {
        indices: Vec::new(),
        angles: Vec::new(),
        spectra: Vec::new(),
    };
    for col in reference.column_iter() {
        let r: Vec<f64> = col.iter().copied().collect();
        let mut ranked: Vec<(usize, f64)> = cube
            .iter_pixels()
            .enumerate()
            .map(|(i, px)| {
                let t = spectral_angle(px, &r);
                (i, if t.is_nan() { f64::INFINITY } else { t })
            })
            .collect();
        ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        ranked.truncate(n_ppx);
        dict.spectra.push(ranked.iter().map(|&(i, _)| cube.pixel(i).to_vec()).collect());
        dict.indices.push(ranked.iter().map(|&(i, _)| i).collect());
        dict.angles.push(ranked.iter().map(|&(_, t)| t).collect());
    }
    Ok(dict)
}

/// `P · n_draws` one-hot samples. Each draw picks one pure spectrum per
/// endmember as `M` and emits `y = m_j + e` with `e` white Gaussian at
/// `snr_db` relative to `m_j`.
pub fn build_supervised_set<R: Rng + ?Sized>(
    dict: &PurePixelDict,
    n_draws: usize,
    snr_db: f64,
    rng: &mut R,
) -> Result<Vec<SupervisedSample>> {
    let p = dict.endmembers();
    if p == 0 {
        return Err(UnmixError::Input("pure-pixel dictionary has no endmembers".into()));
    }
    if let Some(k) = dict.spectra.iter().position(|list| list.is_empty()) {
        return Err(UnmixError::Input(format!("pure-pixel list {k} is empty")));
    }
    let l = dict.spectra[0][0].len();
    let attenuation = 10f64.powf(snr_db / 10.0);
    let mut out = Vec::with_capacity(p * n_draws);
    for _ in 0..n_draws {
        let m = {
            let cols: Vec<&Vec<f64>> = dict
                .spectra
                .iter()
                .map(|list| &list[rng.random_range(0..list.len())])
                .collect();
            DMatrix::from_fn(l, p, |i, k| cols[k][i])
        };
        for j in 0..p {
            let col = m.column(j);
            let sd = (col.norm_squared() / l as f64 / attenuation).sqrt();
            let y = col
                .iter()
                .map(|&v| {
                    let e: f64 = rng.sample(StandardNormal);
                    v + sd * e
                })
                .collect();
            let mut a = vec![0.0; p];
            a[j] = 1.0;
            out.push(SupervisedSample { y, a, m: m.clone() });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cube() -> HyperCube {
        HyperCube::new(
            4,
            1,
            2,
            vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn exact_match_ranks_first_and_lists_are_sorted() {
        let reference = DMatrix::from_column_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        let d = extract_pure_pixels(&cube(), &reference, 3).unwrap();
        assert_eq!(d.indices[0][0], 2);
        assert_eq!(d.indices[1][0], 0);
        assert!(d.indices.iter().all(|l| l.len() == 3));
        for a in &d.angles {
            assert!(a.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn too_many_pure_pixels_requested() {
        let reference = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert!(extract_pure_pixels(&cube(), &reference, 5).is_err());
    }

    #[test]
    fn noiseless_set_is_one_hot_on_columns() {
        let reference = DMatrix::from_column_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let d = extract_pure_pixels(&cube(), &reference, 2).unwrap();
        let set = build_supervised_set(&d, 7, f64::INFINITY, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(set.len(), 14);
        for s in &set {
            let j = s.a.iter().position(|&v| v == 1.0).unwrap();
            assert_eq!(s.a.iter().sum::<f64>(), 1.0);
            assert_eq!(s.y.as_slice(), s.m.column(j).as_slice());
        }
    }

    #[test]
    fn empty_list_is_an_input_error() {
        let d = PurePixelDict {
            indices: vec![vec![]],
            angles: vec![vec![]],
            spectra: vec![vec![]],
        };
        let err = build_supervised_set(&d, 1, 30.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, UnmixError::Input(_)));
    }
}

pub const DEFAULT_N_PPX: usize = 100;
pub const DEFAULT_N_DRAWS: usize = 100;
pub const DEFAULT_LABEL_SNR_DB: f64 = 30.0;

/// VCA reference, pure-pixel extraction and labeled-set construction in one
/// go. VCA and the draws use separate data sub-streams of `seed`.
pub fn self_supervised_set(
    cube: &HyperCube,
    p: usize,
    n_ppx: usize,
    n_draws: usize,
    snr_db: f64,
    seed: u64,
) -> Result<(DMatrix<f64>, Vec<SupervisedSample>)> {
    let reference = super::vca(cube, p, &mut stream_rng(seed, Stream::Data, &[1, 0]))?;
    let dict = extract_pure_pixels(cube, &reference, n_ppx)?;
    let set = build_supervised_set(&dict, n_draws, snr_db, &mut stream_rng(seed, Stream::Data, &[1, 1]))?;
    Ok((reference, set))
}
