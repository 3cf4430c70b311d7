//! Hyperspectral cubes, synthetic scenes, endmember extraction and the
//! self-supervised training set.

mod bundle;
mod selfsup;
mod synth;
mod vca;

use std::path::Path;

use nalgebra::DMatrix;

pub use bundle::{bundle_paths, encode_payload, parse_bundle, read_bundle, write_bundle, BundleHeader};
pub use selfsup::{
    build_supervised_set, extract_pure_pixels, self_supervised_set, PurePixelDict, DEFAULT_LABEL_SNR_DB,
    DEFAULT_N_DRAWS, DEFAULT_N_PPX,
};
pub use synth::{
    abundance_maps, generate_dc1, generate_dc2, generate_mixture, synth_endmember_library,
    Mixing, SceneConfig,
};
pub use vca::vca;

use crate::error::{Result, UnmixError};

pub const ROLE_CUBE: &str = "cube";
pub const ROLE_ABUNDANCES: &str = "abundances";
pub const ROLE_ENDMEMBERS: &str = "endmembers";
pub const ROLE_SUPERVISED: &str = "supervised";
pub const ROLE_RECONSTRUCTION: &str = "reconstruction";
pub const ROLE_NONLINEARITY: &str = "eta_d";

/// An `L`-band raster of `width × height` pixels, stored pixel by pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// `N × L` values, row-major over pixels (`N = width · height`).
    pub pixels: Vec<f64>,
    pub wavelengths: Option<Vec<f64>>,
}

impl HyperCube {
    pub fn new(width: usize, height: usize, bands: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(UnmixError::Input(format!(
                "empty cube {width}×{height}×{bands}"
            )));
        }
        if pixels.len() != width * height * bands {
            return Err(UnmixError::dim("cube payload", width * height * bands, pixels.len()));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::Input("cube contains non-finite values".into()));
        }
        Ok(HyperCube {
            width,
            height,
            bands,
            pixels,
            wavelengths: None,
        })
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, n: usize) -> &[f64] {
        &self.pixels[n * self.bands..(n + 1) * self.bands]
    }

    pub fn iter_pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.pixels.chunks_exact(self.bands)
    }

    /// `L × N` matrix with one pixel per column.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.bands, self.num_pixels(), &self.pixels)
    }

    pub fn header(&self) -> BundleHeader {
        let mut h = BundleHeader::new(self.width, self.height, self.bands).with_role(ROLE_CUBE);
        h.wavelengths = self.wavelengths.clone();
        h
    }
}

/// Per-pixel endmember matrices, or a single matrix shared by every pixel.
#[derive(Debug, Clone, PartialEq)]
pub enum EndmemberTruth {
    Global(DMatrix<f64>),
    PerPixel(Vec<DMatrix<f64>>),
}

impl EndmemberTruth {
    pub fn for_pixel(&self, n: usize) -> &DMatrix<f64> {
        match self {
            EndmemberTruth::Global(m) => m,
            EndmemberTruth::PerPixel(ms) => &ms[n],
        }
    }

    pub fn endmembers(&self) -> usize {
        self.for_pixel(0).ncols()
    }
}

/// Reference abundances and endmembers of a synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `N × P`, rows on the simplex.
    pub abundances: DMatrix<f64>,
    pub endmembers: Option<EndmemberTruth>,
}

/// One labeled triple `(y, a, M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedSample {
    pub y: Vec<f64>,
    pub a: Vec<f64>,
    /// `L × P`.
    pub m: DMatrix<f64>,
}

pub fn write_cube(path: &Path, cube: &HyperCube) -> Result<()> {
    write_bundle(path, &cube.header(), &cube.pixels)
}

pub fn read_cube(path: &Path) -> Result<HyperCube> {
    let (h, data) = read_bundle(path)?;
    cube_from_bundle(h, data)
}

pub fn cube_from_bundle(h: BundleHeader, data: Vec<f64>) -> Result<HyperCube> {
    if let Some(role) = &h.role {
        if role != ROLE_CUBE {
            return Err(UnmixError::format("role", format!("expected `{ROLE_CUBE}`, found `{role}`")));
        }
    }
    let mut cube = HyperCube::new(h.width, h.height, h.bands, data)?;
    cube.wavelengths = h.wavelengths;
    Ok(cube)
}

/// Abundance map bundle: one `P`-vector per pixel.
pub fn write_abundances(path: &Path, width: usize, height: usize, a: &DMatrix<f64>) -> Result<()> {
    let header = BundleHeader::new(width, height, a.ncols()).with_role(ROLE_ABUNDANCES);
    write_bundle(path, &header, &row_major(a))
}

pub fn read_abundances(path: &Path) -> Result<(usize, usize, DMatrix<f64>)> {
    let (h, data) = read_bundle(path)?;
    expect_role(&h, ROLE_ABUNDANCES)?;
    Ok((h.width, h.height, DMatrix::from_row_slice(h.records(), h.bands, &data)))
}

/// Endmember bundle: one column-major `L × P` matrix per record. A single
/// shared matrix is stored as a `1 × 1` grid.
pub fn write_endmembers(path: &Path, width: usize, height: usize, truth: &EndmemberTruth) -> Result<()> {
    let (w, h, mats): (usize, usize, Vec<&DMatrix<f64>>) = match truth {
        EndmemberTruth::Global(m) => (1, 1, vec![m]),
        EndmemberTruth::PerPixel(ms) => (width, height, ms.iter().collect()),
    };
    let (l, p) = mats[0].shape();
    let mut header = BundleHeader::new(w, h, l * p).with_role(ROLE_ENDMEMBERS);
    header.endmembers = Some(p);
    let mut data = Vec::with_capacity(w * h * l * p);
    for m in mats {
        if m.shape() != (l, p) {
            return Err(UnmixError::dim("endmember matrix", l * p, m.len()));
        }
        data.extend_from_slice(m.as_slice());
    }
    write_bundle(path, &header, &data)
}

pub fn read_endmembers(path: &Path) -> Result<EndmemberTruth> {
    let (h, data) = read_bundle(path)?;
    expect_role(&h, ROLE_ENDMEMBERS)?;
    let p = h
        .endmembers
        .ok_or_else(|| UnmixError::format("endmembers", "missing endmember count"))?;
    if h.bands % p != 0 {
        return Err(UnmixError::format("endmembers", "does not divide the record length"));
    }
    let l = h.bands / p;
    let mut mats: Vec<DMatrix<f64>> = data
        .chunks_exact(h.bands)
        .map(|c| DMatrix::from_column_slice(l, p, c))
        .collect();
    if mats.len() == 1 {
        Ok(EndmemberTruth::Global(mats.remove(0)))
    } else {
        Ok(EndmemberTruth::PerPixel(mats))
    }
}

/// Supervised set bundle: `samples × 1` records of `[y, a, vec(M)]`.
pub fn write_supervised(path: &Path, set: &[SupervisedSample]) -> Result<()> {
    let first = set
        .first()
        .ok_or_else(|| UnmixError::Input("cannot write an empty supervised set".into()))?;
    let (l, p) = first.m.shape();
    let record = l + p + l * p;
    let mut header = BundleHeader::new(set.len(), 1, record).with_role(ROLE_SUPERVISED);
    header.endmembers = Some(p);
    let mut data = Vec::with_capacity(set.len() * record);
    for s in set {
        if s.y.len() != l || s.a.len() != p || s.m.shape() != (l, p) {
            return Err(UnmixError::dim("supervised record", record, s.y.len() + s.a.len() + s.m.len()));
        }
        data.extend_from_slice(&s.y);
        data.extend_from_slice(&s.a);
        data.extend_from_slice(s.m.as_slice());
    }
    write_bundle(path, &header, &data)
}

pub fn read_supervised(path: &Path) -> Result<Vec<SupervisedSample>> {
    let (h, data) = read_bundle(path)?;
    supervised_from_bundle(h, data)
}

pub fn supervised_from_bundle(h: BundleHeader, data: Vec<f64>) -> Result<Vec<SupervisedSample>> {
    expect_role(&h, ROLE_SUPERVISED)?;
    let p = h
        .endmembers
        .ok_or_else(|| UnmixError::format("endmembers", "missing endmember count"))?;
    // record = L + P + L·P = L(1 + P) + P
    if h.bands <= p || (h.bands - p) % (1 + p) != 0 {
        return Err(UnmixError::format("bands", "record length inconsistent with endmembers"));
    }
    let l = (h.bands - p) / (1 + p);
    Ok(data
        .chunks_exact(h.bands)
        .map(|r| SupervisedSample {
            y: r[..l].to_vec(),
            a: r[l..l + p].to_vec(),
            m: DMatrix::from_column_slice(l, p, &r[l + p..]),
        })
        .collect())
}

/// Writes a `width × height × bands` raster tagged with `role`.
pub fn write_raster(path: &Path, width: usize, height: usize, bands: usize, role: &str, data: &[f64]) -> Result<()> {
    write_bundle(path, &BundleHeader::new(width, height, bands).with_role(role), data)
}

/// Reads a raster and checks its role.
pub fn read_raster(path: &Path, role: &str) -> Result<(BundleHeader, Vec<f64>)> {
    let (h, data) = read_bundle(path)?;
    expect_role(&h, role)?;
    Ok((h, data))
}

pub fn expect_role(h: &BundleHeader, role: &str) -> Result<()> {
    match &h.role {
        Some(r) if r == role => Ok(()),
        Some(r) => Err(UnmixError::format("role", format!("expected `{role}`, found `{r}`"))),
        None => Err(UnmixError::format("role", format!("missing, expected `{role}`"))),
    }
}

pub(crate) fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    crate::linalg::to_row_major(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_write_read_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let mut cube = HyperCube::new(3, 2, 4, (0..24).map(|i| (i as f64).sqrt() / 7.0).collect()).unwrap();
        cube.wavelengths = Some(vec![400.0, 500.0, 600.0, 700.0]);
        let path = dir.path().join("c");
        write_cube(&path, &cube).unwrap();
        assert_eq!(read_cube(&path).unwrap(), cube);
    }

    #[test]
    fn supervised_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = SupervisedSample {
            y: vec![0.1, 0.2, 0.3],
            a: vec![0.0, 1.0],
            m: DMatrix::from_column_slice(3, 2, &[0.5, 0.6, 0.7, 0.1, 0.2, 0.3]),
        };
        let path = dir.path().join("ds.json");
        write_supervised(&path, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(read_supervised(&path).unwrap(), vec![s.clone(), s]);
    }

    #[test]
    fn endmember_truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = DMatrix::from_fn(4, 2, |i, k| (i + 3 * k) as f64 / 10.0);
        let path = dir.path().join("m");
        write_endmembers(&path, 5, 5, &EndmemberTruth::Global(m.clone())).unwrap();
        assert_eq!(read_endmembers(&path).unwrap(), EndmemberTruth::Global(m.clone()));
        let per = EndmemberTruth::PerPixel(vec![m.clone(), m.scale(0.5)]);
        write_endmembers(&path, 2, 1, &per).unwrap();
        assert_eq!(read_endmembers(&path).unwrap(), per);
    }

    #[test]
    fn role_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a");
        write_abundances(&path, 1, 1, &DMatrix::from_row_slice(1, 2, &[0.5, 0.5])).unwrap();
        assert!(matches!(read_cube(&path), Err(UnmixError::Format { .. })));
    }
}
