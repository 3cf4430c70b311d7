//! Raster bundles: a JSON header next to a raw little-endian `f64` payload.
//!
//! Every bundle is a grid of `width × height` records of `bands` values each,
//! stored record after record. Cubes store spectra (band-interleaved by
//! pixel), abundance maps store one abundance vector per pixel, endmember
//! bundles store one column-major `L × P` matrix per record and supervised
//! sets store `[y, a, vec(M)]` per record.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, UnmixError};

pub const DTYPE: &str = "f64le";
pub const ORDER_BIP: &str = "bip";

/// Upper bound on values in one payload (8 GiB of data).
const MAX_VALUES: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelengths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    /// Number of endmembers, for bundles whose records embed matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endmembers: Option<usize>,
}

impl BundleHeader {
    pub fn new(width: usize, height: usize, bands: usize) -> Self {
        BundleHeader {
            width,
            height,
            bands,
            dtype: DTYPE.into(),
            order: ORDER_BIP.into(),
            wavelengths: None,
            role: None,
            endmembers: None,
        }
    }

    pub fn with_role(mut self, role: &str) -> Self {
        self.role = Some(role.into());
        self
    }

    pub fn records(&self) -> usize {
        self.width * self.height
    }

    /// Number of `f64` values the payload must contain.
    pub fn value_count(&self) -> Result<usize> {
        self.width
            .checked_mul(self.height)
            .and_then(|n| n.checked_mul(self.bands))
            .filter(|&n| n <= MAX_VALUES)
            .ok_or_else(|| UnmixError::format("bands", "declared payload size is too large"))
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(UnmixError::format("width", "must be positive"));
        }
        if self.height == 0 {
            return Err(UnmixError::format("height", "must be positive"));
        }
        if self.bands == 0 {
            return Err(UnmixError::format("bands", "must be positive"));
        }
        if self.dtype != DTYPE {
            return Err(UnmixError::format(
                "dtype",
                format!("unsupported dtype `{}`, expected `{DTYPE}`", self.dtype),
            ));
        }
        if self.order != ORDER_BIP {
            return Err(UnmixError::format(
                "order",
                format!("unsupported order `{}`, expected `{ORDER_BIP}`", self.order),
            ));
        }
        if let Some(w) = &self.wavelengths {
            if w.len() != self.bands {
                return Err(UnmixError::format(
                    "wavelengths",
                    format!("{} entries for {} bands", w.len(), self.bands),
                ));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return Err(UnmixError::format("wavelengths", "non-finite entry"));
            }
        }
        if self.endmembers == Some(0) {
            return Err(UnmixError::format("endmembers", "must be positive"));
        }
        self.value_count()?;
        Ok(())
    }
}

/// Parses a header and its payload from memory.
pub fn parse_bundle(header_json: &[u8], payload: &[u8]) -> Result<(BundleHeader, Vec<f64>)> {
    let header: BundleHeader = serde_json::from_slice(header_json)
        .map_err(|e| UnmixError::format("header", e.to_string()))?;
    header.validate()?;
    let n = header.value_count()?;
    if payload.len() != n * 8 {
        return Err(UnmixError::format(
            "bands",
            format!(
                "header declares {} values ({} bytes) but the payload has {} bytes",
                n,
                n * 8,
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::format("payload", "non-finite value"));
    }
    Ok((header, data))
}

pub fn encode_payload(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// `<dir>/<name>.json` and `<dir>/<name>.raw` for a header path or stem.
pub fn bundle_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "json" || e == "raw") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut raw = stem.into_os_string();
    raw.push(".raw");
    (json.into(), raw.into())
}

pub fn write_bundle(path: &Path, header: &BundleHeader, data: &[f64]) -> Result<()> {
    header.validate()?;
    if data.len() != header.value_count()? {
        return Err(UnmixError::dim("bundle payload", header.value_count()?, data.len()));
    }
    let (json, raw) = bundle_paths(path);
    let text = serde_json::to_string_pretty(header)
        .map_err(|e| UnmixError::format("header", e.to_string()))?;
    fs::write(&json, text + "\n")?;
    fs::write(&raw, encode_payload(data))?;
    Ok(())
}

pub fn read_bundle(path: &Path) -> Result<(BundleHeader, Vec<f64>)> {
    let (json, raw) = bundle_paths(path);
    let header = fs::read(&json)?;
    let payload = fs::read(&raw)?;
    parse_bundle(&header, &payload)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header_bytes(h: &BundleHeader) -> Vec<u8> {
        serde_json::to_vec(h).unwrap()
    }

    #[test]
    fn round_trip_in_memory() {
        let h = BundleHeader::new(2, 1, 3);
        let data = vec![0.1, 0.2, 0.3, -1.0, 1e-300, 7.5];
        let (h2, d2) = parse_bundle(&header_bytes(&h), &encode_payload(&data)).unwrap();
        assert_eq!(h, h2);
        assert_eq!(
            d2.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            data.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn band_count_mismatch_is_reported() {
        let h = BundleHeader::new(2, 2, 3);
        let err = parse_bundle(&header_bytes(&h), &encode_payload(&[0.0; 11])).unwrap_err();
        assert!(matches!(err, UnmixError::Format { ref field, .. } if field == "bands"));
    }

    #[test]
    fn wrong_dtype_is_reported() {
        let json = br#"{"width":1,"height":1,"bands":1,"dtype":"f32le","order":"bip"}"#;
        let err = parse_bundle(json, &encode_payload(&[0.0])).unwrap_err();
        assert!(matches!(err, UnmixError::Format { ref field, .. } if field == "dtype"));
    }

    #[test]
    fn wavelengths_are_optional() {
        let json = br#"{"width":1,"height":1,"bands":2,"dtype":"f64le","order":"bip"}"#;
        let (h, _) = parse_bundle(json, &encode_payload(&[0.5, 0.25])).unwrap();
        assert!(h.wavelengths.is_none());
    }

    #[test]
    fn oversized_declarations_are_rejected() {
        let json = format!(
            r#"{{"width":{},"height":{},"bands":8,"dtype":"f64le","order":"bip"}}"#,
            usize::MAX / 2,
            3
        );
        assert!(parse_bundle(json.as_bytes(), &[]).is_err());
    }

    #[test]
    fn paths_accept_stem_or_header() {
        let (j, r) = bundle_paths(Path::new("out/cube.json"));
        assert_eq!(j, PathBuf::from("out/cube.json"));
        assert_eq!(r, PathBuf::from("out/cube.raw"));
        let (j, _) = bundle_paths(Path::new("out/cube"));
        assert_eq!(j, PathBuf::from("out/cube.json"));
    }
}
