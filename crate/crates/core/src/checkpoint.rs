//! Training checkpoints: a JSON manifest plus a little-endian `f64` payload
//! holding the parameters followed by both Adam moment buffers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::encode_payload;
use crate::diffcore::AdamState;
use crate::error::{Result, UnmixError};
use crate::model::{Architecture, UnmixModel};
use crate::objective::{EpochRecord, TrainConfig, TrainState};

pub const CHECKPOINT_FORMAT: &str = "unmix-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Location of one parameter tensor inside each of the three payload
/// sections. `offset` is in bytes from the start of the section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub arch: Architecture,
    /// Layer widths of every network, for inspection.
    pub layers: BTreeMap<String, Vec<usize>>,
    pub config: TrainConfig,
    pub seed: u64,
    pub next_epoch: u32,
    pub finished: bool,
    pub adam: AdamMeta,
    pub history: Vec<EpochRecord>,
    pub params: Vec<ParamEntry>,
}

fn layer_table(arch: &Architecture) -> BTreeMap<String, Vec<usize>> {
    BTreeMap::from([
        ("endmember_decoder".to_string(), arch.decoder_widths()),
        ("latent_trunk".to_string(), arch.z_trunk_widths()),
        ("latent_mean".to_string(), arch.z_mean_widths()),
        ("latent_scale".to_string(), arch.z_scale_widths()),
        ("nonlinear_mixing".to_string(), arch.mixing_widths()),
        ("nonlinear_encoder".to_string(), arch.nlin_encoder_widths()),
        ("abundance_network".to_string(), vec![arch.lista_layers]),
    ])
}

/// `<stem>.json` and `<stem>.bin`.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = if path.extension().is_some_and(|e| e == "json" || e == "bin") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let mut json = stem.clone().into_os_string();
    json.push(".json");
    let mut bin = stem.into_os_string();
    bin.push(".bin");
    (json.into(), bin.into())
}

/// Serializes `state` into manifest and payload bytes.
pub fn encode_checkpoint(state: &TrainState) -> Result<(Vec<u8>, Vec<u8>)> {
    let store = &state.model.store;
    let mut params = Vec::with_capacity(store.len());
    let mut values = Vec::with_capacity(3 * store.num_scalars());
    let mut offset = 0;
    for (_, name, t) in store.iter() {
        params.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += 8 * t.len();
        values.extend_from_slice(t.data());
    }
    for buf in state.adam.m.iter().chain(&state.adam.v) {
        values.extend_from_slice(buf);
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        arch: state.model.arch,
        layers: layer_table(&state.model.arch),
        config: state.config.clone(),
        seed: state.seed,
        next_epoch: state.next_epoch,
        finished: state.finished,
        adam: AdamMeta {
            step: state.adam.step,
            beta1: state.adam.beta1,
            beta2: state.adam.beta2,
            eps: state.adam.eps,
        },
        history: state.history.clone(),
        params,
    };
    let mut json = serde_json::to_vec_pretty(&manifest).map_err(|e| UnmixError::format("manifest", e.to_string()))?;
    json.push(b'\n');
    Ok((json, encode_payload(&values)))
}

fn bad(field: &str, message: impl Into<String>) -> UnmixError {
    UnmixError::format(field, message)
}

/// Rebuilds a training state from manifest and payload bytes. Sizes are
/// checked against the payload before any model memory is allocated.
pub fn parse_checkpoint(manifest: &[u8], payload: &[u8]) -> Result<TrainState> {
    let m: CheckpointManifest = serde_json::from_slice(manifest).map_err(|e| bad("manifest", e.to_string()))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(bad("format", format!("expected {CHECKPOINT_FORMAT:?}, got {:?}", m.format)));
    }
    if m.version != CHECKPOINT_VERSION {
        return Err(bad("version", format!("unsupported version {}", m.version)));
    }
    m.arch.validate()?;
    m.config.validate()?;
    if m.config.latent_dim != m.arch.latent_dim || m.config.lista_layers != m.arch.lista_layers {
        return Err(bad("config", "network sizes disagree with the architecture"));
    }
    let n = m.arch.num_scalars().ok_or_else(|| bad("arch", "architecture too large"))?;
    let expected = n.checked_mul(24).ok_or_else(|| bad("arch", "architecture too large"))?;
    if payload.len() != expected {
        return Err(bad("payload", format!("expected {expected} bytes, got {}", payload.len())));
    }
    if m.layers != layer_table(&m.arch) {
        return Err(bad("layers", "layer widths disagree with the architecture"));
    }
    if !(m.adam.beta1 >= 0.0 && m.adam.beta1 < 1.0 && m.adam.beta2 >= 0.0 && m.adam.beta2 < 1.0 && m.adam.eps > 0.0) {
        return Err(bad("adam", "hyperparameters out of range"));
    }

    let reference = DMatrix::from_element(m.arch.bands, m.arch.endmembers, 0.5);
    let mut model = UnmixModel::new(m.arch, &reference, &mut ChaCha8Rng::seed_from_u64(0))?;
    if model.store.len() != m.params.len() {
        return Err(bad("params", format!("expected {} tensors, got {}", model.store.len(), m.params.len())));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("payload", "non-finite value"));
    }
    let (params, rest) = values.split_at(n);
    let (first, second) = rest.split_at(n);
    let mut adam = AdamState::with_hyperparameters(&model.store, m.adam.beta1, m.adam.beta2, m.adam.eps);
    adam.step = m.adam.step;
    let ids: Vec<_> = model.store.ids().collect();
    let mut offset = 0;
    for (k, (id, entry)) in ids.into_iter().zip(&m.params).enumerate() {
        let t = model.store.get(id);
        if entry.name != model.store.name(id) || entry.shape != t.shape() || entry.len != t.len() {
            return Err(bad("params", format!("entry {k} ({:?}) does not match the architecture", entry.name)));
        }
        if entry.offset != offset {
            return Err(bad("params", format!("entry {k} has offset {}, expected {offset}", entry.offset)));
        }
        let (lo, hi) = (offset / 8, offset / 8 + entry.len);
        model.store.set_data(id, &params[lo..hi])?;
        adam.m[k].copy_from_slice(&first[lo..hi]);
        adam.v[k].copy_from_slice(&second[lo..hi]);
        if adam.v[k].iter().any(|v| *v < 0.0) {
            return Err(bad("payload", "negative second moment"));
        }
        offset += 8 * entry.len;
    }
    if m.history.iter().enumerate().any(|(i, r)| r.epoch as usize != i) || m.history.len() != m.next_epoch as usize {
        return Err(bad("history", "epochs are not numbered 0..next_epoch"));
    }
    Ok(TrainState {
        model,
        adam,
        config: m.config,
        seed: m.seed,
        history: m.history,
        next_epoch: m.next_epoch,
        finished: m.finished,
    })
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn save_checkpoint(path: &Path, state: &TrainState) -> Result<()> {
    let (json, bin) = checkpoint_paths(path);
    let (manifest, payload) = encode_checkpoint(state)?;
    fs::write(bin, payload)?;
    fs::write(json, manifest)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let (json, bin) = checkpoint_paths(path);
    parse_checkpoint(&fs::read(json)?, &fs::read(bin)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::HyperCube;
    use crate::objective::train_with;

    fn tiny_state() -> (HyperCube, TrainState) {
        let l = 16;
        let pixels: Vec<f64> = (0..4 * l).map(|i| 0.2 + 0.3 * ((i as f64) * 0.7).sin().abs()).collect();
        let cube = HyperCube::new(2, 2, l, pixels).unwrap();
        let cfg = TrainConfig {
            batch_size: 2,
            max_epochs: 3,
            rel_stop_tol: 0.0,
            ..TrainConfig::default()
        };
        let state = TrainState::new(&cube, &[], 2, cfg, 9).unwrap();
        (cube, state)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cube, mut state) = tiny_state();
        state.config.max_epochs = 1;
        let state = train_with(state, &cube, &[], &mut |_| Ok(())).unwrap();
        assert!(state.adam.step > 0);
        let (j, b) = encode_checkpoint(&state).unwrap();
        let back = parse_checkpoint(&j, &b).unwrap();
        for ((_, _, x), (_, _, y)) in back.model.store.iter().zip(state.model.store.iter()) {
            assert_eq!(x, y);
        }
        assert_eq!(back.adam, state.adam);
        assert_eq!(back.history, state.history);
        assert_eq!(encode_checkpoint(&back).unwrap(), (j, b));
    }

    #[test]
    fn resumed_training_matches_uninterrupted() {
        let (cube, state) = tiny_state();
        let full = train_with(state.clone(), &cube, &[], &mut |_| Ok(())).unwrap();
        assert!(full.history.len() > 1);

        let mut saved = None;
        let stop = train_with(state, &cube, &[], &mut |s| {
            if s.next_epoch == 1 {
                saved = Some(encode_checkpoint(s)?);
                return Err(UnmixError::Input("interrupt".into()));
            }
            Ok(())
        });
        assert!(stop.is_err());
        let (j, b) = saved.unwrap();
        let resumed = train_with(parse_checkpoint(&j, &b).unwrap(), &cube, &[], &mut |_| Ok(())).unwrap();
        assert_eq!(resumed.history, full.history);
        assert_eq!(encode_checkpoint(&resumed).unwrap(), encode_checkpoint(&full).unwrap());
    }

    #[test]
    fn size_mismatch_is_rejected_before_allocation() {
        let (_, state) = tiny_state();
        let (j, b) = encode_checkpoint(&state).unwrap();
        assert!(parse_checkpoint(&j, &b[..b.len() - 8]).is_err());
        let mut huge: CheckpointManifest = serde_json::from_slice(&j).unwrap();
        huge.arch.bands = 1 << 40;
        let j2 = serde_json::to_vec(&huge).unwrap();
        assert!(matches!(parse_checkpoint(&j2, &b), Err(UnmixError::Format { .. })));
    }
}
