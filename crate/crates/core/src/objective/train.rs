use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{item_seed, loss_and_gradients, BatchItem, LossBreakdown, TrainConfig};
use crate::data::{vca, HyperCube, SupervisedSample};
use crate::diffcore::{adam_step, lr_schedule, AdamState};
use crate::error::{Result, UnmixError};
use crate::model::{Architecture, UnmixModel};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    /// Mean of the per-batch breakdowns.
    pub breakdown: LossBreakdown,
}

/// Everything needed to continue training where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: UnmixModel,
    pub adam: AdamState,
    pub config: TrainConfig,
    pub seed: u64,
    pub history: Vec<EpochRecord>,
    pub next_epoch: u32,
    pub finished: bool,
}

/// Initial endmembers for the decoders: the mean labeled endmember matrix,
/// or VCA on the unlabeled cube when there are no labels.
pub fn reference_endmembers(cube: &HyperCube, labeled: &[SupervisedSample], p: usize, seed: u64) -> Result<DMatrix<f64>> {
    if labeled.is_empty() {
        return vca(cube, p, &mut stream_rng(seed, Stream::Init, &[1]));
    }
    let mut mean = DMatrix::zeros(cube.bands, p);
    for s in labeled {
        if s.m.shape() != (cube.bands, p) {
            return Err(UnmixError::dim("labeled endmember matrix", cube.bands * p, s.m.len()));
        }
        mean += &s.m;
    }
    Ok(mean / labeled.len() as f64)
}

impl TrainState {
    pub fn new(cube: &HyperCube, labeled: &[SupervisedSample], endmembers: usize, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let arch = Architecture {
            bands: cube.bands,
            endmembers,
            latent_dim: config.latent_dim,
            lista_layers: config.lista_layers,
        };
        let reference = reference_endmembers(cube, labeled, endmembers, seed)?;
        let model = UnmixModel::new(arch, &reference, &mut stream_rng(seed, Stream::Init, &[0]))?;
        let adam = AdamState::new(&model.store);
        Ok(TrainState {
            model,
            adam,
            config,
            seed,
            history: Vec::new(),
            next_epoch: 0,
            finished: false,
        })
    }

    fn stop_reached(&self) -> bool {
        if self.next_epoch >= self.config.max_epochs {
            return true;
        }
        match self.history.as_slice() {
            [.., prev, cur] => {
                let (a, b) = (prev.breakdown.total, cur.breakdown.total);
                (b - a) / a.abs() < self.config.rel_stop_tol
            }
            _ => false,
        }
    }
}

/// Trains from scratch until the stopping rule fires.
pub fn train(
    cube: &HyperCube,
    labeled: &[SupervisedSample],
    endmembers: usize,
    config: TrainConfig,
    seed: u64,
) -> Result<TrainState> {
    let state = TrainState::new(cube, labeled, endmembers, config, seed)?;
    train_with(state, cube, labeled, &mut |_| Ok(()))
}

/// Continues `state` epoch by epoch, calling `on_epoch` after each one.
pub fn train_with(
    mut state: TrainState,
    cube: &HyperCube,
    labeled: &[SupervisedSample],
    on_epoch: &mut dyn FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    state.config.validate()?;
    if cube.bands != state.model.arch.bands {
        return Err(UnmixError::dim("cube bands", state.model.arch.bands, cube.bands));
    }
    let n = cube.num_pixels();
    let b = state.config.batch_size;
    let n_sup = b.min(labeled.len());
    while !state.finished {
        let epoch = state.next_epoch;
        let lr = lr_schedule(epoch);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream_rng(state.seed, Stream::Data, &[epoch as u64, 0]));
        let mut sup_order: Vec<usize> = (0..labeled.len()).collect();
        sup_order.shuffle(&mut stream_rng(state.seed, Stream::Data, &[epoch as u64, 1]));

        let mut batches = Vec::with_capacity(n.div_ceil(b));
        for (step, idx) in order.chunks(b).enumerate() {
            let mut items: Vec<BatchItem<'_>> = idx.iter().map(|&i| BatchItem::Unlabeled(cube.pixel(i))).collect();
            for j in 0..n_sup {
                let s = sup_order[(step * n_sup + j) % labeled.len()];
                items.push(BatchItem::Labeled(&labeled[s]));
            }
            let seeds: Vec<u64> = (0..items.len()).map(|i| item_seed(state.seed, epoch, step, i)).collect();
            let at = |e: UnmixError| {
                if e.is_numeric() {
                    UnmixError::Training(format!("epoch {epoch}, batch {step}: {e}"))
                } else {
                    e
                }
            };
            let (breakdown, grads) = loss_and_gradients(&state.model, &items, &seeds, &state.config).map_err(at)?;
            if !breakdown.is_finite() {
                return Err(UnmixError::Training(format!(
                    "epoch {epoch}, batch {step}: objective diverged ({breakdown:?})"
                )));
            }
            adam_step(&mut state.model.store, &grads, &mut state.adam, lr).map_err(at)?;
            batches.push(breakdown);
        }
        let record = EpochRecord {
            epoch,
            lr,
            breakdown: LossBreakdown::mean(&batches),
        };
        log::info!("epoch {epoch}: objective {:.6} (lr {lr:.3e})", record.breakdown.total);
        state.history.push(record);
        state.next_epoch += 1;
        state.finished = state.stop_reached();
        on_epoch(&state)?;
    }
    Ok(state)
}

const HISTORY_COLUMNS: [&str; 8] = ["epoch", "unsup", "sup_iw", "sup_posterior", "sparsity", "reg", "total", "lr"];

pub fn write_history_csv<W: Write>(out: W, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| UnmixError::Io(std::io::Error::other(e));
    w.write_record(HISTORY_COLUMNS).map_err(io)?;
    for r in history {
        let b = &r.breakdown;
        w.write_record([
            r.epoch.to_string(),
            b.unsup.to_string(),
            b.sup_iw.to_string(),
            b.sup_posterior.to_string(),
            b.sparsity.to_string(),
            b.reg.to_string(),
            b.total.to_string(),
            r.lr.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history_csv<R: Read>(input: R) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers().map_err(|e| UnmixError::format("header", e.to_string()))?;
    if headers.iter().ne(HISTORY_COLUMNS) {
        return Err(UnmixError::format("header", "unexpected history columns"));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(|e| UnmixError::format("row", e.to_string()))?;
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| UnmixError::format(HISTORY_COLUMNS[i], e.to_string()))
        };
        out.push(EpochRecord {
            epoch: row[0].parse().map_err(|_| UnmixError::format("epoch", "not an integer"))?,
            lr: num(7)?,
            breakdown: LossBreakdown {
                unsup: num(1)?,
                sup_iw: num(2)?,
                sup_posterior: num(3)?,
                sparsity: num(4)?,
                reg: num(5)?,
                total: num(6)?,
            },
        });
    }
    Ok(out)
}
