//! The semi-supervised training objective and its optimizer loop.
//!
//! The objective is maximized; [`loss_and_gradients`] returns the gradient
//! of its negation so it can be fed to a minimizer directly.

mod train;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::SupervisedSample;
use crate::diffcore::{log_sum_exp, Gradients, Graph, Var};
use crate::distributions::{
    check_simplex, clip_to_simplex, dirichlet_logpdf_node, gaussian_logpdf_node,
    gaussian_rsample_node, DirichletParams, NoiseSource, RngNoise,
};
use crate::error::{Result, UnmixError};
use crate::generative::{
    em_decode_node, flat_dirichlet_log_density, latent_prior_node, log_likelihood_node,
};
use crate::inference::{abundance_concentration_node, encode_z_node, posterior_sample_node};
use crate::model::{UnmixModel, DEFAULT_LATENT_DIM, DEFAULT_LISTA_LAYERS};
use crate::seeds::{derive_seed, Stream};

pub use train::{
    read_history_csv, reference_endmembers, train, train_with, write_history_csv, EpochRecord,
    TrainState,
};

/// Tolerance for accepting a labeled abundance vector as a simplex point.
const LABEL_SIMPLEX_TOL: f64 = 1e-6;
/// Samples per gradient-accumulation chunk. Fixed so that the reduction
/// order, and therefore every bit of the result, is independent of the
/// number of worker threads.
const CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Weight of the supervised block.
    pub lambda: f64,
    /// Extra weight on the supervised posterior log-likelihood.
    pub beta: f64,
    /// Weight of the square-root sparsity penalty on the concentrations.
    pub tau: f64,
    /// Norm penalty on the nonlinear mixing network.
    pub varsigma1: f64,
    /// Norm penalty on the nonlinear abundance encoder.
    pub varsigma2: f64,
    /// Importance samples per supervised pixel.
    pub k_samples: usize,
    /// Posterior samples per unsupervised pixel.
    pub k_expect: usize,
    pub batch_size: usize,
    pub max_epochs: u32,
    pub rel_stop_tol: f64,
    pub latent_dim: usize,
    pub lista_layers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            beta: 0.1,
            tau: 0.01,
            varsigma1: 1.0,
            varsigma2: 1.0,
            k_samples: 5,
            k_expect: 1,
            batch_size: 16,
            max_epochs: 30,
            rel_stop_tol: 0.01,
            latent_dim: DEFAULT_LATENT_DIM,
            lista_layers: DEFAULT_LISTA_LAYERS,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            ("lambda", self.lambda),
            ("beta", self.beta),
            ("tau", self.tau),
            ("varsigma1", self.varsigma1),
            ("varsigma2", self.varsigma2),
            ("rel_stop_tol", self.rel_stop_tol),
        ];
        for (name, v) in weights {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(UnmixError::Input(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        let counts = [
            ("k_samples", self.k_samples),
            ("k_expect", self.k_expect),
            ("batch_size", self.batch_size),
            ("latent_dim", self.latent_dim),
            ("lista_layers", self.lista_layers),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(UnmixError::Input(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Values of the objective's parts for one batch or an epoch average.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub unsup: f64,
    pub sup_iw: f64,
    pub sup_posterior: f64,
    pub sparsity: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// `unsup + λ (sup_iw + (1+β) sup_posterior) − sparsity − reg`.
    pub fn recompose(&self, cfg: &TrainConfig) -> f64 {
        self.unsup + cfg.lambda * (self.sup_iw + (1.0 + cfg.beta) * self.sup_posterior)
            - self.sparsity
            - self.reg
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.unsup += o.unsup;
        self.sup_iw += o.sup_iw;
        self.sup_posterior += o.sup_posterior;
        self.sparsity += o.sparsity;
        self.reg += o.reg;
        self.total += o.total;
    }

    fn scaled(&self, c: f64) -> LossBreakdown {
        LossBreakdown {
            unsup: self.unsup * c,
            sup_iw: self.sup_iw * c,
            sup_posterior: self.sup_posterior * c,
            sparsity: self.sparsity * c,
            reg: self.reg * c,
            total: self.total * c,
        }
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let mut acc = LossBreakdown::default();
        for b in items {
            acc.add(b);
        }
        if items.is_empty() {
            acc
        } else {
            acc.scaled(1.0 / items.len() as f64)
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.unsup, self.sup_iw, self.sup_posterior, self.sparsity, self.reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `log q(M|Z) − log p(M|Z)`. The endmember decoder is shared by the
/// generative and the inference model, so the two densities are the same
/// function and the ratio is zero by construction, not by evaluation.
pub fn shared_decoder_log_ratio() -> f64 {
    0.0
}

fn finite(g: &Graph<'_>, v: Var, factor: &str) -> Result<()> {
    let x = g.scalar_value(v);
    if x.is_finite() {
        Ok(())
    } else {
        Err(UnmixError::Training(format!("non-finite {factor}: {x}")))
    }
}

/// `Σ_i √γ_i` on the graph.
fn root_sum(g: &mut Graph<'_>, gamma: Var) -> Var {
    let r = g.sqrt(gamma);
    g.sum(r)
}

/// Per-sample graph outputs: `(unsup, Σ√γ)` averaged over posterior samples.
pub struct UnsupNodes {
    pub elbo: Var,
    pub root_sum: Var,
}

/// Single-sample evidence bound `log p(y,a,M,Z) − log q(a,M,Z|y)` averaged
/// over `k_expect` ancestral posterior draws.
pub fn unsup_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    y: &[f64],
    k_expect: usize,
    noise: &mut dyn NoiseSource,
) -> Result<UnsupNodes> {
    if y.len() != model.arch.bands {
        return Err(UnmixError::dim("observation", model.arch.bands, y.len()));
    }
    let yv = g.constant_vec(y.to_vec());
    let flat = flat_dirichlet_log_density(model.arch.endmembers) + shared_decoder_log_ratio();
    let mut elbos = Vec::with_capacity(k_expect);
    let mut roots = Vec::with_capacity(k_expect);
    for _ in 0..k_expect {
        let s = posterior_sample_node(g, model, yv, noise)?;
        let ll = log_likelihood_node(g, model, yv, s.a, &s.m)?;
        finite(g, ll, "observation log-likelihood")?;
        let log_qa = dirichlet_logpdf_node(g, s.a, s.abundance.gamma)?;
        finite(g, log_qa, "abundance posterior log-density")?;
        let mut parts = vec![ll];
        for (zk, zd) in s.z.iter().zip(&s.z_dists) {
            parts.push(latent_prior_node(g, *zk)?);
            let lq = gaussian_logpdf_node(g, *zk, zd.mean, zd.log_scale)?;
            parts.push(g.neg(lq));
        }
        parts.push(g.neg(log_qa));
        let sum = g.add_all(&parts)?;
        let elbo = g.add_const(sum, flat);
        finite(g, elbo, "evidence bound")?;
        elbos.push(elbo);
        roots.push(root_sum(g, s.abundance.gamma));
    }
    let inv = 1.0 / k_expect as f64;
    let e = g.add_all(&elbos)?;
    let r = g.add_all(&roots)?;
    Ok(UnsupNodes {
        elbo: g.scale(e, inv),
        root_sum: g.scale(r, inv),
    })
}

pub struct SupNodes {
    pub iw: Var,
    pub posterior: Var,
    pub root_sum: Var,
    /// `log ω_j = log q(M|Z_j)`, one per importance sample.
    pub log_weights: Var,
}

/// Importance-weighted supervised terms for one labeled triple.
///
/// `iw = Σ_j (ω_j/Ω) r_j` with `r_j` the log-ratio of the joint to the
/// posterior at `(a, M, Z_j)`, and `posterior = log q(a|M,y) + mean_j log ω_j`.
pub fn sup_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    sample: &SupervisedSample,
    k_samples: usize,
    noise: &mut dyn NoiseSource,
) -> Result<SupNodes> {
    let (l, p, h) = (model.arch.bands, model.arch.endmembers, model.arch.latent_dim);
    if sample.y.len() != l {
        return Err(UnmixError::dim("labeled observation", l, sample.y.len()));
    }
    if sample.m.shape() != (l, p) {
        return Err(UnmixError::dim("labeled endmember matrix", l * p, sample.m.len()));
    }
    if sample.a.len() != p {
        return Err(UnmixError::dim("labeled abundances", p, sample.a.len()));
    }
    check_simplex(&sample.a, LABEL_SIMPLEX_TOL)?;
    let yv = g.constant_vec(sample.y.clone());
    let av = g.constant_vec(clip_to_simplex(&sample.a));
    let cols: Vec<Var> = sample
        .m
        .column_iter()
        .map(|c| g.constant_vec(c.iter().copied().collect()))
        .collect();

    let ab = abundance_concentration_node(g, model, yv, &cols)?;
    let log_qa = dirichlet_logpdf_node(g, av, ab.gamma)?;
    finite(g, log_qa, "labeled abundance log-density")?;
    let ll = log_likelihood_node(g, model, yv, av, &cols)?;
    finite(g, ll, "labeled observation log-likelihood")?;
    let base = g.sub(ll, log_qa)?;
    let base = g.add_const(base, flat_dirichlet_log_density(p) + shared_decoder_log_ratio());

    let z_dists = (0..p)
        .map(|k| encode_z_node(g, model, k, yv))
        .collect::<Result<Vec<_>>>()?;
    let mut log_w = Vec::with_capacity(k_samples);
    let mut ratios = Vec::with_capacity(k_samples);
    for _ in 0..k_samples {
        let mut w_parts = Vec::with_capacity(p);
        let mut r_parts = vec![base];
        for (k, zd) in z_dists.iter().enumerate() {
            let eps = noise.normal(h);
            let z = gaussian_rsample_node(g, zd.mean, zd.log_scale, &eps)?;
            let dec = em_decode_node(g, model, k, z)?;
            w_parts.push(gaussian_logpdf_node(g, cols[k], dec.mean, dec.log_scale)?);
            r_parts.push(latent_prior_node(g, z)?);
            let lq = gaussian_logpdf_node(g, z, zd.mean, zd.log_scale)?;
            r_parts.push(g.neg(lq));
        }
        log_w.push(g.add_all(&w_parts)?);
        ratios.push(g.add_all(&r_parts)?);
    }
    let log_w = g.concat(&log_w);
    let ratios = g.concat(&ratios);
    let log_total = g.log_sum_exp(log_w);
    if !g.scalar_value(log_total).is_finite() {
        return Err(UnmixError::Numeric(
            "importance weights vanish even in the log domain".into(),
        ));
    }
    let shift = g.broadcast(log_total, k_samples)?;
    let centered = g.sub(log_w, shift)?;
    let weights = g.exp(centered);
    let iw = g.dot(weights, ratios)?;
    finite(g, iw, "importance-weighted supervised term")?;
    let mean_log_w = g.sum(log_w);
    let mean_log_w = g.scale(mean_log_w, 1.0 / k_samples as f64);
    let posterior = g.add(log_qa, mean_log_w)?;
    finite(g, posterior, "supervised posterior term")?;
    Ok(SupNodes {
        iw,
        posterior,
        root_sum: root_sum(g, ab.gamma),
        log_weights: log_w,
    })
}

/// Log importance weights and their self-normalized values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceWeights {
    pub log_weights: Vec<f64>,
    /// `log Ω`.
    pub log_total: f64,
    pub normalized: Vec<f64>,
}

/// Self-normalizes log weights in the log domain.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<ImportanceWeights> {
    if log_weights.is_empty() {
        return Err(UnmixError::Input("no importance samples".into()));
    }
    let log_total = log_sum_exp(log_weights);
    if !log_total.is_finite() {
        return Err(UnmixError::Numeric(
            "importance weights vanish even in the log domain".into(),
        ));
    }
    let top = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_weights.iter().map(|w| (w - top).exp()).collect();
    let sum: f64 = shifted.iter().sum();
    Ok(ImportanceWeights {
        log_weights: log_weights.to_vec(),
        log_total,
        normalized: shifted.iter().map(|w| w / sum).collect(),
    })
}

/// `ω_j = q(M | Z_j)` through the shared decoders, with one `H × P` code
/// matrix per importance sample.
pub fn importance_weights(model: &UnmixModel, m: &DMatrix<f64>, codes: &[DMatrix<f64>]) -> Result<ImportanceWeights> {
    let (l, p, h) = (model.arch.bands, model.arch.endmembers, model.arch.latent_dim);
    if m.shape() != (l, p) {
        return Err(UnmixError::dim("endmember matrix", l * p, m.len()));
    }
    let mut g = Graph::new(&model.store);
    let cols: Vec<Var> = m
        .column_iter()
        .map(|c| g.constant_vec(c.iter().copied().collect()))
        .collect();
    let mut log_w = Vec::with_capacity(codes.len());
    for z in codes {
        if z.shape() != (h, p) {
            return Err(UnmixError::dim("latent codes", h * p, z.len()));
        }
        let mut parts = Vec::with_capacity(p);
        for k in 0..p {
            let zk = g.constant_vec(z.column(k).iter().copied().collect());
            let dec = em_decode_node(&mut g, model, k, zk)?;
            parts.push(gaussian_logpdf_node(&mut g, cols[k], dec.mean, dec.log_scale)?);
        }
        let s = g.add_all(&parts)?;
        log_w.push(g.scalar_value(s));
    }
    normalize_log_weights(&log_w)
}

/// One-sample evidence bound estimate for an unlabeled pixel.
pub fn unsup_term<R: Rng + ?Sized>(model: &UnmixModel, y: &[f64], k_expect: usize, rng: &mut R) -> Result<f64> {
    let mut g = Graph::new(&model.store);
    let mut noise = RngNoise::new(rng);
    let n = unsup_node(&mut g, model, y, k_expect.max(1), &mut noise)?;
    Ok(g.scalar_value(n.elbo))
}

/// `(sup_iw, sup_posterior)` for one labeled triple.
pub fn sup_terms<R: Rng + ?Sized>(
    model: &UnmixModel,
    sample: &SupervisedSample,
    k_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let mut g = Graph::new(&model.store);
    let mut noise = RngNoise::new(rng);
    let n = sup_node(&mut g, model, sample, k_samples.max(1), &mut noise)?;
    Ok((g.scalar_value(n.iw), g.scalar_value(n.posterior)))
}

/// `τ Σ_n Σ_i √γ_{n,i}`.
pub fn sparsity_penalty(gammas: &[DirichletParams], tau: f64) -> f64 {
    tau * gammas
        .iter()
        .map(|g| g.concentration.iter().map(|v| v.sqrt()).sum::<f64>())
        .sum::<f64>()
}

/// `ς₁ ‖mixing net‖ + ς₂ ‖abundance encoder‖` with the per-layer
/// Frobenius-plus-Euclidean network norm.
pub fn network_norm_penalty(model: &UnmixModel, varsigma1: f64, varsigma2: f64) -> f64 {
    varsigma1 * model.generative.nlin_mixing.fnn_norm_value(&model.store)
        + varsigma2 * model.inference.nlin_encoder.fnn_norm_value(&model.store)
}

fn network_norm_node(g: &mut Graph<'_>, model: &UnmixModel, cfg: &TrainConfig) -> Result<Var> {
    let mix = model.generative.nlin_mixing.fnn_norm(g)?;
    let enc = model.inference.nlin_encoder.fnn_norm(g)?;
    let a = g.scale(mix, cfg.varsigma1);
    let b = g.scale(enc, cfg.varsigma2);
    g.add(a, b)
}

/// One batch element.
#[derive(Debug, Clone, Copy)]
pub enum BatchItem<'a> {
    Unlabeled(&'a [f64]),
    Labeled(&'a SupervisedSample),
}

/// Records one element's contribution to the objective on `g` and returns
/// it with its breakdown (reg left at zero).
pub fn item_objective_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    item: BatchItem<'_>,
    cfg: &TrainConfig,
    noise: &mut dyn NoiseSource,
) -> Result<(Var, LossBreakdown)> {
    let mut b = LossBreakdown::default();
    let obj = match item {
        BatchItem::Unlabeled(y) => {
            let n = unsup_node(g, model, y, cfg.k_expect, noise)?;
            b.unsup = g.scalar_value(n.elbo);
            b.sparsity = cfg.tau * g.scalar_value(n.root_sum);
            let pen = g.scale(n.root_sum, -cfg.tau);
            g.add(n.elbo, pen)?
        }
        BatchItem::Labeled(s) => {
            let n = sup_node(g, model, s, cfg.k_samples, noise)?;
            b.sup_iw = g.scalar_value(n.iw);
            b.sup_posterior = g.scalar_value(n.posterior);
            b.sparsity = cfg.tau * g.scalar_value(n.root_sum);
            let iw = g.scale(n.iw, cfg.lambda);
            let post = g.scale(n.posterior, cfg.lambda * (1.0 + cfg.beta));
            let pen = g.scale(n.root_sum, -cfg.tau);
            g.add_all(&[iw, post, pen])?
        }
    };
    b.total = g.scalar_value(obj);
    Ok((obj, b))
}

/// Objective of a whole batch (including the network-norm penalty, counted
/// once) recorded on a single graph. Used for gradient checks.
pub fn batch_objective_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    items: &[BatchItem<'_>],
    cfg: &TrainConfig,
    noise: &mut dyn NoiseSource,
) -> Result<(Var, LossBreakdown)> {
    let mut parts = Vec::with_capacity(items.len() + 1);
    let mut total = LossBreakdown::default();
    for &item in items {
        let (v, b) = item_objective_node(g, model, item, cfg, noise)?;
        parts.push(v);
        total.add(&b);
    }
    let reg = network_norm_node(g, model, cfg)?;
    total.reg = g.scalar_value(reg);
    parts.push(g.neg(reg));
    let obj = g.add_all(&parts)?;
    total.total = g.scalar_value(obj);
    Ok((obj, total))
}

/// Breakdown and gradient of the negated objective for one batch. Element
/// `i` draws its noise from its own seed `seeds[i]`; elements are processed
/// in fixed-size chunks whose gradients are summed in order.
pub fn loss_and_gradients(
    model: &UnmixModel,
    items: &[BatchItem<'_>],
    seeds: &[u64],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    if items.len() != seeds.len() {
        return Err(UnmixError::dim("batch seeds", items.len(), seeds.len()));
    }
    let work: Vec<(&[BatchItem<'_>], &[u64])> = items.chunks(CHUNK).zip(seeds.chunks(CHUNK)).collect();
    let partials: Vec<Result<(LossBreakdown, Gradients)>> = work
        .par_iter()
        .map(|(chunk, chunk_seeds)| {
            let mut grads = Gradients::zeros_like(&model.store);
            let mut acc = LossBreakdown::default();
            for (&item, &seed) in chunk.iter().zip(chunk_seeds.iter()) {
                let mut g = Graph::new(&model.store);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut noise = RngNoise::new(&mut rng);
                let (obj, b) = item_objective_node(&mut g, model, item, cfg, &mut noise)?;
                let loss = g.neg(obj);
                g.backward_into(loss, &mut grads)?;
                acc.add(&b);
            }
            Ok((acc, grads))
        })
        .collect();

    let mut g = Graph::new(&model.store);
    let reg = network_norm_node(&mut g, model, cfg)?;
    let mut grads = g.backward(reg)?;
    let mut total = LossBreakdown {
        reg: g.scalar_value(reg),
        ..Default::default()
    };
    total.total = -total.reg;
    for part in partials {
        let (b, gr) = part?;
        total.add(&b);
        grads.accumulate(&gr);
    }
    Ok((total, grads))
}

/// Breakdown of the objective on one batch, drawing per-element noise from
/// `rng`.
pub fn total_loss<R: Rng + ?Sized>(
    model: &UnmixModel,
    unlabeled: &[&[f64]],
    labeled: &[&SupervisedSample],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let items: Vec<BatchItem<'_>> = unlabeled
        .iter()
        .map(|y| BatchItem::Unlabeled(y))
        .chain(labeled.iter().map(|s| BatchItem::Labeled(s)))
        .collect();
    let seeds: Vec<u64> = items.iter().map(|_| rng.next_u64()).collect();
    Ok(loss_and_gradients(model, &items, &seeds, cfg)?.0)
}

/// Seed of batch element `index` at `(epoch, step)`.
pub fn item_seed(seed: u64, epoch: u32, step: usize, index: usize) -> u64 {
    derive_seed(seed, Stream::Training, &[epoch as u64, step as u64, index as u64])
}
