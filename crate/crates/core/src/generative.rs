//! The data-generating model: endmember decoders, priors and the linear plus
//! nonlinear mixing likelihood.

use nalgebra::DMatrix;

use crate::diffcore::{Graph, ParamStore, Var};
use crate::distributions::{
    dirichlet_logpdf, gaussian_logpdf, gaussian_logpdf_node, DiagGaussian, DirichletParams,
};
use crate::error::{Result, UnmixError};
use crate::model::UnmixModel;
use crate::special::ln_gamma;

/// Mean and log-scale nodes of a diagonal Gaussian recorded on a graph.
#[derive(Debug, Clone, Copy)]
pub struct GaussianNodes {
    pub mean: Var,
    /// One entry (isotropic) or one per coordinate.
    pub log_scale: Var,
}

/// `ln((P-1)!)`, the flat Dirichlet log-density.
pub fn flat_dirichlet_log_density(p: usize) -> f64 {
    ln_gamma(p as f64)
}

/// Endmember decoder `k`: sigmoid mean over the bands and an isotropic scale.
pub fn em_decode_node(g: &mut Graph<'_>, model: &UnmixModel, k: usize, z: Var) -> Result<GaussianNodes> {
    check_endmember(model, k)?;
    let mean = model.generative.em_decoders[k].forward(g, z)?;
    let log_scale = g.param(model.generative.em_log_scales[k]);
    Ok(GaussianNodes { mean, log_scale })
}

/// `M a + f(vec(M), a)` where `vec(M)` stacks the columns.
pub fn mixing_mean_node(g: &mut Graph<'_>, model: &UnmixModel, a: Var, columns: &[Var]) -> Result<Var> {
    let (linear, nonlinear) = mixing_parts_node(g, model, a, columns)?;
    g.add(linear, nonlinear)
}

/// Mixing mean split into its linear and nonlinear parts.
pub fn mixing_parts_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    a: Var,
    columns: &[Var],
) -> Result<(Var, Var)> {
    check_columns(g, model, columns)?;
    let m = g.stack_columns(columns)?;
    let linear = g.matvec(m, a)?;
    let mut input = columns.to_vec();
    input.push(a);
    let input = g.concat(&input);
    let nonlinear = model.generative.nlin_mixing.forward(g, input)?;
    Ok((linear, nonlinear))
}

pub fn log_likelihood_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    y: Var,
    a: Var,
    columns: &[Var],
) -> Result<Var> {
    let mean = mixing_mean_node(g, model, a, columns)?;
    let log_scale = g.param(model.generative.obs_log_scale);
    gaussian_logpdf_node(g, y, mean, log_scale)
}

/// Standard normal log-density of a latent code.
pub fn latent_prior_node(g: &mut Graph<'_>, z: Var) -> Result<Var> {
    let n = g.len(z);
    let sq = g.dot(z, z)?;
    let half = g.scale(sq, -0.5);
    Ok(g.add_const(half, -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

fn check_endmember(model: &UnmixModel, k: usize) -> Result<()> {
    if k >= model.arch.endmembers {
        return Err(UnmixError::dim("endmember index", model.arch.endmembers, k));
    }
    Ok(())
}

fn check_columns(g: &Graph<'_>, model: &UnmixModel, columns: &[Var]) -> Result<()> {
    if columns.len() != model.arch.endmembers {
        return Err(UnmixError::dim("endmember columns", model.arch.endmembers, columns.len()));
    }
    for &c in columns {
        if g.len(c) != model.arch.bands {
            return Err(UnmixError::dim("endmember column length", model.arch.bands, g.len(c)));
        }
    }
    Ok(())
}

fn check_matrix(model: &UnmixModel, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != model.arch.bands {
        return Err(UnmixError::dim("endmember matrix rows", model.arch.bands, m.nrows()));
    }
    if m.ncols() != model.arch.endmembers {
        return Err(UnmixError::dim("endmember matrix columns", model.arch.endmembers, m.ncols()));
    }
    Ok(())
}

fn column_constants(g: &mut Graph<'_>, m: &DMatrix<f64>) -> Vec<Var> {
    m.column_iter()
        .map(|c| g.constant_vec(c.iter().copied().collect()))
        .collect()
}

fn store(model: &UnmixModel) -> &ParamStore {
    &model.store
}

/// Distribution of endmember `k` given its latent code.
pub fn em_decode(model: &UnmixModel, z: &[f64], k: usize) -> Result<DiagGaussian> {
    let mut g = Graph::new(store(model));
    let zv = g.constant_vec(z.to_vec());
    let nodes = em_decode_node(&mut g, model, k, zv)?;
    DiagGaussian::isotropic(g.value(nodes.mean).to_vec(), g.scalar_value(nodes.log_scale).exp())
}

pub fn mixing_mean(model: &UnmixModel, a: &[f64], m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_matrix(model, m)?;
    let mut g = Graph::new(store(model));
    let av = g.constant_vec(a.to_vec());
    let cols = column_constants(&mut g, m);
    let out = mixing_mean_node(&mut g, model, av, &cols)?;
    Ok(g.value(out).to_vec())
}

pub fn log_likelihood(model: &UnmixModel, y: &[f64], a: &[f64], m: &DMatrix<f64>) -> Result<f64> {
    let mean = mixing_mean(model, a, m)?;
    if y.len() != mean.len() {
        return Err(UnmixError::dim("observation", mean.len(), y.len()));
    }
    gaussian_logpdf(y, &DiagGaussian::isotropic(mean, model.obs_scale())?)
}

/// `log p(y|a,M) + log Dir(a; 1) + Σ_k log p(m_k|z_k) + Σ_k log N(z_k; 0, I)`,
/// with `z` holding one latent code per column.
pub fn log_joint(
    model: &UnmixModel,
    y: &[f64],
    a: &[f64],
    m: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<f64> {
    check_matrix(model, m)?;
    if z.nrows() != model.arch.latent_dim || z.ncols() != model.arch.endmembers {
        return Err(UnmixError::dim("latent code matrix", model.arch.latent_dim, z.nrows()));
    }
    let mut total = log_likelihood(model, y, a, m)?;
    total += dirichlet_logpdf(a, &DirichletParams::flat(model.arch.endmembers))?;
    for k in 0..model.arch.endmembers {
        let zk: Vec<f64> = z.column(k).iter().copied().collect();
        let mk: Vec<f64> = m.column(k).iter().copied().collect();
        total += gaussian_logpdf(&mk, &em_decode(model, &zk, k)?)?;
        let h = zk.len();
        total += gaussian_logpdf(&zk, &DiagGaussian::isotropic(vec![0.0; h], 1.0)?)?;
    }
    Ok(total)
}
