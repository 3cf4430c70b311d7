//! The variational posterior: latent-code encoders, the shared endmember
//! decoder and the two-stream Dirichlet abundance encoder.

use nalgebra::DMatrix;
use rand::Rng;

use crate::diffcore::{Graph, Var};
use crate::distributions::{
    dirichlet_rsample_node, gaussian_rsample_node, DiagGaussian, DirichletParams, NoiseSource,
    RngNoise, GAMMA_FLOOR,
};
use crate::error::{Result, UnmixError};
use crate::generative::{em_decode_node, GaussianNodes};
use crate::linalg::{pseudo_inverse, to_row_major};
use crate::model::UnmixModel;

/// Mean and per-coordinate log-scale of `q(z_k | y)`.
pub fn encode_z_node(g: &mut Graph<'_>, model: &UnmixModel, k: usize, y: Var) -> Result<GaussianNodes> {
    let enc = model
        .inference
        .z_encoders
        .get(k)
        .ok_or_else(|| UnmixError::dim("endmember index", model.arch.endmembers, k))?;
    let shared = enc.trunk.forward(g, y)?;
    let mean = enc.mean_head.forward(g, shared)?;
    let log_scale = enc.scale_head.forward(g, shared)?;
    Ok(GaussianNodes { mean, log_scale })
}

/// One Gaussian over the latent code of each endmember.
pub fn encode_z(model: &UnmixModel, y: &[f64]) -> Result<Vec<DiagGaussian>> {
    check_obs(model, y)?;
    let mut g = Graph::new(&model.store);
    let yv = g.constant_vec(y.to_vec());
    (0..model.arch.endmembers)
        .map(|k| {
            let n = encode_z_node(&mut g, model, k, yv)?;
            let scale = g.value(n.log_scale).iter().map(|v| v.exp()).collect();
            DiagGaussian::new(g.value(n.mean).to_vec(), scale)
        })
        .collect()
}

/// Unrolled projected-gradient stream. Starts from `M⁺y` (the pseudoinverse
/// is treated as data, so no derivative flows through it), then applies one
/// gradient step, shrinkage and nonnegative projection per learnable step
/// size, and finally scales by the spread parameter.
pub fn lista_node(g: &mut Graph<'_>, model: &UnmixModel, y: Var, columns: &[Var]) -> Result<Var> {
    let (l, p) = (model.arch.bands, model.arch.endmembers);
    let m = g.stack_columns(columns)?;
    let m_value = DMatrix::from_row_slice(l, p, g.value(m));
    let pinv = pseudo_inverse(&m_value);
    let pinv = g.detached(crate::diffcore::Tensor::matrix(p, l, to_row_major(&pinv))?);
    let mut h = g.matvec(pinv, y)?;

    let lista = &model.inference.lista;
    let log_steps = g.param(lista.log_steps);
    let log_sparse = g.param(lista.log_sparse);
    let sparse = g.exp(log_sparse);
    for step in 0..model.arch.lista_steps() {
        let log_eta = g.slice(log_steps, step, 1)?;
        let eta = g.exp(log_eta);
        let fitted = g.matvec(m, h)?;
        let resid = g.sub(fitted, y)?;
        let grad = g.mat_t_vec(m, resid)?;
        let move_by = g.scale_by(eta, grad)?;
        let half = g.sub(h, move_by)?;
        let thr = g.mul(sparse, eta)?;
        let thr = g.broadcast(thr, p)?;
        let shrunk = g.sub(half, thr)?;
        h = g.relu(shrunk);
    }
    let log_unc = g.param(lista.log_unc);
    let unc = g.exp(log_unc);
    g.scale_by(unc, h)
}

/// The two abundance streams and their combination.
#[derive(Debug, Clone, Copy)]
pub struct AbundanceNodes {
    pub gamma: Var,
    pub linear: Var,
    pub nonlinear: Var,
}

/// `γ = relu(lista(y, M) + f(y)) + γ_floor`; the nonlinear stream sees `y` only.
pub fn abundance_concentration_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    y: Var,
    columns: &[Var],
) -> Result<AbundanceNodes> {
    let linear = lista_node(g, model, y, columns)?;
    let nonlinear = model.inference.nlin_encoder.forward(g, y)?;
    let both = g.add(linear, nonlinear)?;
    let pos = g.relu(both);
    let gamma = g.add_const(pos, GAMMA_FLOOR);
    Ok(AbundanceNodes {
        gamma,
        linear,
        nonlinear,
    })
}

/// Values of both abundance streams and the resulting concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceStreams {
    pub linear: Vec<f64>,
    pub nonlinear: Vec<f64>,
    pub gamma: DirichletParams,
}

pub fn abundance_streams(model: &UnmixModel, y: &[f64], m: &DMatrix<f64>) -> Result<AbundanceStreams> {
    check_obs(model, y)?;
    check_matrix(model, m)?;
    let mut g = Graph::new(&model.store);
    let yv = g.constant_vec(y.to_vec());
    let cols = column_constants(&mut g, m);
    let n = abundance_concentration_node(&mut g, model, yv, &cols)?;
    Ok(AbundanceStreams {
        linear: g.value(n.linear).to_vec(),
        nonlinear: g.value(n.nonlinear).to_vec(),
        gamma: DirichletParams::new(g.value(n.gamma).to_vec())?,
    })
}

pub fn lista_concentration(model: &UnmixModel, y: &[f64], m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_obs(model, y)?;
    check_matrix(model, m)?;
    let mut g = Graph::new(&model.store);
    let yv = g.constant_vec(y.to_vec());
    let cols = column_constants(&mut g, m);
    let out = lista_node(&mut g, model, yv, &cols)?;
    Ok(g.value(out).to_vec())
}

pub fn abundance_concentration(model: &UnmixModel, y: &[f64], m: &DMatrix<f64>) -> Result<DirichletParams> {
    Ok(abundance_streams(model, y, m)?.gamma)
}

/// Nodes of one ancestral posterior draw `Z → M → a`.
#[derive(Debug, Clone)]
pub struct SampleNodes {
    pub z_dists: Vec<GaussianNodes>,
    pub z: Vec<Var>,
    pub m_dists: Vec<GaussianNodes>,
    pub m: Vec<Var>,
    pub abundance: AbundanceNodes,
    pub a: Var,
    pub gamma: DirichletParams,
}

/// Draws `Z ~ q(Z|y)`, `M ~ q(M|Z)` through the shared decoders, then
/// `a ~ Dir(γ(y, M))`, all reparametrized.
pub fn posterior_sample_node(
    g: &mut Graph<'_>,
    model: &UnmixModel,
    y: Var,
    noise: &mut dyn NoiseSource,
) -> Result<SampleNodes> {
    let p = model.arch.endmembers;
    let mut z_dists = Vec::with_capacity(p);
    let mut z = Vec::with_capacity(p);
    let mut m_dists = Vec::with_capacity(p);
    let mut m = Vec::with_capacity(p);
    for k in 0..p {
        let zd = encode_z_node(g, model, k, y)?;
        let eps = noise.normal(model.arch.latent_dim);
        let zk = gaussian_rsample_node(g, zd.mean, zd.log_scale, &eps)?;
        let md = em_decode_node(g, model, k, zk)?;
        let eps = noise.normal(model.arch.bands);
        let mk = gaussian_rsample_node(g, md.mean, md.log_scale, &eps)?;
        z_dists.push(zd);
        z.push(zk);
        m_dists.push(md);
        m.push(mk);
    }
    let abundance = abundance_concentration_node(g, model, y, &m)?;
    let (a, gamma) = dirichlet_rsample_node(g, abundance.gamma, noise)?;
    Ok(SampleNodes {
        z_dists,
        z,
        m_dists,
        m,
        abundance,
        a,
        gamma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSample {
    pub a: Vec<f64>,
    /// `L × P`.
    pub m: DMatrix<f64>,
    /// `H × P`.
    pub z: DMatrix<f64>,
    pub gamma: DirichletParams,
}

pub fn posterior_sample<R: Rng + ?Sized>(model: &UnmixModel, y: &[f64], rng: &mut R) -> Result<PosteriorSample> {
    check_obs(model, y)?;
    let mut g = Graph::new(&model.store);
    let yv = g.constant_vec(y.to_vec());
    let mut noise = RngNoise::new(rng);
    let s = posterior_sample_node(&mut g, model, yv, &mut noise)?;
    let (l, h, p) = (model.arch.bands, model.arch.latent_dim, model.arch.endmembers);
    let m = DMatrix::from_fn(l, p, |i, k| g.value(s.m[k])[i]);
    let z = DMatrix::from_fn(h, p, |i, k| g.value(s.z[k])[i]);
    Ok(PosteriorSample {
        a: g.value(s.a).to_vec(),
        m,
        z,
        gamma: s.gamma,
    })
}

/// Deterministic summary of the posterior for one pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEstimate {
    /// Dirichlet mean at the decoded endmembers.
    pub a: Vec<f64>,
    /// Decoder means at the latent-code means, `L × P`.
    pub m: DMatrix<f64>,
    pub streams: AbundanceStreams,
}

pub fn point_estimate(model: &UnmixModel, y: &[f64]) -> Result<PointEstimate> {
    check_obs(model, y)?;
    let mut g = Graph::new(&model.store);
    let yv = g.constant_vec(y.to_vec());
    let mut cols = Vec::with_capacity(model.arch.endmembers);
    for k in 0..model.arch.endmembers {
        let zd = encode_z_node(&mut g, model, k, yv)?;
        let md = em_decode_node(&mut g, model, k, zd.mean)?;
        cols.push(md.mean);
    }
    let n = abundance_concentration_node(&mut g, model, yv, &cols)?;
    let (l, p) = (model.arch.bands, model.arch.endmembers);
    let m = DMatrix::from_fn(l, p, |i, k| g.value(cols[k])[i]);
    let gamma = DirichletParams::new(g.value(n.gamma).to_vec())?;
    Ok(PointEstimate {
        a: gamma.mean(),
        m,
        streams: AbundanceStreams {
            linear: g.value(n.linear).to_vec(),
            nonlinear: g.value(n.nonlinear).to_vec(),
            gamma,
        },
    })
}

/// `(a_hat, M_hat)`.
pub fn point_estimates(model: &UnmixModel, y: &[f64]) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let e = point_estimate(model, y)?;
    Ok((e.a, e.m))
}

fn check_obs(model: &UnmixModel, y: &[f64]) -> Result<()> {
    if y.len() != model.arch.bands {
        return Err(UnmixError::dim("observation", model.arch.bands, y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::Input("observation has non-finite entries".into()));
    }
    Ok(())
}

fn check_matrix(model: &UnmixModel, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != model.arch.bands || m.ncols() != model.arch.endmembers {
        return Err(UnmixError::dim(
            "endmember matrix",
            model.arch.bands * model.arch.endmembers,
            m.nrows() * m.ncols(),
        ));
    }
    Ok(())
}

fn column_constants(g: &mut Graph<'_>, m: &DMatrix<f64>) -> Vec<Var> {
    m.column_iter()
        .map(|c| g.constant_vec(c.iter().copied().collect()))
        .collect()
}
