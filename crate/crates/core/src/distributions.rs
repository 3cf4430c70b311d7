//! Diagonal Gaussian and Dirichlet kernels, plain and recorded on a [`Graph`].
//!
//! Sampling goes through a [`NoiseSource`] so the same model code can run on
//! fresh random draws or on replayed noise for derivative checks.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::diffcore::{log_sum_exp, Graph, Var};
use crate::error::{Result, UnmixError};
use crate::special::{beta_ln_pdf, beta_inv_cdf, beta_cdf, dcdf_dalpha, ln_gamma};

/// Smallest admissible Dirichlet concentration.
pub const GAMMA_FLOOR: f64 = 1e-3;
/// Abundances are clipped into `[EPS_SIMPLEX, 1 - EPS_SIMPLEX]` before any
/// log-density evaluation.
pub const EPS_SIMPLEX: f64 = 1e-9;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const DIRICHLET_RETRIES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self> {
        if mean.len() != scale.len() {
            return Err(UnmixError::dim("gaussian scale", mean.len(), scale.len()));
        }
        if let Some(s) = scale.iter().find(|s| !(**s > 0.0)) {
            return Err(UnmixError::Domain(format!("Gaussian scale must be positive, got {s}")));
        }
        Ok(DiagGaussian { mean, scale })
    }

    pub fn isotropic(mean: Vec<f64>, scale: f64) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![scale; n])
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn gaussian_logpdf(x: &[f64], d: &DiagGaussian) -> Result<f64> {
    if x.len() != d.dim() {
        return Err(UnmixError::dim("gaussian_logpdf input", d.dim(), x.len()));
    }
    let mut lp = -0.5 * LN_2PI * x.len() as f64;
    for ((&xi, &mi), &si) in x.iter().zip(&d.mean).zip(&d.scale) {
        let r = (xi - mi) / si;
        lp -= 0.5 * r * r + si.ln();
    }
    Ok(lp)
}

/// `mean + scale ⊙ noise`.
pub fn gaussian_rsample(d: &DiagGaussian, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != d.dim() {
        return Err(UnmixError::dim("gaussian_rsample noise", d.dim(), noise.len()));
    }
    Ok(d.mean
        .iter()
        .zip(&d.scale)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Gaussian log-density on the graph. `log_scale` holds either one entry
/// (isotropic) or one per coordinate.
pub fn gaussian_logpdf_node(g: &mut Graph<'_>, x: Var, mean: Var, log_scale: Var) -> Result<Var> {
    let n = g.len(x);
    let diff = g.sub(x, mean)?;
    let ls_len = g.len(log_scale);
    let (z, log_det) = if ls_len == 1 {
        let neg = g.neg(log_scale);
        let inv = g.exp(neg);
        let z = g.scale_by(inv, diff)?;
        (z, g.scale(log_scale, n as f64))
    } else if ls_len == n {
        let neg = g.neg(log_scale);
        let inv = g.exp(neg);
        let z = g.mul(diff, inv)?;
        (z, g.sum(log_scale))
    } else {
        return Err(UnmixError::dim("gaussian log-scale", n, ls_len));
    };
    let quad = g.dot(z, z)?;
    let half_quad = g.scale(quad, -0.5);
    let lp = g.sub(half_quad, log_det)?;
    Ok(g.add_const(lp, -0.5 * LN_2PI * n as f64))
}

/// `mean + exp(log_scale) ⊙ noise` on the graph; `log_scale` may be isotropic.
pub fn gaussian_rsample_node(
    g: &mut Graph<'_>,
    mean: Var,
    log_scale: Var,
    noise: &[f64],
) -> Result<Var> {
    let n = g.len(mean);
    if noise.len() != n {
        return Err(UnmixError::dim("gaussian_rsample noise", n, noise.len()));
    }
    let scale = g.exp(log_scale);
    let eps = g.constant_vec(noise.to_vec());
    let spread = if g.len(log_scale) == 1 {
        g.scale_by(scale, eps)?
    } else {
        g.mul(scale, eps)?
    };
    g.add(mean, spread)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    pub concentration: Vec<f64>,
}

impl DirichletParams {
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        if concentration.is_empty() {
            return Err(UnmixError::Domain("Dirichlet needs at least one component".into()));
        }
        if let Some(c) = concentration.iter().find(|c| !(**c >= GAMMA_FLOOR) || !c.is_finite()) {
            return Err(UnmixError::Domain(format!(
                "Dirichlet concentration {c} below the floor {GAMMA_FLOOR}"
            )));
        }
        Ok(DirichletParams { concentration })
    }

    pub fn flat(p: usize) -> Self {
        DirichletParams {
            concentration: vec![1.0; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.concentration.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        let s: f64 = self.concentration.iter().sum();
        self.concentration.iter().map(|c| c / s).collect()
    }
}

/// Clips into `[EPS_SIMPLEX, 1 - EPS_SIMPLEX]` and renormalizes.
pub fn clip_to_simplex(a: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = a
        .iter()
        .map(|v| v.clamp(EPS_SIMPLEX, 1.0 - EPS_SIMPLEX))
        .collect();
    let s: f64 = clipped.iter().sum();
    clipped.iter().map(|v| v / s).collect()
}

/// Checks that `a` is a probability vector up to `tol`.
pub fn check_simplex(a: &[f64], tol: f64) -> Result<()> {
    let s: f64 = a.iter().sum();
    if a.iter().any(|v| !v.is_finite() || *v < -tol) || (s - 1.0).abs() > tol {
        return Err(UnmixError::Input(format!("abundance vector {a:?} is not on the simplex")));
    }
    Ok(())
}

pub fn dirichlet_logpdf(a: &[f64], p: &DirichletParams) -> Result<f64> {
    if a.len() != p.dim() {
        return Err(UnmixError::dim("dirichlet_logpdf input", p.dim(), a.len()));
    }
    let a = clip_to_simplex(a);
    let gamma = &p.concentration;
    let total: f64 = gamma.iter().sum();
    let mut lp = ln_gamma(total);
    for (&ai, &gi) in a.iter().zip(gamma) {
        lp += (gi - 1.0) * ai.ln() - ln_gamma(gi);
    }
    Ok(lp)
}

/// Dirichlet log-density on the graph, differentiable in both `a` and `gamma`.
/// The caller is responsible for `a` being strictly inside the simplex.
pub fn dirichlet_logpdf_node(g: &mut Graph<'_>, a: Var, gamma: Var) -> Result<Var> {
    let total = g.sum(gamma);
    let norm = g.ln_gamma(total);
    let lg = g.ln_gamma(gamma);
    let sum_lg = g.sum(lg);
    let ln_a = g.ln(a);
    let gm1 = g.add_const(gamma, -1.0);
    let kernel = g.dot(gm1, ln_a)?;
    let head = g.sub(norm, sum_lg)?;
    g.add(head, kernel)
}

/// `ln G` for `G ~ Gamma(shape, 1)`. Shapes below one use the boost
/// `G = G' · U^{1/shape}` with `G' ~ Gamma(shape + 1, 1)`, kept in the log
/// domain so tiny shapes do not underflow.
pub fn ln_gamma_sample<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0) || !shape.is_finite() {
        return Err(UnmixError::Domain(format!("Gamma shape must be positive, got {shape}")));
    }
    let boosted = shape < 1.0;
    let base = if boosted { shape + 1.0 } else { shape };
    let dist = Gamma::new(base, 1.0)
        .map_err(|e| UnmixError::Domain(format!("Gamma({base}): {e}")))?;
    let mut ln_g = dist.sample(rng).ln();
    if boosted {
        let u: f64 = rng.random::<f64>();
        // u in [0, 1); reject exact zero
        let u = if u > 0.0 { u } else { f64::MIN_POSITIVE };
        ln_g += u.ln() / shape;
    }
    Ok(ln_g)
}

pub fn dirichlet_sample<R: Rng + ?Sized>(p: &DirichletParams, rng: &mut R) -> Result<Vec<f64>> {
    let logs = p
        .concentration
        .iter()
        .map(|&c| ln_gamma_sample(c, rng))
        .collect::<Result<Vec<_>>>()?;
    let lse = log_sum_exp(&logs);
    let raw: Vec<f64> = logs.iter().map(|l| (l - lse).exp().max(1e-300)).collect();
    let s: f64 = raw.iter().sum();
    Ok(raw.iter().map(|v| v / s).collect())
}

/// Row-major `P × P` matrix with entry `(i, j) = ∂a_i/∂γ_j` for the implicit
/// reparametrization of a Dirichlet draw.
///
/// Column `j` is `-(∂F/∂α)/f · (δ_ij - a_i)/(1 - a_j)` with `F`, `f` the
/// Beta(γ_j, Σγ - γ_j) CDF and density at `a_j`. Columns whose ratio is not
/// representable are set to zero.
pub fn dirichlet_pathwise_jacobian(a: &[f64], p: &DirichletParams) -> Result<Vec<f64>> {
    let n = p.dim();
    if a.len() != n {
        return Err(UnmixError::dim("pathwise jacobian sample", n, a.len()));
    }
    let mut jac = vec![0.0; n * n];
    if n == 1 {
        return Ok(jac);
    }
    let total: f64 = p.concentration.iter().sum();
    for j in 0..n {
        let aj = a[j];
        if aj >= 1.0 {
            return Err(UnmixError::DegenerateSample(format!(
                "component {j} carries all the mass"
            )));
        }
        if !(aj > 0.0) {
            continue;
        }
        let alpha = p.concentration[j];
        let beta = total - alpha;
        let pdf = beta_ln_pdf(aj, alpha, beta).exp();
        let dfda = dcdf_dalpha(aj, alpha, beta)?;
        let ratio = -dfda / pdf;
        if !(pdf > 0.0) || !ratio.is_finite() {
            continue;
        }
        let inv = 1.0 / (1.0 - aj);
        for i in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            jac[i * n + j] = ratio * (delta - a[i]) * inv;
        }
    }
    Ok(jac)
}

/// Moves a Dirichlet draw from concentration `from` to `to` while holding its
/// underlying randomness fixed: each coordinate in turn is carried through
/// its Beta marginal quantile, the rest rescaled to stay on the simplex.
///
/// To first order in `to - from` this agrees with
/// [`dirichlet_pathwise_jacobian`], which makes it a finite-difference
/// reference for that Jacobian.
pub fn dirichlet_transport(a: &[f64], from: &[f64], to: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if from.len() != n || to.len() != n {
        return Err(UnmixError::dim("dirichlet_transport", n, from.len().min(to.len())));
    }
    let mut a = a.to_vec();
    let mut gamma = from.to_vec();
    if n == 1 {
        return Ok(a);
    }
    for j in 0..n {
        if to[j] == gamma[j] {
            continue;
        }
        let rest: f64 = gamma.iter().sum::<f64>() - gamma[j];
        let u = beta_cdf(a[j], gamma[j], rest)?;
        let new_aj = beta_inv_cdf(u, to[j], rest)?;
        let old_rest = 1.0 - a[j];
        let new_rest = 1.0 - new_aj;
        for (i, ai) in a.iter_mut().enumerate() {
            if i == j {
                *ai = new_aj;
            } else if old_rest > 0.0 {
                *ai *= new_rest / old_rest;
            }
        }
        gamma[j] = to[j];
    }
    Ok(a)
}

/// Supplier of base randomness for reparametrized sampling.
pub trait NoiseSource {
    /// `n` independent standard normal values.
    fn normal(&mut self, n: usize) -> Vec<f64>;
    /// A draw from Dirichlet(`gamma`).
    fn dirichlet(&mut self, gamma: &DirichletParams) -> Result<Vec<f64>>;
}

/// Fresh draws from an RNG.
pub struct RngNoise<'r, R: Rng + ?Sized> {
    rng: &'r mut R,
}

impl<'r, R: Rng + ?Sized> RngNoise<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        RngNoise { rng }
    }
}

impl<R: Rng + ?Sized> NoiseSource for RngNoise<'_, R> {
    fn normal(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    fn dirichlet(&mut self, gamma: &DirichletParams) -> Result<Vec<f64>> {
        dirichlet_sample(gamma, self.rng)
    }
}

#[derive(Debug, Clone)]
enum Draw {
    Normal(Vec<f64>),
    Dirichlet { gamma: Vec<f64>, a: Vec<f64> },
}

/// Records every draw of an inner source so it can be replayed.
pub struct RecordingNoise<N> {
    inner: N,
    draws: Vec<Draw>,
}

impl<N: NoiseSource> RecordingNoise<N> {
    pub fn new(inner: N) -> Self {
        RecordingNoise {
            inner,
            draws: Vec::new(),
        }
    }

    pub fn into_frozen(self) -> FrozenNoise {
        FrozenNoise {
            draws: self.draws,
            cursor: 0,
        }
    }
}

impl<N: NoiseSource> NoiseSource for RecordingNoise<N> {
    fn normal(&mut self, n: usize) -> Vec<f64> {
        let v = self.inner.normal(n);
        self.draws.push(Draw::Normal(v.clone()));
        v
    }

    fn dirichlet(&mut self, gamma: &DirichletParams) -> Result<Vec<f64>> {
        let a = self.inner.dirichlet(gamma)?;
        self.draws.push(Draw::Dirichlet {
            gamma: gamma.concentration.clone(),
            a: a.clone(),
        });
        Ok(a)
    }
}

/// Replays recorded base noise. Gaussian noises are returned verbatim;
/// Dirichlet draws are transported from the recorded concentration to the
/// requested one with [`dirichlet_transport`].
#[derive(Debug, Clone)]
pub struct FrozenNoise {
    draws: Vec<Draw>,
    cursor: usize,
}

impl FrozenNoise {
    pub fn rewind(&mut self) {
        self.cursor = 0;
    }

    fn next(&mut self) -> &Draw {
        let d = self
            .draws
            .get(self.cursor)
            .expect("frozen noise replayed past its recording");
        self.cursor += 1;
        d
    }
}

impl NoiseSource for FrozenNoise {
    fn normal(&mut self, n: usize) -> Vec<f64> {
        match self.next() {
            Draw::Normal(v) if v.len() == n => v.clone(),
            other => panic!("frozen noise out of sync: wanted {n} normals, found {other:?}"),
        }
    }

    fn dirichlet(&mut self, gamma: &DirichletParams) -> Result<Vec<f64>> {
        match self.next().clone() {
            Draw::Dirichlet { gamma: from, a } => {
                dirichlet_transport(&a, &from, &gamma.concentration)
            }
            other => panic!("frozen noise out of sync: wanted a Dirichlet draw, found {other:?}"),
        }
    }
}

/// Draws `a ~ Dirichlet(gamma)` on the graph with its pathwise derivative
/// attached. Draws with a component numerically equal to one are redrawn up
/// to five times; the result is clipped into the open simplex.
pub fn dirichlet_rsample_node(
    g: &mut Graph<'_>,
    gamma: Var,
    noise: &mut dyn NoiseSource,
) -> Result<(Var, DirichletParams)> {
    let params = DirichletParams::new(g.value(gamma).to_vec())?;
    let mut a = noise.dirichlet(&params)?;
    for _ in 0..DIRICHLET_RETRIES {
        if a.iter().all(|&v| v < 1.0) || a.len() == 1 {
            break;
        }
        a = noise.dirichlet(&params)?;
    }
    let a = clip_to_simplex(&a);
    let jac = dirichlet_pathwise_jacobian(&a, &params)?;
    let node = g.linear_map(gamma, a, jac)?;
    Ok((node, params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{ParamStore, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn standard_normal_at_mode() {
        let d = DiagGaussian::new(vec![0.0], vec![1.0]).unwrap();
        let lp = gaussian_logpdf(&[0.0], &d).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-14);
        let d = DiagGaussian::new(vec![0.3], vec![0.2]).unwrap();
        let lp = gaussian_logpdf(&[0.3], &d).unwrap();
        assert!((lp - (-0.5 * LN_2PI - 0.2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn gaussian_rejects_bad_scale() {
        assert!(matches!(DiagGaussian::new(vec![0.0], vec![0.0]), Err(UnmixError::Domain(_))));
        assert!(DiagGaussian::new(vec![0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rsample_at_zero_noise_is_the_mean() {
        let d = DiagGaussian::new(vec![1.0, -2.0], vec![0.5, 3.0]).unwrap();
        assert_eq!(gaussian_rsample(&d, &[0.0, 0.0]).unwrap(), vec![1.0, -2.0]);
        let tiny = DiagGaussian::isotropic(vec![1.0, -2.0], GAMMA_FLOOR).unwrap();
        let s = gaussian_rsample(&tiny, &[2.0, -1.5]).unwrap();
        assert!((s[0] - 1.0).abs() <= GAMMA_FLOOR * 2.0 + 1e-15);
    }

    #[test]
    fn graph_logpdf_matches_plain() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant_vec(vec![0.1, 0.4, -0.3]);
        let m = g.constant_vec(vec![0.0, 0.5, 0.2]);
        let ls = g.constant_vec(vec![0.1, -0.5, 0.3]);
        let iso = g.constant_scalar(-1.2);
        let lp = gaussian_logpdf_node(&mut g, x, m, ls).unwrap();
        let lp_iso = gaussian_logpdf_node(&mut g, x, m, iso).unwrap();
        let d = DiagGaussian::new(
            vec![0.0, 0.5, 0.2],
            vec![0.1f64.exp(), (-0.5f64).exp(), 0.3f64.exp()],
        )
        .unwrap();
        let di = DiagGaussian::isotropic(vec![0.0, 0.5, 0.2], (-1.2f64).exp()).unwrap();
        let want = gaussian_logpdf(&[0.1, 0.4, -0.3], &d).unwrap();
        let want_iso = gaussian_logpdf(&[0.1, 0.4, -0.3], &di).unwrap();
        assert!((g.scalar_value(lp) - want).abs() < 1e-12);
        assert!((g.scalar_value(lp_iso) - want_iso).abs() < 1e-12);
    }

    #[test]
    fn flat_dirichlet_is_constant() {
        let p = DirichletParams::flat(3);
        for a in [[0.2, 0.3, 0.5], [0.9, 0.05, 0.05], [1.0 / 3.0; 3]] {
            let lp = dirichlet_logpdf(&a, &p).unwrap();
            assert!((lp - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn two_component_dirichlet_is_beta() {
        let p = DirichletParams::new(vec![2.0, 5.0]).unwrap();
        let lp = dirichlet_logpdf(&[0.3, 0.7], &p).unwrap();
        // Beta(2, 5) density: 30 x (1-x)^4
        let want = (30.0 * 0.3 * 0.7f64.powi(4)).ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn two_component_density_integrates_to_one() {
        let p = DirichletParams::new(vec![2.5, 3.5]).unwrap();
        let n = 10_000;
        let h = 1.0 / n as f64;
        let mut area = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let f = if i == 0 || i == n {
                0.0
            } else {
                dirichlet_logpdf(&[x, 1.0 - x], &p).unwrap().exp()
            };
            area += if i == 0 || i == n { 0.5 * f } else { f };
        }
        assert!((area * h - 1.0).abs() < 1e-4);
    }

    #[test]
    fn concentration_floor_enforced() {
        assert!(matches!(DirichletParams::new(vec![1.0, 1e-4]), Err(UnmixError::Domain(_))));
        assert!(DirichletParams::new(vec![1.0, GAMMA_FLOOR]).is_ok());
    }

    #[test]
    fn tiny_concentrations_sample_on_the_simplex() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DirichletParams::new(vec![GAMMA_FLOOR; 4]).unwrap();
        for _ in 0..200 {
            let a = dirichlet_sample(&p, &mut rng).unwrap();
            assert!(a.iter().all(|&v| v > 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_columns_sum_to_zero() {
        let p = DirichletParams::new(vec![0.7, 2.0, 5.5]).unwrap();
        let a = [0.15, 0.25, 0.6];
        let jac = dirichlet_pathwise_jacobian(&a, &p).unwrap();
        for j in 0..3 {
            let s: f64 = (0..3).map(|i| jac[i * 3 + j]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_rejects_a_vertex() {
        let p = DirichletParams::new(vec![1.0, 1.0]).unwrap();
        let r = dirichlet_pathwise_jacobian(&[1.0, 0.0], &p);
        assert!(matches!(r, Err(UnmixError::DegenerateSample(_))));
    }

    #[test]
    fn transport_matches_jacobian_to_first_order() {
        let gamma = vec![1.3, 0.8, 3.0, 2.2];
        let p = DirichletParams::new(gamma.clone()).unwrap();
        let a = [0.2, 0.1, 0.45, 0.25];
        let jac = dirichlet_pathwise_jacobian(&a, &p).unwrap();
        let h = 1e-5;
        for j in 0..4 {
            let mut up = gamma.clone();
            let mut dn = gamma.clone();
            up[j] += h;
            dn[j] -= h;
            let au = dirichlet_transport(&a, &gamma, &up).unwrap();
            let ad = dirichlet_transport(&a, &gamma, &dn).unwrap();
            for i in 0..4 {
                let fd = (au[i] - ad[i]) / (2.0 * h);
                let an = jac[i * 4 + j];
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-3), "{i},{j}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn rsample_node_backpropagates_the_jacobian() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let gamma = g.constant(&Tensor::vector(vec![2.0, 3.0, 1.5]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut noise = RngNoise::new(&mut rng);
        let (a, params) = dirichlet_rsample_node(&mut g, gamma, &mut noise).unwrap();
        assert_eq!(params.concentration, vec![2.0, 3.0, 1.5]);
        assert!((g.value(a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
