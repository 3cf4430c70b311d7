//! Network layout and parameter initialization shared by the generative and
//! inference sides.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, MlpParams, ParamId, ParamStore, Tensor};
use crate::error::{Result, UnmixError};
use crate::linalg::spectral_norm;

pub const DEFAULT_LATENT_DIM: usize = 2;
pub const DEFAULT_LISTA_LAYERS: usize = 11;

const INIT_OBS_SCALE: f64 = 0.01;
const INIT_EM_SCALE: f64 = 0.005;
const INIT_SPARSE: f64 = 0.01;
const INIT_UNC: f64 = 10.0;
const DECODER_OUT_GAIN: f64 = 0.1;
const DECODER_CLAMP: f64 = 0.01;

/// Problem and network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Spectral bands `L`.
    pub bands: usize,
    /// Endmembers `P`.
    pub endmembers: usize,
    /// Latent code size `H` per endmember.
    pub latent_dim: usize,
    /// Depth of the unrolled abundance network, including its input and
    /// output scaling layers.
    pub lista_layers: usize,
}

fn ceil_div(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn round_div(a: usize, b: usize) -> usize {
    ((a as f64 / b as f64).round() as usize).max(1)
}

impl Architecture {
    pub fn new(bands: usize, endmembers: usize) -> Self {
        Architecture {
            bands,
            endmembers,
            latent_dim: DEFAULT_LATENT_DIM,
            lista_layers: DEFAULT_LISTA_LAYERS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.endmembers == 0 || self.latent_dim == 0 {
            return Err(UnmixError::Input(format!("empty architecture {self:?}")));
        }
        if self.lista_layers < 2 {
            return Err(UnmixError::Input(format!(
                "the abundance network needs at least 2 layers, got {}",
                self.lista_layers
            )));
        }
        Ok(())
    }

    /// Number of learnable gradient/shrinkage steps.
    pub fn lista_steps(&self) -> usize {
        self.lista_layers - 1
    }

    pub fn decoder_widths(&self) -> Vec<usize> {
        let (l, h) = (self.bands, self.latent_dim);
        vec![
            h,
            ceil_div(l, 10).max(h + 1),
            ceil_div(l, 4).max(h + 2) + 3,
            ceil_div(12 * l, 10) + 5,
            l,
        ]
    }

    pub fn z_trunk_widths(&self) -> Vec<usize> {
        vec![self.bands, 5 * self.latent_dim, 2 * self.latent_dim]
    }

    pub fn z_mean_widths(&self) -> Vec<usize> {
        vec![2 * self.latent_dim, self.latent_dim]
    }

    pub fn z_scale_widths(&self) -> Vec<usize> {
        let h = self.latent_dim;
        vec![2 * h, 2 * h, 2 * h, h]
    }

    pub fn mixing_widths(&self) -> Vec<usize> {
        let (l, p) = (self.bands, self.endmembers);
        vec![p * (l + 1), p * l, l, l, l]
    }

    pub fn nlin_encoder_widths(&self) -> Vec<usize> {
        let (l, p) = (self.bands, self.endmembers);
        vec![l, 2 * l, round_div(l, 2), round_div(l, 4), 4 * p, p]
    }

    /// Total learnable scalars, or `None` if the count overflows.
    pub fn num_scalars(&self) -> Option<usize> {
        fn mlp(w: &[usize]) -> Option<usize> {
            w.windows(2).try_fold(0usize, |acc, p| {
                acc.checked_add(p[0].checked_mul(p[1])?.checked_add(p[1])?)
            })
        }
        const LIMIT: usize = 1 << 20;
        if self.bands > LIMIT || self.endmembers > LIMIT || self.latent_dim > LIMIT || self.lista_layers > LIMIT {
            return None;
        }
        let p = self.endmembers;
        let per_em = mlp(&self.decoder_widths())?
            .checked_add(1)?
            .checked_add(mlp(&self.z_trunk_widths())?)?
            .checked_add(mlp(&self.z_mean_widths())?)?
            .checked_add(mlp(&self.z_scale_widths())?)?;
        per_em
            .checked_mul(p)?
            .checked_add(mlp(&self.mixing_widths())?)?
            .checked_add(1)?
            .checked_add(self.lista_steps().checked_add(2)?)?
            .checked_add(mlp(&self.nlin_encoder_widths())?)
    }
}

fn hidden_then(n_layers: usize, last: Activation) -> Vec<Activation> {
    let mut acts = vec![Activation::Relu; n_layers - 1];
    acts.push(last);
    acts
}

/// Encoder of one latent code: a shared trunk feeding a mean head and a
/// log-scale head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZEncoder {
    pub trunk: MlpParams,
    pub mean_head: MlpParams,
    pub scale_head: MlpParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerativeParams {
    pub em_decoders: Vec<MlpParams>,
    pub em_log_scales: Vec<ParamId>,
    pub nlin_mixing: MlpParams,
    pub obs_log_scale: ParamId,
}

/// Log-parametrized scalars of the unrolled abundance network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ListaParams {
    pub log_steps: ParamId,
    pub log_sparse: ParamId,
    pub log_unc: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceParams {
    pub z_encoders: Vec<ZEncoder>,
    pub lista: ListaParams,
    pub nlin_encoder: MlpParams,
}

/// All learnable state of the unmixing model.
#[derive(Debug, Clone)]
pub struct UnmixModel {
    pub arch: Architecture,
    pub store: ParamStore,
    pub generative: GenerativeParams,
    pub inference: InferenceParams,
}

impl UnmixModel {
    /// Builds a freshly initialized model. `reference` (`L × P`) seeds the
    /// endmember decoders' output biases and the step sizes of the abundance
    /// network.
    pub fn new<R: Rng + ?Sized>(
        arch: Architecture,
        reference: &DMatrix<f64>,
        rng: &mut R,
    ) -> Result<Self> {
        arch.validate()?;
        if reference.nrows() != arch.bands || reference.ncols() != arch.endmembers {
            return Err(UnmixError::Input(format!(
                "reference endmembers are {}×{}, expected {}×{}",
                reference.nrows(),
                reference.ncols(),
                arch.bands,
                arch.endmembers
            )));
        }
        if reference.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::Input("reference endmembers contain non-finite values".into()));
        }
        let mut store = ParamStore::new();
        let p = arch.endmembers;

        let dec_w = arch.decoder_widths();
        let dec_a = hidden_then(dec_w.len() - 1, Activation::Sigmoid);
        let mut em_decoders = Vec::with_capacity(p);
        let mut em_log_scales = Vec::with_capacity(p);
        for k in 0..p {
            let dec = MlpParams::register(&mut store, &format!("dec{k}"), &dec_w, &dec_a, rng)?;
            let last = dec.num_layers() - 1;
            for w in store.get_mut(dec.weights[last]).data_mut() {
                *w *= DECODER_OUT_GAIN;
            }
            let bias: Vec<f64> = reference
                .column(k)
                .iter()
                .map(|&v| {
                    let v = v.clamp(DECODER_CLAMP, 1.0 - DECODER_CLAMP);
                    (v / (1.0 - v)).ln()
                })
                .collect();
            store.set_data(dec.biases[last], &bias)?;
            em_decoders.push(dec);
            em_log_scales.push(store.register(
                format!("dec{k}.log_scale"),
                Tensor::vector(vec![INIT_EM_SCALE.ln()]),
            ));
        }
        let mix_w = arch.mixing_widths();
        let nlin_mixing = MlpParams::register(
            &mut store,
            "mix",
            &mix_w,
            &hidden_then(mix_w.len() - 1, Activation::Linear),
            rng,
        )?;
        let obs_log_scale =
            store.register("obs.log_scale", Tensor::vector(vec![INIT_OBS_SCALE.ln()]));

        let mut z_encoders = Vec::with_capacity(p);
        for k in 0..p {
            let trunk = MlpParams::register(
                &mut store,
                &format!("zenc{k}.trunk"),
                &arch.z_trunk_widths(),
                &[Activation::Relu, Activation::Relu],
                rng,
            )?;
            let mean_head = MlpParams::register(
                &mut store,
                &format!("zenc{k}.mean"),
                &arch.z_mean_widths(),
                &[Activation::Linear],
                rng,
            )?;
            let scale_head = MlpParams::register(
                &mut store,
                &format!("zenc{k}.scale"),
                &arch.z_scale_widths(),
                &hidden_then(3, Activation::Linear),
                rng,
            )?;
            z_encoders.push(ZEncoder {
                trunk,
                mean_head,
                scale_head,
            });
        }

        let gram = reference.transpose() * reference;
        let smax = spectral_norm(&gram);
        if !(smax > 0.0) {
            return Err(UnmixError::Input("reference endmembers are all zero".into()));
        }
        let lista = ListaParams {
            log_steps: store.register(
                "lista.log_steps",
                Tensor::vector(vec![-smax.ln(); arch.lista_steps()]),
            ),
            log_sparse: store.register("lista.log_sparse", Tensor::vector(vec![INIT_SPARSE.ln()])),
            log_unc: store.register("lista.log_unc", Tensor::vector(vec![INIT_UNC.ln()])),
        };
        let enc_w = arch.nlin_encoder_widths();
        let nlin_encoder = MlpParams::register(
            &mut store,
            "nlin_enc",
            &enc_w,
            &hidden_then(enc_w.len() - 1, Activation::Linear),
            rng,
        )?;

        Ok(UnmixModel {
            arch,
            store,
            generative: GenerativeParams {
                em_decoders,
                em_log_scales,
                nlin_mixing,
                obs_log_scale,
            },
            inference: InferenceParams {
                z_encoders,
                lista,
                nlin_encoder,
            },
        })
    }

    pub fn obs_scale(&self) -> f64 {
        self.store.get(self.generative.obs_log_scale).item().exp()
    }

    pub fn em_scale(&self, k: usize) -> f64 {
        self.store.get(self.generative.em_log_scales[k]).item().exp()
    }

    pub fn lista_steps(&self) -> Vec<f64> {
        self.store
            .get(self.inference.lista.log_steps)
            .data()
            .iter()
            .map(|v| v.exp())
            .collect()
    }

    pub fn lista_sparse(&self) -> f64 {
        self.store.get(self.inference.lista.log_sparse).item().exp()
    }

    pub fn lista_unc(&self) -> f64 {
        self.store.get(self.inference.lista.log_unc).item().exp()
    }

    /// Overwrites one of the log-parametrized scalars with `ln(value)`.
    pub fn set_positive(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        if values.iter().any(|v| !(*v > 0.0)) {
            return Err(UnmixError::Domain(format!("expected positive values, got {values:?}")));
        }
        let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
        self.store.set_data(id, &logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_count_matches_registration() {
        let arch = Architecture::new(20, 3);
        let reference = DMatrix::from_element(20, 3, 0.5);
        let model = UnmixModel::new(arch, &reference, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(arch.num_scalars(), Some(model.store.num_scalars()));
        let huge = Architecture::new(usize::MAX / 4, 8);
        assert_eq!(huge.num_scalars(), None);
    }

    #[test]
    fn layer_widths_at_desk_scale() {
        let a = Architecture::new(64, 3);
        assert_eq!(a.decoder_widths(), vec![2, 7, 19, 82, 64]);
        assert_eq!(a.mixing_widths(), vec![195, 192, 64, 64, 64]);
        assert_eq!(a.nlin_encoder_widths(), vec![64, 128, 32, 16, 12, 3]);
        assert_eq!(a.z_trunk_widths(), vec![64, 10, 4]);
        assert_eq!(a.z_scale_widths(), vec![4, 4, 4, 2]);
        assert_eq!(a.lista_steps(), 10);
    }

    #[test]
    fn decoder_widths_at_full_scale() {
        let a = Architecture::new(224, 3);
        assert_eq!(a.decoder_widths(), vec![2, 23, 59, 274, 224]);
    }

    #[test]
    fn initial_scalars() {
        let reference = DMatrix::from_fn(16, 2, |i, k| 0.2 + 0.03 * i as f64 + 0.1 * k as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = UnmixModel::new(Architecture::new(16, 2), &reference, &mut rng).unwrap();
        assert!((m.obs_scale() - 0.01).abs() < 1e-15);
        assert!((m.em_scale(1) - 0.005).abs() < 1e-15);
        assert!((m.lista_sparse() - 0.01).abs() < 1e-15);
        assert!((m.lista_unc() - 10.0).abs() < 1e-13);
        let gram = reference.transpose() * &reference;
        let want = 1.0 / spectral_norm(&gram);
        assert!(m.lista_steps().iter().all(|s| (s - want).abs() < 1e-12 * want));
    }

    #[test]
    fn rejects_mismatched_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = UnmixModel::new(Architecture::new(16, 3), &DMatrix::zeros(16, 2), &mut rng);
        assert!(matches!(r, Err(UnmixError::Input(_))));
    }
}
