use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Result, UnmixError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Linear,
}

/// Fully connected network whose tensors live in a [`ParamStore`].
///
/// `weights[l]` is `widths[l+1] × widths[l]` (row-major) and `biases[l]` has
/// length `widths[l+1]`; `activations[l]` follows layer `l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

impl MlpParams {
    /// Registers `widths.len() - 1` layers under `prefix`, weights drawn
    /// uniformly in ±sqrt(6/(fan_in + fan_out)), biases zero.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(UnmixError::Contract(format!(
                "{prefix}: an MLP needs at least two widths"
            )));
        }
        if activations.len() != widths.len() - 1 {
            return Err(UnmixError::dim(
                "MLP activation count",
                widths.len() - 1,
                activations.len(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(UnmixError::Contract(format!("{prefix}: zero layer width")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (l, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(store.register(
                format!("{prefix}.w{l}"),
                Tensor::matrix(fan_out, fan_in, w)?,
            ));
            biases.push(store.register(format!("{prefix}.b{l}"), Tensor::zeros(vec![fan_out])));
        }
        Ok(MlpParams {
            widths: widths.to_vec(),
            activations: activations.to_vec(),
            weights,
            biases,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated at registration")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.weights.iter().chain(&self.biases).copied()
    }

    /// Records the forward pass on `g`.
    pub fn forward(&self, g: &mut Graph<'_>, input: Var) -> Result<Var> {
        let got = g.len(input);
        if got != self.input_width() {
            return Err(UnmixError::dim("MLP input", self.input_width(), got));
        }
        let mut h = input;
        for l in 0..self.num_layers() {
            let w = g.param(self.weights[l]);
            let b = g.param(self.biases[l]);
            h = g.affine(w, Some(b), h)?;
            h = match self.activations[l] {
                Activation::Relu => g.relu(h),
                Activation::Sigmoid => g.sigmoid(h),
                Activation::Linear => h,
            };
        }
        Ok(h)
    }

    /// `Σ_l ‖W_l‖_F + ‖b_l‖_2` as a graph scalar.
    pub fn fnn_norm(&self, g: &mut Graph<'_>) -> Result<Var> {
        let mut terms = Vec::with_capacity(2 * self.num_layers());
        for id in self.param_ids() {
            let p = g.param(id);
            terms.push(g.norm(p));
        }
        g.add_all(&terms)
    }

    /// Same as [`MlpParams::fnn_norm`], read directly from the store.
    pub fn fnn_norm_value(&self, store: &ParamStore) -> f64 {
        self.param_ids()
            .map(|id| store.get(id).data().iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum()
    }

    /// Sets every weight and bias of this network to zero.
    pub fn zero_out(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Forward pass recorded on a fresh graph; returns the output values.
pub fn mlp_forward(store: &ParamStore, mlp: &MlpParams, input: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new(store);
    let x = g.constant(input);
    let y = mlp.forward(&mut g, x)?;
    Ok(Tensor::vector(g.value(y).to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_layer(act: Activation, w: Vec<f64>, n: usize) -> (ParamStore, MlpParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = MlpParams::register(&mut store, "net", &[n, n], &[act], &mut rng).unwrap();
        store.set_data(mlp.weights[0], &w).unwrap();
        (store, mlp)
    }

    #[test]
    fn identity_linear_layer() {
        let (store, mlp) = single_layer(Activation::Linear, vec![1.0, 0.0, 0.0, 1.0], 2);
        let y = mlp_forward(&store, &mlp, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let (store, mlp) = single_layer(Activation::Relu, vec![1.0, 0.0, 0.0, 1.0], 2);
        let y = mlp_forward(&store, &mlp, &Tensor::vector(vec![-1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_sigmoid_layer_gives_half() {
        let (store, mlp) = single_layer(Activation::Sigmoid, vec![0.0; 9], 3);
        let y = mlp_forward(&store, &mlp, &Tensor::vector(vec![5.0, -3.0, 0.1])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn input_width_mismatch() {
        let (store, mlp) = single_layer(Activation::Linear, vec![0.0; 4], 2);
        let r = mlp_forward(&store, &mlp, &Tensor::vector(vec![1.0, 2.0, 3.0]));
        assert!(matches!(r, Err(UnmixError::Dimension { .. })));
    }

    #[test]
    fn glorot_bounds_and_zero_biases() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = MlpParams::register(
            &mut store,
            "n",
            &[10, 20, 5],
            &[Activation::Relu, Activation::Linear],
            &mut rng,
        )
        .unwrap();
        let lim0 = (6.0f64 / 30.0).sqrt();
        assert!(store.get(mlp.weights[0]).data().iter().all(|v| v.abs() <= lim0));
        assert_eq!(store.get(mlp.weights[0]).shape(), &[20, 10]);
        assert!(store.get(mlp.biases[1]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fnn_norm_of_identity() {
        let (store, mlp) = single_layer(Activation::Linear, vec![1.0, 0.0, 0.0, 1.0], 2);
        assert!((mlp.fnn_norm_value(&store) - 2f64.sqrt()).abs() < 1e-15);
    }
}
