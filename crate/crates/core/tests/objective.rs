use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use unmix_core::data::SupervisedSample;
use unmix_core::model::{Architecture, UnmixModel};
use unmix_core::objective::{loss_and_gradients, BatchItem, TrainConfig};

fn setup() -> (UnmixModel, Vec<Vec<f64>>, SupervisedSample) {
    let (l, p) = (14, 3);
    let m = DMatrix::from_fn(l, p, |i, k| 0.15 + 0.6 * (((i + 3 * k) as f64) * 0.41).sin().abs());
    let model = UnmixModel::new(Architecture::new(l, p), &m, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let pixels = (0..3)
        .map(|j| (0..l).map(|i| 0.5 * m[(i, j)] + 0.5 * m[(i, (j + 1) % p)]).collect())
        .collect();
    let label = SupervisedSample {
        y: m.column(1).iter().map(|v| v * 1.01).collect(),
        a: vec![0.0, 1.0, 0.0],
        m,
    };
    (model, pixels, label)
}

#[test]
fn batch_gradient_is_the_sum_of_item_gradients() {
    let (model, pixels, label) = setup();
    // without the per-batch network penalty every term is a per-item sum
    let cfg = TrainConfig {
        varsigma1: 0.0,
        varsigma2: 0.0,
        k_samples: 3,
        ..TrainConfig::default()
    };
    let mut items: Vec<BatchItem<'_>> = pixels.iter().map(|p| BatchItem::Unlabeled(p)).collect();
    items.push(BatchItem::Labeled(&label));
    let seeds: Vec<u64> = (10..10 + items.len() as u64).collect();
    let (total, grads) = loss_and_gradients(&model, &items, &seeds, &cfg).unwrap();
    let mut sum_loss = 0.0;
    let mut sum = vec![0.0; model.store.num_scalars()];
    for (item, seed) in items.iter().zip(&seeds) {
        let (b, g) = loss_and_gradients(&model, std::slice::from_ref(item), &[*seed], &cfg).unwrap();
        sum_loss += b.total;
        let flat: Vec<f64> = model.store.ids().flat_map(|id| g.get(id)).collect();
        for (s, v) in sum.iter_mut().zip(flat) {
            *s += v;
        }
    }
    assert!((total.total - sum_loss).abs() < 1e-9 * sum_loss.abs().max(1.0));
    let batch: Vec<f64> = model.store.ids().flat_map(|id| grads.get(id)).collect();
    for (a, b) in batch.iter().zip(&sum) {
        assert!((a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0), "{a} vs {b}");
    }
}

#[test]
fn forward_pass_is_deterministic() {
    let (model, pixels, label) = setup();
    let items = [BatchItem::Unlabeled(&pixels[0]), BatchItem::Labeled(&label)];
    let cfg = TrainConfig::default();
    let first = loss_and_gradients(&model, &items, &[1, 2], &cfg).unwrap();
    let second = loss_and_gradients(&model, &items, &[1, 2], &cfg).unwrap();
    assert_eq!(first, second);
}
