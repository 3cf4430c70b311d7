//! Trains on a generated scene and compares against VCA + FCLS.
//!
//! `cargo run --release -p unmix-core --example scene_trial -- <dc1|dc2|linear> <seed> [varsigma1]`

use std::time::Instant;

use unmix_core::data::{self_supervised_set, SceneConfig, DEFAULT_LABEL_SNR_DB, DEFAULT_N_DRAWS, DEFAULT_N_PPX};
use unmix_core::eval::{evaluate, fcls_estimates, model_estimates};
use unmix_core::objective::{network_norm_penalty, train, TrainConfig};

fn main() -> unmix_core::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let scene = match args.get(1).map(String::as_str) {
        Some("dc2") => SceneConfig::dc2(),
        Some("linear") => SceneConfig {
            variability: 0.0,
            ..SceneConfig::dc2()
        },
        _ => SceneConfig::dc1(),
    };
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let (cube, truth) = scene.generate(seed)?;
    let p = scene.endmembers;
    let (reference, labeled) = self_supervised_set(&cube, p, DEFAULT_N_PPX, DEFAULT_N_DRAWS, DEFAULT_LABEL_SNR_DB, seed)?;
    let base = evaluate(&cube, &truth, &fcls_estimates(&cube, &reference)?)?;
    println!("fcls   {base:?}");
    let start = Instant::now();
    let mut config = TrainConfig::default();
    if let Some(v) = args.get(3).and_then(|s| s.parse().ok()) {
        config.varsigma1 = v;
    }
    let state = train(&cube, &labeled, p, config, seed)?;
    for r in &state.history {
        println!("epoch {} total {:.3} {:?}", r.epoch, r.breakdown.total, r.breakdown);
    }
    let mut ours = evaluate(&cube, &truth, &model_estimates(&state.model, &cube)?)?;
    let eta = ours.eta_d_mean();
    ours.eta_d_map.clear();
    println!("model  {ours:?} eta {eta:?} train {:.1}s", start.elapsed().as_secs_f64());
    println!("mixing network norm {:.6}", network_norm_penalty(&state.model, 1.0, 0.0));
    Ok(())
}
