//! Command implementations behind the `unmix` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::json;

use unmix_core::checkpoint::{checkpoint_paths, load_checkpoint, save_checkpoint};
use unmix_core::data::{
    read_abundances, read_cube, read_endmembers, read_raster, read_supervised, self_supervised_set, vca,
    write_abundances, write_cube, write_endmembers, write_raster, write_supervised, GroundTruth,
    SceneConfig, DEFAULT_LABEL_SNR_DB, DEFAULT_N_DRAWS, DEFAULT_N_PPX, ROLE_NONLINEARITY, ROLE_RECONSTRUCTION,
};
use unmix_core::eval::{evaluate, fcls_estimates, model_estimates, write_report_csv, Estimates, ReportRow};
use unmix_core::objective::{train_with, write_history_csv, TrainConfig, TrainState};
use unmix_core::seeds::{derive_seed, stream_rng, Stream};
use unmix_core::{Result, UnmixError};

pub const THREADS_ENV: &str = "UNMIX_THREADS";
pub const MANIFEST_FILE: &str = "manifest.json";
const FCLS_RUNTIME: &str = "fcls_runtime_s";
const UNMIX_RUNTIME: &str = "unmix_runtime_s";
const ESTIMATES_RUNTIME: &str = "estimates_runtime_s";

#[derive(Debug, Parser)]
#[command(name = "unmix", version, about = "Hyperspectral unmixing with endmember variability")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Generate a synthetic scene with ground truth.
    Generate(GenerateArgs),
    /// Build the self-supervised labeled set from a cube.
    Selfsup(SelfsupArgs),
    /// Train a model and write a checkpoint plus loss history.
    Train(TrainArgs),
    /// Estimate abundances, endmembers and nonlinearity maps with a checkpoint.
    Unmix(UnmixArgs),
    /// Score estimates against ground truth.
    Eval(EvalArgs),
    /// Re-run the command recorded in a run manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// Bilinear mixing, three endmembers, no variability.
    Dc1,
    /// Linear mixing, five endmembers with per-pixel variability.
    Dc2,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct GenerateArgs {
    #[arg(value_enum)]
    pub kind: SceneKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub bands: Option<usize>,
    #[arg(long)]
    pub endmembers: Option<usize>,
    #[arg(long)]
    pub snr: Option<f64>,
    #[arg(long)]
    pub variability: Option<f64>,
    /// Overwrite a non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct SelfsupArgs {
    pub cube: PathBuf,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = DEFAULT_N_PPX)]
    pub n_ppx: usize,
    #[arg(long, default_value_t = DEFAULT_N_DRAWS)]
    pub n_draws: usize,
    #[arg(long, default_value_t = DEFAULT_LABEL_SNR_DB)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    pub cube: PathBuf,
    /// Labeled set; without it training is purely unsupervised.
    #[arg(long)]
    pub supervised: Option<PathBuf>,
    /// Endmember count, required without a labeled set.
    #[arg(long)]
    pub p: Option<usize>,
    /// Continue from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub varsigma1: Option<f64>,
    #[arg(long)]
    pub varsigma2: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub lista_layers: Option<usize>,
    /// Importance samples per labeled pixel.
    #[arg(long)]
    pub k: Option<usize>,
    /// Posterior samples per unlabeled pixel.
    #[arg(long)]
    pub ke: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub rel_stop_tol: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint stem; writes `<out>.json`, `<out>.bin` and `<out>.history.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct UnmixArgs {
    pub cube: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Fcls,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Directory with `cube`, `abundances` and optionally `endmembers`.
    pub truth: PathBuf,
    /// Directory written by `unmix`.
    pub estimates: PathBuf,
    /// Append a VCA + FCLS comparison row.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Seed for the VCA run of the baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
}

/// Record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub args: Command,
    /// Every setting the command resolved, defaults included.
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// Timings that feed into outputs; replays reuse the recorded values.
    pub measurements: BTreeMap<String, f64>,
    pub wall_clock_s: f64,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<Self> {
        serde_json::from_slice(&fs::read(path)?).map_err(|e| format_err("manifest", e))
    }
}

fn format_err(field: &str, e: impl ToString) -> UnmixError {
    UnmixError::Format {
        field: field.into(),
        message: e.to_string(),
    }
}

/// Process exit code for an error: 3 for numeric or training failures,
/// 2 for everything else.
pub fn exit_code(e: &UnmixError) -> i32 {
    if e.is_numeric() {
        3
    } else {
        2
    }
}

/// Caps the global worker pool at `UNMIX_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| UnmixError::Input(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| UnmixError::Input(e.to_string()))
}

struct Outcome {
    manifest: PathBuf,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    measurements: BTreeMap<String, f64>,
}

/// Runs `cmd` and writes its manifest.
pub fn run(cmd: &Command) -> Result<()> {
    if let Command::Replay(r) = cmd {
        let m = RunManifest::read(&r.manifest)?;
        if matches!(m.args, Command::Replay(_)) {
            return Err(UnmixError::Input("a manifest cannot record a replay".into()));
        }
        return execute(&m.args, Some(&m.measurements), true);
    }
    execute(cmd, None, false)
}

fn execute(cmd: &Command, recorded: Option<&BTreeMap<String, f64>>, replay: bool) -> Result<()> {
    let start = Instant::now();
    let (name, seed, outcome) = match cmd {
        Command::Generate(a) => ("generate", a.seed, generate(a, replay)?),
        Command::Selfsup(a) => ("selfsup", a.seed, selfsup(a)?),
        Command::Train(a) => ("train", a.seed, train(a)?),
        Command::Unmix(a) => ("unmix", 0, unmix(a, recorded, replay)?),
        Command::Eval(a) => ("eval", a.seed, eval(a, recorded)?),
        Command::Replay(_) => unreachable!("replays are resolved by `run`"),
    };
    let manifest = RunManifest {
        command: name.into(),
        seed,
        args: cmd.clone(),
        config: outcome.config,
        inputs: outcome.inputs,
        outputs: outcome.outputs,
        measurements: outcome.measurements,
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| format_err("manifest", e))?;
    fs::write(&outcome.manifest, text + "\n")?;
    Ok(())
}

fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let non_empty = fs::read_dir(dir)?.next().is_some();
        if non_empty && !force {
            return Err(UnmixError::Input(format!(
                "output directory {} is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

/// `<stem><suffix>` next to `path`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = if path.extension().is_some_and(|e| e == "json" || e == "raw" || e == "bin" || e == "csv") {
        path.with_extension("")
    } else {
        path.to_path_buf()
    };
    let mut s = stem.into_os_string();
    s.push(suffix);
    s.into()
}

fn bundle_files(stem: &Path) -> Vec<PathBuf> {
    vec![sibling(stem, ".json"), sibling(stem, ".raw")]
}

fn generate(a: &GenerateArgs, replay: bool) -> Result<Outcome> {
    let base = match a.kind {
        SceneKind::Dc1 => SceneConfig::dc1(),
        SceneKind::Dc2 => SceneConfig::dc2(),
    };
    let scene = SceneConfig {
        width: a.width.unwrap_or(base.width),
        height: a.height.unwrap_or(base.height),
        bands: a.bands.unwrap_or(base.bands),
        endmembers: a.endmembers.unwrap_or(base.endmembers),
        snr_db: a.snr.unwrap_or(base.snr_db),
        variability: a.variability.unwrap_or(base.variability),
        mixing: base.mixing,
    };
    prepare_dir(&a.out, a.force || replay)?;
    let (cube, truth) = scene.generate(a.seed)?;
    let (w, h) = (cube.width, cube.height);
    write_cube(&a.out.join("cube"), &cube)?;
    write_abundances(&a.out.join("abundances"), w, h, &truth.abundances)?;
    let mut outputs = [bundle_files(&a.out.join("cube")), bundle_files(&a.out.join("abundances"))].concat();
    if let Some(m) = &truth.endmembers {
        write_endmembers(&a.out.join("endmembers"), w, h, m)?;
        outputs.extend(bundle_files(&a.out.join("endmembers")));
    }
    for k in 0..truth.abundances.ncols() {
        let path = a.out.join(format!("abundance_{k}.pgm"));
        write_pgm(&path, w, h, truth.abundances.column(k).iter().copied())?;
        outputs.push(path);
    }
    Ok(Outcome {
        manifest: a.out.join(MANIFEST_FILE),
        config: json!({
            "kind": a.kind,
            "width": scene.width,
            "height": scene.height,
            "bands": scene.bands,
            "endmembers": scene.endmembers,
            "snr_db": scene.snr_db,
            "variability": scene.variability,
            "mixing": format!("{:?}", scene.mixing).to_lowercase(),
        }),
        inputs: vec![],
        outputs,
        measurements: BTreeMap::new(),
    })
}

fn selfsup(a: &SelfsupArgs) -> Result<Outcome> {
    let cube = read_cube(&a.cube)?;
    let (_, set) = self_supervised_set(&cube, a.p, a.n_ppx, a.n_draws, a.snr, a.seed)?;
    write_supervised(&a.out, &set)?;
    Ok(Outcome {
        manifest: sibling(&a.out, ".manifest.json"),
        config: json!({
            "endmembers": a.p,
            "n_ppx": a.n_ppx,
            "n_draws": a.n_draws,
            "snr_db": a.snr,
            "vca_seed": derive_seed(a.seed, Stream::Data, &[1, 0]),
            "draw_seed": derive_seed(a.seed, Stream::Data, &[1, 1]),
            "samples": set.len(),
        }),
        inputs: bundle_files(&a.cube),
        outputs: bundle_files(&a.out),
        measurements: BTreeMap::new(),
    })
}

fn train_config(a: &TrainArgs, base: TrainConfig) -> TrainConfig {
    TrainConfig {
        lambda: a.lambda.unwrap_or(base.lambda),
        beta: a.beta.unwrap_or(base.beta),
        tau: a.tau.unwrap_or(base.tau),
        varsigma1: a.varsigma1.unwrap_or(base.varsigma1),
        varsigma2: a.varsigma2.unwrap_or(base.varsigma2),
        k_samples: a.k.unwrap_or(base.k_samples),
        k_expect: a.ke.unwrap_or(base.k_expect),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_epochs: a.epochs.unwrap_or(base.max_epochs),
        rel_stop_tol: a.rel_stop_tol.unwrap_or(base.rel_stop_tol),
        latent_dim: a.latent_dim.unwrap_or(base.latent_dim),
        lista_layers: a.lista_layers.unwrap_or(base.lista_layers),
    }
}

fn train(a: &TrainArgs) -> Result<Outcome> {
    let cube = read_cube(&a.cube)?;
    let labeled = match &a.supervised {
        Some(p) => read_supervised(p)?,
        None => Vec::new(),
    };
    let mut inputs = bundle_files(&a.cube);
    if let Some(p) = &a.supervised {
        inputs.extend(bundle_files(p));
    }
    let state = match &a.resume {
        Some(path) => {
            let mut s = load_checkpoint(path)?;
            let (j, b) = checkpoint_paths(path);
            inputs.extend([j, b]);
            if a.latent_dim.is_some_and(|h| h != s.config.latent_dim)
                || a.lista_layers.is_some_and(|m| m != s.config.lista_layers)
            {
                return Err(UnmixError::Input("network sizes cannot change when resuming".into()));
            }
            s.config = train_config(a, s.config.clone());
            s.finished = s.next_epoch >= s.config.max_epochs;
            s
        }
        None => {
            let p = match (a.p, labeled.first()) {
                (Some(p), Some(s)) if p != s.a.len() => {
                    return Err(UnmixError::Input(format!(
                        "--p {p} disagrees with the labeled set ({} endmembers)",
                        s.a.len()
                    )))
                }
                (Some(p), _) => p,
                (None, Some(s)) => s.a.len(),
                (None, None) => return Err(UnmixError::Input("--p is required without a labeled set".into())),
            };
            TrainState::new(&cube, &labeled, p, train_config(a, TrainConfig::default()), a.seed)?
        }
    };
    let (ckpt_json, ckpt_bin) = checkpoint_paths(&a.out);
    let history = sibling(&a.out, ".history.csv");
    let config = serde_json::to_value(&state.config).map_err(|e| format_err("config", e))?;
    let save = |s: &TrainState| -> Result<()> {
        save_checkpoint(&a.out, s)?;
        write_history_csv(BufWriter::new(fs::File::create(&history)?), &s.history)
    };
    // a fresh checkpoint up front so a failure in the first epoch still
    // leaves a loadable last-good state
    save(&state)?;
    let done = train_with(state, &cube, &labeled, &mut |s| save(s))?;
    log::info!("trained {} epochs", done.history.len());
    Ok(Outcome {
        manifest: sibling(&a.out, ".manifest.json"),
        config: json!({ "train": config, "endmembers": done.model.arch.endmembers, "seed": done.seed }),
        inputs,
        outputs: vec![ckpt_json, ckpt_bin, history.clone()],
        measurements: BTreeMap::new(),
    })
}

/// 8-bit binary PGM with values in `[0, 1]` mapped to `0..=255`.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let start = out.len();
    out.extend(values.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    if out.len() - start != width * height {
        return Err(UnmixError::Input(format!(
            "preview needs {} values, got {}",
            width * height,
            out.len() - start
        )));
    }
    fs::write(path, out)?;
    Ok(())
}

fn unmix(a: &UnmixArgs, recorded: Option<&BTreeMap<String, f64>>, replay: bool) -> Result<Outcome> {
    let cube = read_cube(&a.cube)?;
    let state = load_checkpoint(&a.checkpoint)?;
    if state.model.arch.bands != cube.bands {
        return Err(UnmixError::Input(format!(
            "checkpoint expects {} bands, cube has {}",
            state.model.arch.bands, cube.bands
        )));
    }
    prepare_dir(&a.out, a.force || replay)?;
    let mut est = model_estimates(&state.model, &cube)?;
    if let Some(t) = recorded.and_then(|r| r.get(UNMIX_RUNTIME)) {
        est.runtime_s = *t;
    }
    let (w, h, p) = (cube.width, cube.height, state.model.arch.endmembers);
    let mut outputs = Vec::new();
    let mut stem = |name: &str| {
        let s = a.out.join(name);
        outputs.extend(bundle_files(&s));
        s
    };
    write_abundances(&stem("abundances"), w, h, &est.abundances)?;
    if let Some(m) = &est.endmembers {
        write_endmembers(&stem("endmembers"), w, h, m)?;
    }
    let eta = est.eta_d.clone().unwrap_or_default();
    write_raster(&stem("eta_d"), w, h, 1, ROLE_NONLINEARITY, &eta)?;
    if let Some(r) = &est.reconstruction {
        write_raster(&stem("reconstruction"), w, h, cube.bands, ROLE_RECONSTRUCTION, r)?;
    }
    for k in 0..p {
        let path = a.out.join(format!("abundance_{k}.pgm"));
        write_pgm(&path, w, h, est.abundances.column(k).iter().copied())?;
        outputs.push(path);
    }
    let path = a.out.join("eta_d.pgm");
    write_pgm(&path, w, h, eta.iter().copied())?;
    outputs.push(path);
    let (cj, cb) = checkpoint_paths(&a.checkpoint);
    Ok(Outcome {
        manifest: a.out.join(MANIFEST_FILE),
        config: json!({ "arch": state.model.arch }),
        inputs: [bundle_files(&a.cube), vec![cj, cb]].concat(),
        outputs,
        measurements: BTreeMap::from([(UNMIX_RUNTIME.to_string(), est.runtime_s)]),
    })
}

fn read_estimates(dir: &Path, cube_bands: usize) -> Result<Estimates> {
    let (_, _, abundances) = read_abundances(&dir.join("abundances"))?;
    let present = |name: &str| sibling(&dir.join(name), ".json").exists();
    let endmembers = if present("endmembers") {
        Some(read_endmembers(&dir.join("endmembers"))?)
    } else {
        None
    };
    let eta_d = if present("eta_d") {
        Some(read_raster(&dir.join("eta_d"), ROLE_NONLINEARITY)?.1)
    } else {
        None
    };
    let reconstruction = if present("reconstruction") {
        let (h, data) = read_raster(&dir.join("reconstruction"), ROLE_RECONSTRUCTION)?;
        if h.bands != cube_bands {
            return Err(UnmixError::Input("reconstruction band count differs from the cube".into()));
        }
        Some(data)
    } else {
        None
    };
    // time spent producing the estimates, as recorded by the producing run
    let runtime_s = RunManifest::read(&dir.join(MANIFEST_FILE))
        .ok()
        .and_then(|m| m.measurements.get(UNMIX_RUNTIME).copied())
        .unwrap_or(0.0);
    Ok(Estimates {
        abundances,
        endmembers,
        reconstruction,
        eta_d,
        runtime_s,
    })
}

fn eval(a: &EvalArgs, recorded: Option<&BTreeMap<String, f64>>) -> Result<Outcome> {
    let cube = read_cube(&a.truth.join("cube"))?;
    let (_, _, abundances) = read_abundances(&a.truth.join("abundances"))?;
    let truth_em = sibling(&a.truth.join("endmembers"), ".json");
    let endmembers = if truth_em.exists() {
        Some(read_endmembers(&a.truth.join("endmembers"))?)
    } else {
        None
    };
    let truth = GroundTruth { abundances, endmembers };
    let mut est = read_estimates(&a.estimates, cube.bands)?;
    if let Some(t) = recorded.and_then(|r| r.get(ESTIMATES_RUNTIME)) {
        est.runtime_s = *t;
    }
    let mut rows = vec![ReportRow::from(&evaluate(&cube, &truth, &est)?)];
    let mut measurements = BTreeMap::from([(ESTIMATES_RUNTIME.to_string(), est.runtime_s)]);
    if a.baseline == Some(Baseline::Fcls) {
        let m: DMatrix<f64> = vca(&cube, truth.abundances.ncols(), &mut stream_rng(a.seed, Stream::Data, &[1, 0]))?;
        let mut base = fcls_estimates(&cube, &m)?;
        if let Some(t) = recorded.and_then(|r| r.get(FCLS_RUNTIME)) {
            base.runtime_s = *t;
        }
        measurements.insert(FCLS_RUNTIME.to_string(), base.runtime_s);
        rows.push(ReportRow::from(&evaluate(&cube, &truth, &base)?));
    }
    write_report_csv(BufWriter::new(fs::File::create(&a.out)?), &rows)?;
    let mut inputs = bundle_files(&a.truth.join("cube"));
    inputs.extend(bundle_files(&a.truth.join("abundances")));
    if truth.endmembers.is_some() {
        inputs.extend(bundle_files(&a.truth.join("endmembers")));
    }
    inputs.push(a.estimates.clone());
    Ok(Outcome {
        manifest: sibling(&a.out, ".manifest.json"),
        config: json!({
            "baseline": a.baseline,
            "rows": if a.baseline.is_some() { vec!["estimates", "fcls"] } else { vec!["estimates"] },
            "endmember_metrics": truth.endmembers.is_some(),
        }),
        inputs,
        outputs: vec![a.out.clone()],
        measurements,
    })
}
