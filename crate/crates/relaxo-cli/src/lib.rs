//! Experiment harness: composes phantom synthesis, acquisition,
//! reconstruction, contrast generation, fitting, and evaluation into
//! reproducible experiment directories (JSON manifest, QTNS tensors, CSV
//! metrics, PGM maps).

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use relaxo::acquisition::{
    add_noise, forward, make_coils, make_mask_set, CoilProfile, KSpaceData,
    MeasurementOperator, SamplingMask,
};
use relaxo::analysis::{fit_map, nrmse, region_stats, snr_db, FitConfig};
use relaxo::generative::{
    generate_full_series, generate_full_series_analytic, load_model, r_effective, r_tsl,
    save_model, train_pipeline, GenDataset, GenModel, ReconTuningSample, TrainConfig,
};
use relaxo::phantom::{
    brain_like, knee_like, random_phantom, rasterize, synthesize, PhantomSpec, PhaseMode,
};
use relaxo::qtns::{tensor_read, tensor_write, Tensor};
use relaxo::recon::{
    admm_reconstruct, learned_admm_reconstruct, ls_reconstruct, zero_filled, LearnedAdmmModel,
    LplusSConfig, ReconConfig,
};
use relaxo::seed::Seed;
use relaxo::types::{ContrastImageSet, ParamMap};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhantomSource {
    Preset { preset: String, ny: usize, nx: usize },
    Spec { spec: PhantomSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReconModeChoice {
    ZeroFilled,
    Admm,
    LearnedAdmm,
    #[serde(rename = "l+s")]
    LplusS,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum GenerationMode {
    #[default]
    None,
    Analytic,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseChoice {
    Zero,
    #[default]
    SmoothQuadratic,
}

fn default_name() -> String {
    "experiment".to_string()
}
fn default_n_coils() -> usize {
    1
}
fn default_calib_frac() -> f64 {
    0.0625
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub phantom: PhantomSource,
    pub tsl_ms: Vec<f64>,
    #[serde(default = "default_n_coils")]
    pub n_coils: usize,
    pub r_k: f64,
    pub r_tsl: f64,
    /// Absent or null means noiseless (infinite SNR).
    #[serde(default)]
    pub snr_db: Option<f64>,
    pub recon_mode: ReconModeChoice,
    #[serde(default)]
    pub generation_mode: GenerationMode,
    #[serde(default)]
    pub recon: ReconConfig,
    #[serde(default)]
    pub lps: Option<LplusSConfig>,
    #[serde(default)]
    pub fit: FitConfig,
    /// Directory holding `model.qtns` + `model.json` for model generation.
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default = "default_calib_frac")]
    pub calib_frac: f64,
    #[serde(default)]
    pub phase: PhaseChoice,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r_tsl != 1.0 && self.r_tsl != 2.5 {
            bail!("r_tsl must be 1 or 2.5");
        }
        if self.generation_mode != GenerationMode::None && self.r_tsl != 2.5 {
            bail!("generation requires r_tsl = 2.5");
        }
        if self.r_tsl == 2.5 && self.tsl_ms.len() != 5 {
            bail!("r_tsl = 2.5 assumes a 5-point spin-lock grid");
        }
        if self.recon_mode == ReconModeChoice::LplusS && self.lps.is_none() {
            bail!("l+s reconstruction needs an `lps` section");
        }
        if self.tsl_ms.is_empty() {
            bail!("tsl_ms must be nonempty");
        }
        Ok(())
    }

    pub fn r_e(&self) -> f64 {
        r_effective(self.r_k, self.r_tsl)
    }

    fn phase_mode(&self) -> PhaseMode {
        match self.phase {
            PhaseChoice::Zero => PhaseMode::Zero,
            PhaseChoice::SmoothQuadratic => PhaseMode::SmoothQuadratic,
        }
    }
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text).context("parsing config JSON")?;
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Output-directory helpers
// ---------------------------------------------------------------------------

/// Exclusive ownership of an output directory for the duration of a command.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<DirLock> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                bail!(
                    "output directory {} is locked by another command (remove {} if stale)",
                    dir.display(),
                    path.display()
                )
            }
            Err(e) => Err(e).with_context(|| format!("creating lock {}", path.display())),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write_f64(path: &Path, data: &Array2<f64>) -> Result<()> {
    tensor_write(path, &Tensor::F64(data.clone().into_dyn()))?;
    Ok(())
}

fn write_c128_3(path: &Path, data: &Array3<Complex64>) -> Result<()> {
    tensor_write(path, &Tensor::C128(data.clone().into_dyn()))?;
    Ok(())
}

pub fn read_f64_2d(path: &Path) -> Result<Array2<f64>> {
    match tensor_read(path)? {
        Tensor::F64(a) => Ok(a.into_dimensionality()?),
        _ => bail!("{} is not an f64 tensor", path.display()),
    }
}

/// 16-bit big-endian P5 PGM, values linearly mapped from `[lo, hi]`; the
/// window is recorded in a JSON sidecar next to the image.
pub fn write_pgm16(path: &Path, img: &Array2<f64>, lo: f64, hi: f64) -> Result<()> {
    let (ny, nx) = img.dim();
    let mut bytes = format!("P5\n{nx} {ny}\n65535\n").into_bytes();
    let span = (hi - lo).max(1e-300);
    for v in img.iter() {
        let t = ((v - lo) / span).clamp(0.0, 1.0);
        let q = (t * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))?;
    let sidecar = path.with_extension("pgm.json");
    let meta = serde_json::json!({"window": [lo, hi], "max_value": 65535});
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)
        .with_context(|| format!("writing {}", sidecar.display()))?;
    Ok(())
}

/// FNV-1a over raw little-endian bytes; used to tag phantom identity.
pub fn fnv1a(data: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in data {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn phantom_hash(truth: &ParamMap) -> u64 {
    let mut bytes = Vec::with_capacity(truth.t1rho_ms.len() * 8);
    for v in truth.t1rho_ms.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in truth.s0.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fnv1a(&bytes)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MetricRow {
    pub experiment: String,
    pub stage: String,
    pub region: String,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    let mut out = String::from("experiment,stage,region,metric,value,seed\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.experiment, r.stage, r.region, r.metric, r.value, r.seed
        ));
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            bail!("{}: malformed row {}", path.display(), i + 1);
        }
        rows.push(MetricRow {
            experiment: parts[0].to_string(),
            stage: parts[1].to_string(),
            region: parts[2].to_string(),
            metric: parts[3].to_string(),
            value: parts[4].parse()?,
            seed: parts[5].parse()?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Phantom,
    Mask,
    Acquire,
    Recon,
    Generate,
    Fit,
    Eval,
}

pub struct PipelineState {
    pub cfg: ExperimentConfig,
    pub truth: ParamMap,
    pub labels: Array2<u32>,
    pub truth_series: ContrastImageSet,
    pub acquired_idx: Vec<usize>,
    pub acquired_tsl: Vec<f64>,
    pub mask: Option<SamplingMask>,
    pub coils: Option<CoilProfile>,
    pub kspace: Option<KSpaceData>,
    pub noise_std: f64,
    pub recon: Option<ContrastImageSet>,
    pub series: Option<ContrastImageSet>,
    pub map: Option<ParamMap>,
    pub metrics: Vec<MetricRow>,
}

fn phantom_spec_of(cfg: &ExperimentConfig) -> Result<PhantomSpec> {
    match &cfg.phantom {
        PhantomSource::Spec { spec } => Ok(spec.clone()),
        PhantomSource::Preset { preset, ny, nx } => match preset.as_str() {
            "knee" => Ok(knee_like(*ny, *nx)),
            "brain" => Ok(brain_like(*ny, *nx)),
            "random" => Ok(random_phantom(*ny, *nx, Seed::new(cfg.seed).derive(1))),
            other => bail!("unknown phantom preset `{other}`"),
        },
    }
}

/// Run the pipeline through `upto`, writing each computed stage's artifacts
/// into `out`. Stages are pure functions of (config, seed), so partial runs
/// are consistent with full ones.
pub fn run_pipeline(
    cfg: &ExperimentConfig,
    out: &Path,
    upto: Stage,
    quiet: bool,
) -> Result<PipelineState> {
    cfg.validate()?;
    let _lock = DirLock::acquire(out)?;
    let seed = Seed::new(cfg.seed);
    let say = |msg: &str| {
        if !quiet {
            eprintln!("[{}] {}", cfg.name, msg);
        }
    };

    // --- phantom ---
    let spec = phantom_spec_of(cfg).context("stage phantom")?;
    let (truth, labels) = rasterize(&spec).context("stage phantom")?;
    let truth_series =
        synthesize(&truth, &cfg.tsl_ms, cfg.phase_mode()).context("stage phantom")?;
    write_f64(&out.join("truth_t1rho.qtns"), &truth.t1rho_ms).context("stage phantom")?;
    write_f64(&out.join("truth_s0.qtns"), &truth.s0).context("stage phantom")?;
    write_f64(&out.join("labels.qtns"), &labels.mapv(|v| v as f64)).context("stage phantom")?;
    write_c128_3(&out.join("truth_series.qtns"), &truth_series.images)
        .context("stage phantom")?;
    say("phantom written");

    let acquired_idx: Vec<usize> = if cfg.r_tsl == 2.5 {
        vec![0, cfg.tsl_ms.len() - 1]
    } else {
        (0..cfg.tsl_ms.len()).collect()
    };
    let acquired_tsl: Vec<f64> = acquired_idx.iter().map(|&i| cfg.tsl_ms[i]).collect();

    let mut state = PipelineState {
        cfg: cfg.clone(),
        truth,
        labels,
        truth_series,
        acquired_idx,
        acquired_tsl,
        mask: None,
        coils: None,
        kspace: None,
        noise_std: 0.0,
        recon: None,
        series: None,
        map: None,
        metrics: Vec::new(),
    };
    if upto == Stage::Phantom {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- mask ---
    let (ny, nx) = (state.truth.ny(), state.truth.nx());
    let mask = make_mask_set(
        ny,
        nx,
        state.acquired_idx.len(),
        cfg.r_k,
        cfg.calib_frac,
        seed.derive(2),
    )
    .context("stage mask")?;
    let mask_f = Array3::from_shape_fn(mask.mask.raw_dim(), |(t, i, j)| {
        if mask.mask[[t, i, j]] {
            1.0
        } else {
            0.0
        }
    });
    tensor_write(&out.join("mask.qtns"), &Tensor::F64(mask_f.into_dyn()))
        .context("stage mask")?;
    for t in 0..mask.n_tsl() {
        state.metrics.push(MetricRow {
            experiment: cfg.name.clone(),
            stage: "mask".into(),
            region: "all".into(),
            metric: format!("r_realized_tsl{t}"),
            value: mask.realized_acceleration(t),
            seed: cfg.seed,
        });
    }
    state.mask = Some(mask);
    say("mask written");
    if upto == Stage::Mask {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- acquire ---
    let coils = make_coils(cfg.n_coils, ny, nx, seed.derive(3)).context("stage acquire")?;
    let op = MeasurementOperator::new(coils.clone(), state.mask.clone().unwrap())
        .context("stage acquire")?;
    let acq_images = {
        let mut imgs = Array3::<Complex64>::zeros((state.acquired_idx.len(), ny, nx));
        for (k, &t) in state.acquired_idx.iter().enumerate() {
            imgs.index_axis_mut(Axis(0), k)
                .assign(&state.truth_series.images.index_axis(Axis(0), t));
        }
        ContrastImageSet::new(imgs, state.acquired_tsl.clone()).context("stage acquire")?
    };
    let clean = forward(&op, &acq_images).context("stage acquire")?;
    let snr = cfg.snr_db.unwrap_or(f64::INFINITY);
    let roi = state.truth.valid_mask.clone();
    let combined = acq_images.images.index_axis(Axis(0), 0).to_owned();
    let noisy = add_noise(&clean, snr, &roi, &combined, seed.derive(4))
        .context("stage acquire")?;
    state.noise_std = noisy.noise_std;
    if noisy.noise_std > 0.0 {
        state.metrics.push(MetricRow {
            experiment: cfg.name.clone(),
            stage: "acquire".into(),
            region: "all".into(),
            metric: "snr_db".into(),
            value: snr_db(&combined, &roi, noisy.noise_std).context("stage acquire")?,
            seed: cfg.seed,
        });
        state.metrics.push(MetricRow {
            experiment: cfg.name.clone(),
            stage: "acquire".into(),
            region: "all".into(),
            metric: "noise_std".into(),
            value: noisy.noise_std,
            seed: cfg.seed,
        });
    }
    tensor_write(
        &out.join("kspace.qtns"),
        &Tensor::C128(noisy.y.clone().into_dyn()),
    )
    .context("stage acquire")?;
    tensor_write(
        &out.join("coils.qtns"),
        &Tensor::C128(coils.sens.clone().into_dyn()),
    )
    .context("stage acquire")?;
    state.coils = Some(coils);
    state.kspace = Some(noisy);
    say("acquisition written");
    if upto == Stage::Acquire {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- recon ---
    let coils = state.coils.as_ref().unwrap();
    let y = state.kspace.as_ref().unwrap();
    let rec = match cfg.recon_mode {
        ReconModeChoice::ZeroFilled => zero_filled(y, coils).context("stage recon")?,
        ReconModeChoice::Admm => admm_reconstruct(y, coils, &cfg.recon).context("stage recon")?,
        ReconModeChoice::LearnedAdmm => {
            let model = LearnedAdmmModel::identity(cfg.recon.n_iters, 8, cfg.recon.eta);
            learned_admm_reconstruct(y, coils, &model, &cfg.recon).context("stage recon")?
        }
        ReconModeChoice::LplusS => {
            let lps = cfg.lps.as_ref().unwrap();
            let res = ls_reconstruct(y, coils, lps).context("stage recon")?;
            res.reconstruction()
        }
    };
    let rec = ContrastImageSet::new(rec.images, state.acquired_tsl.clone())
        .context("stage recon")?;
    write_c128_3(&out.join("recon.qtns"), &rec.images).context("stage recon")?;
    for (k, &t) in state.acquired_idx.iter().enumerate() {
        let est = rec
            .images
            .index_axis(Axis(0), k)
            .mapv(|v| v.norm());
        let rf = state
            .truth_series
            .images
            .index_axis(Axis(0), t)
            .mapv(|v| v.norm());
        state.metrics.push(MetricRow {
            experiment: cfg.name.clone(),
            stage: "recon".into(),
            region: "all".into(),
            metric: format!("image_nrmse_tsl{t}"),
            value: nrmse(&est, &rf, None).context("stage recon")?,
            seed: cfg.seed,
        });
    }
    state.recon = Some(rec);
    say("reconstruction written");
    if upto == Stage::Recon {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- generate ---
    let rec = state.recon.as_ref().unwrap();
    let series = match cfg.generation_mode {
        GenerationMode::None => rec.clone(),
        GenerationMode::Analytic => {
            generate_full_series_analytic(rec, &cfg.tsl_ms).context("stage generate")?
        }
        GenerationMode::Model => {
            let dir = cfg
                .model
                .as_ref()
                .context("stage generate: generation_mode=model needs a model path")?;
            let model = load_model(&dir.join("model.qtns"), &dir.join("model.json"))
                .context("stage generate")?;
            generate_full_series(rec, &model, &cfg.tsl_ms).context("stage generate")?
        }
    };
    if cfg.generation_mode != GenerationMode::None {
        write_c128_3(&out.join("series.qtns"), &series.images).context("stage generate")?;
        for t in 0..series.n_tsl() {
            let est = series.images.index_axis(Axis(0), t).mapv(|v| v.norm());
            let rf = state
                .truth_series
                .images
                .index_axis(Axis(0), t)
                .mapv(|v| v.norm());
            state.metrics.push(MetricRow {
                experiment: cfg.name.clone(),
                stage: "generate".into(),
                region: "all".into(),
                metric: format!("image_nrmse_tsl{t}"),
                value: nrmse(&est, &rf, None).context("stage generate")?,
                seed: cfg.seed,
            });
        }
        say("generated series written");
    }
    state.series = Some(series);
    if upto == Stage::Generate {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- fit ---
    let map = fit_map(state.series.as_ref().unwrap(), &cfg.fit).context("stage fit")?;
    write_f64(&out.join("fit_t1rho.qtns"), &map.t1rho_ms).context("stage fit")?;
    write_f64(&out.join("fit_s0.qtns"), &map.s0).context("stage fit")?;
    write_f64(
        &out.join("fit_valid.qtns"),
        &map.valid_mask.mapv(|v| if v { 1.0 } else { 0.0 }),
    )
    .context("stage fit")?;
    state.map = Some(map);
    say("fit written");
    if upto == Stage::Fit {
        write_manifest(&state, out)?;
        return Ok(state);
    }

    // --- eval ---
    let map = state.map.as_ref().unwrap();
    let joint = Array2::from_shape_fn((ny, nx), |(i, j)| {
        map.valid_mask[[i, j]] && state.truth.valid_mask[[i, j]]
    });
    let map_nrmse =
        nrmse(&map.t1rho_ms, &state.truth.t1rho_ms, Some(&joint)).context("stage eval")?;
    state.metrics.push(MetricRow {
        experiment: cfg.name.clone(),
        stage: "fit".into(),
        region: "all".into(),
        metric: "t1rho_nrmse".into(),
        value: map_nrmse,
        seed: cfg.seed,
    });
    let max_label = state.labels.iter().cloned().max().unwrap_or(0);
    for label in 1..=max_label {
        let roi = Array2::from_shape_fn((ny, nx), |(i, j)| {
            state.labels[[i, j]] == label && joint[[i, j]]
        });
        if roi.iter().any(|&v| v) {
            state.metrics.push(MetricRow {
                experiment: cfg.name.clone(),
                stage: "fit".into(),
                region: format!("region{label}"),
                metric: "t1rho_nrmse".into(),
                value: nrmse(&map.t1rho_ms, &state.truth.t1rho_ms, Some(&roi))
                    .context("stage eval")?,
                seed: cfg.seed,
            });
        }
    }
    let stats =
        region_stats(&map.t1rho_ms, &joint, &state.labels).context("stage eval")?;
    for row in &stats {
        if row.empty {
            continue;
        }
        for (metric, value) in [
            ("t1rho_mean", row.mean),
            ("t1rho_median", row.median),
            ("t1rho_q1", row.q1),
            ("t1rho_q3", row.q3),
        ] {
            state.metrics.push(MetricRow {
                experiment: cfg.name.clone(),
                stage: "fit".into(),
                region: format!("region{}", row.label),
                metric: metric.into(),
                value,
                seed: cfg.seed,
            });
        }
    }
    write_pgm16(
        &out.join("t1rho_map.pgm"),
        &map.t1rho_ms,
        0.0,
        cfg.fit.t1rho_max,
    )
    .context("stage eval")?;
    let err_map = Array2::from_shape_fn((ny, nx), |(i, j)| {
        if joint[[i, j]] {
            (map.t1rho_ms[[i, j]] - state.truth.t1rho_ms[[i, j]]).abs()
        } else {
            0.0
        }
    });
    write_pgm16(
        &out.join("error_map.pgm"),
        &err_map,
        0.0,
        0.2 * cfg.fit.t1rho_max,
    )
    .context("stage eval")?;
    write_metrics_csv(&out.join("metrics.csv"), &state.metrics).context("stage eval")?;
    write_manifest(&state, out)?;
    say("evaluation written");
    Ok(state)
}

fn write_manifest(state: &PipelineState, out: &Path) -> Result<()> {
    let cfg = &state.cfg;
    let realized: Vec<f64> = state
        .mask
        .as_ref()
        .map(|m| (0..m.n_tsl()).map(|t| m.realized_acceleration(t)).collect())
        .unwrap_or_default();
    let manifest = serde_json::json!({
        "name": cfg.name,
        "config": cfg,
        "r_e": cfg.r_e(),
        "r_tsl": r_tsl(state.acquired_idx.len(), cfg.tsl_ms.len()),
        "acquired_tsl_ms": state.acquired_tsl,
        "realized_acceleration": realized,
        "noise_std": state.noise_std,
        "phantom_hash": format!("{:016x}", phantom_hash(&state.truth)),
        "seed": cfg.seed,
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )
    .context("writing manifest")?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Training job
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJobConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub ny: usize,
    pub nx: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub tsl_ms: Vec<f64>,
    #[serde(default = "default_n_coils")]
    pub n_coils: usize,
    pub r_k: f64,
    /// SNRs cycled over the slices; empty means noiseless.
    #[serde(default)]
    pub snr_db: Vec<f64>,
    #[serde(default = "default_calib_frac")]
    pub calib_frac: f64,
    #[serde(default)]
    pub recon: ReconConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

pub fn load_train_config(path: &Path) -> Result<TrainJobConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: TrainJobConfig = serde_json::from_str(&text).context("parsing config JSON")?;
    if cfg.tsl_ms.len() != 5 {
        bail!("training assumes a 5-point spin-lock grid");
    }
    if cfg.n_train == 0 || cfg.n_val == 0 {
        bail!("n_train and n_val must be positive");
    }
    Ok(cfg)
}

pub struct TrainArtifacts {
    pub model: GenModel,
    pub recon_cfg: ReconConfig,
    pub history: Vec<relaxo::generative::EpochRecord>,
}

/// Synthesize one training slice: random phantom, 2-contrast undersampled
/// acquisition, classical reconstruction as network input, ground-truth
/// middle contrasts as target.
fn build_slice(
    cfg: &TrainJobConfig,
    coils: &CoilProfile,
    slice_seed: Seed,
    snr: f64,
) -> Result<(ndarray::Array3<f64>, ndarray::Array3<f64>, KSpaceData, ContrastImageSet)> {
    let spec = random_phantom(cfg.ny, cfg.nx, slice_seed.derive(0));
    let (truth, _) = rasterize(&spec)?;
    let series = synthesize(&truth, &cfg.tsl_ms, PhaseMode::SmoothQuadratic)?;
    let acq_tsl = vec![cfg.tsl_ms[0], cfg.tsl_ms[4]];
    let mut imgs = Array3::<Complex64>::zeros((2, cfg.ny, cfg.nx));
    imgs.index_axis_mut(Axis(0), 0)
        .assign(&series.images.index_axis(Axis(0), 0));
    imgs.index_axis_mut(Axis(0), 1)
        .assign(&series.images.index_axis(Axis(0), 4));
    let acq = ContrastImageSet::new(imgs, acq_tsl.clone())?;
    let mask = make_mask_set(cfg.ny, cfg.nx, 2, cfg.r_k, cfg.calib_frac, slice_seed.derive(1))?;
    let op = MeasurementOperator::new(coils.clone(), mask)?;
    let clean = forward(&op, &acq)?;
    let combined = acq.images.index_axis(Axis(0), 0).to_owned();
    let noisy = add_noise(&clean, snr, &truth.valid_mask, &combined, slice_seed.derive(2))?;
    let rec = admm_reconstruct(&noisy, coils, &cfg.recon)?;
    let rec = ContrastImageSet::new(rec.images, acq_tsl)?;

    let (ny, nx) = (cfg.ny, cfg.nx);
    let rmags = rec.magnitudes();
    let mut input = ndarray::Array3::<f64>::zeros((2, ny, nx));
    input.index_axis_mut(Axis(0), 0).assign(&rmags.index_axis(Axis(0), 0));
    input.index_axis_mut(Axis(0), 1).assign(&rmags.index_axis(Axis(0), 1));
    let tmags = series.magnitudes();
    let mut target = ndarray::Array3::<f64>::zeros((3, ny, nx));
    for c in 0..3 {
        target
            .index_axis_mut(Axis(0), c)
            .assign(&tmags.index_axis(Axis(0), c + 1));
    }
    Ok((input, target, noisy, acq))
}

/// Build the train/val datasets plus a small reconstruction-tuning set
/// (undersampled data with references, taken from the validation slices).
pub fn build_training_sets(
    cfg: &TrainJobConfig,
    quiet: bool,
) -> Result<(GenDataset, GenDataset, CoilProfile, Vec<ReconTuningSample>)> {
    let seed = Seed::new(cfg.seed);
    let coils = make_coils(cfg.n_coils, cfg.ny, cfg.nx, seed.derive(10))?;
    let snr_of = |k: usize| -> f64 {
        if cfg.snr_db.is_empty() {
            f64::INFINITY
        } else {
            cfg.snr_db[k % cfg.snr_db.len()]
        }
    };
    let build = |count: usize, tag: u64, keep_tuning: usize| -> Result<(GenDataset, Vec<ReconTuningSample>)> {
        let mut inputs = Vec::with_capacity(count);
        let mut targets = Vec::with_capacity(count);
        let mut tuning = Vec::new();
        for k in 0..count {
            let (input, target, y, reference) =
                build_slice(cfg, &coils, seed.derive(tag + k as u64), snr_of(k))?;
            inputs.push(input);
            targets.push(target);
            if tuning.len() < keep_tuning {
                tuning.push(ReconTuningSample { y, reference });
            }
            if !quiet && (k + 1) % 50 == 0 {
                eprintln!("[{}] built {}/{} slices", cfg.name, k + 1, count);
            }
        }
        Ok((GenDataset::new(inputs, targets, cfg.tsl_ms.clone())?, tuning))
    };
    let (train, _) = build(cfg.n_train, 1000, 0)?;
    let (val, tuning) = build(cfg.n_val, 2_000_000, 4)?;
    Ok((train, val, coils, tuning))
}

pub fn run_train(cfg: &TrainJobConfig, out: &Path, quiet: bool) -> Result<TrainArtifacts> {
    let _lock = DirLock::acquire(out)?;
    let (train, val, coils, tuning) = build_training_sets(cfg, quiet)?;
    if !quiet {
        eprintln!("[{}] datasets ready, training", cfg.name);
    }
    let output = train_pipeline(&train, &val, &cfg.recon, &cfg.train, Some((&coils, &tuning)))
        .context("training")?;
    save_model(
        &output.model,
        &out.join("model.qtns"),
        &out.join("model.json"),
    )
    .context("saving model")?;
    let mut csv = String::from("step,epoch,train_loss3,val_loss3\n");
    for r in &output.history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.step, r.epoch, r.train_loss3, r.val_loss3
        ));
    }
    fs::write(out.join("history.csv"), csv).context("writing history")?;
    let manifest = serde_json::json!({
        "name": cfg.name,
        "config": cfg,
        "tuned_reg_weight": output.recon_cfg.reg_weight,
    });
    fs::write(
        out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )
    .context("writing manifest")?;
    Ok(TrainArtifacts {
        model: output.model,
        recon_cfg: output.recon_cfg,
        history: output.history,
    })
}

// ---------------------------------------------------------------------------
// Compare
// ---------------------------------------------------------------------------

/// Aggregate completed experiment directories under `dir`: rank by T1rho-map
/// nRMSE and collect the per-region statistics rows.
pub fn run_compare(dir: &Path, out: &Path, quiet: bool) -> Result<()> {
    let mut runs: Vec<(String, String, Vec<MetricRow>)> = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").is_file() && p.join("metrics.csv").is_file())
        .collect();
    entries.sort();
    for p in entries {
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p.join("manifest.json"))?)?;
        let name = manifest["name"].as_str().unwrap_or("?").to_string();
        let hash = manifest["phantom_hash"].as_str().unwrap_or("").to_string();
        let rows = read_metrics_csv(&p.join("metrics.csv"))?;
        runs.push((name, hash, rows));
    }
    if runs.len() < 2 {
        bail!("compare needs at least two completed experiments in {}", dir.display());
    }
    let hash0 = &runs[0].1;
    if runs.iter().any(|(_, h, _)| h != hash0) {
        bail!("experiments were run on different phantoms (hash mismatch)");
    }

    let mut table: Vec<(String, f64)> = Vec::new();
    for (name, _, rows) in &runs {
        let v = rows
            .iter()
            .find(|r| r.stage == "fit" && r.region == "all" && r.metric == "t1rho_nrmse")
            .map(|r| r.value)
            .with_context(|| format!("{name}: missing t1rho_nrmse"))?;
        table.push((name.clone(), v));
    }
    table.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let mut csv = String::from("rank,experiment,t1rho_nrmse\n");
    for (k, (name, v)) in table.iter().enumerate() {
        csv.push_str(&format!("{},{},{}\n", k + 1, name, v));
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("comparison.csv"), csv).context("writing comparison")?;

    let mut csv = String::from("experiment,stage,region,metric,value,seed\n");
    for (_, _, rows) in &runs {
        for r in rows {
            if r.stage == "fit" && r.region != "all" {
                csv.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.experiment, r.stage, r.region, r.metric, r.value, r.seed
                ));
            }
        }
    }
    fs::write(out.join("region_stats.csv"), csv).context("writing region stats")?;
    if !quiet {
        eprintln!("compared {} runs; best: {}", table.len(), table[0].0);
    }
    Ok(())
}
