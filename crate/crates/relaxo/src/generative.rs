//! Contrast synthesis: closed-form two-point exponential oracle and a
//! densely connected five-block convolutional generator that maps two
//! acquired magnitude contrasts to the three unacquired ones, with the
//! three-step training schedule.

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::acquisition::{CoilProfile, KSpaceData};
use crate::nnet::{
    concat_channels, l2_loss, l2_loss_grad, nrmse_loss, split_channels, AdamState, ConvBlock,
    ConvBlockCache, ConvBlockGrads, RealTensor,
};
use crate::recon::{admm_reconstruct, ReconConfig};
use crate::seed::Seed;
use crate::types::{validate_tsl, ContrastImageSet};
use crate::{Error, Result};

pub const N_BLOCKS: usize = 5;
pub const IN_CH: usize = 2;
pub const OUT_CH: usize = 3;

/// Input channels of block `k` (0-based): the module input plus the outputs
/// of every earlier block, channel-concatenated.
fn block_in_ch(k: usize) -> usize {
    IN_CH + OUT_CH * k
}

/// Five conv blocks; blocks 2-5 consume the concatenation of the input and
/// all previous block outputs. Two channels in, three out.
#[derive(Debug, Clone, PartialEq)]
pub struct GenModel {
    pub blocks: Vec<ConvBlock>,
    pub width: usize,
}

pub struct GenCache {
    input: RealTensor,
    caches: Vec<ConvBlockCache>,
    outputs: Vec<RealTensor>,
}

impl GenModel {
    pub fn he_init(width: usize, seed: Seed) -> Self {
        GenModel {
            blocks: (0..N_BLOCKS)
                .map(|k| ConvBlock::he_init(block_in_ch(k), width, OUT_CH, seed.derive(k as u64)))
                .collect(),
            width,
        }
    }

    pub fn zeros(width: usize) -> Self {
        GenModel {
            blocks: (0..N_BLOCKS)
                .map(|k| {
                    ConvBlock {
                        layers: [
                            crate::nnet::ConvLayer::zeros(width, block_in_ch(k)),
                            crate::nnet::ConvLayer::zeros(width, width),
                            crate::nnet::ConvLayer::zeros(OUT_CH, width),
                        ],
                    }
                })
                .collect(),
            width,
        }
    }

    pub fn n_params(&self) -> usize {
        self.blocks.iter().map(|b| b.n_params()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for b in &self.blocks {
            b.append_params(&mut v);
        }
        v
    }

    pub fn load_flat(&mut self, data: &[f64]) -> Result<()> {
        if data.len() != self.n_params() {
            return Err(Error::shape("parameter vector length mismatch"));
        }
        let mut at = 0;
        for b in &mut self.blocks {
            b.load_params(data, &mut at);
        }
        Ok(())
    }

    pub fn forward_cached(&self, input: &RealTensor) -> Result<(RealTensor, GenCache)> {
        if input.shape()[0] != IN_CH {
            return Err(Error::shape(format!(
                "generator expects {IN_CH} input channels, got {}",
                input.shape()[0]
            )));
        }
        let mut caches = Vec::with_capacity(N_BLOCKS);
        let mut outputs: Vec<RealTensor> = Vec::with_capacity(N_BLOCKS);
        for (k, block) in self.blocks.iter().enumerate() {
            let x = if k == 0 {
                input.clone()
            } else {
                let mut parts: Vec<&RealTensor> = vec![input];
                parts.extend(outputs.iter());
                concat_channels(&parts)
            };
            let (out, cache) = block.forward(&x)?;
            caches.push(cache);
            outputs.push(out);
        }
        let final_out = outputs.last().unwrap().clone();
        Ok((
            final_out,
            GenCache {
                input: input.clone(),
                caches,
                outputs,
            },
        ))
    }

    /// Reverse pass through the dense wiring; returns the flat parameter
    /// gradient (same layout as `params_flat`) and the input gradient.
    pub fn backward(&self, cache: &GenCache, grad_out: &RealTensor) -> Result<(Vec<f64>, RealTensor)> {
        let mut grad_outputs: Vec<RealTensor> = cache
            .outputs
            .iter()
            .map(|o| RealTensor::zeros(o.raw_dim()))
            .collect();
        grad_outputs[N_BLOCKS - 1].assign(grad_out);
        let mut grad_input = RealTensor::zeros(cache.input.raw_dim());
        let mut block_grads: Vec<Option<ConvBlockGrads>> = (0..N_BLOCKS).map(|_| None).collect();
        for k in (0..N_BLOCKS).rev() {
            let g = grad_outputs[k].clone();
            let (g_in, grads) = self.blocks[k].backward(&cache.caches[k], &g)?;
            block_grads[k] = Some(grads);
            if k == 0 {
                grad_input += &g_in;
            } else {
                let mut counts = vec![IN_CH];
                counts.extend(std::iter::repeat(OUT_CH).take(k));
                let parts = split_channels(&g_in, &counts);
                grad_input += &parts[0];
                for (j, p) in parts[1..].iter().enumerate() {
                    grad_outputs[j] += p;
                }
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for g in block_grads.into_iter() {
            g.unwrap().append_flat(&mut flat);
        }
        Ok((flat, grad_input))
    }
}

/// Deterministic forward pass.
pub fn gen_forward(model: &GenModel, input: &RealTensor) -> Result<RealTensor> {
    if input.shape()[1] < 16 || input.shape()[2] < 16 {
        return Err(Error::invalid("generator input must be at least 16x16"));
    }
    Ok(model.forward_cached(input)?.0)
}

/// Closed-form two-point exponential extrapolation. Pixels at or below the
/// floor, or with non-decaying signal, produce 0 and a `false` flag.
pub fn analytic_generate(
    img_a: &Array2<f64>,
    img_b: &Array2<f64>,
    t_a: f64,
    t_b: f64,
    t_out: &[f64],
    floor: f64,
) -> Result<(Vec<Array2<f64>>, Array2<bool>)> {
    if img_a.dim() != img_b.dim() {
        return Err(Error::shape("input image shapes differ"));
    }
    if !(t_a < t_b) {
        return Err(Error::invalid("need t_a < t_b"));
    }
    if t_out.iter().any(|&t| t < 0.0 || t > 10.0 * t_b) {
        return Err(Error::invalid("output time outside [0, 10 * t_b]"));
    }
    if img_a.iter().chain(img_b.iter()).any(|&v| v < 0.0) {
        return Err(Error::invalid("magnitude inputs must be nonnegative"));
    }
    let mut valid = Array2::from_elem(img_a.dim(), false);
    let mut out: Vec<Array2<f64>> = t_out.iter().map(|_| Array2::zeros(img_a.dim())).collect();
    for ((i, j), &a) in img_a.indexed_iter() {
        let b = img_b[[i, j]];
        if a <= floor || b <= floor || a <= b {
            continue;
        }
        valid[[i, j]] = true;
        let t1rho = (t_b - t_a) / (a / b).ln();
        let s0 = a * (t_a / t1rho).exp();
        for (img, &t) in out.iter_mut().zip(t_out.iter()) {
            img[[i, j]] = s0 * (-t / t1rho).exp();
        }
    }
    Ok((out, valid))
}

fn default_lr() -> f64 {
    0.0005
}
fn default_loss_mix() -> f64 {
    0.1
}
fn default_epochs1() -> usize {
    30
}
fn default_epochs2() -> usize {
    5
}
fn default_epochs3() -> usize {
    50
}
fn default_batch() -> usize {
    4
}
fn default_width() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_loss_mix")]
    pub loss_mix: f64,
    #[serde(default = "default_epochs1")]
    pub epochs_step1: usize,
    #[serde(default = "default_epochs2")]
    pub epochs_step2: usize,
    #[serde(default = "default_epochs3")]
    pub epochs_step3: usize,
    #[serde(default = "default_batch")]
    pub batch: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    pub seed: Seed,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: default_lr(),
            loss_mix: default_loss_mix(),
            epochs_step1: default_epochs1(),
            epochs_step2: default_epochs2(),
            epochs_step3: default_epochs3(),
            batch: default_batch(),
            width: default_width(),
            seed: Seed::new(0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(self.loss_mix >= 0.0) {
            return Err(Error::invalid("lr must be > 0 and loss_mix >= 0"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("batch must be >= 1"));
        }
        Ok(())
    }
}

/// Paired training data: 2-channel inputs (first/last contrast magnitudes)
/// and 3-channel targets (middle contrast magnitudes).
#[derive(Debug, Clone)]
pub struct GenDataset {
    pub inputs: Vec<RealTensor>,
    pub targets: Vec<RealTensor>,
    pub tsl_ms: Vec<f64>,
}

impl GenDataset {
    pub fn new(inputs: Vec<RealTensor>, targets: Vec<RealTensor>, tsl_ms: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape("input/target counts differ"));
        }
        validate_tsl(&tsl_ms)?;
        for (i, t) in inputs.iter().zip(targets.iter()) {
            if i.shape()[0] != IN_CH || t.shape()[0] != OUT_CH {
                return Err(Error::shape("dataset channel counts must be 2 (input) / 3 (target)"));
            }
            if i.shape()[1..] != t.shape()[1..] {
                return Err(Error::shape("input/target spatial sizes differ"));
            }
        }
        Ok(GenDataset { inputs, targets, tsl_ms })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Build a pair from a full 5-contrast set: input = first/last
    /// magnitudes, target = middle three.
    pub fn pair_from_series(series: &ContrastImageSet) -> Result<(RealTensor, RealTensor)> {
        if series.n_tsl() != 5 {
            return Err(Error::shape("need a 5-contrast series"));
        }
        let mags = series.magnitudes();
        let (ny, nx) = (series.ny(), series.nx());
        let mut input = RealTensor::zeros((IN_CH, ny, nx));
        input.index_axis_mut(Axis(0), 0).assign(&mags.index_axis(Axis(0), 0));
        input.index_axis_mut(Axis(0), 1).assign(&mags.index_axis(Axis(0), 4));
        let mut target = RealTensor::zeros((OUT_CH, ny, nx));
        for c in 0..OUT_CH {
            target
                .index_axis_mut(Axis(0), c)
                .assign(&mags.index_axis(Axis(0), c + 1));
        }
        Ok((input, target))
    }
}

/// Mean generator loss over a dataset.
pub fn dataset_loss(model: &GenModel, data: &GenDataset) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in data.inputs.iter().zip(data.targets.iter()) {
        let out = model.forward_cached(x)?.0;
        total += l2_loss(&out, t)?;
    }
    Ok(total / data.len() as f64)
}

/// One epoch of minibatch Adam on the generator loss; returns the mean
/// training loss measured during the epoch's own forward passes.
fn train_epoch(
    model: &mut GenModel,
    params: &mut Vec<f64>,
    adam: &mut AdamState,
    data: &GenDataset,
    batch: usize,
    loss_scale: f64,
    rng: &mut impl rand::Rng,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut epoch_loss = 0.0;
    for chunk in order.chunks(batch) {
        let mut grad = vec![0.0; params.len()];
        for &idx in chunk {
            let (out, cache) = model.forward_cached(&data.inputs[idx])?;
            let l = l2_loss(&out, &data.targets[idx])?;
            if !l.is_finite() {
                return Err(Error::TrainingDiverged(adam.t as usize));
            }
            epoch_loss += l;
            let g_out = l2_loss_grad(&out, &data.targets[idx])?;
            let (flat, _) = model.backward(&cache, &g_out)?;
            for (g, f) in grad.iter_mut().zip(flat.iter()) {
                *g += f;
            }
        }
        let scale = loss_scale / chunk.len() as f64;
        for g in grad.iter_mut() {
            *g *= scale;
        }
        adam.step(params, &grad)?;
        model.load_flat(params)?;
    }
    Ok(epoch_loss / data.len() as f64)
}

/// Train a fresh generator alone for `epochs_step2` epochs. Returns the model
/// and the per-epoch mean training loss.
pub fn train_generative(dataset: &GenDataset, cfg: &TrainConfig) -> Result<(GenModel, Vec<f64>)> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("training dataset is empty"));
    }
    let mut model = GenModel::he_init(cfg.width, cfg.seed.derive(1));
    let history = train_generative_into(&mut model, dataset, cfg, cfg.epochs_step2, 1.0)?;
    Ok((model, history))
}

fn train_generative_into(
    model: &mut GenModel,
    dataset: &GenDataset,
    cfg: &TrainConfig,
    epochs: usize,
    loss_scale: f64,
) -> Result<Vec<f64>> {
    let mut params = model.params_flat();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = cfg.seed.derive(2).rng();
    let mut history = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        history.push(train_epoch(
            model, &mut params, &mut adam, dataset, cfg.batch, loss_scale, &mut rng,
        )?);
    }
    Ok(history)
}

/// Undersampled data paired with its fully sampled reference, used to score
/// reconstruction settings during pipeline step 1.
pub struct ReconTuningSample {
    pub y: KSpaceData,
    pub reference: ContrastImageSet,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1, 2, or 3: which schedule step produced this epoch.
    pub step: u8,
    pub epoch: usize,
    pub train_loss3: f64,
    pub val_loss3: f64,
}

pub struct PipelineOutput {
    pub recon_cfg: ReconConfig,
    pub model: GenModel,
    pub history: Vec<EpochRecord>,
}

fn recon_loss1(
    cfg: &ReconConfig,
    tuning: Option<(&CoilProfile, &[ReconTuningSample])>,
) -> Result<f64> {
    let Some((coils, samples)) = tuning else {
        return Ok(0.0);
    };
    let mut total = 0.0;
    for s in samples {
        let rec = admm_reconstruct(&s.y, coils, cfg)?;
        let est = rec.magnitudes();
        let rf = s.reference.magnitudes();
        total += nrmse_loss(&est, &rf)?;
    }
    Ok(total / samples.len() as f64)
}

/// Three-step schedule: (1) reconstruction alone — with a classical solver
/// this is a regularization-weight grid search scored on the tuning samples,
/// repeated epoch counts only fill the history; (2) generator alone;
/// (3) joint objective Loss3 = Loss1 + loss_mix * Loss2 (with frozen
/// classical reconstruction only the generator term carries gradient).
pub fn train_pipeline(
    train_set: &GenDataset,
    val_set: &GenDataset,
    recon_cfg: &ReconConfig,
    cfg: &TrainConfig,
    tuning: Option<(&CoilProfile, &[ReconTuningSample])>,
) -> Result<PipelineOutput> {
    cfg.validate()?;
    recon_cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::invalid("train and validation sets must be nonempty"));
    }
    let mut history = Vec::new();
    let mut model = GenModel::he_init(cfg.width, cfg.seed.derive(1));

    // Step 1: pick reg_weight by grid search when tuning data is available.
    // The generator is frozen at initialization, so Loss3 is constant across
    // the step's epochs; the rows only document the schedule.
    let mut best_cfg = recon_cfg.clone();
    let mut loss1 = recon_loss1(&best_cfg, tuning)?;
    if cfg.epochs_step1 > 0 {
        if let Some((_, samples)) = tuning {
            if !samples.is_empty() {
                for &w in &[0.0, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2] {
                    let mut c = recon_cfg.clone();
                    c.reg_weight = w;
                    let l = recon_loss1(&c, tuning)?;
                    if l < loss1 {
                        loss1 = l;
                        best_cfg = c;
                    }
                }
            }
        }
    }
    if cfg.epochs_step1 > 0 {
        let train_l2 = dataset_loss(&model, train_set)?;
        let val_l2 = dataset_loss(&model, val_set)?;
        for e in 0..cfg.epochs_step1 {
            history.push(EpochRecord {
                step: 1,
                epoch: e,
                train_loss3: loss1 + cfg.loss_mix * train_l2,
                val_loss3: loss1 + cfg.loss_mix * val_l2,
            });
        }
    }

    // Step 2: generator alone on Loss2.
    let mut params = model.params_flat();
    let mut adam = AdamState::new(params.len(), cfg.lr);
    let mut rng = cfg.seed.derive(2).rng();
    for e in 0..cfg.epochs_step2 {
        let train_l2 = train_epoch(
            &mut model, &mut params, &mut adam, train_set, cfg.batch, 1.0, &mut rng,
        )?;
        let val_l2 = dataset_loss(&model, val_set)?;
        history.push(EpochRecord {
            step: 2,
            epoch: e,
            train_loss3: loss1 + cfg.loss_mix * train_l2,
            val_loss3: loss1 + cfg.loss_mix * val_l2,
        });
    }

    // Step 3: joint objective. The classical reconstruction has no trainable
    // parameters, so its term is a constant offset and the generator trains
    // on loss_mix * Loss2; with loss_mix = 0 the generator is left untouched.
    let mut adam3 = AdamState::new(params.len(), cfg.lr);
    let mut rng3 = cfg.seed.derive(3).rng();
    for e in 0..cfg.epochs_step3 {
        let train_l2 = if cfg.loss_mix > 0.0 {
            train_epoch(
                &mut model,
                &mut params,
                &mut adam3,
                train_set,
                cfg.batch,
                cfg.loss_mix,
                &mut rng3,
            )?
        } else {
            dataset_loss(&model, train_set)?
        };
        let val_l2 = dataset_loss(&model, val_set)?;
        history.push(EpochRecord {
            step: 3,
            epoch: e,
            train_loss3: loss1 + cfg.loss_mix * train_l2,
            val_loss3: loss1 + cfg.loss_mix * val_l2,
        });
    }

    Ok(PipelineOutput {
        recon_cfg: best_cfg,
        model,
        history,
    })
}

/// Expand a 2-contrast magnitude set to the full 5-contrast grid with the
/// generator filling the middle three slots.
pub fn generate_full_series(
    acquired: &ContrastImageSet,
    model: &GenModel,
    tsl_full: &[f64],
) -> Result<ContrastImageSet> {
    let input = stack_acquired(acquired, tsl_full)?;
    let out = gen_forward(model, &input)?;
    assemble_series(acquired, tsl_full, &out)
}

/// Same expansion using the closed-form oracle instead of a trained model.
pub fn generate_full_series_analytic(
    acquired: &ContrastImageSet,
    tsl_full: &[f64],
) -> Result<ContrastImageSet> {
    let input = stack_acquired(acquired, tsl_full)?;
    let a = input.index_axis(Axis(0), 0).to_owned();
    let b = input.index_axis(Axis(0), 1).to_owned();
    let peak = a.iter().cloned().fold(0.0f64, f64::max);
    let (mids, _) = analytic_generate(
        &a,
        &b,
        tsl_full[0],
        tsl_full[4],
        &tsl_full[1..4],
        1e-6 * peak,
    )?;
    let (ny, nx) = a.dim();
    let mut out = RealTensor::zeros((OUT_CH, ny, nx));
    for (c, img) in mids.iter().enumerate() {
        out.index_axis_mut(Axis(0), c).assign(img);
    }
    assemble_series(acquired, tsl_full, &out)
}

fn stack_acquired(acquired: &ContrastImageSet, tsl_full: &[f64]) -> Result<RealTensor> {
    if tsl_full.len() != 5 {
        return Err(Error::invalid("full grid must have 5 spin-lock times"));
    }
    validate_tsl(tsl_full)?;
    if acquired.n_tsl() != 2
        || acquired.tsl_ms[0] != tsl_full[0]
        || acquired.tsl_ms[1] != tsl_full[4]
    {
        return Err(Error::invalid(
            "acquired contrasts must sit at the first and last grid points",
        ));
    }
    let mags = acquired.magnitudes();
    let (ny, nx) = (acquired.ny(), acquired.nx());
    let mut input = RealTensor::zeros((IN_CH, ny, nx));
    input.index_axis_mut(Axis(0), 0).assign(&mags.index_axis(Axis(0), 0));
    input.index_axis_mut(Axis(0), 1).assign(&mags.index_axis(Axis(0), 1));
    Ok(input)
}

fn assemble_series(
    acquired: &ContrastImageSet,
    tsl_full: &[f64],
    middles: &RealTensor,
) -> Result<ContrastImageSet> {
    let (ny, nx) = (acquired.ny(), acquired.nx());
    let mags = acquired.magnitudes();
    let mut images = Array3::<Complex64>::zeros((5, ny, nx));
    let fill = |dst: &mut Array3<Complex64>, t: usize, src: ndarray::ArrayView2<f64>| {
        dst.index_axis_mut(Axis(0), t)
            .zip_mut_with(&src, |d, &s| *d = Complex64::new(s, 0.0));
    };
    fill(&mut images, 0, mags.index_axis(Axis(0), 0));
    fill(&mut images, 4, mags.index_axis(Axis(0), 1));
    for c in 0..OUT_CH {
        fill(&mut images, c + 1, middles.index_axis(Axis(0), c));
    }
    ContrastImageSet::new(images, tsl_full.to_vec())
}

/// Contrast-axis acceleration from acquiring `n_acquired` of `n_full` points.
pub fn r_tsl(n_acquired: usize, n_full: usize) -> f64 {
    n_full as f64 / n_acquired as f64
}

/// Net acceleration: k-space times contrast-axis.
pub fn r_effective(r_k: f64, r_tsl: f64) -> f64 {
    r_k * r_tsl
}

/// Serialize a model: flat f64 parameters as a tensor file plus a JSON
/// manifest holding the architecture hyperparameters.
pub fn save_model(model: &GenModel, tensor_path: &std::path::Path, manifest_path: &std::path::Path) -> Result<()> {
    let flat = model.params_flat();
    let arr = ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[flat.len()]), flat)
        .expect("flat vector");
    crate::qtns::tensor_write(tensor_path, &crate::qtns::Tensor::F64(arr))?;
    let manifest = serde_json::json!({
        "kind": "gen-model",
        "n_blocks": N_BLOCKS,
        "in_channels": IN_CH,
        "out_channels": OUT_CH,
        "width": model.width,
    });
    std::fs::write(manifest_path, serde_json::to_string_pretty(&manifest).unwrap())
        .map_err(|e| Error::io(manifest_path, e))
}

pub fn load_model(tensor_path: &std::path::Path, manifest_path: &std::path::Path) -> Result<GenModel> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: serde_json::Value = serde_json::from_str(&text)?;
    let width = manifest["width"]
        .as_u64()
        .ok_or_else(|| Error::invalid("manifest missing width"))? as usize;
    let mut model = GenModel::zeros(width);
    match crate::qtns::tensor_read(tensor_path)? {
        crate::qtns::Tensor::F64(arr) => {
            let flat: Vec<f64> = arr.iter().cloned().collect();
            model.load_flat(&flat)?;
        }
        _ => return Err(Error::invalid("model tensor must be f64")),
    }
    Ok(model)
}
