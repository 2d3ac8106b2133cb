//! Hybrid paired/unpaired training loop.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use ndarray::{Array3, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::augment::resize_to_load;
use crate::data::{build_epoch_schedule, write_atomic, AugmentConfig, BatchSpec, DatasetManifest, ImagePool, Transform};
use crate::error::{Error, Result};
use crate::image::{Domain, ImageTensor};
use crate::losses::{
    mae, mae_grad, relativistic_d_loss_grad, relativistic_g_loss_grad, total_generator_loss, LossReport, LossWeights,
};
use crate::networks::{Checkpoint, Discriminator, DiscriminatorConfig, GeneratorConfig, ModelState};
use crate::nn::Sequential;
use crate::optim::Adam;
use crate::rng::{derive_seed, derived_rng};
use crate::scalar::Scalar;
use crate::selection::SelectionResult;

pub const TRAIN_LOG: &str = "train_log.csv";
pub const EPOCH_LOG: &str = "epoch_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Learning rate for `epoch`: `lr_base` for the first half of training, then
/// a linear ramp reaching 0 at `epoch == epochs_total`.
pub fn lr_at_epoch(epoch: usize, epochs_total: usize, lr_base: f64) -> Result<f64> {
    if epochs_total == 0 || epoch > epochs_total {
        return Err(Error::InvalidInput(format!(
            "epoch {epoch} outside 0..={epochs_total}"
        )));
    }
    let half = epochs_total / 2;
    if epoch < half {
        return Ok(lr_base);
    }
    let decay = (epochs_total - half) as f64;
    Ok(lr_base * ((epochs_total - epoch) as f64 / decay))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Fixed epoch count; when absent it is derived from `iteration_budget`.
    pub epochs_total: Option<usize>,
    pub iteration_budget: usize,
    pub lr_base: f64,
    pub batch_size: usize,
    pub pool_capacity: usize,
    pub seed: u64,
    pub disable_cycle: bool,
    pub disable_identity: bool,
    pub balanced: bool,
    /// Epochs between intermediate checkpoints, 0 for final only.
    pub checkpoint_interval: usize,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    pub fn desk() -> Self {
        Self {
            epochs_total: None,
            iteration_budget: 1000,
            lr_base: 2e-4,
            batch_size: 1,
            pool_capacity: 50,
            seed: 0,
            disable_cycle: false,
            disable_identity: false,
            balanced: true,
            checkpoint_interval: 0,
            weights: LossWeights::default(),
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            augment: AugmentConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        Self {
            generator: GeneratorConfig::paper(),
            discriminator: DiscriminatorConfig::paper(),
            augment: AugmentConfig::paper(),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_base.is_finite() && self.lr_base > 0.0) {
            return Err(Error::Config(format!("lr_base must be > 0, got {}", self.lr_base)));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!("batch_size must be 1, got {}", self.batch_size)));
        }
        match self.epochs_total {
            Some(e) if e == 0 || e % 2 != 0 => {
                return Err(Error::Config(format!("epochs_total must be even and positive, got {e}")));
            }
            None if self.iteration_budget == 0 => {
                return Err(Error::Config("iteration_budget must be positive".into()));
            }
            _ => {}
        }
        self.weights.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.augment.validate()?;
        if self.augment.crop_size % 4 != 0 {
            return Err(Error::Config(format!(
                "crop size {} must be divisible by 4",
                self.augment.crop_size
            )));
        }
        Ok(())
    }

    /// Epoch count for a schedule of `schedule_len` iterations: the explicit
    /// value, or the iteration budget divided by the schedule length, rounded
    /// and bumped up to an even number (at least 2).
    pub fn resolve_epochs(&self, schedule_len: usize) -> usize {
        self.epochs_total.unwrap_or_else(|| {
            let e = (self.iteration_budget as f64 / schedule_len.max(1) as f64).round() as usize;
            let e = e.max(2);
            e + e % 2
        })
    }

    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.disable_cycle {
            w.lambda2 = 0.0;
        }
        if self.disable_identity {
            w.lambda3 = 0.0;
        }
        w
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_toml(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

/// One training example at crop resolution.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub x: Array3<T>,
    pub y: Array3<T>,
    pub paired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub lr: f64,
    /// Weights after ablation switches (a disabled term has weight 0).
    pub weights: LossWeights,
    /// Master seed; the pool draws from a stream derived from it and the step.
    pub seed: u64,
    pub update_generators: bool,
    pub update_discriminators: bool,
}

impl StepOptions {
    pub fn new(lr: f64, weights: LossWeights, seed: u64) -> Self {
        Self {
            lr,
            weights,
            seed,
            update_generators: true,
            update_discriminators: true,
        }
    }
}

/// Everything needed to continue training bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState<T> {
    pub model: ModelState<T>,
    pub opt_g: Adam<T>,
    pub opt_dx: Adam<T>,
    pub opt_dy: Adam<T>,
    pub pool_x: ImagePool<T>,
    pub pool_y: ImagePool<T>,
}

/// Non-model part of a training checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExtra<T> {
    pub opt_g: Adam<T>,
    pub opt_dx: Adam<T>,
    pub opt_dy: Adam<T>,
    pub pool_x: ImagePool<T>,
    pub pool_y: ImagePool<T>,
    pub epochs_total: usize,
    pub config: TrainingConfig,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(config: &TrainingConfig) -> Result<Self> {
        Ok(Self {
            model: ModelState::new(config.generator, config.discriminator, config.seed)?,
            opt_g: Adam::gan_default(),
            opt_dx: Adam::gan_default(),
            opt_dy: Adam::gan_default(),
            pool_x: ImagePool::new(config.pool_capacity),
            pool_y: ImagePool::new(config.pool_capacity),
        })
    }

    pub fn save(&self, path: &Path, config: &TrainingConfig, epochs_total: usize) -> Result<()> {
        let extra = TrainingExtra {
            opt_g: self.opt_g.clone(),
            opt_dx: self.opt_dx.clone(),
            opt_dy: self.opt_dy.clone(),
            pool_x: self.pool_x.clone(),
            pool_y: self.pool_y.clone(),
            epochs_total,
            config: config.clone(),
        };
        Checkpoint::new(self.model.clone(), Some(extra)).save(path)
    }

    /// Returns the state with the configuration and epoch count it was saved under.
    pub fn load(path: &Path) -> Result<(Self, TrainingConfig, usize)> {
        let ckpt = Checkpoint::<T, TrainingExtra<T>>::load(path)?;
        let extra = ckpt
            .training
            .ok_or_else(|| Error::Format(format!("{} holds no training state", path.display())))?;
        Ok((
            Self {
                model: ckpt.model,
                opt_g: extra.opt_g,
                opt_dx: extra.opt_dx,
                opt_dy: extra.opt_dy,
                pool_x: extra.pool_x,
                pool_y: extra.pool_y,
            },
            extra.config,
            extra.epochs_total,
        ))
    }
}

fn add_into<T: Scalar>(acc: &mut Array3<T>, g: &Array3<T>) {
    Zip::from(acc).and(g).for_each(|a, &b| *a = *a + b);
}

fn scaled<T: Scalar>(mut g: Array3<T>, w: f64) -> Array3<T> {
    let w = T::of(w);
    g.mapv_inplace(|v| v * w);
    g
}

/// Generator-side losses of one batch and their gradients.
#[derive(Debug, Clone)]
pub struct GeneratorGradients<T> {
    /// Every generator term and `total`; `gan_d` is left at 0.
    pub report: LossReport,
    pub g_xy: Sequential<T>,
    pub g_yx: Sequential<T>,
    pub fake_y: Array3<T>,
    pub fake_x: Array3<T>,
}

/// Evaluates the weighted generator objective on `batch` and backpropagates
/// it into both generators. Discriminators are only read.
pub fn generator_gradients<T: Scalar>(
    model: &ModelState<T>,
    batch: &Batch<T>,
    weights: &LossWeights,
) -> Result<GeneratorGradients<T>> {
    let w = *weights;
    w.validate()?;
    let m = model;
    let (x, y) = (&batch.x, &batch.y);
    if x.dim() != y.dim() {
        return Err(Error::InvalidInput(format!(
            "batch images differ in shape: {:?} vs {:?}",
            x.dim(),
            y.dim()
        )));
    }
    let mut g_xy = m.g_xy.net.zeros_like();
    let mut g_yx = m.g_yx.net.zeros_like();
    let mut report = LossReport {
        is_paired: batch.paired,
        ..LossReport::default()
    };

    let (fake_y, t_fake_y) = m.g_xy.forward_traced(x)?;
    let (fake_x, t_fake_x) = m.g_yx.forward_traced(y)?;

    // Real logits carry no generator gradient.
    let cy_real = m.d_y.logits(y)?;
    let cx_real = m.d_x.logits(x)?;
    let (cy_fake, t_cy_fake) = m.d_y.logits_traced(&fake_y)?;
    let (cx_fake, t_cx_fake) = m.d_x.logits_traced(&fake_x)?;
    let (gan_y, _, g_cy_fake) = relativistic_g_loss_grad(&cy_real, &cy_fake)?;
    let (gan_x, _, g_cx_fake) = relativistic_g_loss_grad(&cx_real, &cx_fake)?;
    report.gan_g = gan_y.as_f64() + gan_x.as_f64();
    let mut sink_y = m.d_y.net.zeros_like();
    let mut sink_x = m.d_x.net.zeros_like();
    let mut d_fake_y = m.d_y.net.backward(&t_cy_fake, scaled(g_cy_fake, w.lambda1), &mut sink_y);
    let mut d_fake_x = m.d_x.net.backward(&t_cx_fake, scaled(g_cx_fake, w.lambda1), &mut sink_x);

    if w.lambda2 > 0.0 {
        let (rec_x, t_rec_x) = m.g_yx.forward_traced(&fake_y)?;
        let (rec_y, t_rec_y) = m.g_xy.forward_traced(&fake_x)?;
        report.cycle = mae(&rec_x, x)?.as_f64() + mae(&rec_y, y)?.as_f64();
        add_into(&mut d_fake_y, &m.g_yx.net.backward(&t_rec_x, scaled(mae_grad(&rec_x, x)?, w.lambda2), &mut g_yx));
        add_into(&mut d_fake_x, &m.g_xy.net.backward(&t_rec_y, scaled(mae_grad(&rec_y, y)?, w.lambda2), &mut g_xy));
    }
    if w.lambda3 > 0.0 {
        let (idt_x, t_idt_x) = m.g_yx.forward_traced(x)?;
        let (idt_y, t_idt_y) = m.g_xy.forward_traced(y)?;
        report.identity = mae(&idt_x, x)?.as_f64() + mae(&idt_y, y)?.as_f64();
        m.g_yx.net.backward(&t_idt_x, scaled(mae_grad(&idt_x, x)?, w.lambda3), &mut g_yx);
        m.g_xy.net.backward(&t_idt_y, scaled(mae_grad(&idt_y, y)?, w.lambda3), &mut g_xy);
    }
    if batch.paired {
        report.l1_paired = mae(&fake_y, y)?.as_f64() + mae(&fake_x, x)?.as_f64();
        add_into(&mut d_fake_y, &scaled(mae_grad(&fake_y, y)?, w.lambda4));
        add_into(&mut d_fake_x, &scaled(mae_grad(&fake_x, x)?, w.lambda4));
    }
    m.g_xy.net.backward(&t_fake_y, d_fake_y, &mut g_xy);
    m.g_yx.net.backward(&t_fake_x, d_fake_x, &mut g_yx);
    report.total = total_generator_loss(&report, &w, batch.paired)?;
    Ok(GeneratorGradients {
        report,
        g_xy,
        g_yx,
        fake_y,
        fake_x,
    })
}

/// Relativistic critic loss of `d` on one real and one fake image, with its
/// parameter gradient.
pub fn discriminator_gradients<T: Scalar>(
    d: &Discriminator<T>,
    real: &Array3<T>,
    fake: &Array3<T>,
) -> Result<(f64, Sequential<T>)> {
    let (c_real, t_real) = d.logits_traced(real)?;
    let (c_fake, t_fake) = d.logits_traced(fake)?;
    let (loss, g_real, g_fake) = relativistic_d_loss_grad(&c_real, &c_fake)?;
    let mut grads = d.net.zeros_like();
    d.net.backward(&t_real, g_real, &mut grads);
    d.net.backward(&t_fake, g_fake, &mut grads);
    Ok((loss.as_f64(), grads))
}

/// One optimisation step: joint generator update, then D_X, then D_Y.
///
/// All losses are evaluated on the pre-update networks. On a non-finite
/// loss nothing is updated.
pub fn train_step<T: Scalar>(state: &mut TrainState<T>, batch: &Batch<T>, opts: &StepOptions) -> Result<LossReport> {
    let step = state.model.step;
    let gen = generator_gradients(&state.model, batch, &opts.weights)?;
    let mut report = gen.report;
    let non_finite = |report: &LossReport| Error::NonFinite {
        step,
        detail: format!("{report:?}"),
    };
    // Checked before the pools are touched so that a failed step changes nothing.
    if !report.all_finite() {
        return Err(non_finite(&report));
    }

    // Critics see fakes through the history pools.
    let mut pool_rng = derived_rng(opts.seed, step, 3);
    let pooled_y = state.pool_y.query(&gen.fake_y, &mut pool_rng);
    let pooled_x = state.pool_x.query(&gen.fake_x, &mut pool_rng);
    let (dl_x, d_x_grads) = discriminator_gradients(&state.model.d_x, &batch.x, &pooled_x)?;
    let (dl_y, d_y_grads) = discriminator_gradients(&state.model.d_y, &batch.y, &pooled_y)?;
    report.gan_d = dl_x + dl_y;

    if !report.all_finite() {
        return Err(non_finite(&report));
    }

    let ModelState { g_xy, g_yx, d_x, d_y, .. } = &mut state.model;
    if opts.update_generators {
        let mut params = g_xy.net.params_mut();
        params.extend(g_yx.net.params_mut());
        let mut grads = gen.g_xy.params();
        grads.extend(gen.g_yx.params());
        state.opt_g.step_slices(&mut params, &grads, opts.lr);
    }
    if opts.update_discriminators {
        state.opt_dx.step(&mut d_x.net, &d_x_grads, opts.lr);
        state.opt_dy.step(&mut d_y.net, &d_y_grads, opts.lr);
    }
    state.model.step += 1;
    Ok(report)
}

/// Decoded images, already resized to the load size.
struct ImageCache<T> {
    augment: AugmentConfig,
    images: HashMap<PathBuf, ImageTensor<T>>,
}

impl<T: Scalar> ImageCache<T> {
    fn get(&mut self, path: &Path, domain: Domain) -> Result<&ImageTensor<T>> {
        if !self.images.contains_key(path) {
            let img = ImageTensor::<T>::load_png(path, domain)?;
            self.images.insert(path.to_path_buf(), resize_to_load(&img, &self.augment));
        }
        Ok(&self.images[path])
    }

    fn crop(&mut self, path: &Path, domain: Domain, t: &Transform) -> Result<Array3<T>> {
        let crop = self.augment.crop_size;
        Ok(t.apply(self.get(path, domain)?, crop)?.data)
    }

    fn batch(&mut self, manifest: &DatasetManifest, spec: BatchSpec, rng: &mut impl Rng) -> Result<Batch<T>> {
        let cfg = self.augment;
        match spec {
            BatchSpec::Paired { index } => {
                let e = &manifest.paired[index];
                let t = Transform::sample(&cfg, rng);
                Ok(Batch {
                    x: self.crop(&e.x, Domain::X, &t)?,
                    y: self.crop(&e.y, Domain::Y, &t)?,
                    paired: true,
                })
            }
            BatchSpec::Unpaired { x, y } => {
                let tx = Transform::sample(&cfg, rng);
                let ty = Transform::sample(&cfg, rng);
                Ok(Batch {
                    x: self.crop(&manifest.unpaired_x[x].path, Domain::X, &tx)?,
                    y: self.crop(&manifest.unpaired_y[y].path, Domain::Y, &ty)?,
                    paired: false,
                })
            }
        }
    }
}

/// One row of the per-iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub paired: bool,
    pub gan_g: f64,
    pub gan_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub l1_paired: f64,
    pub total: f64,
    pub w_gan: f64,
    pub w_cycle: f64,
    pub w_identity: f64,
    pub w_paired: f64,
}

/// Per-epoch means of the step rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub steps: usize,
    pub paired_steps: usize,
    pub lr: f64,
    pub gan_g: f64,
    pub gan_d: f64,
    pub cycle: f64,
    pub identity: f64,
    pub l1_paired: f64,
    pub total: f64,
}

fn csv_appender(path: &Path) -> Result<csv::Writer<File>> {
    let fresh = !path.exists() || std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
}

pub fn read_step_log(path: &Path) -> Result<Vec<StepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub epochs_total: usize,
    pub steps: u64,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub last_epoch: Option<EpochRow>,
}

/// Trains on `manifest` (plus the pairs named by `selection`) and writes logs
/// and checkpoints under `out_dir`. With `resume`, training continues from a
/// checkpoint written by an earlier run with the same configuration.
pub fn train<T: Scalar>(
    config: &TrainingConfig,
    manifest: &DatasetManifest,
    selection: Option<&SelectionResult>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    config.validate()?;
    let manifest = match selection {
        Some(sel) => manifest.with_selection(sel)?,
        None => manifest.clone(),
    };
    manifest.check_files()?;
    let schedule_len = build_epoch_schedule(&manifest, config.seed, config.balanced)?.len();
    let epochs_total = config.resolve_epochs(schedule_len);

    let mut state = match resume {
        None => TrainState::<T>::new(config)?,
        Some(path) => {
            let (state, saved, saved_epochs) = TrainState::<T>::load(path)?;
            let comparable = TrainingConfig {
                checkpoint_interval: config.checkpoint_interval,
                ..saved
            };
            if &comparable != config || saved_epochs != epochs_total {
                return Err(Error::Config(format!(
                    "{} was written with a different training configuration",
                    path.display()
                )));
            }
            state
        }
    };

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_atomic(&out_dir.join(CONFIG_FILE), config.to_toml()?.as_bytes())?;
    let ckpt_dir = out_dir.join("checkpoints");
    let mut step_log = csv_appender(&out_dir.join(TRAIN_LOG))?;
    let mut epoch_log = csv_appender(&out_dir.join(EPOCH_LOG))?;

    let weights = config.effective_weights();
    let mut cache = ImageCache {
        augment: config.augment,
        images: HashMap::new(),
    };
    let mut checkpoints = Vec::new();
    let mut last_epoch = None;

    for epoch in state.model.epoch as usize..epochs_total {
        let lr = lr_at_epoch(epoch, epochs_total, config.lr_base)?;
        let schedule = build_epoch_schedule(&manifest, derive_seed(config.seed, epoch as u64, 0), config.balanced)?;
        let opts = StepOptions::new(lr, weights, config.seed);
        let mut sum = EpochRow {
            epoch,
            steps: 0,
            paired_steps: 0,
            lr,
            gan_g: 0.0,
            gan_d: 0.0,
            cycle: 0.0,
            identity: 0.0,
            l1_paired: 0.0,
            total: 0.0,
        };
        for spec in &schedule.entries {
            let step = state.model.step;
            let mut rng = derived_rng(config.seed, step, 2);
            let batch = cache.batch(&manifest, *spec, &mut rng)?;
            let r = train_step(&mut state, &batch, &opts)?;
            step_log.serialize(StepRow {
                step,
                epoch,
                lr,
                paired: r.is_paired,
                gan_g: r.gan_g,
                gan_d: r.gan_d,
                cycle: r.cycle,
                identity: r.identity,
                l1_paired: r.l1_paired,
                total: r.total,
                w_gan: weights.lambda1,
                w_cycle: weights.lambda2,
                w_identity: weights.lambda3,
                w_paired: weights.lambda4,
            })?;
            sum.steps += 1;
            sum.paired_steps += usize::from(r.is_paired);
            sum.gan_g += r.gan_g;
            sum.gan_d += r.gan_d;
            sum.cycle += r.cycle;
            sum.identity += r.identity;
            sum.l1_paired += r.l1_paired;
            sum.total += r.total;
        }
        let n = sum.steps.max(1) as f64;
        let row = EpochRow {
            gan_g: sum.gan_g / n,
            gan_d: sum.gan_d / n,
            cycle: sum.cycle / n,
            identity: sum.identity / n,
            l1_paired: sum.l1_paired / n,
            total: sum.total / n,
            ..sum
        };
        epoch_log.serialize(&row)?;
        step_log.flush().map_err(|e| Error::io(out_dir.join(TRAIN_LOG), e))?;
        epoch_log.flush().map_err(|e| Error::io(out_dir.join(EPOCH_LOG), e))?;
        last_epoch = Some(row);
        state.model.epoch = epoch as u64 + 1;
        let done = epoch + 1;
        if config.checkpoint_interval > 0 && done % config.checkpoint_interval == 0 && done < epochs_total {
            let path = ckpt_dir.join(format!("epoch_{done:04}.json"));
            state.save(&path, config, epochs_total)?;
            checkpoints.push(path);
        }
    }

    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    state.save(&final_checkpoint, config, epochs_total)?;
    Ok(TrainSummary {
        epochs_total,
        steps: state.model.step,
        final_checkpoint,
        checkpoints,
        last_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_spot_values() {
        assert_eq!(lr_at_epoch(0, 200, 2e-4).unwrap(), 2e-4);
        assert_eq!(lr_at_epoch(100, 200, 2e-4).unwrap(), 2e-4);
        assert_eq!(lr_at_epoch(150, 200, 2e-4).unwrap(), 1e-4);
        assert_eq!(lr_at_epoch(200, 200, 2e-4).unwrap(), 0.0);
        assert!(matches!(lr_at_epoch(201, 200, 2e-4), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn lr_is_monotone_and_continuous() {
        let lrs: Vec<f64> = (0..=10).map(|e| lr_at_epoch(e, 10, 1.0).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(lrs[5], 1.0);
        assert!((lrs[6] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::desk();
        c.validate().unwrap();
        c.epochs_total = Some(3);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.epochs_total = Some(4);
        c.batch_size = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.batch_size = 1;
        c.lr_base = 0.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn epochs_from_budget() {
        let c = TrainingConfig::desk();
        assert_eq!(c.resolve_epochs(40), 26);
        assert_eq!(c.resolve_epochs(80), 14);
        assert_eq!(c.resolve_epochs(5000), 2);
        let fixed = TrainingConfig {
            epochs_total: Some(4),
            ..c
        };
        assert_eq!(fixed.resolve_epochs(80), 4);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = TrainingConfig {
            epochs_total: Some(8),
            disable_cycle: true,
            ..TrainingConfig::paper()
        };
        let back = TrainingConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        assert!(matches!(TrainingConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        let partial = TrainingConfig::from_toml("seed = 7\n").unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.lr_base, 2e-4);
    }

    #[test]
    fn ablation_zeroes_weights() {
        let c = TrainingConfig {
            disable_cycle: true,
            disable_identity: true,
            ..TrainingConfig::desk()
        };
        let w = c.effective_weights();
        assert_eq!((w.lambda1, w.lambda2, w.lambda3, w.lambda4), (1.0, 0.0, 0.0, 150.0));
    }
}
