//! The alternating optimization loop: encoder+decoder steps on the combined
//! objective, one critic step per `decoder_steps_per_critic_step` steps, with
//! weight clipping after every critic update.

mod config;
mod log;
mod optim;

pub use config::{apply_override, load_train_config};
pub use log::{read_log, LogWriter, TrainLogRecord, LOG_HEADER};
pub use optim::adam_step;

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array4, ArrayD};
use rand::seq::SliceRandom;

use crate::autodiff::{Element, Graph};
use crate::datasets::{load_cache, re_rotate_split, DatasetSplit, SourceTag};
use crate::error::{Error, Result};
use crate::losses::{
    angle_loss_node, critic_loss_node, decoder_adv_node, recon_loss_node, total_loss_node,
    AdvMode, LossBreakdown, LossWeights,
};
use crate::model::{
    critic_forward, decoder_forward, encoder_forward, save_checkpoint, split_latent_graph,
    Checkpoint, Model, NetworkSpec, OptimizerState,
};
use crate::rng::{derived_rng, domain};

/// All hyperparameters of one training run. Defaults follow the published
/// schedule: 300 epochs at lr 1e-4, multiplied by 0.1 after epoch 200, weight
/// decay 1e-5, one critic update per 4 decoder steps.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub weight_decay: f64,
    pub decoder_steps_per_critic_step: usize,
    pub batch_size: usize,
    pub clip_c: f64,
    pub seed: u64,
    pub content_dim: usize,
    pub weights: LossWeights,
    /// `None` derives the wrap choice from the dataset: wrapped differences
    /// for full-circle rotations, raw differences otherwise.
    pub wrap: Option<bool>,
    /// Replace the Euclidean norm in the reconstruction loss by its square.
    pub squared_l2: bool,
    /// Use the printed sign convention for the adversarial pair.
    pub paper_literal_adv: bool,
    /// Re-draw rotations every epoch instead of once at build time.
    pub re_rotate_per_epoch: bool,
    /// Noise level for per-epoch re-rotation of synthetic stacks.
    pub re_rotate_noise_std: f64,
    pub train_cache: PathBuf,
    pub test_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Save a checkpoint every this many epochs (0 = final only).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 300,
            lr: 1e-4,
            lr_decay_epoch: 200,
            lr_decay_factor: 0.1,
            weight_decay: 1e-5,
            decoder_steps_per_critic_step: 4,
            batch_size: 128,
            clip_c: 0.01,
            seed: 0,
            content_dim: 32,
            weights: LossWeights::default(),
            wrap: None,
            squared_l2: false,
            paper_literal_adv: false,
            re_rotate_per_epoch: false,
            re_rotate_noise_std: 0.1,
            train_cache: PathBuf::new(),
            test_cache: None,
            out_dir: PathBuf::from("runs"),
            checkpoint_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return Err(Error::Config("lr_decay_factor must be in (0, 1]".into()));
        }
        if self.decoder_steps_per_critic_step < 1 {
            return Err(Error::Config(
                "decoder_steps_per_critic_step must be at least 1".into(),
            ));
        }
        if !(self.clip_c > 0.0) {
            return Err(Error::Config("clip_c must be positive".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.content_dim < 1 {
            return Err(Error::Config("content_dim must be at least 1".into()));
        }
        self.weights.validate()
    }

    pub fn adv_mode(&self) -> AdvMode {
        if self.paper_literal_adv {
            AdvMode::PaperLiteral
        } else {
            AdvMode::Standard
        }
    }
}

/// Learning rate for an epoch: the base rate before `lr_decay_epoch`, times
/// `lr_decay_factor` from then on (a single step decay).
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Argument(format!(
            "epoch {epoch} outside schedule of {} epochs",
            cfg.epochs
        )));
    }
    Ok(if epoch < cfg.lr_decay_epoch {
        cfg.lr
    } else {
        cfg.lr * cfg.lr_decay_factor
    })
}

/// What one optimizer step produced.
#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    /// Parameters were updated.
    Applied(LossBreakdown),
    /// Non-finite loss: the step was skipped and nothing was updated.
    Aborted,
}

/// Owns the model, optimizer state, and progress counters of one run.
pub struct Trainer {
    pub model: Model,
    pub opt: OptimizerState,
    pub cfg: TrainConfig,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps; the critic cadence phase lives here.
    pub global_step: u64,
    wrap: bool,
    consecutive_aborts: u32,
}

impl Trainer {
    /// Fresh model for the given corpus geometry.
    pub fn new(cfg: TrainConfig, input_size: usize, source: SourceTag) -> Result<Self> {
        cfg.validate()?;
        let spec = NetworkSpec::with_defaults(input_size, cfg.content_dim)?;
        let model = Model::init(spec, cfg.seed)?;
        let opt = OptimizerState::zeros_like(&model);
        let wrap = cfg.wrap.unwrap_or(source.circular_angles());
        Ok(Trainer {
            model,
            opt,
            cfg,
            epoch: 0,
            global_step: 0,
            wrap,
            consecutive_aborts: 0,
        })
    }

    /// Continues a checkpointed run. The checkpoint's seed wins so the epoch
    /// shuffle streams continue exactly; everything else comes from `cfg`.
    pub fn from_checkpoint(
        ckpt: Checkpoint,
        mut cfg: TrainConfig,
        source: SourceTag,
    ) -> Result<Self> {
        cfg.validate()?;
        if ckpt.model.spec.content_dim != cfg.content_dim {
            return Err(Error::Config(format!(
                "checkpoint content dimension {} differs from configured {}",
                ckpt.model.spec.content_dim, cfg.content_dim
            )));
        }
        cfg.seed = ckpt.seed;
        let wrap = cfg.wrap.unwrap_or(source.circular_angles());
        Ok(Trainer {
            model: ckpt.model,
            opt: ckpt.optimizer,
            cfg,
            epoch: ckpt.epoch,
            global_step: ckpt.global_step,
            wrap,
            consecutive_aborts: 0,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            optimizer: self.opt.clone(),
            epoch: self.epoch,
            global_step: self.global_step,
            seed: self.cfg.seed,
        }
    }

    /// Encoder+decoder update on the combined objective. The critic
    /// contributes gradients through the adversarial term but is not updated
    /// here.
    fn ae_substep(
        &mut self,
        inputs: &Array4<f32>,
        targets: &Array4<f32>,
        thetas: &Array1<f32>,
        lr: f64,
    ) -> Result<Option<(LossBreakdown, ArrayD<f32>)>> {
        let w = self.cfg.weights;
        let mode = self.cfg.adv_mode();
        let mut g = Graph::<f32>::new();
        let enc_bound = self.model.encoder.bind(&mut g);
        let dec_bound = self.model.decoder.bind(&mut g);
        let crit_bound = self.model.critic.bind(&mut g);

        let x = g.input(inputs.clone().into_dyn());
        let t = g.input(targets.clone().into_dyn());
        let th = g.input(thetas.clone().into_dyn());

        let latent = encoder_forward(&mut g, &self.model.spec, &enc_bound, x)?;
        let (theta_hat, z) = split_latent_graph(&mut g, latent, self.model.spec.content_dim)?;
        let xhat = decoder_forward(&mut g, &self.model.spec, &dec_bound, z)?;

        let angle = angle_loss_node(&mut g, th, theta_hat, self.wrap)?;
        let rec = recon_loss_node(&mut g, t, xhat, self.cfg.squared_l2)?;
        let scores_fake = critic_forward(&mut g, &self.model.spec, &crit_bound, xhat)?;
        let adv = decoder_adv_node(&mut g, scores_fake, mode)?;

        let adv_term = (w.w_adv != 0.0).then_some(adv);
        let total = total_loss_node(&mut g, angle, rec, adv_term, &w)?;

        let breakdown = LossBreakdown {
            angle: g.scalar(angle)?.as_f64(),
            rec: g.scalar(rec)?.as_f64(),
            adv_decoder: g.scalar(adv)?.as_f64(),
            adv_critic: None,
            total: g.scalar(total)?.as_f64(),
        };
        if !breakdown.total.is_finite() {
            return Ok(None);
        }

        let reconstruction = g.value(xhat).to_owned();
        let grads = g.backward(total)?;
        let enc_grads: Vec<Option<&ArrayD<f32>>> =
            enc_bound.ids().iter().map(|&id| grads.get(id)).collect();
        let dec_grads: Vec<Option<&ArrayD<f32>>> =
            dec_bound.ids().iter().map(|&id| grads.get(id)).collect();
        adam_step(
            &mut self.model.encoder,
            &enc_grads,
            &mut self.opt.encoder,
            lr,
            self.cfg.weight_decay,
        )?;
        adam_step(
            &mut self.model.decoder,
            &dec_grads,
            &mut self.opt.decoder,
            lr,
            self.cfg.weight_decay,
        )?;
        Ok(Some((breakdown, reconstruction)))
    }

    /// Critic update on its own objective: reconstructions enter as plain
    /// inputs, so no gradient can reach the decoder, and the weights are
    /// clipped into `[-c, c]` afterwards.
    fn critic_substep(
        &mut self,
        fake: ArrayD<f32>,
        targets: &Array4<f32>,
        lr: f64,
    ) -> Result<Option<f64>> {
        let mode = self.cfg.adv_mode();
        let mut g = Graph::<f32>::new();
        let crit_bound = self.model.critic.bind(&mut g);
        let fake_in = g.input(fake);
        let real_in = g.input(targets.clone().into_dyn());
        let scores_fake = critic_forward(&mut g, &self.model.spec, &crit_bound, fake_in)?;
        let scores_real = critic_forward(&mut g, &self.model.spec, &crit_bound, real_in)?;
        let objective = critic_loss_node(&mut g, scores_real, scores_fake, mode)?;
        let value = g.scalar(objective)?.as_f64();
        if !value.is_finite() {
            return Ok(None);
        }
        let grads = g.backward(objective)?;
        let crit_grads: Vec<Option<&ArrayD<f32>>> =
            crit_bound.ids().iter().map(|&id| grads.get(id)).collect();
        adam_step(
            &mut self.model.critic,
            &crit_grads,
            &mut self.opt.critic,
            lr,
            self.cfg.weight_decay,
        )?;
        self.model.critic.clip(self.cfg.clip_c as f32);
        Ok(Some(value))
    }

    /// One optimizer step over a batch; every
    /// `decoder_steps_per_critic_step`-th step also updates the critic.
    /// Three consecutive non-finite steps halt training.
    pub fn step(
        &mut self,
        inputs: &Array4<f32>,
        targets: &Array4<f32>,
        thetas: &Array1<f32>,
        lr: f64,
    ) -> Result<StepOutcome> {
        let ae = self.ae_substep(inputs, targets, thetas, lr)?;
        let Some((mut breakdown, reconstruction)) = ae else {
            return self.record_abort();
        };

        let step_index = self.global_step + 1;
        if step_index % self.cfg.decoder_steps_per_critic_step as u64 == 0 {
            match self.critic_substep(reconstruction, targets, lr)? {
                Some(value) => breakdown.adv_critic = Some(value),
                None => return self.record_abort(),
            }
        }

        self.consecutive_aborts = 0;
        self.global_step = step_index;
        Ok(StepOutcome::Applied(breakdown))
    }

    fn record_abort(&mut self) -> Result<StepOutcome> {
        self.consecutive_aborts += 1;
        self.global_step += 1;
        if self.consecutive_aborts >= 3 {
            return Err(Error::Numeric(
                "3 consecutive steps produced non-finite losses; halting".into(),
            ));
        }
        Ok(StepOutcome::Aborted)
    }

    /// Runs the configured schedule over a training split, appending one log
    /// row per step and checkpointing at the configured cadence plus at
    /// completion. Returns the path of the final checkpoint.
    pub fn run(
        &mut self,
        train: &DatasetSplit,
        log: &mut LogWriter,
        out_dir: &Path,
    ) -> Result<PathBuf> {
        if train.is_empty() {
            return Err(Error::Argument("training split is empty".into()));
        }
        let size = train.image_size()?;
        if size != self.model.spec.input_size {
            return Err(Error::Dimension(format!(
                "dataset images are {size} px but the model expects {}",
                self.model.spec.input_size
            )));
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let started = Instant::now();
        let n = train.len();
        let batch = self.cfg.batch_size.min(n);

        while (self.epoch as usize) < self.cfg.epochs {
            let epoch = self.epoch as usize;
            let lr = lr_at(epoch, &self.cfg)?;

            let working: Cow<'_, DatasetSplit> = if self.cfg.re_rotate_per_epoch && epoch > 0 {
                Cow::Owned(re_rotate_split(
                    train,
                    self.cfg.seed,
                    self.epoch,
                    self.cfg.re_rotate_noise_std,
                )?)
            } else {
                Cow::Borrowed(train)
            };

            let mut order: Vec<usize> = (0..n).collect();
            let mut shuffle_rng = derived_rng(domain::SHUFFLE, self.cfg.seed, self.epoch);
            order.shuffle(&mut shuffle_rng);

            for chunk in order.chunks(batch) {
                let (inputs, targets, thetas) = gather_batch(&working, chunk, self.wrap);
                let outcome = self.step(&inputs, &targets, &thetas, lr)?;
                let losses = match outcome {
                    StepOutcome::Applied(b) => b,
                    StepOutcome::Aborted => LossBreakdown {
                        angle: f64::NAN,
                        rec: f64::NAN,
                        adv_decoder: f64::NAN,
                        adv_critic: None,
                        total: f64::NAN,
                    },
                };
                log.append(&TrainLogRecord {
                    epoch: self.epoch,
                    step: self.global_step,
                    losses,
                    lr,
                    seconds: started.elapsed().as_secs_f64(),
                })?;
            }
            self.epoch += 1;

            if self.cfg.checkpoint_every > 0
                && (self.epoch as usize) % self.cfg.checkpoint_every == 0
                && (self.epoch as usize) < self.cfg.epochs
            {
                let path = out_dir.join(format!("epoch-{:04}.ckpt", self.epoch));
                save_checkpoint(&self.checkpoint(), &path)?;
            }
        }

        log.flush()?;
        let final_path = out_dir.join("final.ckpt");
        save_checkpoint(&self.checkpoint(), &final_path)?;
        Ok(final_path)
    }
}

/// Copies selected samples into batch tensors. For wrapped training the
/// ground-truth angle is reduced to `[-pi, pi)` up front, matching the
/// wrapped difference the loss applies.
pub fn gather_batch(
    split: &DatasetSplit,
    indices: &[usize],
    wrap: bool,
) -> (Array4<f32>, Array4<f32>, Array1<f32>) {
    let size = split.samples[indices[0]].target.height();
    let b = indices.len();
    let mut inputs = Array4::<f32>::zeros((b, 1, size, size));
    let mut targets = Array4::<f32>::zeros((b, 1, size, size));
    let mut thetas = Array1::<f32>::zeros(b);
    for (row, &idx) in indices.iter().enumerate() {
        let s = &split.samples[idx];
        inputs
            .index_axis_mut(ndarray::Axis(0), row)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(s.input.pixels());
        targets
            .index_axis_mut(ndarray::Axis(0), row)
            .index_axis_mut(ndarray::Axis(0), 0)
            .assign(s.target.pixels());
        let theta = if wrap {
            s.theta.wrapped().radians()
        } else {
            s.theta.radians()
        };
        thetas[row] = theta as f32;
    }
    (inputs, targets, thetas)
}

/// Outcome of a full [`train`] call.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub epochs_run: u64,
}

/// Loads the configured dataset, trains (fresh or resumed), and writes the
/// log plus checkpoints under `cfg.out_dir`.
pub fn train(cfg: &TrainConfig, resume: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = load_cache(&cfg.train_cache)?;
    let size = split.image_size()?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = crate::model::load_checkpoint(path)?;
            Trainer::from_checkpoint(ckpt, cfg.clone(), split.source_tag)?
        }
        None => Trainer::new(cfg.clone(), size, split.source_tag)?,
    };
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let log_path = cfg.out_dir.join("train-log.csv");
    let mut log = LogWriter::create(&log_path)?;
    let final_checkpoint = trainer.run(&split, &mut log, &cfg.out_dir)?;
    Ok(TrainOutcome {
        final_checkpoint,
        log_path,
        epochs_run: trainer.epoch,
    })
}
