//! Adam optimization of the network against the total loss.

use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{normalize, PointCloud};
use crate::graddiff::loss_and_grad;
use crate::losses::{tau, total_loss, LossConfig, LossTerms, ScheduleConfig};
use crate::sampler::{compute_sigmas, draw_batch};
use crate::sinenet::{save_model, SineNetwork};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iters: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub k_neighbors: usize,
    pub seed: u64,
    /// Record the losses every this many iterations (the first and last are always kept).
    pub log_every: usize,
    /// Emit a checkpoint every this many iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub loss: LossConfig,
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iters: 10_000,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: crate::sampler::DEFAULT_BATCH_SIZE,
            k_neighbors: crate::sampler::DEFAULT_K,
            seed: 0,
            log_every: 100,
            checkpoint_every: 0,
            loss: LossConfig::default(),
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.batch_size == 0 || self.k_neighbors == 0 || self.log_every == 0 {
            return Err(Error::Config("batch_size, k_neighbors and log_every must be positive".into()));
        }
        self.loss.validate()?;
        self.schedule.validate()
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Leaves everything untouched if any
/// gradient entry is non-finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "shape mismatch: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index: i });
    }
    let (b1, b2) = betas;
    state.step += 1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let mhat = state.m[i] / c1;
        let vhat = state.v[i] / c2;
        params[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub tau: f64,
    pub total: f64,
    pub terms: LossTerms,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub fn last(&self) -> Option<&LossRecord> {
        self.records.last()
    }
}

/// Hooks into the training loop.
pub trait TrainObserver {
    /// Called for every recorded iteration; `Break` stops training after
    /// a final checkpoint.
    fn on_log(&mut self, record: &LossRecord) -> ControlFlow<()> {
        let _ = record;
        ControlFlow::Continue(())
    }

    /// `iteration` counts completed optimizer steps.
    fn on_checkpoint(&mut self, iteration: usize, net: &SineNetwork, history: &LossHistory) -> Result<()> {
        let _ = (iteration, net, history);
        Ok(())
    }
}

impl TrainObserver for () {}

/// Logs every record through the `log` facade.
pub struct LogObserver;

impl TrainObserver for LogObserver {
    fn on_log(&mut self, r: &LossRecord) -> ControlFlow<()> {
        log::info!(
            "iter {:>6} loss {:.6e} | manifold {:.3e} non-manifold {:.3e} eikonal {:.3e} reg {:.3e} tau {:.2e}",
            r.iteration,
            r.total,
            r.terms.manifold,
            r.terms.non_manifold,
            r.terms.eikonal,
            r.terms.regularizer,
            r.tau
        );
        ControlFlow::Continue(())
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    iteration: usize,
    config_hash: &'a str,
    history: &'a LossHistory,
}

/// Writes the model and a JSON sidecar (`<model>.json`) at each checkpoint.
pub struct CheckpointWriter {
    pub path: PathBuf,
    pub config_hash: String,
}

impl CheckpointWriter {
    pub fn new(path: impl Into<PathBuf>, config: &TrainConfig) -> Self {
        CheckpointWriter {
            path: path.into(),
            config_hash: config.hash(),
        }
    }

    pub fn sidecar_path(model: &Path) -> PathBuf {
        let mut s = model.as_os_str().to_owned();
        s.push(".json");
        PathBuf::from(s)
    }
}

impl TrainObserver for CheckpointWriter {
    fn on_checkpoint(&mut self, iteration: usize, net: &SineNetwork, history: &LossHistory) -> Result<()> {
        save_model(net, &self.path)?;
        let side = Sidecar {
            iteration,
            config_hash: &self.config_hash,
            history,
        };
        let json = serde_json::to_vec_pretty(&side).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        crate::sinenet::checkpoint::write_atomic(&Self::sidecar_path(&self.path), &json)
    }
}

/// Fans events out to several observers; training stops if any asks to.
pub struct Observers<'a>(pub Vec<&'a mut dyn TrainObserver>);

impl TrainObserver for Observers<'_> {
    fn on_log(&mut self, record: &LossRecord) -> ControlFlow<()> {
        let mut flow = ControlFlow::Continue(());
        for o in &mut self.0 {
            if o.on_log(record).is_break() {
                flow = ControlFlow::Break(());
            }
        }
        flow
    }

    fn on_checkpoint(&mut self, iteration: usize, net: &SineNetwork, history: &LossHistory) -> Result<()> {
        for o in &mut self.0 {
            o.on_checkpoint(iteration, net, history)?;
        }
        Ok(())
    }
}

/// Normalizes `cloud`, stores the transform in `net` and runs the
/// optimization loop.
pub fn fit(
    cloud: &PointCloud,
    mut net: SineNetwork,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(SineNetwork, LossHistory)> {
    config.validate()?;
    if cloud.dim() != net.architecture().input_dim {
        return Err(Error::InvalidArgument(format!(
            "cloud is {}-dimensional but the network takes {} inputs",
            cloud.dim(),
            net.architecture().input_dim
        )));
    }
    if config.loss.neumann_weight() > 0.0 && !cloud.has_normals() {
        return Err(Error::MissingNormals);
    }
    let (normalized, transform) = normalize(cloud)?;
    net.set_transform(transform)?;
    let sigmas = compute_sigmas(&normalized, config.k_neighbors)?;
    let schedule = config.schedule.for_iters(config.iters);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(net.params().len());
    let mut history = LossHistory::default();
    let betas = (config.beta1, config.beta2);

    for it in 0..config.iters {
        let batch = draw_batch(&normalized, &sigmas, config.batch_size, &mut rng)?;
        let t = tau(&schedule, it)?;
        let lg = loss_and_grad(&net, &batch, &config.loss, t).map_err(|e| match e {
            Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss {
                term,
                iteration: Some(it),
            },
            e => e,
        })?;
        let mut stop = false;
        if it % config.log_every == 0 || it + 1 == config.iters {
            let record = LossRecord {
                iteration: it,
                tau: t,
                total: lg.loss,
                terms: lg.terms,
            };
            debug_assert_eq!(record.total, total_loss(&record.terms, &config.loss, t));
            history.records.push(record);
            stop = observer.on_log(&record).is_break();
        }
        adam_step(net.params_mut(), lg.gradient.as_slice(), &mut adam, config.learning_rate, betas, config.epsilon)?;
        let done = it + 1;
        if stop {
            log::warn!("training interrupted after {done} iterations");
            observer.on_checkpoint(done, &net, &history)?;
            return Ok((net, history));
        }
        if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done != config.iters {
            observer.on_checkpoint(done, &net, &history)?;
        }
    }
    observer.on_checkpoint(config.iters, &net, &history)?;
    Ok((net, history))
}
