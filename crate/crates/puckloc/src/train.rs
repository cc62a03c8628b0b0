//! MSE heatmap training: Adam optimization, epoch loop with early stopping
//! on validation AUC, checkpoint/resume, and the sigma / sampling-mode
//! experiment grid.

use ndarray::{Array3, ArrayD, Axis};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

use crate::checkpoint::Checkpoint;
use crate::data::{
    preprocess_frames, sample_frame_indices, ClipDataset, Normalization, SamplingMode,
    SamplingPolicy,
};
use crate::error::{Error, Result};
use crate::eval::{auc, Axis as EvalAxis, PredictionPair};
use crate::heatmap::{decode_to_rink, render_target, Heatmap, TargetSpec};
use crate::model::PuckNet;
use crate::nn::{Act, Mode};
use crate::rink::ScalingTransform;
use crate::seed::{derive_seed, rng_for};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaUnits {
    /// Heatmap-cell units (the default convention).
    Cells,
    /// Rink feet, converted through the scaling transform per axis.
    Feet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Training-run configuration. Defaults follow the published setup: Adam at
/// 1e-4, batches of 10, sigma 25, random uniform frame sampling, the first
/// five extractor layers frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience on validation AUC, in epochs.
    pub patience: usize,
    pub sigma: f64,
    pub sigma_units: SigmaUnits,
    /// Normalize targets to unit sum instead of unit peak.
    pub normalize_targets: bool,
    pub sampling: SamplingMode,
    /// Step for constant-interval sampling.
    pub interval: usize,
    pub frozen_prefix: usize,
    /// Freeze every batch-norm's statistics (evaluation-style normalization
    /// during training).
    pub bn_stats_frozen: bool,
    pub adam: AdamParams,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 10,
            max_epochs: 100,
            patience: 10,
            sigma: 25.0,
            sigma_units: SigmaUnits::Cells,
            normalize_targets: false,
            sampling: SamplingMode::RandomUniform,
            interval: 4,
            frozen_prefix: 5,
            bn_stats_frozen: false,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidArgument("sigma must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidArgument("max epochs must be >= 1".into()));
        }
        Ok(())
    }

    fn target_spec(&self, transform: &ScalingTransform) -> Result<TargetSpec> {
        let spec = match self.sigma_units {
            SigmaUnits::Cells => {
                TargetSpec::cells(self.sigma, transform.width(), transform.height())?
            }
            SigmaUnits::Feet => TargetSpec::feet(self.sigma, transform)?,
        };
        Ok(spec.with_normalization(self.normalize_targets))
    }
}

/// Mean over batch, rows and columns of squared prediction error.
pub fn mse_heatmap_loss(pred: &Array3<f64>, target: &Array3<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let n = pred.len() as f64;
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Gradient of [`mse_heatmap_loss`] with respect to the predictions.
pub fn mse_heatmap_loss_grad(pred: &Array3<f64>, target: &Array3<f64>) -> Array3<f64> {
    let n = pred.len() as f64;
    let mut grad = pred - target;
    grad.mapv_inplace(|v| 2.0 * v / n);
    grad
}

/// Adam with bias correction. Moment tensors are keyed by parameter name so
/// optimizer state survives checkpointing.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub params: AdamParams,
    t: u64,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
}

impl Adam {
    pub fn new(lr: f64, params: AdamParams) -> Self {
        Self {
            lr,
            params,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update to every trainable parameter from its accumulated
    /// gradient.
    pub fn step(&mut self, model: &mut PuckNet) {
        self.t += 1;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.lr;
        let eps = self.params.eps;
        let m_map = &mut self.m;
        let v_map = &mut self.v;
        model.visit_params(&mut |p| {
            if p.frozen {
                return;
            }
            let m = m_map
                .entry(p.name.clone())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let v = v_map
                .entry(p.name.clone())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            let (ms, vs, gs, ws) = (
                m.as_slice_mut().unwrap(),
                v.as_slice_mut().unwrap(),
                p.grad.as_slice().unwrap(),
                p.value.as_slice_mut().unwrap(),
            );
            for i in 0..ws.len() {
                let g = gs[i];
                ms[i] = b1 * ms[i] + (1.0 - b1) * g;
                vs[i] = b2 * vs[i] + (1.0 - b2) * g * g;
                let m_hat = ms[i] / bc1;
                let v_hat = vs[i] / bc2;
                ws[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }

    fn state_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::new();
        for (name, m) in &self.m {
            out.push((format!("adam.m.{name}"), m.clone()));
        }
        for (name, v) in &self.v {
            out.push((format!("adam.v.{name}"), v.clone()));
        }
        out
    }

    fn restore(lr: f64, params: AdamParams, t: u64, tensors: &BTreeMap<String, ArrayD<f64>>) -> Self {
        let mut adam = Adam::new(lr, params);
        adam.t = t;
        for (name, tensor) in tensors {
            if let Some(stripped) = name.strip_prefix("adam.m.") {
                adam.m.insert(stripped.to_string(), tensor.clone());
            } else if let Some(stripped) = name.strip_prefix("adam.v.") {
                adam.v.insert(stripped.to_string(), tensor.clone());
            }
        }
        adam
    }
}

/// Assembles model inputs from datasets.
#[derive(Debug, Clone)]
pub struct Loader {
    pub input_frames: usize,
    pub input_size: usize,
    pub normalization: Normalization,
}

impl Loader {
    pub fn for_model(model: &PuckNet, normalization: Normalization) -> Self {
        Self {
            input_frames: model.config().input_frames,
            input_size: model.config().input_size,
            normalization,
        }
    }

    /// Loads one clip as `[C, T, S, S]` using the given sampling policy.
    fn clip_input(
        &self,
        dataset: &ClipDataset,
        clip_id: &str,
        policy: &SamplingPolicy,
    ) -> Result<ndarray::Array4<f64>> {
        let len = dataset.store.clip_len(clip_id)?;
        let indices = sample_frame_indices(policy, len)?;
        let frames = dataset.store.frames(clip_id, &indices)?;
        let clip = preprocess_frames(&frames, self.input_size, &self.normalization)?;
        // [T, C, S, S] -> [C, T, S, S]
        Ok(clip.frames.permuted_axes([1, 0, 2, 3]).to_owned())
    }

    /// Stacks the records at `record_indices` into a batch, one sampling
    /// policy per record.
    pub fn batch(
        &self,
        dataset: &ClipDataset,
        record_indices: &[usize],
        policies: &[SamplingPolicy],
    ) -> Result<Act> {
        assert_eq!(record_indices.len(), policies.len());
        let n = record_indices.len();
        let mut batch = Act::zeros((
            n,
            3,
            self.input_frames,
            self.input_size,
            self.input_size,
        ));
        for (slot, (&ri, policy)) in record_indices.iter().zip(policies.iter()).enumerate() {
            let record = &dataset.records[ri];
            let clip = self.clip_input(dataset, &record.clip_id, policy)?;
            batch.index_axis_mut(Axis(0), slot).assign(&clip);
        }
        Ok(batch)
    }
}

/// Deterministic evenly spread indices covering a whole clip, used for every
/// validation/test/prediction pass regardless of the training-time sampling
/// mode.
pub fn even_eval_policy(count: usize, clip_len: usize) -> Result<Vec<usize>> {
    if clip_len < count {
        return Err(Error::InsufficientFrames {
            got: clip_len,
            need: count,
        });
    }
    if count == 1 {
        return Ok(vec![clip_len / 2]);
    }
    Ok((0..count)
        .map(|i| ((i as f64) * (clip_len - 1) as f64 / (count - 1) as f64).round() as usize)
        .collect())
}

/// Runs the model over a dataset in evaluation mode and decodes rink-plane
/// predictions.
pub fn predict_pairs(
    model: &mut PuckNet,
    dataset: &ClipDataset,
    batch_size: usize,
    normalization: &Normalization,
) -> Result<Vec<PredictionPair>> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty prediction dataset".into()));
    }
    let loader = Loader::for_model(model, *normalization);
    let transform =
        ScalingTransform::new(model.config().heatmap_width, model.config().heatmap_height)?;
    let prev_mode = model.mode();
    model.set_mode(Mode::Eval);
    let mut pairs = Vec::with_capacity(dataset.len());
    let mut batch = Vec::new();
    let flush = |model: &mut PuckNet,
                 batch: &mut Vec<usize>,
                 pairs: &mut Vec<PredictionPair>|
     -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mut input = Act::zeros((
            batch.len(),
            3,
            loader.input_frames,
            loader.input_size,
            loader.input_size,
        ));
        for (slot, &ri) in batch.iter().enumerate() {
            let record = &dataset.records[ri];
            let len = dataset.store.clip_len(&record.clip_id)?;
            let indices = even_eval_policy(loader.input_frames, len)?;
            let frames = dataset.store.frames(&record.clip_id, &indices)?;
            let clip = preprocess_frames(&frames, loader.input_size, &loader.normalization)?;
            input
                .index_axis_mut(Axis(0), slot)
                .assign(&clip.frames.permuted_axes([1, 0, 2, 3]));
        }
        let out = model.forward(&input, false)?;
        for (slot, &ri) in batch.iter().enumerate() {
            let record = &dataset.records[ri];
            let grid = out.index_axis(Axis(0), slot).to_owned();
            let heatmap = Heatmap::new(grid)?;
            let decoded = decode_to_rink(&heatmap, &transform)?;
            pairs.push(PredictionPair {
                clip_id: record.clip_id.clone(),
                predicted: decoded.point,
                truth: record.location,
            });
        }
        batch.clear();
        Ok(())
    };
    for ri in 0..dataset.len() {
        batch.push(ri);
        if batch.len() == batch_size {
            flush(model, &mut batch, &mut pairs)?;
        }
    }
    flush(model, &mut batch, &mut pairs)?;
    model.set_mode(prev_mode);
    Ok(pairs)
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc_overall: f64,
    pub val_auc_x: f64,
    pub val_auc_y: f64,
}

pub fn history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_auc_overall,val_auc_x,val_auc_y\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.train_loss, row.val_auc_overall, row.val_auc_x, row.val_auc_y
        ));
    }
    out
}

/// Resumable training state: current model, optimizer moments, shuffle RNG
/// position, best-so-far checkpoint.
pub struct TrainState {
    pub completed_epochs: usize,
    pub adam: Adam,
    pub shuffle_word_pos: u128,
    pub best_val_auc: f64,
    pub best_epoch: usize,
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
}

#[derive(Serialize, Deserialize)]
struct TrainStateExtra {
    completed_epochs: usize,
    adam_t: u64,
    shuffle_word_pos_hi: u64,
    shuffle_word_pos_lo: u64,
    best_val_auc: f64,
    best_epoch: usize,
    history: Vec<(usize, f64, f64, f64, f64)>,
}

impl TrainState {
    /// Serializes the full training state into one checkpoint archive.
    pub fn save(&self, model: &mut PuckNet, cfg: &TrainConfig, path: &Path) -> Result<()> {
        let mut tensors: Vec<(String, ArrayD<f64>)> = Vec::new();
        for (name, t) in model.state_tensors() {
            tensors.push((format!("model.{name}"), t));
        }
        for (name, t) in &self.best.tensors {
            tensors.push((format!("best.{name}"), t.clone()));
        }
        tensors.extend(self.adam.state_tensors());
        let extra = TrainStateExtra {
            completed_epochs: self.completed_epochs,
            adam_t: self.adam.steps(),
            shuffle_word_pos_hi: (self.shuffle_word_pos >> 64) as u64,
            shuffle_word_pos_lo: self.shuffle_word_pos as u64,
            best_val_auc: self.best_val_auc,
            best_epoch: self.best_epoch,
            history: self
                .history
                .iter()
                .map(|h| {
                    (
                        h.epoch,
                        h.train_loss,
                        h.val_auc_overall,
                        h.val_auc_x,
                        h.val_auc_y,
                    )
                })
                .collect(),
        };
        let ckpt = Checkpoint {
            config: model.config().clone(),
            step: model.step(),
            tensors,
            extra: Some(
                serde_json::to_value(&extra)
                    .map_err(|e| Error::Checkpoint(format!("state encode: {e}")))?,
            ),
        };
        let _ = cfg; // config echo travels with the run directory
        ckpt.save(path)
    }

    /// Restores training state and loads the current model parameters.
    pub fn load(path: &Path, model: &mut PuckNet, cfg: &TrainConfig) -> Result<Self> {
        let ckpt = Checkpoint::load(path)?;
        let extra: TrainStateExtra = serde_json::from_value(
            ckpt.extra
                .clone()
                .ok_or_else(|| Error::Checkpoint("archive holds no training state".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("state decode: {e}")))?;
        let mut model_tensors = BTreeMap::new();
        let mut best_tensors = Vec::new();
        let mut adam_tensors = BTreeMap::new();
        for (name, t) in &ckpt.tensors {
            if let Some(stripped) = name.strip_prefix("model.") {
                model_tensors.insert(stripped.to_string(), t.clone());
            } else if let Some(stripped) = name.strip_prefix("best.") {
                best_tensors.push((stripped.to_string(), t.clone()));
            } else if name.starts_with("adam.") {
                adam_tensors.insert(name.clone(), t.clone());
            }
        }
        model.load_state(&model_tensors)?;
        model.set_step(ckpt.step);
        let adam = Adam::restore(cfg.learning_rate, cfg.adam, extra.adam_t, &adam_tensors);
        Ok(Self {
            completed_epochs: extra.completed_epochs,
            adam,
            shuffle_word_pos: ((extra.shuffle_word_pos_hi as u128) << 64)
                | extra.shuffle_word_pos_lo as u128,
            best_val_auc: extra.best_val_auc,
            best_epoch: extra.best_epoch,
            best: Checkpoint {
                config: ckpt.config.clone(),
                step: ckpt.step,
                tensors: best_tensors,
                extra: None,
            },
            history: extra
                .history
                .into_iter()
                .map(|(epoch, train_loss, o, x, y)| EpochStats {
                    epoch,
                    train_loss,
                    val_auc_overall: o,
                    val_auc_x: x,
                    val_auc_y: y,
                })
                .collect(),
        })
    }
}

/// Training outcome: per-epoch history and the checkpoint that scored the
/// best validation AUC.
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Trains the model, selecting the best checkpoint on validation AUC with
/// early stopping. Deterministic for a fixed seed/config/data. `state_sink`
/// receives the serializable state after every epoch (for resume support);
/// pass `None` to skip persistence.
pub fn train(
    model: &mut PuckNet,
    train_set: &ClipDataset,
    val_set: &ClipDataset,
    cfg: &TrainConfig,
    resume: Option<TrainState>,
    mut state_sink: Option<&mut dyn FnMut(&mut PuckNet, &TrainState) -> Result<()>>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidArgument(
            "training and validation sets must be non-empty".into(),
        ));
    }
    model.freeze_prefix(cfg.frozen_prefix)?;
    model.set_bn_stats_locked(cfg.bn_stats_frozen);
    let normalization = Normalization::kinetics();
    let loader = Loader::for_model(model, normalization);
    let transform =
        ScalingTransform::new(model.config().heatmap_width, model.config().heatmap_height)?;
    let target_spec = cfg.target_spec(&transform)?;

    let mut shuffle_rng = rng_for(cfg.seed, "shuffle");
    let (start_epoch, mut adam, mut best, mut best_val_auc, mut best_epoch, mut history) =
        match resume {
            Some(state) => {
                use rand_chacha::rand_core::SeedableRng as _;
                shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed, "shuffle",
                ));
                shuffle_rng.set_word_pos(state.shuffle_word_pos);
                (
                    state.completed_epochs,
                    state.adam,
                    Some(state.best),
                    state.best_val_auc,
                    state.best_epoch,
                    state.history,
                )
            }
            None => (
                0,
                Adam::new(cfg.learning_rate, cfg.adam),
                None,
                f64::NEG_INFINITY,
                0,
                Vec::new(),
            ),
        };

    let n = train_set.len();
    let mut since_best = history
        .len()
        .saturating_sub(best_epoch);
    for epoch in start_epoch..cfg.max_epochs {
        // Per-epoch shuffle from the continuous stream, so a resumed run
        // sees the same batch order as an uninterrupted one.
        let mut order: Vec<usize> = (0..n).collect();
        {
            use rand::Rng as _;
            for i in (1..n).rev() {
                let j = shuffle_rng.random_range(0..=i);
                order.swap(i, j);
            }
        }

        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let policies: Vec<SamplingPolicy> = chunk
                .iter()
                .map(|&ri| {
                    let clip_id = &train_set.records[ri].clip_id;
                    match cfg.sampling {
                        SamplingMode::RandomUniform => SamplingPolicy {
                            mode: SamplingMode::RandomUniform,
                            count: loader.input_frames,
                            interval: cfg.interval,
                            rng_seed: derive_seed(
                                cfg.seed,
                                &format!("sample/{epoch}/{clip_id}"),
                            ),
                        },
                        SamplingMode::ConstantInterval => SamplingPolicy {
                            mode: SamplingMode::ConstantInterval,
                            count: loader.input_frames,
                            interval: cfg.interval,
                            rng_seed: 0,
                        },
                    }
                })
                .collect();
            let input = loader.batch(train_set, chunk, &policies)?;
            let mut targets = Array3::zeros((
                chunk.len(),
                transform.height(),
                transform.width(),
            ));
            for (slot, &ri) in chunk.iter().enumerate() {
                let mean = transform.rink_to_heatmap(&train_set.records[ri].location);
                let target = render_target(&target_spec, &mean)?;
                targets
                    .index_axis_mut(Axis(0), slot)
                    .assign(target.values());
            }

            let pred = model.forward(&input, true)?;
            let loss = mse_heatmap_loss(&pred, &targets)?;
            if !loss.is_finite() {
                let ids: Vec<&str> = chunk
                    .iter()
                    .map(|&ri| train_set.records[ri].clip_id.as_str())
                    .collect();
                log::error!(
                    "non-finite loss at epoch {epoch}, batch {batch_idx}; clips: {}",
                    ids.join(", ")
                );
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();

            model.zero_grad();
            let grad = mse_heatmap_loss_grad(&pred, &targets);
            model.backward(&grad)?;
            adam.step(model);
            model.bump_step();
        }
        let train_loss = loss_sum / seen as f64;

        let pairs = predict_pairs(model, val_set, cfg.batch_size, &normalization)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_auc_overall: auc(&pairs, EvalAxis::Both)?,
            val_auc_x: auc(&pairs, EvalAxis::X)?,
            val_auc_y: auc(&pairs, EvalAxis::Y)?,
        };
        log::info!(
            "epoch {}: train_loss {:.6e}, val AUC {:.2}/{:.2}/{:.2}",
            stats.epoch,
            stats.train_loss,
            stats.val_auc_overall,
            stats.val_auc_x,
            stats.val_auc_y
        );
        if stats.val_auc_overall > best_val_auc {
            best_val_auc = stats.val_auc_overall;
            best_epoch = stats.epoch;
            best = Some(Checkpoint::from_model(model));
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.push(stats);

        if let Some(sink) = state_sink.as_mut() {
            let state = TrainState {
                completed_epochs: epoch + 1,
                adam: adam.clone(),
                shuffle_word_pos: shuffle_rng.get_word_pos(),
                best_val_auc,
                best_epoch,
                best: best.clone().expect("best exists after an epoch"),
                history: history.clone(),
            };
            sink(model, &state)?;
        }

        if since_best >= cfg.patience {
            log::info!("early stop after epoch {} (patience {})", epoch + 1, cfg.patience);
            break;
        }
    }

    Ok(TrainOutcome {
        history,
        best: best.expect("at least one epoch ran"),
        best_epoch,
        best_val_auc,
    })
}

/// One cell of the sigma / sampling experiment grid.
#[derive(Debug, Clone)]
pub struct GridEntry {
    pub sampling: SamplingMode,
    pub sigma: f64,
    pub auc_overall: Option<f64>,
    pub auc_x: Option<f64>,
    pub auc_y: Option<f64>,
    pub error: Option<String>,
}

fn sampling_name(mode: SamplingMode) -> &'static str {
    match mode {
        SamplingMode::RandomUniform => "random",
        SamplingMode::ConstantInterval => "constant_interval",
    }
}

/// CSV in the column structure of the published sigma and sampling tables.
pub fn grid_csv(entries: &[GridEntry]) -> String {
    let mut out = String::from("sampling,sigma,auc_overall,auc_x,auc_y\n");
    for e in entries {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v}"),
            None => "error".to_string(),
        };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            sampling_name(e.sampling),
            e.sigma,
            fmt(e.auc_overall),
            fmt(e.auc_x),
            fmt(e.auc_y)
        ));
    }
    out
}

/// Trains one model per (sigma, sampling mode) cell and evaluates each best
/// checkpoint on the test set. A failing cell is recorded and the grid
/// continues.
#[allow(clippy::too_many_arguments)]
pub fn run_experiment_grid(
    model_cfg: &crate::model::ModelConfig,
    base: &TrainConfig,
    sigmas: &[f64],
    modes: &[SamplingMode],
    train_set: &ClipDataset,
    val_set: &ClipDataset,
    test_set: &ClipDataset,
) -> Result<Vec<GridEntry>> {
    if sigmas.is_empty() || modes.is_empty() {
        return Err(Error::InvalidArgument("empty experiment grid".into()));
    }
    let mut entries = Vec::new();
    for &sigma in sigmas {
        for &mode in modes {
            let mut cfg = base.clone();
            cfg.sigma = sigma;
            cfg.sampling = mode;
            cfg.seed = derive_seed(base.seed, &format!("grid/{sigma}/{}", sampling_name(mode)));
            let run = (|| -> Result<(f64, f64, f64)> {
                let mut model = PuckNet::build(model_cfg, cfg.seed)?;
                let outcome = train(&mut model, train_set, val_set, &cfg, None, None)?;
                let mut best = outcome.best.restore_model()?;
                let pairs = predict_pairs(
                    &mut best,
                    test_set,
                    cfg.batch_size,
                    &Normalization::kinetics(),
                )?;
                Ok((
                    auc(&pairs, EvalAxis::Both)?,
                    auc(&pairs, EvalAxis::X)?,
                    auc(&pairs, EvalAxis::Y)?,
                ))
            })();
            match run {
                Ok((o, x, y)) => entries.push(GridEntry {
                    sampling: mode,
                    sigma,
                    auc_overall: Some(o),
                    auc_x: Some(x),
                    auc_y: Some(y),
                    error: None,
                }),
                Err(e) => {
                    log::error!("grid cell sigma={sigma} mode={mode:?} failed: {e}");
                    entries.push(GridEntry {
                        sampling: mode,
                        sigma,
                        auc_overall: None,
                        auc_x: None,
                        auc_y: None,
                        error: Some(e.to_string()),
                    });
                }
            }
        }
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_examples() {
        let a = Array3::from_elem((2, 4, 4), 0.5);
        assert_eq!(mse_heatmap_loss(&a, &a).unwrap(), 0.0);

        let b = a.mapv(|v| v + 0.1);
        let loss = mse_heatmap_loss(&b, &a).unwrap();
        assert!((loss - 0.01).abs() < 1e-12);

        let bad = Array3::zeros((2, 4, 5));
        assert!(mse_heatmap_loss(&a, &bad).is_err());
    }

    #[test]
    fn mse_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pred = Array3::from_shape_fn((2, 4, 4), |_| rng.random::<f64>());
        let target = Array3::from_shape_fn((2, 4, 4), |_| rng.random::<f64>());
        let mut acc = 0.0;
        let mut count = 0.0;
        for n in 0..2 {
            for r in 0..4 {
                for c in 0..4 {
                    let d: f64 = pred[(n, r, c)] - target[(n, r, c)];
                    acc += d * d;
                    count += 1.0;
                }
            }
        }
        let want = acc / count;
        let got = mse_heatmap_loss(&pred, &target).unwrap();
        assert!((got - want).abs() < 1e-7);
    }

    #[test]
    fn loss_grad_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut pred = Array3::from_shape_fn((1, 3, 3), |_| rng.random::<f64>());
        let target = Array3::from_shape_fn((1, 3, 3), |_| rng.random::<f64>());
        let grad = mse_heatmap_loss_grad(&pred, &target);
        let eps = 1e-6;
        for idx in [(0, 0, 0), (0, 1, 2), (0, 2, 1)] {
            let orig = pred[idx];
            pred[idx] = orig + eps;
            let lp = mse_heatmap_loss(&pred, &target).unwrap();
            pred[idx] = orig - eps;
            let lm = mse_heatmap_loss(&pred, &target).unwrap();
            pred[idx] = orig;
            let num = (lp - lm) / (2.0 * eps);
            assert!((num - grad[idx]).abs() < 1e-8);
        }
    }

    #[test]
    fn adam_moves_only_trainable_params() {
        use crate::model::ModelConfig;
        let mut model = PuckNet::build(&ModelConfig::toy(), 3).unwrap();
        model.freeze_prefix(5).unwrap();
        // Put a synthetic gradient everywhere.
        model.visit_params(&mut |p| p.grad.fill(0.5));
        let before = model.param_checksums();
        let mut adam = Adam::new(1e-3, AdamParams::default());
        adam.step(&mut model);
        let after = model.param_checksums();
        let frozen = model.frozen_param_names();
        for name in before.keys() {
            if frozen.contains(name) {
                assert_eq!(before[name], after[name], "{name} moved");
            } else {
                assert_ne!(before[name], after[name], "{name} did not move");
            }
        }
    }

    #[test]
    fn even_eval_policy_spans_clip() {
        let idx = even_eval_policy(8, 60).unwrap();
        assert_eq!(idx.len(), 8);
        assert_eq!(idx[0], 0);
        assert_eq!(*idx.last().unwrap(), 59);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(even_eval_policy(16, 16).unwrap(), (0..16).collect::<Vec<_>>());
        assert!(even_eval_policy(16, 10).is_err());
    }
}
