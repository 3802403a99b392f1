//! L1 objective, AdamW with linear warmup and exponential epoch decay, and
//! the single-/mixed-dataset training and evaluation loops.
//!
//! A whole run is a pure function of its seed: dataset order, shuffles,
//! initialization, and optimizer state all derive from it, and metrics
//! files hash identically across repeats.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{GamMode, ModelConfig, Regime, TrainConfig};
use crate::error::{Error, Result};
use crate::gam::{apply_gam, param_budget, GamBank};
use crate::geom::{angular_error_deg, GazeAngles};
use crate::params::{harvest_grads, param_count, ParamModule};
use crate::rngs;
use crate::serialize;
use crate::synth::{hex_digest, mixed_epoch_batches, Dataset};
use crate::tape::{Session, ValueId};
use crate::ttgf::TtgfModel;

// rng substream tags
const TAG_EPOCH: u64 = 0x45504f43;

/// Shared estimator plus the per-dataset adaptation heads; the unit that is
/// trained, checkpointed, and served.
#[derive(Debug, Clone)]
pub struct GazeEstimator {
    pub model: TtgfModel,
    pub gam: GamBank,
}

impl GazeEstimator {
    pub fn new<R: rand::Rng>(
        model_cfg: ModelConfig,
        num_datasets: usize,
        gam_mode: GamMode,
        rng: &mut R,
    ) -> Result<Self> {
        let gam_hidden = model_cfg.gam_hidden;
        let model = TtgfModel::new(model_cfg, rng)?;
        let gam = GamBank::new(num_datasets, model.fused_dim(), gam_hidden, gam_mode, rng)?;
        Ok(GazeEstimator { model, gam })
    }

    /// Corrected prediction. `dataset_id = None` returns the raw estimate;
    /// `Some(0)` routes through the anchor head, which applies no
    /// correction at all.
    pub fn predict(
        &self,
        dataset_id: Option<usize>,
        face: Option<&crate::tensor::Tensor>,
        left: &crate::tensor::Tensor,
        right: &crate::tensor::Tensor,
    ) -> Result<GazeAngles> {
        let (raw, fused) = self.model.predict(face, left, right)?;
        match dataset_id {
            None | Some(0) => Ok(raw),
            Some(id) => Ok(apply_gam(raw, self.gam.offset(id, &fused)?)),
        }
    }

    /// Shared-estimator parameter count (N).
    pub fn count_estimator_params(&self) -> usize {
        param_count(&self.model)
    }

    /// Parameters of one adaptation head (K).
    pub fn count_head_params(&self) -> usize {
        self.gam.head_param_count()
    }

    /// Every trainable parameter: N + (M − 1)·K.
    pub fn count_total_params(&self) -> usize {
        param_count(self)
    }
}

impl ParamModule for GazeEstimator {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &crate::tensor::Tensor)) {
        self.model.visit_params(prefix, f);
        self.gam.visit_params(&crate::params::join(prefix, "gam"), f);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut crate::tensor::Tensor)) {
        self.model.visit_params_mut(prefix, f);
        self.gam
            .visit_params_mut(&crate::params::join(prefix, "gam"), f);
    }
}

/// Mean absolute error over both angle components and the batch, on-tape.
pub fn l1_loss(sess: &mut Session, preds: ValueId, labels: ValueId) -> Result<ValueId> {
    let diff = sess.tape.sub(preds, labels)?;
    let mag = sess.tape.abs(diff);
    Ok(sess.tape.mean_all(mag))
}

/// Value-level L1 for evaluation.
pub fn l1_loss_values(preds: &[GazeAngles], labels: &[GazeAngles]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| (p.yaw - l.yaw).abs() + (p.pitch - l.pitch).abs())
        .sum();
    Ok(total / (2.0 * preds.len() as f64))
}

/// Mean angular error (degrees) between matched prediction/label lists.
pub fn mean_angular_error_deg(preds: &[GazeAngles], labels: &[GazeAngles]) -> Result<f64> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = preds
        .iter()
        .zip(labels)
        .map(|(p, l)| angular_error_deg(*p, *l))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Learning rate at a global step: linear ramp 0 → lr0 across
/// `warmup_steps` (lr(0) = 0, lr(warmup) = lr0), then lr0 · gamma^e where
/// e counts full epochs completed after the warmup boundary.
pub fn lr_at(cfg: &TrainConfig, step: usize, steps_per_epoch: usize) -> f64 {
    if step < cfg.warmup_steps {
        cfg.lr0 * step as f64 / cfg.warmup_steps as f64
    } else {
        let epochs_done = (step - cfg.warmup_steps) / steps_per_epoch.max(1);
        cfg.lr0 * cfg.gamma.powi(epochs_done as i32)
    }
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    /// per-parameter update count for bias correction
    t: u64,
}

/// AdamW with decoupled weight decay: decay scales the parameter directly
/// and never enters the moment estimates.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    moments: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(cfg: &TrainConfig) -> Self {
        AdamW {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            moments: HashMap::new(),
        }
    }

    /// Updates every parameter that carries a gradient, consuming the
    /// gradient. Parameters without gradients (heads absent from the
    /// batch) keep their values and their moment state.
    pub fn step(&mut self, module: &mut impl ParamModule, lr: f64) {
        module.visit_params_mut("", &mut |path, tensor| {
            let Some(grad) = tensor.grad.take() else {
                return;
            };
            let state = self.moments.entry(path.to_string()).or_default();
            if state.m.is_empty() {
                state.m = vec![0.0; grad.len()];
                state.v = vec![0.0; grad.len()];
            }
            state.t += 1;
            let bc1 = 1.0 - self.beta1.powi(state.t as i32);
            let bc2 = 1.0 - self.beta2.powi(state.t as i32);
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                data[i] -= lr * self.weight_decay * data[i];
                state.m[i] = self.beta1 * state.m[i] + (1.0 - self.beta1) * g;
                state.v[i] = self.beta2 * state.v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = state.m[i] / bc1;
                let v_hat = state.v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        });
    }
}

/// One metrics row: `epoch,split,dataset,angular_error_deg,loss,lr`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub split: String,
    pub dataset: String,
    pub angular_error_deg: f64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct EvalStats {
    pub n: usize,
    /// Against the dataset's own (perturbed) labels.
    pub err_vs_label_deg: f64,
    /// Against the clean gaze; a synthetic-only diagnostic.
    pub err_vs_true_deg: f64,
    pub l1: f64,
}

/// Evaluates the dataset-appropriate corrected output over `indices`.
pub fn evaluate(
    model: &TtgfModel,
    gam: &GamBank,
    ds: &Dataset,
    indices: &[usize],
    use_gam: bool,
) -> Result<EvalStats> {
    if indices.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut preds = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    let mut trues = Vec::with_capacity(indices.len());
    for &i in indices {
        let s = &ds.samples[i];
        let (raw, fused) = self_predict(model, s)?;
        let corrected = if use_gam && ds.spec.dataset_id > 0 {
            apply_gam(raw, gam.offset(ds.spec.dataset_id, &fused)?)
        } else {
            raw
        };
        preds.push(corrected);
        labels.push(s.label);
        trues.push(s.true_gaze);
    }
    Ok(EvalStats {
        n: indices.len(),
        err_vs_label_deg: mean_angular_error_deg(&preds, &labels)?,
        err_vs_true_deg: mean_angular_error_deg(&preds, &trues)?,
        l1: l1_loss_values(&preds, &labels)?,
    })
}

fn self_predict(model: &TtgfModel, s: &crate::synth::Sample) -> Result<(GazeAngles, crate::tensor::Tensor)> {
    let face = model.face_backbone.is_some().then_some(&s.face);
    model.predict(face, &s.left_eye, &s.right_eye)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRecord>,
    pub step_losses: Vec<f64>,
    pub steps_per_epoch: usize,
}

/// Trains the estimator in place and returns per-epoch metrics.
///
/// Single regime: plain shuffled batches over one named dataset, no
/// correction heads anywhere in the graph. Mixed regime: equal-composition
/// batches over all datasets; with `gam_enabled` the loss is taken on the
/// corrected output `g + Δg` routed by each sample's dataset id.
pub fn train_run(
    est: &mut GazeEstimator,
    datasets: &[Dataset],
    cfg: &TrainConfig,
    mut on_step: Option<&mut dyn FnMut(usize, f64)>,
) -> Result<RunOutput> {
    cfg.validate()?;
    let selected: Vec<&Dataset> = match cfg.regime {
        Regime::Mixed => datasets.iter().collect(),
        Regime::Single => {
            let name = cfg.dataset.as_deref().unwrap_or_default();
            let ds = datasets
                .iter()
                .find(|d| d.spec.name == name)
                .ok_or_else(|| Error::Config(format!("dataset '{name}' not found")))?;
            vec![ds]
        }
    };
    if selected.is_empty() {
        return Err(Error::Config("no datasets to train on".into()));
    }
    let apply_gam = cfg.regime == Regime::Mixed && cfg.gam_enabled;
    if apply_gam {
        let max_id = selected.iter().map(|d| d.spec.dataset_id).max().unwrap();
        if max_id >= est.gam.num_datasets() {
            return Err(Error::DatasetIdOutOfRange {
                id: max_id,
                num: est.gam.num_datasets(),
            });
        }
    }
    let train_splits: Vec<Vec<usize>> = selected.iter().map(|d| d.train_indices()).collect();

    let mut optimizer = AdamW::new(cfg);
    let mut metrics = Vec::new();
    let mut step_losses = Vec::new();
    let mut global_step = 0usize;
    let mut steps_per_epoch = 0usize;
    let mut lr = 0.0;

    for epoch in 0..cfg.epochs {
        let mut epoch_rng = rngs::substream(cfg.seed, &[TAG_EPOCH, epoch as u64]);
        let batches = mixed_epoch_batches(&train_splits, cfg.batch_size, &mut epoch_rng)?;
        steps_per_epoch = batches.len();
        let mut epoch_loss = 0.0;
        let mut epoch_err = 0.0;
        for batch in &batches {
            lr = lr_at(cfg, global_step, steps_per_epoch);
            let (loss, batch_err) = train_step(est, &selected, batch, apply_gam)?;
            optimizer.step(est, lr);
            epoch_loss += loss;
            epoch_err += batch_err;
            step_losses.push(loss);
            if let Some(cb) = on_step.as_deref_mut() {
                cb(global_step, loss);
            }
            global_step += 1;
        }
        metrics.push(MetricsRecord {
            epoch,
            split: "train".into(),
            dataset: "all".into(),
            angular_error_deg: epoch_err / steps_per_epoch.max(1) as f64,
            loss: epoch_loss / steps_per_epoch.max(1) as f64,
            lr,
        });
        for ds in &selected {
            let stats = evaluate(&est.model, &est.gam, ds, &ds.test_indices(), apply_gam)?;
            metrics.push(MetricsRecord {
                epoch,
                split: "test".into(),
                dataset: ds.spec.name.clone(),
                angular_error_deg: stats.err_vs_label_deg,
                loss: stats.l1,
                lr,
            });
            metrics.push(MetricsRecord {
                epoch,
                split: "test_true".into(),
                dataset: ds.spec.name.clone(),
                angular_error_deg: stats.err_vs_true_deg,
                loss: stats.l1,
                lr,
            });
        }
    }
    Ok(RunOutput {
        metrics,
        step_losses,
        steps_per_epoch,
    })
}

/// One optimization step's forward/backward; gradients are left harvested
/// on the estimator's parameters. Returns the batch loss and its mean
/// angular error in degrees.
fn train_step(
    est: &mut GazeEstimator,
    datasets: &[&Dataset],
    batch: &[(usize, usize)],
    apply_gam: bool,
) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sess = Session::new();
    let mut corrected = Vec::with_capacity(batch.len());
    let mut label_data = Vec::with_capacity(batch.len() * 2);
    let mut err_sum = 0.0;
    for &(d, i) in batch {
        let ds = datasets[d];
        let s = &ds.samples[i];
        let face = est.model.face_backbone.is_some().then_some(&s.face);
        let streams = est.model.forward(&mut sess, face, &s.left_eye, &s.right_eye)?;
        let out = if apply_gam && ds.spec.dataset_id > 0 {
            match est.gam.offset_id(&mut sess, "gam", ds.spec.dataset_id, streams.fused)? {
                Some(delta) => sess.tape.add(streams.gaze, delta)?,
                None => streams.gaze,
            }
        } else {
            streams.gaze
        };
        let out_v = sess.tape.value(out);
        err_sum += angular_error_deg(GazeAngles::new(out_v[0], out_v[1]), s.label);
        corrected.push(out);
        label_data.push(s.label.yaw);
        label_data.push(s.label.pitch);
    }
    let preds = sess.tape.stack_rows(&corrected)?;
    let labels = sess
        .tape
        .constant_parts(vec![batch.len(), 2], label_data);
    let loss = l1_loss(&mut sess, preds, labels)?;
    let loss_value = sess.tape.value(loss)[0];
    sess.backward(loss)?;
    harvest_grads(est, &sess);
    Ok((loss_value, err_sum / batch.len() as f64))
}

pub fn write_metrics_csv(path: &Path, metrics: &[MetricsRecord]) -> Result<()> {
    let mut text = String::from("epoch,split,dataset,angular_error_deg,loss,lr\n");
    for m in metrics {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            m.epoch, m.split, m.dataset, m.angular_error_deg, m.loss, m.lr
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::ConfigLine {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 6 fields, got {}", parts.len()),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::ConfigLine {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("bad number '{s}': {e}"),
            })
        };
        out.push(MetricsRecord {
            epoch: parts[0].parse().map_err(|e| Error::ConfigLine {
                file: path.display().to_string(),
                line: i + 1,
                msg: format!("bad epoch: {e}"),
            })?,
            split: parts[1].to_string(),
            dataset: parts[2].to_string(),
            angular_error_deg: parse_f(parts[3])?,
            loss: parse_f(parts[4])?,
            lr: parse_f(parts[5])?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    pub dataset_id: usize,
    pub content_hash: String,
    pub test_error_deg: f64,
    pub test_true_error_deg: f64,
}

/// Everything a run leaves behind, echoed into `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub version: String,
    pub seed: u64,
    pub regime: String,
    pub gam_enabled: bool,
    pub topology: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub datasets: Vec<DatasetSummary>,
    /// Shared-estimator parameters (N).
    pub estimator_params: usize,
    /// One adaptation head (K).
    pub gam_head_params: usize,
    /// N + (M − 1)·K: what is actually trainable.
    pub trainable_params: usize,
    /// N + M·K: the budget with the anchor head counted too.
    pub budget_with_anchor: usize,
    pub final_train_loss: f64,
    pub metrics_csv_sha256: String,
    pub config_echo: Vec<(String, String)>,
}

/// Writes metrics.csv, summary.json, run_manifest.txt, and checkpoint.gzf
/// into `out_dir`.
pub fn write_run_artifacts(
    out_dir: &Path,
    est: &GazeEstimator,
    datasets: &[Dataset],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    output: &RunOutput,
) -> Result<RunSummary> {
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    write_metrics_csv(&metrics_path, &output.metrics)?;
    let metrics_hash = hex_digest(&std::fs::read(&metrics_path)?);

    let checkpoint = out_dir.join("checkpoint.gzf");
    serialize::save_to_file(&checkpoint, &serialize::collect_params(est, ""))?;

    let last_epoch = output.metrics.iter().map(|m| m.epoch).max().unwrap_or(0);
    let final_of = |name: &str, split: &str| {
        output
            .metrics
            .iter()
            .find(|m| m.epoch == last_epoch && m.dataset == name && m.split == split)
            .map(|m| m.angular_error_deg)
            .unwrap_or(f64::NAN)
    };
    let dataset_summaries: Vec<DatasetSummary> = datasets
        .iter()
        .map(|d| DatasetSummary {
            name: d.spec.name.clone(),
            dataset_id: d.spec.dataset_id,
            content_hash: d.content_hash(),
            test_error_deg: final_of(&d.spec.name, "test"),
            test_true_error_deg: final_of(&d.spec.name, "test_true"),
        })
        .collect();

    let n = est.count_estimator_params();
    let k = est.count_head_params();
    let m = est.gam.num_datasets();
    let mut config_echo: Vec<(String, String)> = Vec::new();
    let mut kv = model_cfg.to_kv();
    for (key, value) in cfg.to_kv().iter() {
        kv.set(key, value);
    }
    for (key, value) in kv.iter() {
        config_echo.push((key.to_string(), value.to_string()));
    }

    let summary = RunSummary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        regime: cfg.regime.to_string(),
        gam_enabled: cfg.gam_enabled,
        topology: model_cfg.topology.to_string(),
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        datasets: dataset_summaries,
        estimator_params: n,
        gam_head_params: k,
        trainable_params: param_budget(m, n, k),
        budget_with_anchor: n + m * k,
        final_train_loss: output.step_losses.last().copied().unwrap_or(f64::NAN),
        metrics_csv_sha256: metrics_hash,
        config_echo,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    std::fs::write(out_dir.join("summary.json"), json)?;

    // reproduction manifest
    kv.set("run.version", &summary.version);
    kv.set("run.metrics_csv_sha256", &summary.metrics_csv_sha256);
    kv.set("run.checkpoint", "checkpoint.gzf");
    for d in &summary.datasets {
        kv.set(&format!("run.dataset_hash.{}", d.name), &d.content_hash);
    }
    std::fs::write(out_dir.join("run_manifest.txt"), kv.render())?;
    Ok(summary)
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join("summary.json");
    if !path.exists() {
        return Err(Error::MissingPath(path.display().to_string()));
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Rebuilds a finished run's estimator from its manifest and checkpoint.
pub fn load_run_estimator(run_dir: &Path) -> Result<(GazeEstimator, ModelConfig)> {
    let manifest = run_dir.join("run_manifest.txt");
    if !manifest.exists() {
        return Err(Error::MissingPath(manifest.display().to_string()));
    }
    let kv = crate::config::KvMap::load(&manifest)?;
    let model_cfg = ModelConfig::from_kv(&kv)?;
    let train_cfg = TrainConfig::from_kv(&kv)?;
    let num_datasets: usize = kv.parse_or("run.num_datasets", 1)?;
    let mut est = GazeEstimator::new(
        model_cfg.clone(),
        num_datasets,
        train_cfg.gam_mode,
        &mut rngs::seeded(0),
    )?;
    let stored = serialize::load_from_file(&run_dir.join("checkpoint.gzf"))?;
    serialize::assign_params(&mut est, "", &stored)?;
    Ok((est, model_cfg))
}
