//! Experiment configuration (TOML) and the end-to-end runner:
//! load -> align -> window -> normalize -> train -> evaluate, with all
//! artifacts written to the output directory: `history.csv`, `metrics.csv`,
//! `checkpoint`, and a copy of the resolved config.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic, load_csv_dataset, normalize, window, AlignedSample, CsvDataSpec,
    FeatureFile, LabelKind, Labels, SyntheticSpec, SyntheticTask,
};
use crate::error::{Error, Result};
use crate::kernels::{par_map_collect, par_map_indices};
use crate::metrics::MetricReport;
use crate::models::{
    LateFusionModel, SaGruConfig, SaGruModel, StressModel, TemmaConfig, TemmaModel,
};
use crate::rng::Rng;
use crate::training::optimizer::OptimizerKind;
use crate::training::run::{
    train, EpochRecord, FusionTask, SaGruTask, TaskLoss, TemmaTask, TrainConfig, TrainOutcome,
    Trainable,
};
use crate::training::schedule::ScheduleWatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Humor,
    Reaction,
    StressArousal,
    StressValence,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Humor => "humor",
            Task::Reaction => "reaction",
            Task::StressArousal => "stress-arousal",
            Task::StressValence => "stress-valence",
        }
    }

    pub fn is_stress(&self) -> bool {
        matches!(self, Task::StressArousal | Task::StressValence)
    }

    fn target_series(&self) -> Option<&'static str> {
        match self {
            Task::StressArousal => Some("arousal"),
            Task::StressValence => Some("valence"),
            _ => None,
        }
    }

    fn metric_column(&self) -> &'static str {
        match self {
            Task::Humor => "auc",
            Task::Reaction => "pearson",
            Task::StressArousal => "ccc_arousal",
            Task::StressValence => "ccc_valence",
        }
    }

    fn synthetic_task(&self) -> SyntheticTask {
        match self {
            Task::Humor => SyntheticTask::Binary,
            Task::Reaction => SyntheticTask::Intensity,
            _ => SyntheticTask::Series,
        }
    }
}

/// Model hyperparameter overrides; unset fields fall back to the task's
/// defaults (transformer: 5 conv layers, kernel 3, 4 blocks, 4 heads, FC
/// 256, dropout 0.2; stress: 2 heads, 2 GRU layers, hidden 64,
/// bidirectional, 6 fusion LSTM units).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: Option<usize>,
    pub conv_layers: Option<usize>,
    pub kernel_size: Option<usize>,
    pub encoder_blocks: Option<usize>,
    pub heads: Option<usize>,
    pub head_hidden: Option<usize>,
    pub dropout: Option<f64>,
    pub max_len: Option<usize>,
    pub gru_layers: Option<usize>,
    pub hidden: Option<usize>,
    pub bidirectional: Option<bool>,
    pub fusion_lstm_units: Option<usize>,
}

impl ModelConfig {
    fn resolve_temma(&self, task: Task, dims: Vec<usize>) -> TemmaConfig {
        let mut cfg = match task {
            Task::Humor => TemmaConfig::classification(dims),
            _ => TemmaConfig::intensity(dims),
        };
        if let Some(v) = self.d_model {
            cfg.d_model = v;
        }
        if let Some(v) = self.conv_layers {
            cfg.conv_layers = v;
        }
        if let Some(v) = self.kernel_size {
            cfg.kernel_size = v;
        }
        if let Some(v) = self.encoder_blocks {
            cfg.encoder_blocks = v;
        }
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.head_hidden {
            cfg.head_hidden = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.max_len {
            cfg.max_len = v;
        }
        cfg
    }

    fn resolve_sagru(&self, dims: Vec<usize>) -> SaGruConfig {
        let mut cfg = SaGruConfig::stress(dims);
        if let Some(v) = self.heads {
            cfg.heads = v;
        }
        if let Some(v) = self.gru_layers {
            cfg.gru_layers = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.bidirectional {
            cfg.bidirectional = v;
        }
        if let Some(v) = self.fusion_lstm_units {
            cfg.fusion_lstm_units = v;
        }
        cfg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDataConfig {
    pub modalities: usize,
    pub dims: Vec<usize>,
    pub t_min: usize,
    pub t_max: usize,
    pub samples: usize,
    pub latent_dim: usize,
    pub noise: Vec<f64>,
    /// Defaults to the experiment seed.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvFeatureConfig {
    pub modality: String,
    #[serde(default)]
    pub feature_set: Option<String>,
    pub path: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvDataConfig {
    pub hop_ms: i64,
    pub labels: PathBuf,
    pub label_kind: String,
    pub features: Vec<CsvFeatureConfig>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticDataConfig>,
    pub csv: Option<CsvDataConfig>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowingConfig {
    pub win_len: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub dev_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { dev_fraction: 0.25 }
    }
}

/// Fusion-stage overrides (stress only).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FusionStageConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr_patience: usize,
}

impl Default for FusionStageConfig {
    fn default() -> Self {
        FusionStageConfig {
            optimizer: OptimizerKind::AdamW,
            lr: 0.002,
            batch_size: 64,
            max_epochs: 20,
            lr_patience: 15,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub optimizer: Option<OptimizerKind>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub lr_patience: Option<usize>,
    pub lr_factor: Option<f64>,
    /// `0` disables early stopping.
    pub stop_patience: Option<usize>,
    pub weight_decay: Option<f64>,
    pub schedule_watch: Option<ScheduleWatch>,
    pub fusion: Option<FusionStageConfig>,
}

impl TrainingConfig {
    /// Task defaults: classification Adam 1e-3, intensity Adam 1e-4 (both
    /// batch 32, halve after 5 stalled epochs, stop after 15); stress AdamW
    /// 1e-3, batch 256, 100 epochs, halve after 15, no early stop.
    fn resolve(&self, task: Task, seed: u64) -> TrainConfig {
        let (optimizer, lr, batch, epochs, lr_patience, stop): (
            OptimizerKind,
            f64,
            usize,
            usize,
            usize,
            Option<usize>,
        ) = match task {
            Task::Humor => (OptimizerKind::Adam, 1e-3, 32, 200, 5, Some(15)),
            Task::Reaction => (OptimizerKind::Adam, 1e-4, 32, 200, 5, Some(15)),
            Task::StressArousal | Task::StressValence => {
                (OptimizerKind::AdamW, 1e-3, 256, 100, 15, None)
            }
        };
        let stop_patience = match self.stop_patience {
            Some(0) => None,
            Some(p) => Some(p),
            None => stop,
        };
        TrainConfig {
            optimizer: self.optimizer.unwrap_or(optimizer),
            lr: self.lr.unwrap_or(lr),
            weight_decay: self.weight_decay.unwrap_or(0.01),
            batch_size: self.batch_size.unwrap_or(batch),
            max_epochs: self.max_epochs.unwrap_or(epochs),
            lr_patience: self.lr_patience.unwrap_or(lr_patience),
            lr_factor: self.lr_factor.unwrap_or(0.5),
            stop_patience,
            watch: self.schedule_watch.unwrap_or(ScheduleWatch::TrainLoss),
            seed,
        }
    }

    fn resolve_fusion(&self, seed: u64) -> TrainConfig {
        let f = self.fusion.clone().unwrap_or_default();
        TrainConfig {
            optimizer: f.optimizer,
            lr: f.lr,
            weight_decay: self.weight_decay.unwrap_or(0.01),
            batch_size: f.batch_size,
            max_epochs: f.max_epochs,
            lr_patience: f.lr_patience,
            lr_factor: self.lr_factor.unwrap_or(0.5),
            stop_patience: None,
            watch: self.schedule_watch.unwrap_or(ScheduleWatch::TrainLoss),
            seed,
        }
    }
}

/// The unit of reproducibility: everything needed to rerun an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub windowing: Option<WindowingConfig>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.synthetic, &self.data.csv) {
            (Some(_), Some(_)) => Err(Error::Config(
                "configure either synthetic or csv data, not both".into(),
            )),
            (None, None) => Err(Error::Config("no data source configured".into())),
            _ => Ok(()),
        }?;
        if let Some(s) = &self.data.synthetic {
            if s.dims.len() != s.modalities || s.noise.len() != s.modalities {
                return Err(Error::Config(
                    "synthetic dims/noise must match modality count".into(),
                ));
            }
            if s.t_min == 0 || s.t_min > s.t_max {
                return Err(Error::Config("invalid synthetic t range".into()));
            }
        }
        if let Some(c) = &self.data.csv {
            if c.label_kind != "per_sample" && c.label_kind != "per_step" {
                return Err(Error::Config(format!(
                    "label_kind must be per_sample or per_step, got {:?}",
                    c.label_kind
                )));
            }
        }
        if !(0.0..1.0).contains(&self.split.dev_fraction) || self.split.dev_fraction <= 0.0 {
            return Err(Error::Config(format!(
                "dev_fraction must be in (0, 1), got {}",
                self.split.dev_fraction
            )));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Output paths plus the final report of a completed run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MetricReport,
    pub history: PathBuf,
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub config: PathBuf,
}

/// CLI exit code for a failure: 1 config, 2 data, 3 training/runtime.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Data(_) | Error::DataRow { .. } => 2,
        _ => 3,
    }
}

fn load_samples(cfg: &ExperimentConfig) -> Result<Vec<AlignedSample>> {
    if let Some(s) = &cfg.data.synthetic {
        let spec = SyntheticSpec {
            modalities: s.modalities,
            dims: s.dims.clone(),
            t_range: (s.t_min, s.t_max),
            samples: s.samples,
            latent_dim: s.latent_dim,
            noise: s.noise.clone(),
            task: cfg.task.synthetic_task(),
            seed: s.seed.unwrap_or(cfg.seed),
        };
        return generate_synthetic(&spec);
    }
    let c = cfg.data.csv.as_ref().expect("validated");
    let spec = CsvDataSpec {
        features: c
            .features
            .iter()
            .map(|f| FeatureFile {
                modality: f.modality.clone(),
                feature_set: f.feature_set.clone(),
                path: f.path.clone(),
            })
            .collect(),
        labels: c.labels.clone(),
        label_kind: if c.label_kind == "per_sample" {
            LabelKind::PerSample
        } else {
            LabelKind::PerStep
        },
        hop_ms: c.hop_ms,
    };
    load_csv_dataset(&spec)
}

fn check_labels(cfg: &ExperimentConfig, samples: &[AlignedSample]) -> Result<()> {
    for s in samples {
        let ok = match cfg.task {
            Task::Humor | Task::Reaction => matches!(s.labels, Labels::PerSample(_)),
            _ => s
                .labels
                .series_index(cfg.task.target_series().expect("stress task"))
                .is_some(),
        };
        if !ok {
            return Err(Error::Data(format!(
                "sample {} labels do not fit task {}",
                s.id,
                cfg.task.name()
            )));
        }
    }
    Ok(())
}

fn split_dataset(
    samples: Vec<AlignedSample>,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Vec<AlignedSample>, Vec<AlignedSample>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "need at least 2 samples to split, got {n}"
        )));
    }
    let dev_count = ((n as f64 * dev_fraction).round() as usize).clamp(1, n - 1);
    let order = Rng::new(seed).derive(0x73706c69).shuffled_indices(n);
    let mut dev_flags = vec![false; n];
    for &i in order.iter().take(dev_count) {
        dev_flags[i] = true;
    }
    let mut train_set = Vec::with_capacity(n - dev_count);
    let mut dev_set = Vec::with_capacity(dev_count);
    for (sample, is_dev) in samples.into_iter().zip(dev_flags) {
        if is_dev {
            dev_set.push(sample);
        } else {
            train_set.push(sample);
        }
    }
    Ok((train_set, dev_set))
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut text = String::from("epoch,train_loss,dev_metric,lr\n");
    for r in history {
        text.push_str(&format!(
            "{},{},{},{}\n",
            r.epoch, r.train_loss, r.dev_metric, r.lr
        ));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Runs the configured experiment and writes `history.csv`, `metrics.csv`,
/// `checkpoint` and `config.toml` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate()?;
    let samples = load_samples(cfg)?;
    check_labels(cfg, &samples)?;

    let samples = match &cfg.windowing {
        Some(w) => {
            let mut out = Vec::new();
            for s in &samples {
                out.extend(window(s, w.win_len, w.hop)?);
            }
            out
        }
        None => samples,
    };

    let (train_raw, dev_raw) = split_dataset(samples, cfg.split.dev_fraction, cfg.seed)?;
    let (train_set, stats) = normalize(train_raw, None)?;
    let (dev_set, _) = normalize(dev_raw, Some(&stats))?;

    let dims: Vec<usize> = train_set[0].modalities.iter().map(|m| m.shape()[1]).collect();
    fs::create_dir_all(&cfg.out_dir)?;
    let history_path = cfg.out_dir.join("history.csv");
    let metrics_path = cfg.out_dir.join("metrics.csv");
    let checkpoint_path = cfg.out_dir.join("checkpoint");
    let config_path = cfg.out_dir.join("config.toml");

    let mut report = MetricReport::new(cfg.task.name(), dev_set.len());

    match cfg.task {
        Task::Humor | Task::Reaction => {
            let model_cfg = cfg.model.resolve_temma(cfg.task, dims);
            let mut model_rng = Rng::new(cfg.seed).derive(0x6d6f64);
            let model = TemmaModel::new(model_cfg, &mut model_rng)
                .map_err(|e| Error::Config(e.to_string()))?;
            let loss_kind = if cfg.task == Task::Humor {
                TaskLoss::Bce
            } else {
                TaskLoss::Mse
            };
            let mut task = TemmaTask { model, loss_kind };
            let tcfg = cfg.training.resolve(cfg.task, cfg.seed);
            let outcome = train(&mut task, &train_set, &dev_set, &tcfg)?;
            write_history(&history_path, &outcome.history)?;
            report.push(cfg.task.metric_column(), outcome.best_dev_metric);
            task.model
                .to_checkpoint(cfg.seed, outcome.best_epoch as u64)?
                .save(&checkpoint_path)?;
        }
        Task::StressArousal | Task::StressValence => {
            let target = cfg.task.target_series().expect("stress task");
            let sagru_cfg = cfg.model.resolve_sagru(dims);
            sagru_cfg
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
            let outcome = train_stress_pipeline(
                sagru_cfg,
                target,
                &train_set,
                &dev_set,
                &cfg.training.resolve(cfg.task, cfg.seed),
                &cfg.training.resolve_fusion(cfg.seed),
                cfg.seed,
                Some(&cfg.out_dir),
            )?;
            report.push(cfg.task.metric_column(), outcome.fusion_dev);
            outcome
                .model
                .to_checkpoint(cfg.seed, outcome.fusion_best_epoch as u64)?
                .save(&checkpoint_path)?;
        }
    }

    fs::write(&metrics_path, report.to_csv())?;
    fs::write(&config_path, cfg.to_toml()?)?;
    Ok(RunArtifacts {
        report,
        history: history_path,
        metrics: metrics_path,
        checkpoint: checkpoint_path,
        config: config_path,
    })
}

/// Outcome of the two-stage stress pipeline.
pub struct StressOutcome {
    pub model: StressModel,
    /// Train-set CCC of each frozen per-modality regressor.
    pub unimodal_train: Vec<f64>,
    /// Dev-set CCC of each frozen per-modality regressor.
    pub unimodal_dev: Vec<f64>,
    pub fusion_dev: f64,
    pub fusion_best_epoch: usize,
}

/// Two-stage stress training: per-modality regressors first (independently,
/// in parallel, on derived seeds), then the fusion Bi-LSTM over their frozen
/// prediction series. Histories are written into `history_dir` when given
/// (`history.csv` for the fusion stage, `history_m<i>.csv` per modality).
#[allow(clippy::too_many_arguments)]
pub fn train_stress_pipeline(
    sagru_cfg: SaGruConfig,
    target: &str,
    train_set: &[AlignedSample],
    dev_set: &[AlignedSample],
    stage1_cfg: &TrainConfig,
    fusion_cfg: &TrainConfig,
    seed: u64,
    history_dir: Option<&Path>,
) -> Result<StressOutcome> {
    let modalities = sagru_cfg.modality_dims.len();
    let base = Rng::new(seed);

    // stage 1: independent per-modality regressors
    let stage1: Vec<Result<(SaGruTask, TrainOutcome)>> = par_map_indices(modalities, |m| {
        let mut init_rng = base.derive(0x6d30 + m as u64);
        let model = SaGruModel::new(&sagru_cfg, m, &mut init_rng)?;
        let mut task = SaGruTask {
            model,
            modality: m,
            target: target.to_string(),
        };
        let tcfg = TrainConfig {
            seed: base.derive(0x7431 + m as u64).seed(),
            ..stage1_cfg.clone()
        };
        let outcome = train(&mut task, train_set, dev_set, &tcfg)?;
        Ok((task, outcome))
    });
    let mut tasks = Vec::with_capacity(modalities);
    let mut unimodal_dev = Vec::with_capacity(modalities);
    for (m, r) in stage1.into_iter().enumerate() {
        let (task, outcome) = r?;
        if let Some(dir) = history_dir {
            write_history(&dir.join(format!("history_m{m}.csv")), &outcome.history)?;
        }
        unimodal_dev.push(outcome.best_dev_metric);
        tasks.push(task);
    }
    let unimodal_train = tasks
        .iter()
        .map(|t| t.dev_metric(train_set))
        .collect::<Result<Vec<f64>>>()?;

    // stage 2: fuse frozen per-modality prediction series
    let fuse = |samples: &[AlignedSample]| -> Result<Vec<AlignedSample>> {
        let fused: Vec<Result<AlignedSample>> = par_map_collect(samples, |s| {
            let series = tasks
                .iter()
                .map(|t| Ok(t.predict(s)?.values))
                .collect::<Result<Vec<_>>>()?;
            Ok(AlignedSample {
                id: s.id.clone(),
                modalities: vec![LateFusionModel::stack_inputs(&series)?],
                labels: s.labels.clone(),
                valid_len: s.valid_len,
            })
        });
        fused.into_iter().collect()
    };
    let fusion_train = fuse(train_set)?;
    let fusion_dev = fuse(dev_set)?;

    let mut fusion_rng = base.derive(0x6675);
    let fusion_model =
        LateFusionModel::new(modalities, sagru_cfg.fusion_lstm_units, &mut fusion_rng)?;
    let mut fusion_task = FusionTask {
        model: fusion_model,
        target: target.to_string(),
    };
    let fcfg = TrainConfig {
        seed: base.derive(0x7466).seed(),
        ..fusion_cfg.clone()
    };
    let outcome = train(&mut fusion_task, &fusion_train, &fusion_dev, &fcfg)?;
    if let Some(dir) = history_dir {
        write_history(&dir.join("history.csv"), &outcome.history)?;
    }

    let model = StressModel {
        cfg: sagru_cfg,
        per_modality: tasks.into_iter().map(|t| t.model).collect(),
        fusion: fusion_task.model,
    };
    Ok(StressOutcome {
        model,
        unimodal_train,
        unimodal_dev,
        fusion_dev: outcome.best_dev_metric,
        fusion_best_epoch: outcome.best_epoch,
    })
}
