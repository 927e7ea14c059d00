//! Training, evaluation, sweeps and backbone swapping.

use std::path::{Path, PathBuf};

use ptdebias_core::benchmark::{gen_bias_stsb, BiasNliGenerator, BiasNliInstance, BiasStsbUnit, BiosRecord, ClassSet};
use ptdebias_core::encoder::{build_encoder, BackboneSource, EncoderConfig, EncoderHandle};
use ptdebias_core::head::TaskKind;
use ptdebias_core::lexicon::{augment_corpus, CounterfactualExample, Label, LabeledText, TextUnit};
use ptdebias_core::metrics::{
    bios_bias, correlation, nli_bias, stsb_bias, BiosPrediction, Correlation, DEFAULT_NLI_THRESHOLDS,
    DEFAULT_STSB_THRESHOLDS,
};
use ptdebias_core::toy::generate_toy_task;
use ptdebias_core::Result as CoreResult;
use ptdebias_core::train::{predict_nli, score_bias_stsb, train, Model, Scorer, TrainData};

use crate::checkpoint::{
    backbone_digest, load_backbone, load_checkpoint, read_backbone_meta, save_checkpoint, BackboneMeta, Checkpoint,
    Manifest, FORMAT_VERSION,
};
use crate::config::{BackboneSpec, ExperimentConfig, NliSampling, TaskName};
use crate::error::{IoContext, Result, RunnerError};
use crate::io::{
    bios_as_labeled, lexicon_or_default, load_article_rule, load_bios, load_classes, load_pairs, load_snli, load_stsb,
    read_activities, read_lines, read_nli_corpus, read_stsb_corpus, write_json,
};
use crate::report::{
    bios_bias_metrics, comparison_table, correlation_metrics, nli_bias_metrics, stsb_bias_metrics, BackboneAudit,
    BiasReport, EpochPoint, Metrics, NliSampleInfo, SeedResult,
};

pub const REPORT_FILE: &str = "report.json";

/// Which bias benchmark an evaluation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Benchmark {
    BiasStsb,
    BiasNli,
    Bios,
}

impl Benchmark {
    pub fn as_str(self) -> &'static str {
        match self {
            Benchmark::BiasStsb => "bias-stsb",
            Benchmark::BiasNli => "bias-nli",
            Benchmark::Bios => "bios",
        }
    }

    pub fn for_task(task: TaskName) -> Self {
        match task {
            TaskName::Stsb | TaskName::ToySynthetic => Benchmark::BiasStsb,
            TaskName::Snli => Benchmark::BiasNli,
            TaskName::Bios => Benchmark::Bios,
        }
    }
}

pub fn load_encoder(spec: &BackboneSpec) -> Result<EncoderHandle> {
    match spec {
        BackboneSpec::Toy {
            layers,
            hidden,
            heads,
            seed,
        } => Ok(build_encoder(BackboneSource::Toy {
            config: EncoderConfig::toy(*layers, *hidden, *heads),
            seed: *seed,
        })?),
        BackboneSpec::Checkpoint { path } => load_backbone(path),
    }
}

fn encoder_config(spec: &BackboneSpec) -> Result<EncoderConfig> {
    match spec {
        BackboneSpec::Toy {
            layers, hidden, heads, ..
        } => Ok(EncoderConfig::toy(*layers, *hidden, *heads)),
        BackboneSpec::Checkpoint { path } => Ok(read_backbone_meta(path)?.config),
    }
}

/// Returns `cfg` pointed at the backbone stored in `checkpoint`. The new
/// backbone must share layer count, hidden size and head count with the
/// current one; nothing else changes.
pub fn swap_backbone(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<ExperimentConfig> {
    let current = encoder_config(&cfg.backbone)?;
    let incoming = read_backbone_meta(checkpoint)?.config;
    for (what, a, b) in [
        ("hidden size", current.hidden, incoming.hidden),
        ("layer count", current.layers, incoming.layers),
        ("head count", current.heads, incoming.heads),
    ] {
        if a != b {
            return Err(RunnerError::IncompatibleBackbone(format!(
                "{what} {b} in {} differs from the configured {a}",
                checkpoint.display()
            )));
        }
    }
    let mut out = cfg.clone();
    out.backbone = BackboneSpec::Checkpoint {
        path: checkpoint.to_path_buf(),
    };
    Ok(out)
}

/// The bias benchmark a run or evaluation scores.
#[derive(Debug, Clone)]
pub enum BiasProbe {
    Stsb(Vec<BiasStsbUnit>),
    Nli {
        instances: Vec<BiasNliInstance>,
        info: NliSampleInfo,
    },
    Bios {
        records: Vec<BiosRecord>,
        classes: ClassSet,
    },
}

impl BiasProbe {
    /// Metric tracked along epochs.
    pub fn probe_name(&self) -> &'static str {
        match self {
            BiasProbe::Stsb(_) => "avg_abs_diff",
            BiasProbe::Nli { .. } => "net_neutral",
            BiasProbe::Bios { .. } => "gap_tpr",
        }
    }

    pub fn nli_info(&self) -> Option<NliSampleInfo> {
        match self {
            BiasProbe::Nli { info, .. } => Some(info.clone()),
            _ => None,
        }
    }

    /// Bias metrics and warnings for one scorer.
    pub fn evaluate(&self, scorer: &Scorer<'_>) -> CoreResult<(Metrics, Vec<String>)> {
        match self {
            BiasProbe::Stsb(units) => {
                let scored = score_bias_stsb(scorer, units)?;
                Ok((stsb_bias_metrics(&stsb_bias(&scored, &DEFAULT_STSB_THRESHOLDS)?), Vec::new()))
            }
            BiasProbe::Nli { instances, .. } => {
                let preds = predict_nli(scorer, instances)?;
                Ok((nli_bias_metrics(&nli_bias(&preds, &DEFAULT_NLI_THRESHOLDS)?), Vec::new()))
            }
            BiasProbe::Bios { records, classes } => {
                let mut preds = Vec::with_capacity(records.len());
                for r in records {
                    let class = scorer.predict_class(&TextUnit::single(r.text.clone()))?;
                    preds.push(BiosPrediction {
                        predicted_profession: classes.label(class).unwrap_or_default().to_string(),
                        gold_profession: r.profession.clone(),
                        gender: r.gender,
                    });
                }
                let b = bios_bias(&preds)?;
                let warnings = b
                    .excluded_occupations
                    .iter()
                    .map(|o| format!("occupation `{o}` lacks one gender in the test split; left out of gap_rms"))
                    .collect();
                Ok((bios_bias_metrics(&b), warnings))
            }
        }
    }

    pub fn probe(&self, scorer: &Scorer<'_>) -> CoreResult<f64> {
        let (m, _) = self.evaluate(scorer)?;
        Ok(m[self.probe_name()])
    }
}

fn need<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| RunnerError::Config(format!("data.{key} is required")))
}

/// Builds the bias benchmark the config points at. Toy runs fall back to the
/// toy task's templates and professions.
pub fn build_probe(cfg: &ExperimentConfig, benchmark: Benchmark, classes: Option<&ClassSet>) -> Result<BiasProbe> {
    let d = &cfg.data;
    match benchmark {
        Benchmark::BiasStsb => {
            if let Some(corpus) = &d.bias_corpus {
                return Ok(BiasProbe::Stsb(read_stsb_corpus(corpus)?));
            }
            let (templates, professions) = match (&d.templates, &d.professions) {
                (Some(t), Some(p)) => (read_lines(t)?, read_lines(p)?),
                _ if cfg.task == TaskName::ToySynthetic => {
                    let toy = generate_toy_task(&cfg.toy);
                    (toy.bias_templates, toy.bias_professions)
                }
                _ => {
                    return Err(RunnerError::Config(
                        "data.templates and data.professions are required for Bias-STS-B".into(),
                    ))
                }
            };
            let (m, f) = &cfg.gender_terms;
            Ok(BiasProbe::Stsb(gen_bias_stsb(&templates, &professions, (m, f))?))
        }
        Benchmark::BiasNli => {
            let s: &NliSampling = &cfg.nli_sampling;
            if let Some(corpus) = &d.bias_corpus {
                let instances = read_nli_corpus(corpus)?;
                let info = NliSampleInfo {
                    fraction: 1.0,
                    seed: s.seed,
                    full: true,
                    instances: instances.len(),
                    corpus_size: instances.len(),
                };
                return Ok(BiasProbe::Nli { instances, info });
            }
            let generator = BiasNliGenerator::new(
                read_lines(need(&d.gender_words, "gender_words")?)?,
                read_lines(need(&d.occupations, "occupations")?)?,
                read_activities(need(&d.activities, "activities")?)?,
                load_article_rule(d.article_exceptions.as_deref())?,
            )?;
            let instances: Vec<BiasNliInstance> = if s.full {
                generator.iter().collect()
            } else {
                generator
                    .stratified_sample(s.fraction, s.seed)
                    .into_iter()
                    .filter_map(|i| generator.get(i))
                    .collect()
            };
            let info = NliSampleInfo {
                fraction: if s.full { 1.0 } else { s.fraction },
                seed: s.seed,
                full: s.full,
                instances: instances.len(),
                corpus_size: generator.len(),
            };
            Ok(BiasProbe::Nli { instances, info })
        }
        Benchmark::Bios => {
            let classes = match classes {
                Some(c) => c.clone(),
                None => load_classes(d.bios_classes.as_deref())?,
            };
            let records = load_bios(need(&d.test, "test")?, &classes)?;
            Ok(BiasProbe::Bios { records, classes })
        }
    }
}

/// Everything a training run reads from disk (or generates).
#[derive(Debug, Clone)]
pub struct TaskData {
    pub kind: TaskKind,
    pub train: Vec<CounterfactualExample>,
    pub dev: Vec<LabeledText>,
    /// Held-out split for task metrics; the dev split when absent.
    pub test: Option<Vec<LabeledText>>,
    pub auxiliary: Vec<CounterfactualExample>,
    pub probe: BiasProbe,
    pub classes: Option<ClassSet>,
    pub lexicon_digest: String,
}

pub fn load_task_data(cfg: &ExperimentConfig) -> Result<TaskData> {
    let (lexicon, lexicon_digest) = lexicon_or_default(cfg.lexicon.as_deref())?;
    let d = &cfg.data;
    let mut classes = None;
    let (kind, train_set, dev, test) = match cfg.task {
        TaskName::ToySynthetic => {
            let toy = generate_toy_task(&cfg.toy);
            (TaskKind::Regression, toy.train, toy.dev, None)
        }
        TaskName::Stsb => {
            let test = d.test.as_deref().map(load_stsb).transpose()?;
            (
                TaskKind::Regression,
                load_stsb(need(&d.train, "train")?)?,
                load_stsb(need(&d.dev, "dev")?)?,
                test,
            )
        }
        TaskName::Snli => {
            let test = d.test.as_deref().map(load_snli).transpose()?;
            (
                TaskKind::Classification { num_classes: 3 },
                load_snli(need(&d.train, "train")?)?,
                load_snli(need(&d.dev, "dev")?)?,
                test,
            )
        }
        TaskName::Bios => {
            let set = load_classes(d.bios_classes.as_deref())?;
            let train_set = bios_as_labeled(&load_bios(need(&d.train, "train")?, &set)?, &set);
            let dev = bios_as_labeled(&load_bios(need(&d.dev, "dev")?, &set)?, &set);
            let kind = TaskKind::Classification { num_classes: set.len() };
            classes = Some(set);
            (kind, train_set, dev, None)
        }
    };
    let auxiliary = match (&d.auxiliary, cfg.method.needs_auxiliary_pairs()) {
        (Some(p), true) => load_pairs(p)?,
        _ => Vec::new(),
    };
    let probe = build_probe(cfg, Benchmark::for_task(cfg.task), classes.as_ref())?;
    log::info!(
        "{}: {} train, {} dev examples",
        cfg.task,
        train_set.len(),
        dev.len()
    );
    Ok(TaskData {
        kind,
        train: augment_corpus(&train_set, &lexicon),
        dev,
        test,
        auxiliary,
        probe,
        classes,
        lexicon_digest,
    })
}

/// Task metrics on a labeled split: Pearson and Spearman for regression,
/// accuracy for classification.
pub fn task_metrics(scorer: &Scorer<'_>, split: &[LabeledText]) -> Result<Metrics> {
    match scorer.kind() {
        TaskKind::Regression => {
            let mut preds = Vec::with_capacity(split.len());
            let mut golds = Vec::with_capacity(split.len());
            for ex in split {
                preds.push(scorer.score(&ex.text)?);
                golds.push(match ex.label {
                    Label::Score(y) => y,
                    Label::Class(c) => c as f64,
                });
            }
            let c = correlation(&preds, &golds).unwrap_or(Correlation {
                pearson: 0.0,
                spearman: 0.0,
            });
            Ok(correlation_metrics(&c))
        }
        TaskKind::Classification { .. } => {
            let mut hits = 0usize;
            for ex in split {
                if let Label::Class(c) = ex.label {
                    hits += usize::from(scorer.predict_class(&ex.text)? == c);
                }
            }
            Ok(Metrics::from([("accuracy".into(), hits as f64 / split.len().max(1) as f64)]))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub report: BiasReport,
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
}

fn seed_dir(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Trains every configured seed, keeps the best-on-dev checkpoint of each,
/// scores the bias benchmark and writes `report.json` to the run directory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainingRun> {
    cfg.validate()?;
    let handle = load_encoder(&cfg.backbone)?;
    let before = backbone_digest(handle.backbone());
    let data = load_task_data(cfg)?;
    let run_dir = cfg.run_dir();
    let config_hash = cfg.hash();
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut checkpoints = Vec::with_capacity(cfg.seeds.len());
    let mut warnings = Vec::new();

    for &seed in &cfg.seeds {
        let tc = cfg.train_config(seed, data.kind);
        log::info!("training {} seed {seed}", cfg.method);
        let outcome = train(
            &handle,
            &tc,
            TrainData {
                train: &data.train,
                dev: &data.dev,
                auxiliary: &data.auxiliary,
            },
            |model: &Model| {
                if !cfg.probe_every_epoch {
                    return Ok(None);
                }
                let scorer = Scorer::from_model(&handle, model, cfg.max_len)?;
                data.probe.probe(&scorer).map(Some)
            },
        )?;
        let scorer = Scorer::from_model(&handle, &outcome.model, cfg.max_len)?;
        let mut task = task_metrics(&scorer, data.test.as_deref().unwrap_or(&data.dev))?;
        task.insert(format!("dev_{}", cfg.task.dev_metric_name()), outcome.best_dev_metric);
        let (bias, w) = data.probe.evaluate(&scorer)?;
        warnings.extend(w.into_iter().map(|w| format!("seed {seed}: {w}")));

        let dir = run_dir.join(seed_dir(seed));
        let ckpt = Checkpoint {
            manifest: Manifest {
                format_version: FORMAT_VERSION,
                backbone: BackboneMeta {
                    id: handle.id().to_string(),
                    config: handle.config().clone(),
                    digest: before.clone(),
                },
                num_layers: handle.num_layers(),
                hidden_size: handle.hidden_size(),
                prompt_length: cfg.prompt_length,
                pooling: cfg.pooling,
                max_len: cfg.max_len,
                task: cfg.task,
                task_kind: data.kind,
                classes: data.classes.as_ref().map(|c| c.labels().to_vec()),
                method: cfg.method,
                lexicon_sha256: data.lexicon_digest.clone(),
                config_hash: config_hash.clone(),
                seed,
                best_epoch: outcome.best_epoch,
                dev_metric: outcome.best_dev_metric,
            },
            bank: outcome.model.bank(),
            head: outcome.model.head.clone(),
        };
        checkpoints.push(save_checkpoint(&dir, &handle, &ckpt)?);
        seeds.push(SeedResult {
            seed,
            best_epoch: outcome.best_epoch,
            task,
            bias,
            series: outcome.history.iter().map(EpochPoint::from).collect(),
            checkpoint: Some(seed_dir(seed)),
        });
    }

    let after = backbone_digest(handle.backbone());
    if after != before {
        return Err(RunnerError::BackboneModified { before, after });
    }
    let mut report = BiasReport {
        config_hash,
        label: cfg.name.clone().unwrap_or_else(|| cfg.method.to_string()),
        task: cfg.task.to_string(),
        method: cfg.method.to_string(),
        dev_metric_name: cfg.task.dev_metric_name().to_string(),
        bias_probe_name: cfg.probe_every_epoch.then(|| data.probe.probe_name().to_string()),
        config: Some(cfg.clone()),
        backbone: BackboneAudit {
            id: handle.id().to_string(),
            digest_before: before,
            digest_after: after,
        },
        seeds,
        mean_task: Metrics::new(),
        std_task: Metrics::new(),
        mean_bias: Metrics::new(),
        std_bias: Metrics::new(),
        nli_sample: data.probe.nli_info(),
        warnings,
    };
    report.finalize();
    write_json(&run_dir.join(REPORT_FILE), &report)?;
    Ok(TrainingRun {
        report,
        run_dir,
        checkpoints,
    })
}

fn benchmark_matches(task: TaskName, benchmark: Benchmark) -> bool {
    Benchmark::for_task(task) == benchmark
}

/// Scores a saved checkpoint on a bias benchmark. Data locations come from
/// `cfg.data`; task metrics use `data.test` when given (the toy dev split
/// for toy checkpoints).
pub fn run_eval(checkpoint: &Path, benchmark: Benchmark, cfg: &ExperimentConfig) -> Result<BiasReport> {
    let (handle, ckpt) = load_checkpoint(checkpoint)?;
    let m = &ckpt.manifest;
    if !benchmark_matches(m.task, benchmark) {
        return Err(RunnerError::TaskMismatch {
            checkpoint: m.task.to_string(),
            benchmark: benchmark.as_str().to_string(),
        });
    }
    let mut view = cfg.clone();
    view.task = m.task;
    let classes = m.classes.clone().map(ClassSet::new);
    let probe = build_probe(&view, benchmark, classes.as_ref())?;
    let scorer = Scorer::new(&handle, ckpt.bank.clone(), ckpt.head.clone(), m.pooling, m.max_len)?;
    let (bias, warnings) = probe.evaluate(&scorer)?;

    let split = match (m.task, &cfg.data.test) {
        (TaskName::ToySynthetic, _) => Some(generate_toy_task(&cfg.toy).dev),
        (TaskName::Stsb, Some(p)) => Some(load_stsb(p)?),
        (TaskName::Snli, Some(p)) => Some(load_snli(p)?),
        (TaskName::Bios, _) => match &probe {
            BiasProbe::Bios { records, classes } => Some(bios_as_labeled(records, classes)),
            _ => None,
        },
        _ => None,
    };
    let mut task = match split {
        Some(s) if !s.is_empty() => task_metrics(&scorer, &s)?,
        _ => Metrics::new(),
    };
    task.insert(format!("dev_{}", m.task.dev_metric_name()), m.dev_metric);

    let digest = backbone_digest(handle.backbone());
    let mut report = BiasReport {
        config_hash: m.config_hash.clone(),
        label: format!("{}-seed{}", m.method, m.seed),
        task: m.task.to_string(),
        method: m.method.to_string(),
        dev_metric_name: m.task.dev_metric_name().to_string(),
        bias_probe_name: None,
        config: None,
        backbone: BackboneAudit {
            id: m.backbone.id.clone(),
            digest_before: m.backbone.digest.clone(),
            digest_after: digest,
        },
        seeds: vec![SeedResult {
            seed: m.seed,
            best_epoch: m.best_epoch,
            task,
            bias,
            series: Vec::new(),
            checkpoint: None,
        }],
        mean_task: Metrics::new(),
        std_task: Metrics::new(),
        mean_bias: Metrics::new(),
        std_bias: Metrics::new(),
        nli_sample: probe.nli_info(),
        warnings,
    };
    report.finalize();
    Ok(report)
}

/// Values to sweep; empty axes keep the base config's value.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    pub prompt_length: Vec<usize>,
    pub temperature: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl SweepGrid {
    /// Cartesian product of the non-empty axes.
    pub fn points(&self, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
        if self.prompt_length.is_empty() && self.temperature.is_empty() && self.alpha.is_empty() {
            return Err(RunnerError::EmptyGrid);
        }
        let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
        let lengths = if self.prompt_length.is_empty() {
            vec![base.prompt_length]
        } else {
            self.prompt_length.clone()
        };
        let mut out = Vec::new();
        for &l in &lengths {
            for &t in &or(&self.temperature, base.temperature) {
                for &a in &or(&self.alpha, base.alpha) {
                    let mut cfg = base.clone();
                    cfg.prompt_length = l;
                    cfg.temperature = t;
                    cfg.alpha = a;
                    let stem = base.name.clone().unwrap_or_else(|| base.method.to_string());
                    cfg.name = Some(format!("{stem}-l{l}-t{t}-a{a}"));
                    cfg.validate()?;
                    out.push(cfg);
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub reports: Vec<BiasReport>,
    pub table: String,
    pub table_path: PathBuf,
}

/// One training run per grid point, then a markdown comparison table.
pub fn run_sweep(cfg: &ExperimentConfig, grid: &SweepGrid) -> Result<SweepOutcome> {
    let points = grid.points(cfg)?;
    let mut reports = Vec::with_capacity(points.len());
    for p in &points {
        reports.push(run_training(p)?.report);
    }
    let table = comparison_table(&reports);
    let hashes: Vec<&str> = reports.iter().map(|r| r.config_hash.as_str()).collect();
    let id = &crate::config::hex_digest(hashes.join(",").as_bytes())[..12];
    let root = cfg.output_root();
    std::fs::create_dir_all(&root).at(&root)?;
    let table_path = root.join(format!("sweep-{id}.md"));
    std::fs::write(&table_path, &table).at(&table_path)?;
    Ok(SweepOutcome {
        reports,
        table,
        table_path,
    })
}
