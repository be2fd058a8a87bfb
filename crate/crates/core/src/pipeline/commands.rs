use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{
    DatasetKind, EmbeddingConfig, EmbeddingSource, RelevanceConfig, RunConfig, TaggerConfig,
};
use super::data::{
    embeddings_path, meta_path, records_from_samples, split_path, tags_path, write_file,
    write_json, write_records, Dataset, DatasetMeta, RecordTagger, Split, DATASET_FORMAT_VERSION,
};
use super::PipelineError;
use crate::autodiff::{Checkpoint, DenseMatrix};
use crate::discovery::{
    run_discovery, DiscoveryConfig, DiscoveryReport, EmbeddingClient, HttpEmbeddingClient,
    HttpRelevanceClient, HttpTagger, KeywordRelevanceClient, MockEmbeddingClient, MockTagger,
    RelevanceClient, SampleRef, TagVocabulary, TaggerClient,
};
use crate::evaluation::{
    closed_set_metrics, form_open_set_groups, group_metrics, identify_biased_tags,
    logit_distribution_by_group, open_set_group_names, rank_top_biased_tags,
    write_group_metrics_csv, write_logits_jsonl, BiasedTagReport, ClosedSetMetrics, GroupMetrics,
    LogitSummary,
};
use crate::synth::{
    generate_biased_blobs, generate_two_moons_3d, BlobsConfig, TwoMoons3DConfig, MOON_BIAS_TAGS,
    MOON_CLASSES,
};
use crate::trainer::{
    bias_branch_group_accuracy, gradient_diagnostic, train, write_metrics_csv, BiasAwareModel,
    BiasBranchGroupRow, EpochMetrics, GradientDiagnostic, ModelSpec, TrainerConfig, TrainingMode,
    TrainingSet,
};

/// Mixed into a generator seed to draw the test split.
const TEST_SEED_SALT: u64 = 0x7e57_5eed;

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<(), PipelineError> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| PipelineError::io(Path::new("<stdout>"), e))
}

fn write_resolved(dir: &Path, command: &str, cfg: &RunConfig) -> Result<(), PipelineError> {
    write_file(
        &dir.join(format!("{command}.resolved.toml")),
        cfg.to_toml().as_bytes(),
    )
}

/// Generates the configured synthetic dataset into `paths.data_dir`.
pub fn run_synth(cfg: &RunConfig, out: &mut dyn Write) -> Result<(), PipelineError> {
    let s = &cfg.synth;
    if s.test_samples == 0 {
        return Err(PipelineError::Config(
            "synth.test_samples must be positive".into(),
        ));
    }
    let (train, test, classes, bias_values, feature_dim) = match &s.dataset {
        DatasetKind::TwoMoons3d(c) => {
            let test_cfg = TwoMoons3DConfig {
                n: s.test_samples,
                align_rate: s.test_align_rate.unwrap_or(0.5),
                seed: c.seed ^ TEST_SEED_SALT,
                ..c.clone()
            };
            (
                generate_two_moons_3d(c)?,
                generate_two_moons_3d(&test_cfg)?,
                MOON_CLASSES.map(String::from).to_vec(),
                MOON_BIAS_TAGS.map(String::from).to_vec(),
                3,
            )
        }
        DatasetKind::Blobs(c) => {
            let p = c.num_classes;
            let test_cfg = BlobsConfig {
                samples_per_class: s.test_samples.div_ceil(p.max(1)),
                align_rate: s.test_align_rate.unwrap_or(1.0 / p.max(1) as f64),
                seed: c.seed ^ TEST_SEED_SALT,
                ..c.clone()
            };
            (
                generate_biased_blobs(c)?,
                generate_biased_blobs(&test_cfg)?,
                (0..p).map(|k| format!("blob-{k}")).collect(),
                (0..p).map(|k| format!("style-{k}")).collect(),
                c.relevant_dim + p,
            )
        }
    };
    let dir = &cfg.paths.data_dir;
    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        classes: classes.clone(),
        bias_values: Some(bias_values.clone()),
        feature_dim,
    };
    write_json(&meta_path(dir), &meta)?;
    for (samples, split) in [(&train, Split::Train), (&test, Split::Test)] {
        let recs = records_from_samples(samples, split, &classes, &bias_values);
        write_records(&split_path(dir, split), &recs)?;
    }
    write_resolved(dir, "synth", cfg)?;
    say(
        out,
        format!(
            "wrote {} train and {} test samples to {}",
            train.len(),
            test.len(),
            dir.display()
        ),
    )
}

fn api_key(var: &Option<String>) -> Result<Option<String>, PipelineError> {
    match var {
        None => Ok(None),
        Some(name) => std::env::var(name)
            .map(Some)
            .map_err(|_| PipelineError::Config(format!("environment variable {name} is not set"))),
    }
}

/// Tags both splits, filters each class's tags for relevance and embeds
/// every sample's irrelevant tags into `paths.discovery_dir`.
pub fn run_discover(
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> Result<DiscoveryReport, PipelineError> {
    let d = &cfg.discover;
    let train = Dataset::load(&cfg.paths.data_dir, Split::Train)?;
    let test = Dataset::load(&cfg.paths.data_dir, Split::Test)?;
    let classes = train.meta.classes.clone();

    let tagger: Box<dyn TaggerClient> = match &d.tagger {
        TaggerConfig::Dataset => Box::new(RecordTagger::new(&[&train, &test])),
        TaggerConfig::Mock {
            vocabulary,
            min_tags,
            max_tags,
        } => Box::new(MockTagger {
            vocabulary: TagVocabulary::new(vocabulary),
            seed: cfg.seed,
            min_tags: *min_tags,
            max_tags: *max_tags,
        }),
        TaggerConfig::Http {
            endpoint,
            api_key_env,
        } => Box::new(HttpTagger::new(
            endpoint.clone(),
            api_key(api_key_env)?,
            d.timeout_secs,
        )),
    };
    let relevance: Box<dyn RelevanceClient> = match &d.relevance {
        RelevanceConfig::Keyword { keywords } => Box::new(KeywordRelevanceClient::new(
            keywords
                .iter()
                .map(|(c, kw)| {
                    let set = kw.iter().map(|k| k.trim().to_lowercase()).collect();
                    (c.clone(), set)
                })
                .collect(),
        )),
        RelevanceConfig::Http {
            endpoint,
            model,
            api_key_env,
        } => Box::new(HttpRelevanceClient::new(
            endpoint.clone(),
            model.clone(),
            api_key(api_key_env)?,
            d.timeout_secs,
        )),
    };
    let embedder: Box<dyn EmbeddingClient> = match &d.embedding {
        EmbeddingConfig::Mock { dim } => {
            if *dim == 0 {
                return Err(PipelineError::Config(
                    "embedding dim must be positive".into(),
                ));
            }
            Box::new(MockEmbeddingClient {
                dim: *dim,
                seed: cfg.seed,
            })
        }
        EmbeddingConfig::Http {
            endpoint,
            model,
            dim,
            api_key_env,
        } => Box::new(HttpEmbeddingClient::new(
            endpoint.clone(),
            model.clone(),
            api_key(api_key_env)?,
            *dim,
            d.timeout_secs,
        )),
    };
    if d.max_in_flight == 0 {
        return Err(PipelineError::Config(
            "discover.max_in_flight must be positive".into(),
        ));
    }

    let samples: Vec<SampleRef> = train
        .records
        .iter()
        .chain(&test.records)
        .map(|r| SampleRef {
            id: r.id.clone(),
            label: r.label,
        })
        .collect();
    let config = DiscoveryConfig {
        aggregation: d.aggregation,
        max_in_flight: d.max_in_flight,
        retries: d.retries,
    };
    let output = run_discovery(
        &samples,
        &classes,
        tagger.as_ref(),
        relevance.as_ref(),
        embedder.as_ref(),
        &config,
    )?;

    let dir = &cfg.paths.discovery_dir;
    let train_ids: HashSet<&str> = train.records.iter().map(|r| r.id.as_str()).collect();
    let (train_tags, test_tags) = output.records.split_at(train.len());
    let (train_emb, test_emb): (Vec<_>, Vec<_>) = output
        .embeddings
        .iter()
        .cloned()
        .partition(|e| train_ids.contains(e.id.as_str()));
    write_records(&tags_path(dir, Split::Train), train_tags)?;
    write_records(&tags_path(dir, Split::Test), test_tags)?;
    write_records(&embeddings_path(dir, Split::Train), &train_emb)?;
    write_records(&embeddings_path(dir, Split::Test), &test_emb)?;
    write_json(&dir.join("report.json"), &output.report)?;
    write_resolved(dir, "discover", cfg)?;

    for c in &output.report.classes {
        say(
            out,
            format!(
                "{}: {} tags, {} relevant, {} LLM calls, {} failed batches",
                c.class,
                c.tags,
                c.relevant.len(),
                c.llm_calls,
                c.failures.len()
            ),
        )?;
    }
    say(
        out,
        format!(
            "{} samples, {} without irrelevant tags",
            output.report.samples, output.report.samples_without_bias
        ),
    )?;
    Ok(output.report)
}

/// Bias embeddings of a split for a model whose bias branch takes
/// `embed_dim` inputs. Vanilla models never read them and get zeros.
fn split_embeddings(
    cfg: &RunConfig,
    ds: &Dataset,
    mode: TrainingMode,
    embed_dim: Option<usize>,
) -> Result<DenseMatrix, PipelineError> {
    if mode == TrainingMode::Vanilla {
        return Ok(DenseMatrix::zeros(ds.len(), embed_dim.unwrap_or(1)));
    }
    let (m, source) = match cfg.train.embeddings {
        EmbeddingSource::Discovered => (
            ds.discovered_embeddings(&cfg.paths.discovery_dir)?,
            embeddings_path(&cfg.paths.discovery_dir, ds.split),
        ),
        EmbeddingSource::Dataset => (
            ds.record_embeddings(&cfg.paths.data_dir)?,
            split_path(&cfg.paths.data_dir, ds.split),
        ),
    };
    match embed_dim {
        Some(d) if d != m.cols() => Err(PipelineError::input(
            &source,
            format!("embeddings have width {}, the model expects {d}", m.cols()),
        )),
        _ => Ok(m),
    }
}

/// Metadata stored under `run` in a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunMetadata {
    mode: TrainingMode,
    seed: u64,
    train: super::TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub mode: TrainingMode,
    pub last_epoch: EpochMetrics,
}

/// Trains on the train split; writes the checkpoint and `metrics.csv`.
pub fn run_train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, PipelineError> {
    let t = &cfg.train;
    let trainer = TrainerConfig {
        mode: t.mode,
        optimizer: t.optimizer,
        epochs: t.epochs,
        batch_size: t.batch_size,
        seed: cfg.seed,
        lr_schedule: t.lr_schedule,
    };
    trainer.validate()?;
    let ds = Dataset::load(&cfg.paths.data_dir, Split::Train)?;
    let embeddings = split_embeddings(cfg, &ds, t.mode, None)?;
    let spec = ModelSpec {
        input_dim: ds.meta.feature_dim,
        hidden: t.hidden.clone(),
        feature_dim: t.feature_dim,
        num_classes: ds.meta.classes.len(),
        embed_dim: embeddings.cols(),
    };
    spec.validate()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut model = BiasAwareModel::new(spec, cfg.seed)?;
    let data = TrainingSet::new(ds.features(), embeddings, ds.labels())?;
    let outcome = train(&mut model, &data, &trainer)?;

    let meta = RunMetadata {
        mode: t.mode,
        seed: cfg.seed,
        train: t.clone(),
    };
    let ck = model.to_checkpoint(serde_json::to_value(&meta).expect("metadata serializes"));
    let ck_path = cfg.paths.checkpoint_path();
    write_file(&ck_path, ck.to_json().as_bytes())?;
    let mut csv = Vec::new();
    let metrics_path = cfg.paths.out_dir.join("metrics.csv");
    write_metrics_csv(&outcome.log, &mut csv).map_err(|e| PipelineError::io(&metrics_path, e))?;
    write_file(&metrics_path, &csv)?;
    write_resolved(&cfg.paths.out_dir, "train", cfg)?;

    let last = outcome.log.last().cloned().expect("epochs > 0");
    say(
        out,
        format!(
            "{} training, {} epochs: cls loss {:.4}, align loss {:.4}, train accuracy {:.4}",
            t.mode.name(),
            last.epoch + 1,
            last.cls_loss,
            last.align_loss,
            last.train_accuracy
        ),
    )?;
    say(out, format!("checkpoint written to {}", ck_path.display()))?;
    Ok(TrainSummary {
        mode: t.mode,
        last_epoch: last,
    })
}

fn load_model(path: &Path) -> Result<(BiasAwareModel, TrainingMode), PipelineError> {
    if !path.is_file() {
        return Err(PipelineError::input(path, "checkpoint not found"));
    }
    let ck = Checkpoint::load(path).map_err(|e| PipelineError::input(path, e))?;
    let model = BiasAwareModel::from_checkpoint(&ck).map_err(|e| PipelineError::input(path, e))?;
    let mode = serde_json::from_value::<TrainingMode>(ck.metadata["run"]["mode"].clone())
        .map_err(|e| PipelineError::input(path, format!("checkpoint run mode: {e}")))?;
    Ok((model, mode))
}

fn check_model_fits(
    model: &BiasAwareModel,
    ds: &Dataset,
    path: &Path,
) -> Result<(), PipelineError> {
    let spec = model.spec();
    if spec.input_dim != ds.meta.feature_dim || spec.num_classes != ds.meta.classes.len() {
        return Err(PipelineError::input(
            path,
            format!(
                "model expects {} features and {} classes, dataset has {} and {}",
                spec.input_dim,
                spec.num_classes,
                ds.meta.feature_dim,
                ds.meta.classes.len()
            ),
        ));
    }
    Ok(())
}

/// Biased tags of a split under the reference model's predictions.
fn reference_report(
    cfg: &RunConfig,
    ds: &Dataset,
    irrelevant: &[Vec<String>],
) -> Result<BiasedTagReport, PipelineError> {
    let path = cfg
        .paths
        .reference_checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoint_path());
    let (reference, _) = load_model(&path)?;
    check_model_fits(&reference, ds, &path)?;
    let (preds, _) = reference.predict(&ds.features())?;
    Ok(identify_biased_tags(
        &preds,
        &ds.labels(),
        irrelevant,
        ds.meta.classes.len(),
        cfg.eval.min_support,
        None,
    )?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTags {
    pub class: String,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub group_names: Vec<String>,
    pub open_set: GroupMetrics,
    pub closed_set: Option<ClosedSetMetrics>,
    pub top_biased_tags: Vec<NamedTags>,
    /// Max-logit distribution per open-set group (values omitted).
    pub logits: Vec<LogitSummary>,
    pub biased_tags: BiasedTagReport,
}

/// Evaluates a checkpoint on the test split with open-set groups formed from
/// the reference checkpoint's biased tags.
pub fn run_eval(cfg: &RunConfig, out: &mut dyn Write) -> Result<EvalSummary, PipelineError> {
    let ck_path = cfg.paths.checkpoint_path();
    let (model, _) = load_model(&ck_path)?;
    let ds = Dataset::load(&cfg.paths.data_dir, Split::Test)?;
    check_model_fits(&model, &ds, &ck_path)?;
    let irrelevant = ds.irrelevant_tags(&cfg.paths.discovery_dir)?;
    let report = reference_report(cfg, &ds, &irrelevant)?;
    let labels = ds.labels();
    let groups = form_open_set_groups(&labels, &irrelevant, &report)?;
    let num_groups = 2 * ds.meta.classes.len();
    let names = open_set_group_names(&ds.meta.classes);

    let (preds, logits) = model.predict(&ds.features())?;
    let metrics = group_metrics(&preds, &labels, &groups, num_groups)?;
    let closed = ds
        .bias_labels()
        .map(|(bias, aligned)| closed_set_metrics(&preds, &labels, &bias, &aligned))
        .transpose()?;
    let mut logit_summary = logit_distribution_by_group(&logits, &groups, num_groups)?;
    for s in &mut logit_summary {
        s.values.clear();
    }
    let top = rank_top_biased_tags(&report, cfg.eval.top_k)
        .into_iter()
        .map(|r| NamedTags {
            class: ds.meta.classes[r.class].clone(),
            tags: r.tags,
        })
        .collect();
    let accuracy =
        preds.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / labels.len() as f64;
    let summary = EvalSummary {
        accuracy,
        group_names: names.clone(),
        open_set: metrics,
        closed_set: closed,
        top_biased_tags: top,
        logits: logit_summary,
        biased_tags: report,
    };

    let dir = &cfg.paths.out_dir;
    let mut csv = Vec::new();
    write_group_metrics_csv(&summary.open_set, &names, &mut csv)?;
    write_file(&dir.join("eval_groups.csv"), &csv)?;
    write_json(&dir.join("eval.json"), &summary)?;
    if cfg.eval.export_logits {
        let mut buf = Vec::new();
        write_logits_jsonl(&logits, &groups, &mut buf)?;
        write_file(&dir.join("logits.jsonl"), &buf)?;
    }
    write_resolved(dir, "eval", cfg)?;
    print_eval(&summary, out)?;
    Ok(summary)
}

fn fmt_acc(a: Option<f64>) -> String {
    a.map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "absent".into())
}

fn print_eval(s: &EvalSummary, out: &mut dyn Write) -> Result<(), PipelineError> {
    let width = s
        .group_names
        .iter()
        .map(String::len)
        .max()
        .unwrap_or(0)
        .max(5);
    say(
        out,
        format!("{:<width$}  {:>7}  accuracy", "group", "samples"),
    )?;
    for g in &s.open_set.groups {
        say(
            out,
            format!(
                "{:<width$}  {:>7}  {}",
                s.group_names[g.group],
                g.samples,
                fmt_acc(g.accuracy)
            ),
        )?;
    }
    say(
        out,
        format!(
            "worst-group {:.4}  average {:.4}  overall {:.4}",
            s.open_set.worst_group_accuracy, s.open_set.average_accuracy, s.accuracy
        ),
    )?;
    if let Some(c) = &s.closed_set {
        say(
            out,
            format!(
                "bias-conflicting {}  unbiased {}",
                fmt_acc(c.bias_conflict_accuracy),
                fmt_acc(c.unbiased_accuracy)
            ),
        )?;
    }
    for t in &s.top_biased_tags {
        say(
            out,
            format!("biased tags of {}: {}", t.class, t.tags.join(", ")),
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseSummary {
    pub mode: TrainingMode,
    /// `None` when one of the two sample groups is empty.
    pub gradient: Option<GradientDiagnostic>,
    /// Accuracy of the bias branch alone per group; `None` for vanilla
    /// models, which have no trained bias branch.
    pub bias_branch: Option<Vec<BiasBranchGroupRow>>,
}

/// Gradient-norm and bias-branch diagnostics of a checkpoint on the train
/// split. Ground-truth bias labels define the groups when present, open-set
/// groups otherwise.
pub fn run_diagnose(
    cfg: &RunConfig,
    out: &mut dyn Write,
) -> Result<DiagnoseSummary, PipelineError> {
    let ck_path = cfg.paths.checkpoint_path();
    let (model, mode) = load_model(&ck_path)?;
    let ds = Dataset::load(&cfg.paths.data_dir, Split::Train)?;
    check_model_fits(&model, &ds, &ck_path)?;
    let embeddings = split_embeddings(cfg, &ds, mode, Some(model.spec().embed_dim))?;
    let data = TrainingSet::new(ds.features(), embeddings, ds.labels())?;

    let (groups, names, aligned) = match ds.bias_labels() {
        Some((bias, aligned)) => {
            let values = ds.meta.bias_values.clone().unwrap_or_default();
            let names = ds
                .meta
                .classes
                .iter()
                .flat_map(|c| values.iter().map(move |b| format!("{c}:{b}")))
                .collect::<Vec<_>>();
            let groups = ds
                .records
                .iter()
                .zip(&bias)
                .map(|(r, b)| r.label * values.len() + b)
                .collect();
            (groups, names, aligned)
        }
        None => {
            let irrelevant = ds.irrelevant_tags(&cfg.paths.discovery_dir)?;
            let report = reference_report(cfg, &ds, &irrelevant)?;
            let groups = form_open_set_groups(&ds.labels(), &irrelevant, &report)?;
            let aligned = groups.iter().map(|g| g % 2 == 1).collect();
            (groups, open_set_group_names(&ds.meta.classes), aligned)
        }
    };
    let (a_idx, c_idx): (Vec<usize>, Vec<usize>) = (0..ds.len()).partition(|&i| aligned[i]);
    let use_bias_branch = mode != TrainingMode::Vanilla;
    let gradient = if a_idx.is_empty() || c_idx.is_empty() {
        None
    } else {
        Some(gradient_diagnostic(
            &model,
            &data.subset(&a_idx),
            &data.subset(&c_idx),
            use_bias_branch,
        )?)
    };
    let bias_branch = use_bias_branch
        .then(|| bias_branch_group_accuracy(&model, &data, &groups, &names))
        .transpose()?;
    let summary = DiagnoseSummary {
        mode,
        gradient,
        bias_branch,
    };
    write_json(&cfg.paths.out_dir.join("diagnose.json"), &summary)?;
    write_resolved(&cfg.paths.out_dir, "diagnose", cfg)?;

    match &summary.gradient {
        Some(g) => say(
            out,
            format!(
                "CE gradient norm: aligned {:.6} ({} samples), conflicting {:.6} ({} samples), ratio {:.4}",
                g.mean_grad_norm_aligned,
                g.aligned_samples,
                g.mean_grad_norm_conflicting,
                g.conflicting_samples,
                g.ratio
            ),
        )?,
        None => say(out, "CE gradient norm: needs both aligned and conflicting samples")?,
    }
    match &summary.bias_branch {
        Some(rows) => {
            let width = rows.iter().map(|r| r.group.len()).max().unwrap_or(0).max(5);
            say(
                out,
                format!(
                    "{:<width$}  {:>7}  bias-branch accuracy",
                    "group", "samples"
                ),
            )?;
            for r in rows {
                say(
                    out,
                    format!(
                        "{:<width$}  {:>7}  {}",
                        r.group,
                        r.samples,
                        fmt_acc(r.accuracy)
                    ),
                )?;
            }
        }
        None => say(out, "bias branch: not applicable to a vanilla model")?,
    }
    Ok(summary)
}
