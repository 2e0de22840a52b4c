use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Args;
use gradsup::boundary::boundary_grid;
use gradsup::data::{
    gen_masked_multilabel, gen_spurious_ood, load_jsonl, pair_index, save_jsonl, split, write_manifest, Manifest,
    MultilabelConfig, SpuriousConfig,
};
use gradsup::evaluation::{evaluate_suite, SuiteOptions};
use gradsup::models::{load_checkpoint, save_checkpoint};
use gradsup::training::{prepare, Ablation, ModelSpec, TrainConfig};
use gradsup::{Dataset, ModelParams};
use serde::{Deserialize, Serialize};

use crate::data_dir::{evaluation_splits, load_split, require_dir, split_path, TRAIN, VALIDATION};
use crate::{MultilabelArgs, SpuriousArgs, UsageError};

/// Contents of the `--config` file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub train: TrainConfig,
}

fn read_config(path: Option<&Path>) -> anyhow::Result<ExperimentConfig> {
    let Some(path) = path else {
        return Ok(ExperimentConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())).into())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_splits(
    dir: &Path,
    generator: &str,
    seed: u64,
    params: serde_json::Value,
    splits: &[(&str, &Dataset)],
) -> anyhow::Result<()> {
    create_dir(dir)?;
    let mut files = Vec::new();
    for (name, data) in splits {
        let path = split_path(dir, name);
        save_jsonl(data, &path)?;
        files.push(format!("{name}.jsonl"));
    }
    let manifest = Manifest { generator: generator.to_string(), seed, params, files };
    write_manifest(&manifest, dir.join("manifest.json"))?;
    println!("wrote {} splits to {}", splits.len(), dir.display());
    Ok(())
}

pub fn gen_spurious(a: SpuriousArgs) -> anyhow::Result<()> {
    let d = SpuriousConfig::default();
    let cfg = SpuriousConfig {
        n: a.n.unwrap_or(d.n),
        d: a.d.unwrap_or(d.d),
        sigma: a.sigma.unwrap_or(d.sigma),
        rho: a.rho.unwrap_or(d.rho),
        pair_fraction: a.pair_fraction.unwrap_or(d.pair_fraction),
        n_validation: a.n_validation.unwrap_or(d.n_validation),
        n_test: a.n_test.unwrap_or(d.n_test),
        seed: a.seed,
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let s = gen_spurious_ood(&cfg)?;
    write_splits(
        &a.out,
        "spurious",
        cfg.seed,
        serde_json::to_value(&cfg)?,
        &[(TRAIN, &s.train), (VALIDATION, &s.validation), ("ood_test", &s.ood_test)],
    )
}

pub fn gen_multilabel(a: MultilabelArgs) -> anyhow::Result<()> {
    let d = MultilabelConfig::default();
    let classes = a.classes.unwrap_or(d.classes);
    let cfg = MultilabelConfig {
        n: a.n.unwrap_or(d.n),
        classes,
        cooccurrence: gradsup::data::default_cooccurrence(classes),
        prototype_dim: a.prototype_dim.unwrap_or(d.prototype_dim),
        noise: a.noise.unwrap_or(d.noise),
        pair_fraction: a.pair_fraction.unwrap_or(d.pair_fraction),
        n_test: a.n_test.unwrap_or(d.n_test),
        seed: a.seed,
        ..d
    };
    cfg.validate().map_err(|e| UsageError(e.to_string()))?;
    let g = gen_masked_multilabel(&cfg)?;
    let frac = a.validation_fraction;
    let mut parts = split(&g.train, &[1.0 - frac, frac], cfg.seed)?.into_iter();
    let (train, validation) =
        (parts.next().unwrap_or_else(Dataset::empty), parts.next().unwrap_or_else(Dataset::empty));
    let mut params = serde_json::to_value(&cfg)?;
    params["validation_fraction"] = serde_json::json!(frac);
    write_splits(
        &a.out,
        "multilabel",
        cfg.seed,
        params,
        &[
            (TRAIN, &train),
            (VALIDATION, &validation),
            ("test_original", &g.test_original),
            ("test_edited", &g.test_edited),
            ("test_hard_edited", &g.test_hard_edited),
        ],
    )
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: gradsup::Error| e.to_string())
}

#[derive(Args)]
pub struct TrainArgs {
    /// Directory with train.jsonl and validation.jsonl
    #[arg(long)]
    data: PathBuf,
    /// Weight of the gradient-supervision term (overrides the config)
    #[arg(long)]
    lambda: Option<f64>,
    /// JSON file with "model" and "train" sections
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint path
    #[arg(long)]
    out: PathBuf,
    /// none | random-relations | no-cf-data | shuffled-labels
    #[arg(long, default_value = "none", value_parser = parse_ablation)]
    ablation: Ablation,
    /// Seed for initialisation, batch order and ablations (overrides the config)
    #[arg(long)]
    seed: Option<u64>,
    /// History CSV path [default: checkpoint path with extension history.csv]
    #[arg(long)]
    history: Option<PathBuf>,
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    require_dir(&a.data)?;
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(l) = a.lambda {
        cfg.train.gs.lambda = l;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate().map_err(|e| UsageError(e.to_string()))?;
    let train_set = load_split(&a.data, TRAIN)?;
    let validation = load_split(&a.data, VALIDATION)?;
    let seed = cfg.train.seed;
    let p = prepare(a.ablation, &train_set, &validation, seed)?;
    let width = p.train.feature_width().context("training split is empty")?;
    let init = cfg.model.build(width, p.train.label_arity(), seed)?;
    log::info!("training on {} examples with {} pairs", p.train.len(), p.pairs.len());
    let outcome = gradsup::train(&init, &p.train, &p.pairs, &p.validation, &cfg.train)?;
    save_checkpoint(&outcome.params, &a.out)?;
    let history = a.history.unwrap_or_else(|| a.out.with_extension("history.csv"));
    outcome.history.write_csv(&history)?;
    let chosen = outcome.history.chosen_epoch;
    let metric = chosen.map(|e| outcome.history.epochs[e].val_metric);
    println!(
        "wrote {} and {} (chosen epoch {}, validation {})",
        a.out.display(),
        history.display(),
        chosen.map_or("-".into(), |e| e.to_string()),
        metric.map_or("-".into(), |m| format!("{m:.4}"))
    );
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint; repeat to evaluate the mean-logit ensemble
    #[arg(long = "model", required = true)]
    models: Vec<PathBuf>,
    /// Dataset directory; every split except train is scored
    #[arg(long)]
    data: PathBuf,
    /// JSON report path; the text table goes next to it with extension txt
    #[arg(long)]
    report: PathBuf,
    /// Checkpoint trained on shuffled labels, reported as the chance row; repeatable
    #[arg(long = "chance-model")]
    chance_models: Vec<PathBuf>,
    /// Config whose "train" section sets the task and the pair rule for alignment
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load_models(paths: &[PathBuf]) -> anyhow::Result<Vec<ModelParams>> {
    paths.iter().map(|p| load_checkpoint(p).map_err(anyhow::Error::from)).collect()
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    require_dir(&a.data)?;
    let cfg = read_config(a.config.as_deref())?;
    let members = load_models(&a.models)?;
    let chance = load_models(&a.chance_models)?;
    let splits = evaluation_splits(&a.data)?;
    if splits.is_empty() {
        return Err(UsageError(format!("no evaluation splits in {}", a.data.display())).into());
    }
    for (name, data) in &splits {
        for (m, path) in members.iter().chain(&chance).zip(a.models.iter().chain(&a.chance_models)) {
            if data.label_arity() != m.output_arity() || data.feature_width() != Some(m.input_width()) {
                anyhow::bail!(
                    "{} ({} inputs, {} outputs) does not match split {name} ({:?} inputs, {} labels)",
                    path.display(),
                    m.input_width(),
                    m.output_arity(),
                    data.feature_width(),
                    data.label_arity()
                );
            }
        }
    }
    let train_path = split_path(&a.data, TRAIN);
    let train_set = if train_path.is_file() { Some(load_split(&a.data, TRAIN)?) } else { None };
    let pairs = train_set.as_ref().map(pair_index).unwrap_or_default();
    let split_refs: Vec<(&str, &Dataset)> = splits.iter().map(|(n, d)| (n.as_str(), d)).collect();
    let options = SuiteOptions {
        task: cfg.train.task,
        gs: cfg.train.gs.clone(),
        chance_model: (!chance.is_empty()).then_some(chance.as_slice()),
    };
    let alignment = train_set.as_ref().map(|t| (TRAIN, t, pairs.as_slice()));
    let report = evaluate_suite(&members, &split_refs, alignment, &options)?;
    let table = report.to_table();
    fs::write(&a.report, report.to_json()?).with_context(|| format!("writing {}", a.report.display()))?;
    let table_path = a.report.with_extension("txt");
    fs::write(&table_path, &table).with_context(|| format!("writing {}", table_path.display()))?;
    print!("{table}");
    Ok(())
}

fn parse_projection(s: &str) -> Result<[usize; 2], String> {
    let parts: Vec<&str> = s.split(',').collect();
    match parts.as_slice() {
        [a, b] => Ok([a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?]),
        _ => Err(format!("expected two comma-separated coordinates, got {s:?}")),
    }
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL file, or a dataset directory (its train.jsonl is used)
    #[arg(long)]
    data: PathBuf,
    /// Grid points per side
    #[arg(long, default_value_t = 100)]
    res: usize,
    /// SVG path; the CSV grid goes next to it with extension csv
    #[arg(long)]
    out: PathBuf,
    /// Input coordinates to vary when the model is wider than two, e.g. 0,1
    #[arg(long, value_parser = parse_projection)]
    project: Option<[usize; 2]>,
    /// Output logit to plot
    #[arg(long, default_value_t = 0)]
    class: usize,
}

pub fn plot_boundary(a: PlotArgs) -> anyhow::Result<()> {
    let path = if a.data.is_dir() { split_path(&a.data, TRAIN) } else { a.data.clone() };
    if !path.is_file() {
        return Err(UsageError(format!("dataset {} does not exist", path.display())).into());
    }
    let data = load_jsonl(&path).with_context(|| format!("loading {}", path.display()))?;
    let model = load_checkpoint(&a.model)?;
    if model.input_width() != 2 && a.project.is_none() {
        return Err(UsageError(format!(
            "model input width is {}; pass --project i,j to choose two coordinates",
            model.input_width()
        ))
        .into());
    }
    let grid = boundary_grid(&model, &data, &pair_index(&data), a.res, a.project, a.class)
        .map_err(|e| UsageError(e.to_string()))?;
    let csv = a.out.with_extension("csv");
    fs::write(&a.out, grid.to_svg(600)).with_context(|| format!("writing {}", a.out.display()))?;
    fs::write(&csv, grid.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    println!("wrote {} and {}", a.out.display(), csv.display());
    Ok(())
}
