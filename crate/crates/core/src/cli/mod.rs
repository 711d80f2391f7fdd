//! Command-line pipeline: `prepare`, `synth`, `train`, `evaluate`, `explain`.
//!
//! Artifacts land under `out_dir`:
//! `data/` (the dataset bundle), `models/<variant>.ckpt` with
//! `models/<variant>.log.csv`, `reports/<variant>.report.toml` and
//! `explain/<variant>.*`. Each directory also gets `effective_config.toml`.

mod config;

pub use config::{DataSection, EvalSection, ExplainSection, ItemSelection, RunConfig, SplitSection, Variant, AUTO_SAMPLE};

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::seq::SliceRandom;

use crate::data::{
    assign_groups, assign_groups_explicit, build_table, generate_synthetic, load_interactions, load_item_metadata, load_labels,
    long_tail_items, read_bundle, split_leave_one_out_with, write_bundle, DataError, DatasetBundle, FilterOptions, GroupAssignment,
    ItemGroup,
};
use crate::eval::{comparison_table, evaluate, EvalError};
use crate::explain::{explain_item, project_embeddings, render_table, write_projection, ExplainError, ItemInfo, EXPLANATION_HEADER};
use crate::model::{read_checkpoint, write_checkpoint, Checkpoint, ModelError};
use crate::seed::rng_for;
use crate::training::{LossLog, TrainError, Trainer};

#[derive(Debug, Parser)]
#[command(name = "protofair", version, about = "Prototype-based recommender with popularity-bias controls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value, e.g. `--set train.dim=16`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Load, filter, group and split a real dataset.
    Prepare,
    /// Generate and split a synthetic dataset.
    Synth,
    /// Train every configured variant.
    Train,
    /// Evaluate every trained variant.
    Evaluate,
    /// Explanation tables and a 2-D projection for one variant.
    Explain,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<ExplainError> for CliError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::CountOutOfRange { .. } => CliError::Usage(format!("explain.n_protos: {e}")),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            TrainError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn ensure_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

struct Context {
    config: RunConfig,
}

impl Context {
    fn dir(&self, name: &str) -> Result<PathBuf, CliError> {
        let d = self.config.out_dir.join(name);
        ensure_dir(&d)?;
        write(&d.join("effective_config.toml"), self.config.effective_toml())?;
        Ok(d)
    }

    fn data_dir(&self) -> PathBuf {
        self.config.out_dir.join("data")
    }

    fn model_path(&self, variant: &str) -> PathBuf {
        self.config.out_dir.join("models").join(format!("{variant}.ckpt"))
    }

    fn variants(&self) -> Result<Vec<Variant>, CliError> {
        self.config.variants().map_err(CliError::Usage)
    }

    fn bundle(&self) -> Result<DatasetBundle, CliError> {
        Ok(read_bundle(&self.data_dir())?)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    let mut overrides = cli.overrides.clone();
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(d) = &cli.out_dir {
        overrides.push(format!("out_dir={}", toml::Value::String(d.display().to_string())));
    }
    let config = RunConfig::parse(&text, &overrides).map_err(|e| CliError::Usage(format!("config: {e}")))?;
    if let Some(n) = cli.threads {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let ctx = Context { config };
    match cli.command {
        Command::Prepare => cmd_prepare(&ctx),
        Command::Synth => cmd_synth(&ctx),
        Command::Train => cmd_train(&ctx),
        Command::Evaluate => cmd_evaluate(&ctx),
        Command::Explain => cmd_explain(&ctx),
    }
}

fn save_bundle(ctx: &Context, table: &crate::data::InteractionTable, groups: GroupAssignment) -> Result<(), CliError> {
    let split = split_leave_one_out_with(table, ctx.config.seed, ctx.config.split.test_negatives)?;
    let dir = ctx.dir("data")?;
    write_bundle(&dir, &DatasetBundle { split, groups })?;
    println!("wrote dataset to {}", dir.display());
    Ok(())
}

fn cmd_prepare(ctx: &Context) -> Result<(), CliError> {
    let d = ctx.config.data.as_ref().ok_or_else(|| CliError::Usage("prepare needs a [data] section".into()))?;
    let loaded = load_interactions(&d.interactions, d.delimiter, d.max_bad_rows)?;
    for e in &loaded.errors {
        log::warn!("{}: line {}: {}", d.interactions.display(), e.line, e.message);
    }
    let metadata = d.metadata.as_deref().map(load_item_metadata).transpose()?;
    if d.require_country && metadata.is_none() {
        return Err(CliError::Usage("require_country needs data.metadata".into()));
    }
    if let Some(meta) = &metadata {
        let items: std::collections::BTreeSet<&str> = loaded.rows.iter().map(|r| r.item_key.as_str()).collect();
        let covered = items.iter().filter(|k| meta.contains_key(**k)).count();
        let coverage = if items.is_empty() { 0.0 } else { covered as f64 / items.len() as f64 };
        if coverage < d.min_country_coverage {
            return Err(CliError::Data(format!(
                "country metadata covers {:.1}% of items, below the configured {:.1}%",
                100.0 * coverage,
                100.0 * d.min_country_coverage
            )));
        }
    }
    let opts = FilterOptions { min_user: d.min_user, min_item: d.min_item, require_country: d.require_country };
    let (table, partial, stats) = build_table(&loaded.rows, opts, metadata.as_ref())?;
    println!("{}", stats.summary());

    let groups = if !d.overrepresented.is_empty() || !d.underrepresented.is_empty() {
        assign_groups_explicit(&table, &partial.item_country, d.overrepresented.clone(), d.underrepresented.clone())?
    } else if metadata.is_some() {
        assign_groups(&table, &partial.item_country)?
    } else {
        log::warn!("no country metadata; only the long-tail metric will be available");
        GroupAssignment { item_country: partial.item_country, long_tail_items: long_tail_items(&table), ..Default::default() }
    };
    print_groups(&groups);
    save_bundle(ctx, &table, groups)
}

fn cmd_synth(ctx: &Context) -> Result<(), CliError> {
    let spec = ctx.config.synth.as_ref().ok_or_else(|| CliError::Usage("synth needs a [synth] section".into()))?;
    let (table, groups) = generate_synthetic(spec, ctx.config.seed)?;
    println!(
        "generated {} users, {} items, {} interactions",
        table.num_users(),
        table.num_items(),
        table.num_interactions()
    );
    print_groups(&groups);
    save_bundle(ctx, &table, groups)
}

fn print_groups(g: &GroupAssignment) {
    let join = |s: &std::collections::BTreeSet<String>| s.iter().cloned().collect::<Vec<_>>().join(" ");
    println!("overrepresented: {}", join(&g.overrepresented));
    println!("underrepresented: {}", join(&g.underrepresented));
    println!("long-tail items: {}", g.long_tail_items.len());
}

fn train_variant(ctx: &Context, v: &Variant, bundle: &DatasetBundle, dir: &Path) -> Result<crate::training::LossBreakdown, CliError> {
    let mut trainer = Trainer::new(v.config.clone(), &bundle.split.train)?;
    let log_path = dir.join(format!("{}.log.csv", v.name));
    let mut log = LossLog::create(&log_path).map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
    let mut last = Default::default();
    for _ in 0..v.config.epochs {
        let e = trainer.run_epoch()?;
        log.append(e.epoch, &e.breakdown).map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
        log::info!("{} epoch {}: total {:.5}", v.name, e.epoch, e.breakdown.total);
        last = e.breakdown;
    }
    let config = toml::to_string(&v.config).expect("config serializes");
    write_checkpoint(&ctx.model_path(&v.name), &Checkpoint { model: trainer.into_model(), config })?;
    Ok(last)
}

fn cmd_train(ctx: &Context) -> Result<(), CliError> {
    let variants = ctx.variants()?;
    let bundle = ctx.bundle()?;
    let dir = ctx.dir("models")?;
    let mut failure: Option<CliError> = None;
    println!("{:<32} {:>12} {:>12} {:>12}", "variant", "rec_user", "rec_item", "total");
    for v in &variants {
        match train_variant(ctx, v, &bundle, &dir) {
            Ok(b) => println!("{:<32} {:>12.5} {:>12.5} {:>12.5}", v.name, b.rec_user, b.rec_item, b.total),
            Err(e) => {
                eprintln!("variant {} failed: {e}", v.name);
                if failure.as_ref().is_none_or(|f| e.exit_code() > f.exit_code()) {
                    failure = Some(e);
                }
            }
        }
    }
    failure.map_or(Ok(()), Err)
}

fn cmd_evaluate(ctx: &Context) -> Result<(), CliError> {
    let variants = ctx.variants()?;
    let bundle = ctx.bundle()?;
    let dir = ctx.dir("reports")?;
    let mut rows = Vec::new();
    for v in &variants {
        let ckpt = read_checkpoint(&ctx.model_path(&v.name))?;
        let d = ckpt.model.dims();
        if d.n_users != bundle.split.num_users() || d.n_items != bundle.split.num_items() {
            return Err(CliError::Data(format!(
                "checkpoint {} has {}x{} users x items, dataset {}x{}",
                v.name,
                d.n_users,
                d.n_items,
                bundle.split.num_users(),
                bundle.split.num_items()
            )));
        }
        let report = evaluate(&ckpt.model, &bundle.split.test, &bundle.groups, ckpt.model.filtering, &ckpt.config)?;
        report.write(&dir.join(format!("{}.report.toml", v.name)))?;
        if ctx.config.eval.detail {
            report.write_per_user(&dir.join(format!("{}.per_user.csv", v.name)))?;
        }
        rows.push((v.name.clone(), report));
    }
    let table = comparison_table(&rows);
    write(&dir.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

fn auto_sample(ctx: &Context, groups: &GroupAssignment) -> Vec<usize> {
    let mut rng = rng_for(ctx.config.seed, "explain");
    [ItemGroup::Under, ItemGroup::Over]
        .into_iter()
        .filter_map(|g| {
            let members: Vec<usize> = (0..groups.num_items()).filter(|&i| groups.group_of(i) == Some(g)).collect();
            members.choose(&mut rng).copied()
        })
        .collect()
}

fn cmd_explain(ctx: &Context) -> Result<(), CliError> {
    let variants = ctx.variants()?;
    let e = &ctx.config.explain;
    let variant = match &e.variant {
        Some(name) => variants
            .iter()
            .find(|v| &v.name == name)
            .ok_or_else(|| CliError::Usage(format!("explain.variant {name} is not a configured variant")))?,
        None => &variants[0],
    };
    let bundle = ctx.bundle()?;
    let ckpt = read_checkpoint(&ctx.model_path(&variant.name))?;
    let keys = bundle.split.train.item_keys();

    let items: Vec<usize> = match &e.items {
        ItemSelection::Auto(s) if s == AUTO_SAMPLE => auto_sample(ctx, &bundle.groups),
        ItemSelection::Auto(s) => return Err(CliError::Usage(format!("explain.items must be a list of item ids or \"{AUTO_SAMPLE}\", got {s:?}"))),
        ItemSelection::Keys(wanted) => {
            let index: BTreeMap<&str, usize> = keys.iter().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
            wanted
                .iter()
                .filter_map(|k| {
                    let found = index.get(k.as_str()).copied();
                    if found.is_none() {
                        eprintln!("warning: unknown item id {k}, skipped");
                    }
                    found
                })
                .collect()
        }
    };
    if items.is_empty() {
        return Err(CliError::Data("no known items to explain".into()));
    }

    let labels = match ctx.config.data.as_ref().and_then(|d| d.labels.as_deref()) {
        Some(p) => load_labels(p)?,
        None => BTreeMap::new(),
    };
    let info = ItemInfo { keys, labels: &labels, groups: &bundle.groups };
    let explanations = items
        .iter()
        .map(|&i| explain_item(&ckpt.model, i, e.n_protos, e.m_exemplars, info))
        .collect::<Result<Vec<_>, _>>()?;
    let table = render_table(&explanations);
    let dir = ctx.dir("explain")?;
    write(&dir.join(format!("{}.explanations.txt", variant.name)), format!("{EXPLANATION_HEADER}\n{table}"))?;
    print!("{table}");

    let rows = project_embeddings(&ckpt.model, e.projection, keys, &bundle.groups)?;
    write_projection(&rows, &dir.join(format!("{}.projection.csv", variant.name)))?;
    Ok(())
}
