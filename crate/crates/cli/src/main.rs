use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use mmsurv::cohort::{load_cohort, ModalityKind};
use mmsurv::pipeline::{
    read_metrics_csv, run_experiment, write_outputs, write_summary, ExperimentConfig, ModalitySpec,
    PcaDim,
};
use mmsurv::splits::{stratified_kfold, SplitPlan};
use mmsurv::summarizer::{
    read_jsonl, summarize_batch, write_jsonl, BatchOptions, DecodingParams, EndpointSettings,
    HttpEndpoint, Report,
};
use mmsurv::synth::{generate, write_files, SyntheticConfig, SyntheticModality};

#[derive(Parser)]
#[command(name = "mmsurv", version, about = "Multimodal survival experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a cohort manifest and report what was kept and rejected.
    Validate {
        manifest: PathBuf,
        /// Write rejected patients as CSV.
        #[arg(long)]
        rejections: Option<PathBuf>,
    },
    /// Assign patients to stratified folds.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "splits.csv")]
        out: PathBuf,
    },
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate metrics.csv across folds into summary.csv.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize pathology reports through a chat-completions endpoint.
    Summarize(SummarizeArgs),
    /// Write a synthetic demo cohort and a matching experiment config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct SummarizeArgs {
    /// JSONL with `case_id` and `text` per line.
    #[arg(long)]
    input: PathBuf,
    /// Receives summaries.jsonl and failures.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = mmsurv::summarizer::DEFAULT_CONCURRENCY)]
    concurrency: usize,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Allow non-default decoding settings.
    #[arg(long)]
    override_decoding: bool,
    #[arg(long, requires = "override_decoding")]
    temperature: Option<f64>,
    #[arg(long, requires = "override_decoding")]
    max_tokens: Option<u32>,
}

fn validate(manifest: &Path, rejections_out: Option<&Path>) -> Result<()> {
    let load = load_cohort(manifest)?;
    let ds = &load.dataset;
    let events = ds.patients.iter().filter(|p| p.outcome.event).count();
    println!("patients: {} ({events} deaths)", ds.len());
    for (name, m) in &ds.modalities {
        let kind = match m.kind {
            ModalityKind::Embedding => "embedding",
            ModalityKind::TabularOneHot => "tabular_onehot",
        };
        println!("modality {name}: {kind}, dim {}", m.dim());
    }
    let mut by_reason: BTreeMap<String, usize> = BTreeMap::new();
    for r in &load.rejections {
        *by_reason.entry(r.reason.to_string()).or_default() += 1;
    }
    println!("rejected: {}", load.rejections.len());
    for (reason, count) in by_reason {
        println!("  {reason}: {count}");
    }
    if let Some(path) = rejections_out {
        let mut text = String::from("patient_id,reason\n");
        for r in &load.rejections {
            text.push_str(&format!(
                "{},\"{}\"\n",
                r.patient_id,
                r.reason.to_string().replace('"', "\"\"")
            ));
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn split(manifest: &Path, k: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = load_cohort(manifest)?.dataset;
    let plan = stratified_kfold(&ds, k, seed)?;
    plan.write_csv(out)?;
    println!("fold sizes: {:?}", plan.fold_sizes());
    Ok(())
}

fn run(config_path: &Path, out: Option<PathBuf>) -> Result<()> {
    let config = ExperimentConfig::read(config_path)?;
    let Some(manifest) = &config.manifest else {
        bail!("config has no manifest");
    };
    let Some(out_dir) = out.or_else(|| config.out_dir.clone()) else {
        bail!("no output directory: set out_dir in the config or pass --out");
    };
    let ds = load_cohort(manifest)?.dataset;
    let plan = match &config.splits {
        Some(path) => SplitPlan::read_csv(path)?,
        None => stratified_kfold(&ds, config.k, config.seed)?,
    };
    info!(
        "running {} combos x {} folds x {} pca dims",
        config.resolve_combos().len(),
        plan.k,
        config.pca_dims.len()
    );
    let output = run_experiment(&config, &ds, &plan)?;
    write_outputs(&output, plan.k, &out_dir)?;
    plan.write_csv(&out_dir.join("splits.csv"))?;
    let summary = output.metrics.aggregate();
    write_summary(&summary, &out_dir.join("summary.csv"))?;
    print_best(&summary);
    println!("wrote {}", out_dir.display());
    Ok(())
}

fn print_best(rows: &[mmsurv::pipeline::AggregateRow]) {
    let mut sorted: Vec<_> = rows.iter().filter(|r| r.c_index.is_finite()).collect();
    sorted.sort_by(|a, b| b.c_index.total_cmp(&a.c_index));
    sorted.truncate(10);
    let w = sorted
        .iter()
        .map(|r| r.modality_combo.len())
        .max()
        .unwrap_or(0)
        .max("modality_combo".len());
    println!(
        "{:<w$} {:>8} {:>9} {:>9} {:>9}",
        "modality_combo", "pca_dim", "c_index", "mean_auc", "ibs"
    );
    for r in &sorted {
        println!(
            "{:<w$} {:>8} {:>9.4} {:>9.4} {:>9.4}",
            r.modality_combo,
            r.pca_dim.to_string(),
            r.c_index,
            r.mean_auc,
            r.ibs
        );
    }
}

fn report(out: &Path) -> Result<()> {
    let table = read_metrics_csv(&out.join("metrics.csv"))?;
    let summary = table.aggregate();
    write_summary(&summary, &out.join("summary.csv"))?;
    print_best(&summary);
    Ok(())
}

fn summarize(args: &SummarizeArgs) -> Result<()> {
    let settings = EndpointSettings::from_env()?;
    let params = if args.override_decoding {
        DecodingParams::overridden(
            args.seed,
            args.temperature.unwrap_or(DecodingParams::TEMPERATURE),
            args.max_tokens.unwrap_or(DecodingParams::MAX_TOKENS),
        )?
    } else {
        DecodingParams::new(args.seed)
    };
    let reports: Vec<Report> = read_jsonl(&args.input)?;
    let endpoint = HttpEndpoint::new(
        settings.url,
        settings.api_key,
        Duration::from_secs(args.timeout_secs),
    )?;
    let mut options = BatchOptions::new(settings.model, params);
    options.concurrency = args.concurrency;
    let result = summarize_batch(&reports, &endpoint, &options)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_jsonl(&args.out.join("summaries.jsonl"), &result.summaries)?;
    write_jsonl(&args.out.join("failures.jsonl"), &result.failures)?;
    println!(
        "{} summarized, {} failed",
        result.summaries.len(),
        result.failures.len()
    );
    Ok(())
}

fn synth(out: &Path, n: usize, seed: u64) -> Result<()> {
    let config = SyntheticConfig::new(
        n,
        seed,
        vec![
            SyntheticModality::new("histology", 64, 0.6),
            SyntheticModality::new("expression", 64, 0.5),
            SyntheticModality::new("report", 32, 0.4),
        ],
    );
    let cohort = generate(&config)?;
    let data_dir = out.join("data");
    write_files(&cohort.dataset, &data_dir)?;
    let mut exp = ExperimentConfig::new(vec![
        ModalitySpec::new("demographic", ModalityKind::TabularOneHot),
        ModalitySpec::new("cancer_type", ModalityKind::TabularOneHot),
        ModalitySpec::new("histology", ModalityKind::Embedding),
        ModalitySpec::new("expression", ModalityKind::Embedding),
        ModalitySpec::new("report", ModalityKind::Embedding),
    ]);
    exp.manifest = Some(PathBuf::from("data/manifest.json"));
    exp.out_dir = Some(PathBuf::from("results"));
    exp.pca_dims = vec![
        PcaDim::Dim(4),
        PcaDim::Dim(8),
        PcaDim::Dim(16),
        PcaDim::Dim(32),
    ];
    exp.seed = seed;
    let path = out.join("exp.json");
    fs::write(&path, serde_json::to_string_pretty(&exp)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} and {}", data_dir.display(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate {
            manifest,
            rejections,
        } => validate(manifest, rejections.as_deref()),
        Command::Split {
            manifest,
            k,
            seed,
            out,
        } => split(manifest, *k, *seed, out),
        Command::Run { config, out } => run(config, out.clone()),
        Command::Report { out } => report(out),
        Command::Summarize(args) => summarize(args),
        Command::Synth { out, n, seed } => synth(out, *n, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
