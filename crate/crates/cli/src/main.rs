use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use tracing::info;
use tracing_subscriber::EnvFilter;

use ctie::aggregator::{evaluate_patient, EligibilityProfile, Patient, PatientValue};
use ctie::config::Config;
use ctie::eval::{read_annotations, read_fact_records, run_eval, ScoringError};
use ctie::pipeline::{ingest, run_extract, write_facts, write_records, Resources};

/// Extract structured eligibility criteria from clinical trial text.
#[derive(Parser)]
#[command(name = "ctie", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract aggregated facts from a pipe-separated trial corpus.
    Extract(ExtractArgs),
    /// Score extraction output against gold annotations.
    Eval(EvalArgs),
    /// Check one patient against a trial's extracted profile.
    EvaluatePatient(PatientArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set eps=0.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config> {
        let mut config = match &self.config {
            Some(path) => Config::load(path)?,
            None => Config::default(),
        };
        for entry in &self.overrides {
            let Some((key, value)) = entry.split_once('=') else {
                bail!("override `{entry}` is not KEY=VALUE");
            };
            config.set(key.trim(), value.trim(), None)?;
        }
        Ok(config)
    }
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Corpus with header `nct_id|title|eligibility_criteria`.
    #[arg(long)]
    input: PathBuf,
    /// Fact JSONL; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Also write raw mention and attribute records here.
    #[arg(long)]
    raw: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Fact JSONL written by `extract`.
    #[arg(long)]
    predicted: PathBuf,
    /// Raw records written by `extract --raw`; enables per-stage scores.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Gold annotation JSONL.
    #[arg(long)]
    gold: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PatientArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Fact JSONL written by `extract`.
    #[arg(long)]
    profile: PathBuf,
    #[arg(long)]
    trial: String,
    /// JSON object mapping knowledge-base ids to `present`, `absent` or a
    /// number with an optional unit.
    #[arg(long)]
    patient: PathBuf,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn extract(args: &ExtractArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let resources = Resources::load(&config)?;
    let corpus = ingest(&args.input)?;
    info!(trials = corpus.records.len(), skipped = corpus.skipped, "corpus loaded");
    let outputs = run_extract(&corpus.records, &resources, config.tags.as_deref())?;
    match &args.output {
        Some(path) => {
            let mut out = create(path)?;
            write_facts(&mut out, &outputs, &resources.kb, &config, corpus.skipped)?;
            out.flush()?;
        }
        None => {
            let mut out = std::io::stdout().lock();
            write_facts(&mut out, &outputs, &resources.kb, &config, corpus.skipped)?;
        }
    }
    if let Some(path) = &args.raw {
        let mut out = create(path)?;
        write_records(&mut out, &outputs)?;
        out.flush()?;
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let resources = Resources::load(&config)?;
    let predicted = read_fact_records(&args.predicted)?;
    let raw = args.raw.as_ref().map(read_annotations).transpose()?;
    let gold = read_annotations(&args.gold)?;
    let report = run_eval(&predicted, raw.as_deref(), &gold, &resources.kb, &resources.intents)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    Ok(())
}

fn read_patient(path: &Path) -> Result<Patient> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let json: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&text).with_context(|| format!("{} is not a JSON object", path.display()))?;
    json.into_iter()
        .map(|(key, value)| match PatientValue::from_json(&value) {
            Some(v) => Ok((key, v)),
            None => bail!("patient value for `{key}` is neither present/absent nor a number: {value}"),
        })
        .collect()
}

fn evaluate(args: &PatientArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let resources = Resources::load(&config)?;
    let facts: Vec<_> = read_fact_records(&args.profile)?
        .into_iter()
        .filter(|r| r.trial_id == args.trial)
        .collect();
    let profile = EligibilityProfile {
        trial_id: args.trial.clone(),
        facts: facts.iter().map(|r| r.to_fact()).collect(),
        dropped: Vec::new(),
    };
    let patient = read_patient(&args.patient)?;
    let verdict = evaluate_patient(&profile, &patient, &resources.kb)?;
    let per_fact: Vec<_> = facts
        .iter()
        .zip(&verdict.facts)
        .map(|(r, v)| serde_json::json!({"concept_id": r.concept_id, "text": r.text, "verdict": v}))
        .collect();
    let out = serde_json::json!({"trial_id": args.trial, "eligibility": verdict.eligibility, "facts": per_fact});
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Extract(args) => extract(args),
        Command::Eval(args) => eval(args),
        Command::EvaluatePatient(args) => evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if matches!(err.downcast_ref::<ScoringError>(), Some(ScoringError::TrialMismatch(_))) {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
