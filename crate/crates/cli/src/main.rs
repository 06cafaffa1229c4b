mod args;
mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use commands::Ctx;
use output::{Format, Output};
use serde_json::json;

/// Sense-level consistency analysis of contextualized word embeddings.
#[derive(Parser, Debug)]
#[command(name = "sensevar", version)]
struct Cli {
    /// Seed for every sampler and initializer.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads. Reports do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for reports and artifacts.
    #[arg(long, global = true, env = "SENSEVAR_OUT", default_value = ".")]
    out: PathBuf,
    /// Which report files to write.
    #[arg(long, global = true, value_enum, default_value_t = Format::Both)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus and write its normalized form.
    Ingest(commands::corpus::IngestCmd),
    /// Corpus statistics.
    Stats(commands::corpus::StatsCmd),
    /// Same-word and different-word sense similarity at one layer.
    Sim(commands::sim::SimCmd),
    /// Similarity curves across layers.
    Layers(commands::sim::LayersCmd),
    /// Similarity split by a facet.
    Breakdown(commands::sim::BreakdownCmd),
    /// Same-position similarity and prompt-shift comparison.
    Bias(commands::sim::BiasCmd),
    /// Wrap every sentence in a prompt template.
    PromptApply(commands::corpus::PromptApplyCmd),
    /// Build a sense-equivalence pair dataset and train probes.
    ProbeTrain(commands::probe::ProbeTrainCmd),
    /// Score probe checkpoints on a pair dataset.
    ProbeEval(commands::probe::ProbeEvalCmd),
    /// Fit per-layer cosine thresholds on word-in-context data.
    WsdFit(commands::wsd::WsdFitCmd),
    /// Apply fitted thresholds to word-in-context data.
    WsdEval(commands::wsd::WsdEvalCmd),
    /// Turn word-in-context files into a corpus for extraction.
    WsdCorpus(commands::corpus::WsdCorpusCmd),
    /// Combine CSV reports.
    Report(commands::report::ReportCmd),
    /// Write a synthetic corpus and matching stores.
    Synth(commands::synth::SynthCmd),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut ctx = Ctx { seed: cli.seed, out: Output::new(cli.out, cli.format)? };
    let summary = match &cli.command {
        Command::Ingest(a) => commands::corpus::ingest(&mut ctx, a),
        Command::Stats(a) => commands::corpus::stats(&mut ctx, a),
        Command::Sim(a) => commands::sim::sim(&mut ctx, a),
        Command::Layers(a) => commands::sim::layers(&mut ctx, a),
        Command::Breakdown(a) => commands::sim::breakdown(&mut ctx, a),
        Command::Bias(a) => commands::sim::bias(&mut ctx, a),
        Command::PromptApply(a) => commands::corpus::prompt_apply(&mut ctx, a),
        Command::ProbeTrain(a) => commands::probe::train(&mut ctx, a),
        Command::ProbeEval(a) => commands::probe::eval(&mut ctx, a),
        Command::WsdFit(a) => commands::wsd::fit(&mut ctx, a),
        Command::WsdEval(a) => commands::wsd::eval(&mut ctx, a),
        Command::WsdCorpus(a) => commands::corpus::wsd_corpus(&mut ctx, a),
        Command::Report(a) => commands::report::report(&mut ctx, a),
        Command::Synth(a) => commands::synth::synth(&mut ctx, a),
    }?;
    println!("{summary}");
    for p in ctx.out.written() {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    use sensevar::{bias, buckets, corpus, embstore, metrics, probe, wsd};
    for cause in e.chain() {
        let kind = if cause.is::<commands::InputError>() {
            "input"
        } else if cause.is::<corpus::CorpusError>() {
            "corpus"
        } else if cause.is::<embstore::StoreError>() {
            "store"
        } else if cause.is::<metrics::MetricsError>() {
            "metrics"
        } else if cause.is::<probe::ProbeError>() {
            "probe"
        } else if cause.is::<bias::BiasError>() {
            "bias"
        } else if cause.is::<wsd::WsdError>() {
            "wsd"
        } else if cause.is::<buckets::BucketError>() {
            "config"
        } else if cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            "parse"
        } else if cause.is::<std::io::Error>() {
            "io"
        } else {
            continue;
        };
        return kind;
    }
    "invalid"
}

fn emit_error(kind: &str, message: String, causes: Vec<String>) {
    let v = json!({ "error": { "kind": kind, "message": message, "causes": causes } });
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => match e.kind() {
            ErrorKind::DisplayHelp
            | ErrorKind::DisplayVersion
            | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
            _ => {
                emit_error("usage", e.to_string().trim_end().to_string(), Vec::new());
                return ExitCode::from(2);
            }
        },
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(error_kind(&e), e.to_string(), e.chain().skip(1).map(|c| c.to_string()).collect());
            ExitCode::from(1)
        }
    }
}
