use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use qvix::adapters::{
    adapt_classification, adapt_scienceqa, adapt_snli_ve, classification_preset,
    ClassificationSpec,
};
use qvix::corpus::write_manifest;
use qvix::model::{Condition, PregenScope, RunReport, TemplateVersion};
use qvix::runner::{
    render_ablation_table, render_report, Harness, ReportFormat, RunConfig,
};
use qvix::{QvixError, Result};

#[derive(Parser)]
#[command(
    name = "qvix",
    version,
    about = "Batch evaluation of pre-question-augmented visual prompts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every command that executes runs.
#[derive(Args)]
struct CommonRunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Replay responses from a mock script instead of live endpoints.
    #[arg(long)]
    mock: Option<PathBuf>,
    /// Override the config's condition (qvix, baseline, cot).
    #[arg(long)]
    condition: Option<Condition>,
    /// Override the number of pre-questions per set.
    #[arg(long)]
    m: Option<usize>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the evaluation subset size.
    #[arg(long)]
    sample_n: Option<usize>,
    /// Override the worker-thread count.
    #[arg(long)]
    parallelism: Option<usize>,
}

impl CommonRunArgs {
    fn load(&self) -> Result<(Harness, RunConfig)> {
        let mut config = RunConfig::from_path(&self.config)?;
        if let Some(condition) = self.condition {
            config.condition = condition;
        }
        if let Some(m) = self.m {
            config.m = m;
        }
        if let Some(trials) = self.trials {
            config.trials = trials;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(sample_n) = self.sample_n {
            config.sample_n = sample_n;
        }
        if let Some(parallelism) = self.parallelism {
            config.parallelism = parallelism;
        }
        config.validate()?;
        let harness = match &self.mock {
            Some(path) => Harness::mock_from_script(path)?,
            None => Harness::http()?,
        };
        Ok((harness, config))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a manifest under one condition and write a report.
    Run(CommonRunArgs),
    /// Sweep the pre-question count over several values.
    AblateM {
        #[command(flatten)]
        args: CommonRunArgs,
        /// Comma-separated pre-question counts, e.g. 2,4,6.
        #[arg(long, value_delimiter = ',', required = true)]
        ms: Vec<usize>,
    },
    /// Sweep the generation-prompt wording over several versions.
    AblatePrompt {
        #[command(flatten)]
        args: CommonRunArgs,
        /// Comma-separated versions, e.g. v1,v2,v3.
        #[arg(long, value_delimiter = ',', required = true)]
        versions: Vec<TemplateVersion>,
    },
    /// Generate pre-question sets without running any reasoning.
    Pregen(CommonRunArgs),
    /// Render the stored report of an earlier run.
    Report {
        run_id: String,
        #[arg(long, default_value = "runs")]
        workspace: PathBuf,
        /// markdown or json.
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Convert an upstream dataset dump into a manifest.
    #[command(subcommand)]
    Adapt(AdaptCommand),
}

#[derive(Subcommand)]
enum AdaptCommand {
    /// ScienceQA problems.json (keeps only problems with images).
    Scienceqa {
        /// problems.json from the dataset dump.
        #[arg(long)]
        problems: PathBuf,
        /// Path from the output manifest's directory to the images root.
        #[arg(long)]
        images: String,
        /// Dataset split to keep.
        #[arg(long, default_value = "test")]
        split: String,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
    /// A `path,label` listing for an image-classification dataset.
    Classification {
        /// Built-in task wording: flowers102, pet, or aircraft.
        #[arg(long)]
        preset: Option<String>,
        /// Custom task id (requires --instruction) instead of a preset.
        #[arg(long)]
        task_id: Option<String>,
        /// Instruction overriding (or defining) the task wording.
        #[arg(long)]
        instruction: Option<String>,
        /// Listing file: one `image-path,label` per line.
        #[arg(long)]
        listing: PathBuf,
        /// Optional label file (one per line) fixing the schema and its order.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
    /// SNLI-VE pairs (JSONL with pairID, Flickr30K_ID, sentence2, gold_label).
    SnliVe {
        /// Pairs file (JSONL) from the dataset dump.
        #[arg(long)]
        pairs: PathBuf,
        /// Path from the output manifest's directory to the Flickr30K images.
        #[arg(long)]
        images: String,
        /// Output manifest path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(error) = dispatch() {
        eprintln!("error: {error}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let (harness, config) = args.load()?;
            let report = harness.run_experiment(&config)?;
            print!("{}", render_report(&report, ReportFormat::Markdown));
            eprintln!(
                "artifacts in {}",
                config.workspace.join(&report.run_id).display()
            );
            Ok(())
        }
        Command::AblateM { args, ms } => {
            let (harness, config) = args.load()?;
            let reports = harness.ablate_m(&config, &ms)?;
            for (m, report) in ms.iter().zip(&reports) {
                eprintln!("m={m}: run {}", report.run_id);
            }
            let rows: Vec<(String, &RunReport)> = ms
                .iter()
                .map(ToString::to_string)
                .zip(reports.iter())
                .collect();
            print!("{}", render_ablation_table("m", &rows));
            Ok(())
        }
        Command::AblatePrompt { args, versions } => {
            let (harness, config) = args.load()?;
            let reports = harness.ablate_prompt_version(&config, &versions)?;
            for (version, report) in versions.iter().zip(&reports) {
                eprintln!("version={version}: run {}", report.run_id);
            }
            let rows: Vec<(String, &RunReport)> = versions
                .iter()
                .map(ToString::to_string)
                .zip(reports.iter())
                .collect();
            print!("{}", render_ablation_table("prompt", &rows));
            Ok(())
        }
        Command::Pregen(args) => {
            let (harness, config) = args.load()?;
            let sets = harness.pregen_only(&config)?;
            for set in sets {
                let heading = match &set.scope {
                    PregenScope::Dataset { task_id } => format!("dataset {task_id}"),
                    PregenScope::Instance { instance_id } => format!("instance {instance_id}"),
                };
                println!("## {heading}");
                for (i, question) in set.questions.iter().enumerate() {
                    println!("{}. {question}", i + 1);
                }
                println!();
            }
            Ok(())
        }
        Command::Report {
            run_id,
            workspace,
            format,
        } => {
            let path = workspace.join(&run_id).join("report.json");
            let text = std::fs::read_to_string(&path).map_err(|e| {
                QvixError::Config(format!("no stored report at {}: {e}", path.display()))
            })?;
            let report: RunReport = serde_json::from_str(&text)?;
            print!("{}", render_report(&report, format));
            Ok(())
        }
        Command::Adapt(adapt) => run_adapt(adapt),
    }
}

fn run_adapt(command: AdaptCommand) -> Result<()> {
    let (spec, rows, out) = match command {
        AdaptCommand::Scienceqa {
            problems,
            images,
            split,
            out,
        } => {
            let text = std::fs::read_to_string(problems)?;
            let (spec, rows) = adapt_scienceqa(&text, &images, &split)?;
            (spec, rows, out)
        }
        AdaptCommand::Classification {
            preset,
            task_id,
            instruction,
            listing,
            labels,
            out,
        } => {
            let task = match (preset, task_id) {
                (Some(name), None) => {
                    let mut task = classification_preset(&name)?;
                    if let Some(wording) = instruction {
                        task.instruction = wording;
                    }
                    task
                }
                (None, Some(task_id)) => ClassificationSpec {
                    task_id,
                    instruction: instruction.ok_or_else(|| {
                        QvixError::Config("--task-id needs --instruction".into())
                    })?,
                },
                (Some(_), Some(_)) => {
                    return Err(QvixError::Config(
                        "--preset and --task-id are mutually exclusive".into(),
                    ))
                }
                (None, None) => {
                    return Err(QvixError::Config(
                        "classification needs --preset or --task-id".into(),
                    ))
                }
            };
            let listing_text = std::fs::read_to_string(listing)?;
            let schema = labels
                .map(|path| -> Result<Vec<String>> {
                    Ok(std::fs::read_to_string(path)?
                        .lines()
                        .map(str::trim)
                        .filter(|l| !l.is_empty())
                        .map(str::to_string)
                        .collect())
                })
                .transpose()?;
            let (spec, rows) = adapt_classification(&listing_text, &task, schema.as_deref())?;
            (spec, rows, out)
        }
        AdaptCommand::SnliVe { pairs, images, out } => {
            let text = std::fs::read_to_string(pairs)?;
            let (spec, rows) = adapt_snli_ve(&text, &images)?;
            (spec, rows, out)
        }
    };
    write_manifest(&out, &spec, &rows)?;
    eprintln!("wrote {} instance(s) to {}", rows.len(), out.display());
    Ok(())
}
