use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ptdebias::checkpoint::save_backbone;
use ptdebias::config::{BackboneSpec, ExperimentConfig};
use ptdebias::experiment::{load_encoder, run_eval, run_sweep, run_training, swap_backbone, Benchmark, SweepGrid};
use ptdebias::io::{
    bios_as_labeled, lexicon_or_default, load_article_rule, load_bios, load_classes, load_snli, load_stsb,
    read_activities, read_jsonl, read_json, read_lines, write_json, write_jsonl, write_nli_corpus, write_stsb_corpus,
};
use ptdebias::plot::emit_plots;
use ptdebias::report::BiasReport;
use ptdebias::score::score_predictions;
use ptdebias::Result;
use ptdebias_core::benchmark::{gen_bias_stsb, BiasNliGenerator};
use ptdebias_core::lexicon::{augment_corpus, LabeledText};

#[derive(Parser)]
#[command(name = "ptdebias", version, about = "Debiasing during prompt tuning: train, evaluate, sweep, plot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// `dotted.key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    /// TSV with sentence1, sentence2, score.
    Stsb,
    /// TSV with gold_label, sentence1, sentence2.
    Snli,
    /// JSONL with text, profession, gender.
    Bios,
    /// JSONL of labeled texts.
    Jsonl,
}

#[derive(Subcommand)]
enum GenBench {
    /// Bias-STS-B units from templates and professions.
    Stsb {
        #[arg(long)]
        templates: PathBuf,
        #[arg(long)]
        professions: PathBuf,
        #[arg(long, default_value = "man")]
        male: String,
        #[arg(long, default_value = "woman")]
        female: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bias-NLI instances, streamed to disk.
    Nli {
        #[arg(long)]
        gender_words: PathBuf,
        #[arg(long)]
        occupations: PathBuf,
        #[arg(long)]
        activities: PathBuf,
        #[arg(long)]
        article_exceptions: Option<PathBuf>,
        /// Write a stratified sample of this fraction instead of everything.
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write checkpoints plus report.json.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Swap in the backbone stored in this checkpoint directory.
        #[arg(long)]
        backbone: Option<PathBuf>,
        /// Also write epoch curves next to the report.
        #[arg(long)]
        plot: bool,
    },
    /// Score a checkpoint on a bias benchmark.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        benchmark: Benchmark,
        #[command(flatten)]
        config: ConfigArgs,
        /// Report path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid over prompt length, temperature and alpha.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        prompt_length: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        temperature: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        alpha: Vec<f64>,
    },
    /// Counterfactual pairs for a dataset, as JSONL.
    Augment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        format: InputFormat,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a bias benchmark corpus.
    Genbench {
        #[command(subcommand)]
        which: GenBench,
    },
    /// Bias metrics from an external predictions file.
    Score {
        #[arg(long, value_enum)]
        benchmark: Benchmark,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        classes: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Epoch curves from one or more reports, overlaid.
    Plot {
        #[arg(long = "report", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Save a toy backbone as a checkpoint directory for backbone swapping.
    ExportBackbone {
        #[arg(long, default_value_t = 2)]
        layers: usize,
        #[arg(long, default_value_t = 32)]
        hidden: usize,
        #[arg(long, default_value_t = 4)]
        heads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit_report(report: &BiasReport, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            write_json(p, report)?;
            println!("{}", p.display());
        }
        None => println!("{}", serde_json::to_string_pretty(report)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            backbone,
            plot,
        } => {
            let mut cfg = config.load()?;
            if let Some(dir) = backbone {
                cfg = swap_backbone(&cfg, &dir)?;
            }
            let run = run_training(&cfg)?;
            for (k, v) in &run.report.mean_bias {
                println!("{k}\t{v:.6}");
            }
            for (k, v) in &run.report.mean_task {
                println!("{k}\t{v:.6}");
            }
            if plot {
                for p in emit_plots(std::slice::from_ref(&run.report), &run.run_dir)? {
                    println!("{}", p.display());
                }
            }
            println!("{}", run.run_dir.display());
        }
        Command::Eval {
            checkpoint,
            benchmark,
            config,
            out,
        } => {
            let cfg = config.load()?;
            emit_report(&run_eval(&checkpoint, benchmark, &cfg)?, out.as_deref())?;
        }
        Command::Sweep {
            config,
            prompt_length,
            temperature,
            alpha,
        } => {
            let grid = SweepGrid {
                prompt_length,
                temperature,
                alpha,
            };
            let out = run_sweep(&config.load()?, &grid)?;
            print!("{}", out.table);
            println!("{}", out.table_path.display());
        }
        Command::Augment {
            input,
            format,
            lexicon,
            classes,
            out,
        } => {
            let (lex, _) = lexicon_or_default(lexicon.as_deref())?;
            let data: Vec<LabeledText> = match format {
                InputFormat::Stsb => load_stsb(&input)?,
                InputFormat::Snli => load_snli(&input)?,
                InputFormat::Bios => {
                    let set = load_classes(classes.as_deref())?;
                    bios_as_labeled(&load_bios(&input, &set)?, &set)
                }
                InputFormat::Jsonl => read_jsonl(&input)?,
            };
            let pairs = augment_corpus(&data, &lex);
            let n = write_jsonl(&out, &pairs)?;
            let with = pairs.iter().filter(|p| p.has_attribute()).count();
            println!("{n} examples, {with} with a counterfactual -> {}", out.display());
        }
        Command::Genbench { which } => match which {
            GenBench::Stsb {
                templates,
                professions,
                male,
                female,
                out,
            } => {
                let units = gen_bias_stsb(&read_lines(&templates)?, &read_lines(&professions)?, (&male, &female))?;
                write_stsb_corpus(&out, &units)?;
                println!("{} units -> {}", units.len(), out.display());
            }
            GenBench::Nli {
                gender_words,
                occupations,
                activities,
                article_exceptions,
                fraction,
                sample_seed,
                out,
            } => {
                let g = BiasNliGenerator::new(
                    read_lines(&gender_words)?,
                    read_lines(&occupations)?,
                    read_activities(&activities)?,
                    load_article_rule(article_exceptions.as_deref())?,
                )?;
                let n = match fraction {
                    Some(f) => {
                        let idx = g.stratified_sample(f, sample_seed);
                        write_nli_corpus(&out, idx.into_iter().filter_map(|i| g.get(i)))?
                    }
                    None => write_nli_corpus(&out, g.iter())?,
                };
                println!("{n} of {} instances -> {}", g.len(), out.display());
            }
        },
        Command::Score {
            benchmark,
            corpus,
            predictions,
            classes,
            out,
        } => {
            let set = classes.as_deref().map(|p| load_classes(Some(p))).transpose()?;
            let report = score_predictions(benchmark, &corpus, &predictions, set.as_ref())?;
            emit_report(&report, out.as_deref())?;
        }
        Command::Plot { reports, out } => {
            let loaded = reports.iter().map(|p| read_json(p)).collect::<Result<Vec<BiasReport>>>()?;
            for p in emit_plots(&loaded, &out)? {
                println!("{}", p.display());
            }
        }
        Command::ExportBackbone {
            layers,
            hidden,
            heads,
            seed,
            out,
        } => {
            let handle = load_encoder(&BackboneSpec::Toy {
                layers,
                hidden,
                heads,
                seed,
            })?;
            let meta = save_backbone(&out, &handle)?;
            println!("{} {} -> {}", meta.id, meta.digest, out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
