//! Argument parsing and dispatch for the `opcap` binary.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{self, CaptionArgs, DatasetArgs, DetectCacheArgs, ImageSource, TrainArgs, VoteArgs};
use crate::config;
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "opcap", version, about = "Object-prompted image captioning")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set training.learning_rate=1e-3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for every random stream; wins over the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; optional for the metric commands.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct DatasetOpts {
    /// COCO captions annotation file.
    #[arg(long)]
    pub captions: PathBuf,
    /// COCO instances annotation file.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Directory holding the image files.
    #[arg(long)]
    pub images: PathBuf,
}

impl From<&DatasetOpts> for DatasetArgs {
    fn from(d: &DatasetOpts) -> Self {
        DatasetArgs {
            captions: d.captions.clone(),
            instances: d.instances.clone(),
            images: d.images.clone(),
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the detector over a dataset and cache the results.
    DetectCache {
        #[command(flatten)]
        dataset: DatasetOpts,
        /// Replay detections from a JSONL file instead of detecting.
        #[arg(long)]
        fixture: Option<PathBuf>,
    },
    /// Train the attribute head and the caption decoder.
    Train {
        #[command(flatten)]
        dataset: DatasetOpts,
        /// Detection cache written by `detect-cache`.
        #[arg(long)]
        detections: PathBuf,
        /// Region attribute annotations (JSONL).
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        steps: u64,
        /// Train on the first N images, one reference each.
        #[arg(long, value_name = "N")]
        overfit: Option<usize>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Caption images with a trained model.
    Caption {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        instances: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
        /// Caption a single image file.
        #[arg(long, conflicts_with_all = ["captions", "images"])]
        image: Option<PathBuf>,
        #[arg(long)]
        detections: Option<PathBuf>,
        /// Beam width; greedy decoding when absent or 1.
        #[arg(long)]
        beam: Option<usize>,
        /// Print the object prompt before each caption.
        #[arg(long)]
        show_prompt: bool,
        /// Maximum caption length in tokens; capped by the model's own limit.
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Pair generations with references and ground-truth objects.
    ExportRecords {
        #[command(flatten)]
        dataset: DatasetOpts,
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// CHAIR hallucination rates.
    EvalChair {
        #[arg(long)]
        records: PathBuf,
        /// Extra synonym TSV merged into the built-in table.
        #[arg(long)]
        synonyms: Option<PathBuf>,
    },
    /// Reference-free preference vote between models.
    EvalVote {
        /// `NAME=generations.jsonl`, once per model.
        #[arg(long = "candidates", value_name = "NAME=FILE", required = true)]
        candidates: Vec<String>,
        /// Precomputed similarity scores (JSONL).
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long)]
        images: Option<PathBuf>,
    },
    /// Corpus BLEU-4.
    EvalBleu {
        #[arg(long)]
        records: PathBuf,
    },
}

fn optional_dataset(captions: &Option<PathBuf>, instances: &Option<PathBuf>, images: &Option<PathBuf>) -> Result<Option<DatasetArgs>> {
    match (captions, images) {
        (Some(c), Some(i)) => Ok(Some(DatasetArgs {
            captions: c.clone(),
            instances: instances.clone(),
            images: i.clone(),
        })),
        (None, None) => Ok(None),
        _ => Err(Error::Config("--captions and --images must be given together".into())),
    }
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = config::resolve(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    let dir = || cli.out.clone().ok_or_else(|| Error::Config("--out is required for this command".into()));
    match &cli.command {
        Command::DetectCache { dataset, fixture } => {
            let args = DetectCacheArgs {
                dataset: dataset.into(),
                fixture: fixture.clone(),
                out: dir()?,
            };
            commands::detect_cache(&args, &cfg, out)
        }
        Command::Train {
            dataset,
            detections,
            attributes,
            steps,
            overfit,
            resume,
        } => {
            let args = TrainArgs {
                dataset: dataset.into(),
                detections: detections.clone(),
                attributes: attributes.clone(),
                steps: *steps,
                overfit: *overfit,
                resume: resume.clone(),
                out: dir()?,
            };
            commands::train(&args, &cfg, out).map(|_| ())
        }
        Command::Caption {
            model,
            captions,
            instances,
            images,
            image,
            detections,
            beam,
            show_prompt,
            max_len,
        } => {
            // The run's own config decides the architecture; --set and
            // --seed still apply on top of it.
            let saved = model.join(commands::CONFIG_FILE);
            if cli.config.is_none() && saved.exists() {
                cfg = config::resolve(Some(&saved), &cli.overrides, cli.seed)?;
            }
            let source = match (image, optional_dataset(captions, instances, images)?) {
                (Some(p), _) => ImageSource::Single(p.clone()),
                (None, Some(d)) => ImageSource::Dataset(d),
                (None, None) => return Err(Error::Config("caption needs --image or --captions with --images".into())),
            };
            let args = CaptionArgs {
                model: model.clone(),
                source,
                detections: detections.clone(),
                beam: *beam,
                show_prompt: *show_prompt,
                max_len: *max_len,
                out: dir()?,
            };
            commands::caption(&args, &cfg, out).map(|_| ())
        }
        Command::ExportRecords {
            dataset,
            generations,
            synonyms,
        } => commands::export_records(&dataset.into(), generations, synonyms.as_deref(), &dir()?, &cfg, out).map(|_| ()),
        Command::EvalChair { records, synonyms } => {
            commands::eval_chair(records, synonyms.as_deref(), cli.out.as_deref(), &cfg, out).map(|_| ())
        }
        Command::EvalVote {
            candidates,
            scores,
            captions,
            images,
        } => {
            let candidates = candidates
                .iter()
                .map(|raw| match raw.split_once('=') {
                    Some((name, file)) if !name.is_empty() && !file.is_empty() => Ok((name.to_string(), PathBuf::from(file))),
                    _ => Err(Error::Config(format!("expected NAME=FILE, got `{raw}`"))),
                })
                .collect::<Result<Vec<_>>>()?;
            let args = VoteArgs {
                candidates,
                scores: scores.clone(),
                dataset: optional_dataset(captions, &None, images)?,
                out: cli.out.clone(),
            };
            commands::eval_vote(&args, &cfg, out).map(|_| ())
        }
        Command::EvalBleu { records } => commands::eval_bleu(records, cli.out.as_deref(), &cfg, out).map(|_| ()),
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; errors are reported on `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
