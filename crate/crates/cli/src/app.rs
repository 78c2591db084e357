//! Command-line surface and dispatch.

use std::path::PathBuf;

use bagssl_core::nn::{Model, ModelCheckpoint};
use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::data::{self, Split};
use crate::error::{CliError, CliResult};
use crate::eval::{self, Classifier, Protocol};
use crate::factorization::{self, Source};
use crate::figures::{self, Query};
use crate::pretrain;
use crate::verify::{self, Prop1Options};

pub const CONFIG_FILE: &str = "config.txt";
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Debug, Parser)]
#[command(name = "bagssl", version, about = "Patch co-occurrence self-supervised learning at desk scale")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Plain-text `key = value` config; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train encoder and projector on patch pairs.
    Pretrain,
    /// Count token co-occurrences over the training split.
    Cooc,
    /// Factorise co-occurrence ratios into an embedding table.
    Factorize(FactorizeArgs),
    /// Exact checks: loss equivalence, trace duality, gradients.
    Verify {
        #[command(subcommand)]
        which: VerifyCommand,
    },
    /// Score a checkpoint under one protocol and classifier.
    Eval(EvalArgs),
    /// Heatmaps, neighbour dumps and convergence curves.
    Figures {
        #[command(subcommand)]
        which: FigureCommand,
    },
}

#[derive(Debug, Args)]
pub struct FactorizeArgs {
    /// Co-occurrence statistics file (default: `<out>/cooc_stats.txt`).
    #[arg(long, conflicts_with = "planted")]
    pub stats: Option<PathBuf>,
    /// Factorise a synthetic rank-`dim` instance over this many tokens.
    #[arg(long)]
    pub planted: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum VerifyCommand {
    Prop1 {
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        dim: usize,
        #[arg(long, default_value_t = 2.0)]
        w: f64,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        instances: usize,
    },
    Duality {
        #[arg(long, default_value_t = 20)]
        matrices: usize,
        #[arg(long, default_value_t = 40)]
        max_side: usize,
    },
    Gradcheck {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Breaks the analytic gradient of the named check.
        #[arg(long)]
        corrupt: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct CheckpointArg {
    /// Model checkpoint (default: `<out>/checkpoint_final.bssl`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub checkpoint: CheckpointArg,
    /// central, bag(N), grid(N) or local(G,W,S).
    #[arg(long)]
    pub protocol: String,
    /// knn(K) or linear (default: knn with the configured k).
    #[arg(long)]
    pub classifier: Option<String>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    /// Index of the query image in the test split.
    #[arg(long)]
    pub image: Option<usize>,
    #[arg(long)]
    pub x: Option<usize>,
    #[arg(long)]
    pub y: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum FigureCommand {
    Heatmap {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[command(flatten)]
        query: QueryArgs,
    },
    Neighbors {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long)]
        k: Option<usize>,
    },
    Convergence {
        #[command(flatten)]
        checkpoint: CheckpointArg,
        /// `all` (mean of every patch) or `central`.
        #[arg(long, default_value = "all")]
        reference: String,
    },
}

/// The config file with flag overrides applied and validated.
pub fn effective_config(global: &GlobalArgs) -> CliResult<RunConfig> {
    let mut cfg = match &global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(cfg: &RunConfig) -> CliResult<()> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    std::fs::write(cfg.output_dir.join(CONFIG_FILE), cfg.to_text())?;
    Ok(())
}

fn load_model(cfg: &RunConfig, arg: &CheckpointArg) -> CliResult<(Model, PathBuf)> {
    let path = arg
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.output_dir.join("checkpoint_final.bssl"));
    let model = Model::from_checkpoint(&ModelCheckpoint::load(&path)?)?;
    let expected = cfg.dataset.channels() * cfg.canonical * cfg.canonical;
    if model.input_len() != expected {
        return Err(CliError::Usage(format!(
            "checkpoint {} expects {} inputs but the config gives {expected}",
            path.display(),
            model.input_len()
        )));
    }
    Ok((model, path))
}

fn query(cfg: &RunConfig, args: &QueryArgs) -> Query {
    let d = Query::from_config(cfg);
    Query {
        image: args.image.unwrap_or(d.image),
        x: args.x.unwrap_or(d.x),
        y: args.y.unwrap_or(d.y),
    }
}

fn init_threads(threads: Option<usize>) -> CliResult<()> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}"))),
        None => Ok(()),
    }
}

/// Runs one command; human-readable results go to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    init_threads(cli.global.threads)?;
    let mut cfg = effective_config(&cli.global)?;
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Pretrain => {
            let images = data::load(&cfg, Split::Train)?;
            write_config(&cfg)?;
            let outcome = pretrain::pretrain(&cfg, &images, &out)?;
            for r in &outcome.curve {
                println!("epoch {:>3} loss {:.6} lr {:.6}", r.epoch, r.loss, r.lr);
            }
            println!("wrote {}", outcome.final_checkpoint.display());
        }
        Command::Cooc => {
            let images = data::load(&cfg, Split::Train)?;
            write_config(&cfg)?;
            let stats = factorization::run_cooc(&cfg, &images, &out)?;
            println!(
                "K = {} tokens, {} ordered pairs, alpha = {}",
                stats.vocab_size(),
                stats.total_pairs,
                stats.alpha
            );
        }
        Command::Factorize(args) => {
            if let Some(d) = args.dim {
                cfg.factorize_dim = d;
            }
            if let Some(w) = args.w {
                cfg.factorize_w = w;
            }
            if let Some(s) = args.steps {
                cfg.factorize_steps = s;
            }
            if let Some(lr) = args.lr {
                cfg.factorize_lr = lr;
            }
            cfg.validate()?;
            let stats_path = args.stats.unwrap_or_else(|| out.join(factorization::STATS_FILE));
            let source = match args.planted {
                Some(vocab) => Source::Planted { vocab },
                None => Source::Stats(&stats_path),
            };
            let outcome = factorization::run_factorize(&cfg, source, &out)?;
            write_config(&cfg)?;
            print!("{}", outcome.report);
        }
        Command::Verify { which } => {
            let report = match which {
                VerifyCommand::Prop1 {
                    k,
                    dim,
                    w,
                    trials,
                    instances,
                } => verify::prop1(
                    Prop1Options {
                        vocab: k,
                        dim,
                        w,
                        trials,
                        instances,
                    },
                    cfg.seed,
                )?,
                VerifyCommand::Duality { matrices, max_side } => verify::duality(matrices, max_side, cfg.seed)?,
                VerifyCommand::Gradcheck { trials, corrupt } => verify::gradcheck(trials, cfg.seed, corrupt.as_deref())?,
            };
            print!("{}", report.text);
            report.into_result()?;
        }
        Command::Eval(args) => {
            let protocol: Protocol = args.protocol.parse()?;
            let classifier = match &args.classifier {
                Some(c) => c.parse()?,
                None => Classifier::Knn(cfg.knn_k),
            };
            let (model, _) = load_model(&cfg, &args.checkpoint)?;
            let row = eval::evaluate(&model, &cfg, protocol, classifier)?;
            write_config(&cfg)?;
            eval::append_row(&out.join(EVAL_FILE), &row)?;
            println!("{protocol} {classifier} accuracy {:.4}", row.accuracy);
            if let Some(note) = &row.note {
                println!("note: {note}");
            }
        }
        Command::Figures { which } => {
            let images = data::load(&cfg, Split::Test)?;
            match which {
                FigureCommand::Heatmap { checkpoint, query: q } => {
                    let (model, _) = load_model(&cfg, &checkpoint)?;
                    let paths = figures::run_heatmap(&model, &cfg, &images, query(&cfg, &q), &out)?;
                    write_config(&cfg)?;
                    paths.iter().for_each(|p| println!("wrote {}", p.display()));
                }
                FigureCommand::Neighbors {
                    checkpoint,
                    query: q,
                    k,
                } => {
                    let (model, path) = load_model(&cfg, &checkpoint)?;
                    let k = k.unwrap_or(cfg.neighbors_k);
                    let manifest = figures::run_neighbors(&model, &path, &cfg, &images, query(&cfg, &q), k, &out)?;
                    write_config(&cfg)?;
                    println!("wrote {}", manifest.display());
                }
                FigureCommand::Convergence { checkpoint, reference } => {
                    let reference = figures::parse_reference(&reference)?;
                    let (model, _) = load_model(&cfg, &checkpoint)?;
                    let (path, curve) = figures::run_convergence(&model, &cfg, &images, reference, &out)?;
                    write_config(&cfg)?;
                    for p in &curve {
                        let n = p.n.map_or_else(|| "all".to_string(), |n| n.to_string());
                        println!("N = {n:>4}  median cosine {:.6}", p.median);
                    }
                    println!("wrote {}", path.display());
                }
            }
        }
    }
    Ok(())
}

