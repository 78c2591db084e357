//! Counting token co-occurrences and factorising the resulting ratios.

use std::fmt::Write as _;
use std::path::Path;

use bagssl_core::cooc::{count_cooc, factorize, planted_instance, ratio_matrix, CoocStats, FactorizeResult};
use bagssl_core::dataset_io::{AugmentParams, ImageRecord};
use bagssl_core::losses::DiscreteCooc;
use bagssl_core::seeded_rng;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

const STREAM_COOC: u64 = 20;
const STREAM_FACTORIZE: u64 = 21;
const STREAM_PLANTED: u64 = 22;

pub const STATS_FILE: &str = "cooc_stats.txt";
pub const TABLE_FILE: &str = "embedding_table.bssl";
pub const TRACE_FILE: &str = "factorize_trace.csv";
pub const REPORT_FILE: &str = "factorize_report.txt";

/// Counts co-occurrences over `images` and writes [`STATS_FILE`] into `out`.
pub fn run_cooc(cfg: &RunConfig, images: &[ImageRecord], out: &Path) -> CliResult<CoocStats> {
    if images.is_empty() {
        return Err(CliError::Data("no images to count".into()));
    }
    let images = if cfg.cooc_image_limit > 0 && cfg.cooc_image_limit < images.len() {
        &images[..cfg.cooc_image_limit]
    } else {
        images
    };
    let aug = if cfg.cooc_augment {
        cfg.augment_params()
    } else {
        AugmentParams::identity()
    };
    let stats = count_cooc(
        images,
        cfg.src_size,
        cfg.canonical,
        cfg.pairs_per_image,
        &cfg.tokenizer,
        &aug,
        &mut seeded_rng(cfg.seed, STREAM_COOC),
    )?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(STATS_FILE), stats.to_text())?;
    Ok(stats)
}

/// Where the ratio matrix comes from.
#[derive(Debug, Clone)]
pub enum Source<'a> {
    Stats(&'a Path),
    /// A synthetic instance exactly realisable at the configured dimension.
    Planted { vocab: usize },
}

#[derive(Debug)]
pub struct FactorizeOutcome {
    pub result: FactorizeResult,
    pub residual: f64,
    pub report: String,
}

/// Factorises the chosen source, writing the table, the loss trace and a
/// text report into `out`.
pub fn run_factorize(cfg: &RunConfig, source: Source<'_>, out: &Path) -> CliResult<FactorizeOutcome> {
    let (d, w) = (cfg.factorize_dim, cfg.factorize_w);
    let (dc, origin): (DiscreteCooc, String) = match source {
        Source::Stats(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
            let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            (ratio_matrix(&CoocStats::from_text(&text)?)?, name)
        }
        Source::Planted { vocab } => {
            if vocab < d {
                return Err(CliError::Usage(format!("planted vocabulary {vocab} is smaller than dim {d}")));
            }
            let (dc, _) = planted_instance(vocab, d, w, &mut seeded_rng(cfg.seed, STREAM_PLANTED))?;
            (dc, format!("planted(K={vocab}, d={d})"))
        }
    };
    let result = factorize(
        &dc,
        d,
        w,
        cfg.factorize_steps,
        cfg.factorize_lr,
        &mut seeded_rng(cfg.seed, STREAM_FACTORIZE),
    )?;
    let residual = *result.trace.last().expect("trace holds the initial loss");

    std::fs::create_dir_all(out)?;
    result
        .table
        .to_checkpoint(cfg.factorize_steps as u64, cfg.seed)
        .save(out.join(TABLE_FILE))?;
    let mut trace = csv::Writer::from_path(out.join(TRACE_FILE))?;
    trace.write_record(["step", "loss"])?;
    for (step, loss) in result.trace.iter().enumerate() {
        trace.write_record([step.to_string(), format!("{loss:.12e}")])?;
    }
    trace.flush()?;

    let mut report = String::new();
    writeln!(report, "# w = {w}, matching spectral lambda = w/2 = {}", w / 2.0).unwrap();
    writeln!(report, "source = {origin}").unwrap();
    writeln!(report, "vocab = {}", dc.vocab_size()).unwrap();
    writeln!(report, "dim = {d}").unwrap();
    writeln!(report, "steps = {}", cfg.factorize_steps).unwrap();
    writeln!(report, "initial_loss = {:.12e}", result.trace[0]).unwrap();
    writeln!(report, "residual = {residual:.12e}").unwrap();
    writeln!(report, "rejected_steps = {}", result.rejected_steps).unwrap();
    writeln!(report, "final_lr = {:.6e}", result.final_lr).unwrap();
    std::fs::write(out.join(REPORT_FILE), &report)?;
    Ok(FactorizeOutcome {
        result,
        residual,
        report,
    })
}
