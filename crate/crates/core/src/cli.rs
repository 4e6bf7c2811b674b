//! Command-line driver. Every artifact written here embeds the resolved
//! configuration and seed.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{preset, ExperimentConfig, OUT_DIR_ENV};
use crate::credible::{cii_retrieve, coverage_check, Coverage, EmbeddedCorpus, Retrieval};
use crate::error::{Error, Result};
use crate::genproc::{uniform_observations, Family, GenerativeProcess};
use crate::metrics::{evaluate_on, spearman, MetricsReport, PosteriorModel};
use crate::nn::Checkpoint;
use crate::oracle::{h_table, linear_grid, log_grid, run_checks, write_h_table_csv, CheckOutcome};
use crate::rng::stream;
use crate::training::{
    evaluation_set, train_observed, write_curve_csv, CurvePoint, EncoderModel, TrainOutcome,
};

#[derive(Debug, Parser)]
#[command(
    name = "mcinfonce",
    version,
    about = "Probabilistic contrastive learning on the hypersphere"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Base preset, see `config::PRESETS`.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// File of `key = value` lines applied over the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, repeatable; applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Takes precedence over the environment variable and config.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepAxis {
    McSamples,
    EncDim,
    Family,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a generative process, save it and dump one sample batch.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train an encoder; writes the curve, checkpoint and final report.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Re-evaluate an encoder checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Saved process; rebuilt from the configuration when absent.
        #[arg(long)]
        process: Option<PathBuf>,
    },
    /// Run the oracle's monotonicity and consistency checks.
    OracleCheck {
        #[arg(long, value_delimiter = ',', default_value = "2,3,10")]
        dims: Vec<usize>,
        /// Also write a table of the marginal h for this κ_pos.
        #[arg(long)]
        table_kappa_pos: Option<f64>,
        #[arg(long, default_value = "out/oracle")]
        out_dir: PathBuf,
    },
    /// Credible-interval coverage and retrieval on a generated corpus.
    Ci {
        #[command(flatten)]
        common: Common,
        /// Encoder checkpoint; the true posterior is used when absent.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.9,0.99")]
        levels: Vec<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 1000)]
        corpus_size: usize,
        #[arg(long, default_value_t = 0)]
        query: usize,
    },
    /// Train once per value of one configuration axis.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma separated values; a default grid is used when absent.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

/// Builds the configuration: preset, then config file, then `--set`
/// overrides, then `--seed`. The output directory comes from `--out-dir`,
/// else the environment, else the configuration.
pub fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = preset(&c.preset)?;
    if let Some(path) = &c.config {
        cfg.apply_text(&fs::read_to_string(path)?)?;
    }
    for kv in &c.set {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &c.out_dir {
        cfg.out_dir = dir.clone();
    } else if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
        cfg.out_dir = PathBuf::from(dir);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::Shape { .. } => "shape",
        Error::Dirac(_) => "dirac",
        Error::Degenerate(_) => "degenerate",
        Error::RejectionCap(_) => "rejection_cap",
        Error::Starvation { .. } => "starvation",
        Error::Reinit { .. } => "reinit",
        Error::NonFiniteLoss { .. } => "non_finite_loss",
        Error::Config(_) => "config",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

/// Exit code for an error: 2 for numeric failures, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

pub fn error_json(e: &Error) -> serde_json::Value {
    let mut v = json!({
        "error": {
            "kind": error_kind(e),
            "message": e.to_string(),
            "exit_code": exit_code(e),
        }
    });
    if let Error::NonFiniteLoss { step, .. } = e {
        v["error"]["step"] = json!(step);
    }
    v
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
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
    match execute(cli.command) {
        Ok(out) => {
            println!("{}", serde_json::to_string_pretty(&out).unwrap_or_default());
            0
        }
        Err(e) => {
            eprintln!("{}", error_json(&e));
            exit_code(&e)
        }
    }
}

/// Runs a parsed command and returns its JSON summary.
pub fn execute(cmd: Command) -> Result<serde_json::Value> {
    match cmd {
        Command::Gen { common } => cmd_gen(&resolve_config(&common)?),
        Command::Train { common } => {
            let cfg = resolve_config(&common)?;
            let (_, summary) = train_to_dir(&cfg, true)?;
            Ok(summary)
        }
        Command::Eval {
            common,
            checkpoint,
            process,
        } => cmd_eval(&resolve_config(&common)?, &checkpoint, process.as_deref()),
        Command::OracleCheck {
            dims,
            table_kappa_pos,
            out_dir,
        } => cmd_oracle_check(&dims, table_kappa_pos, &out_dir),
        Command::Ci {
            common,
            checkpoint,
            levels,
            trials,
            corpus_size,
            query,
        } => cmd_ci(
            &resolve_config(&common)?,
            checkpoint.as_deref(),
            &levels,
            trials,
            corpus_size,
            query,
        ),
        Command::Sweep {
            common,
            axis,
            values,
            workers,
        } => cmd_sweep(&resolve_config(&common)?, axis, &values, workers),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn prepare_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
    Ok(())
}

fn envelope(cfg: &ExperimentConfig, key: &str, body: impl Serialize) -> Result<serde_json::Value> {
    let mut v = json!({ "config": cfg, "seed": cfg.seed });
    v[key] = serde_json::to_value(body)?;
    Ok(v)
}

fn cmd_gen(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    prepare_dir(cfg)?;
    let process = GenerativeProcess::new(cfg.process_config())?;
    process
        .to_checkpoint()
        .save(&cfg.out_dir.join("process.ckpt"))?;
    let mut rng = stream(cfg.seed, "gen/batch");
    let batch = process.sample_triplet_batch(cfg.batch_size, cfg.negatives, &mut rng)?;
    let mut w = BufWriter::new(fs::File::create(cfg.out_dir.join("batch.csv"))?);
    batch.write_csv(&mut w)?;
    w.flush()?;
    let (resultant, stderr) = process.marginal_uniformity(cfg.eval_samples, cfg.seed)?;
    let out = envelope(
        cfg,
        "process",
        json!({
            "dim": process.dim(),
            "family": process.family(),
            "kappa_pos": process.kappa_pos(),
            "marginal_resultant": resultant,
            "marginal_resultant_stderr": stderr,
            "batch_rows": batch.len(),
        }),
    )?;
    write_json(&cfg.out_dir.join("gen.json"), &out)?;
    Ok(out)
}

/// Trains with `cfg` and writes `config.txt`, `process.ckpt`, `curve.csv`,
/// `encoder.ckpt` and `report.json` into `cfg.out_dir`. A non-finite loss
/// leaves the offending batch in `failed_batch.csv`.
pub fn train_to_dir(
    cfg: &ExperimentConfig,
    progress: bool,
) -> Result<(TrainOutcome, serde_json::Value)> {
    prepare_dir(cfg)?;
    let process = GenerativeProcess::new(cfg.process_config())?;
    process
        .to_checkpoint()
        .save(&cfg.out_dir.join("process.ckpt"))?;
    let encoder = EncoderModel::init(cfg.dim, cfg.enc_dim, cfg.seed, &process)?;
    let name = cfg.name.clone();
    let mut observe = |p: &CurvePoint| {
        if progress {
            eprintln!("[{name}] {}", p.csv_row());
        }
    };
    let outcome = match train_observed(&process, encoder, &cfg.train_config(), &mut observe) {
        Ok(o) => o,
        Err(e) => {
            if let Error::NonFiniteLoss { batch, .. } = &e {
                let mut w = BufWriter::new(fs::File::create(cfg.out_dir.join("failed_batch.csv"))?);
                batch.write_csv(&mut w)?;
                w.flush()?;
            }
            return Err(e);
        }
    };
    let mut w = BufWriter::new(fs::File::create(cfg.out_dir.join("curve.csv"))?);
    write_curve_csv(&outcome.curve, &mut w)?;
    w.flush()?;
    let mut ckpt = outcome.encoder.to_checkpoint();
    ckpt.set_meta("config", cfg.to_text());
    ckpt.save(&cfg.out_dir.join("encoder.ckpt"))?;
    let out = envelope(cfg, "report", &outcome.report)?;
    write_json(&cfg.out_dir.join("report.json"), &out)?;
    Ok((outcome, out))
}

fn load_encoder(path: &Path) -> Result<EncoderModel> {
    EncoderModel::from_checkpoint(&Checkpoint::load(path)?)
}

fn load_process(cfg: &ExperimentConfig, path: Option<&Path>) -> Result<GenerativeProcess> {
    match path {
        Some(p) => GenerativeProcess::from_checkpoint(&Checkpoint::load(p)?),
        None => GenerativeProcess::new(cfg.process_config()),
    }
}

fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    process: Option<&Path>,
) -> Result<serde_json::Value> {
    let process = load_process(cfg, process)?;
    let encoder = load_encoder(checkpoint)?;
    if encoder.d_in() != process.dim() {
        return Err(Error::DimensionMismatch {
            expected: process.dim(),
            actual: encoder.d_in(),
        });
    }
    let (probes, pairs) = evaluation_set(&cfg.train_config(), process.dim());
    let report: MetricsReport = evaluate_on(&process, &encoder, &probes, &pairs)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let out = envelope(cfg, "report", &report)?;
    write_json(&cfg.out_dir.join("eval.json"), &out)?;
    Ok(out)
}

fn cmd_oracle_check(
    dims: &[usize],
    table_kappa_pos: Option<f64>,
    out_dir: &Path,
) -> Result<serde_json::Value> {
    let out_dir = std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out_dir.to_path_buf());
    fs::create_dir_all(&out_dir)?;
    let checks: Vec<CheckOutcome> = run_checks(dims)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    if let Some(kp) = table_kappa_pos {
        for &d in dims {
            let rows = h_table(
                d,
                kp,
                &linear_grid(-1.0, 1.0, 21),
                &log_grid(1.0, 1e3, 7),
                &log_grid(1.0, 1e3, 7),
            )?;
            let mut w =
                BufWriter::new(fs::File::create(out_dir.join(format!("h_table_d{d}.csv")))?);
            write_h_table_csv(&rows, &mut w)?;
            w.flush()?;
        }
    }
    let out = json!({
        "dims": dims,
        "table_kappa_pos": table_kappa_pos,
        "passed": failed == 0,
        "failed": failed,
        "checks": checks,
    });
    write_json(&out_dir.join("oracle_check.json"), &out)?;
    if failed > 0 {
        return Err(Error::Degenerate(format!(
            "{failed} oracle checks failed; see {}",
            out_dir.join("oracle_check.json").display()
        )));
    }
    Ok(out)
}

fn cmd_ci(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    levels: &[f64],
    trials: usize,
    corpus_size: usize,
    query: usize,
) -> Result<serde_json::Value> {
    prepare_dir(cfg)?;
    let process = GenerativeProcess::new(cfg.process_config())?;
    let encoder = checkpoint.map(load_encoder).transpose()?;
    let model: &dyn PosteriorModel = match &encoder {
        Some(e) => e,
        None => &process,
    };
    let mut rng = stream(cfg.seed, "ci/corpus");
    let xs = uniform_observations(corpus_size, process.dim(), &mut rng);
    let corpus = EmbeddedCorpus::from_model(model, &xs)?;
    let mut w = BufWriter::new(fs::File::create(cfg.out_dir.join("corpus.csv"))?);
    corpus.write_csv(&mut w)?;
    w.flush()?;
    // Round trip through the file so retrieval runs on what was written.
    let corpus = EmbeddedCorpus::read_csv(BufReader::new(fs::File::open(
        cfg.out_dir.join("corpus.csv"),
    )?))?;
    let q = corpus
        .items()
        .get(query)
        .ok_or_else(|| {
            Error::Config(format!(
                "query index {query} outside corpus of {}",
                corpus.len()
            ))
        })?
        .posterior
        .clone();
    let mut coverage: Vec<Coverage> = Vec::with_capacity(levels.len());
    let mut retrieval: Vec<Retrieval> = Vec::with_capacity(levels.len());
    let mut cov_rng = stream(cfg.seed, "ci/coverage");
    for &p in levels {
        coverage.push(coverage_check(&process, model, p, trials, &mut cov_rng)?);
        retrieval.push(cii_retrieve(&q, &corpus, p)?);
    }
    let summary: Vec<_> = retrieval
        .iter()
        .map(|r| json!({ "level": r.level, "threshold": r.threshold, "hits": r.hits.len() }))
        .collect();
    let out = envelope(
        cfg,
        "ci",
        json!({
            "model": if encoder.is_some() { "encoder" } else { "truth" },
            "coverage": coverage,
            "query": query,
            "retrieval": summary,
        }),
    )?;
    write_json(&cfg.out_dir.join("ci.json"), &out)?;
    let full = envelope(cfg, "retrieval", &retrieval)?;
    write_json(&cfg.out_dir.join("retrieval.json"), &full)?;
    Ok(out)
}

fn default_values(axis: SweepAxis, cfg: &ExperimentConfig) -> Vec<String> {
    match axis {
        SweepAxis::McSamples => ["1", "4", "16", "64"].map(String::from).to_vec(),
        SweepAxis::EncDim => {
            let mut v: Vec<usize> = vec![4, 8, 16, 32, 64, 128];
            if !v.contains(&cfg.dim) {
                v.push(cfg.dim);
                v.sort_unstable();
            }
            v.iter().map(|d| d.to_string()).collect()
        }
        SweepAxis::Family => Family::ALL.iter().map(|f| f.to_string()).collect(),
    }
}

fn axis_key(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::McSamples => "mc_samples",
        SweepAxis::EncDim => "enc_dim",
        SweepAxis::Family => "family",
    }
}

#[derive(Debug, Serialize)]
struct SweepEntry {
    value: String,
    out_dir: PathBuf,
    report: Option<MetricsReport>,
    error: Option<serde_json::Value>,
}

fn trend(xs: &[f64], ys: &[Option<f64>]) -> serde_json::Value {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter_map(|(&x, y)| y.filter(|v| v.is_finite()).map(|v| (x, v)))
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    let diffs: Vec<f64> = b.windows(2).map(|w| w[1] - w[0]).collect();
    json!({
        "points": pts.len(),
        "spearman": spearman(&a, &b).ok(),
        "nonincreasing": !diffs.is_empty() && diffs.iter().all(|d| *d <= 0.0),
        "nondecreasing": !diffs.is_empty() && diffs.iter().all(|d| *d >= 0.0),
    })
}

fn cmd_sweep(
    base: &ExperimentConfig,
    axis: SweepAxis,
    values: &[String],
    workers: usize,
) -> Result<serde_json::Value> {
    if workers == 0 {
        return Err(Error::Config("workers must be positive".into()));
    }
    let values = if values.is_empty() {
        default_values(axis, base)
    } else {
        values.to_vec()
    };
    let key = axis_key(axis);
    let mut configs = Vec::with_capacity(values.len());
    for v in &values {
        let mut c = base.clone();
        c.set(key, v)?;
        c.name = format!("{}-{key}-{v}", base.name);
        c.out_dir = base.out_dir.join(format!("{key}-{v}"));
        c.validate()?;
        configs.push(c);
    }
    fs::create_dir_all(&base.out_dir)?;
    fs::write(base.out_dir.join("config.txt"), base.to_text())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let entries: Vec<SweepEntry> = pool.install(|| {
        configs
            .par_iter()
            .zip(values.par_iter())
            .map(|(c, v)| match train_to_dir(c, true) {
                Ok((o, _)) => SweepEntry {
                    value: v.clone(),
                    out_dir: c.out_dir.clone(),
                    report: Some(o.report),
                    error: None,
                },
                Err(e) => SweepEntry {
                    value: v.clone(),
                    out_dir: c.out_dir.clone(),
                    report: None,
                    error: Some(error_json(&e)),
                },
            })
            .collect()
    });
    let trends = if axis == SweepAxis::Family {
        serde_json::Value::Null
    } else {
        let xs: Vec<f64> = values
            .iter()
            .map(|v| v.parse::<f64>().unwrap_or(f64::NAN))
            .collect();
        let field = |f: fn(&MetricsReport) -> Option<f64>| -> Vec<Option<f64>> {
            entries
                .iter()
                .map(|e| e.report.as_ref().and_then(f))
                .collect()
        };
        json!({
            "rmse_mu": trend(&xs, &field(|r| Some(r.rmse_mu))),
            "rank_mu": trend(&xs, &field(|r| r.rank_mu)),
            "rmse_kappa": trend(&xs, &field(|r| r.rmse_kappa)),
            "rank_kappa": trend(&xs, &field(|r| r.rank_kappa)),
        })
    };
    let out = json!({
        "config": base,
        "seed": base.seed,
        "axis": key,
        "entries": entries,
        "trends": trends,
    });
    write_json(&base.out_dir.join("sweep.json"), &out)?;
    Ok(out)
}
