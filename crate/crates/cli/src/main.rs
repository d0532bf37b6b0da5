//! `drec`: split data, train, evaluate and query recommenders from config files.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use drec_core::data::{InteractionTable, SparseRow};
use drec_core::metrics::MetricReport;
use drec_core::runner::{self, Checkpoint, ExperimentConfig, Prepared};
use drec_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "drec", version, about = "Config-driven recommender experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the configured train/test partition to a directory.
    Split {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the configured model, save a checkpoint and print the report.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Re-evaluate a checkpoint with the data and eval settings of a config.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a user's top-n items as `item<TAB>score`.
    Recommend {
        #[arg(long)]
        ckpt: PathBuf,
        /// User id as written in the data file.
        #[arg(long)]
        user: String,
        #[arg(long)]
        n: usize,
        /// Leave out items the user interacted with in training.
        #[arg(long)]
        exclude_seen: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Split { config, out } => split(&config, &out),
        Command::Train { config, out, report } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let result = runner::run(&cfg)?;
            result.checkpoint.save(&out)?;
            emit(&result.report, report.as_deref())
        }
        Command::Evaluate { ckpt, config, report } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let ckpt = Checkpoint::load(&ckpt)?;
            if cfg.model.name.as_str() != ckpt.model {
                return Err(Error::InvalidArgument(format!(
                    "config is for `{}` but the checkpoint holds `{}`",
                    cfg.model.name, ckpt.model
                )));
            }
            let (_, model) = runner::open_checkpoint(&ckpt)?;
            let data = runner::prepare(&cfg)?;
            let r = runner::evaluate(&cfg, model.as_ref(), &data)?;
            emit(&r, report.as_deref())
        }
        Command::Recommend {
            ckpt,
            user,
            n,
            exclude_seen,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let (cfg, model) = runner::open_checkpoint(&ckpt)?;
            let data = runner::prepare(&cfg)?;
            let Some(split) = data.split() else {
                return Err(Error::InvalidArgument(
                    "models trained on libfm rows have no users".into(),
                ));
            };
            print!("{}", recommend(model.as_ref(), &split.train, &user, n, exclude_seen)?);
            Ok(())
        }
    }
}

fn emit(report: &MetricReport, path: Option<&Path>) -> Result<()> {
    let text = report.to_text();
    print!("{text}");
    if let Some(p) = path {
        fs::write(p, &text).map_err(|e| io_error(p, e))?;
    }
    Ok(())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Numeric order when both ids are integers, byte order otherwise.
fn raw_id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<i128>(), b.parse::<i128>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        _ => a.cmp(b),
    }
}

fn recommend(
    model: &dyn drec_core::models::Recommender,
    train: &InteractionTable,
    user: &str,
    n: usize,
    exclude_seen: bool,
) -> Result<String> {
    let u = train
        .users()
        .dense(user)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown user `{user}`")))?;
    let seen: Vec<usize> = if exclude_seen {
        train.user_items()[u].clone()
    } else {
        Vec::new()
    };
    let items: Vec<usize> = (0..model.n_items())
        .filter(|i| seen.binary_search(i).is_err())
        .collect();
    let scores = model.score(u, &items)?;
    let mut scored: Vec<(&str, f64)> = items
        .iter()
        .zip(scores)
        .map(|(&i, s)| (train.items().raw(i).unwrap_or("?"), s))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| raw_id_order(a.0, b.0)));
    let mut out = String::new();
    for (item, s) in scored.into_iter().take(n) {
        let _ = writeln!(out, "{item}\t{s:.6}");
    }
    Ok(out)
}

fn split(config: &Path, out: &Path) -> Result<()> {
    let cfg = ExperimentConfig::from_file(config)?;
    let data = runner::prepare(&cfg)?;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    let write = |name: &str, text: String| {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| io_error(&p, e))
    };
    match &data {
        Prepared::Interactions(s) => {
            write("train.txt", uirt_text(&s.train))?;
            write("test.txt", uirt_text(&s.test))?;
            println!(
                "train\t{}\ntest\t{}\ndropped\t{}",
                s.train.len(),
                s.test.len(),
                s.dropped
            );
        }
        Prepared::Rows { train, test, .. } => {
            write("train.libfm", libfm_text(train))?;
            write("test.libfm", libfm_text(test))?;
            println!("train\t{}\ntest\t{}", train.len(), test.len());
        }
    }
    Ok(())
}

fn uirt_text(table: &InteractionTable) -> String {
    let mut out = String::new();
    for x in table.interactions() {
        let u = table.users().raw(x.user).unwrap_or("?");
        let i = table.items().raw(x.item).unwrap_or("?");
        let _ = writeln!(out, "{u}\t{i}\t{}\t{}", x.rating, x.timestamp);
    }
    out
}

fn libfm_text(rows: &[SparseRow]) -> String {
    let mut out = String::new();
    for r in rows {
        let _ = write!(out, "{}", r.label);
        for (i, v) in &r.features {
            let _ = write!(out, " {i}:{v}");
        }
        out.push('\n');
    }
    out
}
