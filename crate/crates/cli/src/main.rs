use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use ceda::matrix::{render_blocked_counts, render_counts};
use ceda::pipeline::{self, ErrorClass, PipelineError, RunConfig, Session, DEFAULT_REPLICATES};
use ceda::synth;
use ceda::{Measure, VarianceSource};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Categorical exploratory data analysis: clustering trees over count
/// tables and the reliability of their patterns under multinomial mimicry.
#[derive(Parser)]
#[command(name = "ceda", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an input table and write its counts and proportions.
    Ingest(RunArgs),
    /// Build the observed tree: distances, Ward.D2 dendrogram, codes, heatmap bundle.
    Tree(RunArgs),
    /// Build the mimicry ensemble and store one code table per replicate.
    Mimic(RunArgs),
    /// Score group and separation queries against a run's ensemble.
    Reliability {
        /// Run directory holding the tree and ensemble.
        #[arg(long)]
        run: PathBuf,
        /// Query file: one `group` or `separation` query per line, tab-separated labels.
        #[arg(long)]
        queries: PathBuf,
    },
    /// Re-export a run's heatmap bundle at another cut.
    Heatmap {
        #[arg(long)]
        run: PathBuf,
        /// Number of clusters; defaults to the run's cut.
        #[arg(long)]
        cut: Option<usize>,
    },
    /// Serve a run over HTTP.
    Serve {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Directory of static UI assets served at `/`.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Write a bundled synthetic dataset.
    Gen {
        #[arg(long, value_enum)]
        kind: Dataset,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the planted cluster of each population as `label<TAB>cluster`.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Dataset {
    TwoCluster,
    ThreeCluster,
    Blocked,
    University,
    Pitcher,
}

#[derive(Args)]
struct RunArgs {
    /// Counts CSV: `population,<categories...>`, or `population,block,<categories...>` with --blocked.
    #[arg(long)]
    input: PathBuf,
    /// Input carries per-block rows; mimicry samples each block separately.
    #[arg(long)]
    blocked: bool,
    #[arg(long, default_value_t = Measure::Dstar)]
    measure: Measure,
    #[arg(long, default_value_t = VarianceSource::Theoretical)]
    variance: VarianceSource,
    /// Lower bound on variance denominators of dstar.
    #[arg(long, default_value_t = ceda::distance::DEFAULT_VARIANCE_FLOOR)]
    floor: f64,
    /// Number of mimicked replicates (B).
    #[arg(long, default_value_t = DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Heatmap cut; defaults to min(6, K).
    #[arg(long)]
    cut: Option<usize>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> RunConfig {
        RunConfig {
            input: self.input.clone(),
            blocked: self.blocked,
            measure: self.measure,
            variance: self.variance,
            floor: self.floor,
            replicates: self.replicates,
            master_seed: self.seed,
            cut: self.cut,
        }
    }
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?;
    Ok(pool.install(f))
}

fn write_dataset(kind: Dataset, seed: u64, out: &Path, truth: Option<&Path>) -> Result<()> {
    let (csv, labels, clusters) = match kind {
        Dataset::Blocked => {
            let d = synth::cow_blocked(&synth::CowConfig::new(seed));
            (render_blocked_counts(&d.counts), d.counts.labels().populations.clone(), d.truth)
        }
        other => {
            let d = match other {
                Dataset::TwoCluster => synth::two_cluster(seed),
                Dataset::ThreeCluster => synth::three_cluster(seed),
                Dataset::University => synth::university(&synth::UniversityConfig::new(seed)),
                _ => synth::pitcher(seed),
            };
            (render_counts(&d.counts), d.counts.labels().populations.clone(), d.truth)
        }
    };
    fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = truth {
        let text: String = labels.iter().zip(&clusters).map(|(l, c)| format!("{l}\t{c}\n")).collect();
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(args) => {
            let s = pipeline::run_ingest(&args.config(), &args.out)?;
            match s.blocks {
                Some(t) => println!("{} populations, {} categories, {t} blocks", s.populations, s.categories),
                None => println!("{} populations, {} categories", s.populations, s.categories),
            }
        }
        Command::Tree(args) => {
            let config = args.config();
            let s = with_threads(args.threads, || pipeline::run_tree(&config, &args.out))??;
            println!(
                "tree over {} populations, root height {}, heatmap cut {} -> {}",
                s.populations,
                s.root_height,
                s.cut,
                args.out.display()
            );
        }
        Command::Mimic(args) => {
            let config = args.config();
            let e = with_threads(args.threads, || pipeline::run_mimic(&config, &args.out))??;
            println!("{} mimicked trees -> {}", e.len(), args.out.join("ensemble").display());
        }
        Command::Reliability { run, queries } => {
            for doc in pipeline::run_reliability(&run, &queries)? {
                print!("{}", doc.pretty());
            }
        }
        Command::Heatmap { run, cut } => {
            let bundle = pipeline::run_heatmap(&run, cut)?;
            println!(
                "{} rows in {} blocks -> {}",
                bundle.order.len(),
                bundle.blocks.len(),
                run.join("heatmap").display()
            );
        }
        Command::Serve { run, addr, assets } => {
            let session = Session::load(&run)?;
            let app = ceda_serve::router(ceda_serve::AppState::new(Some(session)), assets);
            let runtime = tokio::runtime::Runtime::new()?;
            eprintln!("serving {} on http://{addr}", run.display());
            runtime.block_on(ceda_serve::serve(addr, app)).with_context(|| format!("serving on {addr}"))?;
        }
        Command::Gen { kind, seed, out, truth } => write_dataset(kind, seed, &out, truth.as_deref())?,
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<PipelineError>() {
        Some(e) => match e.class() {
            ErrorClass::Validation => 1,
            ErrorClass::Io => 2,
            ErrorClass::Internal => 3,
        },
        None if err.chain().any(|c| c.is::<std::io::Error>()) => 2,
        None => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
