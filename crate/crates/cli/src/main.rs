use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nodewatch::commands::{self, exit_code};
use nodewatch::{parse_percentiles, RunConfig};
use nodewatch_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "nodewatch",
    version,
    about = "Per-node autoencoder anomaly detection for HPC telemetry"
)]
struct Cli {
    #[command(flatten)]
    opts: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// JSON run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    features: Option<usize>,
    #[arg(long, global = true)]
    nodes: Option<usize>,
    /// Intervals generated per node
    #[arg(long, global = true)]
    horizon: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    /// Candidate percentiles, as a range `90..99` or a list `90,95,99`
    #[arg(long, global = true, value_parser = parse_percentiles)]
    percentiles: Option<Vec<u32>>,
    /// Take thresholds from training plus normal test errors and choose the
    /// percentile on the full test sets
    #[arg(long, global = true)]
    paper_protocol: bool,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Telemetry directory (default: <out>/data)
    #[arg(long, global = true)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic fleet
    Synth,
    /// Train one model per node
    Train,
    /// Evaluate the trained models and write the report
    Eval,
    /// synth, train and eval in sequence
    Run,
    /// Score a telemetry file with a saved model
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        /// Adds a decision column for this threshold
        #[arg(long)]
        threshold: Option<f64>,
        /// Output CSV (default: stdout)
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the effective configuration
    Config,
}

impl Overrides {
    fn resolve(self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.features {
            cfg.features = v;
        }
        if let Some(v) = self.nodes {
            cfg.nodes = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.percentiles {
            cfg.percentiles = v;
        }
        if self.paper_protocol {
            cfg.paper_protocol = true;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
        if self.data.is_some() {
            cfg.data = self.data;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn save_config(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let path = cfg.out.join("run_config.json");
    std::fs::write(&path, cfg.to_json()).map_err(|e| Error::io(&path, e))
}

fn synth(cfg: &RunConfig) -> Result<()> {
    let manifest = commands::synth(cfg)?;
    for node in &manifest.nodes {
        let counts: Vec<String> = node
            .label_counts
            .iter()
            .map(|(label, n)| format!("{}={n}", label.as_str()))
            .collect();
        println!("{} {:?} {}", node.node_id, node.kind, counts.join(" "));
    }
    println!(
        "wrote {} nodes to {}",
        manifest.nodes.len(),
        cfg.data_dir().display()
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    for s in commands::train(cfg)? {
        println!(
            "{} trained on {} records in {:.1}s: final loss {:.6}, train MAE {:.6}",
            s.node_id,
            s.train_records,
            s.wall_time.as_secs_f64(),
            s.final_loss,
            s.train_mae
        );
    }
    println!("models written to {}", cfg.models_dir().display());
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"))
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let report = commands::eval(cfg)?;
    println!(
        "{:<10} {:>4} {:>10} {:>7} {:>7} {:>9} {:>9}",
        "node", "n", "theta", "F_N", "F_A", "MAE_N", "MAE_A"
    );
    for n in &report.nodes {
        println!(
            "{:<10} {:>4} {:>10.6} {:>7} {:>7} {:>9} {:>9}",
            n.node_id,
            n.threshold.percentile_n,
            n.threshold.theta,
            fmt(n.f_normal),
            fmt(n.f_anomaly),
            fmt(n.normalized.test_normal.map(|e| e.mae)),
            fmt(n.normalized.test_anomaly.map(|e| e.mae)),
        );
    }
    let a = &report.averages;
    println!(
        "{:<10} {:>4} {:>10} {:>7} {:>7} {:>9} {:>9}",
        "average",
        "",
        "",
        fmt(a.f_normal),
        fmt(a.f_anomaly),
        fmt(a.normalized.test_normal.map(|e| e.mae)),
        fmt(a.normalized.test_anomaly.map(|e| e.mae)),
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!("report written to {}", cfg.report_dir().display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.opts.resolve()?;
    match cli.command {
        Command::Synth => {
            save_config(&cfg)?;
            synth(&cfg)
        }
        Command::Train => {
            save_config(&cfg)?;
            train(&cfg)
        }
        Command::Eval => {
            save_config(&cfg)?;
            eval(&cfg)
        }
        Command::Run => {
            save_config(&cfg)?;
            synth(&cfg)?;
            train(&cfg)?;
            eval(&cfg)
        }
        Command::Score {
            model,
            input,
            threshold,
            output,
        } => {
            let count = match output {
                Some(path) => {
                    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
                    commands::score(&model, &input, threshold, BufWriter::new(file))?
                }
                None => commands::score(&model, &input, threshold, io::stdout().lock())?,
            };
            eprintln!("scored {count} records");
            Ok(())
        }
        Command::Config => {
            print!("{}", cfg.to_json());
            io::stdout().flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
