//! `hcmen` command line: dataset synthesis, training, missing-modality
//! evaluation, gradient checking, and scan benchmarking.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use hcmen::{bench, checkpoint, gradcheck, synth, trainer, HcmenError};
use hcmen_core::metrics::MetricsReport;
use hcmen_core::{Error as CoreError, ModelConfig};

#[derive(Parser)]
#[command(name = "hcmen", version, about = "Hybrid CNN-Mamba multimodal sentiment model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal sentiment dataset
    Synth {
        /// Output directory (created; refuses non-empty without --force)
        #[arg(long)]
        out: PathBuf,
        /// Number of utterances
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        /// Global noise multiplier
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// Overwrite an existing non-empty directory
        #[arg(long)]
        force: bool,
    },
    /// Train a model on a dataset directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON config file (exactly the documented fields; unknown keys rejected)
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint output path; the per-epoch log goes to <out>.metrics.csv
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        missing_rate: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Ablation: remove the local-conv stages
        #[arg(long)]
        disable_cnn: bool,
        /// Ablation: remove the Bi-Mamba stages
        #[arg(long)]
        disable_mamba: bool,
        /// Ablation: no mixing, no proxies, no alignment loss
        #[arg(long)]
        disable_cmea: bool,
    },
    /// Evaluate a checkpoint on the test split under missing-modality rates
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// One rate or a comma list, e.g. 0.0,0.3,0.5,0.7
        #[arg(long)]
        missing_rate: String,
        #[arg(long)]
        seed: u64,
        /// Optional CSV report, one row per rate
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite (double precision)
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the selective scan forward pass across sequence lengths
    Bench {
        /// Strictly ascending comma list, e.g. 1024,2048,4096,8192
        #[arg(long)]
        lengths: String,
        #[arg(long, default_value_t = 5)]
        trials: usize,
    },
}

enum CliError {
    Usage(String),
    Runtime(String),
}

impl From<HcmenError> for CliError {
    fn from(e: HcmenError) -> Self {
        match e {
            // invalid configuration values are usage errors; everything else
            // (IO, formats, numerics) is a runtime failure
            HcmenError::Core(CoreError::Config(msg)) => CliError::Usage(msg),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { out, n, seed, noise, force } => {
            if n == 0 {
                return Err(CliError::Usage("--n must be >= 1".into()));
            }
            if noise < 0.0 {
                return Err(CliError::Usage("--noise must be >= 0".into()));
            }
            let spec = synth::SynthSpec { n, noise, seed, ..Default::default() };
            println!(
                "synth: out={} n={} seed={} noise={} lengths={:?} dims={:?}",
                out.display(),
                spec.n,
                spec.seed,
                spec.noise,
                spec.lengths,
                spec.dims
            );
            let summary = match synth::generate(&spec, &out, force) {
                Ok(s) => s,
                Err(HcmenError::Format(msg)) if msg.contains("not empty") => {
                    return Err(CliError::Usage(msg))
                }
                Err(e) => return Err(e.into()),
            };
            println!(
                "wrote {} utterances: train={} valid={} test={}",
                n, summary.train, summary.valid, summary.test
            );
            Ok(())
        }
        Command::Train {
            data,
            config,
            out,
            missing_rate,
            epochs,
            disable_cnn,
            disable_mamba,
            disable_cmea,
        } => {
            let text = fs::read_to_string(&config)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", config.display())))?;
            let mut cfg: ModelConfig = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", config.display())))?;
            if let Some(r) = missing_rate {
                if !(0.0..=1.0).contains(&r) {
                    return Err(CliError::Usage("--missing-rate must be in [0, 1]".into()));
                }
                cfg.missing_rate = r;
            }
            if let Some(e) = epochs {
                if e == 0 {
                    return Err(CliError::Usage("--epochs must be >= 1".into()));
                }
                cfg.epochs = e;
            }
            cfg.disable_cnn |= disable_cnn;
            cfg.disable_mamba |= disable_mamba;
            cfg.disable_cmea |= disable_cmea;
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            println!("resolved config:\n{}", serde_json::to_string_pretty(&cfg).unwrap());

            let metrics_csv = metrics_csv_path(&out);
            let outcome = trainer::train(&cfg, &data, &out, &metrics_csv)?;
            for log in &outcome.logs {
                println!(
                    "epoch {:3}  loss_p {:.5}  loss_c {:.5}  loss_total {:.5}  val_mae {:.4}",
                    log.epoch, log.loss_p, log.loss_c, log.loss_total, log.val.mae
                );
            }
            println!(
                "best epoch {} (val MAE {:.4}); checkpoint: {}; metrics: {}",
                outcome.best_epoch,
                outcome.best_val_mae,
                outcome.ckpt_path.display(),
                metrics_csv.display()
            );
            Ok(())
        }
        Command::Eval { data, ckpt, missing_rate, seed, report } => {
            let rates = parse_rate_list(&missing_rate)?;
            let (config, _) = checkpoint::load(&ckpt)?;
            println!(
                "eval: ckpt={} data={} seed={seed} rates={rates:?}",
                ckpt.display(),
                data.display()
            );
            println!("checkpoint config:\n{}", serde_json::to_string_pretty(&config).unwrap());
            let mut rows = Vec::new();
            for &rate in &rates {
                let metrics = trainer::evaluate(&ckpt, &data, rate, seed)?;
                println!("{}", format_report(rate, &metrics));
                rows.push((rate, metrics));
            }
            if let Some(path) = report {
                let mut out = format!("missing_rate,{}\n", MetricsReport::CSV_HEADER);
                for (rate, m) in &rows {
                    out.push_str(&format!("{rate},{}\n", m.csv_row()));
                }
                fs::write(&path, out)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Gradcheck { seed } => {
            println!("gradcheck: seed={seed} (double precision, central differences)");
            // test hook: deliberately damage one component's analytic gradient
            let perturb = std::env::var("HCMEN_GRADCHECK_PERTURB").ok();
            let results = gradcheck::run_suite(seed, perturb.as_deref());
            let mut failures = Vec::new();
            for res in &results {
                println!(
                    "{:28} max rel err {:>10.3e}  (tol {:.0e})  {}",
                    res.component,
                    res.max_rel_err,
                    res.tolerance,
                    if res.passed() { "PASS" } else { "FAIL" }
                );
                if !res.passed() {
                    failures.push(res.component.clone());
                }
            }
            if failures.is_empty() {
                println!("all {} gradient checks passed", results.len());
                Ok(())
            } else {
                Err(CliError::Runtime(format!(
                    "gradient checks failed: {}",
                    failures.join(", ")
                )))
            }
        }
        Command::Bench { lengths, trials } => {
            let lengths = parse_length_list(&lengths)?;
            if trials == 0 {
                return Err(CliError::Usage("--trials must be >= 1".into()));
            }
            println!(
                "bench: lengths={lengths:?} trials={trials} inner_dim={} state_dim={}",
                bench::BENCH_INNER_DIM,
                bench::BENCH_STATE_DIM
            );
            let report = match bench::run(&lengths, trials) {
                Ok(r) => r,
                Err(HcmenError::Format(msg)) => return Err(CliError::Usage(msg)),
                Err(e) => return Err(e.into()),
            };
            println!("length,median_ms");
            for row in &report.rows {
                println!("{},{}", row.length, row.median_ms);
            }
            println!("# loglog_slope: {:.4}", report.loglog_slope);
            Ok(())
        }
    }
}

fn metrics_csv_path(out: &std::path::Path) -> PathBuf {
    let mut os = out.as_os_str().to_os_string();
    os.push(".metrics.csv");
    PathBuf::from(os)
}

fn parse_rate_list(list: &str) -> Result<Vec<f64>, CliError> {
    let rates: Result<Vec<f64>, _> = list.split(',').map(|s| s.trim().parse::<f64>()).collect();
    let rates = rates.map_err(|e| CliError::Usage(format!("--missing-rate: {e}")))?;
    if rates.is_empty() || rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(CliError::Usage("--missing-rate values must lie in [0, 1]".into()));
    }
    Ok(rates)
}

fn parse_length_list(list: &str) -> Result<Vec<usize>, CliError> {
    let lengths: Result<Vec<usize>, _> = list.split(',').map(|s| s.trim().parse::<usize>()).collect();
    let lengths = lengths.map_err(|e| CliError::Usage(format!("--lengths: {e}")))?;
    if lengths.is_empty() || lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Usage("--lengths must be a strictly ascending list".into()));
    }
    Ok(lengths)
}

fn format_report(rate: f64, m: &MetricsReport) -> String {
    let pct = |v: f64| v * 100.0;
    let corr_note = if m.corr_degenerate { " (corr undefined; reported 0)" } else { "" };
    format!(
        "rate {rate:.2} | MAE {:.4} Corr {:.4}{corr_note} | Acc-7 {:.2} Acc-5 {:.2} | \
         Acc-2 {:.2}/{:.2} F1 {:.2}/{:.2} (has0/non0)",
        m.mae,
        m.corr,
        pct(m.acc7),
        pct(m.acc5),
        pct(m.acc2_has0),
        pct(m.acc2_non0),
        pct(m.f1_has0),
        pct(m.f1_non0),
    )
}
