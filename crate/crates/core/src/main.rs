use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use subnet_id::cli::{self, ExperimentConfig, ExternalData, SystemSource};
use subnet_id::subnet::Scheme;

#[derive(Parser)]
#[command(name = "subnet-id", version, about = "Subspace-encoder state-space identification with BLA initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibrate and simulate Wiener-Hammerstein datasets, one per nl level.
    Generate(Common),
    /// Fit and score the best linear approximation.
    Bla(Common),
    /// Initialize and train one model.
    Train {
        #[command(flatten)]
        common: Common,
        /// Linear model from `bla` (needed by the LinDY schemes).
        #[arg(long)]
        bla: Option<PathBuf>,
        /// Artifact name prefix.
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Simulate a trained model on a CSV record.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Write per-sample errors to this CSV.
        #[arg(long)]
        errors: Option<PathBuf>,
    },
    /// Run the full level x scheme x seed grid.
    Experiment(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initialization scheme tag (repeatable for `experiment`).
    #[arg(long)]
    scheme: Vec<Scheme>,
    /// Nonlinearity level in percent (repeatable).
    #[arg(long)]
    nl: Vec<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Directory holding train.csv, val.csv and test.csv.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> subnet_id::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
            cfg.train.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if !self.scheme.is_empty() {
            cfg.schemes = self.scheme.clone();
            cfg.train.scheme = self.scheme[0];
        }
        if !self.nl.is_empty() {
            cfg.nl_targets = self.nl.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(dir) = &self.data {
            cfg.system = SystemSource::External(ExternalData {
                train: dir.join("train.csv"),
                val: dir.join("val.csv"),
                test: dir.join("test.csv"),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn external(cfg: &ExperimentConfig) -> subnet_id::Result<&ExternalData> {
    match &cfg.system {
        SystemSource::External(d) => Ok(d),
        SystemSource::Wh(_) => Err(subnet_id::Error::Config(
            "no data given: pass --data or a config with an external system".into(),
        )),
    }
}

fn run(command: Command) -> subnet_id::Result<bool> {
    match command {
        Command::Generate(common) => {
            let cfg = common.resolve()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            cfg.save(cfg.output_dir.join("config.json"))?;
            let manifest = cli::cmd_generate(&cfg, &cfg.output_dir)?;
            for l in &manifest.levels {
                println!("nl target {:>5}: achieved {:.3} %nl, input std {:.5}", l.nl_target, l.nl_achieved, l.input_std);
            }
        }
        Command::Bla(common) => {
            let cfg = common.resolve()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            cfg.save(cfg.output_dir.join("config.json"))?;
            let window = cfg.model.n_a.max(cfg.model.n_b);
            let o = cli::cmd_bla(external(&cfg)?, &cfg.bla, window, &cfg.output_dir)?;
            println!(
                "val NRMS {:.6}  test NRMS {:.6}  {:.3} %nl",
                o.val.nrms,
                o.test.nrms,
                o.test.percent_nl.unwrap_or(f64::NAN)
            );
        }
        Command::Train { common, bla, name } => {
            let cfg = common.resolve()?;
            std::fs::create_dir_all(&cfg.output_dir)?;
            cfg.save(cfg.output_dir.join("config.json"))?;
            let o = cli::cmd_train(external(&cfg)?, bla.as_deref(), &cfg.model, &cfg.train, &cfg.output_dir, &name)?;
            println!("best epoch {}  test NRMS {:.6}", o.history.best_epoch, o.test.nrms);
        }
        Command::Evaluate { model, data, errors } => {
            let r = cli::cmd_evaluate(&model, &data, errors.as_deref())?;
            println!("NRMS {:.6} over {} samples", r.nrms, r.n_scored);
        }
        Command::Experiment(common) => {
            let cfg = common.resolve()?;
            let summary = cli::cmd_experiment(&cfg)?;
            for m in &summary.medians {
                let level = m.nl_target.map(|t| format!("{t}")).unwrap_or_else(|| "ext".into());
                println!("{level:>5} %nl  {:<14} median test NRMS {:.6} ({} runs)", m.scheme, m.median_test_nrms, m.succeeded);
            }
            return Ok(summary.all_succeeded());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("some runs failed; see summary.csv");
            ExitCode::FAILURE
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
