use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use staticbasis::experiments::acceptance::{self, Suite};
use staticbasis::experiments::{self, Experiment, ExperimentConfig};

/// Desk-scale attacks on static-basis TEE shielding, with CSV output.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// An experiment name, or `acceptance` to run the acceptance suite.
    #[arg(value_parser = parse_target)]
    target: Target,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Subset size, or `all`.
    #[arg(long)]
    t: Option<String>,
    #[arg(long)]
    delta: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, visible_alias = "p")]
    modulus: Option<u64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    bypass_batches: Option<usize>,
    /// Output directory for CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Flat key=value file applied before environment and flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// One 14336 × 4096 layer, K = 10, δ = 0. Needs about 1 GB of memory.
    #[arg(long)]
    full_scale: bool,
    /// Acceptance only: run just these criteria.
    #[arg(long = "criterion")]
    criteria: Vec<u8>,
    /// Acceptance only: skip the full-width query count.
    #[arg(long)]
    quick: bool,
}

#[derive(Clone, Copy, Debug)]
enum Target {
    Experiment(Experiment),
    Acceptance,
}

fn parse_target(s: &str) -> Result<Target, String> {
    if s == "acceptance" {
        return Ok(Target::Acceptance);
    }
    Experiment::from_str(s, true)
        .map(Target::Experiment)
        .map_err(|_| {
            let names: Vec<&str> = Experiment::value_variants()
                .iter()
                .map(|e| e.name())
                .collect();
            format!("expected acceptance or one of: {}", names.join(", "))
        })
}

impl Cli {
    fn flag_pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k: &'static str, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        put("d", self.d.map(|x| x.to_string()));
        put("d_model", self.d_model.map(|x| x.to_string()));
        put("k", self.k.map(|x| x.to_string()));
        put("t", self.t.clone());
        put("delta", self.delta.map(|x| x.to_string()));
        put("batch_size", self.batch_size.map(|x| x.to_string()));
        put("trials", self.trials.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("modulus", self.modulus.map(|x| x.to_string()));
        put("window", self.window.map(|x| x.to_string()));
        put("bypass_batches", self.bypass_batches.map(|x| x.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        put("full_scale", self.full_scale.then(|| "true".to_string()));
        v
    }

    fn resolve(
        &self,
        experiment: Experiment,
    ) -> Result<ExperimentConfig, experiments::ConfigError> {
        let mut c = ExperimentConfig::defaults(experiment);
        if let Some(path) = &self.config {
            c.apply_file(path)?;
        }
        c.apply_env(std::env::vars())?;
        for (k, v) in self.flag_pairs() {
            c.apply(k, &v)?;
        }
        if c.full_scale {
            c.full_scale_shape();
        }
        c.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.target {
        Target::Acceptance => {
            let suite = Suite {
                seed: cli.seed.unwrap_or(1),
                full_scale_identity: !cli.quick,
                ..Suite::default()
            };
            let ids: Vec<u8> = if cli.criteria.is_empty() {
                acceptance::CRITERIA.to_vec()
            } else {
                cli.criteria.clone()
            };
            let mut failed = 0;
            for id in ids {
                let r = acceptance::run_criterion(id, &suite);
                println!("{r}");
                failed += usize::from(!r.passed);
            }
            if failed == 0 {
                println!("acceptance: all criteria passed");
                ExitCode::SUCCESS
            } else {
                println!("acceptance: {failed} criteria failed");
                ExitCode::FAILURE
            }
        }
        Target::Experiment(e) => {
            let config = match cli.resolve(e) {
                Ok(c) => c,
                Err(err) => {
                    eprintln!("error: {err}");
                    return ExitCode::from(2);
                }
            };
            match experiments::run(&config) {
                Ok(summary) => {
                    for line in &summary.lines {
                        println!("{line}");
                    }
                    println!(
                        "wrote {} rows to {}",
                        summary.output.len(),
                        summary.path.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::FAILURE
                }
            }
        }
    }
}
