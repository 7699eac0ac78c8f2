use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lumenfit::config::PipelineConfig;
use lumenfit::pipeline::{run_stages, simulate, threads_from_env, Stage, MANIFEST_FILE};

#[derive(Parser, Debug)]
#[command(name = "lumenfit", version, about = "Night-light and child-nutrition analysis pipeline")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    radius_km: Option<f64>,
    /// Highest polynomial degree compared by the ANOVA stage
    #[arg(long, global = true)]
    max_degree: Option<usize>,
    /// Comma-separated outcome list (haz, whz, waz, stunted, wasted, underweight)
    #[arg(long, global = true)]
    outcome: Option<String>,
    /// Any configuration key, as key=value; may repeat
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a generated scenario's input tables and truth to the output directory
    Simulate,
    /// Match clusters and report what the merge kept
    Merge,
    /// Descriptive statistics
    Summarize,
    /// Light density curves
    Kde,
    /// Local polynomial curves of each outcome on light
    Npreg,
    /// Tree ensemble and KNN feature ranking with CV error
    Select,
    /// Nested F tests across light polynomial degrees
    Anova,
    /// Pooled OLS table
    FitOls,
    /// Cluster fixed-effects table
    FitFe,
    /// Additive models with a penalized spline in light
    Gam,
    /// Spatial lag and serial correlation tests
    Diagnose,
    /// Every stage
    Run,
}

impl Command {
    fn stages(&self) -> Vec<Stage> {
        match self {
            Self::Simulate => Vec::new(),
            Self::Merge => vec![Stage::Merge],
            Self::Summarize => vec![Stage::Summarize],
            Self::Kde => vec![Stage::Kde],
            Self::Npreg => vec![Stage::Npreg],
            Self::Select => vec![Stage::Select],
            Self::Anova => vec![Stage::Anova],
            Self::FitOls => vec![Stage::FitOls],
            Self::FitFe => vec![Stage::FitFe],
            Self::Gam => vec![Stage::Gam],
            Self::Diagnose => vec![Stage::Diagnose],
            Self::Run => Stage::ALL.to_vec(),
        }
    }
}

fn build_config(c: &Common) -> Result<PipelineConfig, String> {
    let mut config = match &c.config {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string())?,
        None => PipelineConfig::default(),
    };
    let mut set = |k: &str, v: String| config.set(k, &v).map_err(|e| e.to_string());
    for kv in &c.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        set(k.trim(), v.trim().to_string())?;
    }
    if let Some(s) = c.seed {
        set("seed", s.to_string())?;
    }
    if let Some(p) = &c.out_dir {
        set("out_dir", p.display().to_string())?;
    }
    if let Some(r) = c.radius_km {
        set("radius_km", r.to_string())?;
    }
    if let Some(d) = c.max_degree {
        set("max_degree", d.to_string())?;
    }
    if let Some(o) = &c.outcome {
        set("outcomes", o.clone())?;
    }
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config = match build_config(&cli.common) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("lumenfit: {e}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Simulate => simulate(&config, &config.out_dir).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
        ref cmd => threads_from_env()
            .and_then(|t| run_stages(&config, &cmd.stages(), t))
            .map(|m| {
                for a in &m.artifacts {
                    println!("{}", config.out_dir.join(&a.path).display());
                }
                println!("{}", config.out_dir.join(MANIFEST_FILE).display());
            }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lumenfit: {e}");
            ExitCode::FAILURE
        }
    }
}
