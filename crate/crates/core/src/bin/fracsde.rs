use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use fracsde::harness::config::hash_json;
use fracsde::harness::emit::{self, Provenance};
use fracsde::harness::{self, ExperimentConfig, VariationWeight};
use fracsde::schemes::{CnPolicy, SchemeKind};
use fracsde::variations::{LimitConstants, WeightMeasure};
use fracsde::{Error, Result};

/// Schemes for fBm-driven SDEs: simulation, convergence rates, error
/// distributions and limit constants.
#[derive(Parser, Debug)]
#[command(name = "fracsde", version = env!("FRACSDE_GIT_DESCRIBE"))]
struct Cli {
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON configuration; command-line flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Limit constants and the covariance table of the trapezoid kernels.
    Constants {
        #[arg(long, default_value_t = 0.5)]
        hurst: f64,
        #[arg(long, default_value_t = 3)]
        q: usize,
        /// Number of tabulated correlation lags.
        #[arg(long, default_value_t = 16)]
        lags: usize,
        /// Size of the `k,l` covariance table.
        #[arg(long, default_value_t = 16)]
        table: u64,
    },
    /// One path with reference, scheme, perturbation and error limit.
    Simulate(Overrides),
    /// Convergence rates over a level range.
    Rates(Overrides),
    /// Normalized-error distribution against the limit theorem.
    Distribution(Overrides),
    /// Variation laws of large numbers, variances and decay.
    Variations(Overrides),
}

#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long)]
    scheme: Option<SchemeKind>,
    /// Registered model name (constant, linear-drift, sinh, trig).
    #[arg(long)]
    model: Option<String>,
    /// Model parameters as a JSON object.
    #[arg(long)]
    model_params: Option<String>,
    #[arg(long)]
    hurst: Option<f64>,
    #[arg(long)]
    m_min: Option<u32>,
    #[arg(long)]
    m_max: Option<u32>,
    #[arg(long)]
    m: Option<u32>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    xi: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    fine_offset: Option<u32>,
    /// Run the implicit scheme below its admissible level.
    #[arg(long)]
    force: bool,
    /// omega-cn or step-contraction.
    #[arg(long, value_parser = parse_json_str::<CnPolicy>)]
    cn_policy: Option<CnPolicy>,
    #[arg(long)]
    q: Option<usize>,
    /// left, midpoint, trapezoid or uniform.
    #[arg(long)]
    weight: Option<WeightMeasure>,
    /// one, sigma or d-sigma.
    #[arg(long, value_parser = parse_json_str::<VariationWeight>)]
    variation_weight: Option<VariationWeight>,
    #[arg(long)]
    decay_rate: Option<f64>,
}

fn parse_json_str<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

fn apply(cfg: &mut ExperimentConfig, o: &Overrides) -> Result<()> {
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = o.$field.clone() { cfg.$field = v; } )* };
    }
    set!(
        scheme,
        hurst,
        m_min,
        m_max,
        m,
        n_paths,
        xi,
        epsilon,
        fine_offset,
        cn_policy,
        q,
        weight,
        variation_weight,
        decay_rate
    );
    if let Some(name) = &o.model {
        cfg.model.name = name.clone();
        cfg.model.params = serde_json::Value::Object(Default::default());
    }
    if let Some(params) = &o.model_params {
        cfg.model.params = serde_json::from_str(params).map_err(|e| Error::Config(format!("--model-params: {e}")))?;
    }
    if o.force {
        cfg.force = true;
    }
    Ok(())
}

fn load_config(cli: &Cli, o: Option<&Overrides>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = o {
        apply(&mut cfg, o)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let overrides = match &cli.command {
        Command::Simulate(o) | Command::Rates(o) | Command::Distribution(o) | Command::Variations(o) => Some(o),
        Command::Constants { .. } => None,
    };
    let cfg = load_config(cli, overrides)?;
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let prov = Provenance::new(cfg.hash(), cfg.seed);
    let files = match &cli.command {
        Command::Constants { hurst, q, lags, table } => {
            let constants = LimitConstants::new(*hurst, *q, *lags)?;
            print_json(&constants)?;
            let key = serde_json::json!({"hurst": hurst, "q": q, "lags": lags, "table": table});
            let prov = Provenance::new(hash_json(&key), cfg.seed);
            emit::emit_constants(&constants, *table, &prov, &dir)?
        }
        Command::Simulate(_) => {
            let sim = harness::simulate(&cfg)?;
            print_json(&sim.summary)?;
            emit::emit_simulation(&sim, &prov, &dir)?
        }
        Command::Rates(_) => {
            let report = harness::run_rate_experiment(&cfg)?;
            print_json(&report)?;
            emit::emit_rates(&report, &prov, &dir)?
        }
        Command::Distribution(_) => {
            let report = harness::run_distribution_experiment(&cfg)?;
            let summary = serde_json::json!({"mode": report.mode, "pathwise": report.pathwise, "weak": report.weak});
            print_json(&summary)?;
            emit::emit_distribution(&report, &prov, &dir)?
        }
        Command::Variations(_) => {
            let report = harness::run_variation_experiment(&cfg)?;
            print_json(&report)?;
            emit::emit_variations(&report, &prov, &dir)?
        }
    };
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker threads: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
