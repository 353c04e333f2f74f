use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use smart_tmle::config_file::resolve_config_over;
use smart_tmle::csv_io::{load_csv, roles_for, write_csv};
use smart_tmle::manifest::RunManifest;
use smart_tmle::montecarlo::run_parallel;
use smart_tmle::report::{
    write_blip_histogram, write_blip_values, write_json, write_msm_curve, write_replicates, write_summary,
    AnalysisReport,
};
use smart_tmle::IoError;
use smart_tmle_core::config::{AnalysisConfig, HWeightMode, Population};
use smart_tmle_core::effects::{ate_tmle, benefit_harm_contrast, second_stage_rd, EffectError};
use smart_tmle_core::msm::{tmle_msm_with_blip, MsmError, Stage, TmleError};
use smart_tmle_core::sim::{
    marginal_oracle, oracle_true_beta, Dgp, McSettings, MarginalOracle, Scenario, SimError, DEFAULT_ORACLE_DRAWS,
    SIM1_CELLS,
};
use smart_tmle_core::{fit_blip, TrialDataset};

#[derive(Debug, Parser)]
#[command(name = "smart-tmle", version, about = "Targeted estimation of blip-modified treatment effects in two-stage SMARTs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HMode {
    Unit,
    TreatmentPrevalence,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PopulationArg {
    All,
    Initiators,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the blip and the working model to a trial CSV.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Level of the reported interaction test.
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum)]
        h_weight_mode: Option<HMode>,
        #[arg(long, value_enum)]
        population: Option<PopulationArg>,
        /// Also estimate the marginal first- and second-stage effects.
        #[arg(long)]
        effects: bool,
    },
    /// Run Monte Carlo studies and write their summaries.
    Simulate {
        /// May be repeated; one summary row per scenario.
        #[arg(long, required = true)]
        scenario: Vec<String>,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
        #[arg(long, default_value_t = 1815)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads; 0 uses every available core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Estimator settings layered over the scenario defaults.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write one simulated trial as CSV.
    Generate {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1815)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// CSV file to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print population quantities of a simulation design.
    Oracle {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_ORACLE_DRAWS)]
        n_oracle: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Also write the values to this JSON file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_VALIDATION: u8 = 2;
const EXIT_ESTIMATION: u8 = 3;
const EXIT_IO: u8 = 4;

/// A failed run: exit code plus what goes into the manifest.
struct Failure {
    code: u8,
    stage: String,
    kind: String,
    message: String,
}

impl Failure {
    fn new(code: u8, stage: &str, kind: &str, message: impl Into<String>) -> Self {
        Self { code, stage: stage.into(), kind: kind.into(), message: message.into() }
    }

    fn io(stage: &str, e: IoError) -> Self {
        let (code, kind) = if e.is_validation() { (EXIT_VALIDATION, "InvalidInput") } else { (EXIT_IO, "Io") };
        Self::new(code, stage, kind, e.to_string())
    }

    fn tmle(e: TmleError) -> Self {
        let code = if e.stage == Stage::Config { EXIT_VALIDATION } else { EXIT_ESTIMATION };
        Self::new(code, &e.stage.to_string(), e.source.kind(), e.to_string())
    }

    fn effect(e: EffectError) -> Self {
        let kind = match &e {
            EffectError::Msm(m) => m.kind(),
            EffectError::Config(_) => return Self::new(EXIT_VALIDATION, "effects", "Config", e.to_string()),
            _ => "EffectEstimation",
        };
        Self::new(EXIT_ESTIMATION, "effects", kind, e.to_string())
    }

    fn sim(e: SimError) -> Self {
        match e {
            SimError::UnknownDgp(_) | SimError::UnknownScenario(_) | SimError::InvalidSpec(_) => {
                Self::new(EXIT_VALIDATION, "settings", "InvalidSettings", e.to_string())
            }
            SimError::Tmle(t) => Self::tmle(t),
            other => Self::new(EXIT_ESTIMATION, "simulation", "SimulationFailure", other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    let cli = Cli::parse();
    let (name, out) = match &cli.command {
        Command::Analyze { out, .. } => ("analyze", Some(out.clone())),
        Command::Simulate { out, .. } => ("simulate", Some(out.clone())),
        Command::Generate { out, .. } => ("generate", out.parent().map(Path::to_path_buf)),
        Command::Oracle { out, .. } => ("oracle", out.as_ref().and_then(|p| p.parent().map(Path::to_path_buf))),
    };
    let mut manifest = RunManifest::start(name, args);
    if let Some(dir) = &out {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error [output/Io]: {}: {e}", dir.display());
            return ExitCode::from(EXIT_IO);
        }
    }
    let result = match cli.command {
        Command::Analyze { data, config, out, seed, alpha, h_weight_mode, population, effects } => {
            analyze(&mut manifest, &data, config.as_deref(), &out, seed, alpha, h_weight_mode, population, effects)
        }
        Command::Simulate { scenario, reps, n, seed, out, jobs, alpha, config } => {
            simulate(&mut manifest, &scenario, reps, n, seed, &out, jobs, alpha, config.as_deref())
        }
        Command::Generate { scenario, n, seed, out } => generate(&mut manifest, &scenario, n, seed, &out),
        Command::Oracle { scenario, n_oracle, seed, out } => oracle(&mut manifest, &scenario, n_oracle, seed, out.as_deref()),
    };
    let code = match result {
        Ok(()) => {
            manifest.succeed();
            0
        }
        Err(f) => {
            eprintln!("error [{}/{}]: {}", f.stage, f.kind, f.message);
            manifest.fail(&f.stage, &f.kind, f.message);
            f.code
        }
    };
    if let Some(dir) = &out {
        if let Err(e) = manifest.write(dir) {
            eprintln!("error [manifest/Io]: {e}");
            return ExitCode::from(if code == 0 { EXIT_IO } else { code });
        }
    }
    ExitCode::from(code)
}

fn load_settings(base: &AnalysisConfig, path: Option<&Path>) -> Result<AnalysisConfig, Failure> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Failure::io("config", IoError::file(p, e)))?,
        None => String::new(),
    };
    resolve_config_over(base, &text, std::env::vars()).map_err(|e| Failure::io("config", e))
}

fn record(manifest: &mut RunManifest, path: PathBuf, written: Result<(), IoError>) -> Result<(), Failure> {
    written.map_err(|e| Failure::io("output", e))?;
    manifest.outputs.push(path);
    Ok(())
}

fn settings_json<T: Serialize>(value: &T) -> serde_json::Value {
    serde_json::to_value(value).unwrap_or(serde_json::Value::Null)
}

#[allow(clippy::too_many_arguments)]
fn analyze(
    manifest: &mut RunManifest,
    data_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    alpha: f64,
    h_mode: Option<HMode>,
    population: Option<PopulationArg>,
    effects: bool,
) -> Result<(), Failure> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Failure::new(EXIT_VALIDATION, "settings", "InvalidSettings", format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut config = load_settings(&AnalysisConfig::default(), config_path)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(h) = h_mode {
        config.h_weight_mode = match h {
            HMode::Unit => HWeightMode::Unit,
            HMode::TreatmentPrevalence => HWeightMode::TreatmentPrevalence,
        };
    }
    if let Some(p) = population {
        config.population = match p {
            PopulationArg::All => Population::All,
            PopulationArg::Initiators => Population::Initiators,
        };
    }
    manifest.seed = Some(config.seed);
    manifest.settings = settings_json(&config);

    let data = load_csv(data_path, &config.roles).map_err(|e| Failure::io("input", e))?;
    let blip = fit_blip(&data, &config).map_err(|e| Failure::tmle(TmleError { stage: Stage::Blip, source: MsmError::Cate(e) }))?;
    let fit = tmle_msm_with_blip(&data, &config, &blip).map_err(Failure::tmle)?;
    let marginal = if effects { marginal_effects(&data, &config)? } else { Vec::new() };
    let report = AnalysisReport::new(&data, &config, &blip, &fit, marginal, alpha);

    let path = out.join("report.json");
    record(manifest, path.clone(), write_json(&path, &report))?;
    let path = out.join("blip.csv");
    record(manifest, path.clone(), write_blip_values(&path, &data, &blip))?;
    let path = out.join("blip_histogram.csv");
    record(manifest, path.clone(), write_blip_histogram(&path, &blip.values))?;
    let path = out.join("msm_curve.csv");
    record(manifest, path.clone(), write_msm_curve(&path, &fit, &blip.values))?;

    let b = &report.interaction;
    println!(
        "beta3 = {:.4} (SE {:.4}, {:.0}% CI {:.4} to {:.4}, p = {:.4}); n = {}",
        b.estimate,
        b.se,
        100.0 * (1.0 - alpha),
        b.ci_lower,
        b.ci_upper,
        b.p_value,
        report.n_second_stage
    );
    Ok(())
}

fn marginal_effects(data: &TrialDataset, config: &AnalysisConfig) -> Result<Vec<smart_tmle_core::EffectEstimate>, Failure> {
    let mut out = vec![ate_tmle(data, config).map_err(Failure::effect)?];
    out.push(second_stage_rd(data, config).map_err(Failure::effect)?);
    out.push(benefit_harm_contrast(data, config).map_err(Failure::effect)?);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    manifest: &mut RunManifest,
    scenarios: &[String],
    reps: usize,
    n: usize,
    seed: u64,
    out: &Path,
    jobs: usize,
    alpha: f64,
    config_path: Option<&Path>,
) -> Result<(), Failure> {
    manifest.seed = Some(seed);
    let mut plans = Vec::new();
    for name in scenarios {
        let scenario = Scenario::parse(name).map_err(Failure::sim)?;
        let mut settings = McSettings::new(scenario, reps, n, seed);
        settings.alpha = alpha;
        settings.config = Some(load_settings(&scenario.config(), config_path)?);
        settings.validate().map_err(Failure::sim)?;
        plans.push(settings);
    }
    manifest.settings = settings_json(&serde_json::json!({ "jobs": jobs, "studies": plans }));

    let mut reports = Vec::new();
    for settings in &plans {
        let report = run_parallel(settings, jobs).map_err(Failure::sim)?;
        let name = settings.scenario.name();
        let path = out.join(format!("{name}_report.json"));
        record(manifest, path.clone(), write_json(&path, &report))?;
        let path = out.join(format!("{name}_replicates.csv"));
        record(manifest, path.clone(), write_replicates(&path, &report))?;
        println!(
            "{name}: bias {:.4} (MC SE {:.4}), variance {:.4}, MSE {:.4}, coverage {:.1}%, power {:.1}%, failures {}",
            report.bias,
            report.bias_mc_se,
            report.variance,
            report.mse,
            report.coverage,
            report.power,
            report.failures.len()
        );
        reports.push(report);
    }
    let path = out.join("summary.csv");
    record(manifest, path.clone(), write_summary(&path, &reports))
}

fn parse_design(name: &str) -> Result<Dgp, Failure> {
    Dgp::parse(name).or_else(|_| Scenario::parse(name).map(|s| s.dgp())).map_err(Failure::sim)
}

/// Writes the trial CSV plus a sibling `.toml` holding the scenario's
/// estimator settings and role map, usable as `analyze --config`.
fn generate(manifest: &mut RunManifest, scenario: &str, n: usize, seed: u64, out: &Path) -> Result<(), Failure> {
    manifest.seed = Some(seed);
    manifest.settings = serde_json::json!({ "scenario": scenario, "n": n });
    let scenario = Scenario::parse(scenario).map_err(Failure::sim)?;
    let data = scenario.dgp().simulate(n, seed).map_err(Failure::sim)?;
    record(manifest, out.to_path_buf(), write_csv(out, &data))?;
    let config = AnalysisConfig { roles: roles_for(&data), ..scenario.config() };
    let text = toml::to_string(&config).map_err(|e| Failure::new(EXIT_IO, "output", "Io", e.to_string()))?;
    let path = out.with_extension("toml");
    let written = std::fs::write(&path, text).map_err(|e| IoError::file(&path, e));
    record(manifest, path, written)
}

#[derive(Debug, Serialize)]
struct OracleReport {
    design: &'static str,
    n_oracle: usize,
    seed: u64,
    true_beta: [f64; 4],
    true_beta3: f64,
    marginal: MarginalOracle,
    /// Exact blip per baseline cell for the binary designs.
    blip_cells: Option<Vec<BlipCell>>,
}

#[derive(Debug, Serialize)]
struct BlipCell {
    l1: f64,
    l2: f64,
    blip: f64,
}

fn oracle(manifest: &mut RunManifest, scenario: &str, n_oracle: usize, seed: u64, out: Option<&Path>) -> Result<(), Failure> {
    manifest.seed = Some(seed);
    manifest.settings = serde_json::json!({ "scenario": scenario, "n_oracle": n_oracle });
    let dgp = parse_design(scenario)?;
    if n_oracle < 2 {
        return Err(Failure::new(EXIT_VALIDATION, "settings", "InvalidSettings", "n_oracle must be at least 2"));
    }
    let true_beta = oracle_true_beta(dgp, n_oracle, seed).map_err(Failure::sim)?;
    let marginal = marginal_oracle(dgp, n_oracle, seed).map_err(Failure::sim)?;
    let blip_cells = match dgp {
        Dgp::Sim2 => None,
        _ => Some(SIM1_CELLS.iter().map(|c| BlipCell { l1: c[0], l2: c[1], blip: dgp.q1(1, c) - dgp.q1(0, c) }).collect()),
    };
    let report = OracleReport { design: dgp.name(), n_oracle, seed, true_beta, true_beta3: true_beta[3], marginal, blip_cells };
    let text = serde_json::to_string_pretty(&report).map_err(|e| Failure::io("output", e.into()))?;
    println!("{text}");
    if let Some(path) = out {
        record(manifest, path.to_path_buf(), write_json(path, &report))?;
    }
    Ok(())
}
