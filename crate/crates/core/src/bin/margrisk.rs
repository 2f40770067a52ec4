//! Command-line front end: fit clustered competing-risks models with
//! missing causes, predict cumulative incidence with simultaneous bands,
//! test the missingness model, and run seeded simulation studies.

use clap::{Args, Parser, Subcommand, ValueEnum};
use margrisk::data::{load_csv_with, CsvSchema, Dataset};
use margrisk::error::Error;
use margrisk::estimator::{fit_with, FitOptions, FitResult};
use margrisk::gof::gof_test;
use margrisk::inference::{BandOptions, BandResult, BandWeight, Influence};
use margrisk::missingness::{DesignSpec, TimeTransform};
use margrisk::simulation::{
    run_monte_carlo, write_band_csv, write_rep_log_csv, write_summary_csv, AnalysisOptions,
    ScenarioConfig,
};
use margrisk::stats::{norm_quantile, two_sided_p};
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "margrisk",
    about = "Marginal cause-specific hazards regression for clustered competing-risks data with missing causes",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the two-stage model and write coefficient and baseline-hazard tables.
    Fit(FitArgs),
    /// Fit and predict covariate-specific cumulative incidence with bands.
    Predict(PredictArgs),
    /// Goodness-of-fit test for the missingness model.
    Gof(GofArgs),
    /// Run a Monte Carlo study from a scenario config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Input CSV: cluster_id, time, delta, cause, r, z1..zp [, a1..aq].
    #[arg(long)]
    input: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    /// Number of competing causes (default: largest cause in the data).
    #[arg(long)]
    causes: Option<usize>,
    /// Time transform in the missingness design.
    #[arg(long, value_enum, default_value_t = DesignChoice::Time)]
    design: DesignChoice,
    /// Administrative horizon override.
    #[arg(long)]
    tau: Option<f64>,
    /// Confidence level for intervals and bands.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum DesignChoice {
    /// identity time effect
    Time,
    /// logarithmic time effect
    Logtime,
}

impl DesignChoice {
    fn to_spec(self) -> DesignSpec {
        DesignSpec {
            time_transform: match self {
                DesignChoice::Time => TimeTransform::Identity,
                DesignChoice::Logtime => TimeTransform::Log,
            },
            include_z: true,
            include_a: true,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Covariate vector for prediction, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    z0: Vec<f64>,
    /// Which simultaneous bands to compute.
    #[arg(long, value_enum, default_value_t = BandChoice::Both)]
    band: BandChoice,
    /// Multiplier draws for the bands.
    #[arg(long, default_value_t = 1000)]
    nsim: usize,
    /// Band window start (default: 10th percentile of failure times).
    #[arg(long)]
    t1: Option<f64>,
    /// Band window end (default: 90th percentile of failure times).
    #[arg(long)]
    t2: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BandChoice {
    Ep,
    Hw,
    Both,
}

#[derive(Args)]
struct GofArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cause whose residual process is tested.
    #[arg(long, default_value_t = 1)]
    cause: usize,
    /// Multiplier draws.
    #[arg(long, default_value_t = 1000)]
    nsim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario configuration (TOML).
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Number of replications.
    #[arg(long)]
    reps: usize,
    /// Seed override (otherwise the scenario file's seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Missingness-design time transform used in the analysis.
    #[arg(long, value_enum, default_value_t = DesignChoice::Time)]
    design: DesignChoice,
    /// Compute simultaneous bands with this many multiplier draws.
    #[arg(long)]
    band_nsim: Option<usize>,
    /// Evaluation times for hazard/incidence summaries.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.2, 0.4, 0.8])]
    times: Vec<f64>,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            eprintln!("warning: thread pool already initialized");
        }
    }
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Gof(args) => cmd_gof(args),
        Command::Simulate(args) => cmd_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, err, out)) => {
            eprintln!("error: {err}");
            if code == 3 {
                write_diagnostics(&out, &err);
            }
            ExitCode::from(code)
        }
    }
}

type CmdResult = Result<(), (u8, Error, PathBuf)>;

fn classify(err: Error, out: &Path) -> (u8, Error, PathBuf) {
    let code = if err.is_data_error() { 2 } else { 3 };
    (code, err, out.to_path_buf())
}

fn write_diagnostics(out: &Path, err: &Error) {
    #[derive(Serialize)]
    struct Diagnostics {
        schema_version: u32,
        status: &'static str,
        message: String,
    }
    let _ = std::fs::create_dir_all(out);
    if let Ok(body) = serde_json::to_string_pretty(&Diagnostics {
        schema_version: SCHEMA_VERSION,
        status: "failed",
        message: err.to_string(),
    }) {
        let _ = std::fs::write(out.join("diagnostics.json"), body);
    }
}

fn load_and_fit(args: &DataArgs) -> Result<(Dataset, FitResult, Influence), Error> {
    let data = load_csv_with(&args.input, &CsvSchema::default(), args.causes, args.tau)?;
    let spec = args.design.to_spec();
    let fitted = fit_with(&data, &spec, &FitOptions::default())?;
    let infl = Influence::new(&data, &fitted)?;
    Ok((data, fitted, infl))
}

#[derive(Serialize)]
struct FitJson {
    schema_version: u32,
    n_clusters: usize,
    n_subjects: usize,
    causes: usize,
    covariates: Vec<String>,
    auxiliary: Vec<String>,
    level: f64,
    missingness: MissingnessJson,
    cause_fits: Vec<CauseJson>,
}

#[derive(Serialize)]
struct MissingnessJson {
    gamma: Vec<f64>,
    se: Vec<f64>,
    iterations: usize,
    separation: bool,
}

#[derive(Serialize)]
struct CauseJson {
    cause: usize,
    beta: Vec<f64>,
    se: Vec<f64>,
    z: Vec<f64>,
    p_value: Vec<f64>,
    hazard_ratio: Vec<f64>,
    hr_lower: Vec<f64>,
    hr_upper: Vec<f64>,
    iterations: usize,
    score_norm: f64,
}

fn fit_json(data: &Dataset, fitted: &FitResult, infl: &Influence, level: f64) -> FitJson {
    let zq = norm_quantile(0.5 + level / 2.0);
    let n = data.n_clusters() as f64;
    let gamma_dim = fitted.missingness.dim();
    let gamma_cov = fitted.missingness.gamma_cov(data).unwrap_or_default();
    let gamma_se = (0..gamma_dim)
        .map(|j| (gamma_cov[j * gamma_dim + j] / n).sqrt())
        .collect();
    let cause_fits = fitted
        .causes
        .iter()
        .map(|c| {
            let se = infl.beta_se(c.cause);
            let z: Vec<f64> = c.beta.iter().zip(&se).map(|(b, s)| b / s).collect();
            CauseJson {
                cause: c.cause,
                beta: c.beta.clone(),
                p_value: z.iter().map(|&v| two_sided_p(v)).collect(),
                hazard_ratio: c.beta.iter().map(|b| b.exp()).collect(),
                hr_lower: c
                    .beta
                    .iter()
                    .zip(&se)
                    .map(|(b, s)| (b - zq * s).exp())
                    .collect(),
                hr_upper: c
                    .beta
                    .iter()
                    .zip(&se)
                    .map(|(b, s)| (b + zq * s).exp())
                    .collect(),
                se,
                z,
                iterations: c.iterations,
                score_norm: c.score_norm,
            }
        })
        .collect();
    FitJson {
        schema_version: SCHEMA_VERSION,
        n_clusters: data.n_clusters(),
        n_subjects: data.n_subjects(),
        causes: data.n_causes(),
        covariates: data.z_names().to_vec(),
        auxiliary: data.a_names().to_vec(),
        level,
        missingness: MissingnessJson {
            gamma: fitted.missingness.gamma().to_vec(),
            se: gamma_se,
            iterations: fitted.missingness.iterations,
            separation: fitted.missingness.separation,
        },
        cause_fits,
    }
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let out = args.data.out.clone();
    (|| -> Result<(), Error> {
        let (data, fitted, infl) = load_and_fit(&args.data)?;
        std::fs::create_dir_all(&out)?;
        let json = fit_json(&data, &fitted, &infl, args.data.level);
        std::fs::write(
            out.join("fit.json"),
            serde_json::to_string_pretty(&json).unwrap(),
        )?;
        for l in 1..=data.n_causes() {
            let mut w = file(&out.join(format!("baseline_hazard_{l}.csv")))?;
            writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
            writeln!(w, "t,cum_hazard,se,lower,upper")?;
            for (t, est, se, ci) in infl.lambda_table(l, args.data.level) {
                writeln!(w, "{t},{est},{se},{},{}", ci.lower, ci.upper)?;
            }
            w.flush()?;
        }
        Ok(())
    })()
    .map_err(|e| classify(e, &out))
}

fn band_columns(band: &BandResult, t: f64) -> (String, String) {
    match band.times.binary_search_by(|u| u.partial_cmp(&t).unwrap()) {
        Ok(i) => (format!("{}", band.lower[i]), format!("{}", band.upper[i])),
        Err(_) => (String::new(), String::new()),
    }
}

fn cmd_predict(args: PredictArgs) -> CmdResult {
    let out = args.data.out.clone();
    (|| -> Result<(), Error> {
        let (data, _fitted, infl) = load_and_fit(&args.data)?;
        if args.z0.len() != data.n_covariates() {
            return Err(Error::Invalid(format!(
                "z0 has {} entries but the data has {} covariates",
                args.z0.len(),
                data.n_covariates()
            )));
        }
        std::fs::create_dir_all(&out)?;
        let cif_inf = infl.cif_inference(&args.z0)?;
        for l in 1..=data.n_causes() {
            let mut bands: Vec<(&str, BandResult)> = Vec::new();
            if args.band != BandChoice::Hw {
                bands.push((
                    "ep",
                    cif_inf.band(
                        l,
                        &BandOptions {
                            weight: BandWeight::EqualPrecision,
                            level: args.data.level,
                            nsim: args.nsim,
                            t1: args.t1,
                            t2: args.t2,
                            seed: args.seed,
                        },
                    )?,
                ));
            }
            if args.band != BandChoice::Ep {
                bands.push((
                    "hw",
                    cif_inf.band(
                        l,
                        &BandOptions {
                            weight: BandWeight::HallWellner,
                            level: args.data.level,
                            nsim: args.nsim,
                            t1: args.t1,
                            t2: args.t2,
                            seed: args.seed,
                        },
                    )?,
                ));
            }
            let mut w = file(&out.join(format!("cif_{l}.csv")))?;
            writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
            let band_header: String = bands
                .iter()
                .map(|(tag, _)| format!(",band_{tag}_lower,band_{tag}_upper"))
                .collect();
            writeln!(w, "t,cif,se,lower,upper{band_header}")?;
            for (t, est, se, ci) in cif_inf.table(l, args.data.level) {
                let mut line = format!("{t},{est},{se},{},{}", ci.lower, ci.upper);
                for (_, band) in &bands {
                    let (lo, hi) = band_columns(band, t);
                    line.push(',');
                    line.push_str(&lo);
                    line.push(',');
                    line.push_str(&hi);
                }
                writeln!(w, "{line}")?;
            }
            w.flush()?;
        }
        Ok(())
    })()
    .map_err(|e| classify(e, &out))
}

fn cmd_gof(args: GofArgs) -> CmdResult {
    let out = args.data.out.clone();
    (|| -> Result<(), Error> {
        let data = load_csv_with(
            &args.data.input,
            &CsvSchema::default(),
            args.data.causes,
            args.data.tau,
        )?;
        let spec = args.data.design.to_spec();
        let model = margrisk::fit_missingness(&data, &spec)?;
        let result = gof_test(&data, &model, args.cause, args.nsim, args.seed)?;
        std::fs::create_dir_all(&out)?;
        let mut w = file(&out.join(format!("gof_{}.csv", args.cause)))?;
        writeln!(w, "# schema_version={SCHEMA_VERSION}")?;
        writeln!(w, "t,residual,lower,upper")?;
        writeln!(
            w,
            "0,0,{},{}",
            -result.band_halfwidth, result.band_halfwidth
        )?;
        for (t, v) in result
            .process
            .times()
            .iter()
            .zip(result.process.values())
            .filter(|(t, _)| **t <= result.display_t_max)
        {
            writeln!(
                w,
                "{t},{v},{},{}",
                -result.band_halfwidth, result.band_halfwidth
            )?;
        }
        w.flush()?;
        println!("cause {} p-value: {}", args.cause, result.p_value);
        Ok(())
    })()
    .map_err(|e| classify(e, &out))
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    let out = args.out.clone();
    (|| -> Result<(), Error> {
        let text = std::fs::read_to_string(&args.scenario)?;
        let mut cfg: ScenarioConfig =
            toml::from_str(&text).map_err(|e| Error::Invalid(format!("scenario file: {e}")))?;
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        let opts = AnalysisOptions {
            design: match args.design {
                DesignChoice::Time => TimeTransform::Identity,
                DesignChoice::Logtime => TimeTransform::Log,
            },
            time_points: args.times.clone(),
            level: args.level,
            band_nsim: args.band_nsim,
        };
        let summary = run_monte_carlo(&cfg, args.reps, &opts)?;
        std::fs::create_dir_all(&out)?;
        write_summary_csv(&summary, out.join("summary.csv"))?;
        if !summary.bands.is_empty() {
            write_band_csv(&summary, out.join("band_coverage.csv"))?;
        }
        write_rep_log_csv(&summary, out.join("reps.csv"))?;
        println!(
            "{} replications, {} failures",
            summary.nreps, summary.failures
        );
        for row in &summary.estimands {
            println!(
                "{} cause {}{}: truth {:.4} bias {:+.4} mcsd {:.4} ase {:.4} cp {:.3}",
                row.estimand,
                row.cause,
                row.time.map_or(String::new(), |t| format!(" t={t}")),
                row.truth,
                row.bias,
                row.mcsd,
                row.ase,
                row.cp
            );
        }
        for b in &summary.bands {
            let w = match b.weight {
                BandWeight::EqualPrecision => "ep",
                BandWeight::HallWellner => "hw",
            };
            println!("band {} {}: coverage {:.3}", b.target, w, b.coverage);
        }
        Ok(())
    })()
    .map_err(|e| classify(e, &out))
}

fn file(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, Error> {
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}
