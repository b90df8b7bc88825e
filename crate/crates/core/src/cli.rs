//! The `tilecast` command line.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 usage or scenario-file error, 3 solver failure,
//! 4 oracle budget exceeded, 5 an ordering check failed.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{self, ConfigError, ScenarioFile};
use crate::error::Error;
use crate::experiments::{run_sweep, write_csv, SweepParam, SweepSpec};
use crate::oracle::brute_force_optimal;
use crate::problems::{check_ordering, solve_case, CaseKind, CaseValues, OrderingReport, Scenario, SolveResult};
use crate::solver::{Diagnostics, SolverConfig};
use crate::tiling::UserId;

pub const EXIT_IO: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_ORACLE_BUDGET: u8 = 4;
pub const EXIT_ORDERING: u8 = 5;

/// Relative slack of the ordering check.
pub const ORDERING_SLACK: f64 = 1e-6;

/// Environment variable that sets the worker count when `--workers` is absent.
pub const WORKERS_ENV: &str = "TILECAST_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "tilecast", version, about = "Energy-minimal multicast of tiled 360 degree video")]
pub struct Cli {
    /// Worker threads; defaults to the machine parallelism.
    #[arg(long, global = true, env = WORKERS_ENV)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve one case on the scenario in the config file.
    Solve {
        #[arg(long)]
        case: CaseKind,
        #[arg(long)]
        config: PathBuf,
        /// Result document; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solver diagnostics with the per-iteration trace.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Solve one case exactly by enumerating every level choice.
    Oracle {
        #[arg(long)]
        case: CaseKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve all four cases and check the orderings between them.
    CheckOrdering {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Oracle)]
        method: Method,
        /// JSON report in addition to the lines on standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean energy of every scheme over random scenarios for each value of one parameter.
    Sweep {
        #[arg(long)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the realization count of the config file.
        #[arg(long)]
        realizations: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Oracle,
    Heuristic,
}

/// A failed command: message for standard error plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: format!("invalid scenario file: {e}"),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::OracleBudget { .. } => EXIT_ORACLE_BUDGET,
            Error::InvalidInput(_) => EXIT_CONFIG,
            _ => EXIT_SOLVER,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

/// Level transmitted for one user of one tile group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub group: Vec<UserId>,
    pub user: UserId,
    pub level: Option<u32>,
}

/// What `solve` and `oracle` write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub scheme: String,
    pub objective: f64,
    pub gap: f64,
    pub levels: Vec<LevelEntry>,
    /// Level choices the oracle enumerated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumerations: Option<u64>,
    pub result: SolveResult,
}

impl ResultDocument {
    pub fn new(result: SolveResult, enumerations: Option<u64>) -> Self {
        Self {
            scheme: result.scheme.clone(),
            objective: result.objective,
            gap: result.diagnostics.gap,
            levels: result
                .levels()
                .into_iter()
                .map(|(group, user, level)| LevelEntry { group, user, level })
                .collect(),
            enumerations,
            result,
        }
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Failure::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Failure::io(path, e))?;
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::io(Path::new("<stdout>"), e))
        }
    }
}

fn json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("result documents serialize");
    v.push(b'\n');
    v
}

fn load(path: &Path) -> Result<(ScenarioFile, SolverConfig), Failure> {
    let file = config::load(path)?;
    let cfg = file.solver_config()?;
    Ok((file, cfg))
}

fn scenario(file: &ScenarioFile) -> Result<Scenario, Failure> {
    Ok(file.scenario()?)
}

#[derive(Serialize)]
struct FailedSolve<'a> {
    error: &'a str,
}

fn solve(case: CaseKind, config_path: &Path, out: Option<&Path>, diagnostics: Option<&Path>) -> Result<(), Failure> {
    let (file, mut cfg) = load(config_path)?;
    let sc = scenario(&file)?;
    cfg.trace = diagnostics.is_some();
    match solve_case(&file.case(case), &sc, &cfg) {
        Ok(res) => {
            if let Some(d) = diagnostics {
                write_atomic(d, &json::<Diagnostics>(&res.diagnostics))?;
            }
            emit(out, &json(&ResultDocument::new(res, None)))
        }
        Err(e) => {
            let failure = Failure::from(e);
            if let Some(d) = diagnostics {
                write_atomic(d, &json(&FailedSolve { error: &failure.message }))?;
            }
            Err(failure)
        }
    }
}

fn oracle(case: CaseKind, config_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let (file, cfg) = load(config_path)?;
    let sc = scenario(&file)?;
    let res = brute_force_optimal(&file.case(case), &sc, &file.oracle_budget(), &cfg)?;
    emit(out, &json(&ResultDocument::new(res.result, Some(res.enumerations))))
}

/// Objectives of the four cases, exact or heuristic, and the relative slack the
/// orderings are checked with. Heuristic values add twice the largest reported gap.
pub fn case_values(file: &ScenarioFile, method: Method) -> Result<(CaseValues, f64), Failure> {
    let (sc, cfg) = (scenario(file)?, file.solver_config()?);
    let budget = file.oracle_budget();
    let mut gap = 0.0f64;
    let mut value = |kind: CaseKind| -> Result<f64, Failure> {
        let case = file.case(kind);
        Ok(match method {
            Method::Oracle => brute_force_optimal(&case, &sc, &budget, &cfg)?.result.objective,
            Method::Heuristic => {
                let res = solve_case(&case, &sc, &cfg)?;
                gap = gap.max(res.diagnostics.gap.max(0.0));
                res.objective
            }
        })
    };
    let values = CaseValues {
        wo_a: value(CaseKind::WoA)?,
        wo_r: value(CaseKind::WoR)?,
        w_a: value(CaseKind::WA)?,
        w_r: value(CaseKind::WR)?,
    };
    Ok((values, ORDERING_SLACK + 2.0 * gap))
}

fn ordering(config_path: &Path, method: Method, out: Option<&Path>) -> Result<(), Failure> {
    let (file, _) = load(config_path)?;
    let (values, slack) = case_values(&file, method)?;
    let report: OrderingReport = check_ordering(&values, 0.0, slack);
    print!("{report}");
    if let Some(p) = out {
        #[derive(Serialize)]
        struct Doc<'a> {
            values: &'a CaseValues,
            report: &'a OrderingReport,
        }
        write_atomic(
            p,
            &json(&Doc {
                values: &values,
                report: &report,
            }),
        )?;
    }
    if report.all_hold() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_ORDERING,
            message: "ordering check failed".into(),
        })
    }
}

fn sweep(param: SweepParam, values: Vec<f64>, config_path: &Path, out: &Path, realizations: Option<usize>) -> Result<(), Failure> {
    let (file, cfg) = load(config_path)?;
    let mut spec = SweepSpec::new(param, values, file.experiment_params()?);
    spec.realizations = realizations.unwrap_or_else(|| file.realizations());
    spec.seed = cfg.seed;
    spec.schemes = file.schemes()?;
    spec.solver = cfg;
    let rows = run_sweep(&spec)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    write_atomic(out, &buf)
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Failure {
                code: EXIT_CONFIG,
                message: "--workers must be at least 1".into(),
            });
        }
        // a second call in the same process keeps the first pool, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Solve {
            case,
            config,
            out,
            diagnostics,
        } => solve(case, &config, out.as_deref(), diagnostics.as_deref()),
        Command::Oracle { case, config, out } => oracle(case, &config, out.as_deref()),
        Command::CheckOrdering { config, method, out } => ordering(&config, method, out.as_deref()),
        Command::Sweep {
            param,
            values,
            config,
            out,
            realizations,
        } => sweep(param, values, &config, &out, realizations),
    }
}
