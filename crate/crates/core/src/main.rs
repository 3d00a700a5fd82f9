use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qar::analysis::{carnot_cop, convergence_sweep, cooling_window, scan_grid, solve_point, Method};
use qar::config::{apply_grid_spec, parse_range, RunConfig};
use qar::QarError;

const EXIT_CONFIG: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Parser)]
#[command(name = "qar", version, about = "Heat currents of a three-level absorption refrigerator at arbitrary coupling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bmr,
    Rc,
    Eff,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Bmr => Method::Bmr,
            MethodArg::Rc => Method::Rc,
            MethodArg::Eff => Method::Eff,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Oscillator levels per reaction coordinate.
    #[arg(long)]
    m: Option<usize>,
    /// Reaction-coordinate frequency of both mapped baths.
    #[arg(long)]
    omega: Option<f64>,
    /// Energy gap ε2 − ε1.
    #[arg(long)]
    delta: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one point and print currents, COP and region.
    SteadyState {
        #[arg(long, value_enum, default_value = "rc")]
        method: MethodArg,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Scan a (λ, Δ) grid and write CSV.
    Scan {
        #[arg(long, value_enum, default_value = "rc")]
        method: MethodArg,
        /// Grid override, e.g. `lambda=0.05:12:60,delta=0.02:0.98:49`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Cooling current against the RC truncation; writes CSV.
    Converge {
        /// Comma-separated truncations, e.g. `2,4,6`.
        #[arg(long)]
        m_list: Option<String>,
        /// λ range `start:stop:steps` or a single value.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Effective-model cooling predicate along λ; writes CSV.
    Window {
        /// λ range `start:stop:steps` or a single value.
        #[arg(long)]
        lambda: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Solver(String),
}

impl From<QarError> for Failure {
    fn from(e: QarError) -> Self {
        match e {
            QarError::Config(_) | QarError::InvalidParameter(_) | QarError::Io(_) => Failure::Config(e.to_string()),
            other => Failure::Solver(other.to_string()),
        }
    }
}

fn config_error(e: impl ToString) -> Failure {
    Failure::Config(e.to_string())
}

fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(m) = common.m {
        cfg.qar.truncation = m;
    }
    if let Some(omega) = common.omega {
        cfg.qar = cfg.qar.with_rc_frequency(omega);
    }
    if let Some(delta) = common.delta {
        cfg.qar = cfg.qar.with_gap(delta).map_err(config_error)?;
    }
    cfg.qar.validate().map_err(config_error)?;
    Ok(cfg)
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| config_error(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6e}")).unwrap_or_else(|| "undefined".into())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::SteadyState { method, lambda, common } => {
            let cfg = load(&common)?;
            let qar = cfg.qar.clone().with_coupling(lambda);
            let p = solve_point(method.into(), &qar, &cfg.solver)?;
            let (bc, bh, bw) = qar.betas();
            println!("method    {}", Method::from(method));
            println!("lambda    {lambda}");
            println!("delta     {}", qar.levels.gap());
            if let Some(m) = p.truncation {
                println!("M         {m}");
            }
            println!("j_c       {:.12e}", p.j_c);
            println!("j_h       {:.12e}", p.j_h);
            println!("j_w       {:.12e}", p.j_w);
            println!("COP       {}", fmt_opt(p.cop));
            println!("carnot    {:.6}", carnot_cop(bc, bh, bw));
            println!("region    {}", p.region);
            println!("residual  {:.3e}", p.residual);
            println!("positive  {}", p.positivity_ok);
        }
        Command::Scan { method, grid, out, common } => {
            let mut cfg = load(&common)?;
            if let Some(spec) = grid {
                apply_grid_spec(&mut cfg, &spec)?;
            }
            let table = scan_grid(method.into(), &cfg.lambdas, &cfg.deltas, &cfg.qar, &cfg.solver)?;
            let failures = table.failures();
            if failures > 0 {
                eprintln!("warning: {failures} of {} points failed", table.rows.len());
            }
            table.write_csv(output(&out)?).map_err(config_error)?;
        }
        Command::Converge { m_list, lambda, out, common } => {
            let mut cfg = load(&common)?;
            if let Some(list) = m_list {
                cfg.m_list = list
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| config_error(format!("bad M list '{list}'")))?;
            }
            if let Some(spec) = lambda {
                cfg.lambdas = parse_range(&spec)?;
            }
            let table = convergence_sweep(&cfg.m_list, &cfg.qar, &cfg.lambdas, &cfg.solver)?;
            table.write_csv(output(&out)?).map_err(config_error)?;
        }
        Command::Window { lambda, out, common } => {
            let mut cfg = load(&common)?;
            if let Some(spec) = lambda {
                cfg.lambdas = parse_range(&spec)?;
            }
            let table = cooling_window(&cfg.qar, &cfg.lambdas)?;
            table.write_csv(output(&out)?).map_err(config_error)?;
        }
    }
    Ok(())
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Solver(_) => EXIT_SOLVER,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Solver(m) => m,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use std::fs;

    use qar::analysis::{CONVERGENCE_HEADER, CSV_HEADER, WINDOW_HEADER};

    use super::*;

    fn cli(args: &[&str]) -> Result<(), Failure> {
        let cli = Cli::try_parse_from(std::iter::once("qar").chain(args.iter().copied())).expect("valid arguments");
        run(cli)
    }

    fn code(args: &[&str]) -> u8 {
        cli(args).err().map_or(0, |f| f.exit_code())
    }

    #[test]
    fn steady_state_succeeds() {
        assert_eq!(code(&["steady-state", "--method", "bmr", "--lambda", "1", "--delta", "0.2"]), 0);
    }

    #[test]
    fn scan_writes_csv_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scan.csv");
        let out = path.to_str().unwrap();
        cli(&["scan", "--method", "rc", "--m", "3", "--grid", "lambda=0.5:2:2,delta=0.2:0.6:3", "--out", out])
            .map_err(|f| f.message().to_string())
            .unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 1 + 2 * 3);
        for line in &lines[1..] {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields.len(), 11);
            assert_eq!(&fields[2..4], ["rc", "3"]);
            assert_eq!(fields[10], "true");
        }
    }

    #[test]
    fn bmr_scan_leaves_truncation_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bmr.csv");
        assert_eq!(code(&["scan", "--method", "bmr", "--grid", "lambda=1,delta=0.3", "--out", path.to_str().unwrap()]), 0);
        let text = fs::read_to_string(&path).unwrap();
        let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
        assert_eq!(&row[2..4], ["bmr", ""]);
    }

    #[test]
    fn converge_and_window_headers() {
        let dir = tempfile::tempdir().unwrap();
        let conv = dir.path().join("conv.csv");
        assert_eq!(code(&["converge", "--m-list", "2,3", "--lambda", "0.5:1:2", "--out", conv.to_str().unwrap()]), 0);
        let text = fs::read_to_string(&conv).unwrap();
        assert_eq!(text.lines().next(), Some(CONVERGENCE_HEADER));
        assert_eq!(text.lines().count(), 1 + 2 * 2);

        let win = dir.path().join("win.csv");
        assert_eq!(code(&["window", "--lambda", "1:9:3", "--delta", "0.6", "--out", win.to_str().unwrap()]), 0);
        let text = fs::read_to_string(&win).unwrap();
        assert_eq!(text.lines().next(), Some(WINDOW_HEADER));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn config_file_is_applied() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(
            &cfg,
            "[system]\ndelta = 0.6\n\n[grid]\nlambda = { start = 1.0, stop = 2.0, steps = 2 }\ndelta = { start = 0.6, stop = 0.6, steps = 1 }\n",
        )
        .unwrap();
        let out = dir.path().join("scan.csv");
        assert_eq!(code(&["scan", "--method", "bmr", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);
        let text = fs::read_to_string(&out).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().skip(1).all(|l| l.split(',').nth(8) == Some("R1")));
    }

    #[test]
    fn invalid_input_maps_to_config_code() {
        assert_eq!(code(&["steady-state", "--delta", "1.5"]), EXIT_CONFIG);
        assert_eq!(code(&["steady-state", "--method", "rc", "--lambda", "0"]), EXIT_CONFIG);
        assert_eq!(code(&["converge", "--m-list", "2,9"]), EXIT_CONFIG);
        assert_eq!(code(&["scan", "--grid", "lambda=2:1:3"]), EXIT_CONFIG);

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.toml");
        fs::write(&bad, "[system]\nfoo = 1\n").unwrap();
        assert_eq!(code(&["steady-state", "--config", bad.to_str().unwrap()]), EXIT_CONFIG);
        let missing = dir.path().join("missing.toml");
        assert_eq!(code(&["steady-state", "--config", missing.to_str().unwrap()]), EXIT_CONFIG);
        let out = dir.path().join("no/such/dir.csv");
        assert_eq!(code(&["scan", "--method", "bmr", "--grid", "lambda=1,delta=0.3", "--out", out.to_str().unwrap()]), EXIT_CONFIG);
    }

    #[test]
    fn degenerate_steady_state_maps_to_solver_code() {
        let err = cli(&["steady-state", "--method", "bmr", "--lambda", "0"]).err().unwrap();
        assert_eq!(err.exit_code(), EXIT_SOLVER);
        assert!(err.message().contains("not unique"));
    }
}
