//! `magflow` command line.
//!
//! Every subcommand builds one experiment and runs it through the same code
//! path as a suite entry, so `magflow green --s 1 ...` and a `[[experiment]]`
//! of kind `green` produce the same record.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use magflow::geometry::{BackendName, ModelConfig, ModelName};
use magflow::report::{self, Experiment, ExperimentKind, ExperimentRecord, Suite};
use magflow::MagflowError;

const USAGE: u8 = 1;
const NUMERICAL: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "magflow", version, about = "Magnetic geodesic flows, curvature and Green bundles")]
struct Cli {
    /// Model definition in TOML; overrides --model and friends.
    #[arg(long, global = true)]
    model_file: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Also write `<id>.json`, `<id>.meta.json` and `<id>.csv` here.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ModelArgs {
    /// torus | sphere | disk | chn
    #[arg(long)]
    model: Option<String>,
    /// Surface field strength b(x, y).
    #[arg(long, allow_hyphen_values = true)]
    b: Option<String>,
    /// Kähler coupling on chn.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Curvature of disk or chn.
    #[arg(long, allow_hyphen_values = true)]
    k: Option<f64>,
    /// Conformal exponent φ of the torus metric e^{2φ}(dx² + dy²).
    #[arg(long, allow_hyphen_values = true)]
    phi: Option<String>,
    #[arg(long)]
    complex_dim: Option<usize>,
    /// Use finite differences instead of exact derivatives.
    #[arg(long)]
    finite_difference: bool,
}

#[derive(Args, Debug)]
struct OrbitArgs {
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    /// Base point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Initial direction, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    dir: Option<Vec<f64>>,
    #[arg(long, default_value_t = magflow::flow::DEFAULT_TOL)]
    tol: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Magnetic sectional and Ricci curvature samples.
    Curvature {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Integrate one orbit; CSV of t, x, v and speed drift on stdout.
    Flow {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value_t = 10.0)]
        t_span: f64,
        #[arg(long, default_value_t = 200)]
        rows: usize,
    },
    /// Residual of the reduced Jacobi equation on random normal fields.
    Jacobi {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 20)]
        fields: usize,
        #[arg(long, default_value_t = 10.0)]
        t_span: f64,
        #[arg(long, default_value_t = magflow::flow::DEFAULT_TOL)]
        tol: f64,
    },
    /// Conjugate points along one orbit or a sample of orbits.
    Conjugate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value_t = 10.0)]
        t_max: f64,
        /// Search this many random orbits instead of the given one.
        #[arg(long)]
        orbits: Option<usize>,
    },
    /// Green bundles S± along one orbit.
    Green {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        orbit: OrbitArgs,
        #[arg(long, default_value_t = 16.0)]
        t_max: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol_conv: f64,
    },
    /// Riccati comparison bounds and growth rates on sampled orbits.
    Anosov {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 20)]
        orbits: usize,
        #[arg(long, default_value_t = 20.0)]
        t: f64,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
    },
    /// Liouville averages over the unit sphere bundle of a compact model.
    HopfIntegral {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1.0)]
        s: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// ric | trace-r | gauss-bonnet
        #[arg(long, default_value = "ric")]
        quantity: String,
    },
    /// Mañé critical value of the Kähler system on the complex hyperbolic ball.
    Mane {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        k: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Run every experiment of a TOML suite.
    Suite { file: PathBuf },
}

fn usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("magflow: {msg}");
    ExitCode::from(USAGE)
}

fn model_config(file: &Option<PathBuf>, args: &ModelArgs) -> Result<ModelConfig, MagflowError> {
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| MagflowError::Io(format!("{}: {e}", path.display())))?;
        return ModelConfig::from_toml(&text);
    }
    let name = args
        .model
        .as_deref()
        .ok_or_else(|| MagflowError::Contract("give --model or --model-file".into()))?;
    let model: ModelName = toml::Value::String(name.to_string())
        .try_into()
        .map_err(|_| MagflowError::Unsupported(format!("unknown model '{name}'")))?;
    Ok(ModelConfig {
        curvature_k: args.k,
        b_expr: args.b.clone(),
        lambda: args.lambda,
        conformal_expr: args.phi.clone(),
        complex_dim: args.complex_dim,
        backend: if args.finite_difference {
            BackendName::FiniteDifference
        } else {
            BackendName::Analytic
        },
        ..ModelConfig::new(model)
    })
}

fn with_orbit(e: Experiment, o: &OrbitArgs) -> Experiment {
    let mut e = e.with_param("s", o.s).with_param("tol", o.tol);
    if let Some(x) = &o.x {
        e = e.with_param("x", x.clone());
    }
    if let Some(d) = &o.dir {
        e = e.with_param("dir", d.clone());
    }
    e
}

fn experiment(cli: &Cli) -> Result<Experiment, MagflowError> {
    let m = |args: &ModelArgs| model_config(&cli.model_file, args);
    let e = match &cli.command {
        Command::Curvature { model, s, samples } => Experiment::new("curvature", ExperimentKind::Curvature)
            .with_model(&m(model)?)
            .with_param("s", *s)
            .with_param("samples", *samples as i64),
        Command::Flow {
            model,
            orbit,
            t_span,
            rows,
        } => with_orbit(Experiment::new("flow", ExperimentKind::Flow).with_model(&m(model)?), orbit)
            .with_param("t_end", *t_span)
            .with_param("samples", *rows as i64),
        Command::Jacobi {
            model,
            s,
            fields,
            t_span,
            tol,
        } => Experiment::new("jacobi", ExperimentKind::Jacobi)
            .with_model(&m(model)?)
            .with_param("s", *s)
            .with_param("fields", *fields as i64)
            .with_param("t_end", *t_span)
            .with_param("tol", *tol),
        Command::Conjugate {
            model,
            orbit,
            t_max,
            orbits,
        } => {
            let e = with_orbit(Experiment::new("conjugate", ExperimentKind::Conjugate).with_model(&m(model)?), orbit)
                .with_param("t_max", *t_max);
            match orbits {
                Some(k) => e.with_param("orbits", *k as i64),
                None => e,
            }
        }
        Command::Green {
            model,
            orbit,
            t_max,
            tol_conv,
        } => with_orbit(Experiment::new("green", ExperimentKind::Green).with_model(&m(model)?), orbit)
            .with_param("t_max", *t_max)
            .with_param("tol_conv", *tol_conv),
        Command::Anosov {
            model,
            s,
            orbits,
            t,
            samples,
        } => Experiment::new("anosov", ExperimentKind::Anosov)
            .with_model(&m(model)?)
            .with_param("s", *s)
            .with_param("orbits", *orbits as i64)
            .with_param("t", *t)
            .with_param("samples", *samples as i64),
        Command::HopfIntegral {
            model,
            s,
            samples,
            quantity,
        } => Experiment::new("hopf-integral", ExperimentKind::HopfIntegral)
            .with_model(&m(model)?)
            .with_param("s", *s)
            .with_param("samples", *samples as i64)
            .with_param("quantity", quantity.as_str()),
        Command::Mane { k, lambda, tol } => Experiment::new("mane", ExperimentKind::Mane)
            .with_param("k", *k)
            .with_param("lambda", *lambda)
            .with_param("tol", *tol),
        Command::Suite { .. } => unreachable!("suites are run separately"),
    };
    Ok(e)
}

/// Prints a line, ignoring a closed pipe on the reading side.
fn emit(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_out(dir: &Option<PathBuf>, record: &ExperimentRecord) -> Result<(), MagflowError> {
    match dir {
        Some(d) => report::write_record(record, d),
        None => Ok(()),
    }
}

fn run_one(cli: &Cli) -> ExitCode {
    let exp = match experiment(cli) {
        Ok(e) => e,
        Err(e) => return usage(e),
    };
    let record = report::run_experiment(&exp, cli.seed);
    if let Err(e) = write_out(&cli.out_dir, &record) {
        return usage(e);
    }
    if let Some(err) = &record.error {
        eprintln!("magflow: {}", err.message);
        return ExitCode::from(if err.usage { USAGE } else { NUMERICAL });
    }
    match (&cli.command, &record.table) {
        (Command::Flow { .. }, Some(_)) => {
            // a closed pipe is not an error worth reporting
            let _ = report::write_csv(&record, std::io::stdout().lock());
        }
        _ => emit(&serde_json::to_string_pretty(&record.outputs).expect("outputs serialize")),
    }
    ExitCode::SUCCESS
}

fn run_suite(cli: &Cli, file: &Path) -> ExitCode {
    let text = match std::fs::read_to_string(file) {
        Ok(t) => t,
        Err(e) => return usage(format!("{}: {e}", file.display())),
    };
    let suite = match Suite::parse(&text) {
        Ok(s) => s,
        Err(e) => return usage(format!("{}: {e}", file.display())),
    };
    let out = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("results"));
    for record in report::run_suite(&suite) {
        if let Err(e) = report::write_record(&record, &out) {
            return usage(e);
        }
        let status = match &record.error {
            None => "ok".to_string(),
            Some(e) => format!("error ({}): {}", e.kind, e.message),
        };
        emit(&format!("{:<24} {:<14} {status}", record.id, record.kind));
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            return usage("--workers must be at least 1");
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return usage(e);
        }
    }
    match &cli.command {
        Command::Suite { file } => run_suite(&cli, file),
        _ => run_one(&cli),
    }
}
