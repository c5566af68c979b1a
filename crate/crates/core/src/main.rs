use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::DVector;

use khessian::harness::verify::{run_verify, Kernels, Suite};
use khessian::harness::{
    self, parse_config, registry, run_solve, BodySpec, EXIT_CONFIG, EXIT_INVARIANT, EXIT_OK,
};
use khessian::rotations::{envelope_terms, field_eval, make_field};

#[derive(Parser)]
#[command(name = "khessian", version, about = "k-Hessian second boundary value problems")]
struct Cli {
    /// Seed for every randomized sweep.
    #[arg(long, global = true, default_value_t = 20260101)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write report.json and grid.csv.
    Solve {
        #[arg(long, conflicts_with = "instance", required_unless_present = "instance")]
        config: Option<PathBuf>,
        /// A registered instance instead of a config file.
        #[arg(long)]
        instance: Option<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run invariant suites and print a JSON pass/fail report.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Dump a rotation field on a grid over the body's bounding box.
    Field {
        #[arg(long, value_delimiter = ',', required = true)]
        y0: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        xi: Vec<f64>,
        /// Body spec as JSON, e.g. '{"kind":"ball","center":[0,0],"radius":0.5}'.
        #[arg(long)]
        body: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 41)]
        n: usize,
    },
    /// List registered instances.
    List,
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn fail(c: i32, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    code(c)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve { config, instance, out } => {
            let cfg = match (config, instance) {
                (Some(path), _) => match fs::read_to_string(&path) {
                    Ok(text) => parse_config(&text),
                    Err(e) => return fail(EXIT_CONFIG, format!("{}: {e}", path.display())),
                },
                (None, Some(name)) => harness::instance(&name)
                    .ok_or_else(|| khessian::error::Error::Config(format!("instance: unknown instance '{name}'"))),
                (None, None) => unreachable!("clap requires one of --config and --instance"),
            };
            let cfg = match cfg {
                Ok(c) => c,
                Err(e) => return fail(harness::exit_code(&e), e),
            };
            match run_solve(&cfg, &out) {
                Ok(outcome) => {
                    println!("{}", outcome.report.to_json());
                    if let Some(m) = &outcome.message {
                        eprintln!("error: {m}");
                    }
                    code(outcome.exit_code)
                }
                Err(e) => fail(harness::exit_code(&e), e),
            }
        }
        Command::Verify { suite } => {
            let suite: Suite = match suite.parse() {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let report = run_verify(suite, cli.seed, &Kernels::default());
            println!("{}", report.to_json());
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("FAIL {}::{} measured {} ({}) {}", c.suite, c.name, c.measured, c.threshold, c.detail);
            }
            code(if report.passed { EXIT_OK } else { EXIT_INVARIANT })
        }
        Command::Field { y0, xi, body, out, n } => match dump_field(&y0, &xi, &body, &out, n) {
            Ok(()) => code(EXIT_OK),
            Err(e) => fail(harness::exit_code(&e), e),
        },
        Command::List => {
            for inst in registry() {
                println!("{:<26} {}", inst.name, inst.description);
            }
            code(EXIT_OK)
        }
    }
}

fn dump_field(y0: &[f64], xi: &[f64], body: &str, out: &PathBuf, n: usize) -> khessian::error::Result<()> {
    use khessian::error::Error;
    if y0.len() != 2 || xi.len() != 2 {
        return Err(Error::Config("field: --y0 and --xi take two comma-separated numbers".into()));
    }
    let spec: BodySpec = serde_json::from_str(body).map_err(|e| Error::Config(format!("body: {e}")))?;
    let body = spec.build()?;
    let (y0, xi) = (DVector::from_column_slice(y0), DVector::from_column_slice(xi));
    let field = make_field(&y0, &(&xi / xi.norm()), &body)?;
    let r = body.bounding_radius();
    let c = &body.center;
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Io(e.to_string()))?;
    w.write_record(["y1", "y2", "t1", "t2", "sphere_norm_sq", "inside"]).map_err(|e| Error::Io(e.to_string()))?;
    let n = n.max(2);
    for j in 0..n {
        for i in 0..n {
            let y = DVector::from_vec(vec![
                c[0] - r + 2.0 * r * i as f64 / (n - 1) as f64,
                c[1] - r + 2.0 * r * j as f64 / (n - 1) as f64,
            ]);
            let t = field_eval(&field, &y);
            let e = envelope_terms(&field, &y);
            let inside = if body.contains(&y) { "1" } else { "0" };
            w.write_record([
                format!("{:.16e}", y[0]),
                format!("{:.16e}", y[1]),
                format!("{:.16e}", t[0]),
                format!("{:.16e}", t[1]),
                format!("{:.16e}", e.sphere_norm_sq),
                inside.to_string(),
            ])
            .map_err(|e| Error::Io(e.to_string()))?;
        }
    }
    w.flush()?;
    Ok(())
}
