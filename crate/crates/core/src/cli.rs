//! The `georope` command line.
//!
//! Exit codes: 0 on success, 1 when input or arguments fail validation,
//! 2 on internal or I/O failures. Diagnostics go to the error stream.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::Encoder;
use crate::bench::{run_bench, DEFAULT_DIMS, MIN_REPS};
use crate::check::{fidelity_report, run_checks};
use crate::config::{parse_encoder, RunConfig, SCHEMA};
use crate::error::{Error, Result};
use crate::io::{load_checkpoint, load_geotokens, save_checkpoint, write_atomic, write_geotokens_csv};
use crate::tasks::{evaluate, run, EvalReport};

#[derive(Debug, Parser)]
#[command(name = "georope", version, about = "Spherical rotary position encoding for geotokens")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply a position encoder to the features of a geotoken file.
    Encode(EncodeArgs),
    /// Train on a synthetic retrieval task.
    Train(TrainArgs),
    /// Evaluate a checkpoint on held-out task instances.
    Eval(EvalArgs),
    /// Run the invariant suite and print the orthogonality table.
    Check(CheckArgs),
    /// Time dense against block-wise application.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct EncoderArgs {
    /// none | sinusoidal | rope | spherical
    #[arg(long)]
    encoder: Option<String>,
    /// Spherical angle schedule: uniform | multifreq | as-printed
    #[arg(long)]
    mode: Option<String>,
    /// Base for the multifreq schedule
    #[arg(long)]
    base: Option<f64>,
    /// Let trailing coordinates pass through when dim is not a multiple of 3
    #[arg(long)]
    pad: bool,
    /// RoPE angle exponent: odd-offset | canonical
    #[arg(long)]
    rope_exponent: Option<String>,
}

impl EncoderArgs {
    fn is_set(&self) -> bool {
        self.encoder.is_some() || self.mode.is_some() || self.base.is_some() || self.pad || self.rope_exponent.is_some()
    }

    fn build(&self, default: &str) -> Result<Encoder> {
        parse_encoder(
            self.encoder.as_deref().unwrap_or(default),
            self.mode.as_deref().unwrap_or("uniform"),
            self.base.unwrap_or(10_000.0),
            self.pad,
            self.rope_exponent.as_deref().unwrap_or("odd-offset"),
        )
    }
}

#[derive(Debug, Args)]
struct EncodeArgs {
    /// Geotoken file (.csv, or .geojson/.json)
    #[arg(long)]
    input: PathBuf,
    /// Output CSV; standard output when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// Expected feature dimension; must match the file
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    encoder: EncoderArgs,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// TOML run configuration (see --print-schema)
    #[arg(long, required_unless_present = "print_schema")]
    config: Option<PathBuf>,
    /// Print the configuration schema and exit
    #[arg(long)]
    print_schema: bool,
    /// Overrides every seed in the configuration
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Where to write the trained model
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Where to write the per-step loss curve
    #[arg(long)]
    loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also list the implemented notation and convention choices
    #[arg(long)]
    fidelity: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated dimensions, each a multiple of 3
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DIMS)]
    dims: Vec<usize>,
    #[arg(long, default_value_t = MIN_REPS)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; the CSV goes to standard output when omitted
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let result = match cli.command {
        Command::Encode(a) => encode(a, out),
        Command::Train(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Check(a) => check_cmd(a, out),
        Command::Bench(a) => bench_cmd(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn write_or_print(path: Option<&Path>, bytes: &[u8], out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, bytes),
        None => out.write_all(bytes).map_err(|e| Error::io("<stdout>", e)),
    }
}

fn encode(args: EncodeArgs, out: &mut dyn Write) -> Result<i32> {
    let encoder = args.encoder.build("spherical")?;
    let tokens = load_geotokens(&args.input)?;
    let dim = match (tokens.first(), args.dim) {
        (Some(t), Some(d)) if t.dim() != d => {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: t.dim(),
            })
        }
        (Some(t), _) => t.dim(),
        (None, Some(d)) => d,
        (None, None) => 0,
    };
    if dim > 0 || args.dim.is_some() {
        encoder.validate(dim)?;
    }
    let mut features = Vec::with_capacity(tokens.len());
    for t in &tokens {
        let mut x = t.features().to_vec();
        if let Some(offset) = encoder.input_offset(t.position(), dim)? {
            x.iter_mut().zip(&offset).for_each(|(a, b)| *a += b);
        }
        features.push(encoder.rotation(t.position(), dim)?.apply(&x));
    }
    let mut buf = Vec::new();
    write_geotokens_csv(&mut buf, &tokens, &features)?;
    write_or_print(args.output.as_deref(), &buf, out)?;
    Ok(0)
}

fn load_run_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn format_report(report: &EvalReport) -> String {
    let rho = report.spearman.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
    format!(
        "instances {}\naccuracy {:.4}\nspearman {rho}\n",
        report.instances, report.accuracy
    )
}

fn train_cmd(args: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    if args.print_schema {
        emit(out, SCHEMA)?;
        return Ok(0);
    }
    let path = args.config.as_deref().expect("required by clap");
    let mut cfg = load_run_config(path, args.seed)?;
    if let Some(d) = args.dim {
        cfg.model.dim = d;
        cfg.task.shape.dim = d;
    }
    if args.encoder.is_set() {
        let default = cfg.model.encoder.name();
        cfg.set_encoder(args.encoder.build(default)?)?;
    }
    cfg.model.validate()?;
    let result = run(&cfg.model, &cfg.task, &cfg.train)?;
    if let Some(p) = &args.checkpoint {
        save_checkpoint(&result.model, p)?;
    }
    if let Some(p) = &args.loss_csv {
        let mut csv = String::from("step,loss\n");
        for (i, l) in result.loss_curve.iter().enumerate() {
            csv.push_str(&format!("{i},{l:?}\n"));
        }
        write_atomic(p, csv.as_bytes())?;
    }
    let last = result.loss_curve.last().copied().unwrap_or(f64::NAN);
    emit(
        out,
        &format!(
            "encoder {}\nsteps {}\nfinal loss {last:.6}\n{}",
            cfg.model.encoder.name(),
            result.loss_curve.len(),
            format_report(&result.report)
        ),
    )?;
    Ok(0)
}

fn eval_cmd(args: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_run_config(&args.config, args.seed)?;
    let model = load_checkpoint(&args.checkpoint)?;
    if model.config().dim != cfg.task.shape.dim {
        return Err(Error::DimensionMismatch {
            expected: model.config().dim,
            actual: cfg.task.shape.dim,
        });
    }
    let report = evaluate(&model, &cfg.task.eval_data()?)?;
    emit(out, &format!("encoder {}\n{}", model.config().encoder.name(), format_report(&report)))?;
    Ok(0)
}

fn check_cmd(args: CheckArgs, out: &mut dyn Write) -> Result<i32> {
    let report = run_checks(args.seed)?;
    let mut text = report.render_checks();
    text.push('\n');
    let fidelity = fidelity_report()?;
    let table = fidelity.render();
    if args.fidelity {
        text.push_str(&table);
    } else {
        // the table without the conventions list
        let end = table.find("\nimplemented conventions").unwrap_or(table.len());
        text.push_str(&table[..end]);
        text.push('\n');
    }
    emit(out, &text)?;
    Ok(if report.all_passed() { 0 } else { 1 })
}

fn bench_cmd(args: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    let result = run_bench(&args.dims, args.reps, args.seed)?;
    match &args.output {
        Some(p) => {
            write_atomic(p, result.to_csv().as_bytes())?;
            emit(out, &result.summary())?;
        }
        None => emit(out, &format!("{}\n{}", result.to_csv(), result.summary()))?,
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = dispatch(std::iter::once("georope").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_subcommand_is_validation_error() {
        assert_eq!(call(&["frobnicate"]).0, 1);
        assert_eq!(call(&[]).0, 1);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = call(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("encode"));
    }

    #[test]
    fn print_schema() {
        let (code, out, _) = call(&["train", "--print-schema"]);
        assert_eq!(code, 0);
        assert_eq!(out, SCHEMA);
    }

    #[test]
    fn missing_input_is_io_error() {
        let (code, _, err) = call(&["encode", "--input", "/nonexistent/tokens.csv"]);
        assert_eq!(code, 2);
        assert!(err.contains("/nonexistent/tokens.csv"));
    }

    #[test]
    fn bench_rejects_bad_dims() {
        let (code, _, err) = call(&["bench", "--dims", "48,50"]);
        assert_eq!(code, 1);
        assert!(err.contains("multiple of 3"), "{err}");
    }
}
