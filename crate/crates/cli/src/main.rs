mod commands;
mod config;
mod error;
mod svg;

use std::env;
use std::panic;
use std::path::Path;
use std::process::ExitCode;

use config::{RunConfig, KEYS};
use error::{CliError, CliResult};

const THREADS_ENV: &str = "CONFORMAL_TS_THREADS";
const SUBCOMMANDS: [&str; 5] = ["synth", "fit", "calibrate", "report", "ablate"];

fn usage() -> String {
    let mut s = String::from(
        "usage: conformal-ts <synth|fit|calibrate|report|ablate> [--config FILE] [--KEY VALUE]...\n\nkeys:\n",
    );
    for (k, d, help) in KEYS {
        s.push_str(&format!("  {k:<16} {help} (default {d:?})\n"));
    }
    s
}

fn parse_args(args: &[String]) -> CliResult<(String, RunConfig)> {
    let cmd = args
        .first()
        .ok_or_else(|| CliError::Usage("missing subcommand".into()))?
        .clone();
    if !SUBCOMMANDS.contains(&cmd.as_str()) {
        return Err(CliError::Usage(format!("unknown subcommand {cmd:?}")));
    }
    // The config file is applied first so command-line keys always win.
    let mut overrides = Vec::new();
    let mut config_file = None;
    let mut rest = args[1..].iter();
    while let Some(arg) = rest.next() {
        let key = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("unexpected argument {arg:?}")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        if key == "config" {
            config_file = Some(value);
        } else {
            overrides.push((key, value));
        }
    }
    let mut cfg = RunConfig::default();
    if let Some(f) = config_file {
        cfg.apply_file(Path::new(&f))?;
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    Ok((cmd, cfg))
}

fn run(args: &[String]) -> CliResult<()> {
    let (cmd, cfg) = parse_args(args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = env::var(THREADS_ENV) {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))
        })?;
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match cmd.as_str() {
        "synth" => commands::synth(&cfg),
        "fit" => commands::fit(&cfg),
        "calibrate" => commands::calibrate(&cfg),
        "report" => commands::report(&cfg),
        "ablate" => commands::ablate(&cfg),
        _ => unreachable!("validated in parse_args"),
    })
}

fn main() -> ExitCode {
    let args: Vec<String> = env::args().skip(1).collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", usage());
        return ExitCode::from(if args.is_empty() { 1 } else { 0 });
    }
    let result = panic::catch_unwind(|| run(&args));
    match result {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run with --help for the list of keys");
            }
            ExitCode::from(e.exit_code() as u8)
        }
        Err(_) => {
            eprintln!("error: internal failure (worker panicked)");
            ExitCode::from(3)
        }
    }
}
