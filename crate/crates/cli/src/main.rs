mod args;
mod commands;
mod error;
mod output;

use std::path::Path;

use clap::{CommandFactory, FromArgMatches};
use qrcov::SolverConfig;

use args::{Cli, Command};
use error::CliError;

const SUBCOMMANDS: [&str; 9] = [
    "fit",
    "calibrate-level",
    "calibrate-additive",
    "dual-threshold",
    "conformal",
    "cqr",
    "simulate",
    "asymptotics",
    "evaluate",
];

/// Pulls `--config path` out of argv and splices its key=value pairs in
/// right after the subcommand, so flags typed later override them.
fn expand_config(mut argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    let mut i = 1;
    while i < argv.len() {
        if argv[i] == "--config" && i + 1 < argv.len() {
            path = Some(argv.remove(i + 1));
            argv.remove(i);
        } else if let Some(p) = argv[i].strip_prefix("--config=") {
            path = Some(p.to_string());
            argv.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = path else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {path}: {e}")))?;
    let mut extra = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("{path}:{}: expected key=value", k + 1)))?;
        extra.push(format!("--{}", key.trim().trim_start_matches("--")));
        extra.push(value.trim().to_string());
    }
    let at = argv
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.as_str()))
        .map_or(argv.len(), |p| p + 1);
    argv.splice(at..at, extra);
    Ok(argv)
}

fn parse(argv: Vec<String>) -> Result<Cli, clap::Error> {
    let mut cmd = Cli::command().args_override_self(true);
    for name in SUBCOMMANDS {
        cmd = cmd.mut_subcommand(name, |s| s.args_override_self(true));
    }
    let matches = cmd.try_get_matches_from(argv)?;
    Cli::from_arg_matches(&matches)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let solver = SolverConfig::default();
    let out = match &cli.command {
        Command::Fit(a) => commands::fit_cmd(a, &solver),
        Command::CalibrateLevel(a) => commands::calibrate_level_cmd(a, &solver),
        Command::CalibrateAdditive(a) => commands::calibrate_additive_cmd(a, &solver),
        Command::DualThreshold(a) => commands::dual_threshold_cmd(a, &solver),
        Command::Conformal(a) => commands::conformal_cmd(a, &solver),
        Command::Cqr(a) => commands::cqr_cmd(a, &solver),
        Command::Simulate(a) => commands::simulate_cmd(a, &solver),
        Command::Asymptotics(a) => commands::asymptotics_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &solver),
    }?;
    out.emit(cli.out.as_deref().map(Path::new))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            e.report();
            std::process::exit(e.exit_code());
        }
    };
    let cli = match parse(argv) {
        Ok(c) => c,
        // help and version exit 0, usage errors exit 2
        Err(e) => e.exit(),
    };
    if let Err(e) = run(&cli) {
        e.report();
        std::process::exit(e.exit_code());
    }
}
