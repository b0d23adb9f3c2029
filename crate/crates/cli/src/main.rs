mod cli;
mod commands;
mod config;
mod error;
mod files;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::cli::{Cli, Command};
use crate::commands::Context;
use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

fn main() -> ExitCode {
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(cli, argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Drops `--out X` / `--out=X` from recorded arguments.
fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

fn dispatch(cli: Cli, argv: Vec<OsString>) -> CliResult<()> {
    let Some(path) = cli.from_manifest.clone() else {
        return run(cli, argv.iter().map(|a| a.to_string_lossy().into_owned()).collect());
    };
    let manifest = RunManifest::load(&path)?;
    manifest.verify_inputs()?;
    let mut args = manifest.argv.clone();
    if let Some(out) = &cli.out {
        args = strip_out(&args);
        args.push("--out".into());
        args.push(files::absolute(out).to_string_lossy().into_owned());
    }
    let replay = Cli::try_parse_from(&args).map_err(|e| CliError::Usage(format!("recorded arguments: {e}")))?;
    if replay.from_manifest.is_some() {
        return Err(CliError::Usage("recorded arguments refer to another manifest".into()));
    }
    std::env::set_current_dir(&manifest.cwd).map_err(CliError::io(&manifest.cwd))?;
    log::info!("replaying `{}` from {}", manifest.command, path.display());
    run(replay, args)
}

fn run(cli: Cli, argv: Vec<String>) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let command = cli.command.ok_or_else(|| CliError::Usage("no command given; see --help".into()))?;
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let deterministic = cli.deterministic || file.deterministic.unwrap_or(false);
    let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let cwd = std::env::current_dir().map_err(CliError::io("."))?;
    let ctx = Context { seed: cli.seed.or(file.seed).unwrap_or(0), parallel: !deterministic, file, out, argv, cwd };
    match &command {
        Command::Ingest(a) => commands::ingest(&ctx, a),
        Command::Split(a) => commands::split(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Embed(a) => commands::embed(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Bench(a) => commands::bench(&ctx, a),
    }
}
