mod args;
mod commands;
mod config;
mod presets;

use std::process::ExitCode;

use clap::Parser;
use ogcp_core::GcpError;

use crate::args::{Cli, Command};

fn exit_code(e: &GcpError) -> u8 {
    match e {
        _ if e.is_divergence() => 4,
        GcpError::Precondition(_) => 2,
        GcpError::AtSlice { source, .. } => exit_code(source),
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Stream(a) => config::resolve_stream(a).and_then(|run| commands::stream(&run, a.exec.show_config)),
        Command::Static(a) => config::resolve_static(a).and_then(|run| commands::static_fit(&run, a.exec.show_config)),
        Command::Gen(a) => commands::gen(a),
        Command::Score(a) => commands::score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(exit_code(&e))
        }
    }
}
