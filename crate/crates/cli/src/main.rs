//! `llp`: command-line front end for the LLP pseudo-labelling pipeline.

mod args;
mod commands;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use llp_core::LlpError;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error: kind=usage message={first}");
            return ExitCode::from(2);
        }
    };

    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: kind=usage message=cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }

    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Bags(a) => commands::bags(a),
        Command::Bp(a) => commands::bp(a),
        Command::Pipeline(a) => commands::pipeline(a),
        Command::Dllp(a) => commands::dllp(a),
        Command::Stability(a) => commands::stability(a),
        Command::Eval(a) => commands::eval(a),
        Command::Grid(a) => commands::grid(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<LlpError>())
                .map_or("other", LlpError::kind);
            // library errors already embed their source text; skip repeats
            let mut parts: Vec<String> = Vec::new();
            for cause in e.chain() {
                let text = cause.to_string();
                if !parts.last().is_some_and(|p| p.contains(&text)) {
                    parts.push(text);
                }
            }
            let message = parts.join(": ").replace('\n', " ");
            eprintln!("error: kind={kind} message={message}");
            ExitCode::FAILURE
        }
    }
}
