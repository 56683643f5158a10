mod args;
mod commands;
mod config;
mod report;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    let json = cli.json;
    let code = match commands::run(cli) {
        Ok(out) => {
            report::render_output(&out, json);
            out.exit_code
        }
        Err(e) => {
            report::render_error(&e, json);
            e.exit_code
        }
    };
    ExitCode::from(code as u8)
}
