//! The `memtrace` command line: argument parsing, config resolution and
//! one handler per subcommand.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::ffi::OsString;

use clap::Parser;

pub use args::Cli;
pub use config::RunConfig;

/// Parses `argv`, runs the command and returns the process exit code.
/// Failures go to stderr as one line of JSON.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({"error": {"code": "usage", "message": first}}));
            return 2;
        }
    };
    let result = RunConfig::resolve(&cli.global).and_then(|cfg| commands::run(&cli.command, &cfg));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error::error_json(&e));
            1
        }
    }
}
