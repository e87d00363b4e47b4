use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::exit;

use clap::error::ErrorKind;
use clap::Parser;
use crds_core::cli::{run, Cli};
use serde_json::json;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                exit(0);
            }
            let _ = e.print();
            let msg = e.kind().to_string();
            println!("{}", json!({ "ok": false, "error": format!("usage: {msg}") }));
            exit(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let command = cli.command.name();
    match catch_unwind(AssertUnwindSafe(|| run(&cli))) {
        Ok(Ok(mut summary)) => {
            summary["ok"] = json!(true);
            summary["command"] = json!(command);
            println!("{summary}");
        }
        Ok(Err(e)) => {
            log::error!("{e}");
            println!("{}", json!({ "ok": false, "command": command, "error": e.to_string() }));
            exit(e.exit_code());
        }
        Err(_) => {
            println!(
                "{}",
                json!({ "ok": false, "command": command, "error": "internal error" })
            );
            exit(1);
        }
    }
}
