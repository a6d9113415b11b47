use clap::Parser;

use sceneformer_cli::commands::{error_kind, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        let line = serde_json::json!({ "error": format!("{e:#}"), "kind": error_kind(&e) });
        eprintln!("{line}");
        std::process::exit(1);
    }
}
