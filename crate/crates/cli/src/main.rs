use clap::Parser;
use qscm_cli::commands::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("qscm: {e}");
        std::process::exit(e.exit_code());
    }
}
