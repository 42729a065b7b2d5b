use clap::Parser;
use qisac_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = qisac_cli::run(&cli) {
        eprintln!("qisac: {e}");
        std::process::exit(e.exit_code());
    }
}
