use clap::Parser;

fn main() {
    let cli = anisodiff::cli::Cli::parse();
    if let Err(e) = anisodiff::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
