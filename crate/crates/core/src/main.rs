use clap::Parser;

fn main() {
    let cli = brcd::cli::Cli::parse();
    if let Err(e) = brcd::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
