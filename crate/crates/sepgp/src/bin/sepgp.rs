use clap::Parser;

fn main() {
    let cli = sepgp::cli::Cli::parse();
    if let Err(e) = sepgp::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
