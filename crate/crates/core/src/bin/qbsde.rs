use clap::Parser;

fn main() {
    std::process::exit(qbsde::cli::run(qbsde::cli::Cli::parse()));
}
