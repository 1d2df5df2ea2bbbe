use clap::Parser;
use hotspots::cli::{run, Cli};

fn main() {
    std::process::exit(run(&Cli::parse()));
}
