use clap::Parser;
use spectralfield::cli::{run, Args};

fn main() {
    std::process::exit(run(&Args::parse()));
}
