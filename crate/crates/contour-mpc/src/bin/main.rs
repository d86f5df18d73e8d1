use clap::Parser;
use contour_mpc::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
