use std::process::exit;

fn main() {
    exit(introsect::harness::cli::run(std::env::args()))
}
