use clap::Parser;
use invmeasure::cli::{main_with, Args};

fn main() {
    let args = Args::parse();
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    std::process::exit(main_with(args));
}
