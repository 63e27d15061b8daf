use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = kgh_cli::args::Cli::parse();
    if let Err(e) = kgh_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.status.code());
    }
}
