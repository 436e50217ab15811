use clap::Parser;
use sdl_gateway::cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("{}", e.line());
        std::process::exit(1);
    }
}
