use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = mrwlab_cli::Cli::parse();
    if let Err(e) = mrwlab_cli::run(cli) {
        eprintln!("mrwlab: {}", e.message());
        std::process::exit(e.exit_code());
    }
}
