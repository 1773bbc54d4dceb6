use clap::Parser;

fn main() {
    let cli = lgcp::cli::Cli::parse();
    if let Err(e) = lgcp::cli::run(&cli) {
        eprintln!("lgcp: error: {e}");
        std::process::exit(e.exit_code());
    }
}
