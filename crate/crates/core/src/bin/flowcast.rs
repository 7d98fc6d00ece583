use clap::Parser;

fn main() {
    let cli = flowcast::cli::Cli::parse();
    if let Err(e) = flowcast::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
