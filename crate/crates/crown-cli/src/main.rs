use clap::Parser;

fn main() {
    let cli = crown_cli::Cli::parse();
    if let Err(e) = crown_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
