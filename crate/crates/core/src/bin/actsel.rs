use clap::Parser;

fn main() {
    let cli = actsel::cli::Cli::parse();
    if let Err(error) = actsel::cli::execute(cli) {
        eprintln!("error: {error}");
        std::process::exit(error.exit_code());
    }
}
