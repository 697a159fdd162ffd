use clap::Parser;

fn main() {
    let cli = spamdetect::cli::Cli::parse();
    if let Err(e) = spamdetect::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
