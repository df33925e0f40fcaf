use clap::Parser;

fn main() {
    // Usage errors exit 2 via clap; runtime failures exit 1.
    let cli = setnas_cli::Cli::parse();
    if let Err(err) = setnas_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
