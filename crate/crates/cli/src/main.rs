use clap::Parser;

fn main() {
    let cli = elmd_cli::Cli::parse();
    std::process::exit(elmd_cli::run(&cli));
}
