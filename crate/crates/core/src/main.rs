use clap::Parser;

fn main() {
    let cli = valuetree::cli::Cli::parse();
    std::process::exit(valuetree::cli::run(cli));
}
