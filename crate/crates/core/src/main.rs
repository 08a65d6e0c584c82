use clap::Parser;

fn main() {
    let cli = schoolrd::cli::Cli::parse();
    std::process::exit(schoolrd::cli::run(cli));
}
