use clap::Parser;

fn main() {
    let cli = gexpect_cli::Cli::parse();
    std::process::exit(gexpect_cli::run(cli));
}
