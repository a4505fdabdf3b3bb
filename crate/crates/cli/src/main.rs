use clap::Parser;

fn main() {
    let code = simlearn_cli::run(simlearn_cli::Cli::parse());
    std::process::exit(code);
}
