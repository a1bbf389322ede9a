use clap::Parser;

fn main() {
    let cli = svlb::Cli::parse();
    if let Err(e) = svlb::run(cli) {
        eprintln!("svlb: {e}");
        std::process::exit(e.exit_code());
    }
}
