use clap::Parser;

fn main() {
    let args = masksurv::cli::Cli::parse();
    if let Err(e) = masksurv::cli::run(args) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
