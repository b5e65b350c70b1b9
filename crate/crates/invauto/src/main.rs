use clap::Parser;

fn main() {
    let cli = invauto::cli::Cli::parse();
    if let Err(e) = invauto::cli::execute(&cli) {
        eprintln!("invauto: {e}");
        std::process::exit(match e {
            invauto::IoError::Config(_) => 2,
            _ => 1,
        });
    }
}
