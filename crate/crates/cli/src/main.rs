use clap::Parser;

fn main() {
    let cli = tiermarket_cli::Cli::parse();
    match tiermarket_cli::run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
        }
        Err(e) => {
            eprintln!("tiermarket: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
