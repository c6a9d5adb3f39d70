use clap::Parser;

fn main() {
    let cli = streamls_cli::Cli::parse();
    match streamls_cli::execute(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}
