use clap::Parser;

use sbcool_cli::{run, Cli, EXIT_OK};

fn main() {
    let cli = Cli::parse();
    let code = match run(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("sbcool: {e}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}
