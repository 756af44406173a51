use clap::Parser;
use npds_cli::output::render;
use npds_cli::Cli;

fn main() {
    let cli = Cli::parse();
    match cli.run() {
        Ok(value) => println!("{}", render(&value, cli.format)),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
