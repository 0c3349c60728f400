use clap::Parser;

use amod_cli::{run, ExperimentConfig};

fn main() {
    let cfg = ExperimentConfig::parse();
    match run(&cfg) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
        }
        Err(e) => {
            eprintln!("amod: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
