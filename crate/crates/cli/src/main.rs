use clap::Parser;
use tilq_cli::{run, Cli, EXIT_INPUT, EXIT_OK};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap would exit with 2, which the exit-code contract reserves for solver failure
            let _ = e.print();
            std::process::exit(if e.use_stderr() { EXIT_INPUT } else { EXIT_OK });
        }
    };
    std::process::exit(run(cli));
}
