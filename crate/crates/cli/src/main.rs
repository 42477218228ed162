use clap::error::ErrorKind;
use clap::Parser;

use protorel_cli::{run, Cli, Failure};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let reason = Failure::Config(first.trim_start_matches("error: ").to_string());
            eprintln!("{}", reason.reason_line());
            std::process::exit(reason.exit_code());
        }
    };
    let code = run(cli, &mut std::io::stdout().lock());
    std::process::exit(code);
}
