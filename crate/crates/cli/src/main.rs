use clap::Parser;
use foundpad_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = run(cli, &mut stdout) {
        eprintln!("{}", e.to_json_line());
        std::process::exit(1);
    }
}
