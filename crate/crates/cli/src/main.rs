use clap::Parser;
use npcsmith_cli::args::{Cli, Command};
use npcsmith_cli::{commands, http};

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    let mut out = std::io::stdout();
    let result = match &cli.command {
        Command::Generate(args) => commands::generate(args, &mut std::io::BufReader::new(std::io::stdin()), &mut out),
        Command::Validate(args) => commands::validate(args, &mut out),
        Command::Record(args) => commands::record(args, &mut out),
        Command::Serve(args) => http::serve(args),
    };
    let code = match result {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {failure}");
            failure.code
        }
    };
    std::process::ExitCode::from(code as u8)
}
