use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use cmstew::cli::{run, Cli, Outcome};

fn init_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("CMSTEW_THREADS") {
        let n: usize = v
            .parse()
            .with_context(|| format!("CMSTEW_THREADS={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| run(cli).map_err(anyhow::Error::from));
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<cmstew::Error>()
                .map_or(2, |e| e.exit_code());
            ExitCode::from(code as u8)
        }
    }
}
