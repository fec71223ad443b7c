use anyhow::Result;
use clap::Parser;

fn main() -> Result<()> {
    let cli = dav::cli::Cli::parse();
    let report = dav::cli::run(cli)?;
    print!("{report}");
    if !report.ends_with('\n') {
        println!();
    }
    Ok(())
}
