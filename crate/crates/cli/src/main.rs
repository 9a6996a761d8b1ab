use clap::Parser;

fn main() -> anyhow::Result<()> {
    let manifest = isli_cli::cli::run(isli_cli::cli::Cli::parse())?;
    eprintln!("wrote {} artifacts", manifest.artifacts.len());
    Ok(())
}
