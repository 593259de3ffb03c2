//! Regenerates the bundled fixture corpus.
//!
//! cargo run -p threatlens --example gen_fixture -- crates/core/fixtures

use std::path::PathBuf;

fn main() -> threatlens::Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("crates/core/fixtures"));
    threatlens::fixture::write_fixture(&dir)?;
    println!("wrote fixture to {}", dir.display());
    Ok(())
}
