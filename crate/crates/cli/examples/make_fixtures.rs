use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures"));
    if let Err(e) = polident_cli::fixtures::write_all(&dir) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
    println!("fixtures written to {}", dir.display());
}
