//! Writes the bundled toy dataset, databases, configuration and recorded
//! completions into a directory for use with the `katsql` binary.
//!
//!     cargo run --example toy_workspace -- /tmp/toy
//!     katsql --workdir /tmp/toy build-kb

fn main() {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "toy".into());
    katsql::toy::materialize(std::path::Path::new(&dir)).expect("write toy workspace");
    println!("toy workspace written to {dir}");
}
