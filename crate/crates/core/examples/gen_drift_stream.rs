//! Regenerates `data/drift3.csv`.
//!
//! cargo run -p combine-core --example gen_drift_stream [out-path]

use std::fs::File;

use combine_core::rng::seeded;
use combine_core::stream::{synthetic_drift_stream, write_stream_csv};

fn main() -> std::io::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/drift3.csv").to_string());
    let mut stream = synthetic_drift_stream(6000, 3, &mut seeded(2024));
    stream.stream_id = "drift3".into();
    write_stream_csv(&[stream], File::create(&path)?)?;
    println!("{path}");
    Ok(())
}
