//! Generates one sequence per desk category, writes it as text and reads it
//! back.
//!
//! Usage: `cargo run --example synth_sequences [out_dir]`

use pctrack::synthdata::{generate_sequence, read_sequence, write_sequence, CategorySpec};

fn main() -> pctrack::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pctrack_synth_example"));
    for (i, spec) in CategorySpec::desk_categories().iter().enumerate() {
        let seq = generate_sequence(spec, 10, 100 + i as u64)?;
        let dir = out.join(&spec.name);
        write_sequence(&seq, &dir)?;
        let back = read_sequence(&dir)?;
        assert_eq!(back, seq);
        let first = &seq.frames[0].gt;
        let last = &seq.frames[seq.len() - 1].gt;
        println!(
            "{:<11} size {:.2}x{:.2}x{:.2}  moved {:5.2} m  {:4} points/frame  -> {}",
            spec.name,
            first.size[0],
            first.size[1],
            first.size[2],
            first.center_distance(last),
            seq.frames[0].cloud.len(),
            dir.display()
        );
    }
    Ok(())
}
