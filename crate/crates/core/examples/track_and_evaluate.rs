//! Tracks held-out sequences with a saved checkpoint (or an untrained model)
//! and prints per-category Success and Precision next to the reference
//! trackers.
//!
//! Usage: `cargo run --release --example track_and_evaluate [checkpoint]`

use pctrack::checkpoint;
use pctrack::config::ModelConfig;
use pctrack::evaluation::{evaluate, TrackerKind};
use pctrack::model::Model;
use pctrack::synthdata::make_desk_dataset;

fn main() -> pctrack::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => checkpoint::load(path.as_ref())?,
        None => {
            println!("no checkpoint given, using an untrained model");
            Model::new(ModelConfig::desk())?
        }
    };
    let data = make_desk_dataset(0)?;
    let kinds = [TrackerKind::Oracle, TrackerKind::Static, TrackerKind::ConstantVelocity, TrackerKind::Model];
    for kind in kinds {
        let r = evaluate(Some(&model), &data.heldout, kind, 2)?;
        print!("{:<18} {:6.2} / {:6.2}  |", r.tracker, r.mean.success, r.mean.precision);
        for (cat, m) in &r.categories {
            print!(" {cat} {:5.1}/{:5.1}", m.success, m.precision);
        }
        println!();
    }
    Ok(())
}
