//! Trains the default desk model on freshly generated data and compares it
//! with the reference trackers on the held-out split.
//!
//! Usage: `cargo run --release --example train_desk [steps] [checkpoint_out]`

use std::time::Instant;

use pctrack::checkpoint;
use pctrack::config::{ModelConfig, TrainConfig};
use pctrack::evaluation::{evaluate, TrackerKind};
use pctrack::learning::{smoothed_endpoints, train};
use pctrack::model::Model;
use pctrack::synthdata::make_desk_dataset;

fn main() -> pctrack::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("steps must be an integer"))
        .unwrap_or(TrainConfig::default().steps);
    let data = make_desk_dataset(0)?;
    let mut model = Model::new(ModelConfig::desk())?;
    println!("tunable parameters: {}", model.tunable_count());

    let cfg = TrainConfig { steps, ..TrainConfig::default() };
    let t0 = Instant::now();
    let log = train(&mut model, &data.train, &cfg, |l| {
        if l.step % 100 == 0 {
            println!("step {:>5}  loss {:.4}  cls {:.4}  reg {:.4}", l.step, l.loss, l.loss_cls, l.loss_reg);
        }
    })?;
    println!("trained {steps} steps in {:.1}s", t0.elapsed().as_secs_f64());
    if let Some((first, last)) = smoothed_endpoints(&log, 50) {
        println!("smoothed loss {first:.4} -> {last:.4}");
    }
    if let Some(out) = std::env::args().nth(2) {
        checkpoint::save(&model, out.as_ref())?;
        println!("saved {out}");
    }

    for kind in [TrackerKind::Static, TrackerKind::ConstantVelocity, TrackerKind::Model] {
        let r = evaluate(Some(&model), &data.heldout, kind, 4)?;
        println!("{:<18} success {:6.2}  precision {:6.2}", r.tracker, r.mean.success, r.mean.precision);
        for (cat, m) in &r.categories {
            println!("    {cat:<12} {:6.2} {:6.2}", m.success, m.precision);
        }
    }
    Ok(())
}
