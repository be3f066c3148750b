//! Trains briefly, then prints how often each expert is chosen per category
//! and mixture layer on the held-out split.
//!
//! Usage: `cargo run --release --example expert_activation [steps]`

use pctrack::config::{ModelConfig, TrainConfig};
use pctrack::evaluation::expert_stats;
use pctrack::learning::train;
use pctrack::model::Model;
use pctrack::synthdata::make_desk_dataset;

fn main() -> pctrack::Result<()> {
    let steps = std::env::args().nth(1).map_or(200, |s| s.parse().expect("steps must be an integer"));
    let data = make_desk_dataset(0)?;
    let mut model = Model::new(ModelConfig::desk())?;
    train(&mut model, &data.train, &TrainConfig { steps, ..TrainConfig::default() }, |_| {})?;

    let hist = expert_stats(&model, &data.heldout, 2)?;
    let rows = hist.rows();
    let experts = model.config.experts;
    println!("{:<12} layer  {}", "category", (0..experts).map(|e| format!("  e{e}  ")).collect::<String>());
    for chunk in rows.chunks(experts) {
        let bars: String = chunk.iter().map(|r| format!(" {:5.3} ", r.fraction)).collect();
        println!("{:<12} {:>5}  {bars}", chunk[0].category, chunk[0].layer);
    }
    Ok(())
}
