//! Tunable-parameter breakdown of the desk and large presets.
//!
//! Usage: `cargo run --example parameter_budget`

use pctrack::config::ModelConfig;
use pctrack::encoder::tunable_budget;

fn main() -> pctrack::Result<()> {
    for (name, cfg) in [("desk", ModelConfig::desk()), ("full_scale", ModelConfig::full_scale())] {
        let b = tunable_budget(&cfg)?;
        println!("{name} (L={}, d={}, r={}, M={}, K={})", cfg.layers, cfg.dim, cfg.adapter_rank, cfg.experts, cfg.top_k);
        for (part, n) in [
            ("adapters", b.adapters),
            ("experts", b.moge),
            ("temporal token", b.temporal_token),
            ("mask weights", b.mask_weights),
            ("embedding", b.embedding),
            ("head", b.head),
            ("backbone", b.backbone),
        ] {
            println!("  {part:<15} {n:>10}");
        }
        println!("  {:<15} {:>10}  ({:.2} M)", "total", b.total(), b.total() as f64 / 1e6);
    }
    Ok(())
}
