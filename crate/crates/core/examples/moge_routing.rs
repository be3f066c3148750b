//! Routes a few tokens through a mixture layer and shows which experts each
//! token activates.
//!
//! Usage: `cargo run --example moge_routing`

use pctrack::encoder::{moge_forward, MoGEParams};
use pctrack::numerics::Tensor;
use pctrack::params::{Graph, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pctrack::Result<()> {
    let (dim, experts, top_k) = (16, 8, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let layer = MoGEParams::init(&mut store, "moge", dim, dim / 8, experts, top_k, &mut rng);
    // A fresh router is nearly uniform; widen it so the routing is visible.
    let w = store.get_mut(layer.router);
    w.value = Tensor::randn(&[dim, experts], 1.0, &mut rng);

    let tokens = Tensor::randn(&[5, dim], 1.0, &mut rng);
    let mut g = Graph::new(&store);
    let z = g.tape.constant(tokens);
    let (_, routing) = moge_forward(&mut g, z, &layer)?;
    for (t, gates) in g.value(routing.gates).data().chunks(experts).enumerate() {
        let active: Vec<String> = gates
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(e, v)| format!("expert {e} ({v:.3})"))
            .collect();
        println!("token {t}: {}", active.join(", "));
    }
    Ok(())
}
