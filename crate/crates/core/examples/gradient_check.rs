//! Builds a small attention-like expression on the tape and compares its
//! reverse-mode gradient with central finite differences.
//!
//! Usage: `cargo run --example gradient_check`

use pctrack::numerics::gradcheck::check;
use pctrack::numerics::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> pctrack::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
    let w = Tensor::randn(&[6, 6], 0.5, &mut rng);
    let gain = Tensor::full(&[6], 1.0);
    let bias = Tensor::zeros(&[6]);

    let report = check(&[x, w, gain, bias], 1e-5, |t, v| {
        let n = t.layer_norm(v[0], v[2], v[3], 1e-5)?;
        let q = t.matmul(n, v[1])?;
        let kt = t.transpose(q)?;
        let scores = t.matmul(q, kt)?;
        let attn = t.softmax(scores)?;
        let y = t.matmul(attn, n)?;
        let y = t.gelu(y);
        Ok(t.mean(y))
    })?;
    println!("checked {} coordinates, max relative error {:.2e}", report.checked, report.max_rel_err);
    Ok(())
}
