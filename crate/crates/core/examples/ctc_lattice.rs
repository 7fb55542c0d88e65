//! Runs the CTC forward-backward recursions on random frame distributions,
//! checks them against explicit path enumeration, and prints the per-frame
//! likelihood identity.
//!
//! `cargo run --example ctc_lattice -- [seed]`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subword_asr::ctc::{brute_force_ctc, ctc_forward_backward, ctc_loss_and_grad};
use subword_asr::Tensor;

fn main() -> subword_asr::Result<()> {
    let seed = std::env::args().nth(1).map_or(0, |s| s.parse().expect("seed"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (frames, classes) = (5, 4);
    let target = [1, 2, 2];
    let mut q = Tensor::zeros(&[frames, classes]);
    for l in 0..frames {
        let row: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
        let z: f64 = row.iter().sum();
        for (k, v) in row.iter().enumerate() {
            q.set(l, k, v / z);
        }
    }

    let lattice = ctc_forward_backward(&q, &target)?;
    let brute = brute_force_ctc(&q, &target);
    println!("target {target:?} over {frames} frames, {classes} classes");
    println!("forward-backward ln p = {:.15}", lattice.log_likelihood);
    println!("path enumeration ln p = {brute:.15}");
    let log_q = q.map(f64::ln);
    for l in 0..frames {
        println!("  frame {l}: ln sum(alpha beta / q) = {:.15}", lattice.frame_log_likelihood(&log_q, l));
    }

    let (loss, grad) = ctc_loss_and_grad(&log_q, &target)?;
    println!("loss on logits = {loss:.6}; gradient rows sum to zero:");
    for l in 0..frames {
        println!("  frame {l}: {:+.2e}", grad.row_slice(l).iter().sum::<f64>());
    }
    Ok(())
}
