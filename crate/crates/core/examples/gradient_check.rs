//! Compares analytic gradients of an LSTM layer and of the CTC loss with
//! central finite differences.
//!
//! `cargo run --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use subword_asr::ctc::ctc_loss_and_grad;
use subword_asr::encoder::blstm_layer;
use subword_asr::model::LstmVars;
use subword_asr::numerics::gradcheck::{max_relative_error, numerical_gradient};
use subword_asr::numerics::Tape;
use subword_asr::Tensor;

const STEP: f64 = 1e-5;

fn random(rng: &mut ChaCha8Rng, shape: [usize; 2]) -> Tensor {
    Tensor::new(shape.to_vec(), (0..shape[0] * shape[1]).map(|_| rng.gen_range(-0.8..0.8)).collect()).unwrap()
}

/// `Σ blstm(x) ⊙ r` and, when asked, its gradient with respect to `x`.
fn blstm_objective(x: &Tensor, weights: &[Tensor], r: &Tensor, grad: bool) -> (f64, Option<Tensor>) {
    let mut tape = Tape::new();
    let xv = tape.leaf_ref(x, grad);
    let p: Vec<_> = weights.iter().map(|w| tape.leaf_ref(w, false)).collect();
    let fwd = LstmVars { w_x: p[0], w_h: p[1], b: p[2] };
    let bwd = LstmVars { w_x: p[3], w_h: p[4], b: p[5] };
    let out = blstm_layer(&mut tape, xv, &fwd, &bwd).unwrap();
    let rv = tape.leaf_ref(r, false);
    let prod = tape.mul(out, rv).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    let g = grad.then(|| tape.backward(loss).unwrap().take(xv).unwrap());
    (value, g)
}

fn main() -> subword_asr::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (frames, dim, cells) = (5, 3, 2);
    let shapes = [[dim, 4 * cells], [cells, 4 * cells], [1, 4 * cells]];
    let weights: Vec<Tensor> = shapes.iter().chain(&shapes).map(|&s| random(&mut rng, s)).collect();
    let x = random(&mut rng, [frames, dim]);
    let r = random(&mut rng, [frames, 2 * cells]);
    let (_, analytic) = blstm_objective(&x, &weights, &r, true);
    let numeric = numerical_gradient(&x, STEP, |x| blstm_objective(x, &weights, &r, false).0);
    println!("BLSTM input gradient: max relative error {:.2e}", max_relative_error(&analytic.unwrap(), &numeric, 1e-6));

    let logits = random(&mut rng, [6, 4]);
    let target = [1, 3, 3];
    let (_, analytic) = ctc_loss_and_grad(&logits, &target)?;
    let numeric = numerical_gradient(&logits, STEP, |z| ctc_loss_and_grad(z, &target).unwrap().0);
    println!("CTC logit gradient:   max relative error {:.2e}", max_relative_error(&analytic, &numeric, 1e-6));
    Ok(())
}
