#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use subword_asr::attention::attention_nll;
use subword_asr::config::{DecoderConfig, EncoderConfig};
use subword_asr::encoder::{encode, Mode};
use subword_asr::decode::StepModel;
use subword_asr::model::{Model, ModelConfig};
use subword_asr::numerics::gradcheck::{max_relative_error, numerical_gradient};
use subword_asr::numerics::{Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Rows of a random stochastic matrix.
pub fn random_probs(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        data.extend(raw.iter().map(|v| v / total));
    }
    Tensor::new(vec![rows, cols], data).unwrap()
}

pub fn tiny_config(num_units: usize, batch_norm: bool) -> ModelConfig {
    ModelConfig {
        input_dim: 3,
        num_units,
        encoder: EncoderConfig {
            num_layers: 2,
            cells_per_direction: 2,
            subsample_layers: vec![2],
            subsample_factor: 2,
            batch_norm,
        },
        decoder: DecoderConfig {
            cells: 3,
            embedding_dim: 2,
            attention_dim: 3,
            conv_filters: 2,
            conv_width: 3,
        },
    }
}

pub fn tiny_model(num_units: usize, seed: u64) -> Model {
    Model::init(tiny_config(num_units, true), seed, 0.5).unwrap()
}

/// Checks `Σ (build(inputs) ⊙ R)` for a fixed random `R` against central
/// differences in every input. Returns the worst relative error.
pub fn op_gradient_error(inputs: &[Tensor], build: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars);
        let shape = tape.value(out).shape().to_vec();
        random_tensor(&mut rng(99), &shape, 1.0)
    };
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone(), false)).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = build(&mut tape, &vars);
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let numeric = numerical_gradient(&inputs[i], FD_STEP, |probe| {
            let mut values = inputs.to_vec();
            values[i] = probe.clone();
            eval(&values)
        });
        worst = worst.max(max_relative_error(&analytic, &numeric, REL_FLOOR));
    }
    worst
}

/// Worst relative error of analytic parameter gradients against central
/// differences of `loss` for every parameter whose name starts with one of
/// `prefixes`.
pub fn model_gradient_error(
    model: &Model,
    prefixes: &[&str],
    analytic: &std::collections::BTreeMap<String, Tensor>,
    loss: impl Fn(&Model) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for (name, value) in &model.params {
        if !prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let numeric = numerical_gradient(value, FD_STEP, |t| {
            probe.params.insert(name.clone(), t.clone());
            loss(&probe)
        });
        probe.params.insert(name.clone(), value.clone());
        let a = analytic.get(name).cloned().unwrap_or_else(|| Tensor::zeros(value.shape()));
        let err = max_relative_error(&a, &numeric, REL_FLOOR);
        worst = worst.max(err);
    }
    worst
}

/// Exponential-time edit distance: tries every alignment operation at
/// every position. Returns `(substitutions, deletions, insertions)` of a
/// cheapest alignment, preferring substitution, then deletion, then
/// insertion at the last position.
pub fn brute_force_edits(r: &[&str], h: &[&str]) -> (usize, usize, usize) {
    fn go(r: &[&str], h: &[&str]) -> (usize, (usize, usize, usize)) {
        if r.is_empty() {
            return (h.len(), (0, 0, h.len()));
        }
        if h.is_empty() {
            return (r.len(), (0, r.len(), 0));
        }
        let (n, m) = (r.len(), h.len());
        let mut best: Option<(usize, (usize, usize, usize))> = None;
        let sub = usize::from(r[n - 1] != h[m - 1]);
        let (c, (s, d, i)) = go(&r[..n - 1], &h[..m - 1]);
        let options = [
            (c + sub, (s + sub, d, i)),
            {
                let (c, (s, d, i)) = go(&r[..n - 1], h);
                (c + 1, (s, d + 1, i))
            },
            {
                let (c, (s, d, i)) = go(r, &h[..m - 1]);
                (c + 1, (s, d, i + 1))
            },
        ];
        for o in options {
            if best.map_or(true, |b| o.0 < b.0) {
                best = Some(o);
            }
        }
        best.unwrap()
    }
    go(r, h).1
}

/// `Σ encoder(x) ⊙ weights` in training mode and its parameter gradients.
pub fn encoder_loss(model: &subword_asr::model::Model, x: &Tensor, weights: &Tensor) -> (f64, std::collections::BTreeMap<String, Tensor>) {
    let mut tape = Tape::new();
    let vars = model.bind(&mut tape, true);
    let xv = tape.leaf_ref(x, false);
    let out = encode(&mut tape, xv, model, &vars.layers, Mode::Train).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out.h, w).unwrap();
    let loss = tape.sum(prod);
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss).unwrap();
    let named = vars
        .by_name
        .iter()
        .filter_map(|(n, v)| grads.get(*v).map(|g| (n.clone(), g.clone())))
        .collect();
    (value, named)
}

/// Attention negative log-likelihood and its decoder parameter gradients.
pub fn attention_loss(model: &subword_asr::model::Model, h: &Tensor, targets: &[usize]) -> (f64, std::collections::BTreeMap<String, Tensor>) {
    let mut tape = Tape::new();
    let vars = model.bind_decoder(&mut tape, true);
    let hv = tape.leaf_ref(h, false);
    let (loss, _) = attention_nll(&mut tape, model, hv, targets, &vars).unwrap();
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss).unwrap();
    let mut named = std::collections::BTreeMap::new();
    let names = [
        ("att.omega", vars.att.omega),
        ("att.w", vars.att.w),
        ("att.v", vars.att.v),
        ("att.m", vars.att.m),
        ("att.b", vars.att.b),
        ("att.filters", vars.att.filters),
        ("dec.embed", vars.embed),
        ("dec.lstm.w_x", vars.lstm.w_x),
        ("dec.lstm.w_h", vars.lstm.w_h),
        ("dec.lstm.b", vars.lstm.b),
        ("dec.out.w", vars.out_w),
        ("dec.out.b", vars.out_b),
    ];
    for (n, v) in names {
        if let Some(g) = grads.get(v) {
            named.insert(n.to_string(), g.clone());
        }
    }
    (value, named)
}

/// Best finished sequence by exhaustive enumeration of every label
/// sequence up to `max_len` tokens.
pub fn brute_force_best<M: StepModel>(m: &M, max_len: usize) -> (Vec<usize>, f64) {
    fn walk<M: StepModel>(m: &M, state: &M::State, prefix: &mut Vec<usize>, score: f64, left: usize, best: &mut (Vec<usize>, f64)) {
        if left == 0 {
            return;
        }
        let prev = prefix.last().copied().unwrap_or(m.sos());
        let (next, lp) = m.step(state, prev).unwrap();
        for k in 0..m.num_classes() {
            if k == m.sos() {
                continue;
            }
            prefix.push(k);
            let s = score + lp[k];
            if k == m.eos() {
                if s > best.1 || (s == best.1 && *prefix < best.0) {
                    *best = (prefix.clone(), s);
                }
            } else {
                walk(m, &next, prefix, s, left - 1, best);
            }
            prefix.pop();
        }
    }
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    walk(m, &m.initial_state(), &mut Vec::new(), 0.0, max_len, &mut best);
    best
}
