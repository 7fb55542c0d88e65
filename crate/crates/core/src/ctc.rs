//! Connectionist temporal classification.
//!
//! Label id 0 is the blank. Targets hold ids in `1..=K` and frame
//! distributions have `K + 1` columns. The lattice runs over the
//! blank-interleaved target `(∅, y₁, ∅, y₂, …, yᵤ, ∅)` entirely in the log
//! domain; [`brute_force_ctc`] sums explicit paths in the probability domain
//! and exists as an independent check.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::tensor::{log_add, log_sum_exp, Tensor};

pub const BLANK: usize = 0;

/// Blank-interleaved target of length `2U + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedLabels(Vec<usize>);

impl ExpandedLabels {
    pub fn new(target: &[usize]) -> Self {
        let mut z = Vec::with_capacity(2 * target.len() + 1);
        z.push(BLANK);
        for &y in target {
            z.push(y);
            z.push(BLANK);
        }
        Self(z)
    }

    pub fn labels(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Whether position `s` may be entered from `s - 2` (skipping a blank).
    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.0[s] != BLANK && self.0[s] != self.0[s - 2]
    }
}

/// Forward and backward log variables plus the sequence log-likelihood.
///
/// Both `log_alpha[l, s]` and `log_beta[l, s]` include the emission at frame
/// `l`, so `Σₛ α β / q` at any frame equals `p(y|x)`.
#[derive(Clone, Debug)]
pub struct CtcLattice {
    pub log_alpha: Tensor,
    pub log_beta: Tensor,
    pub log_likelihood: f64,
    pub expanded: ExpandedLabels,
}

impl CtcLattice {
    /// `logsumexp_s(log α[l,s] + log β[l,s] − log q[l, z_s])` for one frame.
    pub fn frame_log_likelihood(&self, log_q: &Tensor, l: usize) -> f64 {
        let terms: Vec<f64> = self
            .expanded
            .labels()
            .iter()
            .enumerate()
            .map(|(s, &z)| self.log_alpha.get(l, s) + self.log_beta.get(l, s) - log_q.get(l, z))
            .collect();
        log_sum_exp(&terms)
    }

    /// Text dump, one `l u log_alpha log_beta` line per lattice cell.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for l in 0..self.log_alpha.rows() {
            for s in 0..self.log_alpha.cols() {
                let _ = writeln!(out, "{l}\t{s}\t{}\t{}", self.log_alpha.get(l, s), self.log_beta.get(l, s));
            }
        }
        out
    }
}

/// Removes adjacent repeats, then blanks.
pub fn collapse_path(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if prev != Some(p) && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

/// Minimum number of frames able to emit `target`: one per label plus one
/// blank between each pair of identical neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + repeats(target)
}

fn repeats(target: &[usize]) -> usize {
    target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn check_target(frames: usize, classes: usize, target: &[usize]) -> Result<()> {
    if frames == 0 {
        return Err(Error::Dimension("CTC needs at least one frame".into()));
    }
    if let Some(&bad) = target.iter().find(|&&y| y == BLANK || y >= classes) {
        return Err(Error::Contract(format!(
            "target label {bad} outside 1..={}",
            classes - 1
        )));
    }
    if frames < min_frames(target) {
        return Err(Error::Unalignable {
            frames,
            labels: target.len(),
            repeats: repeats(target),
        });
    }
    Ok(())
}

/// Log-likelihood by enumerating all `(K+1)^L` paths. Test scale only.
pub fn brute_force_ctc(q: &Tensor, target: &[usize]) -> f64 {
    let (frames, classes) = (q.rows(), q.cols());
    let total = classes.checked_pow(frames as u32).expect("path count overflows");
    let mut path = vec![0usize; frames];
    let mut p = 0.0;
    for mut code in 0..total {
        for slot in path.iter_mut() {
            *slot = code % classes;
            code /= classes;
        }
        if collapse_path(&path) == target {
            p += path.iter().enumerate().map(|(l, &k)| q.get(l, k)).product::<f64>();
        }
    }
    p.ln()
}

/// Forward–backward over frame probabilities `q: L × (K+1)`.
pub fn ctc_forward_backward(q: &Tensor, target: &[usize]) -> Result<CtcLattice> {
    let log_q = q.map(f64::ln);
    lattice_from_log_probs(&log_q, target)
}

pub(crate) fn lattice_from_log_probs(log_q: &Tensor, target: &[usize]) -> Result<CtcLattice> {
    let (frames, classes) = (log_q.rows(), log_q.cols());
    check_target(frames, classes, target)?;
    let z = ExpandedLabels::new(target);
    let s_len = z.len();
    let ninf = f64::NEG_INFINITY;

    let mut alpha = Tensor::full(&[frames, s_len], ninf);
    alpha.set(0, 0, log_q.get(0, z.0[0]));
    if s_len > 1 {
        alpha.set(0, 1, log_q.get(0, z.0[1]));
    }
    for l in 1..frames {
        for s in 0..s_len {
            let mut acc = alpha.get(l - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(l - 1, s - 1));
            }
            if z.can_skip(s) {
                acc = log_add(acc, alpha.get(l - 1, s - 2));
            }
            if acc > ninf {
                alpha.set(l, s, acc + log_q.get(l, z.0[s]));
            }
        }
    }

    let mut beta = Tensor::full(&[frames, s_len], ninf);
    let last = frames - 1;
    beta.set(last, s_len - 1, log_q.get(last, z.0[s_len - 1]));
    if s_len > 1 {
        beta.set(last, s_len - 2, log_q.get(last, z.0[s_len - 2]));
    }
    for l in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = beta.get(l + 1, s);
            if s + 1 < s_len {
                acc = log_add(acc, beta.get(l + 1, s + 1));
            }
            if s + 2 < s_len && z.can_skip(s + 2) {
                acc = log_add(acc, beta.get(l + 1, s + 2));
            }
            if acc > ninf {
                beta.set(l, s, acc + log_q.get(l, z.0[s]));
            }
        }
    }

    let mut ll = alpha.get(last, s_len - 1);
    if s_len > 1 {
        ll = log_add(ll, alpha.get(last, s_len - 2));
    }
    Ok(CtcLattice {
        log_alpha: alpha,
        log_beta: beta,
        log_likelihood: ll,
        expanded: z,
    })
}

/// CTC loss `−ln p(y|x)` of `softmax(logits)` and its gradient with respect
/// to the logits.
pub fn ctc_loss_and_grad(logits: &Tensor, target: &[usize]) -> Result<(f64, Tensor)> {
    if !logits.all_finite() {
        return Err(Error::NonFinite("CTC logits".into()));
    }
    let (frames, classes) = (logits.rows(), logits.cols());
    let mut log_q = logits.clone().reshape(vec![frames, classes])?;
    for row in log_q.data_mut().chunks_mut(classes) {
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v -= lse);
    }
    let lattice = lattice_from_log_probs(&log_q, target)?;
    let ll = lattice.log_likelihood;
    if !ll.is_finite() {
        return Err(Error::NonFinite("CTC log-likelihood underflowed".into()));
    }

    // dL/dlogit[l,k] = q[l,k] − Σ_{s: z_s = k} α β / (q p)
    let mut grad = Tensor::zeros(&[frames, classes]);
    let mut occupancy = vec![f64::NEG_INFINITY; classes];
    for l in 0..frames {
        occupancy.iter_mut().for_each(|v| *v = f64::NEG_INFINITY);
        for (s, &k) in lattice.expanded.labels().iter().enumerate() {
            let v = lattice.log_alpha.get(l, s) + lattice.log_beta.get(l, s);
            occupancy[k] = log_add(occupancy[k], v);
        }
        for k in 0..classes {
            let lq = log_q.get(l, k);
            let posterior = (occupancy[k] - lq - ll).exp();
            grad.set(l, k, lq.exp() - posterior);
        }
    }
    Ok((-ll, grad))
}
