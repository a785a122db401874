//! Latent layouts induced by straight-through Gumbel-softmax merge selection.
//!
//! At every step all adjacent pairs of the current frontier are composed,
//! scored against a query vector, and one merge is selected. The frontier
//! update is written as a mask-weighted sum so the soft selection weights
//! receive gradients while the forward pass follows the hard choice.

use rand::Rng;

use super::cells::{tree_lstm_cell, TreeLstmCellParams};
use super::tree::LeafStates;
use super::RowRef;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::trees::{InternalNode, NodeRef, TreeLayout};

/// Output of encoding one sentence with the Gumbel composer.
#[derive(Debug, Clone)]
pub struct GumbelSentence {
    pub root: RowRef,
    /// Selected parent state per merge, in merge order.
    pub internal: Vec<RowRef>,
    pub layout: TreeLayout,
}

fn argmax<T: Real>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn gumbel_noise<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Tensor<T> {
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>().clamp(1e-10, 1.0 - 1e-10);
            T::from_f64_lossy(-(-u.ln()).ln())
        })
        .collect();
    Tensor::vector(data)
}

/// Encodes one sentence. With `sample` set, merges are drawn with
/// straight-through Gumbel-softmax at `temperature`; otherwise the highest
/// scoring merge is taken (lowest index on ties).
#[allow(clippy::too_many_arguments)]
pub fn encode_gumbel_sentence<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    cell: &TreeLstmCellParams,
    query: Var,
    leaves: &LeafStates,
    sentence: usize,
    temperature: f64,
    sample: bool,
    rng: &mut R,
) -> Result<GumbelSentence> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!(
            "gumbel temperature must be positive, got {temperature}"
        )));
    }
    let leaf_h = &leaves.h[sentence];
    let n = leaf_h.len();
    if n == 0 {
        return Err(Error::invalid("cannot encode an empty sentence"));
    }
    if n == 1 {
        return Ok(GumbelSentence {
            root: leaf_h[0],
            internal: Vec::new(),
            layout: TreeLayout::balanced(1)?,
        });
    }
    let mut cur_h = tape.gather_rows(leaf_h)?;
    let mut cur_c = tape.gather_rows(&leaves.c[sentence])?;
    let mut frontier: Vec<NodeRef> = (0..n).map(NodeRef::Leaf).collect();
    let mut nodes: Vec<InternalNode> = Vec::with_capacity(n - 1);
    let mut internal = Vec::with_capacity(n - 1);
    let inv_temp = T::from_f64_lossy(1.0 / temperature);

    for k in (2..=n).rev() {
        let m = k - 1;
        let l_h = tape.slice(cur_h, 0, 0, m)?;
        let r_h = tape.slice(cur_h, 0, 1, k)?;
        let l_c = tape.slice(cur_c, 0, 0, m)?;
        let r_c = tape.slice(cur_c, 0, 1, k)?;
        let (p_h, p_c) = tree_lstm_cell(tape, cell, (l_h, l_c), (r_h, r_c))?;
        let scores = tape.matmul(p_h, query)?;

        let (y, pick) = if sample {
            let noise = tape.constant(gumbel_noise(m, rng));
            let perturbed = tape.add(scores, noise)?;
            let logits = tape.scale(perturbed, inv_temp, T::zero());
            let soft = tape.softmax(logits)?;
            let pick = argmax(tape.value(soft).data());
            let mut hard = Tensor::zeros(&[m]);
            hard.data_mut()[pick] = T::one();
            (tape.straight_through(soft, hard)?, pick)
        } else {
            let pick = argmax(tape.value(scores).data());
            let mut hard = Tensor::zeros(&[m]);
            hard.data_mut()[pick] = T::one();
            (tape.constant(hard), pick)
        };

        // cum[j] = Σ_{i ≤ j} y[i]; keep-left = 1 - cum, shift-right = cum - y
        let mut tri = Tensor::zeros(&[m, m]);
        for i in 0..m {
            for j in 0..=i {
                tri.data_mut()[i * m + j] = T::one();
            }
        }
        let tri = tape.constant(tri);
        let cum = tape.matmul(tri, y)?;
        let keep_left = tape.scale(cum, -T::one(), T::one());
        let shift_right = tape.sub(cum, y)?;

        let mix = |tape: &mut Tape<'_, T>, l: Var, p: Var, r: Var| -> Result<Var> {
            let a = tape.scale_rows(l, keep_left)?;
            let b = tape.scale_rows(p, y)?;
            let c = tape.scale_rows(r, shift_right)?;
            let ab = tape.add(a, b)?;
            tape.add(ab, c)
        };
        let next_h = mix(tape, l_h, p_h, r_h)?;
        let next_c = mix(tape, l_c, p_c, r_c)?;
        let parent = tape.matmul(y, p_h)?;
        internal.push((parent, 0));

        let (left, right) = (frontier[pick], frontier[pick + 1]);
        let span_of = |r: NodeRef| match r {
            NodeRef::Leaf(i) => (i, i),
            NodeRef::Internal(i) => nodes[i].span,
        };
        let span = (span_of(left).0, span_of(right).1);
        nodes.push(InternalNode { left, right, span });
        frontier.splice(pick..pick + 2, [NodeRef::Internal(nodes.len() - 1)]);

        cur_h = next_h;
        cur_c = next_c;
    }
    Ok(GumbelSentence {
        root: (cur_h, 0),
        internal,
        layout: TreeLayout::from_nodes(n, nodes)?,
    })
}
