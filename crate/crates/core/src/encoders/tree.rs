use super::cells::{tree_lstm_cell, TreeLstmCellParams};
use super::RowRef;
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};
use crate::trees::{NodeRef, TreeLayout};

/// Leaf `(h, c)` rows for every token of every sentence.
#[derive(Debug, Clone)]
pub struct LeafStates {
    pub h: Vec<Vec<RowRef>>,
    pub c: Vec<Vec<RowRef>>,
}

/// Affine leaf maps: `h = W_h x + b_h`, `c = W_c x + b_c`, applied row-wise.
/// Each leaf depends on its own token only.
pub fn affine_leaves<T: Real>(
    tape: &mut Tape<'_, T>,
    (w_h, b_h): (Var, Var),
    (w_c, b_c): (Var, Var),
    input: Var,
    rows: &[Vec<usize>],
) -> Result<LeafStates> {
    if rows.iter().any(Vec::is_empty) {
        return Err(Error::invalid("leaf transform needs at least one token"));
    }
    let h = tape.affine(input, w_h, Some(b_h))?;
    let c = tape.affine(input, w_c, Some(b_c))?;
    let refs = |m: Var| rows.iter().map(|r| r.iter().map(|&i| (m, i)).collect()).collect();
    Ok(LeafStates {
        h: refs(h),
        c: refs(c),
    })
}

/// Result of composing a batch of layouts bottom-up.
#[derive(Debug, Clone)]
pub struct TreeStates {
    /// Root hidden state per sentence (the leaf itself when n = 1).
    pub roots: Vec<RowRef>,
    /// Hidden state per internal node, in each layout's evaluation order.
    pub internal: Vec<Vec<RowRef>>,
}

/// Evaluates every layout of the batch level by level: all internal nodes
/// whose children are ready are composed in one batched cell call.
pub fn compose_layouts<T: Real>(
    tape: &mut Tape<'_, T>,
    cell: &TreeLstmCellParams,
    leaves: &LeafStates,
    layouts: &[TreeLayout],
) -> Result<TreeStates> {
    if layouts.len() != leaves.h.len() {
        return Err(Error::invalid(format!(
            "{} layouts for {} sentences",
            layouts.len(),
            leaves.h.len()
        )));
    }
    for (b, (layout, h)) in layouts.iter().zip(&leaves.h).enumerate() {
        if layout.n_leaves() != h.len() {
            return Err(Error::invalid(format!(
                "sentence {b}: layout has {} leaves but the sentence has {} tokens",
                layout.n_leaves(),
                h.len()
            )));
        }
    }
    let levels: Vec<Vec<usize>> = layouts.iter().map(TreeLayout::node_levels).collect();
    let max_level = levels.iter().flatten().copied().max().unwrap_or(0);
    let mut buckets: Vec<Vec<(usize, usize)>> = vec![Vec::new(); max_level + 1];
    for (b, lv) in levels.iter().enumerate() {
        for (i, &l) in lv.iter().enumerate() {
            buckets[l].push((b, i));
        }
    }

    let mut h_int: Vec<Vec<Option<RowRef>>> =
        layouts.iter().map(|l| vec![None; l.nodes().len()]).collect();
    let mut c_int = h_int.clone();

    for bucket in buckets.iter().skip(1) {
        let mut src = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
        for &(b, i) in bucket {
            let node = layouts[b].nodes()[i];
            for (side, child) in [node.left, node.right].into_iter().enumerate() {
                let (h, c) = match child {
                    NodeRef::Leaf(j) => (leaves.h[b][j], leaves.c[b][j]),
                    NodeRef::Internal(j) => (h_int[b][j].unwrap(), c_int[b][j].unwrap()),
                };
                src[2 * side].push(h);
                src[2 * side + 1].push(c);
            }
        }
        let h_l = tape.gather_rows(&src[0])?;
        let c_l = tape.gather_rows(&src[1])?;
        let h_r = tape.gather_rows(&src[2])?;
        let c_r = tape.gather_rows(&src[3])?;
        let (h, c) = tree_lstm_cell(tape, cell, (h_l, c_l), (h_r, c_r))?;
        for (k, &(b, i)) in bucket.iter().enumerate() {
            h_int[b][i] = Some((h, k));
            c_int[b][i] = Some((c, k));
        }
    }

    let internal: Vec<Vec<RowRef>> = h_int
        .into_iter()
        .map(|v| v.into_iter().map(Option::unwrap).collect())
        .collect();
    let roots = layouts
        .iter()
        .enumerate()
        .map(|(b, l)| match l.root() {
            NodeRef::Leaf(j) => leaves.h[b][j],
            NodeRef::Internal(i) => internal[b][i],
        })
        .collect();
    Ok(TreeStates { roots, internal })
}
