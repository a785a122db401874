use super::cells::{lstm_cell, LstmCellParams};
use super::RowRef;
use crate::autodiff::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Per-sentence, per-position hidden and cell state rows of one LSTM pass.
#[derive(Debug, Clone)]
pub struct SeqStates {
    pub h: Vec<Vec<RowRef>>,
    pub c: Vec<Vec<RowRef>>,
}

/// Runs an LSTM over every sentence of a batch at once. `rows[b][j]` is the
/// row of `input` holding token `j` of sentence `b`. With `reverse`, each
/// sentence is read from its last token to its first; states are still
/// indexed by token position. Only real tokens ever enter the cell.
pub fn run_lstm<T: Real>(
    tape: &mut Tape<'_, T>,
    cell: &LstmCellParams,
    hidden: usize,
    input: Var,
    rows: &[Vec<usize>],
    reverse: bool,
) -> Result<SeqStates> {
    if rows.iter().any(Vec::is_empty) {
        return Err(Error::invalid("cannot run an LSTM over an empty sentence"));
    }
    let max_len = rows.iter().map(Vec::len).max().unwrap_or(0);
    let mut h: Vec<Vec<Option<RowRef>>> = rows.iter().map(|r| vec![None; r.len()]).collect();
    let mut c = h.clone();
    let mut prev_active: Vec<usize> = Vec::new();
    let mut prev_out: Option<(Var, Var)> = None;

    for t in 0..max_len {
        let active: Vec<usize> = (0..rows.len()).filter(|&b| rows[b].len() > t).collect();
        let pos = |b: usize| if reverse { rows[b].len() - 1 - t } else { t };
        let x_src: Vec<RowRef> = active.iter().map(|&b| (input, rows[b][pos(b)])).collect();
        let x = tape.gather_rows(&x_src)?;
        let (h_prev, c_prev) = match prev_out {
            None => {
                let z = Tensor::zeros(&[active.len(), hidden]);
                (tape.constant(z.clone()), tape.constant(z))
            }
            Some(prev) if prev_active == active => prev,
            Some(_) => {
                let prev_pos = |b: usize| if reverse { rows[b].len() - t } else { t - 1 };
                let hs: Vec<RowRef> = active.iter().map(|&b| h[b][prev_pos(b)].unwrap()).collect();
                let cs: Vec<RowRef> = active.iter().map(|&b| c[b][prev_pos(b)].unwrap()).collect();
                (tape.gather_rows(&hs)?, tape.gather_rows(&cs)?)
            }
        };
        let (h_t, c_t) = lstm_cell(tape, cell, h_prev, c_prev, x)?;
        for (k, &b) in active.iter().enumerate() {
            h[b][pos(b)] = Some((h_t, k));
            c[b][pos(b)] = Some((c_t, k));
        }
        prev_out = Some((h_t, c_t));
        prev_active = active;
    }
    let unwrap = |v: Vec<Vec<Option<RowRef>>>| {
        v.into_iter()
            .map(|s| s.into_iter().map(Option::unwrap).collect())
            .collect()
    };
    Ok(SeqStates {
        h: unwrap(h),
        c: unwrap(c),
    })
}

/// Concatenates two per-position state sets feature-wise into one packed
/// matrix and returns row references into it.
pub fn concat_states<T: Real>(
    tape: &mut Tape<'_, T>,
    a: &[Vec<RowRef>],
    b: &[Vec<RowRef>],
) -> Result<Vec<Vec<RowRef>>> {
    let flat_a: Vec<RowRef> = a.iter().flatten().copied().collect();
    let flat_b: Vec<RowRef> = b.iter().flatten().copied().collect();
    let ma = tape.gather_rows(&flat_a)?;
    let mb = tape.gather_rows(&flat_b)?;
    let joined = tape.concat_last(&[ma, mb])?;
    let mut k = 0;
    Ok(a.iter()
        .map(|s| {
            s.iter()
                .map(|_| {
                    k += 1;
                    (joined, k - 1)
                })
                .collect()
        })
        .collect())
}
