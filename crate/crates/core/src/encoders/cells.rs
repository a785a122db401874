use rand::Rng;

use crate::autodiff::{Init, ParamSet, ParamVars, Real, Tape, Var};
use crate::error::Result;

/// Shape description of an LSTM cell; [`LstmCell::bind`] yields its tape handles.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub prefix: String,
    pub hidden: usize,
    pub input: usize,
}

/// Gate weights `[hidden, hidden + input]` and biases of a linear LSTM cell.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    pub w_f: Var,
    pub w_i: Var,
    pub w_c: Var,
    pub w_o: Var,
    pub b_f: Var,
    pub b_i: Var,
    pub b_c: Var,
    pub b_o: Var,
}

const LSTM_GATES: [&str; 4] = ["f", "i", "c", "o"];
const TREE_GATES: [&str; 5] = ["l", "r", "i", "c", "o"];

fn init_gates<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    prefix: &str,
    gates: &[&str],
    forget: &[&str],
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<()> {
    for g in gates {
        params.add(&format!("{prefix}.w_{g}"), &[rows, cols], Init::FanIn, rng)?;
        let bias = if forget.contains(g) {
            Init::Constant(1.0)
        } else {
            Init::Zeros
        };
        params.add(&format!("{prefix}.b_{g}"), &[rows], bias, rng)?;
    }
    Ok(())
}

impl LstmCell {
    pub fn new(prefix: impl Into<String>, hidden: usize, input: usize) -> Self {
        LstmCell {
            prefix: prefix.into(),
            hidden,
            input,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        init_gates(
            params,
            &self.prefix,
            &LSTM_GATES,
            &["f"],
            self.hidden,
            self.hidden + self.input,
            rng,
        )
    }

    pub fn bind(&self, pv: &ParamVars) -> Result<LstmCellParams> {
        let p = &self.prefix;
        Ok(LstmCellParams {
            w_f: pv.get(&format!("{p}.w_f"))?,
            w_i: pv.get(&format!("{p}.w_i"))?,
            w_c: pv.get(&format!("{p}.w_c"))?,
            w_o: pv.get(&format!("{p}.w_o"))?,
            b_f: pv.get(&format!("{p}.b_f"))?,
            b_i: pv.get(&format!("{p}.b_i"))?,
            b_c: pv.get(&format!("{p}.b_c"))?,
            b_o: pv.get(&format!("{p}.b_o"))?,
        })
    }
}

/// One LSTM step. `h_prev`, `c_prev` are `[rows, hidden]` (or vectors) and
/// `x` is `[rows, input]`.
pub fn lstm_cell<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &LstmCellParams,
    h_prev: Var,
    c_prev: Var,
    x: Var,
) -> Result<(Var, Var)> {
    let z = tape.concat_last(&[h_prev, x])?;
    let f = tape.affine(z, p.w_f, Some(p.b_f))?;
    let f = tape.sigmoid(f);
    let i = tape.affine(z, p.w_i, Some(p.b_i))?;
    let i = tape.sigmoid(i);
    let cand = tape.affine(z, p.w_c, Some(p.b_c))?;
    let cand = tape.tanh(cand);
    let o = tape.affine(z, p.w_o, Some(p.b_o))?;
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Shape description of a binary tree-LSTM cell over `hidden`-sized children.
#[derive(Debug, Clone)]
pub struct TreeLstmCell {
    pub prefix: String,
    pub hidden: usize,
}

/// Gate weights `[hidden, 2 * hidden]` and biases with separate left/right
/// forget gates.
#[derive(Debug, Clone, Copy)]
pub struct TreeLstmCellParams {
    pub w_l: Var,
    pub w_r: Var,
    pub w_i: Var,
    pub w_c: Var,
    pub w_o: Var,
    pub b_l: Var,
    pub b_r: Var,
    pub b_i: Var,
    pub b_c: Var,
    pub b_o: Var,
}

impl TreeLstmCell {
    pub fn new(prefix: impl Into<String>, hidden: usize) -> Self {
        TreeLstmCell {
            prefix: prefix.into(),
            hidden,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        init_gates(
            params,
            &self.prefix,
            &TREE_GATES,
            &["l", "r"],
            self.hidden,
            2 * self.hidden,
            rng,
        )
    }

    pub fn bind(&self, pv: &ParamVars) -> Result<TreeLstmCellParams> {
        let p = &self.prefix;
        Ok(TreeLstmCellParams {
            w_l: pv.get(&format!("{p}.w_l"))?,
            w_r: pv.get(&format!("{p}.w_r"))?,
            w_i: pv.get(&format!("{p}.w_i"))?,
            w_c: pv.get(&format!("{p}.w_c"))?,
            w_o: pv.get(&format!("{p}.w_o"))?,
            b_l: pv.get(&format!("{p}.b_l"))?,
            b_r: pv.get(&format!("{p}.b_r"))?,
            b_i: pv.get(&format!("{p}.b_i"))?,
            b_c: pv.get(&format!("{p}.b_c"))?,
            b_o: pv.get(&format!("{p}.b_o"))?,
        })
    }
}

/// Composes left and right child states. Every gate, including the output
/// gate, reads `[h_l, h_r]`.
pub fn tree_lstm_cell<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &TreeLstmCellParams,
    (h_l, c_l): (Var, Var),
    (h_r, c_r): (Var, Var),
) -> Result<(Var, Var)> {
    let z = tape.concat_last(&[h_l, h_r])?;
    let gate = |tape: &mut Tape<'_, T>, w, b| -> Result<Var> {
        let a = tape.affine(z, w, Some(b))?;
        Ok(tape.sigmoid(a))
    };
    let f_l = gate(tape, p.w_l, p.b_l)?;
    let f_r = gate(tape, p.w_r, p.b_r)?;
    let i = gate(tape, p.w_i, p.b_i)?;
    let o = gate(tape, p.w_o, p.b_o)?;
    let cand = tape.affine(z, p.w_c, Some(p.b_c))?;
    let cand = tape.tanh(cand);
    let from_l = tape.mul(f_l, c_l)?;
    let from_r = tape.mul(f_r, c_r)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(from_l, from_r)?;
    let c = tape.add(c, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
