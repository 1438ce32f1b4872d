use super::graph::{Graph, Var};
use crate::error::{Error, Result};

/// Gate weights over the concatenation `[h_prev, x_t]`; each matrix is
/// `H x (H + D)` and each bias `H`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams {
    pub w_forget: Var,
    pub w_input: Var,
    pub w_cell: Var,
    pub w_output: Var,
    pub b_forget: Var,
    pub b_input: Var,
    pub b_cell: Var,
    pub b_output: Var,
}

/// One LSTM step on a batch: `x (N, D)`, `h_prev (N, H)`, `c_prev (N, H)`.
///
/// ```text
/// f = sigmoid(W_f [h, x] + b_f)    i = sigmoid(W_i [h, x] + b_i)
/// g = tanh(W_c [h, x] + b_c)       o = sigmoid(W_o [h, x] + b_o)
/// c' = f * c + i * g               h' = o * tanh(c')
/// ```
pub fn lstm_cell(g: &mut Graph, x: Var, h_prev: Var, c_prev: Var, p: &LstmCellParams) -> Result<(Var, Var)> {
    if g.shape(h_prev) != g.shape(c_prev) {
        return Err(Error::shape("lstm_cell", format!("hidden {:?} vs cell {:?}", g.shape(h_prev), g.shape(c_prev))));
    }
    let z = g.concat(&[h_prev, x])?;
    let f = g.dense(z, p.w_forget, Some(p.b_forget))?;
    let f = g.sigmoid(f);
    let i = g.dense(z, p.w_input, Some(p.b_input))?;
    let i = g.sigmoid(i);
    let cand = g.dense(z, p.w_cell, Some(p.b_cell))?;
    let cand = g.tanh(cand);
    let o = g.dense(z, p.w_output, Some(p.b_output))?;
    let o = g.sigmoid(o);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    if g.shape(h) != g.shape(h_prev) {
        return Err(Error::shape(
            "lstm_cell",
            format!("gate output {:?} does not match hidden state {:?}", g.shape(h), g.shape(h_prev)),
        ));
    }
    Ok((h, c))
}
