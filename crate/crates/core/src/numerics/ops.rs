//! Value-level numeric operations shared by the tape and the inference path.

use super::{NumericsError, Tensor};

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction; invalid positions get zero probability.
/// Assumes at least one valid position and finite inputs.
pub(crate) fn softmax_masked_into(xs: &[f64], valid: &[bool], out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for (x, &v) in xs.iter().zip(valid) {
        if v && *x > max {
            max = *x;
        }
    }
    let mut sum = 0.0;
    for i in 0..xs.len() {
        if valid[i] {
            let e = (xs[i] - max).exp();
            out[i] = e;
            sum += e;
        } else {
            out[i] = 0.0;
        }
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub(crate) fn log_softmax_into(xs: &[f64], out: &mut [f64]) {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for &x in xs {
        sum += (x - max).exp();
    }
    let log_z = max + sum.ln();
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = x - log_z;
    }
}

/// Probability-normalized exponentials of a sequence of energies.
///
/// Outputs are strictly positive and sum to 1 (within accumulated rounding
/// of order 1e-16); computed with max-subtraction so large energies cannot
/// overflow.
pub fn softmax(xs: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if xs.is_empty() {
        return Err(NumericsError::EmptyInput("softmax"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFiniteInput("softmax"));
    }
    let valid = vec![true; xs.len()];
    let mut out = vec![0.0; xs.len()];
    softmax_masked_into(xs, &valid, &mut out);
    Ok(out)
}

/// Log-probabilities of a sequence of energies (stable log-softmax).
pub fn log_softmax(xs: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if xs.is_empty() {
        return Err(NumericsError::EmptyInput("log_softmax"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFiniteInput("log_softmax"));
    }
    let mut out = vec![0.0; xs.len()];
    log_softmax_into(xs, &mut out);
    Ok(out)
}

/// Weights of one LSTM cell. Gates are packed row-wise in the order
/// input, forget, candidate, output: `w_ih` is `[4u, in]`, `w_hh` is
/// `[4u, u]` and `bias` is `[4u]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmCellParams<'a> {
    pub w_ih: &'a Tensor,
    pub w_hh: &'a Tensor,
    pub bias: &'a Tensor,
}

/// One step of the canonical LSTM cell: sigmoid gates, tanh candidate,
/// no peepholes. Returns the new (hidden, cell) state.
pub fn lstm_cell_step(
    input: &[f64],
    hidden: &[f64],
    cell: &[f64],
    params: &LstmCellParams,
) -> Result<(Vec<f64>, Vec<f64>), NumericsError> {
    let units = hidden.len();
    let gate_rows = 4 * units;
    if params.w_ih.rank() != 2
        || params.w_ih.rows() != gate_rows
        || params.w_ih.cols() != input.len()
        || params.w_hh.rank() != 2
        || params.w_hh.rows() != gate_rows
        || params.w_hh.cols() != units
        || params.bias.len() != gate_rows
        || cell.len() != units
    {
        return Err(NumericsError::ShapeMismatch {
            op: "lstm_cell_step",
            detail: format!(
                "input [{}], state [{}], w_ih {:?}, w_hh {:?}, bias {:?}",
                input.len(),
                units,
                params.w_ih.shape(),
                params.w_hh.shape(),
                params.bias.shape()
            ),
        });
    }

    // Matches the tape composition: (w_ih @ x) + (w_hh @ h), then + bias.
    let mut pre = vec![0.0; gate_rows];
    for (r, p) in pre.iter_mut().enumerate() {
        let mut ih = 0.0;
        let row = &params.w_ih.data()[r * input.len()..(r + 1) * input.len()];
        for (w, x) in row.iter().zip(input) {
            ih += w * x;
        }
        let mut hh = 0.0;
        let row = &params.w_hh.data()[r * units..(r + 1) * units];
        for (w, h) in row.iter().zip(hidden) {
            hh += w * h;
        }
        *p = (ih + hh) + params.bias.data()[r];
    }

    let mut new_hidden = vec![0.0; units];
    let mut new_cell = vec![0.0; units];
    for k in 0..units {
        let i = sigmoid(pre[k]);
        let f = sigmoid(pre[units + k]);
        let g = pre[2 * units + k].tanh();
        let o = sigmoid(pre[3 * units + k]);
        let c = f * cell[k] + i * g;
        new_cell[k] = c;
        new_hidden[k] = o * c.tanh();
    }
    Ok((new_hidden, new_cell))
}
