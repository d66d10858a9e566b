//! One LSTM direction: forward recurrence and backpropagation through time.
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! g = tanh(W_g x + U_g h + b_g)  o = σ(W_o x + U_o h + b_o)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```

use super::{LstmParams, Matrix};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Activations of one direction over a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCache {
    /// Token ids in the order this direction consumed them.
    pub tokens: Vec<usize>,
    /// Post-activation gates `[i f g o]`, `T x 4H`.
    pub gates: Vec<f64>,
    /// Cell states `c_0..c_T`, `(T + 1) x H`; `c_0 = 0`.
    pub cells: Vec<f64>,
    /// Hidden states `h_0..h_T`, `(T + 1) x H`; `h_0 = 0`.
    pub hidden: Vec<f64>,
}

impl DirectionCache {
    pub fn steps(&self) -> usize {
        self.tokens.len()
    }

    /// Hidden state after the last consumed token.
    pub fn last_hidden(&self, hidden_dim: usize) -> &[f64] {
        let t = self.steps();
        &self.hidden[t * hidden_dim..(t + 1) * hidden_dim]
    }
}

pub(crate) fn run_forward(
    p: &LstmParams,
    embedding: &Matrix,
    tokens: impl Iterator<Item = usize>,
) -> DirectionCache {
    let hd = p.hidden_dim();
    let tokens: Vec<usize> = tokens.collect();
    let steps = tokens.len();
    let mut gates = vec![0.0; steps * 4 * hd];
    let mut cells = vec![0.0; (steps + 1) * hd];
    let mut hidden = vec![0.0; (steps + 1) * hd];

    for (t, &tok) in tokens.iter().enumerate() {
        let z = &mut gates[t * 4 * hd..(t + 1) * 4 * hd];
        z.copy_from_slice(&p.b);
        p.w.matvec_acc(embedding.row(tok), z);
        p.u.matvec_acc(&hidden[t * hd..(t + 1) * hd], z);
        let (zi, rest) = z.split_at_mut(hd);
        let (zf, rest) = rest.split_at_mut(hd);
        let (zg, zo) = rest.split_at_mut(hd);
        for k in 0..hd {
            zi[k] = sigmoid(zi[k]);
            zf[k] = sigmoid(zf[k]);
            zg[k] = zg[k].tanh();
            zo[k] = sigmoid(zo[k]);
        }
        let (c_prev, c_next) = cells.split_at_mut((t + 1) * hd);
        let c_prev = &c_prev[t * hd..];
        let c_next = &mut c_next[..hd];
        let h_next = &mut hidden[(t + 1) * hd..(t + 2) * hd];
        for k in 0..hd {
            c_next[k] = zf[k] * c_prev[k] + zi[k] * zg[k];
            h_next[k] = zo[k] * c_next[k].tanh();
        }
    }
    DirectionCache {
        tokens,
        gates,
        cells,
        hidden,
    }
}

/// Backpropagates `d_last` (gradient of the loss w.r.t. the final hidden
/// state) through every step, accumulating into `grad` and `grad_embedding`.
pub(crate) fn run_backward(
    p: &LstmParams,
    embedding: &Matrix,
    cache: &DirectionCache,
    d_last: &[f64],
    grad: &mut LstmParams,
    grad_embedding: &mut Matrix,
) {
    let hd = p.hidden_dim();
    let mut dh = d_last.to_vec();
    let mut dc = vec![0.0; hd];
    let mut dz = vec![0.0; 4 * hd];
    let mut dh_prev = vec![0.0; hd];

    for t in (0..cache.steps()).rev() {
        let g = &cache.gates[t * 4 * hd..(t + 1) * 4 * hd];
        let c_prev = &cache.cells[t * hd..(t + 1) * hd];
        let c = &cache.cells[(t + 1) * hd..(t + 2) * hd];
        let h_prev = &cache.hidden[t * hd..(t + 1) * hd];
        for k in 0..hd {
            let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
            let tc = c[k].tanh();
            let d_o = dh[k] * tc;
            dc[k] += dh[k] * o * (1.0 - tc * tc);
            let d_i = dc[k] * gg;
            let d_g = dc[k] * i;
            let d_f = dc[k] * c_prev[k];
            dz[k] = d_i * i * (1.0 - i);
            dz[hd + k] = d_f * f * (1.0 - f);
            dz[2 * hd + k] = d_g * (1.0 - gg * gg);
            dz[3 * hd + k] = d_o * o * (1.0 - o);
            dc[k] *= f;
        }
        let tok = cache.tokens[t];
        for (gb, d) in grad.b.iter_mut().zip(&dz) {
            *gb += d;
        }
        grad.w.outer_acc(&dz, embedding.row(tok));
        grad.u.outer_acc(&dz, h_prev);
        p.w.matvec_t_acc(&dz, grad_embedding.row_mut(tok));
        dh_prev.fill(0.0);
        p.u.matvec_t_acc(&dz, &mut dh_prev);
        std::mem::swap(&mut dh, &mut dh_prev);
    }
}
