//! Composite layers built from graph primitives.

use rand::Rng;

use super::graph::{Axis, Graph, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// `x W + b` when a bias is given, `x W` otherwise.
pub fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    match b {
        Some(b) => g.add_row(y, b),
        None => Ok(y),
    }
}

/// Weights of a single-layer LSTM: `w` is `(n_in + n_h, 4 n_h)` with gate
/// blocks ordered input, forget, output, candidate; `b` is `(1, 4 n_h)`.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w: Var,
    pub b: Var,
}

/// Standard LSTM step without peepholes. Returns `(h, c)`.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    weights: LstmWeights,
) -> Result<(Var, Var)> {
    let xh = g.concat(&[x, h_prev], Axis::Cols)?;
    let gates = linear(g, xh, weights.w, Some(weights.b))?;
    lstm_from_gates(g, gates, c_prev)
}

/// The LSTM update given pre-activation gates `(B, 4 n_h)`, for callers that
/// assemble `[x, h] W + b` themselves.
pub fn lstm_from_gates(g: &mut Graph, gates: Var, c_prev: Var) -> Result<(Var, Var)> {
    let n_h = g.value(c_prev).cols();
    let batch = g.value(gates).rows();
    let gi = g.slice(gates, 0..batch, 0..n_h)?;
    let gf = g.slice(gates, 0..batch, n_h..2 * n_h)?;
    let go = g.slice(gates, 0..batch, 2 * n_h..3 * n_h)?;
    let gc = g.slice(gates, 0..batch, 3 * n_h..4 * n_h)?;
    let i = g.sigmoid(gi);
    let f = g.sigmoid(gf);
    let o = g.sigmoid(go);
    let cand = g.tanh(gc);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Attention context over a hidden-state history; the empty history yields zeros
/// of shape `(batch, n_h)`.
pub fn attention_context(
    g: &mut Graph,
    history: &[Var],
    logits: Option<Var>,
    batch: usize,
    n_h: usize,
) -> Result<Var> {
    match (history.is_empty(), logits) {
        (true, _) | (_, None) => Ok(g.constant(Tensor::zeros(batch, n_h))),
        (false, Some(l)) => g.attention(l, history),
    }
}

/// Diversity features of `f` `(B, n)` under the learned tensor `t` `(n, b_dim * c_dim)`.
pub fn minibatch_discrimination(
    g: &mut Graph,
    f: Var,
    t: Var,
    b_dim: usize,
    c_dim: usize,
) -> Result<Var> {
    let m = g.matmul(f, t)?;
    g.diversity(m, b_dim, c_dim)
}

/// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
pub fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (rows.max(1) as f64).sqrt();
    Tensor::uniform(rows, cols, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_zero_case() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(2, 3));
        let h = g.constant(Tensor::zeros(2, 4));
        let c = g.constant(Tensor::zeros(2, 4));
        let w = g.constant(Tensor::zeros(7, 16));
        let b = g.constant(Tensor::zeros(1, 16));
        let (h1, c1) = lstm_cell(&mut g, x, h, c, LstmWeights { w, b }).unwrap();
        assert!(g.value(h1).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c1).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lstm_output_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::new();
        let x = g.constant(Tensor::uniform(5, 3, 50.0, &mut rng));
        let h = g.constant(Tensor::uniform(5, 4, 1.0, &mut rng));
        let c = g.constant(Tensor::uniform(5, 4, 20.0, &mut rng));
        let w = g.constant(Tensor::uniform(7, 16, 5.0, &mut rng));
        let b = g.constant(Tensor::uniform(1, 16, 5.0, &mut rng));
        let (h1, _) = lstm_cell(&mut g, x, h, c, LstmWeights { w, b }).unwrap();
        assert!(g.value(h1).data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn empty_history_gives_zero_context() {
        let mut g = Graph::new();
        let a = attention_context(&mut g, &[], None, 3, 5).unwrap();
        assert_eq!(g.value(a).shape(), &[3, 5]);
        assert!(g.value(a).data().iter().all(|&v| v == 0.0));
    }
}
