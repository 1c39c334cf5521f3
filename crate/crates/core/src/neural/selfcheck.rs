//! Finite-difference checks of every graph primitive on random shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::grad_check;
use super::graph::{Axis, Graph, Var};
use super::layers::{linear, lstm_cell, LstmWeights};
use super::tensor::Tensor;
use super::LEAKY_SLOPE;
use crate::error::Result;

/// Tolerance for differentiable primitives.
pub const SMOOTH_TOL: f64 = 1e-6;
/// Tolerance for primitives with kinks (LeakyReLU, the L1 diversity kernel).
pub const KINKED_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl PrimitiveCheck {
    pub fn passed(&self) -> bool {
        self.error < self.tolerance
    }
}

fn rand_t(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::uniform(rows, cols, 1.5, rng)
}

/// Entries bounded away from zero, so kinks are never straddled by the step.
fn off_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Reduces `x` to a scalar with fixed random weights so every entry gets a
/// distinct upstream gradient.
fn weigh(g: &mut Graph, x: Var, w: &Tensor) -> Result<Var> {
    let w = g.constant(w.clone());
    let y = g.mul(x, w)?;
    Ok(g.mean_all(y))
}

/// Runs one check per primitive with shapes drawn from `seed`.
pub fn primitive_checks(seed: u64) -> Result<Vec<PrimitiveCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(2..6);
    let c = rng.random_range(2..6);
    let k = rng.random_range(2..6);
    let w_rc = rand_t(&mut rng, r, c);
    let mut out = Vec::new();
    let mut push = |name, error, tolerance| out.push(PrimitiveCheck { name, error, tolerance });

    let (a, b) = (rand_t(&mut rng, r, k), rand_t(&mut rng, k, c));
    push(
        "matmul",
        grad_check(&[a, b], |g, v| {
            let y = g.matmul(v[0], v[1])?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );

    let (x, bias) = (rand_t(&mut rng, r, c), rand_t(&mut rng, 1, c));
    push(
        "add_row",
        grad_check(&[x, bias], |g, v| {
            let y = g.add_row(v[0], v[1])?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );

    let (x, y) = (rand_t(&mut rng, r, c), rand_t(&mut rng, r, c));
    push(
        "add",
        grad_check(&[x.clone(), y.clone()], |g, v| {
            let s = g.add(v[0], v[1])?;
            weigh(g, s, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "mul",
        grad_check(&[x.clone(), y], |g, v| {
            let s = g.mul(v[0], v[1])?;
            weigh(g, s, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    let s = rng.random_range(-2.0..2.0);
    push(
        "scale",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.scale(v[0], s);
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "tanh",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.tanh(v[0]);
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "sigmoid",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.sigmoid(v[0]);
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "log_sigmoid",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.log_sigmoid(v[0]);
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "softmax",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.softmax(v[0]);
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    push(
        "leaky_relu",
        grad_check(&[off_zero(&mut rng, r, c)], |g, v| {
            let y = g.leaky_relu(v[0], LEAKY_SLOPE);
            weigh(g, y, &w_rc)
        })?,
        KINKED_TOL,
    );
    push(
        "mean_all",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.tanh(v[0]);
            Ok(g.mean_all(y))
        })?,
        SMOOTH_TOL,
    );
    let w_row = rand_t(&mut rng, 1, c);
    push(
        "mean_rows",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.mean_rows(v[0]);
            weigh(g, y, &w_row)
        })?,
        SMOOTH_TOL,
    );

    let extra = rng.random_range(1..4);
    let (left, right) = (rand_t(&mut rng, r, c), rand_t(&mut rng, r, extra));
    let w_cols = rand_t(&mut rng, r, c + extra);
    push(
        "concat_cols",
        grad_check(&[left, right], |g, v| {
            let y = g.concat(&[v[0], v[1]], Axis::Cols)?;
            weigh(g, y, &w_cols)
        })?,
        SMOOTH_TOL,
    );
    let (top, bottom) = (rand_t(&mut rng, r, c), rand_t(&mut rng, extra, c));
    let w_rows = rand_t(&mut rng, r + extra, c);
    push(
        "concat_rows",
        grad_check(&[top, bottom], |g, v| {
            let y = g.concat(&[v[0], v[1]], Axis::Rows)?;
            weigh(g, y, &w_rows)
        })?,
        SMOOTH_TOL,
    );

    let r0 = rng.random_range(0..r);
    let c0 = rng.random_range(0..c);
    let w_sub = rand_t(&mut rng, r - r0, c - c0);
    push(
        "slice",
        grad_check(std::slice::from_ref(&x), |g, v| {
            let y = g.slice(v[0], r0..r, c0..c)?;
            weigh(g, y, &w_sub)
        })?,
        SMOOTH_TOL,
    );

    let table = rand_t(&mut rng, k, c);
    let indices: Vec<usize> = (0..r).map(|_| rng.random_range(0..k)).collect();
    push(
        "embedding_lookup",
        grad_check(std::slice::from_ref(&table), |g, v| {
            let y = g.embedding_lookup(v[0], &indices)?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );
    // The hard argmax has zero derivative almost everywhere, so only the
    // table side is comparable with finite differences.
    let probs = rand_t(&mut rng, r, k);
    push(
        "straight_through_embed",
        grad_check(&[table], |g, v| {
            let p = g.constant(probs.clone());
            let y = g.straight_through_embed(p, v[0])?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );

    let t = rng.random_range(1..5);
    let mut inputs = vec![rand_t(&mut rng, 1, t)];
    inputs.extend((0..t).map(|_| rand_t(&mut rng, r, c)));
    push(
        "attention",
        grad_check(&inputs, |g, v| {
            let y = g.attention(v[0], &v[1..])?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );

    let (b_dim, c_dim) = (rng.random_range(1..4), rng.random_range(1..4));
    let m = off_zero(&mut rng, r, b_dim * c_dim);
    let w_div = rand_t(&mut rng, r, b_dim);
    push(
        "diversity",
        grad_check(&[m], |g, v| {
            let y = g.diversity(v[0], b_dim, c_dim)?;
            weigh(g, y, &w_div)
        })?,
        KINKED_TOL,
    );

    // With two rows the normalized output is +-1 whatever the input, leaving
    // input gradients at the level of finite-difference noise.
    let rb = rng.random_range(4..9);
    let (xb, w_b) = (rand_t(&mut rng, rb, c), rand_t(&mut rng, rb, c));
    let (gamma, beta) = (rand_t(&mut rng, 1, c), rand_t(&mut rng, 1, c));
    push(
        "batch_norm",
        grad_check(&[xb, gamma, beta], |g, v| {
            let y = g.batch_norm(v[0], v[1], v[2])?;
            weigh(g, y, &w_b)
        })?,
        SMOOTH_TOL,
    );

    let q: Vec<f64> = {
        let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    };
    let logits = rand_t(&mut rng, 1, c);
    push(
        "kl_to",
        grad_check(&[logits], |g, v| {
            let p = g.softmax(v[0]);
            g.kl_to(p, &q, 1e-3)
        })?,
        SMOOTH_TOL,
    );

    let labels: Vec<usize> = (0..r).map(|_| rng.random_range(0..c)).collect();
    push(
        "softmax_cross_entropy",
        grad_check(std::slice::from_ref(&x), |g, v| g.softmax_cross_entropy(v[0], &labels))?,
        SMOOTH_TOL,
    );

    let (xin, w, bias) = (rand_t(&mut rng, r, k), rand_t(&mut rng, k, c), rand_t(&mut rng, 1, c));
    push(
        "linear",
        grad_check(&[xin, w, bias], |g, v| {
            let y = linear(g, v[0], v[1], Some(v[2]))?;
            weigh(g, y, &w_rc)
        })?,
        SMOOTH_TOL,
    );

    let n_h = c;
    let lstm_inputs = [
        rand_t(&mut rng, r, k),
        rand_t(&mut rng, r, n_h),
        rand_t(&mut rng, r, n_h),
        Tensor::uniform(k + n_h, 4 * n_h, 0.8, &mut rng),
        rand_t(&mut rng, 1, 4 * n_h),
    ];
    let w_c = rand_t(&mut rng, r, n_h);
    push(
        "lstm_cell",
        grad_check(&lstm_inputs, |g, v| {
            let (h, cell) = lstm_cell(g, v[0], v[1], v[2], LstmWeights { w: v[3], b: v[4] })?;
            let a = weigh(g, h, &w_rc)?;
            let b = weigh(g, cell, &w_c)?;
            g.add(a, b)
        })?,
        SMOOTH_TOL,
    );

    Ok(out)
}
