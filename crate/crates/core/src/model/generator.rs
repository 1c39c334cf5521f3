use rand::Rng;

use super::plan::{StepKind, StepPlan};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::neural::{init_weight, linear, lstm_from_gates, Axis, Bound, Graph, ParamStore, Tensor, Var};
use crate::schema::Schema;

/// How gradient reaches the category probabilities through the hard
/// argmax embedding that follows a discrete step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingGrad {
    /// Backward treats the selection as identity: `d` receives `grad * E^T`.
    StraightThrough,
    /// Only the embedding table receives gradient. Matches finite differences,
    /// which cannot see through the argmax.
    Detached,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnOutput {
    Continuous { v: Var, u: Var },
    Discrete { d: Var },
}

#[derive(Clone, Debug)]
pub struct GeneratorOutput {
    /// Head outputs in plan order.
    pub steps: Vec<Var>,
    /// LSTM outputs `h_1..h_T`.
    pub hidden: Vec<Var>,
    /// Attention contexts `a_1..a_T`.
    pub contexts: Vec<Var>,
    /// Per-column outputs in schema order.
    pub columns: Vec<ColumnOutput>,
    /// `v_1..v_nc ⊕ u_1..u_nc ⊕ d_1..d_nd`, matching the transform layout.
    pub flat: Var,
}

pub(crate) fn head_name(t: usize) -> (String, String) {
    (format!("gen/head/{t}/w"), format!("gen/head/{t}/b"))
}

pub fn init_generator<R: Rng + ?Sized>(
    schema: &Schema,
    plan: &StepPlan,
    config: &ModelConfig,
    rng: &mut R,
) -> ParamStore {
    let (n_z, n_h, n_f) = (config.n_z, config.n_h, config.n_f);
    let t_len = plan.len();
    let mut p = ParamStore::new();
    p.insert("gen/lstm/w", init_weight(n_z + n_f + 2 * n_h, 4 * n_h, rng));
    p.insert("gen/lstm/b", Tensor::zeros(1, 4 * n_h));
    p.insert("gen/hidden/w", init_weight(n_h, n_f, rng));
    p.insert("gen/hidden/b", Tensor::zeros(1, n_f));
    for (t, step) in plan.steps.iter().enumerate() {
        let (w, b) = head_name(t);
        p.insert(w, init_weight(n_f, step.width, rng));
        p.insert(b, Tensor::zeros(1, step.width));
    }
    for (i, col) in schema.columns.iter().enumerate() {
        if !col.is_continuous() {
            p.insert(format!("gen/embed/{i}"), init_weight(col.cardinality(), n_f, rng));
        }
    }
    p.insert("gen/attention", Tensor::zeros(t_len, t_len));
    p.insert("gen/go", Tensor::uniform(1, n_f, 0.1, rng));
    p
}

/// Runs the generator over `z` `(B, n_z)`. The same `z` is fed at every step.
pub fn generator_forward(
    g: &mut Graph,
    params: &Bound,
    plan: &StepPlan,
    config: &ModelConfig,
    z: Var,
    embedding: EmbeddingGrad,
) -> Result<GeneratorOutput> {
    let (batch, nz) = {
        let t = g.value(z);
        (t.rows(), t.cols())
    };
    if nz != config.n_z {
        return Err(Error::ShapeMismatch {
            op: "generator_forward",
            detail: format!("z has {nz} columns, expected {}", config.n_z),
        });
    }
    let n_h = config.n_h;
    // LSTM input rows are ordered z, f, a, h. z is the same at every step, so
    // its share of the gates is computed once.
    let lstm_w = params.get("gen/lstm/w")?;
    let lstm_rows = g.value(lstm_w).rows();
    let w_z = g.slice(lstm_w, 0..nz, 0..4 * n_h)?;
    let w_rest = g.slice(lstm_w, nz..lstm_rows, 0..4 * n_h)?;
    let z_gates = linear(g, z, w_z, Some(params.get("gen/lstm/b")?))?;
    let wh = params.get("gen/hidden/w")?;
    let bh = params.get("gen/hidden/b")?;
    let attn = params.get("gen/attention")?;

    let ones = g.constant(Tensor::filled(batch, 1, 1.0));
    let go = params.get("gen/go")?;
    let mut carried = g.matmul(ones, go)?;
    let mut context = g.constant(Tensor::zeros(batch, n_h));
    let mut h = g.constant(Tensor::zeros(batch, n_h));
    let mut c = g.constant(Tensor::zeros(batch, n_h));

    let mut steps = Vec::with_capacity(plan.len());
    let mut hidden = Vec::with_capacity(plan.len());
    let mut contexts = Vec::with_capacity(plan.len());
    for (t, step) in plan.steps.iter().enumerate() {
        let x = g.concat(&[carried, context, h], Axis::Cols)?;
        let rest = g.matmul(x, w_rest)?;
        let gates = g.add(rest, z_gates)?;
        let (h_t, c_t) = lstm_from_gates(g, gates, c)?;
        h = h_t;
        c = c_t;
        hidden.push(h);
        let pre = linear(g, h, wh, Some(bh))?;
        let f = g.tanh(pre);
        let (w, b) = head_name(t);
        let logits = linear(g, f, params.get(&w)?, Some(params.get(&b)?))?;
        let out = match step.kind {
            StepKind::Value => g.tanh(logits),
            StepKind::Cluster | StepKind::Discrete => g.softmax(logits),
        };
        steps.push(out);
        carried = match step.kind {
            StepKind::Discrete => {
                let table = params.get(&format!("gen/embed/{}", step.column))?;
                match embedding {
                    EmbeddingGrad::StraightThrough => g.straight_through_embed(out, table)?,
                    EmbeddingGrad::Detached => {
                        let idx = g.value(out).argmax_rows();
                        g.embedding_lookup(table, &idx)?
                    }
                }
            }
            _ => f,
        };
        // a_t attends over h_1..h_t with the first t+1 entries of row t.
        let row = g.slice(attn, t..t + 1, 0..t + 1)?;
        context = g.attention(row, &hidden)?;
        contexts.push(context);
    }

    let n_cols = plan.steps.iter().map(|s| s.column + 1).max().unwrap_or(0);
    let mut values: Vec<Option<Var>> = vec![None; n_cols];
    let mut columns: Vec<Option<ColumnOutput>> = vec![None; n_cols];
    for (step, &out) in plan.steps.iter().zip(&steps) {
        match step.kind {
            StepKind::Value => values[step.column] = Some(out),
            StepKind::Cluster => {
                let v = values[step.column].expect("value step precedes cluster step");
                columns[step.column] = Some(ColumnOutput::Continuous { v, u: out });
            }
            StepKind::Discrete => columns[step.column] = Some(ColumnOutput::Discrete { d: out }),
        }
    }
    let columns: Vec<ColumnOutput> = columns.into_iter().map(|c| c.expect("every column planned")).collect();
    let mut vs = Vec::new();
    let mut us = Vec::new();
    let mut ds = Vec::new();
    for col in &columns {
        match *col {
            ColumnOutput::Continuous { v, u } => {
                vs.push(v);
                us.push(u);
            }
            ColumnOutput::Discrete { d } => ds.push(d),
        }
    }
    vs.extend(us);
    vs.extend(ds);
    let flat = g.concat(&vs, Axis::Cols)?;
    Ok(GeneratorOutput {
        steps,
        hidden,
        contexts,
        columns,
        flat,
    })
}
