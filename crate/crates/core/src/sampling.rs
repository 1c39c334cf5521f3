//! Synthetic rows from a trained bundle.
//!
//! Row `r` draws its latent vector from its own stream of `seed`, so output
//! does not depend on how rows are grouped into batches.

use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generator_forward, EmbeddingGrad};
use crate::neural::{Graph, Tensor};
use crate::schema::Table;
use crate::training::ModelBundle;
use crate::transform::stream_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRequest {
    pub n_rows: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl SampleRequest {
    pub fn new(n_rows: usize, seed: u64) -> Self {
        SampleRequest {
            n_rows,
            seed,
            batch_size: 1000,
        }
    }
}

/// The latent vector of row `row` under `seed`.
pub fn latent(seed: u64, row: usize, n_z: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, row as u64);
    (0..n_z).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn sample(bundle: &ModelBundle, req: &SampleRequest) -> Result<Table> {
    if req.n_rows == 0 || req.batch_size == 0 {
        return Err(Error::ConfigInvalid("n_rows and batch_size must be positive".into()));
    }
    let mut rows = Vec::with_capacity(req.n_rows);
    let mut start = 0;
    while start < req.n_rows {
        let end = (start + req.batch_size).min(req.n_rows);
        rows.extend(sample_range(bundle, req.seed, start..end)?.rows().iter().cloned());
        start = end;
    }
    Table::new(bundle.transformer.schema.clone(), rows)
}

/// Rows `range` of the table `sample` would produce for `seed`.
pub fn sample_range(bundle: &ModelBundle, seed: u64, range: Range<usize>) -> Result<Table> {
    let model = bundle.config.model();
    let plan = bundle.plan();
    let n = range.len();
    let mut z = Vec::with_capacity(n * model.n_z);
    for r in range {
        z.extend(latent(seed, r, model.n_z));
    }
    let mut g = Graph::new();
    let params = bundle.params.bind(&mut g, false);
    let zv = g.constant(Tensor::matrix(n, model.n_z, z));
    let out = generator_forward(&mut g, &params, &plan, &model, zv, EmbeddingGrad::Detached)
        .map_err(|e| Error::InvalidBundle(e.to_string()))?;
    let flat = g.value(out.flat);
    let rows = (0..n)
        .map(|r| bundle.transformer.decode_row(flat.row_slice(r)))
        .collect::<Result<Vec<_>>>()?;
    Table::new(bundle.transformer.schema.clone(), rows)
}
