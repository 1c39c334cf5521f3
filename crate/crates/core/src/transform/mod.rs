//! Reversible conversion between table rows and the flat `(v, u, d)` vectors
//! the networks consume.
//!
//! A continuous cell becomes a clipped offset `v` from its most probable
//! mixture component plus the component probabilities `u`. A discrete cell
//! becomes a noise-smoothed one-hot `d`. The flat layout groups all `v`s,
//! then all `u`s, then all `d`s, each group in schema order.

mod encode;
mod gmm;
mod kde;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use encode::{
    decode_continuous, decode_discrete, encode_category, encode_continuous, encode_discrete,
    raw_offset, smooth_one_hot, ContinuousEncoding, DiscreteEncoding, DEFAULT_GAMMA, V_CLIP,
};
pub use gmm::{fit_gmm, fit_gmm_traced, sigma_floor, GmmConfig, GmmFit, GmmParams};
pub use kde::{
    count_modes, count_modes_with, kde_density, silverman_bandwidth, KdeModeReport, KdeOptions,
    DEFAULT_GRID_POINTS, DEFAULT_MIN_RELATIVE_HEIGHT,
};

use crate::error::{Error, Result};
use crate::neural::{argmax, Tensor};
use crate::schema::{ColumnKind, Schema, Table, Value};

/// Independent generator for `stream` under `seed` (e.g. one per row), so
/// results do not depend on processing order or batching.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformOptions {
    pub m: usize,
    pub gamma: f64,
    /// Include mixture weights in `u` (posterior); `false` uses likelihoods only.
    pub weighted_u: bool,
    pub gmm_max_iter: usize,
    pub gmm_tol: f64,
}

impl Default for TransformOptions {
    fn default() -> Self {
        TransformOptions {
            m: 5,
            gamma: DEFAULT_GAMMA,
            weighted_u: true,
            gmm_max_iter: 200,
            gmm_tol: 1e-6,
        }
    }
}

/// Where one column lives inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    Continuous { v: usize, u: Range<usize> },
    Discrete { d: Range<usize> },
}

/// Per-column slots in schema order over a flat vector of width `dim`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub dim: usize,
    pub slots: Vec<Slot>,
}

impl Layout {
    pub fn new(schema: &Schema, m: usize) -> Layout {
        let n_c = schema.n_continuous();
        let mut next_v = 0;
        let mut next = n_c;
        let mut slots = Vec::with_capacity(schema.len());
        for _ in 0..n_c {
            slots.push(Slot::Continuous {
                v: next_v,
                u: next..next + m,
            });
            next_v += 1;
            next += m;
        }
        let mut discrete = Vec::new();
        for col in schema.columns.iter().filter(|c| !c.is_continuous()) {
            discrete.push(Slot::Discrete {
                d: next..next + col.cardinality(),
            });
            next += col.cardinality();
        }
        // Reorder into schema order.
        let mut cont = slots.into_iter();
        let mut disc = discrete.into_iter();
        let slots = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => cont.next().expect("continuous slot"),
                ColumnKind::Discrete => disc.next().expect("discrete slot"),
            })
            .collect();
        Layout { dim: next, slots }
    }

    /// Every flat index covered exactly once.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![0u8; self.dim];
        for slot in &self.slots {
            let ranges: Vec<Range<usize>> = match slot {
                Slot::Continuous { v, u } => vec![*v..*v + 1, u.clone()],
                Slot::Discrete { d } => vec![d.clone()],
            };
            for r in ranges {
                for i in r {
                    match seen.get_mut(i) {
                        Some(s) => *s += 1,
                        None => return false,
                    }
                }
            }
        }
        seen.iter().all(|&s| s == 1)
    }
}

/// Encoded rows `(batch, dim)` and their layout.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedBatch {
    pub flat: Tensor,
    pub layout: Layout,
}

/// Fitted mixtures and layout for one schema. Immutable after fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transformer {
    pub schema: Schema,
    pub options: TransformOptions,
    /// One mixture per column; `None` for discrete columns.
    pub gmms: Vec<Option<GmmParams>>,
    pub layout: Layout,
}

pub fn fit_transformer(table: &Table, options: TransformOptions, seed: u64) -> Result<Transformer> {
    if options.m == 0 {
        return Err(Error::ConfigInvalid("m must be positive".into()));
    }
    encode::check_gamma(options.gamma)?;
    if table.is_empty() {
        return Err(Error::EmptyInput);
    }
    let schema = table.schema().clone();
    let mut gmms = Vec::with_capacity(schema.len());
    for (i, col) in schema.columns.iter().enumerate() {
        gmms.push(if col.is_continuous() {
            let values = table.real_column(i);
            let config = GmmConfig {
                m: options.m,
                max_iter: options.gmm_max_iter,
                tol: options.gmm_tol,
            };
            Some(fit_gmm_traced(&values, config, seed.wrapping_add(i as u64))?.params)
        } else {
            None
        });
    }
    let layout = Layout::new(&schema, options.m);
    Ok(Transformer {
        schema,
        options,
        gmms,
        layout,
    })
}

impl Transformer {
    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn m(&self) -> usize {
        self.options.m
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.gmms.len() != self.schema.len() || self.layout.slots.len() != self.schema.len() {
            return Err(Error::InvalidBundle("transformer arrays disagree with schema".into()));
        }
        for (col, gmm) in self.schema.columns.iter().zip(&self.gmms) {
            match (col.kind, gmm) {
                (ColumnKind::Continuous, Some(g)) if g.m() == self.options.m => g.validate()?,
                (ColumnKind::Discrete, None) => {}
                _ => {
                    return Err(Error::InvalidBundle(format!(
                        "mixture entry for column {} does not match its kind",
                        col.name
                    )))
                }
            }
        }
        if self.layout != Layout::new(&self.schema, self.options.m) {
            return Err(Error::InvalidBundle("layout does not match schema".into()));
        }
        Ok(())
    }

    fn gmm(&self, col: usize) -> &GmmParams {
        self.gmms[col].as_ref().expect("continuous column has a mixture")
    }

    /// Writes the encoding of `row` into `out` (length `dim`).
    pub fn encode_row_into(&self, row: &[Value], rng: &mut ChaCha8Rng, out: &mut [f64]) -> Result<()> {
        for (c, (slot, cell)) in self.layout.slots.iter().zip(row).enumerate() {
            match (slot, cell) {
                (Slot::Continuous { v, u }, Value::Real(x)) => {
                    let enc = encode_continuous(*x, self.gmm(c), self.options.weighted_u)?;
                    out[*v] = enc.v;
                    out[u.clone()].copy_from_slice(&enc.u);
                }
                (Slot::Discrete { d }, Value::Category(k)) => {
                    let enc = encode_category(*k, d.len(), self.options.gamma, rng);
                    out[d.clone()].copy_from_slice(&enc.d);
                }
                _ => {
                    return Err(Error::SchemaMismatch(format!(
                        "cell kind differs from column {}",
                        self.schema.columns[c].name
                    )))
                }
            }
        }
        Ok(())
    }

    /// Encodes every row; row `r` draws its noise from `stream_rng(seed, r)`.
    pub fn transform_table(&self, table: &Table, seed: u64) -> Result<TransformedBatch> {
        self.check_schema(table.schema())?;
        let dim = self.dim();
        let mut data = vec![0.0; table.n_rows() * dim];
        for (r, row) in table.rows().iter().enumerate() {
            let mut rng = stream_rng(seed, r as u64);
            self.encode_row_into(row, &mut rng, &mut data[r * dim..(r + 1) * dim])?;
        }
        Ok(TransformedBatch {
            flat: Tensor::matrix(table.n_rows(), dim, data),
            layout: self.layout.clone(),
        })
    }

    pub fn decode_row(&self, flat: &[f64]) -> Result<Vec<Value>> {
        if flat.len() != self.dim() {
            return Err(Error::LengthMismatch {
                expected: self.dim(),
                got: flat.len(),
            });
        }
        Ok(self
            .layout
            .slots
            .iter()
            .enumerate()
            .map(|(c, slot)| match slot {
                Slot::Continuous { v, u } => {
                    let enc = ContinuousEncoding {
                        v: flat[*v],
                        u: flat[u.clone()].to_vec(),
                    };
                    Value::Real(decode_continuous(&enc, self.gmm(c)))
                }
                Slot::Discrete { d } => Value::Category(argmax(&flat[d.clone()])),
            })
            .collect())
    }

    pub fn inverse_transform(&self, batch: &TransformedBatch) -> Result<Table> {
        if batch.layout != self.layout || batch.flat.cols() != self.dim() {
            return Err(Error::SchemaMismatch("batch layout differs from transformer".into()));
        }
        let rows = (0..batch.flat.rows())
            .map(|r| self.decode_row(batch.flat.row_slice(r)))
            .collect::<Result<Vec<_>>>()?;
        Table::new(self.schema.clone(), rows)
    }

    /// The interval every decoded value of column `col` falls in.
    pub fn continuous_range(&self, col: usize) -> Option<(f64, f64)> {
        let g = self.gmms.get(col)?.as_ref()?;
        let lo = (0..g.m())
            .map(|k| g.means[k] - 2.0 * V_CLIP * g.stds[k])
            .fold(f64::INFINITY, f64::min);
        let hi = (0..g.m())
            .map(|k| g.means[k] + 2.0 * V_CLIP * g.stds[k])
            .fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        let same = schema.len() == self.schema.len()
            && schema
                .columns
                .iter()
                .zip(&self.schema.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind && a.categories == b.categories);
        if same {
            Ok(())
        } else {
            Err(Error::SchemaMismatch("table schema differs from the fitted schema".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::ColumnMeta;
    use rand::Rng;

    fn mixed_schema() -> Schema {
        Schema::new(vec![
            ColumnMeta::continuous("c1"),
            ColumnMeta::discrete("d1", ["a", "b", "c"]),
            ColumnMeta::continuous("c2"),
            ColumnMeta::discrete("d2", ["x", "y"]),
        ])
        .unwrap()
    }

    fn random_table(n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| {
                vec![
                    Value::Real(rng.random_range(-5.0..5.0)),
                    Value::Category(rng.random_range(0..3)),
                    Value::Real(rng.random_range(100.0..200.0)),
                    Value::Category(rng.random_range(0..2)),
                ]
            })
            .collect();
        Table::new(mixed_schema(), rows).unwrap()
    }

    #[test]
    fn layout_dimension_formula() {
        // n_c (m + 1) + sum |D_i| = 2 * 6 + 5
        let layout = Layout::new(&mixed_schema(), 5);
        assert_eq!(layout.dim, 17);
        assert!(layout.is_partition());
        assert_eq!(
            layout.slots[0],
            Slot::Continuous { v: 0, u: 2..7 }
        );
        assert_eq!(layout.slots[2], Slot::Continuous { v: 1, u: 7..12 });
        assert_eq!(layout.slots[1], Slot::Discrete { d: 12..15 });
        assert_eq!(layout.slots[3], Slot::Discrete { d: 15..17 });
    }

    #[test]
    fn layout_without_continuous() {
        let s = Schema::new(vec![
            ColumnMeta::discrete("a", ["p", "q", "r"]),
            ColumnMeta::discrete("b", ["p", "q"]),
        ])
        .unwrap();
        let t = Table::new(s, vec![vec![Value::Category(0), Value::Category(1)]]).unwrap();
        let tr = fit_transformer(&t, TransformOptions::default(), 0).unwrap();
        assert_eq!(tr.dim(), 5);
        assert!(tr.gmms.iter().all(Option::is_none));
    }

    #[test]
    fn census_shaped_continuous_width() {
        let cols = (0..7).map(|i| ColumnMeta::continuous(format!("c{i}"))).collect();
        let s = Schema::new(cols).unwrap();
        assert_eq!(Layout::new(&s, 5).dim, 42);
    }

    #[test]
    fn single_row_hand_encoding() {
        let s = Schema::new(vec![
            ColumnMeta::continuous("c"),
            ColumnMeta::discrete("d", ["x", "y"]),
        ])
        .unwrap();
        let table = Table::new(s.clone(), vec![vec![Value::Real(0.5), Value::Category(0)]]).unwrap();
        let tr = Transformer {
            schema: s.clone(),
            options: TransformOptions {
                m: 2,
                gamma: 0.0,
                ..TransformOptions::default()
            },
            gmms: vec![
                Some(GmmParams {
                    weights: vec![1.0, 0.0],
                    means: vec![0.0, 0.0],
                    stds: vec![1.0, 1.0],
                }),
                None,
            ],
            layout: Layout::new(&s, 2),
        };
        tr.validate().unwrap();
        let batch = tr.transform_table(&table, 0).unwrap();
        assert_eq!(batch.flat.data(), &[0.25, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(tr.inverse_transform(&batch).unwrap(), table);
    }

    #[test]
    fn round_trip_large_table() {
        let t = random_table(10_000, 5);
        let tr = fit_transformer(&t, TransformOptions::default(), 1).unwrap();
        let batch = tr.transform_table(&t, 2).unwrap();
        let back = tr.inverse_transform(&batch).unwrap();
        let mut mismatches = 0;
        for (a, b) in t.rows().iter().zip(back.rows()) {
            for c in [1, 3] {
                if a[c] != b[c] {
                    mismatches += 1;
                }
            }
        }
        assert_eq!(mismatches, 0);
        for r in 0..batch.flat.rows() {
            let row = batch.flat.row_slice(r);
            for slot in &batch.layout.slots {
                let simplex = match slot {
                    Slot::Continuous { v, u } => {
                        assert!(row[*v].abs() <= V_CLIP);
                        &row[u.clone()]
                    }
                    Slot::Discrete { d } => &row[d.clone()],
                };
                assert!(simplex.iter().all(|&x| x >= 0.0));
                assert!((simplex.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn deterministic_noise_per_seed() {
        let t = random_table(50, 9);
        let tr = fit_transformer(&t, TransformOptions::default(), 3).unwrap();
        assert_eq!(tr, fit_transformer(&t, TransformOptions::default(), 3).unwrap());
        let a = tr.transform_table(&t, 4).unwrap();
        let b = tr.transform_table(&t, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, tr.transform_table(&t, 5).unwrap());
        // Changing one row leaves the encodings of the others untouched.
        let mut rows = t.rows().to_vec();
        rows[0][1] = Value::Category((t.rows()[0][1].as_category().unwrap() + 1) % 3);
        let changed = Table::new(t.schema().clone(), rows).unwrap();
        let c = tr.transform_table(&changed, 4).unwrap();
        assert_ne!(c.flat.row_slice(0), a.flat.row_slice(0));
        for r in 1..50 {
            assert_eq!(c.flat.row_slice(r), a.flat.row_slice(r));
        }
    }

    #[test]
    fn transformer_serializes() {
        let t = random_table(200, 1);
        let tr = fit_transformer(&t, TransformOptions::default(), 0).unwrap();
        let text = serde_json::to_string(&tr).unwrap();
        let back: Transformer = serde_json::from_str(&text).unwrap();
        assert_eq!(back, tr);
    }
}
