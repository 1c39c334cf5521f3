use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, Table, Value};

/// Cost of a mismatch on a continuous column whose standard deviation is 0.
pub const DEGENERATE_PENALTY: f64 = 1e6;

pub const DEFAULT_NN_BINS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnDistanceReport {
    pub distances: Vec<f64>,
    pub bins: Vec<HistBin>,
}

impl NnDistanceReport {
    pub fn fraction_exact(&self) -> f64 {
        if self.distances.is_empty() {
            return 0.0;
        }
        self.distances.iter().filter(|&&d| d == 0.0).count() as f64 / self.distances.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.distances.iter().sum::<f64>() / self.distances.len().max(1) as f64
    }

    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count\n");
        for b in &self.bins {
            out.push_str(&format!("{},{},{}\n", b.left, b.right, b.count));
        }
        out
    }
}

/// Per-column scale for the mixed row distance: population standard deviation
/// of each continuous column of `standard`, `None` for discrete columns.
pub fn column_scales(standard: &Table) -> Vec<Option<f64>> {
    standard
        .schema()
        .columns
        .iter()
        .enumerate()
        .map(|(i, col)| match col.kind {
            ColumnKind::Continuous => {
                let xs = standard.real_column(i);
                let n = xs.len().max(1) as f64;
                let mean = xs.iter().sum::<f64>() / n;
                Some((xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt())
            }
            ColumnKind::Discrete => None,
        })
        .collect()
}

/// `sum |c - c'| / std + sum [d != d']`.
pub fn row_distance(a: &[Value], b: &[Value], scales: &[Option<f64>]) -> f64 {
    let mut d = 0.0;
    for ((x, y), s) in a.iter().zip(b).zip(scales) {
        d += cell_distance(x, y, *s);
    }
    d
}

fn cell_distance(x: &Value, y: &Value, scale: Option<f64>) -> f64 {
    match (x, y, scale) {
        (Value::Real(x), Value::Real(y), Some(s)) => {
            if s > 0.0 {
                (x - y).abs() / s
            } else if x == y {
                0.0
            } else {
                DEGENERATE_PENALTY
            }
        }
        _ => f64::from(u8::from(x != y)),
    }
}

fn check_same_schema(probe: &Table, standard: &Table) -> Result<()> {
    if probe.schema() != standard.schema() {
        return Err(Error::SchemaMismatch(
            "probe and standard tables have different schemas".into(),
        ));
    }
    if standard.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// Distance from each probe row to its nearest standard row.
pub fn nn_distances(probe: &Table, standard: &Table) -> Result<Vec<f64>> {
    check_same_schema(probe, standard)?;
    let scales = column_scales(standard);
    Ok(probe
        .rows()
        .iter()
        .map(|p| {
            let mut best = f64::INFINITY;
            for s in standard.rows() {
                let mut d = 0.0;
                for ((x, y), sc) in p.iter().zip(s).zip(&scales) {
                    d += cell_distance(x, y, *sc);
                    if d >= best {
                        break;
                    }
                }
                if d < best {
                    best = d;
                    if best == 0.0 {
                        break;
                    }
                }
            }
            best
        })
        .collect())
}

/// Equal-width histogram on `[0, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistBin>> {
    if bins == 0 {
        return Err(Error::ConfigInvalid("bins must be positive".into()));
    }
    let max = values.iter().cloned().fold(0.0, f64::max);
    let width = if max > 0.0 { max / bins as f64 } else { 1.0 / bins as f64 };
    let mut out: Vec<HistBin> = (0..bins)
        .map(|k| HistBin {
            left: k as f64 * width,
            right: (k + 1) as f64 * width,
            count: 0,
        })
        .collect();
    for &v in values {
        let k = ((v / width) as usize).min(bins - 1);
        out[k].count += 1;
    }
    Ok(out)
}

pub fn nn_distance_hist(probe: &Table, standard: &Table, bins: usize) -> Result<NnDistanceReport> {
    let distances = nn_distances(probe, standard)?;
    let bins = histogram(&distances, bins)?;
    Ok(NnDistanceReport { distances, bins })
}
