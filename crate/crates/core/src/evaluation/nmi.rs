use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{ColumnKind, Table};

pub const DEFAULT_BUCKETS: usize = 20;

/// Cut points at the empirical quantiles `k / n_buckets`, merged on ties.
/// Bucket id of `x` is the number of cuts `<= x`, so the buckets cover the
/// real line and unseen values still land somewhere.
pub fn quantile_cuts(values: &[f64], n_buckets: usize) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if n_buckets == 0 {
        return Err(Error::ConfigInvalid("n_buckets must be positive".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..n_buckets).map(|k| sorted[k * n / n_buckets]).collect();
    cuts.dedup();
    cuts.retain(|&c| c > sorted[0]);
    Ok(cuts)
}

pub fn bucket_id(cuts: &[f64], x: f64) -> usize {
    cuts.partition_point(|&c| c <= x)
}

/// Cuts and per-value bucket ids.
pub fn discretize_quantile(values: &[f64], n_buckets: usize) -> Result<(Vec<f64>, Vec<usize>)> {
    let cuts = quantile_cuts(values, n_buckets)?;
    let ids = values.iter().map(|&x| bucket_id(&cuts, x)).collect();
    Ok((cuts, ids))
}

/// Per-column cut points; `None` for discrete columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSpec {
    pub columns: Vec<Option<Vec<f64>>>,
}

impl BucketSpec {
    pub fn fit(table: &Table, n_buckets: usize) -> Result<BucketSpec> {
        let columns = table
            .schema()
            .columns
            .iter()
            .enumerate()
            .map(|(i, col)| match col.kind {
                ColumnKind::Continuous => quantile_cuts(&table.real_column(i), n_buckets).map(Some),
                ColumnKind::Discrete => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(BucketSpec { columns })
    }

    /// Column-major integer codes: bucket ids for continuous columns,
    /// category indices for discrete ones.
    pub fn codes(&self, table: &Table) -> Result<Vec<Vec<usize>>> {
        if self.columns.len() != table.schema().len() {
            return Err(Error::SchemaMismatch(format!(
                "bucket spec has {} columns, table has {}",
                self.columns.len(),
                table.schema().len()
            )));
        }
        Ok(self
            .columns
            .iter()
            .enumerate()
            .map(|(i, cuts)| match cuts {
                Some(cuts) => table.real_column(i).iter().map(|&x| bucket_id(cuts, x)).collect(),
                None => table.category_column(i),
            })
            .collect())
    }
}

/// Normalizer applied to mutual information.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NmiNorm {
    /// `I / sqrt(H(X) H(Y))`.
    #[default]
    Sqrt,
    /// `I / (H(X) H(Y))`.
    Product,
    /// `2 I / (H(X) + H(Y))`.
    Mean,
}

impl std::str::FromStr for NmiNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sqrt" => Ok(NmiNorm::Sqrt),
            "product" => Ok(NmiNorm::Product),
            "mean" => Ok(NmiNorm::Mean),
            other => Err(Error::ConfigInvalid(format!(
                "unknown NMI normalization {other:?} (sqrt, product, mean)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmiMatrix {
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl NmiMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("column");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (n, row) in self.names.iter().zip(&self.values) {
            out.push_str(n);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

fn entropy(counts: &[usize], n: f64, log: fn(f64) -> f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * log(p)
        })
        .sum()
}

/// Normalized mutual information of two code vectors under `log`.
pub fn nmi_codes_with(x: &[usize], y: &[usize], norm: NmiNorm, log: fn(f64) -> f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let kx = x.iter().max().map_or(0, |m| m + 1);
    let ky = y.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![0usize; kx * ky];
    let mut cx = vec![0usize; kx];
    let mut cy = vec![0usize; ky];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ky + b] += 1;
        cx[a] += 1;
        cy[b] += 1;
    }
    let n = x.len() as f64;
    let hx = entropy(&cx, n, log);
    let hy = entropy(&cy, n, log);
    if hx <= 0.0 || hy <= 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for a in 0..kx {
        for b in 0..ky {
            let c = joint[a * ky + b];
            if c > 0 {
                let pxy = c as f64 / n;
                mi += pxy * log(pxy * n * n / (cx[a] as f64 * cy[b] as f64));
            }
        }
    }
    let mi = mi.max(0.0);
    Ok(match norm {
        NmiNorm::Sqrt => mi / (hx * hy).sqrt(),
        NmiNorm::Product => mi / (hx * hy),
        NmiNorm::Mean => 2.0 * mi / (hx + hy),
    })
}

pub fn nmi_codes(x: &[usize], y: &[usize], norm: NmiNorm) -> Result<f64> {
    nmi_codes_with(x, y, norm, f64::ln)
}

/// Pairwise NMI over all columns. Continuous columns are bucketed with
/// `spec`, or with quantile buckets fitted on `table` itself.
pub fn nmi_matrix(table: &Table, spec: Option<&BucketSpec>, norm: NmiNorm) -> Result<NmiMatrix> {
    if table.n_rows() < 2 {
        return Err(Error::TooFewRows {
            needed: 2,
            got: table.n_rows(),
        });
    }
    let fitted;
    let spec = match spec {
        Some(s) => s,
        None => {
            fitted = BucketSpec::fit(table, DEFAULT_BUCKETS)?;
            &fitted
        }
    };
    let codes = spec.codes(table)?;
    let k = codes.len();
    let mut values = vec![vec![0.0; k]; k];
    for i in 0..k {
        values[i][i] = 1.0;
        for j in (i + 1)..k {
            let v = nmi_codes(&codes[i], &codes[j], norm)?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(NmiMatrix {
        names: table.schema().names(),
        values,
    })
}

/// RMSE and MAE over the strict upper triangle.
pub fn nmi_distance(a: &NmiMatrix, b: &NmiMatrix) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op: "nmi_distance",
            detail: format!("{} vs {} columns", a.len(), b.len()),
        });
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    let mut n = 0usize;
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let d = a.values[i][j] - b.values[i][j];
            sq += d * d;
            abs += d.abs();
            n += 1;
        }
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok(((sq / n as f64).sqrt(), abs / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ColumnMeta, Schema, Value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_grid_buckets() {
        let values: Vec<f64> = (0..100).map(f64::from).collect();
        let (cuts, ids) = discretize_quantile(&values, 20).unwrap();
        assert_eq!(cuts.len(), 19);
        let mut counts = [0; 20];
        ids.iter().for_each(|&i| counts[i] += 1);
        assert!(counts.iter().all(|&c| c == 5));
    }

    #[test]
    fn ties_merge_buckets() {
        let (cuts, ids) = discretize_quantile(&[4.0; 30], 20).unwrap();
        assert!(cuts.is_empty());
        assert!(ids.iter().all(|&i| i == 0));
        let values: Vec<f64> = (0..10).map(f64::from).collect();
        let (cuts, ids) = discretize_quantile(&values, 20).unwrap();
        assert!(cuts.len() + 1 <= 10);
        assert!(cuts.windows(2).all(|w| w[0] < w[1]));
        // Order-preserving partition.
        assert!(ids.windows(2).all(|w| w[0] <= w[1]));
        assert!(matches!(discretize_quantile(&[], 20), Err(Error::EmptyInput)));
    }

    #[test]
    fn iid_samples_fill_buckets_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [1000, 1234, 5000] {
            let values: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let (_, ids) = discretize_quantile(&values, 20).unwrap();
            let mut counts = [0usize; 20];
            ids.iter().for_each(|&i| counts[i] += 1);
            let target = n as f64 / 20.0;
            assert!(counts.iter().all(|&c| (c as f64 - target).abs() <= 1.0), "{counts:?}");
        }
    }

    fn table_from_counts(counts: [usize; 4]) -> Table {
        let schema = Schema::new(vec![
            ColumnMeta::discrete("x", ["0", "1"]),
            ColumnMeta::discrete("y", ["0", "1"]),
        ])
        .unwrap();
        let mut rows = Vec::new();
        for (k, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                rows.push(vec![Value::Category(k / 2), Value::Category(k % 2)]);
            }
        }
        Table::new(schema, rows).unwrap()
    }

    /// `(H(X) + H(Y) - H(X, Y)) / sqrt(H(X) H(Y))` from an explicit joint table.
    fn brute_force_2x2(counts: [usize; 4]) -> f64 {
        let n: usize = counts.iter().sum();
        let h = |cs: &[usize]| -> f64 {
            cs.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let p = c as f64 / n as f64;
                    -p * p.ln()
                })
                .sum()
        };
        let hx = h(&[counts[0] + counts[1], counts[2] + counts[3]]);
        let hy = h(&[counts[0] + counts[2], counts[1] + counts[3]]);
        (hx + hy - h(&counts)) / (hx * hy).sqrt()
    }

    #[test]
    fn contingency_examples() {
        let m = nmi_matrix(&table_from_counts([50, 0, 0, 50]), None, NmiNorm::Sqrt).unwrap();
        assert!((m.values[0][1] - 1.0).abs() < 1e-12);
        let m = nmi_matrix(&table_from_counts([25, 25, 25, 25]), None, NmiNorm::Sqrt).unwrap();
        assert!(m.values[0][1].abs() < 1e-12);
        let counts = [30, 20, 20, 30];
        let m = nmi_matrix(&table_from_counts(counts), None, NmiNorm::Sqrt).unwrap();
        assert!((m.values[0][1] - brute_force_2x2(counts)).abs() < 1e-12);
        assert!(m.values[0][1] > 0.0 && m.values[0][1] < 0.1);
    }

    #[test]
    fn constant_column_conventions() {
        let m = nmi_matrix(&table_from_counts([50, 50, 0, 0]), None, NmiNorm::Sqrt).unwrap();
        assert_eq!(m.values[0][1], 0.0);
        assert_eq!(m.values[0][0], 1.0);
        assert!(matches!(
            nmi_matrix(&table_from_counts([1, 0, 0, 0]), None, NmiNorm::Sqrt),
            Err(Error::TooFewRows { .. })
        ));
    }

    #[test]
    fn log_base_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let n = rng.random_range(2..60);
            let x: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
            let y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
            for norm in [NmiNorm::Sqrt, NmiNorm::Mean] {
                let a = nmi_codes_with(&x, &y, norm, f64::ln).unwrap();
                let b = nmi_codes_with(&x, &y, norm, f64::log2).unwrap();
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn normalizations_relate() {
        let x = [0, 0, 1, 1, 2, 2, 0, 1];
        let y = [0, 0, 1, 1, 1, 1, 0, 0];
        let s = nmi_codes(&x, &y, NmiNorm::Sqrt).unwrap();
        let p = nmi_codes(&x, &y, NmiNorm::Product).unwrap();
        let m = nmi_codes(&x, &y, NmiNorm::Mean).unwrap();
        assert!(m <= s + 1e-12, "mean {m} sqrt {s}");
        assert!(p > 0.0);
        assert_eq!("product".parse::<NmiNorm>().unwrap(), NmiNorm::Product);
        assert!("max".parse::<NmiNorm>().is_err());
    }

    #[test]
    fn distance_examples() {
        let m = |v: f64| NmiMatrix {
            names: vec!["a".into(), "b".into()],
            values: vec![vec![1.0, v], vec![v, 1.0]],
        };
        assert_eq!(nmi_distance(&m(0.3), &m(0.3)).unwrap(), (0.0, 0.0));
        let (rmse, mae) = nmi_distance(&m(0.5), &m(0.1)).unwrap();
        assert!((rmse - 0.4).abs() < 1e-12 && (mae - 0.4).abs() < 1e-12);
        let three = NmiMatrix {
            names: vec!["a".into(), "b".into(), "c".into()],
            values: vec![vec![1.0; 3]; 3],
        };
        assert!(matches!(nmi_distance(&m(0.1), &three), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn continuous_relabel_and_monotone_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let schema = Schema::new(vec![
            ColumnMeta::continuous("c"),
            ColumnMeta::discrete("d", ["p", "q", "r"]),
        ])
        .unwrap();
        let rows: Vec<Vec<Value>> = (0..500)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                let k = if x > 0.5 { 2 } else if rng.random::<bool>() { 1 } else { 0 };
                vec![Value::Real(x), Value::Category(k)]
            })
            .collect();
        let base = nmi_matrix(&Table::new(schema.clone(), rows.clone()).unwrap(), None, NmiNorm::Sqrt).unwrap();
        let transformed: Vec<Vec<Value>> = rows
            .iter()
            .map(|r| {
                let x = r[0].as_real().unwrap();
                let k = r[1].as_category().unwrap();
                vec![Value::Real(x.exp() * 3.0 + 1.0), Value::Category((k + 1) % 3)]
            })
            .collect();
        let other = nmi_matrix(&Table::new(schema, transformed).unwrap(), None, NmiNorm::Sqrt).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((base.values[i][j] - other.values[i][j]).abs() < 1e-12);
                assert_eq!(base.values[i][j], base.values[j][i]);
            }
        }
    }
}
