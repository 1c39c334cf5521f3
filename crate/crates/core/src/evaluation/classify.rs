use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::neural::{init_weight, linear, AdamConfig, AdamState, Graph, ParamStore, Tensor, LEAKY_SLOPE};
use crate::schema::{ColumnKind, Schema, Table, Value};

/// Dense row-major feature matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Features {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Features { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// The label column: the one named, else the one flagged in the schema.
pub fn label_column(schema: &Schema, name: Option<&str>) -> Result<usize> {
    let idx = match name {
        Some(n) => schema
            .column_index(n)
            .ok_or_else(|| Error::SchemaMismatch(format!("no column named {n:?}")))?,
        None => schema.label_index().ok_or(Error::NoLabelColumn)?,
    };
    if schema.columns[idx].kind != ColumnKind::Discrete {
        return Err(Error::InvalidSchema(format!(
            "label column {:?} must be discrete",
            schema.columns[idx].name
        )));
    }
    Ok(idx)
}

/// Continuous columns as-is and discrete columns one-hot, skipping `label`.
pub fn encode_features(table: &Table, label: usize) -> Result<(Features, Vec<usize>)> {
    let schema = table.schema();
    if label >= schema.len() {
        return Err(Error::NoLabelColumn);
    }
    let cols: usize = schema
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != label)
        .map(|(_, c)| match c.kind {
            ColumnKind::Continuous => 1,
            ColumnKind::Discrete => c.cardinality(),
        })
        .sum();
    let mut data = Vec::with_capacity(table.n_rows() * cols);
    let mut labels = Vec::with_capacity(table.n_rows());
    for row in table.rows() {
        for (i, (v, meta)) in row.iter().zip(&schema.columns).enumerate() {
            if i == label {
                labels.push(v.as_category().ok_or(Error::NoLabelColumn)?);
                continue;
            }
            match v {
                Value::Real(x) => data.push(*x),
                Value::Category(k) => {
                    let start = data.len();
                    data.resize(start + meta.cardinality(), 0.0);
                    data[start + k] = 1.0;
                }
            }
        }
    }
    Ok((Features::new(table.n_rows(), cols, data)?, labels))
}

pub trait Classifier {
    fn fit(&mut self, x: &Features, y: &[usize], n_classes: usize, seed: u64) -> Result<()>;
    fn predict(&self, x: &Features) -> Result<Vec<usize>>;
}

fn check_fit_input(x: &Features, y: &[usize], n_classes: usize) -> Result<()> {
    if x.rows != y.len() {
        return Err(Error::LengthMismatch {
            expected: x.rows,
            got: y.len(),
        });
    }
    if x.rows == 0 {
        return Err(Error::EmptyInput);
    }
    if let Some(&bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::ConfigInvalid(format!("label {bad} >= {n_classes} classes")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

/// CART with Gini impurity. A one-hot discrete feature split at 0.5 is an
/// equality split on that category.
#[derive(Clone, Debug, PartialEq)]
pub struct DecisionTree {
    pub max_depth: usize,
    root: Option<Node>,
    n_features: usize,
}

impl DecisionTree {
    pub fn new(max_depth: usize) -> Self {
        DecisionTree {
            max_depth,
            root: None,
            n_features: 0,
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(n: &Node) -> usize {
            match n {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(left).max(walk(right)),
            }
        }
        self.root.as_ref().map_or(0, walk)
    }

    fn grow(&self, x: &Features, y: &[usize], idx: &mut [usize], k: usize, depth: usize) -> Node {
        let mut counts = vec![0usize; k];
        idx.iter().for_each(|&i| counts[y[i]] += 1);
        let majority = majority(&counts);
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || depth >= self.max_depth || idx.len() < 2 {
            return Node::Leaf(majority);
        }
        let Some((feature, threshold)) = best_split(x, y, idx, k, &counts) else {
            return Node::Leaf(majority);
        };
        let mut split = 0;
        for j in 0..idx.len() {
            if x.get(idx[j], feature) <= threshold {
                idx.swap(split, j);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        Node::Split {
            feature,
            threshold,
            left: Box::new(self.grow(x, y, l, k, depth + 1)),
            right: Box::new(self.grow(x, y, r, k, depth + 1)),
        }
    }
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (k, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = k;
        }
    }
    best
}

fn gini_sum(counts: &[usize], n: usize) -> f64 {
    // n * gini = n - sum c^2 / n
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

/// Lowest weighted Gini over all features and midpoints between distinct
/// sorted values. Splits that do not reduce impurity are still taken, as XOR
/// needs them.
fn best_split(x: &Features, y: &[usize], idx: &[usize], k: usize, total: &[usize]) -> Option<(usize, f64)> {
    let n = idx.len();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order = idx.to_vec();
    let mut left = vec![0usize; k];
    let mut right = vec![0usize; k];
    for f in 0..x.cols {
        order.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)));
        left.iter_mut().for_each(|c| *c = 0);
        right.copy_from_slice(total);
        for j in 0..n - 1 {
            let c = y[order[j]];
            left[c] += 1;
            right[c] -= 1;
            let (a, b) = (x.get(order[j], f), x.get(order[j + 1], f));
            if a == b {
                continue;
            }
            let score = gini_sum(&left, j + 1) + gini_sum(&right, n - j - 1);
            if best.is_none_or(|(s, _, _)| score < s - 1e-12) {
                let mid = a + (b - a) / 2.0;
                // Keep the threshold strictly below b even when a and b are adjacent floats.
                let threshold = if mid < b { mid } else { a };
                best = Some((score, f, threshold));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

impl Classifier for DecisionTree {
    fn fit(&mut self, x: &Features, y: &[usize], n_classes: usize, _seed: u64) -> Result<()> {
        check_fit_input(x, y, n_classes)?;
        let mut idx: Vec<usize> = (0..x.rows).collect();
        self.n_features = x.cols;
        self.root = Some(self.grow(x, y, &mut idx, n_classes, 0));
        Ok(())
    }

    fn predict(&self, x: &Features) -> Result<Vec<usize>> {
        let root = self
            .root
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("decision tree used before fit".into()))?;
        check_width(x, self.n_features)?;
        Ok((0..x.rows)
            .map(|r| {
                let mut node = root;
                loop {
                    match node {
                        Node::Leaf(c) => return *c,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => {
                            node = if x.get(r, *feature) <= *threshold { left } else { right };
                        }
                    }
                }
            })
            .collect())
    }
}

fn check_width(x: &Features, expected: usize) -> Result<()> {
    if x.cols != expected {
        return Err(Error::ShapeMismatch {
            op: "predict",
            detail: format!("{} features, model expects {expected}", x.cols),
        });
    }
    Ok(())
}

/// Feed-forward classifier on standardized features with LeakyReLU hidden
/// layers, softmax cross-entropy and Adam.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    pub layers: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    params: ParamStore,
    mean: Vec<f64>,
    scale: Vec<f64>,
    n_classes: usize,
}

impl MlpClassifier {
    pub const DEFAULT_EPOCHS: usize = 30;

    pub fn new(layers: Vec<usize>, epochs: usize) -> Self {
        MlpClassifier {
            layers,
            epochs,
            batch_size: 64,
            lr: 1e-3,
            params: ParamStore::new(),
            mean: Vec::new(),
            scale: Vec::new(),
            n_classes: 0,
        }
    }

    fn standardize(&self, x: &Features, rows: &[usize]) -> Tensor {
        let mut data = Vec::with_capacity(rows.len() * x.cols);
        for &r in rows {
            for (c, v) in x.row(r).iter().enumerate() {
                data.push((v - self.mean[c]) / self.scale[c]);
            }
        }
        Tensor::matrix(rows.len(), x.cols, data)
    }

    fn forward(&self, g: &mut Graph, input: Tensor, trainable: bool) -> Result<(crate::neural::Var, crate::neural::Bound)> {
        let p = self.params.bind(g, trainable);
        let mut h = g.constant(input);
        for i in 0..=self.layers.len() {
            h = linear(g, h, p.get(&format!("mlp/{i}/w"))?, Some(p.get(&format!("mlp/{i}/b"))?))?;
            if i < self.layers.len() {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok((h, p))
    }
}

impl Classifier for MlpClassifier {
    fn fit(&mut self, x: &Features, y: &[usize], n_classes: usize, seed: u64) -> Result<()> {
        check_fit_input(x, y, n_classes)?;
        if self.batch_size == 0 {
            return Err(Error::ConfigInvalid("batch_size must be positive".into()));
        }
        let n = x.rows as f64;
        self.mean = (0..x.cols).map(|c| (0..x.rows).map(|r| x.get(r, c)).sum::<f64>() / n).collect();
        self.scale = (0..x.cols)
            .map(|c| {
                let var = (0..x.rows).map(|r| (x.get(r, c) - self.mean[c]).powi(2)).sum::<f64>() / n;
                if var > 0.0 { var.sqrt() } else { 1.0 }
            })
            .collect();
        self.n_classes = n_classes;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params = ParamStore::new();
        let mut width = x.cols;
        for (i, &out) in self.layers.iter().chain(std::iter::once(&n_classes)).enumerate() {
            self.params.insert(format!("mlp/{i}/w"), init_weight(width, out, &mut rng));
            self.params.insert(format!("mlp/{i}/b"), Tensor::zeros(1, out));
            width = out;
        }
        let mut adam = AdamState::new(AdamConfig::with_lr(self.lr));
        let mut order: Vec<usize> = (0..x.rows).collect();
        for _ in 0..self.epochs {
            order.shuffle(&mut rng);
            for chunk in order.chunks(self.batch_size) {
                let input = self.standardize(x, chunk);
                let labels: Vec<usize> = chunk.iter().map(|&r| y[r]).collect();
                let mut g = Graph::new();
                let (logits, p) = self.forward(&mut g, input, true)?;
                let loss = g.softmax_cross_entropy(logits, &labels)?;
                g.backward(loss)?;
                let grads = p.gradients(&g);
                adam.step(&mut self.params, &grads)?;
            }
        }
        Ok(())
    }

    fn predict(&self, x: &Features) -> Result<Vec<usize>> {
        if self.params.is_empty() {
            return Err(Error::ConfigInvalid("MLP used before fit".into()));
        }
        check_width(x, self.mean.len())?;
        let rows: Vec<usize> = (0..x.rows).collect();
        let mut out = Vec::with_capacity(x.rows);
        for chunk in rows.chunks(1024) {
            let mut g = Graph::new();
            let (logits, _) = self.forward(&mut g, self.standardize(x, chunk), false)?;
            out.extend(g.value(logits).argmax_rows());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::accuracy;
    use crate::schema::ColumnMeta;
    use rand::Rng;

    #[test]
    fn one_split_separates_a_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..200).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<usize> = xs.iter().map(|&v| usize::from(v > 0.0)).collect();
        let x = Features::new(200, 1, xs).unwrap();
        let mut t = DecisionTree::new(1);
        t.fit(&x, &y, 2, 0).unwrap();
        assert_eq!(accuracy(&y, &t.predict(&x).unwrap()).unwrap(), 1.0);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn xor_needs_depth_two() {
        let mut data = Vec::new();
        let mut y = Vec::new();
        for _ in 0..5 {
            for (a, b) in [(0.0, 0.0), (0.0, 1.0), (1.0, 0.0), (1.0, 1.0)] {
                data.extend([a, b]);
                y.push(usize::from(a != b));
            }
        }
        let x = Features::new(20, 2, data).unwrap();
        let mut deep = DecisionTree::new(2);
        deep.fit(&x, &y, 2, 0).unwrap();
        assert_eq!(accuracy(&y, &deep.predict(&x).unwrap()).unwrap(), 1.0);
        let mut shallow = DecisionTree::new(1);
        shallow.fit(&x, &y, 2, 0).unwrap();
        assert!(accuracy(&y, &shallow.predict(&x).unwrap()).unwrap() <= 0.75);
    }

    #[test]
    fn depth_limit_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f64> = (0..600).map(|_| rng.random::<f64>()).collect();
        let y: Vec<usize> = (0..300).map(|_| rng.random_range(0..3)).collect();
        let x = Features::new(300, 2, data).unwrap();
        for depth in [0, 1, 3, 10] {
            let mut t = DecisionTree::new(depth);
            t.fit(&x, &y, 3, 0).unwrap();
            assert!(t.depth() <= depth);
        }
    }

    #[test]
    fn mlp_untrained_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..150).map(|_| rng.random::<f64>()).collect();
        let y: Vec<usize> = (0..50).map(|_| rng.random_range(0..2)).collect();
        let x = Features::new(50, 3, data).unwrap();
        let run = |seed| {
            let mut m = MlpClassifier::new(vec![8], 0);
            m.fit(&x, &y, 2, seed).unwrap();
            m.predict(&x).unwrap()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn mlp_learns_a_linear_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..800).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Features::new(400, 2, data).unwrap();
        let y: Vec<usize> = (0..400).map(|r| usize::from(x.get(r, 0) + x.get(r, 1) > 0.0)).collect();
        let mut m = MlpClassifier::new(vec![16], 40);
        m.fit(&x, &y, 2, 0).unwrap();
        assert!(accuracy(&y, &m.predict(&x).unwrap()).unwrap() > 0.95);
    }

    #[test]
    fn features_one_hot_discrete_columns() {
        let schema = Schema::new(vec![
            ColumnMeta::continuous("c"),
            ColumnMeta::discrete("d", ["a", "b", "c"]),
            ColumnMeta::discrete("y", ["n", "p"]).labeled(),
        ])
        .unwrap();
        let table = Table::new(
            schema.clone(),
            vec![vec![Value::Real(2.5), Value::Category(2), Value::Category(1)]],
        )
        .unwrap();
        let label = label_column(&schema, None).unwrap();
        let (x, y) = encode_features(&table, label).unwrap();
        assert_eq!(x.data, vec![2.5, 0.0, 0.0, 1.0]);
        assert_eq!(y, vec![1]);
        assert!(matches!(label_column(&schema, Some("c")), Err(Error::InvalidSchema(_))));
        let unlabeled = Schema::new(vec![ColumnMeta::continuous("c")]).unwrap();
        assert!(matches!(label_column(&unlabeled, None), Err(Error::NoLabelColumn)));
    }
}
