use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::classify::{encode_features, label_column, Classifier, DecisionTree, MlpClassifier};
use super::metrics::{accuracy, macro_f1, observed_labels};
use crate::error::{Error, Result};
use crate::schema::Table;

/// A built-in classifier, written `dt:depth=10` or `mlp:100,50:epochs=30`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassifierSpec {
    DecisionTree { max_depth: usize },
    Mlp { layers: Vec<usize>, epochs: usize },
}

impl ClassifierSpec {
    pub fn build(&self) -> Box<dyn Classifier> {
        match self {
            ClassifierSpec::DecisionTree { max_depth } => Box::new(DecisionTree::new(*max_depth)),
            ClassifierSpec::Mlp { layers, epochs } => Box::new(MlpClassifier::new(layers.clone(), *epochs)),
        }
    }
}

impl fmt::Display for ClassifierSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassifierSpec::DecisionTree { max_depth } => write!(f, "dt:depth={max_depth}"),
            ClassifierSpec::Mlp { layers, epochs } => {
                let l: Vec<String> = layers.iter().map(usize::to_string).collect();
                write!(f, "mlp:{}:epochs={epochs}", l.join(","))
            }
        }
    }
}

fn bad_spec(s: &str) -> Error {
    Error::ConfigInvalid(format!(
        "bad classifier {s:?}; expected dt:depth=N or mlp:N[,N...][:epochs=N]"
    ))
}

impl FromStr for ClassifierSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split(':');
        let kind = parts.next().unwrap_or_default();
        let mut depth = 10;
        let mut epochs = MlpClassifier::DEFAULT_EPOCHS;
        let mut layers: Option<Vec<usize>> = None;
        for part in parts {
            if let Some((key, value)) = part.split_once('=') {
                let v: usize = value.parse().map_err(|_| bad_spec(s))?;
                match (kind, key) {
                    ("dt", "depth") => depth = v,
                    ("mlp", "epochs") => epochs = v,
                    _ => return Err(bad_spec(s)),
                }
            } else if kind == "mlp" && layers.is_none() {
                let l = part
                    .split(',')
                    .map(|x| x.trim().parse::<usize>().ok().filter(|&w| w > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad_spec(s))?;
                layers = Some(l);
            } else {
                return Err(bad_spec(s));
            }
        }
        match kind {
            "dt" => Ok(ClassifierSpec::DecisionTree { max_depth: depth }),
            "mlp" => Ok(ClassifierSpec::Mlp {
                layers: layers.unwrap_or_else(|| vec![100]),
                epochs,
            }),
            _ => Err(bad_spec(s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainedOn {
    Real,
    Synthetic,
}

impl fmt::Display for TrainedOn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainedOn::Real => "real",
            TrainedOn::Synthetic => "synthetic",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierScore {
    pub classifier: String,
    pub trained_on: TrainedOn,
    pub accuracy: f64,
    pub macro_f1: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub scores: Vec<ClassifierScore>,
}

impl EfficacyReport {
    pub fn get(&self, classifier: &str, trained_on: TrainedOn) -> Option<&ClassifierScore> {
        self.scores
            .iter()
            .find(|s| s.classifier == classifier && s.trained_on == trained_on)
    }
}

/// Scores one classifier trained on `train` against `test`. Labels are
/// scored over the union of true and predicted classes, so a test class
/// never seen in training counts as F1 0.
pub fn score_classifier(
    classifier: &mut dyn Classifier,
    train: &Table,
    test: &Table,
    label: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let n_classes = train.schema().columns[label].cardinality();
    let (x_train, y_train) = encode_features(train, label)?;
    let (x_test, y_test) = encode_features(test, label)?;
    classifier.fit(&x_train, &y_train, n_classes, seed)?;
    let pred = classifier.predict(&x_test)?;
    let acc = accuracy(&y_test, &pred)?;
    let f1 = macro_f1(&y_test, &pred, &observed_labels(&y_test, &pred))?;
    Ok((acc, f1))
}

/// Builds a fresh, untrained classifier for one efficacy arm.
pub type ClassifierFactory = Box<dyn Fn() -> Box<dyn Classifier>>;

/// Trains every classifier on the real and on the synthetic training table
/// with the same seed and scores both on the real test table.
pub fn efficacy(
    real_train: &Table,
    synth_train: &Table,
    test: &Table,
    classifiers: &[ClassifierSpec],
    label: Option<&str>,
    seed: u64,
) -> Result<EfficacyReport> {
    let named: Vec<(String, ClassifierFactory)> = classifiers
        .iter()
        .map(|c| {
            let c = c.clone();
            (c.to_string(), Box::new(move || c.build()) as ClassifierFactory)
        })
        .collect();
    efficacy_with(real_train, synth_train, test, &named, label, seed)
}

/// [`efficacy`] over arbitrary classifiers, each given as a name and a
/// constructor.
pub fn efficacy_with(
    real_train: &Table,
    synth_train: &Table,
    test: &Table,
    classifiers: &[(String, ClassifierFactory)],
    label: Option<&str>,
    seed: u64,
) -> Result<EfficacyReport> {
    let schema = real_train.schema();
    if synth_train.schema() != schema || test.schema() != schema {
        return Err(Error::SchemaMismatch(
            "real, synthetic and test tables must share one schema".into(),
        ));
    }
    let label = label_column(schema, label)?;
    let mut report = EfficacyReport::default();
    for (name, make) in classifiers {
        for (arm, train) in [(TrainedOn::Real, real_train), (TrainedOn::Synthetic, synth_train)] {
            let mut c = make();
            let (accuracy, macro_f1) = score_classifier(c.as_mut(), train, test, label, seed)?;
            report.scores.push(ClassifierScore {
                classifier: name.clone(),
                trained_on: arm,
                accuracy,
                macro_f1,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{Features};
    use crate::schema::{ColumnMeta, Schema, Value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn classifier_strings_parse() {
        assert_eq!(
            "dt:depth=10".parse::<ClassifierSpec>().unwrap(),
            ClassifierSpec::DecisionTree { max_depth: 10 }
        );
        assert_eq!(
            "mlp:100".parse::<ClassifierSpec>().unwrap(),
            ClassifierSpec::Mlp {
                layers: vec![100],
                epochs: MlpClassifier::DEFAULT_EPOCHS
            }
        );
        let spec: ClassifierSpec = "mlp:64,32:epochs=5".parse().unwrap();
        assert_eq!(spec.to_string().parse::<ClassifierSpec>().unwrap(), spec);
        for bad in ["svm", "dt:depth=x", "mlp:0", "dt:width=3", "mlp:1:2"] {
            assert!(bad.parse::<ClassifierSpec>().is_err(), "{bad}");
        }
    }

    fn labeled_table(n: usize, seed: u64) -> Table {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = Schema::new(vec![
            ColumnMeta::continuous("x"),
            ColumnMeta::discrete("y", ["neg", "pos"]).labeled(),
        ])
        .unwrap();
        let rows = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-1.0..1.0);
                vec![Value::Real(x), Value::Category(usize::from(x > 0.2))]
            })
            .collect();
        Table::new(schema, rows).unwrap()
    }

    #[test]
    fn identical_arms_score_identically() {
        let train = labeled_table(300, 1);
        let test = labeled_table(100, 2);
        let specs = ["dt:depth=3".parse().unwrap(), "mlp:8:epochs=3".parse().unwrap()];
        let report = efficacy(&train, &train, &test, &specs, None, 9).unwrap();
        assert_eq!(report.scores.len(), 4);
        for pair in report.scores.chunks(2) {
            assert_eq!(pair[0].accuracy, pair[1].accuracy);
            assert_eq!(pair[0].macro_f1, pair[1].macro_f1);
        }
        let dt = report.get("dt:depth=3", TrainedOn::Real).unwrap();
        assert_eq!((dt.accuracy, dt.macro_f1), (1.0, 1.0));
    }

    struct Majority(usize);

    impl Classifier for Majority {
        fn fit(&mut self, _: &Features, y: &[usize], k: usize, _: u64) -> Result<()> {
            let mut counts = vec![0; k];
            y.iter().for_each(|&l| counts[l] += 1);
            self.0 = (0..k).max_by_key(|&c| (counts[c], std::cmp::Reverse(c))).unwrap();
            Ok(())
        }

        fn predict(&self, x: &Features) -> Result<Vec<usize>> {
            Ok(vec![self.0; x.rows])
        }
    }

    #[test]
    fn pluggable_majority_on_imbalanced_test() {
        let schema = Schema::new(vec![
            ColumnMeta::continuous("x"),
            ColumnMeta::discrete("y", ["a", "b"]).labeled(),
        ])
        .unwrap();
        let rows: Vec<Vec<Value>> = (0..100)
            .map(|i| vec![Value::Real(i as f64), Value::Category(usize::from(i >= 93))])
            .collect();
        let table = Table::new(schema, rows).unwrap();
        let named: Vec<(String, ClassifierFactory)> =
            vec![("majority".into(), Box::new(|| Box::new(Majority(0)) as Box<dyn Classifier>))];
        let report = efficacy_with(&table, &table, &table, &named, None, 0).unwrap();
        let s = report.get("majority", TrainedOn::Synthetic).unwrap();
        assert!((s.accuracy - 0.93).abs() < 1e-12);
        assert!((s.macro_f1 - 0.4819).abs() < 1e-4);
    }

    #[test]
    fn unseen_test_class_scores_zero() {
        let train = labeled_table(200, 3);
        let only_neg: Vec<usize> = (0..train.n_rows())
            .filter(|&r| train.rows()[r][1] == Value::Category(0))
            .collect();
        let train = train.select(&only_neg);
        let test = labeled_table(100, 4);
        let specs = ["dt:depth=4".parse().unwrap()];
        let report = efficacy(&train, &train, &test, &specs, None, 0).unwrap();
        let s = &report.scores[0];
        assert!(s.macro_f1 < 0.5 && s.accuracy < 1.0);
    }

    #[test]
    fn label_required() {
        let train = labeled_table(50, 5);
        let unlabeled = Schema::new(vec![
            ColumnMeta::continuous("x"),
            ColumnMeta::discrete("y", ["neg", "pos"]),
        ])
        .unwrap();
        let t = train.with_schema(unlabeled).unwrap();
        let specs = ["dt:depth=2".parse().unwrap()];
        assert!(matches!(efficacy(&t, &t, &t, &specs, None, 0), Err(Error::NoLabelColumn)));
        assert!(efficacy(&t, &t, &t, &specs, Some("y"), 0).is_ok());
    }
}
