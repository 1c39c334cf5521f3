use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tgan::sampling::{sample, sample_range, SampleRequest};
use tgan::schema::{ColumnMeta, Schema, Table, Value};
use tgan::training::{train, ModelBundle, TrainConfig};
use tgan::Error;

fn small_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 50,
        epochs,
        n_z: 8,
        n_h: 16,
        n_f: 16,
        disc_width: 32,
        diversity_b: 4,
        diversity_c: 4,
        seed,
        ..TrainConfig::default()
    }
}

fn mixed_table(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(vec![
        ColumnMeta::continuous("x"),
        ColumnMeta::discrete("k", ["a", "b", "c"]),
        ColumnMeta::continuous("y"),
    ])
    .unwrap();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let rows = (0..n)
        .map(|_| {
            let k = rng.random_range(0..3);
            let x = k as f64 * 4.0 + noise.sample(&mut rng);
            vec![Value::Real(x), Value::Category(k), Value::Real(x * 0.5 + noise.sample(&mut rng))]
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

fn trained() -> ModelBundle {
    train(&mixed_table(300, 1), &small_config(3, 2)).unwrap().0
}

#[test]
fn same_seed_same_rows() {
    let bundle = trained();
    let a = sample(&bundle, &SampleRequest::new(250, 11)).unwrap();
    let b = sample(&bundle, &SampleRequest::new(250, 11)).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    let c = sample(&bundle, &SampleRequest::new(250, 12)).unwrap();
    assert_ne!(a.to_csv_string(), c.to_csv_string());
}

#[test]
fn batch_split_does_not_change_rows() {
    let bundle = trained();
    let whole = sample(&bundle, &SampleRequest { n_rows: 97, seed: 5, batch_size: 97 }).unwrap();
    for batch_size in [1, 10, 50] {
        let split = sample(&bundle, &SampleRequest { n_rows: 97, seed: 5, batch_size }).unwrap();
        assert_eq!(whole.to_csv_string(), split.to_csv_string(), "batch {batch_size}");
    }
    // A window of rows equals the same rows of the full draw.
    let window = sample_range(&bundle, 5, 40..60).unwrap();
    assert_eq!(window.rows(), &whole.rows()[40..60]);
}

#[test]
fn continuous_values_stay_in_decode_range() {
    let bundle = trained();
    let synth = sample(&bundle, &SampleRequest::new(2000, 1)).unwrap();
    assert_eq!(synth.schema(), &bundle.transformer.schema);
    for col in [0, 2] {
        let (lo, hi) = bundle.transformer.continuous_range(col).unwrap();
        assert!(synth.real_column(col).iter().all(|&x| x.is_finite() && x >= lo && x <= hi));
    }
    let k = synth.schema().columns[1].cardinality();
    assert!(synth.category_column(1).iter().all(|&c| c < k));
}

#[test]
fn bad_requests_rejected() {
    let bundle = trained();
    assert!(matches!(sample(&bundle, &SampleRequest::new(0, 1)), Err(Error::ConfigInvalid(_))));
    let zero_batch = SampleRequest { n_rows: 5, seed: 1, batch_size: 0 };
    assert!(matches!(sample(&bundle, &zero_batch), Err(Error::ConfigInvalid(_))));
}

#[test]
fn save_load_sample_identity() {
    let bundle = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.tgan");
    let before = sample(&bundle, &SampleRequest::new(100, 21)).unwrap().to_csv_string();
    bundle.save(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    let after = sample(&loaded, &SampleRequest::new(100, 21)).unwrap().to_csv_string();
    assert_eq!(before, after);
}
