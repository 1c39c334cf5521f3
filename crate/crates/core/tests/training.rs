use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tgan::sampling::{sample, SampleRequest};
use tgan::schema::{ColumnMeta, Schema, Table, Value};
use tgan::training::{train, TrainConfig};

fn compact(seed: u64, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        epochs,
        n_z: 16,
        n_h: 32,
        n_f: 32,
        disc_width: 64,
        seed,
        ..TrainConfig::default()
    }
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn standard_normal_moments_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let schema = Schema::new(vec![ColumnMeta::continuous("x")]).unwrap();
    let rows = (0..2000).map(|_| vec![Value::Real(normal.sample(&mut rng))]).collect();
    let table = Table::new(schema, rows).unwrap();
    let config = TrainConfig {
        seed: 1,
        ..TrainConfig::default()
    };
    let (bundle, history) = train(&table, &config).unwrap();
    assert!(history.is_finite());
    let synth = sample(&bundle, &SampleRequest::new(10_000, 2)).unwrap();
    let (real_mean, real_std) = moments(&table.real_column(0));
    let (mean, std) = moments(&synth.real_column(0));
    assert!((mean - real_mean).abs() <= 0.3, "mean {mean} vs {real_mean}");
    assert!((std - real_std).abs() <= 0.3, "std {std} vs {real_std}");
}

fn twin_binary(n: usize, seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = Schema::new(vec![
        ColumnMeta::discrete("d1", ["A", "B"]),
        ColumnMeta::discrete("d2", ["A", "B"]),
    ])
    .unwrap();
    let rows = (0..n)
        .map(|_| {
            let d = usize::from(rng.random::<bool>());
            vec![Value::Category(d), Value::Category(d)]
        })
        .collect();
    Table::new(schema, rows).unwrap()
}

fn agreement(t: &Table) -> f64 {
    let a = t.category_column(0);
    let b = t.category_column(1);
    a.iter().zip(&b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

#[test]
fn perfectly_correlated_binaries_stay_correlated() {
    let table = twin_binary(5000, 41);
    let (bundle, _) = train(&table, &compact(3, 20, 100)).unwrap();
    let synth = sample(&bundle, &SampleRequest::new(10_000, 4)).unwrap();
    let rate = agreement(&synth);
    assert!(rate >= 0.9, "agreement {rate}");
}

fn total_variation(a: &[usize], b: &[usize], k: usize) -> f64 {
    let freq = |xs: &[usize]| {
        let mut f = vec![0.0; k];
        xs.iter().for_each(|&x| f[x] += 1.0 / xs.len() as f64);
        f
    };
    let (fa, fb) = (freq(a), freq(b));
    fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.total_cmp(b));
    xs[xs.len() / 2]
}

#[test]
fn kl_terms_do_not_hurt_marginals() {
    let table = twin_binary(1000, 51);
    let mut tv = [[Vec::new(), Vec::new()], [Vec::new(), Vec::new()]];
    for seed in 0..5 {
        for (arm, kl_terms) in [(0, true), (1, false)] {
            let config = TrainConfig {
                kl_terms,
                ..compact(seed, 50, 50)
            };
            let (bundle, _) = train(&table, &config).unwrap();
            let synth = sample(&bundle, &SampleRequest::new(2000, 100 + seed)).unwrap();
            for col in 0..2 {
                tv[arm][col].push(total_variation(&table.category_column(col), &synth.category_column(col), 2));
            }
        }
    }
    for col in 0..2 {
        let with = median(tv[0][col].clone());
        let without = median(tv[1][col].clone());
        assert!(with <= without + 0.05, "column {col}: with KL {with}, without {without}");
    }
}
