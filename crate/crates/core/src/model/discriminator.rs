use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::neural::{
    init_weight, linear, minibatch_discrimination, Axis, Bound, Graph, ParamStore, Tensor, Var,
    LEAKY_SLOPE,
};

fn layer_names(i: usize) -> [String; 4] {
    [
        format!("disc/layer{i}/w"),
        format!("disc/layer{i}/bn_scale"),
        format!("disc/layer{i}/bn_shift"),
        format!("disc/layer{i}/diversity"),
    ]
}

/// Layers have no bias: batch normalization removes it.
pub fn init_discriminator<R: Rng + ?Sized>(dim: usize, config: &ModelConfig, rng: &mut R) -> ParamStore {
    let width = config.disc_width;
    let div_w = config.diversity_b * config.diversity_c;
    let mut p = ParamStore::new();
    let mut input = dim;
    for i in 0..config.disc_layers {
        let [w, scale, shift, div] = layer_names(i);
        p.insert(w, init_weight(input, width, rng));
        p.insert(scale, Tensor::filled(1, width, 1.0));
        p.insert(shift, Tensor::zeros(1, width));
        p.insert(div, init_weight(width, div_w, rng));
        input = width + config.diversity_b;
    }
    p.insert("disc/out/w", init_weight(input, 1, rng));
    p.insert("disc/out/b", Tensor::zeros(1, 1));
    p
}

/// One logit per row of `x` `(B, dim)`. Batch statistics couple the rows, so
/// `B >= 2`.
pub fn discriminator_forward(g: &mut Graph, params: &Bound, config: &ModelConfig, x: Var) -> Result<Var> {
    let batch = g.value(x).rows();
    if batch < 2 {
        return Err(Error::BatchTooSmall(batch));
    }
    let mut input = x;
    for i in 0..config.disc_layers {
        let [w, scale, shift, div] = layer_names(i);
        let pre = g.matmul(input, params.get(&w)?)?;
        let normed = g.batch_norm(pre, params.get(&scale)?, params.get(&shift)?)?;
        let f = g.leaky_relu(normed, LEAKY_SLOPE);
        let diversity = minibatch_discrimination(
            g,
            f,
            params.get(&div)?,
            config.diversity_b,
            config.diversity_c,
        )?;
        // Averaged over the other rows so its scale does not grow with the batch.
        let diversity = g.scale(diversity, 1.0 / (batch - 1) as f64);
        input = g.concat(&[f, diversity], Axis::Cols)?;
    }
    linear(g, input, params.get("disc/out/w")?, Some(params.get("disc/out/b")?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::grad_check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            disc_layers: 2,
            disc_width: 5,
            diversity_b: 3,
            diversity_c: 2,
            ..ModelConfig::default()
        }
    }

    fn logits(p: &ParamStore, x: &Tensor, config: &ModelConfig) -> Tensor {
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = discriminator_forward(&mut g, &b, config, xv).unwrap();
        g.value(out).clone()
    }

    #[test]
    fn default_sized_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let config = ModelConfig::default();
        let p = init_discriminator(17, &config, &mut rng);
        let x = Tensor::uniform(2, 17, 1.0, &mut rng);
        assert_eq!(logits(&p, &x, &config).shape(), &[2, 1]);
    }

    #[test]
    fn single_row_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = init_discriminator(4, &small(), &mut rng);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let x = g.constant(Tensor::zeros(1, 4));
        assert!(matches!(
            discriminator_forward(&mut g, &b, &small(), x),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_discriminator(6, &small(), &mut rng);
        let x = Tensor::uniform(7, 6, 1.0, &mut rng);
        let perm = [3, 0, 6, 1, 5, 2, 4];
        let xp = Tensor::from_rows(&perm.iter().map(|&r| x.row_slice(r).to_vec()).collect::<Vec<_>>());
        let a = logits(&p, &x, &small());
        let b = logits(&p, &xp, &small());
        for (k, &r) in perm.iter().enumerate() {
            assert!((b.get(k, 0) - a.get(r, 0)).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(20 + seed);
            let p = init_discriminator(6, &small(), &mut rng);
            let x = Tensor::uniform(4, 6, 1.0, &mut rng);
            let err = grad_check_params(&p, |g, b| {
                let xv = g.constant(x.clone());
                let out = discriminator_forward(g, b, &small(), xv)?;
                Ok(g.mean_all(out))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }
}
