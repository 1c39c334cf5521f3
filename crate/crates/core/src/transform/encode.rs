use rand::Rng;

use super::gmm::GmmParams;
use crate::error::{Error, Result};
use crate::neural::argmax;
use crate::schema::ColumnMeta;

/// Largest magnitude of a normalized continuous value.
pub const V_CLIP: f64 = 0.99;

/// Default upper bound of the uniform noise added to one-hot vectors.
pub const DEFAULT_GAMMA: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ContinuousEncoding {
    pub v: f64,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteEncoding {
    pub d: Vec<f64>,
}

/// Unclipped normalized offset of `c` from component `k`.
pub fn raw_offset(c: f64, gmm: &GmmParams, k: usize) -> f64 {
    (c - gmm.means[k]) / (2.0 * gmm.stds[k])
}

pub fn encode_continuous(c: f64, gmm: &GmmParams, weighted_u: bool) -> Result<ContinuousEncoding> {
    if !c.is_finite() {
        return Err(Error::NonFiniteInput(format!("continuous cell {c}")));
    }
    let u = gmm.responsibilities(c, weighted_u);
    let k = argmax(&u);
    let v = raw_offset(c, gmm, k).clamp(-V_CLIP, V_CLIP);
    Ok(ContinuousEncoding { v, u })
}

/// `2 v sigma_k + eta_k` for `k = argmax u`, with `v` clipped to the encoding range.
pub fn decode_continuous(enc: &ContinuousEncoding, gmm: &GmmParams) -> f64 {
    let k = argmax(&enc.u);
    2.0 * enc.v.clamp(-V_CLIP, V_CLIP) * gmm.stds[k] + gmm.means[k]
}

/// Smoothed one-hot for a category index, with explicit noise values.
pub fn smooth_one_hot(index: usize, noise: &[f64]) -> DiscreteEncoding {
    let mut d: Vec<f64> = noise.to_vec();
    d[index] += 1.0;
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);
    DiscreteEncoding { d }
}

/// One-hot of `index` plus i.i.d. `Uniform(0, gamma)` noise, renormalized.
pub fn encode_category<R: Rng + ?Sized>(
    index: usize,
    cardinality: usize,
    gamma: f64,
    rng: &mut R,
) -> DiscreteEncoding {
    let noise: Vec<f64> = if gamma > 0.0 {
        (0..cardinality).map(|_| rng.random::<f64>() * gamma).collect()
    } else {
        vec![0.0; cardinality]
    };
    smooth_one_hot(index, &noise)
}

pub fn encode_discrete<R: Rng + ?Sized>(
    category: &str,
    meta: &ColumnMeta,
    gamma: f64,
    rng: &mut R,
) -> Result<DiscreteEncoding> {
    check_gamma(gamma)?;
    let idx = meta
        .category_index(category)
        .ok_or_else(|| Error::UnknownCategory {
            row: 0,
            column: meta.name.clone(),
            value: category.to_string(),
        })?;
    Ok(encode_category(idx, meta.cardinality(), gamma, rng))
}

pub fn decode_discrete(d: &[f64], meta: &ColumnMeta) -> Result<String> {
    if d.len() != meta.cardinality() {
        return Err(Error::LengthMismatch {
            expected: meta.cardinality(),
            got: d.len(),
        });
    }
    Ok(meta.categories[argmax(d)].clone())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::ConfigInvalid(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(())
}
