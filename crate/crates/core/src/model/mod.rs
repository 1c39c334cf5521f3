//! The recurrent generator and the diversity-aware discriminator.
//!
//! Parameters live in a [`ParamStore`] under `gen/...` and `disc/...` names so
//! the two networks can be optimized and persisted independently.

mod discriminator;
mod generator;
mod plan;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::ParamStore;
use crate::schema::Schema;

pub use discriminator::{discriminator_forward, init_discriminator};
pub use generator::{generator_forward, init_generator, ColumnOutput, EmbeddingGrad, GeneratorOutput};
pub use plan::{build_step_plan, Step, StepKind, StepPlan};

/// Network sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_z: usize,
    pub n_h: usize,
    pub n_f: usize,
    /// Hidden discriminator layers.
    pub disc_layers: usize,
    pub disc_width: usize,
    /// Number of diversity kernels per discriminator layer.
    pub diversity_b: usize,
    /// Length of each diversity kernel.
    pub diversity_c: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_z: 100,
            n_h: 100,
            n_f: 100,
            disc_layers: 2,
            disc_width: 200,
            diversity_b: 10,
            diversity_c: 10,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n_z", self.n_z),
            ("n_h", self.n_h),
            ("n_f", self.n_f),
            ("disc_layers", self.disc_layers),
            ("disc_width", self.disc_width),
            ("diversity_b", self.diversity_b),
            ("diversity_c", self.diversity_c),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::ConfigInvalid(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

/// Fresh generator and discriminator parameters for `schema` with `m` mixture
/// components per continuous column.
pub fn init_params(schema: &Schema, m: usize, config: &ModelConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let plan = build_step_plan(schema, m);
    let dim = schema.n_continuous() * (m + 1)
        + schema
            .columns
            .iter()
            .filter(|c| !c.is_continuous())
            .map(|c| c.cardinality())
            .sum::<usize>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_generator(schema, &plan, config, &mut rng);
    params.merge(&init_discriminator(dim, config, &mut rng));
    Ok(params)
}
