use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{kl_divergence_raw, log_sigmoid, Graph, Var};

/// Default additive floor inside KL terms.
pub const KL_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// `-E log D(real) - E log(1 - D(fake))`.
    #[default]
    StableStandard,
    /// `-E log D(real) + E log D(fake)`, unbounded below.
    PaperLiteral,
}

/// `sum_k p_k ln((p_k + eps) / (q_k + eps))`.
pub fn kl_divergence(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            got: p.len(),
        });
    }
    Ok(kl_divergence_raw(p, q, eps))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} is {x}")))
    }
}

/// `-mean ln sigmoid(fake) + sum_i KL(fake_i || real_i)` over per-column batch
/// marginals.
pub fn generator_loss(
    fake_logits: &[f64],
    fake_marginals: &[Vec<f64>],
    real_marginals: &[Vec<f64>],
    eps: f64,
) -> Result<f64> {
    if fake_marginals.len() != real_marginals.len() {
        return Err(Error::LengthMismatch {
            expected: real_marginals.len(),
            got: fake_marginals.len(),
        });
    }
    let adversarial = -mean(fake_logits.iter().map(|&l| log_sigmoid(l)));
    let mut kl = 0.0;
    for (p, q) in fake_marginals.iter().zip(real_marginals) {
        kl += kl_divergence(p, q, eps)?;
    }
    finite(adversarial + kl, "generator loss")
}

pub fn discriminator_loss(real_logits: &[f64], fake_logits: &[f64], variant: LossVariant) -> Result<f64> {
    let real = -mean(real_logits.iter().map(|&l| log_sigmoid(l)));
    let fake = match variant {
        LossVariant::StableStandard => -mean(fake_logits.iter().map(|&l| log_sigmoid(-l))),
        LossVariant::PaperLiteral => mean(fake_logits.iter().map(|&l| log_sigmoid(l))),
    };
    finite(real + fake, "discriminator loss")
}

/// Graph nodes of the generator objective.
#[derive(Clone, Debug)]
pub struct GeneratorLossTerms {
    pub total: Var,
    pub adversarial: Var,
    /// One KL node per marginal, empty when the terms are disabled.
    pub kl: Vec<Var>,
}

/// Graph form of [`generator_loss`]. `fake_marginals` are `(1, k)` nodes;
/// `real_marginals` are fixed targets.
pub fn generator_loss_graph(
    g: &mut Graph,
    fake_logits: Var,
    fake_marginals: &[Var],
    real_marginals: &[Vec<f64>],
    eps: f64,
    kl_terms: bool,
) -> Result<GeneratorLossTerms> {
    let ls = g.log_sigmoid(fake_logits);
    let m = g.mean_all(ls);
    let adversarial = g.scale(m, -1.0);
    let mut total = adversarial;
    let mut kl = Vec::new();
    if kl_terms {
        if fake_marginals.len() != real_marginals.len() {
            return Err(Error::LengthMismatch {
                expected: real_marginals.len(),
                got: fake_marginals.len(),
            });
        }
        for (&p, q) in fake_marginals.iter().zip(real_marginals) {
            let term = g.kl_to(p, q, eps)?;
            total = g.add(total, term)?;
            kl.push(term);
        }
    }
    Ok(GeneratorLossTerms {
        total,
        adversarial,
        kl,
    })
}

pub fn discriminator_loss_graph(
    g: &mut Graph,
    real_logits: Var,
    fake_logits: Var,
    variant: LossVariant,
) -> Result<Var> {
    let lr = g.log_sigmoid(real_logits);
    let mr = g.mean_all(lr);
    let real = g.scale(mr, -1.0);
    let fake = match variant {
        LossVariant::StableStandard => {
            let neg = g.scale(fake_logits, -1.0);
            let lf = g.log_sigmoid(neg);
            let mf = g.mean_all(lf);
            g.scale(mf, -1.0)
        }
        LossVariant::PaperLiteral => {
            let lf = g.log_sigmoid(fake_logits);
            g.mean_all(lf)
        }
    };
    g.add(real, fake)
}
