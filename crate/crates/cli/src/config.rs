use std::path::{Path, PathBuf};

use serde::Deserialize;
use tgan::training::{LossVariant, TrainConfig};

use crate::CliError;

pub const SEED_ENV: &str = "TGAN_SEED";

/// Contents of a `fit` config file: optional paths plus a `[train]` table
/// with any subset of the training settings.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(skip)]
    pub seed_set: bool,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<FileConfig, String> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| e.to_string())?;
        let seed_set = raw
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"));
        let mut cfg: FileConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.seed_set = seed_set;
        Ok(cfg)
    }
}

/// Training flags; each one set on the command line overrides the file.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr_g: Option<f64>,
    #[arg(long)]
    pub lr_d: Option<f64>,
    #[arg(long)]
    pub adam_beta1: Option<f64>,
    #[arg(long)]
    pub adam_eps: Option<f64>,
    /// L2 penalty coefficient on all weights.
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Discriminator updates per generator update.
    #[arg(long)]
    pub steps_ratio: Option<usize>,
    /// Mixture components per continuous column.
    #[arg(long)]
    pub m: Option<usize>,
    /// Noise level of the smoothed one-hot encoding.
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub n_z: Option<usize>,
    #[arg(long)]
    pub n_h: Option<usize>,
    #[arg(long)]
    pub n_f: Option<usize>,
    #[arg(long)]
    pub disc_layers: Option<usize>,
    #[arg(long)]
    pub disc_width: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_variant)]
    pub loss_variant: Option<LossVariant>,
    /// Drop the KL marginal terms from the generator loss.
    #[arg(long)]
    pub no_kl: bool,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

fn parse_variant(s: &str) -> Result<LossVariant, String> {
    match s {
        "stable-standard" => Ok(LossVariant::StableStandard),
        "paper-literal" => Ok(LossVariant::PaperLiteral),
        _ => Err(format!("unknown loss variant {s:?} (stable-standard, paper-literal)")),
    }
}

/// Seed of last resort from the environment.
pub fn env_seed() -> Result<Option<u64>, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flag, then file, then `TGAN_SEED`, then the default.
pub fn resolve_train(file: &FileConfig, flags: &TrainFlags) -> Result<TrainConfig, CliError> {
    let mut c = file.train.clone();
    macro_rules! take {
        ($($field:ident),*) => {
            $(if let Some(v) = flags.$field { c.$field = v; })*
        };
    }
    take!(
        epochs,
        batch_size,
        lr_g,
        lr_d,
        adam_beta1,
        adam_eps,
        weight_decay,
        steps_ratio,
        m,
        gamma,
        n_z,
        n_h,
        n_f,
        disc_layers,
        disc_width,
        loss_variant,
        checkpoint_every
    );
    if flags.no_kl {
        c.kl_terms = false;
    }
    c.seed = match (flags.seed, file.seed_set) {
        (Some(s), _) => s,
        (None, true) => file.train.seed,
        (None, false) => env_seed()?.unwrap_or(c.seed),
    };
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("[train]\nepochz = 3\n").is_err());
        assert!(FileConfig::parse("colour = 1\n").is_err());
        let ok = FileConfig::parse("out = \"m.tgan\"\n[train]\nepochs = 3\n").unwrap();
        assert_eq!(ok.train.epochs, 3);
        assert_eq!(ok.train.batch_size, TrainConfig::default().batch_size);
        assert!(!ok.seed_set);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file = FileConfig::parse("[train]\nepochs = 7\nbatch_size = 30\n").unwrap();
        let flags = TrainFlags {
            epochs: Some(3),
            seed: Some(1),
            ..TrainFlags::default()
        };
        let c = resolve_train(&file, &flags).unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.batch_size, 30);
        assert_eq!(c.lr_g, TrainConfig::default().lr_g);
    }
}
