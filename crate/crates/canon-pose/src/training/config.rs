//! TOML config files and `key=value` overrides, with the precedence
//! CLI flag > config file > built-in default.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::TrainConfig;

/// Parses a TOML file that mirrors [`TrainConfig`] field-for-field. Missing
/// fields fall back to defaults; unknown fields are errors.
pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: TrainConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies one `key=value` override. Keys name [`TrainConfig`] fields; the
/// loss weights are addressed as `w_angle`, `w_rec`, `w_adv`.
pub fn apply_override(cfg: &mut TrainConfig, spec: &str) -> Result<()> {
    let (key, value) = spec.split_once('=').ok_or_else(|| {
        Error::Config(format!("override {spec:?} is not of the form key=value"))
    })?;
    let key = key.trim();
    let value = value.trim();
    let bad = |what: &str| Error::Config(format!("override {key}: bad {what} {value:?}"));

    macro_rules! parse {
        ($ty:ty, $what:literal) => {
            value.parse::<$ty>().map_err(|_| bad($what))?
        };
    }

    match key {
        "epochs" => cfg.epochs = parse!(usize, "integer"),
        "lr" => cfg.lr = parse!(f64, "number"),
        "lr_decay_epoch" => cfg.lr_decay_epoch = parse!(usize, "integer"),
        "lr_decay_factor" => cfg.lr_decay_factor = parse!(f64, "number"),
        "weight_decay" => cfg.weight_decay = parse!(f64, "number"),
        "decoder_steps_per_critic_step" => {
            cfg.decoder_steps_per_critic_step = parse!(usize, "integer")
        }
        "batch_size" => cfg.batch_size = parse!(usize, "integer"),
        "clip_c" => cfg.clip_c = parse!(f64, "number"),
        "seed" => cfg.seed = parse!(u64, "integer"),
        "content_dim" => cfg.content_dim = parse!(usize, "integer"),
        "w_angle" => cfg.weights.w_angle = parse!(f64, "number"),
        "w_rec" => cfg.weights.w_rec = parse!(f64, "number"),
        "w_adv" => cfg.weights.w_adv = parse!(f64, "number"),
        "wrap" => cfg.wrap = Some(parse!(bool, "boolean")),
        "squared_l2" => cfg.squared_l2 = parse!(bool, "boolean"),
        "paper_literal_adv" => cfg.paper_literal_adv = parse!(bool, "boolean"),
        "re_rotate_per_epoch" => cfg.re_rotate_per_epoch = parse!(bool, "boolean"),
        "re_rotate_noise_std" => cfg.re_rotate_noise_std = parse!(f64, "number"),
        "train_cache" => cfg.train_cache = PathBuf::from(value),
        "test_cache" => cfg.test_cache = Some(PathBuf::from(value)),
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        "checkpoint_every" => cfg.checkpoint_every = parse!(usize, "integer"),
        other => {
            return Err(Error::Config(format!(
                "unknown configuration key {other:?}"
            )))
        }
    }
    Ok(())
}
