use std::fs;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use toml::{Table, Value};
use varmil::ssl::PretrainConfig;
use varmil::train::{ModelChoice, RunConfig};

use crate::{PretrainArgs, RunArgs};

fn read_table(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

/// Lays `overrides` over the serialized `base` and deserializes the result,
/// so unknown keys are rejected and missing keys keep their defaults.
fn overlay<T>(base: &T, overrides: Table) -> Result<T>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let Value::Table(mut merged) = Value::try_from(base)? else {
        return Err(anyhow!("config did not serialize to a table"));
    };
    for (k, v) in overrides {
        match (merged.get_mut(&k), v) {
            (Some(Value::Table(inner)), Value::Table(sub)) => inner.extend(sub),
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    Ok(Value::Table(merged).try_into()?)
}

/// Model defaults, then the config file, then command-line flags.
pub fn run_config(args: &RunArgs) -> Result<RunConfig> {
    let file = args.config.as_deref().map(read_table).transpose()?;
    let file_model = match file.as_ref().and_then(|t| t.get("model")) {
        Some(v) => Some(
            v.as_str()
                .ok_or_else(|| anyhow!("`model` must be a string"))?
                .parse::<ModelChoice>()?,
        ),
        None => None,
    };
    let model = args.model.or(file_model).unwrap_or(ModelChoice::DeepMil);
    let mut cfg = RunConfig::for_model(model);
    if let Some(table) = file {
        cfg = overlay(&cfg, table).context("applying config file")?;
    }
    cfg.model = model;
    macro_rules! set {
        ($flag:ident => $field:ident) => {
            if let Some(v) = args.$flag {
                cfg.$field = v;
            }
        };
    }
    set!(lr => learning_rate);
    set!(wd => weight_decay);
    set!(batch => batch_size);
    set!(epochs => epochs);
    set!(eval_every => eval_every);
    set!(subsample => subsample_n);
    set!(pad_to => pad_to);
    set!(hidden => hidden_width);
    set!(seed => seed);
    set!(labels => label_mode);
    set!(objective => objective);
    cfg.validate()?;
    Ok(cfg)
}

pub fn pretrain_config(args: &PretrainArgs) -> Result<PretrainConfig> {
    let mut cfg = PretrainConfig::default();
    if let Some(path) = &args.config {
        cfg = overlay(&cfg, read_table(path)?).context("applying config file")?;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.hyper.learning_rate = v;
    }
    if let Some(v) = args.tau {
        cfg.temperature = v;
    }
    if let Some(v) = args.size {
        cfg.augment.output_size = v;
    }
    if let Some(v) = args.feature_dim {
        cfg.feature_dim = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}
