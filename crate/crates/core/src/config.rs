//! Flat `key = value` training configuration files.
//!
//! Blank lines and `#` comments are ignored; keys may use `_` or `-`.
//! Every key from [`TrainConfig`] is accepted, plus `ablate` for the
//! ablation list and `probe_dims = default`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::objective::Ablation;
use crate::store::DimensionSchedule;
use crate::train::TrainConfig;

pub const KEYS: &[&str] = &[
    "score_fn",
    "norm",
    "dims",
    "batch_size",
    "neg_per_pos",
    "max_epochs",
    "lr",
    "lr_search",
    "validate_every",
    "patience",
    "probe_dims",
    "seed",
    "ablate",
    "ei_input",
    "pair_mode",
    "alpha",
    "temperature",
    "normalize_entities",
    "margin",
];

/// Apply the settings in `text` on top of `base`.
pub fn parse_config(text: &str, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = base;
    let mut seen = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| Error::Config { line, message };
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let value = value.trim().trim_matches('"');
        if !KEYS.contains(&key.as_str()) {
            return Err(err(format!("unknown key `{key}`")));
        }
        if seen.contains(&key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        apply(&mut cfg, &key, value).map_err(|e| err(e.to_string()))?;
        seen.push(key);
    }
    Ok(cfg)
}

fn num<T: std::str::FromStr>(v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("`{v}` is not a valid number")))
}

fn list<T: std::str::FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(s.trim())).collect()
}

fn flag(v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{v}` is not a boolean"))),
    }
}

/// Set one key; shared with command-line overrides.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "score_fn" => cfg.score_fn = value.parse()?,
        "norm" => cfg.norm = value.parse()?,
        "dims" => cfg.dims = DimensionSchedule::parse_spec(value)?,
        "batch_size" => cfg.batch_size = num(value)?,
        "neg_per_pos" => cfg.neg_per_pos = num(value)?,
        "max_epochs" => cfg.max_epochs = num(value)?,
        "lr" => cfg.lr = num(value)?,
        "lr_search" => cfg.lr_search = list(value)?,
        "validate_every" => cfg.early_stop.validate_every = num(value)?,
        "patience" => cfg.early_stop.patience = num(value)?,
        "probe_dims" => {
            cfg.early_stop.probe_dims = if value.eq_ignore_ascii_case("default") {
                None
            } else {
                Some(list(value)?)
            }
        }
        "seed" => cfg.seed = num(value)?,
        "ablate" => cfg.ablation = Ablation::parse(value)?,
        "ei_input" => cfg.ei_input = value.parse()?,
        "pair_mode" => cfg.pair_mode = value.parse()?,
        "alpha" => cfg.alpha = num(value)?,
        "temperature" => cfg.temperature = num(value)?,
        "normalize_entities" => cfg.normalize_entities = flag(value)?,
        "margin" => cfg.margin = num(value)?,
        other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
    }
    Ok(())
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Render a configuration that `parse_config` reads back unchanged.
pub fn format_config(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let probe = cfg
        .early_stop
        .probe_dims
        .as_ref()
        .map_or_else(|| "default".to_owned(), |p| join(p));
    let ei = match cfg.ei_input {
        crate::loss::EiWeightInput::Sigmoid => "sigmoid",
        crate::loss::EiWeightInput::Raw => "raw",
    };
    let pair = match cfg.pair_mode {
        crate::objective::PairMode::Single => "single",
        crate::objective::PairMode::Pair => "pair",
    };
    let _ = writeln!(s, "score_fn = {}", cfg.score_fn);
    let _ = writeln!(s, "norm = {}", cfg.norm);
    let _ = writeln!(s, "dims = {}", join(cfg.dims.dims()));
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "neg_per_pos = {}", cfg.neg_per_pos);
    let _ = writeln!(s, "max_epochs = {}", cfg.max_epochs);
    let _ = writeln!(s, "lr = {:?}", cfg.lr);
    let _ = writeln!(s, "lr_search = {}", cfg.lr_search.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
    let _ = writeln!(s, "validate_every = {}", cfg.early_stop.validate_every);
    let _ = writeln!(s, "patience = {}", cfg.early_stop.patience);
    let _ = writeln!(s, "probe_dims = {probe}");
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "ablate = {}", cfg.ablation);
    let _ = writeln!(s, "ei_input = {ei}");
    let _ = writeln!(s, "pair_mode = {pair}");
    let _ = writeln!(s, "alpha = {:?}", cfg.alpha);
    let _ = writeln!(s, "temperature = {:?}", cfg.temperature);
    let _ = writeln!(s, "normalize_entities = {}", cfg.normalize_entities);
    let _ = writeln!(s, "margin = {:?}", cfg.margin);
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::EiWeightInput;
    use crate::objective::PairMode;
    use crate::store::{Norm, ScoreKind};

    #[test]
    fn parses_keys_and_comments() {
        let text = "# small run\n\
                    score-fn = rotate\n\
                    norm = l1   # distance\n\
                    dims = 8:64:8\n\
                    ablate = noMLM\n\
                    probe_dims = 8,64\n\
                    ei_input = raw\n\
                    pair_mode = pair\n\
                    normalize_entities = true\n";
        let c = parse_config(text, TrainConfig::default()).unwrap();
        assert_eq!(c.score_fn, ScoreKind::RotatE);
        assert_eq!(c.norm, Norm::L1);
        assert_eq!(c.dims.len(), 8);
        assert!(c.ablation.no_mlm && !c.ablation.no_eim);
        assert_eq!(c.early_stop.probe_dims, Some(vec![8, 64]));
        assert_eq!(c.ei_input, EiWeightInput::Raw);
        assert_eq!(c.pair_mode, PairMode::Pair);
        assert!(c.normalize_entities);
        assert_eq!(c.batch_size, 1024);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("lr = 0.1\nbogus = 3\n", TrainConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }), "{e}");
        let e = parse_config("\nlr 0.1\n", TrainConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        let e = parse_config("dims = 10,5\n", TrainConfig::default()).unwrap_err();
        assert!(matches!(e, Error::Config { line: 1, .. }));
        assert!(parse_config("seed = 1\nseed = 2\n", TrainConfig::default()).is_err());
    }

    #[test]
    fn format_round_trips() {
        let mut c = TrainConfig::default();
        c.lr = 0.0123;
        c.ablation = Ablation::ALL;
        c.early_stop.probe_dims = Some(vec![10, 640]);
        let back = parse_config(&format_config(&c), TrainConfig::default()).unwrap();
        assert_eq!(back, c);
        let d = TrainConfig::default();
        assert_eq!(parse_config(&format_config(&d), TrainConfig::default()).unwrap(), d);
    }
}
