//! Run configuration: a flat `key = value` file plus `--set key=value` overrides.
//!
//! Relative paths are resolved against the directory of the config file. The
//! effective configuration is echoed, one `# key = value` line per key, at the
//! top of every artifact; [`parse_echo`] turns such a header back into a
//! configuration that reproduces the run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mag_core::train::{GridSpace, TrainSpec};
use mag_core::ModelConfig;

use crate::error::{AppError, Result};
use crate::windows::{SplitSpec, WindowedData};

/// Every accepted key with its default, in echo order. An empty default marks
/// a required key.
pub const KEYS: &[(&str, &str)] = &[
    ("stats", ""),
    ("trends", ""),
    ("news_emb", ""),
    ("groups", "none"),
    ("output_dir", "out"),
    ("target_column", "new_cases_per_million"),
    ("lookback", "7"),
    ("horizon", "3"),
    ("train_fraction", "0.9"),
    ("validation_fraction", "0.1"),
    ("news_dim", "auto"),
    ("news_hidden", "156,32"),
    ("gru_units", "100"),
    ("num_heads", "6"),
    ("head_size", "128"),
    ("dropout", "0.2"),
    ("use_attention", "true"),
    ("use_positional_encoding", "true"),
    ("norm_then_add", "false"),
    ("seed", "0"),
    ("batch_size", "64"),
    ("lr", "0.01"),
    ("epochs", "200"),
    ("patience", "20"),
    ("beta1", "0.9"),
    ("beta2", "0.999"),
    ("epsilon", "1e-8"),
    ("grid.batch_size", "16,32,64,128"),
    ("grid.lr", "0.001,0.01,0.1"),
    ("grid.gru_units", "10,50,100,150"),
    ("grid.dropout", "0.2,0.5"),
    ("grid.num_heads", "2,4,5,8"),
    ("grid.head_size", "2,4,6,8,128,256"),
    ("grid.max_trials", "none"),
    ("grid.seed", "0"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub stats: PathBuf,
    /// `None` runs without the trends source.
    pub trends: Option<PathBuf>,
    /// `None` runs without the news source.
    pub news_emb: Option<PathBuf>,
    pub groups: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub target_column: String,
    pub split: SplitSpec,
    /// Expected news width; checked against the loaded file when set.
    pub news_dim: Option<usize>,
    /// Input widths are filled in from the data by [`RunConfig::model_for`].
    pub model: ModelConfig,
    pub train: TrainSpec,
    pub grid: GridSpace,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| AppError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| parse(key, v)).collect()
}

fn parse_optional<T: FromStr>(key: &str, value: &str, none: &str) -> Result<Option<T>> {
    if value == none {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn join<T: Display>(values: &[T]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// `key = value` pairs of a config file; `#` starts a comment line.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| AppError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// The `# key = value` header of an artifact.
pub fn parse_echo(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map_while(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

impl RunConfig {
    /// Build from `pairs` (file order) followed by `overrides`, which may
    /// repeat keys. Relative paths are taken from `base`.
    pub fn from_pairs(pairs: &[(String, String)], overrides: &[(String, String)], base: &Path) -> Result<Self> {
        let mut values: BTreeMap<&str, String> = KEYS.iter().map(|(k, d)| (*k, d.to_string())).collect();
        let mut seen = std::collections::HashSet::new();
        for (k, _) in pairs {
            if !seen.insert(k.as_str()) {
                return Err(AppError::Config(format!("key `{k}` given twice")));
            }
        }
        for (k, v) in pairs.iter().chain(overrides) {
            let slot = values
                .iter_mut()
                .find(|(key, _)| **key == k.as_str())
                .ok_or_else(|| AppError::Config(format!("unknown key `{k}`")))?;
            *slot.1 = v.clone();
        }
        let get = |k: &str| values[k].as_str();
        for (k, d) in KEYS {
            if d.is_empty() && get(k).is_empty() {
                return Err(AppError::Config(format!("required key `{k}` is not set")));
            }
        }
        let path = |k: &str| -> PathBuf { base.join(get(k)) };
        let optional_path = |k: &str| -> Option<PathBuf> { (get(k) != "none").then(|| path(k)) };

        let seed: u64 = parse("seed", get("seed"))?;
        let model = ModelConfig {
            news_dim: 0,
            news_hidden: parse_list("news_hidden", get("news_hidden"))?,
            trends_dim: 0,
            stats_dim: 0,
            lookback: parse("lookback", get("lookback"))?,
            horizon: parse("horizon", get("horizon"))?,
            gru_units: parse("gru_units", get("gru_units"))?,
            num_heads: parse("num_heads", get("num_heads"))?,
            head_size: parse("head_size", get("head_size"))?,
            dropout: parse("dropout", get("dropout"))?,
            use_attention: parse("use_attention", get("use_attention"))?,
            use_positional_encoding: parse("use_positional_encoding", get("use_positional_encoding"))?,
            norm_then_add: parse("norm_then_add", get("norm_then_add"))?,
            seed,
        };
        let train = TrainSpec {
            batch_size: parse("batch_size", get("batch_size"))?,
            lr: parse("lr", get("lr"))?,
            epochs: parse("epochs", get("epochs"))?,
            patience: parse("patience", get("patience"))?,
            seed,
            beta1: parse("beta1", get("beta1"))?,
            beta2: parse("beta2", get("beta2"))?,
            epsilon: parse("epsilon", get("epsilon"))?,
        };
        train.validate()?;
        let grid = GridSpace {
            batch_size: parse_list("grid.batch_size", get("grid.batch_size"))?,
            lr: parse_list("grid.lr", get("grid.lr"))?,
            gru_units: parse_list("grid.gru_units", get("grid.gru_units"))?,
            dropout: parse_list("grid.dropout", get("grid.dropout"))?,
            num_heads: parse_list("grid.num_heads", get("grid.num_heads"))?,
            head_size: parse_list("grid.head_size", get("grid.head_size"))?,
            max_trials: parse_optional("grid.max_trials", get("grid.max_trials"), "none")?,
            seed: parse("grid.seed", get("grid.seed"))?,
        };
        grid.validate()?;
        let split = SplitSpec {
            train_fraction: parse("train_fraction", get("train_fraction"))?,
            validation_fraction: parse("validation_fraction", get("validation_fraction"))?,
        };
        split.validate()?;
        Ok(RunConfig {
            stats: path("stats"),
            trends: optional_path("trends"),
            news_emb: optional_path("news_emb"),
            groups: optional_path("groups"),
            output_dir: path("output_dir"),
            target_column: get("target_column").to_string(),
            split,
            news_dim: parse_optional("news_dim", get("news_dim"), "auto")?,
            model,
            train,
            grid,
        })
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let base = std::path::absolute(base).map_err(|e| AppError::io(base, e))?;
        Self::from_pairs(&parse_pairs(&text)?, overrides, &base)
    }

    /// The effective configuration as `(key, value)` pairs in [`KEYS`] order.
    pub fn echo(&self) -> Vec<(String, String)> {
        let opt_path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let m = &self.model;
        let t = &self.train;
        let g = &self.grid;
        let values = [
            self.stats.display().to_string(),
            opt_path(&self.trends),
            opt_path(&self.news_emb),
            opt_path(&self.groups),
            self.output_dir.display().to_string(),
            self.target_column.clone(),
            m.lookback.to_string(),
            m.horizon.to_string(),
            self.split.train_fraction.to_string(),
            self.split.validation_fraction.to_string(),
            self.news_dim.map_or("auto".to_string(), |d| d.to_string()),
            join(&m.news_hidden),
            m.gru_units.to_string(),
            m.num_heads.to_string(),
            m.head_size.to_string(),
            m.dropout.to_string(),
            m.use_attention.to_string(),
            m.use_positional_encoding.to_string(),
            m.norm_then_add.to_string(),
            m.seed.to_string(),
            t.batch_size.to_string(),
            t.lr.to_string(),
            t.epochs.to_string(),
            t.patience.to_string(),
            t.beta1.to_string(),
            t.beta2.to_string(),
            t.epsilon.to_string(),
            join(&g.batch_size),
            join(&g.lr),
            join(&g.gru_units),
            join(&g.dropout),
            join(&g.num_heads),
            join(&g.head_size),
            g.max_trials.map_or("none".to_string(), |n| n.to_string()),
            g.seed.to_string(),
        ];
        KEYS.iter().zip(values).map(|((k, _), v)| (k.to_string(), v)).collect()
    }

    /// Model configuration with input widths taken from `data`.
    pub fn model_for(&self, data: &WindowedData) -> Result<ModelConfig> {
        if let Some(d) = self.news_dim {
            if d != data.news_dim {
                return Err(AppError::Config(format!(
                    "news_dim is {d} but the news file has {} columns",
                    data.news_dim
                )));
            }
        }
        let config = ModelConfig {
            news_dim: data.news_dim,
            trends_dim: data.trends_dim,
            stats_dim: data.stats_dim,
            ..self.model.clone()
        };
        config.validate()?;
        Ok(config)
    }
}

/// Render the echo as artifact header lines.
pub fn echo_header(echo: &[(String, String)]) -> String {
    echo.iter().map(|(k, v)| format!("# {k} = {v}\n")).collect()
}
