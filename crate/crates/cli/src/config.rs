//! Run configuration: a flat key=value file with per-dataset defaults.
//!
//! Every key has a default derived from the dataset kind (the per-dataset
//! parameter table for thresholds, surrogate width, decay factors, dropout,
//! and epoch budget), so a minimal config names only the dataset and
//! whatever the run overrides. Every run writes back a fully resolved
//! manifest so the exact effective configuration is always on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct ConfigError {
    pub detail: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.detail)
    }
}

impl std::error::Error for ConfigError {}

fn err<T>(detail: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError {
        detail: detail.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Cifar10,
    DvsCifar10,
    Nmnist,
    Mnist,
    Synth,
}

impl DatasetKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "cifar10" => Ok(DatasetKind::Cifar10),
            "dvs-cifar10" => Ok(DatasetKind::DvsCifar10),
            "nmnist" => Ok(DatasetKind::Nmnist),
            "mnist" => Ok(DatasetKind::Mnist),
            "synth" => Ok(DatasetKind::Synth),
            other => err(format!(
                "unknown dataset kind {other:?}; expected cifar10, dvs-cifar10, nmnist, mnist, or synth"
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::DvsCifar10 => "dvs-cifar10",
            DatasetKind::Nmnist => "nmnist",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Synth => "synth",
        }
    }

    /// True for event-camera datasets whose samples are spike frames.
    pub fn event_driven(self) -> bool {
        matches!(self, DatasetKind::DvsCifar10 | DatasetKind::Nmnist)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "32" => Ok(Precision::F32),
            "64" => Ok(Precision::F64),
            other => err(format!("precision must be 32 or 64, got {other:?}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "32",
            Precision::F64 => "64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => err(format!("optimizer must be adam or sgd, got {other:?}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

/// How static images enter the network: straight into the encoding layer,
/// or pre-sampled into spike trains by the Bernoulli rate encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    Direct,
    Bernoulli,
}

impl EncodeMode {
    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "direct" => Ok(EncodeMode::Direct),
            "bernoulli" => Ok(EncodeMode::Bernoulli),
            other => err(format!("encode must be direct or bernoulli, got {other:?}")),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodeMode::Direct => "direct",
            EncodeMode::Bernoulli => "bernoulli",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub structure: String,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub t_steps: usize,
    pub v_th: f64,
    pub a: f64,
    pub k_tau1: f64,
    pub k_tau2: f64,
    pub neunorm: bool,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Worker threads for batch parallelism; 0 means all cores.
    pub threads: usize,
    pub out_dir: PathBuf,
    pub encode: EncodeMode,
    /// Synthetic-corpus sizes, used only by the `synth` dataset kind.
    pub synth_train: usize,
    pub synth_test: usize,
    /// Seed for the shuffled train/test split of container datasets.
    pub split_seed: u64,
}

impl RunConfig {
    /// Per-dataset defaults. Thresholds, surrogate widths, leak factors,
    /// dropout, and epoch budgets follow the per-dataset parameter table;
    /// frame-based datasets train with SGD + momentum and step decay,
    /// event-driven ones with Adam.
    pub fn defaults(dataset: DatasetKind) -> RunConfig {
        let base = RunConfig {
            structure: String::new(),
            dataset,
            data_dir: None,
            t_steps: 4,
            v_th: 0.25,
            a: 0.25,
            k_tau1: 0.3,
            k_tau2: 0.9,
            neunorm: true,
            dropout: 0.0,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            precision: Precision::F32,
            threads: 0,
            out_dir: PathBuf::from("runs/default"),
            encode: EncodeMode::Direct,
            synth_train: 512,
            synth_test: 128,
            split_seed: 42,
        };
        match dataset {
            DatasetKind::Cifar10 => RunConfig {
                structure:
                    "128C3(Encoding)-256C3-AP2-512C3-AP2-1024C3-512C3-1024FC-512FC-Voting"
                        .into(),
                t_steps: 8,
                v_th: 0.75,
                a: 1.0,
                k_tau1: 0.25,
                dropout: 0.5,
                optimizer: OptimizerKind::Sgd,
                lr: 0.1,
                epochs: 150,
                ..base
            },
            DatasetKind::DvsCifar10 => RunConfig {
                // Single pooling stage: 42 halves once to 21.
                structure: "64C3(Encoding)-AP2-128C3-256FC-Voting".into(),
                t_steps: 10,
                v_th: 0.05,
                a: 0.1,
                k_tau1: 0.35,
                epochs: 200,
                ..base
            },
            DatasetKind::Nmnist => RunConfig {
                // Single pooling stage: 34 halves once to 17.
                structure: "64C3(Encoding)-AP2-64C3-256FC-Voting".into(),
                t_steps: 10,
                epochs: 200,
                ..base
            },
            DatasetKind::Mnist | DatasetKind::Synth => RunConfig {
                structure: "32C3(Encoding)-AP2-32C3-AP2-256FC-Voting".into(),
                t_steps: 4,
                epochs: 10,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.structure.is_empty() {
            return err("structure must not be empty");
        }
        if self.t_steps == 0 {
            return err("T must be >= 1");
        }
        if self.batch_size == 0 {
            return err("batch_size must be >= 1");
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return err(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.lr <= 0.0 {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if matches!(self.dataset, DatasetKind::Mnist | DatasetKind::Nmnist)
            && self.data_dir.is_none()
        {
            return err(format!(
                "dataset {} needs data_dir pointing at its files",
                self.dataset.name()
            ));
        }
        if self.dataset == DatasetKind::DvsCifar10 && self.data_dir.is_none() {
            return err("dataset dvs-cifar10 needs data_dir pointing at a .spkt container");
        }
        Ok(())
    }

    /// Emit the fully resolved key=value form; `parse_pairs` of the output
    /// reproduces this config exactly.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("dataset", self.dataset.name().into());
        push("structure", self.structure.clone());
        if let Some(dir) = &self.data_dir {
            push("data_dir", dir.display().to_string());
        }
        push("T", self.t_steps.to_string());
        push("v_th", self.v_th.to_string());
        push("a", self.a.to_string());
        push("k_tau1", self.k_tau1.to_string());
        push("k_tau2", self.k_tau2.to_string());
        push("neunorm", if self.neunorm { "on" } else { "off" }.into());
        push("dropout", self.dropout.to_string());
        push("optimizer", self.optimizer.name().into());
        push("lr", self.lr.to_string());
        push("momentum", self.momentum.to_string());
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("seed", self.seed.to_string());
        push("precision", self.precision.name().into());
        push("threads", self.threads.to_string());
        push("out_dir", self.out_dir.display().to_string());
        push("encode", self.encode.name().into());
        push("synth_train", self.synth_train.to_string());
        push("synth_test", self.synth_test.to_string());
        push("split_seed", self.split_seed.to_string());
        out
    }
}

/// Split a config file into ordered key/value pairs. Lines are
/// `key = value`; blank lines and `#` comments are skipped; values keep
/// internal whitespace (structure strings contain none, paths may).
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return err(format!("line {}: expected key = value, got {raw:?}", lineno + 1));
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        other => err(format!("{key} must be on/off, got {other:?}")),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| ConfigError {
            detail: format!("{key}: cannot parse {value:?}: {e}"),
        })
}

/// Build a config from key=value text: the dataset key selects the default
/// row, then every other key overrides one field. Unknown keys are errors.
pub fn config_from_pairs(pairs: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let dataset = match pairs.iter().find(|(k, _)| k == "dataset") {
        Some((_, v)) => DatasetKind::parse(v)?,
        None => return err("config must name a dataset"),
    };
    let mut cfg = RunConfig::defaults(dataset);
    let mut seen = BTreeMap::new();
    for (key, value) in pairs {
        if let Some(first) = seen.insert(key.clone(), value.clone()) {
            return err(format!(
                "duplicate key {key} (first {first:?}, then {value:?})"
            ));
        }
        match key.as_str() {
            "dataset" => {}
            "structure" => cfg.structure = value.clone(),
            "data_dir" => cfg.data_dir = Some(PathBuf::from(value)),
            "T" => cfg.t_steps = parse_num(key, value)?,
            "v_th" => cfg.v_th = parse_num(key, value)?,
            "a" => cfg.a = parse_num(key, value)?,
            "k_tau1" => cfg.k_tau1 = parse_num(key, value)?,
            "k_tau2" => cfg.k_tau2 = parse_num(key, value)?,
            "neunorm" => cfg.neunorm = parse_bool(key, value)?,
            "dropout" => cfg.dropout = parse_num(key, value)?,
            "optimizer" => cfg.optimizer = OptimizerKind::parse(value)?,
            "lr" => cfg.lr = parse_num(key, value)?,
            "momentum" => cfg.momentum = parse_num(key, value)?,
            "epochs" => cfg.epochs = parse_num(key, value)?,
            "batch_size" => cfg.batch_size = parse_num(key, value)?,
            "seed" => cfg.seed = parse_num(key, value)?,
            "precision" => cfg.precision = Precision::parse(value)?,
            "threads" => cfg.threads = parse_num(key, value)?,
            "out_dir" => cfg.out_dir = PathBuf::from(value),
            "encode" => cfg.encode = EncodeMode::parse(value)?,
            "synth_train" => cfg.synth_train = parse_num(key, value)?,
            "synth_test" => cfg.synth_test = parse_num(key, value)?,
            "split_seed" => cfg.split_seed = parse_num(key, value)?,
            other => return err(format!("unknown key {other:?}")),
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        detail: format!("cannot read {}: {e}", path.display()),
    })?;
    let pairs = parse_pairs(&text)?;
    config_from_pairs(&pairs).map_err(|e| ConfigError {
        detail: format!("{}: {}", path.display(), e.detail),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_defaults_match_the_parameter_table() {
        // (kind, v_th, a, k_tau1, k_tau2, dropout)
        let rows = [
            (DatasetKind::Cifar10, 0.75, 1.0, 0.25, 0.9, 0.5),
            (DatasetKind::DvsCifar10, 0.05, 0.1, 0.35, 0.9, 0.0),
            (DatasetKind::Nmnist, 0.25, 0.25, 0.3, 0.9, 0.0),
        ];
        for (kind, v_th, a, k_tau1, k_tau2, dropout) in rows {
            let cfg = RunConfig::defaults(kind);
            assert_eq!(cfg.v_th, v_th, "{}", kind.name());
            assert_eq!(cfg.a, a, "{}", kind.name());
            assert_eq!(cfg.k_tau1, k_tau1, "{}", kind.name());
            assert_eq!(cfg.k_tau2, k_tau2, "{}", kind.name());
            assert_eq!(cfg.dropout, dropout, "{}", kind.name());
        }
        assert_eq!(RunConfig::defaults(DatasetKind::Cifar10).epochs, 150);
        assert_eq!(RunConfig::defaults(DatasetKind::DvsCifar10).epochs, 200);
        assert_eq!(RunConfig::defaults(DatasetKind::Nmnist).epochs, 200);
        assert_eq!(
            RunConfig::defaults(DatasetKind::Cifar10).optimizer,
            OptimizerKind::Sgd
        );
        assert_eq!(
            RunConfig::defaults(DatasetKind::Nmnist).optimizer,
            OptimizerKind::Adam
        );
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let pairs = parse_pairs("dataset = synth\nepochs = 3\n").unwrap();
        let cfg = config_from_pairs(&pairs).unwrap();
        assert_eq!(cfg.dataset, DatasetKind::Synth);
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.v_th, 0.25);
        assert_eq!(cfg.structure, "32C3(Encoding)-AP2-32C3-AP2-256FC-Voting");
        cfg.validate().unwrap();
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "# a comment\n\n  dataset=synth  \n T =  2 \n";
        let pairs = parse_pairs(text).unwrap();
        let cfg = config_from_pairs(&pairs).unwrap();
        assert_eq!(cfg.t_steps, 2);
    }

    #[test]
    fn unknown_duplicate_and_malformed_keys_are_loud() {
        assert!(parse_pairs("no equals sign").is_err());
        let unknown = parse_pairs("dataset = synth\nbogus = 1").unwrap();
        assert!(config_from_pairs(&unknown).unwrap_err().detail.contains("bogus"));
        let dup = parse_pairs("dataset = synth\nT = 1\nT = 2").unwrap();
        assert!(config_from_pairs(&dup).unwrap_err().detail.contains("duplicate"));
        let badnum = parse_pairs("dataset = synth\nT = soon").unwrap();
        assert!(config_from_pairs(&badnum).is_err());
    }

    #[test]
    fn manifest_round_trips_exactly() {
        let mut cfg = RunConfig::defaults(DatasetKind::Nmnist);
        cfg.data_dir = Some(PathBuf::from("/data/events"));
        cfg.seed = 7;
        cfg.precision = Precision::F64;
        cfg.neunorm = false;
        cfg.lr = 5e-4;
        let text = cfg.manifest();
        let back = config_from_pairs(&parse_pairs(&text).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn validation_rejects_missing_data_dir_and_bad_ranges() {
        let cfg = RunConfig::defaults(DatasetKind::Mnist);
        assert!(cfg.validate().is_err()); // no data_dir
        let mut cfg = RunConfig::defaults(DatasetKind::Synth);
        cfg.dropout = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::defaults(DatasetKind::Synth);
        cfg.t_steps = 0;
        assert!(cfg.validate().is_err());
    }
}
