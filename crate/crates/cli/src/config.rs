//! Run settings: built-in defaults, then a `key = value` config file, then
//! `--key value` flags (flags win).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use parsnets::kv::KeyValues;
use parsnets::{Error, Result};

macro_rules! settings_keys {
    ($($key:ident = $default:literal, $help:literal;)*) => {
        /// One optional flag per settings key.
        #[derive(clap::Args, Debug, Default, Clone)]
        pub struct Overrides {
            $(
                #[arg(long, global = true, value_name = "VALUE", help = $help)]
                pub $key: Option<String>,
            )*
        }

        pub const DEFAULTS: &[(&str, &str)] = &[$((stringify!($key), $default),)*];

        impl Overrides {
            fn pairs(&self) -> Vec<(&'static str, Option<&String>)> {
                vec![$((stringify!($key), self.$key.as_ref()),)*]
            }
        }
    };
}

settings_keys! {
    seed = "0", "Master seed; every random stream is derived from it";
    out = ".", "Output directory";
    manifest = "", "Dataset manifest (train, eval, sweep-k, export-features)";
    checkpoint = "", "Checkpoint directory written by train (default: --out)";
    k = "200", "Number of base networks K";
    k_active = "10", "Active networks per sample";
    latent_dim = "0", "Encoder width h (0 means 4K)";
    input_space = "raw", "Network input: raw | embedding";
    activation = "identity", "Base-network activation: identity | rectifier";
    path = "joint", "Training path: joint | dual";
    encoder_epochs = "100", "Encoder training epochs";
    encoder_learning_rate = "0.01", "Encoder learning rate";
    encoder_batch_size = "32", "Encoder mini-batch size";
    encoder_tolerance = "1e-12", "Encoder early-stop tolerance (relative to initial loss)";
    c = "10", "Dual box bound C";
    epsilon = "0.1", "Insensitive-tube half width";
    lambda_geo = "0.1", "Weight of the class-geometry objective";
    lambda_orth = "1", "Weight of the weight-orthogonality penalty";
    learning_rate = "0.01", "Joint-training learning rate";
    epochs = "300", "Joint-training epochs";
    dual_tolerance = "1e-6", "SMO stopping tolerance";
    dual_max_passes = "10000", "SMO work cap per dimension, in units of N pair updates";
    seen_classes = "8", "Synthetic: seen classes";
    unseen_classes = "4", "Synthetic: unseen classes";
    samples_per_class = "20", "Synthetic: samples per class";
    feature_dim = "48", "Synthetic: feature dimension d";
    subspace_rank = "2", "Synthetic: per-class subspace rank r";
    semantic_dim = "16", "Synthetic: descriptor dimension s";
    noise_sigma = "0", "Synthetic: additive noise standard deviation";
    orthogonal = "true", "Synthetic: mutually orthogonal class subspaces";
    split = "test_unseen", "export-features: train | test_seen | test_unseen";
    k_values = "10,20,30,40,80,120,160,200", "sweep-k: comma-separated k values";
    tolerance = "1e-6", "verify: largest objective accepted as the global minimum";
    verify_pairs = "500", "verify: random pairs for the concatenation inequality";
    verify_orthogonal_pairs = "200", "verify: constructed orthogonal pairs";
}

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
    origin: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let mut origin: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, _)| (k.to_string(), "default".to_string())).collect();
        if let Some(path) = config {
            let file = KeyValues::read(path)?;
            let allowed: Vec<&str> = DEFAULTS.iter().map(|(k, _)| *k).collect();
            file.reject_unknown(&allowed)?;
            for key in file.keys() {
                values.insert(key.to_string(), file.get(key).unwrap_or_default().to_string());
                origin.insert(key.to_string(), path.display().to_string());
            }
        }
        for (key, value) in overrides.pairs() {
            if let Some(v) = value {
                values.insert(key.to_string(), v.clone());
                origin.insert(key.to_string(), format!("--{}", key.replace('_', "-")));
            }
        }
        Ok(Self { values, origin })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.trim().parse::<T>().map_err(|e| {
            let from = self.origin.get(key).map(String::as_str).unwrap_or("default");
            Error::InvalidInput(format!("setting `{key}` = `{raw}` (from {from}): {e}"))
        })
    }

    /// Non-empty path setting.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        let raw = self.raw(key).trim();
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<T>()
                    .map_err(|e| Error::InvalidInput(format!("setting `{key}`: bad entry `{t}`: {e}")))
            })
            .collect()
    }
}
