//! The run configuration file shared by every subcommand.

use std::path::{Path, PathBuf};

use hcdir_core::error::{Error, Result};
use hcdir_core::synthdata::GenConfig;
use hcdir_core::train_eval::{ModelKind, SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};

/// Every field is optional; unknown keys at any level are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfigFile {
    pub generator: GenConfig,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub model: ModelKind,
    /// Root of every output path.
    pub out: PathBuf,
    /// Root seed; when set it replaces the generator, split and training
    /// seeds.
    pub seed: Option<u64>,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        Self {
            generator: GenConfig::default(),
            split: SplitSpec::default(),
            train: TrainConfig::default(),
            model: ModelKind::Hcdir,
            out: PathBuf::from("runs"),
            seed: None,
        }
    }
}

impl RunConfigFile {
    /// Reads and validates `path`; `None` gives the defaults. All failures
    /// are configuration errors.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            None => Self::default(),
            Some(p) => {
                let raw = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
        };
        if let Some(s) = cfg.seed {
            cfg.set_seed(s);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, s: u64) {
        self.seed = Some(s);
        self.generator.seed = s;
        self.split.seed = s;
        self.train.seed = s;
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Contract(m) => Error::Config(m),
            other => other,
        };
        self.generator.validate().map_err(cfg)?;
        self.split.validate().map_err(cfg)?;
        self.train.validate().map_err(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.json");
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let (_d, p) = write(r#"{"model": "emcdr-gru", "train": {"tahin": {"dim": 16}}, "seed": 4}"#);
        let c = RunConfigFile::load(Some(&p)).unwrap();
        assert_eq!(c.model, ModelKind::EmcdrGru);
        assert_eq!(c.train.tahin.dim, 16);
        assert_eq!(c.train.tahin.heads, TrainConfig::default().tahin.heads);
        assert_eq!((c.generator.seed, c.split.seed, c.train.seed), (4, 4, 4));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in [
            r#"{"modle": "hcdir"}"#,
            r#"{"train": {"tahin": {"width": 3}}}"#,
            r#"{"split": {"eta": 0.0}}"#,
            r#"{"model": "svd"}"#,
            "{\n  \"model\": \"hcdir\",\n  oops\n}",
        ] {
            let (_d, p) = write(text);
            let e = RunConfigFile::load(Some(&p)).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
        }
        let (_d, p) = write("{\n  \"model\": \"hcdir\",\n  oops\n}");
        let msg = RunConfigFile::load(Some(&p)).unwrap_err().to_string();
        assert!(msg.contains("line 3 column 3"), "{msg}");
    }
}
