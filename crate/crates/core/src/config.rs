//! Run configuration file: `[data]`, `[rl]`, `[sdl]` and `[nlp]` sections.
//!
//! Every key is optional; missing keys take the defaults of the owning
//! module. Command-line flags are applied on top by the caller.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeler::EncoderTrainConfig;
use crate::phantom::PhantomConfig;
use crate::rl::QLearningSpec;
use crate::sdl::SdlTrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
    #[default]
    Desk,
}

impl Preset {
    pub fn phantom(self, seed: u64) -> PhantomConfig {
        match self {
            Preset::Paper => PhantomConfig::paper(seed),
            Preset::Desk => PhantomConfig::desk(seed),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub preset: Preset,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the training stages; data generation has its own.
    pub seed: u64,
    pub data: DataConfig,
    pub rl: QLearningSpec,
    pub sdl: SdlTrainConfig,
    pub nlp: EncoderTrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn sdl_config(&self) -> SdlTrainConfig {
        SdlTrainConfig { seed: self.seed, ..self.sdl.clone() }
    }

    pub fn nlp_config(&self) -> EncoderTrainConfig {
        EncoderTrainConfig { seed: self.seed, ..self.nlp.clone() }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_files() {
        let d = RunConfig::default();
        assert_eq!((d.rl.episodes, d.rl.batch, d.rl.gamma), (145, 24, 0.99));
        assert_eq!(d.sdl.epochs, 100);
        assert_eq!(d.data.preset, Preset::Desk);

        let c = RunConfig::from_toml("seed = 3\n[rl]\nepisodes = 10\n[rl.epsilon]\neps0 = 0.5\n[data]\npreset = \"paper\"\n").unwrap();
        assert_eq!((c.seed, c.rl.episodes, c.rl.batch), (3, 10, 24));
        assert_eq!(c.rl.epsilon.eps0, 0.5);
        assert_eq!(c.rl.epsilon.eps_min, 1e-4);
        assert_eq!(c.data.preset, Preset::Paper);
        assert_eq!(c.sdl_config().seed, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::from_toml("[rl]\nepisode = 3\n"), Err(Error::Config(_))));
        assert!(RunConfig::from_toml("[model]\n").is_err());
    }

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.seed = 11;
        c.rl.lr = 3e-4;
        c.nlp.margin = 0.4;
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
    }
}
