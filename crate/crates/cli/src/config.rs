use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stmarl_core::envs::EnvPreset;
use stmarl_core::marl::TrainerConfig;

/// One run configuration shared by every subcommand. Sections that a
/// command does not use are ignored by it but still validated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Environment preset: `cartpoles-sym`, `cartpoles-asym` or `cartpole-adversary`.
    pub env: EnvPreset,
    /// Episode length; the preset's own horizon (1000) when absent.
    pub horizon: Option<usize>,
    /// One training run per seed. Empty means `[trainer.seed]`.
    pub seeds: Vec<u64>,
    /// Extra checkpoint every N episodes besides the final one; 0 disables.
    pub checkpoint_every: usize,
    /// Output directory; defaults to a name under `$STMARL_OUT`.
    pub out: Option<PathBuf>,
    pub trainer: TrainerConfig,
    pub tournament: TournamentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TournamentConfig {
    pub games_per_pair: usize,
    pub seed: u64,
    /// Dump one trajectory CSV per game.
    pub trajectories: bool,
}

impl Default for TournamentConfig {
    fn default() -> Self {
        Self { games_per_pair: 20, seed: 0, trajectories: false }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: EnvPreset::CartpolesSym,
            horizon: None,
            seeds: Vec::new(),
            checkpoint_every: 0,
            out: None,
            trainer: TrainerConfig::default(),
            tournament: TournamentConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML file, or returns the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.trainer.seed]
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.trainer.validate()?;
        if self.horizon == Some(0) {
            bail!("horizon must be positive");
        }
        let mut seeds = self.seeds();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            bail!("duplicate training seed in {:?}", self.seeds);
        }
        if self.tournament.games_per_pair == 0 {
            bail!("tournament.games_per_pair must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }
}
