//! Flat run configuration: defaults, then a JSON file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use qdren::optim::OptimizerKind;
use qdren::{Activation, InputStyle, Mode, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const STORY_PATIENCE: usize = 50;
pub const WINDOW_PATIENCE: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Directory holding `train.txt`, `valid.txt` and `test.txt`.
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dim: usize,
    pub blocks: usize,
    pub mode: Mode,
    /// Window width; absent means whole sentences.
    pub window: Option<usize>,
    pub phi_cell: Activation,
    pub phi_out: Activation,
    pub l2: f64,
    pub dropout: f64,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub seed: u64,
    pub patience: Option<usize>,
    pub max_vocab: usize,
    pub budget: usize,
    pub train_subsample: usize,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            data: None,
            out: None,
            dim: m.dim,
            blocks: m.blocks,
            mode: m.mode,
            window: None,
            phi_cell: m.phi_cell,
            phi_out: m.phi_out,
            l2: m.l2,
            dropout: m.dropout,
            lr: m.lr,
            clip_norm: m.clip_norm,
            batch_size: m.batch_size,
            optimizer: m.optimizer,
            max_epochs: m.max_epochs,
            seed: m.seed,
            patience: None,
            max_vocab: 50_000,
            budget: 20,
            train_subsample: 1000,
            seeds: vec![0, 1, 2],
        }
    }
}

/// Flags shared by the commands that train models.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Window width (odd); 0 switches back to sentences.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub phi_cell: Option<Activation>,
    #[arg(long)]
    pub phi_out: Option<Activation>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    pub fn resolve(flags: &RunFlags) -> Result<Self, CliError> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = flags.$flag.clone() { c.$field = v; })*
            };
        }
        set!(
            mode => mode, dim => dim, blocks => blocks, lr => lr, l2 => l2,
            dropout => dropout, optimizer => optimizer, batch => batch_size, seed => seed,
            max_epochs => max_epochs, phi_cell => phi_cell, phi_out => phi_out,
            clip_norm => clip_norm, max_vocab => max_vocab,
        );
        if let Some(p) = &flags.data {
            c.data = Some(p.clone());
        }
        if let Some(p) = &flags.out {
            c.out = Some(p.clone());
        }
        if let Some(p) = flags.patience {
            c.patience = Some(p);
        }
        if let Some(b) = flags.window {
            c.window = (b > 0).then_some(b);
        }
        c.patience = Some(c.patience.unwrap_or(match c.window {
            Some(_) => WINDOW_PATIENCE,
            None => STORY_PATIENCE,
        }));
        Ok(c)
    }

    pub fn patience(&self) -> usize {
        self.patience.unwrap_or(STORY_PATIENCE)
    }

    pub fn data_dir(&self) -> Result<&Path, CliError> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::Usage("no data directory (use --data or the config)".into()))
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out
            .as_deref()
            .ok_or_else(|| CliError::Usage("no output directory (use --out or the config)".into()))
    }

    /// Model config with the data-derived sizes still unset.
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            dim: self.dim,
            blocks: self.blocks,
            mode: self.mode,
            input_style: match self.window {
                Some(b) => InputStyle::Windows(b),
                None => InputStyle::Sentences,
            },
            phi_cell: self.phi_cell,
            phi_out: self.phi_out,
            l2: self.l2,
            dropout: self.dropout,
            lr: self.lr,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            max_epochs: self.max_epochs,
            seed: self.seed,
            ..ModelConfig::default()
        }
    }

    /// Writes the resolved config to `<dir>/config.json`.
    pub fn write_beside(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Input(e.to_string()))?;
        crate::write_file(&dir.join("config.json"), &(text + "\n"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"dim": 4, "dimm": 5}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"dim": 4, "mode": "ren", "window": 5}"#).unwrap();
        assert_eq!((c.dim, c.mode, c.window), (4, Mode::Ren, Some(5)));
        assert_eq!(c.blocks, RunConfig::default().blocks);
    }

    #[test]
    fn flags_override_and_patience_follows_style() {
        let flags = RunFlags {
            blocks: Some(7),
            window: Some(3),
            ..RunFlags::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.blocks, 7);
        assert_eq!(c.patience, Some(WINDOW_PATIENCE));
        assert_eq!(c.model().input_style, InputStyle::Windows(3));
        let c = RunConfig::resolve(&RunFlags::default()).unwrap();
        assert_eq!(c.patience, Some(STORY_PATIENCE));
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::resolve(&RunFlags {
            seed: Some(9),
            ..RunFlags::default()
        })
        .unwrap();
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
