//! Trained-model checkpoints: JSON with the model, the trainer settings that
//! produced it, and hashes that tie the two together.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::network::{round_decays_to_pow2, Architecture, LifParams, NetworkModel};
use crate::trainer::{init_model, train_with_progress, EpochStats, TrainReport, TrainerConfig};

pub const CHECKPOINT_VERSION: u32 = 1;
/// Membrane decay before power-of-two rounding (snaps to 1 - 2^-4).
pub const DEFAULT_BETA: f64 = 0.95;
pub const DEFAULT_THRESHOLD: f64 = 1.0;

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    hex::encode(Sha256::digest(&bytes))
}

/// Everything that determines a training run, hashed into the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetup {
    pub architecture: Architecture,
    pub lif: LifParams,
    pub init_seed: u64,
    pub trainer: TrainerConfig,
}

impl TrainingSetup {
    /// First-order LIF network with the default decay and threshold; the
    /// initialization seed is the training seed.
    pub fn first_order(architecture: Architecture, trainer: TrainerConfig) -> Self {
        Self {
            architecture,
            lif: LifParams::first_order(DEFAULT_BETA, DEFAULT_THRESHOLD),
            init_seed: trainer.seed,
            trainer,
        }
    }

    /// Seeded initial weights with decays already rounded to powers of two.
    pub fn initial_model(&self) -> NetworkModel {
        round_decays_to_pow2(&init_model(&self.architecture, self.lif, self.init_seed))
    }

    /// Trains from [`Self::initial_model`] and packages the result.
    pub fn run(
        &self,
        train: &DatasetSplit,
        test: &DatasetSplit,
        progress: impl FnMut(&EpochStats),
    ) -> Result<Checkpoint> {
        let (model, report) = train_with_progress(&self.initial_model(), train, test, &self.trainer, progress)?;
        Ok(Checkpoint::new(self.clone(), model, Some(report)))
    }

    pub fn config_hash(&self) -> String {
        hash_json(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub setup: TrainingSetup,
    pub config_hash: String,
    pub model_hash: String,
    pub model: NetworkModel,
    pub report: Option<TrainReport>,
}

impl Checkpoint {
    pub fn new(setup: TrainingSetup, model: NetworkModel, report: Option<TrainReport>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config_hash: setup.config_hash(),
            model_hash: hash_json(&model),
            setup,
            model,
            report,
        }
    }

    pub fn seed(&self) -> u64 {
        self.setup.trainer.seed
    }

    /// Recomputes both hashes and checks the model against the recorded
    /// architecture.
    pub fn verify(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.setup.config_hash() != self.config_hash {
            return Err(Error::config("checkpoint config hash does not match its training setup"));
        }
        if hash_json(&self.model) != self.model_hash {
            return Err(Error::config("checkpoint model hash does not match its weights"));
        }
        self.model.validate()?;
        if self.model.architecture() != self.setup.architecture {
            return Err(Error::config(format!(
                "checkpoint model is {}, setup says {}",
                self.model.architecture(),
                self.setup.architecture
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Loads and verifies a checkpoint.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt = Self::from_json(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        ckpt.verify()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::round_decays_to_pow2;
    use crate::trainer::init_model;

    fn sample() -> Checkpoint {
        let arch: Architecture = "6-5-3".parse().unwrap();
        let lif = LifParams::first_order(0.95, 1.0);
        let model = round_decays_to_pow2(&init_model(&arch, lif, 3));
        let setup = TrainingSetup {
            architecture: arch,
            lif,
            init_seed: 3,
            trainer: TrainerConfig::default(),
        };
        Checkpoint::new(setup, model, None)
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = sample();
        c.model.layers[0].weights[0] = 0.1 + 0.2;
        c.model.layers[0].weights[1] = -1.0e-300;
        c.model_hash = hash_json(&c.model);
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        back.verify().unwrap();
    }

    #[test]
    fn tampering_is_detected() {
        let mut c = sample();
        c.model.layers[1].weights[2] += 1e-9;
        assert!(c.verify().is_err());
        let mut c = sample();
        c.setup.trainer.epochs = 3;
        assert!(c.verify().is_err());
    }

    #[test]
    fn config_hash_tracks_setup() {
        let a = sample();
        let mut s = a.setup.clone();
        assert_eq!(s.config_hash(), a.config_hash);
        s.trainer.seed = 9;
        assert_ne!(s.config_hash(), a.config_hash);
    }
}
