use crate::data::{SplitSpec, SyntheticParams, SyntheticTask};
use crate::optim::ClipMode;
use crate::privmech::PrivacyPenalty;

use super::HarnessError;

/// What the releaser observes at each step besides its seed noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservationMode {
    /// `w_t = y_t`.
    #[default]
    Consumption,
    /// `w_t = (y_t, onehot(x_t))`.
    ConsumptionAndLabels,
}

impl ObservationMode {
    pub fn dim(self, alphabet_size: usize) -> usize {
        match self {
            ObservationMode::Consumption => 1,
            ObservationMode::ConsumptionAndLabels => 1 + alphabet_size,
        }
    }
}

/// Everything [`train_adversarial`](super::train_adversarial) and
/// [`train_attacker`](super::train_attacker) need.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// B
    pub batch_size: usize,
    /// k, adversary updates per releaser update.
    pub adversary_steps: usize,
    /// C
    pub clip: f64,
    pub clip_mode: ClipMode,
    /// β, weight of the releaser's recurrent L2 penalty.
    pub beta: f64,
    /// λ
    pub lambda: f64,
    /// m, seed-noise channels.
    pub noise_dim: usize,
    /// Passes over the training set; one pass is `⌈N/B⌉` releaser updates.
    pub epochs: usize,
    pub releaser_lr: f64,
    pub adversary_lr: f64,
    pub attacker_lr: f64,
    /// Per-epoch multiplicative learning-rate decay shared by all three
    /// networks; 1 keeps the rates constant.
    pub lr_decay: f64,
    pub attacker_epochs: usize,
    /// Attacker epochs without validation improvement before stopping.
    pub attacker_patience: usize,
    pub releaser_hidden: Vec<usize>,
    pub adversary_hidden: Vec<usize>,
    pub attacker_hidden: Vec<usize>,
    pub observation: ObservationMode,
    pub penalty: PrivacyPenalty,
    /// Keep the releaser from the epoch with the lowest validation objective
    /// (searched over the second half of training) instead of the last one.
    pub select_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            adversary_steps: 4,
            clip: 1.0,
            clip_mode: ClipMode::Value,
            beta: 1e-4,
            lambda: 0.0,
            noise_dim: 8,
            epochs: 30,
            releaser_lr: 1e-2,
            adversary_lr: 1e-2,
            attacker_lr: 1e-2,
            lr_decay: 0.93,
            attacker_epochs: 30,
            attacker_patience: 5,
            releaser_hidden: vec![32, 32],
            adversary_hidden: vec![16],
            attacker_hidden: vec![16],
            observation: ObservationMode::ConsumptionAndLabels,
            penalty: PrivacyPenalty::Entropy,
            select_best: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.batch_size == 0 {
            return fail("batch size B must be at least 1".into());
        }
        if self.adversary_steps == 0 {
            return fail("adversary steps k must be at least 1".into());
        }
        if !(self.clip > 0.0 && self.clip.is_finite()) {
            return fail(format!("clip value C must be positive, got {}", self.clip));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail(format!("β must be non-negative, got {}", self.beta));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("λ must be non-negative, got {}", self.lambda));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail(format!("learning-rate decay must lie in (0, 1], got {}", self.lr_decay));
        }
        if self.epochs == 0 || self.attacker_epochs == 0 {
            return fail("epoch budgets must be positive".into());
        }
        for (name, lr) in [
            ("releaser", self.releaser_lr),
            ("adversary", self.adversary_lr),
            ("attacker", self.attacker_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} learning rate must be positive, got {lr}"));
            }
        }
        for (name, h) in [
            ("releaser", &self.releaser_hidden),
            ("adversary", &self.adversary_hidden),
            ("attacker", &self.attacker_hidden),
        ] {
            if h.is_empty() || h.contains(&0) {
                return fail(format!("{name} needs at least one layer of positive width, got {h:?}"));
            }
        }
        Ok(())
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..self.clone() }
    }
}

/// Synthetic data block of a preset.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSetup {
    pub n_houses: usize,
    pub days_per_house: usize,
    pub params: SyntheticParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub train: TrainConfig,
    pub data: SyntheticSetup,
    pub split: SplitSpec,
    pub lambdas: Vec<f64>,
}

pub const PRESET_NAMES: [&str; 4] = ["desk-occupancy", "desk-identity", "occupancy-large", "identity-large"];

impl Preset {
    pub fn by_name(name: &str) -> Option<Preset> {
        let occupancy_data = SyntheticSetup {
            n_houses: 5,
            days_per_house: 400,
            params: SyntheticParams::default(),
            seed: 2024,
        };
        let identity_data = SyntheticSetup {
            params: SyntheticParams {
                task: SyntheticTask::Identity,
                ..SyntheticParams::default()
            },
            ..occupancy_data.clone()
        };
        let base = TrainConfig::default();
        let (train, data) = match name {
            "desk-occupancy" => (base, occupancy_data),
            "desk-identity" => (
                TrainConfig {
                    adversary_steps: 5,
                    noise_dim: 3,
                    ..base
                },
                identity_data,
            ),
            "occupancy-large" => (
                TrainConfig {
                    batch_size: 128,
                    adversary_steps: 4,
                    noise_dim: 8,
                    beta: 1.5,
                    lr_decay: 1.0,
                    releaser_lr: 1e-3,
                    adversary_lr: 1e-3,
                    attacker_lr: 1e-3,
                    releaser_hidden: vec![64; 4],
                    adversary_hidden: vec![32; 2],
                    attacker_hidden: vec![32; 3],
                    ..base
                },
                occupancy_data,
            ),
            "identity-large" => (
                TrainConfig {
                    batch_size: 128,
                    adversary_steps: 5,
                    noise_dim: 3,
                    beta: 2.0,
                    lr_decay: 1.0,
                    releaser_lr: 1e-3,
                    adversary_lr: 1e-3,
                    attacker_lr: 1e-3,
                    releaser_hidden: vec![128; 6],
                    adversary_hidden: vec![32; 4],
                    attacker_hidden: vec![32; 4],
                    ..base
                },
                identity_data,
            ),
            _ => return None,
        };
        // on min-max normalized data full hiding already pays off near λ = 0.1
        let lambdas = if name.starts_with("desk") {
            vec![0.0, 0.02, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0]
        } else {
            vec![0.0, 0.5, 1.0, 2.0, 5.0]
        };
        Some(Preset {
            name: PRESET_NAMES.iter().copied().find(|&n| n == name)?,
            train,
            data,
            split: SplitSpec::default(),
            lambdas,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_presets() {
        let occ = Preset::by_name("occupancy-large").unwrap().train;
        assert_eq!((occ.batch_size, occ.adversary_steps, occ.noise_dim), (128, 4, 8));
        assert_eq!(occ.beta, 1.5);
        assert_eq!(occ.releaser_hidden, vec![64; 4]);
        assert_eq!(occ.adversary_hidden, vec![32; 2]);
        assert_eq!(occ.attacker_hidden.len(), 3);
        let id = Preset::by_name("identity-large").unwrap().train;
        assert_eq!((id.batch_size, id.adversary_steps, id.noise_dim), (128, 5, 3));
        assert_eq!(id.beta, 2.0);
        assert_eq!(id.releaser_hidden, vec![128; 6]);
        assert_eq!(id.attacker_hidden.len(), 4);
        assert!(Preset::by_name("nope").is_none());
        for name in PRESET_NAMES {
            Preset::by_name(name).unwrap().train.validate().unwrap();
        }
    }

    #[test]
    fn validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { adversary_steps: 0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { clip: 0.0, ..ok.clone() },
            TrainConfig { beta: -1.0, ..ok.clone() },
            TrainConfig { lambda: -0.1, ..ok.clone() },
            TrainConfig { releaser_hidden: vec![], ..ok.clone() },
            TrainConfig { attacker_lr: f64::NAN, ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(HarnessError::Config(_))), "{bad:?}");
        }
    }
}
