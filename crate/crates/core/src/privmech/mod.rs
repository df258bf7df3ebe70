//! The release mechanism: releaser, adversary and attacker networks, their
//! losses, and the directed-information bound used as a diagnostic.
//!
//! The releaser sees observations `w_t` (by default the consumption series
//! itself) with `m` channels of uniform seed noise appended and emits the
//! release `z_t`. The adversary reads `z_1..z_t` and outputs a distribution
//! over the sensitive alphabet at each step.
//!
//! The directed information from the labels to the adversary's estimate is
//! intractable to compute exactly (exponential in the sequence length), so
//! the releaser instead maximizes the entropy of the adversary's output:
//!
//! ```text
//! I(X^T → X̂^T) ≤ T·log|X| − Σ_t H(X̂_t | Z^t)
//! L_R = D(Z, Y) − (λ/T) Σ_t H(X̂_t | Z^t)
//! L_A = (1/T) Σ_t E[−log p̂_t(X_t)]
//! ```

mod bundle;
mod losses;

pub use bundle::MechanismBundle;
pub use losses::{
    adversary_loss, adversary_loss_grad, conditional_entropy_grad, conditional_entropy_term,
    di_upper_bound, distortion, distortion_grad, releaser_loss, LOG_FLOOR,
};

use std::ops::Deref;

use thiserror::Error;

use crate::neural::{ForwardTape, HeadKind, NetGradient, NetSpec, NeuralError, StackedNet};
use crate::numkit::{draw_uniform, Matrix, SeededRng};

#[derive(Debug, Error)]
pub enum MechError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error("sequence lengths differ: {0} vs {1}")]
    Length(usize, usize),
    #[error("shape mismatch at step {step}: {left:?} vs {right:?}")]
    Shape {
        step: usize,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("label {label} outside alphabet of size {alphabet}")]
    Label { label: usize, alphabet: usize },
    #[error("privacy weight must be non-negative, got {0}")]
    Lambda(f64),
    #[error("empty sequence")]
    Empty,
    #[error("malformed mechanism bundle: {0}")]
    Bundle(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Entropy term the releaser maximizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrivacyPenalty {
    /// Shannon entropy of the adversary's output distribution.
    #[default]
    Entropy,
    /// The adversary's own cross-entropy on the true labels (ablation).
    CrossEntropy,
}

/// Releaser objective: distortion minus `lambda` times the penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaserObjective {
    pub lambda: f64,
    pub penalty: PrivacyPenalty,
}

impl ReleaserObjective {
    pub fn new(lambda: f64) -> Result<Self, MechError> {
        if !(lambda >= 0.0) {
            return Err(MechError::Lambda(lambda));
        }
        Ok(Self {
            lambda,
            penalty: PrivacyPenalty::Entropy,
        })
    }
}

/// Sanitizing network. Its input at step `t` is `[w_t; u_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Releaser {
    pub net: StackedNet,
    pub observation_dim: usize,
    pub noise_dim: usize,
}

/// Output of [`Releaser::release`].
#[derive(Debug, Clone)]
pub struct Release {
    pub z: Vec<Matrix>,
    /// Seed noise per step; empty when the releaser has no noise channels.
    pub noise: Vec<Matrix>,
    pub tape: ForwardTape,
}

impl Releaser {
    pub fn new(
        observation_dim: usize,
        noise_dim: usize,
        output_dim: usize,
        hidden: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self, MechError> {
        let spec = NetSpec {
            input_dim: observation_dim + noise_dim,
            hidden: hidden.to_vec(),
            output_dim,
            head: HeadKind::Linear,
        };
        Ok(Self {
            net: StackedNet::new(&spec, rng)?,
            observation_dim,
            noise_dim,
        })
    }

    pub fn from_net(net: StackedNet, observation_dim: usize, noise_dim: usize) -> Result<Self, MechError> {
        if net.head.kind != HeadKind::Linear {
            return Err(MechError::Bundle("releaser head must be linear".into()));
        }
        if net.input_dim() != observation_dim + noise_dim {
            return Err(MechError::Bundle(format!(
                "network takes {} inputs, observation {observation_dim} + noise {noise_dim}",
                net.input_dim()
            )));
        }
        Ok(Self {
            net,
            observation_dim,
            noise_dim,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.net.output_dim()
    }

    /// Draws fresh seed noise and releases `z`.
    pub fn release(&self, w_seq: &[Matrix], rng: &mut SeededRng) -> Result<Release, MechError> {
        let batch = w_seq.first().ok_or(MechError::Empty)?.cols();
        let noise: Vec<Matrix> = if self.noise_dim == 0 {
            Vec::new()
        } else {
            (0..w_seq.len())
                .map(|_| draw_uniform(rng, self.noise_dim, batch))
                .collect()
        };
        self.release_with_noise(w_seq, noise)
    }

    /// Releases with caller-supplied seed noise (`noise_dim × B` per step).
    pub fn release_with_noise(&self, w_seq: &[Matrix], noise: Vec<Matrix>) -> Result<Release, MechError> {
        if w_seq.is_empty() {
            return Err(MechError::Empty);
        }
        let inputs = self.assemble_inputs(w_seq, &noise)?;
        let (z, tape) = self.net.forward(&inputs)?;
        Ok(Release { z, noise, tape })
    }

    fn assemble_inputs(&self, w_seq: &[Matrix], noise: &[Matrix]) -> Result<Vec<Matrix>, MechError> {
        if self.noise_dim == 0 {
            if !noise.is_empty() {
                return Err(MechError::Length(noise.len(), 0));
            }
            return Ok(w_seq.to_vec());
        }
        if noise.len() != w_seq.len() {
            return Err(MechError::Length(w_seq.len(), noise.len()));
        }
        w_seq
            .iter()
            .zip(noise)
            .enumerate()
            .map(|(t, (w, u))| {
                if w.rows() != self.observation_dim || u.shape() != (self.noise_dim, w.cols()) {
                    return Err(MechError::Shape {
                        step: t,
                        left: w.shape(),
                        right: u.shape(),
                    });
                }
                Ok(Matrix::vstack(&[w, u]).expect("column counts checked"))
            })
            .collect()
    }
}

/// Classifier over the sensitive alphabet reading the release causally.
#[derive(Debug, Clone, PartialEq)]
pub struct Adversary {
    pub net: StackedNet,
}

impl Adversary {
    pub fn new(release_dim: usize, alphabet_size: usize, hidden: &[usize], rng: &mut SeededRng) -> Result<Self, MechError> {
        let spec = NetSpec {
            input_dim: release_dim,
            hidden: hidden.to_vec(),
            output_dim: alphabet_size,
            head: HeadKind::Softmax,
        };
        Ok(Self {
            net: StackedNet::new(&spec, rng)?,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.net.output_dim()
    }

    /// Per-step distributions `|X| × B`.
    pub fn predict(&self, z: &[Matrix]) -> Result<(Vec<Matrix>, ForwardTape), MechError> {
        Ok(self.net.forward(z)?)
    }

    /// Most probable label per step and batch column.
    pub fn decide(&self, z: &[Matrix]) -> Result<Vec<Vec<usize>>, MechError> {
        let (probs, _) = self.predict(z)?;
        Ok(probs.iter().map(argmax_columns).collect())
    }
}

/// Post-hoc attacker, structurally an [`Adversary`] but trained separately
/// against a frozen releaser.
#[derive(Debug, Clone, PartialEq)]
pub struct Attacker(pub Adversary);

impl Deref for Attacker {
    type Target = Adversary;

    fn deref(&self) -> &Adversary {
        &self.0
    }
}

pub(crate) fn argmax_columns(p: &Matrix) -> Vec<usize> {
    (0..p.cols())
        .map(|c| {
            let mut best = 0;
            for r in 1..p.rows() {
                if p[(r, c)] > p[(best, c)] {
                    best = r;
                }
            }
            best
        })
        .collect()
}

/// Adversary cross-entropy and its parameter gradient.
pub fn adversary_step_gradient(
    adversary: &Adversary,
    z: &[Matrix],
    labels: &[Vec<usize>],
) -> Result<(f64, NetGradient), MechError> {
    let (probs, tape) = adversary.predict(z)?;
    let loss = adversary_loss(&probs, labels)?;
    let d = adversary_loss_grad(&probs, labels)?;
    let (grads, _) = adversary.net.backward(&tape, &d)?;
    Ok((loss, grads))
}

/// Releaser loss and its gradient with respect to the releaser parameters,
/// flowing through both the distortion and the (fixed) adversary.
#[derive(Debug, Clone)]
pub struct ReleaserStep {
    pub loss: f64,
    pub distortion: f64,
    pub entropy: f64,
    pub di_bound: f64,
    pub grads: NetGradient,
}

pub fn releaser_step_gradient(
    releaser: &Releaser,
    adversary: &Adversary,
    w: &[Matrix],
    y: &[Matrix],
    labels: &[Vec<usize>],
    noise: Vec<Matrix>,
    objective: &ReleaserObjective,
) -> Result<ReleaserStep, MechError> {
    if !(objective.lambda >= 0.0) {
        return Err(MechError::Lambda(objective.lambda));
    }
    let release = releaser.release_with_noise(w, noise)?;
    let (probs, adv_tape) = adversary.predict(&release.z)?;
    let dist = distortion(&release.z, y)?;
    let entropy = conditional_entropy_term(&probs)?;
    let di_bound = di_upper_bound(&probs, adversary.alphabet_size())?;
    let mut d_z = distortion_grad(&release.z, y)?;

    let loss = match objective.penalty {
        PrivacyPenalty::Entropy => releaser_loss(&release.z, y, &probs, objective.lambda)?,
        PrivacyPenalty::CrossEntropy => dist - objective.lambda * adversary_loss(&probs, labels)?,
    };
    if objective.lambda > 0.0 {
        let mut d_p = match objective.penalty {
            PrivacyPenalty::Entropy => conditional_entropy_grad(&probs)?,
            PrivacyPenalty::CrossEntropy => adversary_loss_grad(&probs, labels)?,
        };
        for m in &mut d_p {
            *m = m.scale(-objective.lambda);
        }
        let (_, d_from_adversary) = adversary.net.backward(&adv_tape, &d_p)?;
        for (dz, extra) in d_z.iter_mut().zip(&d_from_adversary) {
            dz.add_assign(extra).map_err(NeuralError::from)?;
        }
    }
    let (grads, _) = releaser.net.backward(&release.tape, &d_z)?;
    Ok(ReleaserStep {
        loss,
        distortion: dist,
        entropy,
        di_bound,
        grads,
    })
}
