use crate::data::{Batch, BatchStream, Dataset, DataError};
use crate::neural::NetGradient;
use crate::numkit::{derive_seed, draw_uniform, Matrix, SeededRng};
use crate::optim::{clip_gradients, recurrent_l2_gradient, RmsProp, RmsPropConfig};
use crate::privmech::{
    adversary_loss, adversary_step_gradient, conditional_entropy_term, di_upper_bound, distortion,
    releaser_step_gradient, Adversary, Attacker, Releaser, ReleaserObjective,
};

use super::{HarnessError, ObservationMode, TrainConfig};

// Sub-seeds of TrainConfig::seed.
const SEED_RELEASER_INIT: u64 = 1;
const SEED_ADVERSARY_INIT: u64 = 2;
const SEED_ADVERSARY_BATCHES: u64 = 3;
const SEED_RELEASER_BATCHES: u64 = 4;
const SEED_TRAIN_NOISE: u64 = 5;
const SEED_VAL_NOISE: u64 = 6;
const SEED_ATTACKER_INIT: u64 = 7;
const SEED_ATTACKER_BATCHES: u64 = 8;
const SEED_ATTACKER_NOISE: u64 = 9;
const SEED_ATTACKER_VAL_NOISE: u64 = 10;

/// Largest batch pushed through a network at evaluation time.
pub(crate) const EVAL_CHUNK: usize = 512;

/// Releaser inputs for a batch, `obs_dim × B` per step.
pub fn observations(batch: &Batch, mode: ObservationMode, alphabet_size: usize) -> Vec<Matrix> {
    match mode {
        ObservationMode::Consumption => batch.y.clone(),
        ObservationMode::ConsumptionAndLabels => batch
            .y
            .iter()
            .zip(&batch.x)
            .map(|(y, x)| {
                Matrix::from_fn(1 + alphabet_size, y.cols(), |r, c| {
                    if r == 0 {
                        y[(0, c)]
                    } else if x[c] == r - 1 {
                        1.0
                    } else {
                        0.0
                    }
                })
            })
            .collect(),
    }
}

/// One releaser update and the `k` adversary updates preceding it.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    /// Mean over the `k` adversary steps.
    pub adversary_loss: f64,
    /// `D − λ·H`, without the L2 penalty.
    pub releaser_loss: f64,
    pub distortion: f64,
    pub entropy: f64,
    pub di_bound: f64,
}

/// Validation metrics at the end of an epoch, with fixed validation noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub distortion: f64,
    pub entropy: f64,
    pub objective: f64,
    pub adversary_loss: f64,
    pub di_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose releaser was kept.
    pub selected_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainedPair {
    pub releaser: Releaser,
    pub adversary: Adversary,
    pub history: TrainHistory,
}

fn require_normalized(ds: &Dataset, name: &str) -> Result<(), HarnessError> {
    if ds.is_empty() {
        return Err(DataError::Empty.into());
    }
    if ds.normalization.is_none() {
        return Err(DataError::Invalid(format!("{name} set is not normalized")).into());
    }
    Ok(())
}

fn noise_for(releaser: &Releaser, steps: usize, batch: usize, rng: &mut SeededRng) -> Vec<Matrix> {
    if releaser.noise_dim == 0 {
        return Vec::new();
    }
    (0..steps)
        .map(|_| draw_uniform(rng, releaser.noise_dim, batch))
        .collect()
}

fn chunk_indices(n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .collect::<Vec<_>>()
        .chunks(EVAL_CHUNK)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Fixed noise per evaluation chunk, so repeated evaluations are comparable.
fn fixed_noise(releaser: &Releaser, ds: &Dataset, seed: u64) -> Vec<Vec<Matrix>> {
    let mut rng = SeededRng::new(seed);
    chunk_indices(ds.len())
        .iter()
        .map(|c| noise_for(releaser, ds.seq_len, c.len(), &mut rng))
        .collect()
}

fn validate_pair(
    releaser: &Releaser,
    adversary: &Adversary,
    val: &Dataset,
    noise: &[Vec<Matrix>],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochRecord, HarnessError> {
    let mut sums = [0.0; 4];
    for (idx, u) in chunk_indices(val.len()).iter().zip(noise) {
        let batch = val.batch(idx);
        let w = observations(&batch, cfg.observation, val.alphabet_size);
        let z = releaser.release_with_noise(&w, u.clone())?.z;
        let (probs, _) = adversary.predict(&z)?;
        let weight = idx.len() as f64;
        sums[0] += weight * distortion(&z, &batch.y)?;
        sums[1] += weight * conditional_entropy_term(&probs)?;
        sums[2] += weight * adversary_loss(&probs, &batch.x)?;
        sums[3] += weight * di_upper_bound(&probs, val.alphabet_size)?;
    }
    let n = val.len() as f64;
    let [d, h, a, di] = sums.map(|s| s / n);
    Ok(EpochRecord {
        epoch,
        distortion: d,
        entropy: h,
        objective: d - cfg.lambda * h,
        adversary_loss: a,
        di_bound: di,
    })
}

fn diverged(stage: &'static str, iteration: usize, history: &TrainHistory) -> HarnessError {
    HarnessError::Divergence {
        stage,
        iteration,
        history: Box::new(history.clone()),
    }
}

/// Alternating optimization: per iteration, `k` adversary updates against
/// the frozen releaser, then one releaser update through the frozen
/// adversary.
pub fn train_adversarial(cfg: &TrainConfig, train: &Dataset, val: &Dataset) -> Result<TrainedPair, HarnessError> {
    cfg.validate()?;
    require_normalized(train, "training")?;
    require_normalized(val, "validation")?;
    if train.alphabet_size != val.alphabet_size || train.seq_len != val.seq_len {
        return Err(DataError::Invalid("training and validation sets disagree on shape".into()).into());
    }
    let alphabet = train.alphabet_size;
    let objective = ReleaserObjective {
        lambda: cfg.lambda,
        penalty: cfg.penalty,
    };
    let seed = |tag| derive_seed(cfg.seed, tag);

    let mut releaser = Releaser::new(
        cfg.observation.dim(alphabet),
        cfg.noise_dim,
        1,
        &cfg.releaser_hidden,
        &mut SeededRng::new(seed(SEED_RELEASER_INIT)),
    )?;
    let mut adversary = Adversary::new(
        1,
        alphabet,
        &cfg.adversary_hidden,
        &mut SeededRng::new(seed(SEED_ADVERSARY_INIT)),
    )?;
    let mut rel_opt = RmsProp::new(&releaser.net, RmsPropConfig::with_learning_rate(cfg.releaser_lr))?;
    let mut adv_opt = RmsProp::new(&adversary.net, RmsPropConfig::with_learning_rate(cfg.adversary_lr))?;

    let batch_size = cfg.batch_size.min(train.len());
    let mut adv_stream = BatchStream::new(train.len(), batch_size, seed(SEED_ADVERSARY_BATCHES));
    let mut rel_stream = BatchStream::new(train.len(), batch_size, seed(SEED_RELEASER_BATCHES));
    let mut noise_rng = SeededRng::new(seed(SEED_TRAIN_NOISE));
    let val_noise = fixed_noise(&releaser, val, seed(SEED_VAL_NOISE));
    let per_epoch = train.len().div_ceil(batch_size);

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Releaser, Adversary)> = None;
    let mut iteration = 0;
    for epoch in 0..cfg.epochs {
        let decay = cfg.lr_decay.powi(epoch as i32);
        rel_opt.set_learning_rate(cfg.releaser_lr * decay)?;
        adv_opt.set_learning_rate(cfg.adversary_lr * decay)?;
        for _ in 0..per_epoch {
            let mut adv_loss = 0.0;
            for _ in 0..cfg.adversary_steps {
                let batch = train.batch(&adv_stream.next_batch());
                let w = observations(&batch, cfg.observation, alphabet);
                let release = releaser.release(&w, &mut noise_rng)?;
                let (loss, mut grads) = adversary_step_gradient(&adversary, &release.z, &batch.x)?;
                if !loss.is_finite() || !grads.is_finite() {
                    return Err(diverged("adversary update", iteration, &history));
                }
                clip_gradients(&mut grads, cfg.clip, cfg.clip_mode)?;
                adv_opt.step(&mut adversary.net, &grads)?;
                adv_loss += loss;
            }

            let batch = train.batch(&rel_stream.next_batch());
            let w = observations(&batch, cfg.observation, alphabet);
            let noise = noise_for(&releaser, train.seq_len, batch.size(), &mut noise_rng);
            let step = releaser_step_gradient(&releaser, &adversary, &w, &batch.y, &batch.x, noise, &objective)?;
            let mut grads: NetGradient = step.grads;
            if cfg.beta > 0.0 {
                grads.axpy(1.0, &recurrent_l2_gradient(&releaser.net, cfg.beta)?)?;
            }
            if !step.loss.is_finite() || !grads.is_finite() {
                return Err(diverged("releaser update", iteration, &history));
            }
            clip_gradients(&mut grads, cfg.clip, cfg.clip_mode)?;
            rel_opt.step(&mut releaser.net, &grads)?;

            history.iterations.push(IterationRecord {
                iteration,
                epoch,
                adversary_loss: adv_loss / cfg.adversary_steps as f64,
                releaser_loss: step.loss,
                distortion: step.distortion,
                entropy: step.entropy,
                di_bound: step.di_bound,
            });
            iteration += 1;
        }

        let record = validate_pair(&releaser, &adversary, val, &val_noise, cfg, epoch)?;
        if !record.objective.is_finite() {
            return Err(diverged("validation", iteration, &history));
        }
        log::debug!(
            "λ={} epoch {epoch}: val D={:.5} H={:.4} adversary CE={:.4}",
            cfg.lambda,
            record.distortion,
            record.entropy,
            record.adversary_loss
        );
        if cfg.select_best && 2 * (epoch + 1) > cfg.epochs {
            if best.as_ref().is_none_or(|(score, _, _)| record.objective < *score) {
                best = Some((record.objective, releaser.clone(), adversary.clone()));
                history.selected_epoch = Some(epoch);
            }
        }
        history.epochs.push(record);
    }
    match best {
        Some((_, r, a)) => {
            releaser = r;
            adversary = a;
        }
        None => history.selected_epoch = Some(cfg.epochs - 1),
    }
    Ok(TrainedPair {
        releaser,
        adversary,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackerHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
}

/// Fits an attacker on releases of the whole training set, drawing fresh
/// seed noise for every batch, with early stopping on the validation
/// cross-entropy.
pub fn train_attacker(
    releaser: &Releaser,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Attacker, AttackerHistory), HarnessError> {
    cfg.validate()?;
    require_normalized(train, "training")?;
    require_normalized(val, "validation")?;
    let alphabet = train.alphabet_size;
    let seed = |tag| derive_seed(cfg.seed, tag);
    let mut attacker = Adversary::new(
        releaser.output_dim(),
        alphabet,
        &cfg.attacker_hidden,
        &mut SeededRng::new(seed(SEED_ATTACKER_INIT)),
    )?;
    let mut opt = RmsProp::new(&attacker.net, RmsPropConfig::with_learning_rate(cfg.attacker_lr))?;
    let mut noise_rng = SeededRng::new(seed(SEED_ATTACKER_NOISE));

    // validation releases are fixed once
    let val_noise = fixed_noise(releaser, val, seed(SEED_ATTACKER_VAL_NOISE));
    let mut val_sets = Vec::new();
    for (idx, u) in chunk_indices(val.len()).iter().zip(val_noise) {
        let batch = val.batch(idx);
        let w = observations(&batch, cfg.observation, alphabet);
        val_sets.push((releaser.release_with_noise(&w, u)?.z, batch.x, idx.len()));
    }

    let batch_size = cfg.batch_size.min(train.len());
    let mut history = AttackerHistory::default();
    let mut best = (f64::INFINITY, attacker.clone());
    let mut stale = 0;
    for epoch in 0..cfg.attacker_epochs {
        opt.set_learning_rate(cfg.attacker_lr * cfg.lr_decay.powi(epoch as i32))?;
        let mut total = 0.0;
        for idx in crate::data::minibatches(train.len(), batch_size, derive_seed(seed(SEED_ATTACKER_BATCHES), epoch as u64)) {
            let batch = train.batch(&idx);
            let w = observations(&batch, cfg.observation, alphabet);
            let z = releaser.release(&w, &mut noise_rng)?.z;
            let (loss, mut grads) = adversary_step_gradient(&attacker, &z, &batch.x)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(HarnessError::Divergence {
                    stage: "attacker update",
                    iteration: epoch,
                    history: Box::default(),
                });
            }
            clip_gradients(&mut grads, cfg.clip, cfg.clip_mode)?;
            opt.step(&mut attacker.net, &grads)?;
            total += loss * idx.len() as f64;
        }
        history.train_loss.push(total / train.len() as f64);

        let mut val_loss = 0.0;
        for (z, x, n) in &val_sets {
            let (probs, _) = attacker.predict(z)?;
            val_loss += adversary_loss(&probs, x)? * *n as f64;
        }
        val_loss /= val.len() as f64;
        history.val_loss.push(val_loss);
        if val_loss < best.0 {
            best = (val_loss, attacker.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.attacker_patience {
                break;
            }
        }
    }
    Ok((Attacker(best.1), history))
}
