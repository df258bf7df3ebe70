use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{Dataset, DataError, LabelSemantics};
use crate::numkit::{derive_seed, SeededRng};
use crate::privmech::{di_upper_bound, Attacker, Releaser};

use super::train::{observations, AttackerHistory, TrainedPair, EVAL_CHUNK};
use super::{balanced_accuracy, majority_vote_accuracy, nrmse, train_adversarial, train_attacker};
use super::{HarnessError, ObservationMode, TrainConfig};

const SEED_EVAL_NOISE: u64 = 11;

/// One row of `tradeoff.csv`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    pub lambda: f64,
    pub nrmse: f64,
    pub attacker_balanced_accuracy_pct: f64,
    pub di_bound_mean: f64,
    pub seed: u64,
}

/// Test-set metrics of a frozen releaser against an attacker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assessment {
    /// On the kWh scale, after undoing the normalization.
    pub nrmse: f64,
    /// Per-step balanced accuracy.
    pub balanced_accuracy_pct: f64,
    /// Majority vote per sequence; only for sequence-constant labels.
    pub sequence_accuracy_pct: Option<f64>,
    /// Mean over test sequences of `T·log|X| − Σ_t H(X̂_t | Z^t)` under the
    /// attacker.
    pub di_bound_mean: f64,
    pub sequences: usize,
}

/// Releases `test` once and scores it. `seed` fixes the seed noise; the
/// training pipeline passes a value derived from the config seed.
pub fn assess(
    releaser: &Releaser,
    attacker: &Attacker,
    test: &Dataset,
    observation: ObservationMode,
    seed: u64,
) -> Result<Assessment, HarnessError> {
    if test.is_empty() {
        return Err(DataError::Empty.into());
    }
    if attacker.alphabet_size() != test.alphabet_size {
        return Err(HarnessError::Config(format!(
            "attacker predicts {} classes, data has {}",
            attacker.alphabet_size(),
            test.alphabet_size
        )));
    }
    let raw = |v: f64| test.normalization.map_or(v, |n| n.invert(v));
    let mut rng = SeededRng::new(seed);
    let (mut y_all, mut z_all) = (Vec::new(), Vec::new());
    let (mut pred_steps, mut true_steps) = (Vec::new(), Vec::new());
    let (mut pred_seqs, mut true_seqs) = (Vec::new(), Vec::new());
    let mut di_sum = 0.0;
    let order: Vec<usize> = (0..test.len()).collect();
    for idx in order.chunks(EVAL_CHUNK) {
        let batch = test.batch(idx);
        let w = observations(&batch, observation, test.alphabet_size);
        let z = releaser.release(&w, &mut rng)?.z;
        let (probs, _) = attacker.predict(&z)?;
        di_sum += di_upper_bound(&probs, test.alphabet_size)? * idx.len() as f64;
        let decisions: Vec<Vec<usize>> = probs.iter().map(crate::privmech::argmax_columns).collect();
        for b in 0..idx.len() {
            let mut pseq = Vec::with_capacity(test.seq_len);
            let mut tseq = Vec::with_capacity(test.seq_len);
            for t in 0..test.seq_len {
                y_all.push(raw(batch.y[t][(0, b)]));
                z_all.push(raw(z[t][(0, b)]));
                pseq.push(decisions[t][b]);
                tseq.push(batch.x[t][b]);
            }
            pred_steps.extend_from_slice(&pseq);
            true_steps.extend_from_slice(&tseq);
            pred_seqs.push(pseq);
            true_seqs.push(tseq);
        }
    }
    let sequence_accuracy_pct = match test.semantics {
        LabelSemantics::PerSequence => Some(majority_vote_accuracy(&pred_seqs, &true_seqs, test.alphabet_size)?),
        LabelSemantics::PerStep => None,
    };
    Ok(Assessment {
        nrmse: nrmse(&y_all, &z_all)?,
        balanced_accuracy_pct: balanced_accuracy(&pred_steps, &true_steps, test.alphabet_size)?,
        sequence_accuracy_pct,
        di_bound_mean: di_sum / test.len() as f64,
        sequences: test.len(),
    })
}

/// Everything produced for one privacy weight.
#[derive(Debug, Clone)]
pub struct PointOutcome {
    pub point: TradeoffPoint,
    pub assessment: Assessment,
    pub trained: TrainedPair,
    pub attacker: Attacker,
    pub attacker_history: AttackerHistory,
}

/// Seed of the noise used by [`assess`] inside [`run_point`].
pub fn eval_seed(cfg: &TrainConfig) -> u64 {
    derive_seed(cfg.seed, SEED_EVAL_NOISE)
}

/// Adversarial training, attacker training, then test metrics.
pub fn run_point(cfg: &TrainConfig, train: &Dataset, val: &Dataset, test: &Dataset) -> Result<PointOutcome, HarnessError> {
    let seen: HashSet<u64> = train.samples.iter().chain(&val.samples).map(|s| s.id).collect();
    if let Some(s) = test.samples.iter().find(|s| seen.contains(&s.id)) {
        return Err(DataError::Invalid(format!("test sequence {} also appears in training data", s.id)).into());
    }
    let trained = train_adversarial(cfg, train, val)?;
    let (attacker, attacker_history) = train_attacker(&trained.releaser, train, val, cfg)?;
    let assessment = assess(&trained.releaser, &attacker, test, cfg.observation, eval_seed(cfg))?;
    Ok(PointOutcome {
        point: TradeoffPoint {
            lambda: cfg.lambda,
            nrmse: assessment.nrmse,
            attacker_balanced_accuracy_pct: assessment.balanced_accuracy_pct,
            di_bound_mean: assessment.di_bound_mean,
            seed: cfg.seed,
        },
        assessment,
        trained,
        attacker,
        attacker_history,
    })
}

/// Runs [`run_point`] for every λ with the same seed (common random
/// numbers across the sweep) on up to `workers` threads. Results come back
/// in the order of `lambdas`; a failed point does not stop the others.
pub fn sweep_lambda(
    cfg: &TrainConfig,
    lambdas: &[f64],
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    workers: usize,
) -> Result<Vec<Result<PointOutcome, HarnessError>>, HarnessError> {
    if lambdas.is_empty() {
        return Err(HarnessError::Config("the λ list is empty".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(HarnessError::Config(format!("λ must be non-negative, got {bad}")));
    }
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<PointOutcome, HarnessError>>>> =
        Mutex::new((0..lambdas.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, lambdas.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&lambda) = lambdas.get(i) else { break };
                let outcome = run_point(&cfg.with_lambda(lambda), train, val, test);
                if let Err(e) = &outcome {
                    log::warn!("λ={lambda} failed: {e}");
                }
                slots.lock().expect("no worker panicked")[i] = Some(outcome);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|o| o.expect("every index was claimed"))
        .collect())
}
