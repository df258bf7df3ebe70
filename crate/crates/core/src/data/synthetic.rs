//! Hidden-Markov household generator.
//!
//! Each house runs a two-state occupancy chain that keeps its state with
//! probability `p_stay` every hour. Consumption is
//!
//! ```text
//! y_t = base_h + gain_h·x_t + A·sin(2π(t + phase_h)/24) + ε_t,   ε_t ~ N(0, σ²) truncated at ±3σ
//! ```
//!
//! clipped at zero. The per-house constants are drawn from stratified slices
//! of their ranges so that houses stay distinguishable, which makes the
//! identity task learnable.

use crate::numkit::SeededRng;

use super::{DataError, Dataset, LabelSemantics, SequenceSample, DEFAULT_SEQ_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticTask {
    /// Hourly binary occupancy labels.
    Occupancy,
    /// Sequence-constant house index labels.
    Identity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticParams {
    pub task: SyntheticTask,
    pub p_stay: f64,
    /// Fixed initial occupancy; `None` draws it from the stationary (uniform)
    /// distribution.
    pub initial_state: Option<usize>,
    /// kWh
    pub base_range: (f64, f64),
    /// kWh added while occupied
    pub gain_range: (f64, f64),
    /// kWh
    pub noise_sigma: f64,
    /// Amplitude of the daily sinusoid, kWh.
    pub daily_amplitude: f64,
    pub seq_len: usize,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            task: SyntheticTask::Occupancy,
            p_stay: 0.9,
            initial_state: None,
            base_range: (0.2, 1.4),
            gain_range: (0.4, 0.6),
            noise_sigma: 0.1,
            daily_amplitude: 0.3,
            seq_len: DEFAULT_SEQ_LEN,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: String| Err(DataError::InvalidParams(msg));
        if !(0.0..=1.0).contains(&self.p_stay) {
            return bad(format!("p_stay = {} is not a probability", self.p_stay));
        }
        if let Some(s) = self.initial_state {
            if s > 1 {
                return bad(format!("initial state {s} is not 0 or 1"));
            }
        }
        for (name, (lo, hi)) in [("base", self.base_range), ("gain", self.gain_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return bad(format!("{name} range ({lo}, {hi}) must satisfy 0 ≤ lo ≤ hi"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise sigma {}", self.noise_sigma));
        }
        if !(self.daily_amplitude >= 0.0 && self.daily_amplitude.is_finite()) {
            return bad(format!("daily amplitude {}", self.daily_amplitude));
        }
        if self.seq_len == 0 {
            return bad("sequence length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct HouseProfile {
    base: f64,
    gain: f64,
    phase: f64,
}

fn stratified(rng: &mut SeededRng, slot: usize, slots: usize, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * (slot as f64 + rng.uniform()) / slots as f64
}

fn truncated_normal(rng: &mut SeededRng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    loop {
        let z = rng.normal();
        if z.abs() <= 3.0 {
            return sigma * z;
        }
    }
}

/// `n_houses × days_per_house` daily sequences.
pub fn generate_synthetic(
    n_houses: usize,
    days_per_house: usize,
    params: &SyntheticParams,
    seed: u64,
) -> Result<Dataset, DataError> {
    params.validate()?;
    if n_houses == 0 {
        return Err(DataError::InvalidParams("at least one house is required".into()));
    }
    if params.task == SyntheticTask::Identity && n_houses < 2 {
        return Err(DataError::InvalidParams("identity task needs at least two houses".into()));
    }
    let mut rng = SeededRng::new(seed);
    let mut gain_slots: Vec<usize> = (0..n_houses).collect();
    let mut phase_slots: Vec<usize> = (0..n_houses).collect();
    rng.shuffle(&mut gain_slots);
    rng.shuffle(&mut phase_slots);
    let profiles: Vec<HouseProfile> = (0..n_houses)
        .map(|h| HouseProfile {
            base: stratified(&mut rng, h, n_houses, params.base_range),
            gain: stratified(&mut rng, gain_slots[h], n_houses, params.gain_range),
            phase: stratified(&mut rng, phase_slots[h], n_houses, (0.0, 24.0)),
        })
        .collect();

    let t_len = params.seq_len;
    let mut samples = Vec::with_capacity(n_houses * days_per_house);
    for (h, prof) in profiles.iter().enumerate() {
        let mut house_rng = rng.fork(h as u64);
        let mut state = match params.initial_state {
            Some(s) => s,
            None => house_rng.index(2),
        };
        for day in 0..days_per_house {
            let mut y = Vec::with_capacity(t_len);
            let mut occupancy = Vec::with_capacity(t_len);
            for t in 0..t_len {
                if day > 0 || t > 0 {
                    if !house_rng.bernoulli(params.p_stay) {
                        state = 1 - state;
                    }
                }
                let hour = (day * t_len + t) as f64;
                let daily = params.daily_amplitude * (2.0 * std::f64::consts::PI * (hour + prof.phase) / 24.0).sin();
                let noise = truncated_normal(&mut house_rng, params.noise_sigma);
                y.push((prof.base + prof.gain * state as f64 + daily + noise).max(0.0));
                occupancy.push(state);
            }
            let x = match params.task {
                SyntheticTask::Occupancy => occupancy,
                SyntheticTask::Identity => vec![h; t_len],
            };
            samples.push(SequenceSample {
                id: (h * days_per_house + day) as u64,
                house_id: h as u32,
                day: day as u32,
                y,
                x,
            });
        }
    }
    let (alphabet, semantics) = match params.task {
        SyntheticTask::Occupancy => (2, LabelSemantics::PerStep),
        SyntheticTask::Identity => (n_houses, LabelSemantics::PerSequence),
    };
    Dataset::new(samples, t_len, alphabet, semantics)
}
