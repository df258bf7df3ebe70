//! Welch power spectral density and the input/error spectrum report.
//!
//! Sampling is hourly, so frequencies are in cycles per hour and the daily
//! cycle sits at `1/24`.

use std::collections::BTreeMap;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::{Dataset, SequenceSample};
use crate::numkit::{derive_seed, SeededRng};
use crate::privmech::Releaser;

use super::{observations, HarnessError, ObservationMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    /// Periodic Hann, `0.5 − 0.5·cos(2πn/N)`.
    #[default]
    Hann,
    Rectangular,
}

impl Window {
    fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Hann => (0..n)
                .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
                .collect(),
            Window::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams {
    pub segment_len: usize,
    /// Fraction of a segment shared with the next one.
    pub overlap: f64,
    pub window: Window,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_len: 64,
            overlap: 0.5,
            window: Window::Hann,
        }
    }
}

/// One-sided density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub frequencies: Vec<f64>,
    pub density: Vec<f64>,
}

impl Psd {
    pub fn bin_width(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(1.0)
    }

    /// `Σ density · Δf`
    pub fn integrated_power(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin_width()
    }
}

/// Averaged periodograms of windowed overlapping segments, normalized by the
/// window power. No detrending is applied.
pub fn welch_psd(signal: &[f64], params: &WelchParams) -> Result<Psd, HarnessError> {
    let n = params.segment_len;
    if n < 2 {
        return Err(HarnessError::Config(format!("segment length {n} is too short")));
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(HarnessError::Config(format!("overlap {} outside [0, 1)", params.overlap)));
    }
    if signal.len() < n {
        return Err(HarnessError::ShortSignal {
            len: signal.len(),
            segment: n,
        });
    }
    let step = (n - (params.overlap * n as f64).round() as usize).max(1);
    let window = params.window.coefficients(n);
    let window_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut segments = 0;
    let mut start = 0;
    while start + n <= signal.len() {
        for (b, (x, w)) in buf.iter_mut().zip(signal[start..start + n].iter().zip(&window)) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (window_power * segments as f64);
    let density = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            p * scale * one_sided
        })
        .collect();
    let frequencies = (0..bins).map(|k| k as f64 / n as f64).collect();
    Ok(Psd { frequencies, density })
}

/// Indices of the bins nearest to the multiples of `1/period` up to Nyquist.
pub fn harmonic_bins(frequencies: &[f64], period: f64) -> Vec<usize> {
    let nyquist = frequencies.last().copied().unwrap_or(0.0);
    let mut out = Vec::new();
    let mut k = 1.0;
    while k / period <= nyquist + 1e-12 {
        let target = k / period;
        let best = (0..frequencies.len())
            .min_by(|&a, &b| (frequencies[a] - target).abs().total_cmp(&(frequencies[b] - target).abs()))
            .expect("non-empty spectrum");
        if !out.contains(&best) {
            out.push(best);
        }
        k += 1.0;
    }
    out
}

/// Averaged spectra of the consumption and of the error `y − z`, in kWh.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdReport {
    pub frequencies: Vec<f64>,
    pub input_psd: Vec<f64>,
    pub error_psd: Vec<f64>,
    pub realizations: usize,
    pub houses: usize,
}

/// Concatenates the test days of every house in chronological order, then
/// averages the Welch estimates over houses and over `n_realizations`
/// independent seed-noise draws.
pub fn error_psd_report(
    releaser: &Releaser,
    test: &Dataset,
    observation: ObservationMode,
    n_realizations: usize,
    welch: &WelchParams,
    seed: u64,
) -> Result<PsdReport, HarnessError> {
    if n_realizations == 0 {
        return Err(HarnessError::Config("at least one realization is required".into()));
    }
    let mut houses: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in test.samples.iter().enumerate() {
        houses.entry(s.house_id).or_default().push(i);
    }
    let raw = |v: f64| test.normalization.map_or(v, |n| n.invert(v));
    let day_of = |s: &SequenceSample| s.day;

    // running means, so identical realizations average to themselves exactly
    let update = |mean: &mut Vec<f64>, x: &[f64], count: usize| {
        if mean.is_empty() {
            *mean = vec![0.0; x.len()];
        }
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += (v - *m) / count as f64);
    };
    let mut frequencies = Vec::new();
    let (mut input_mean, mut error_mean) = (Vec::new(), Vec::new());
    let mut used = 0;
    for (house, mut idx) in houses {
        idx.sort_by_key(|&i| day_of(&test.samples[i]));
        if idx.len() * test.seq_len < welch.segment_len {
            continue;
        }
        let batch = test.batch(&idx);
        let w = observations(&batch, observation, test.alphabet_size);
        // column b of y[t] is hour t of the b-th day
        let concat = |seq: &[crate::numkit::Matrix]| -> Vec<f64> {
            (0..idx.len())
                .flat_map(|b| seq.iter().map(move |m| m[(0, b)]))
                .collect()
        };
        let y: Vec<f64> = concat(&batch.y).into_iter().map(raw).collect();
        let input = welch_psd(&y, welch)?;
        let mut house_error = Vec::new();
        for r in 0..n_realizations {
            let mut rng = SeededRng::new(derive_seed(derive_seed(seed, house as u64), r as u64));
            let release = releaser.release(&w, &mut rng)?;
            let z: Vec<f64> = concat(&release.z).into_iter().map(raw).collect();
            let err: Vec<f64> = y.iter().zip(&z).map(|(a, b)| a - b).collect();
            update(&mut house_error, &welch_psd(&err, welch)?.density, r + 1);
        }
        used += 1;
        update(&mut input_mean, &input.density, used);
        update(&mut error_mean, &house_error, used);
        frequencies = input.frequencies;
    }
    if used == 0 {
        return Err(HarnessError::ShortSignal {
            len: test.seq_len,
            segment: welch.segment_len,
        });
    }
    Ok(PsdReport {
        frequencies,
        input_psd: input_mean,
        error_psd: error_mean,
        realizations: n_realizations,
        houses: used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn oracle_signal(len: usize) -> Vec<f64> {
        (0..len)
            .map(|i| {
                let n = i as f64;
                (0.3 * n).sin() + 0.5 * (1.1 * n).cos() + 0.01 * n
            })
            .collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-10 * b.abs().max(1e-12)
    }

    #[test]
    fn matches_reference_implementation() {
        // scipy.signal.welch(x, fs=1, window='hann', nperseg=64, noverlap=32, detrend=False)
        let psd = welch_psd(&oracle_signal(200), &WelchParams::default()).unwrap();
        assert_eq!(psd.frequencies.len(), 33);
        for (k, f, p) in [
            (0, 0.0, 48.033871562150466),
            (1, 0.015625, 24.592920933728422),
            (3, 0.046875, 21.316503149442475),
            (10, 0.15625, 0.6589302385253493),
        ] {
            assert_eq!(psd.frequencies[k], f);
            assert!(close(psd.density[k], p), "bin {k}: {} vs {p}", psd.density[k]);
        }
        assert!((psd.density[32] - 1.7818337318722721e-09).abs() < 1e-12);

        // window='boxcar', nperseg=50, noverlap=25 on the first 150 samples
        let params = WelchParams {
            segment_len: 50,
            overlap: 0.5,
            window: Window::Rectangular,
        };
        let psd = welch_psd(&oracle_signal(150), &params).unwrap();
        for (k, p) in [(0, 31.632845643946258), (4, 0.9460437413215349), (25, 0.012047859547598577)] {
            assert!(close(psd.density[k], p), "bin {k}: {} vs {p}", psd.density[k]);
        }
    }

    #[test]
    fn sine_peak_above_floor() {
        let n = 64;
        let x: Vec<f64> = (0..1024)
            .map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / n as f64).sin())
            .collect();
        let psd = welch_psd(&x, &WelchParams::default()).unwrap();
        let peak = (0..psd.density.len()).max_by(|&a, &b| psd.density[a].total_cmp(&psd.density[b])).unwrap();
        assert_eq!(peak, 8);
        let mut sorted = psd.density.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[sorted.len() / 2];
        assert!(10.0 * (psd.density[8] / median.max(1e-300)).log10() >= 20.0);
    }

    #[test]
    fn white_noise_parseval() {
        let mut rng = SeededRng::new(17);
        let x: Vec<f64> = (0..20_000).map(|_| rng.normal()).collect();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
        let p = welch_psd(&x, &WelchParams::default()).unwrap().integrated_power();
        assert!((p - var).abs() < 0.05 * var, "{p} vs {var}");
    }

    #[test]
    fn constant_signal_is_dc_only() {
        let psd = welch_psd(&[3.0; 256], &WelchParams::default()).unwrap();
        assert!(psd.density[0] > 0.0);
        // Hann leaks into the first bin; the periodic window leaves nothing beyond
        assert!(psd.density[2..].iter().all(|&d| d < 1e-20 * psd.density[0]));
    }

    #[test]
    fn short_signal_rejected() {
        assert!(matches!(
            welch_psd(&[1.0; 10], &WelchParams::default()),
            Err(HarnessError::ShortSignal { len: 10, segment: 64 })
        ));
    }

    #[test]
    fn daily_harmonic_bins() {
        let freqs: Vec<f64> = (0..33).map(|k| k as f64 / 64.0).collect();
        let bins = harmonic_bins(&freqs, 24.0);
        assert_eq!(bins[0], 3);
        assert_eq!(bins, vec![3, 5, 8, 11, 13, 16, 19, 21, 24, 27, 29, 32]);
    }
}
