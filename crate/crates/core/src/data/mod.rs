//! Daily consumption sequences: synthetic generation, CSV ingestion,
//! splitting, normalization and batching.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, read_csv, reshape_daily, write_csv, CsvSchema, HourlySeries, CSV_HEADER, CSV_HEADER_LABELED};
pub use synthetic::{generate_synthetic, SyntheticParams, SyntheticTask};

use thiserror::Error;

use crate::numkit::{derive_seed, Matrix, SeededRng};

/// Hours per daily sequence.
pub const DEFAULT_SEQ_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid generator parameters: {0}")]
    InvalidParams(String),
    #[error("line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error("unexpected CSV header `{found}`, expected `{expected}`")]
    Header { found: String, expected: String },
    #[error("house {house}: timestamp at line {line} does not increase")]
    NonMonotone { house: u32, line: usize },
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("normalization needs a non-constant training series (min = max = {0})")]
    ConstantSeries(f64),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One day of one household.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    /// Unique within a dataset and preserved by splitting.
    pub id: u64,
    pub house_id: u32,
    /// Chronological index of this day within its house.
    pub day: u32,
    pub y: Vec<f64>,
    pub x: Vec<usize>,
}

/// How sensitive labels relate to a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSemantics {
    /// A label per hour (occupancy).
    PerStep,
    /// One label for the whole sequence, the house index (identity).
    PerSequence,
}

/// Min-max constants fitted on a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

impl Normalization {
    pub fn fit(train: &Dataset) -> Result<Self, DataError> {
        let mut values = train.samples.iter().flat_map(|s| s.y.iter().copied());
        let first = values.next().ok_or(DataError::Empty)?;
        let (min, max) = values.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if max <= min {
            return Err(DataError::ConstantSeries(min));
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.min) / (self.max - self.min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * (self.max - self.min) + self.min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SequenceSample>,
    pub seq_len: usize,
    pub alphabet_size: usize,
    pub semantics: LabelSemantics,
    /// Set once the consumption values have been normalized.
    pub normalization: Option<Normalization>,
}

impl Dataset {
    /// Validates sample lengths, label ranges and label semantics.
    pub fn new(
        samples: Vec<SequenceSample>,
        seq_len: usize,
        alphabet_size: usize,
        semantics: LabelSemantics,
    ) -> Result<Self, DataError> {
        let ds = Self {
            samples,
            seq_len,
            alphabet_size,
            semantics,
            normalization: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.seq_len == 0 {
            return Err(DataError::Invalid("sequence length must be positive".into()));
        }
        if self.alphabet_size < 2 {
            return Err(DataError::Invalid(format!("alphabet size {} < 2", self.alphabet_size)));
        }
        for s in &self.samples {
            if s.y.len() != self.seq_len || s.x.len() != self.seq_len {
                return Err(DataError::Invalid(format!(
                    "sample {} has {} values and {} labels, expected {}",
                    s.id,
                    s.y.len(),
                    s.x.len(),
                    self.seq_len
                )));
            }
            if let Some(&bad) = s.x.iter().find(|&&l| l >= self.alphabet_size) {
                return Err(DataError::Invalid(format!(
                    "sample {} has label {bad} outside alphabet {}",
                    s.id, self.alphabet_size
                )));
            }
            if self.normalization.is_none() && s.y.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(DataError::Invalid(format!("sample {} has negative or non-finite consumption", s.id)));
            }
            if self.semantics == LabelSemantics::PerSequence && s.x.iter().any(|&l| l != s.x[0]) {
                return Err(DataError::Invalid(format!("sample {} has varying identity labels", s.id)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn chance_level_pct(&self) -> f64 {
        100.0 / self.alphabet_size as f64
    }

    fn with_samples(&self, samples: Vec<SequenceSample>) -> Dataset {
        Dataset {
            samples,
            seq_len: self.seq_len,
            alphabet_size: self.alphabet_size,
            semantics: self.semantics,
            normalization: self.normalization,
        }
    }

    /// Time-major tensors for the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let b = indices.len();
        let y = (0..self.seq_len)
            .map(|t| Matrix::from_fn(1, b, |_, c| self.samples[indices[c]].y[t]))
            .collect();
        let x = (0..self.seq_len)
            .map(|t| indices.iter().map(|&i| self.samples[i].x[t]).collect())
            .collect();
        Batch {
            y,
            x,
            ids: indices.iter().map(|&i| self.samples[i].id).collect(),
        }
    }

    pub fn full_batch(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// A minibatch in time-major layout: `y[t]` is `1 × B`, `x[t][b]` a label.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub y: Vec<Matrix>,
    pub x: Vec<Vec<usize>>,
    pub ids: Vec<u64>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.ids.len()
    }
}

/// Ratios for [`split`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_ratio: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_ratio: 0.85,
            val_fraction_of_train: 0.10,
            seed: 0,
        }
    }
}

/// Seeded shuffle by sequence into train / validation / test of sizes
/// `⌊n·r·(1−v)⌋`, `⌊n·r·v⌋` and the remainder.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), DataError> {
    if dataset.is_empty() {
        return Err(DataError::Empty);
    }
    let in_unit = |v: f64| v > 0.0 && v < 1.0;
    if !in_unit(spec.train_ratio) || !in_unit(spec.val_fraction_of_train) {
        return Err(DataError::Invalid(format!("split ratios must lie in (0, 1): {spec:?}")));
    }
    let n = dataset.len();
    // the epsilon absorbs representation error such as 1000·0.85·0.9 = 764.999…
    let floor = |v: f64| (v + 1e-9).floor() as usize;
    let n_train = floor(n as f64 * spec.train_ratio * (1.0 - spec.val_fraction_of_train));
    let n_val = floor(n as f64 * spec.train_ratio * spec.val_fraction_of_train);

    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(spec.seed).shuffle(&mut order);
    let take = |idx: &[usize]| dataset.with_samples(idx.iter().map(|&i| dataset.samples[i].clone()).collect());
    Ok((
        take(&order[..n_train]),
        take(&order[n_train..n_train + n_val]),
        take(&order[n_train + n_val..]),
    ))
}

/// Fits min-max constants on `train` and applies them to `train` and every
/// dataset in `others`. Values outside the training range are not clipped.
pub fn normalize_fit_apply(
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(Dataset, Vec<Dataset>, Normalization), DataError> {
    let norm = Normalization::fit(train)?;
    let mut out = Vec::with_capacity(others.len());
    for d in others {
        out.push(apply_normalization(d, norm)?);
    }
    Ok((apply_normalization(train, norm)?, out, norm))
}

/// Applies previously fitted constants, e.g. those stored with a trained
/// mechanism.
pub fn apply_normalization(dataset: &Dataset, norm: Normalization) -> Result<Dataset, DataError> {
    if dataset.normalization.is_some() {
        return Err(DataError::Invalid("dataset is already normalized".into()));
    }
    if !(norm.max > norm.min) {
        return Err(DataError::Invalid(format!("degenerate normalization {norm:?}")));
    }
    let mut out = dataset.clone();
    for s in &mut out.samples {
        s.y.iter_mut().for_each(|v| *v = norm.apply(*v));
    }
    out.normalization = Some(norm);
    Ok(out)
}

/// Shuffled index batches covering `0..n` exactly once; the last batch may
/// be short.
pub fn minibatches(n: usize, batch_size: usize, seed: u64) -> impl Iterator<Item = Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let chunks: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    chunks.into_iter()
}

/// Endless stream of minibatches, reshuffling at every pass.
#[derive(Debug, Clone)]
pub struct BatchStream {
    n: usize,
    batch_size: usize,
    seed: u64,
    pass: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(n > 0 && batch_size >= 1);
        Self {
            n,
            batch_size,
            seed,
            pass: 0,
            pending: Vec::new().into_iter(),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if let Some(b) = self.pending.next() {
            return b;
        }
        let pass_seed = derive_seed(self.seed, self.pass);
        self.pass += 1;
        let batches: Vec<Vec<usize>> = minibatches(self.n, self.batch_size, pass_seed).collect();
        self.pending = batches.into_iter();
        self.pending.next().expect("n > 0")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| SequenceSample {
                id: i as u64,
                house_id: (i % 3) as u32,
                day: (i / 3) as u32,
                y: (0..4).map(|t| 2.0 + (i + t) as f64 % 5.0).collect(),
                x: vec![i % 2; 4],
            })
            .collect();
        Dataset::new(samples, 4, 2, LabelSemantics::PerStep).unwrap()
    }

    fn ids(d: &Dataset) -> Vec<u64> {
        d.samples.iter().map(|s| s.id).collect()
    }

    #[test]
    fn split_sizes_and_partition() {
        let ds = toy(1000);
        let (tr, va, te) = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (765, 85, 150));
        let mut all: Vec<u64> = [ids(&tr), ids(&va), ids(&te)].concat();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
        let again = split(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(again.0, tr);
        let other = split(&ds, &SplitSpec { seed: 1, ..SplitSpec::default() }).unwrap();
        assert_ne!(ids(&other.0), ids(&tr));
        assert!(split(&toy(0), &SplitSpec::default()).is_err());
    }

    #[test]
    fn normalization_cases() {
        let mut train = toy(1);
        train.samples[0].y = vec![2.0, 6.0, 4.0, 3.0];
        let mut test = toy(1);
        test.samples[0].y = vec![4.0, 8.0, 0.0, 6.0];
        let (ntrain, others, norm) = normalize_fit_apply(&train, &[&test]).unwrap();
        assert_eq!(norm, Normalization { min: 2.0, max: 6.0 });
        assert_eq!(ntrain.samples[0].y, vec![0.0, 1.0, 0.5, 0.25]);
        assert_eq!(others[0].samples[0].y, vec![0.5, 1.5, -0.5, 1.0]);

        let mut shifted = train.clone();
        shifted.samples[0].y.iter_mut().for_each(|v| *v += 10.0);
        let (nshift, _, _) = normalize_fit_apply(&shifted, &[]).unwrap();
        assert_eq!(nshift.samples[0].y, ntrain.samples[0].y);

        let mut flat = toy(1);
        flat.samples[0].y = vec![1.0; 4];
        assert!(matches!(Normalization::fit(&flat), Err(DataError::ConstantSeries(_))));
    }

    #[test]
    fn normalization_ignores_test_set() {
        let train = toy(10);
        let (_, _, a) = normalize_fit_apply(&train, &[&toy(3)]).unwrap();
        let mut odd = toy(3);
        odd.samples[0].y[0] = 100.0;
        let (_, _, b) = normalize_fit_apply(&train, &[&odd]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatch_cases() {
        let sizes: Vec<usize> = minibatches(10, 4, 3).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let a: Vec<Vec<usize>> = minibatches(10, 4, 3).collect();
        let b: Vec<Vec<usize>> = minibatches(10, 4, 3).collect();
        assert_eq!(a, b);
        let mut seen: Vec<usize> = a.concat();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn batch_stream_cycles_through_epochs() {
        let mut s = BatchStream::new(5, 2, 1);
        let mut first_pass: Vec<usize> = (0..3).flat_map(|_| s.next_batch()).collect();
        first_pass.sort_unstable();
        assert_eq!(first_pass, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.next_batch().len(), 2);
    }

    #[test]
    fn batch_layout_is_time_major() {
        let ds = toy(5);
        let b = ds.batch(&[4, 1]);
        assert_eq!(b.y.len(), 4);
        assert_eq!(b.y[2].shape(), (1, 2));
        assert_eq!(b.y[2][(0, 0)], ds.samples[4].y[2]);
        assert_eq!(b.x[0], vec![0, 1]);
        assert_eq!(b.ids, vec![4, 1]);
    }

    #[test]
    fn validation_rejects_bad_samples() {
        let mut ds = toy(2);
        ds.samples[1].x[2] = 5;
        assert!(ds.validate().is_err());
        let mut ds = toy(2);
        ds.semantics = LabelSemantics::PerSequence;
        ds.samples[0].x = vec![0, 1, 0, 1];
        assert!(ds.validate().is_err());
        let mut ds = toy(2);
        ds.samples[0].y[0] = -1.0;
        assert!(ds.validate().is_err());
    }
}
