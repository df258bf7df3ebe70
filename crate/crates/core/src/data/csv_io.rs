//! Hourly consumption CSV files.
//!
//! Header `house_id,timestamp,consumption_kwh` with an optional trailing
//! `label` column. Timestamps are ISO-8601 (`2020-01-01T13:00:00`), one row
//! per house and hour. Rows of different houses may interleave, but within a
//! house timestamps must increase. A jump of more than one hour starts a new
//! contiguous run, so no day straddles a gap.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};

use super::{DataError, Dataset, LabelSemantics, SequenceSample, DEFAULT_SEQ_LEN};

pub const CSV_HEADER: &str = "house_id,timestamp,consumption_kwh";
pub const CSV_HEADER_LABELED: &str = "house_id,timestamp,consumption_kwh,label";

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// How labels are obtained from a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CsvSchema {
    /// `PerStep` reads the `label` column (required). `PerSequence` ignores
    /// it and labels every hour with the rank of its house id.
    pub semantics: LabelSemantics,
    pub seq_len: usize,
}

impl CsvSchema {
    pub fn occupancy() -> Self {
        Self {
            semantics: LabelSemantics::PerStep,
            seq_len: DEFAULT_SEQ_LEN,
        }
    }

    pub fn identity() -> Self {
        Self {
            semantics: LabelSemantics::PerSequence,
            seq_len: DEFAULT_SEQ_LEN,
        }
    }
}

/// A contiguous hourly run of one house.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    pub house_id: u32,
    pub start: NaiveDateTime,
    pub values: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Cuts each run into non-overlapping windows of `seq_len`, dropping the
/// trailing partial window. Days are numbered per house in input order and
/// ids are assigned sequentially.
pub fn reshape_daily(series: &[HourlySeries], seq_len: usize) -> Vec<SequenceSample> {
    assert!(seq_len > 0);
    let mut day_of: BTreeMap<u32, u32> = BTreeMap::new();
    let mut out = Vec::new();
    for run in series {
        for (y, x) in run.values.chunks_exact(seq_len).zip(run.labels.chunks_exact(seq_len)) {
            let day = day_of.entry(run.house_id).or_insert(0);
            out.push(SequenceSample {
                id: out.len() as u64,
                house_id: run.house_id,
                day: *day,
                y: y.to_vec(),
                x: x.to_vec(),
            });
            *day += 1;
        }
    }
    out
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S"))
        .ok()
}

struct Row {
    house: u32,
    ts: NaiveDateTime,
    value: f64,
    label: Option<usize>,
}

fn parse_row(record: &csv::StringRecord, labeled: bool, line: usize) -> Result<Row, DataError> {
    let err = |msg: String| DataError::Row { line, msg };
    let expected = if labeled { 4 } else { 3 };
    if record.len() != expected {
        return Err(err(format!("expected {expected} fields, found {}", record.len())));
    }
    let house = record[0]
        .parse::<u32>()
        .map_err(|_| err(format!("bad house_id `{}`", &record[0])))?;
    let ts = parse_timestamp(&record[1]).ok_or_else(|| err(format!("bad timestamp `{}`", &record[1])))?;
    let value = record[2]
        .parse::<f64>()
        .map_err(|_| err(format!("bad consumption `{}`", &record[2])))?;
    if !value.is_finite() || value < 0.0 {
        return Err(err(format!("consumption {value} must be finite and non-negative")));
    }
    let label = if labeled {
        Some(
            record[3]
                .parse::<usize>()
                .map_err(|_| err(format!("bad label `{}`", &record[3])))?,
        )
    } else {
        None
    };
    Ok(Row { house, ts, value, label })
}

/// Parses rows into hourly runs, ordered by house id.
fn read_series<R: Read>(input: R, schema: &CsvSchema) -> Result<Vec<HourlySeries>, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(input);
    let mut records = reader.records();
    let header = match records.next() {
        Some(r) => r?,
        None => return Err(DataError::Empty),
    };
    let found = header.iter().collect::<Vec<_>>().join(",");
    let labeled = match found.as_str() {
        CSV_HEADER_LABELED => true,
        CSV_HEADER if schema.semantics == LabelSemantics::PerSequence => false,
        _ => {
            let expected = match schema.semantics {
                LabelSemantics::PerStep => CSV_HEADER_LABELED.to_string(),
                LabelSemantics::PerSequence => format!("{CSV_HEADER}[,label]"),
            };
            return Err(DataError::Header { found, expected });
        }
    };

    let hour = TimeDelta::hours(1);
    let mut runs: BTreeMap<u32, Vec<HourlySeries>> = BTreeMap::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row = parse_row(&record, labeled, line)?;
        let house_runs = runs.entry(row.house).or_default();
        let label = row.label.unwrap_or(0);
        if let Some(last) = house_runs.last_mut() {
            let prev = last.start + hour * (last.values.len() as i32 - 1);
            let step = row.ts - prev;
            if step <= TimeDelta::zero() {
                return Err(DataError::NonMonotone { house: row.house, line });
            }
            if step == hour {
                last.values.push(row.value);
                last.labels.push(label);
                continue;
            }
            if step < hour {
                return Err(DataError::Row {
                    line,
                    msg: format!("timestamp {} is less than an hour after the previous row", row.ts),
                });
            }
        }
        house_runs.push(HourlySeries {
            house_id: row.house,
            start: row.ts,
            values: vec![row.value],
            labels: vec![label],
        });
    }
    let mut series: Vec<HourlySeries> = runs.into_values().flatten().collect();
    if schema.semantics == LabelSemantics::PerSequence {
        let mut houses: Vec<u32> = series.iter().map(|s| s.house_id).collect();
        houses.dedup();
        for s in &mut series {
            let rank = houses.binary_search(&s.house_id).expect("house collected above");
            s.labels.iter_mut().for_each(|l| *l = rank);
        }
    }
    Ok(series)
}

pub fn read_csv<R: Read>(input: R, schema: &CsvSchema) -> Result<Dataset, DataError> {
    if schema.seq_len == 0 {
        return Err(DataError::Invalid("sequence length must be positive".into()));
    }
    let series = read_series(input, schema)?;
    let samples = reshape_daily(&series, schema.seq_len);
    if samples.is_empty() {
        return Err(DataError::Empty);
    }
    let alphabet = match schema.semantics {
        LabelSemantics::PerStep => samples.iter().flat_map(|s| s.x.iter()).max().map_or(2, |&m| (m + 1).max(2)),
        LabelSemantics::PerSequence => {
            let n = series.iter().map(|s| s.house_id).collect::<std::collections::BTreeSet<_>>().len();
            if n < 2 {
                return Err(DataError::Invalid("identity data needs at least two houses".into()));
            }
            n
        }
    };
    Dataset::new(samples, schema.seq_len, alphabet, schema.semantics)
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<Dataset, DataError> {
    read_csv(File::open(path)?, schema)
}

/// Writes an unnormalized dataset with the labeled header. Day `d`, hour `t`
/// is stamped `2020-01-01T00:00:00 + (d·T + t)` hours.
pub fn write_csv<W: Write>(dataset: &Dataset, out: W) -> Result<(), DataError> {
    if dataset.normalization.is_some() {
        return Err(DataError::Invalid("refusing to export normalized values".into()));
    }
    let base = NaiveDate::from_ymd_opt(2020, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid base date");
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER_LABELED.split(','))?;
    for s in &dataset.samples {
        for (t, (y, x)) in s.y.iter().zip(&s.x).enumerate() {
            let ts = base + TimeDelta::hours(s.day as i64 * dataset.seq_len as i64 + t as i64);
            writer.write_record([
                s.house_id.to_string(),
                ts.format(TIMESTAMP_FORMAT).to_string(),
                y.to_string(),
                x.to_string(),
            ])?;
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticParams, SyntheticTask};

    fn hourly_rows(house: u32, start_hour: i64, values: &[f64]) -> String {
        let base = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let ts = base + TimeDelta::hours(start_hour + i as i64);
                format!("{house},{},{v},{}\n", ts.format(TIMESTAMP_FORMAT), i % 2)
            })
            .collect()
    }

    fn labeled(body: &str) -> String {
        format!("{CSV_HEADER_LABELED}\n{body}")
    }

    #[test]
    fn reshape_cases() {
        let run = |n: usize| HourlySeries {
            house_id: 1,
            start: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap(),
            values: vec![1.0; n],
            labels: vec![0; n],
        };
        assert_eq!(reshape_daily(&[run(24)], 24).len(), 1);
        assert_eq!(reshape_daily(&[run(25)], 24).len(), 1);
        assert!(reshape_daily(&[run(0)], 24).is_empty());
        let days: Vec<u32> = reshape_daily(&[run(30), run(48)], 24).iter().map(|s| s.day).collect();
        assert_eq!(days, vec![0, 1, 2]);
    }

    #[test]
    fn forty_eight_rows_give_two_days() {
        let values: Vec<f64> = (0..48).map(|i| i as f64 * 0.25).collect();
        let ds = read_csv(labeled(&hourly_rows(7, 0, &values)).as_bytes(), &CsvSchema::occupancy()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[1].y[0], 6.0);
        assert_eq!(ds.samples[0].x[..3], [0, 1, 0]);
        assert_eq!(ds.alphabet_size, 2);
    }

    #[test]
    fn two_houses_fixture() {
        // interleaved rows; the reader groups by house
        let a = hourly_rows(3, 0, &[0.5; 24]);
        let b = hourly_rows(9, 0, &[1.5; 24]);
        let body: String = a.lines().zip(b.lines()).map(|(x, y)| format!("{x}\n{y}\n")).collect();
        let ds = read_csv(labeled(&body).as_bytes(), &CsvSchema::identity()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[0].house_id, 3);
        assert_eq!(ds.samples[1].house_id, 9);
        assert_eq!(ds.samples[1].x, vec![1; 24]);
        assert_eq!(ds.samples[1].y, vec![1.5; 24]);
        assert_eq!(ds.alphabet_size, 2);
    }

    #[test]
    fn negative_consumption_reports_line() {
        let mut body = hourly_rows(1, 0, &[1.0; 24]);
        body = body.replacen(",1,1\n", ",-1,1\n", 1);
        match read_csv(labeled(&body).as_bytes(), &CsvSchema::occupancy()) {
            Err(DataError::Row { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("non-negative"), "{msg}");
            }
            other => panic!("expected a row error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_rows_and_headers() {
        let body = labeled("1,2020-01-01T00:00:00,abc,0\n");
        assert!(matches!(
            read_csv(body.as_bytes(), &CsvSchema::occupancy()),
            Err(DataError::Row { line: 2, .. })
        ));
        let body = labeled("1,yesterday,1.0,0\n");
        assert!(matches!(read_csv(body.as_bytes(), &CsvSchema::occupancy()), Err(DataError::Row { .. })));
        let body = format!("{CSV_HEADER}\n1,2020-01-01T00:00:00,1.0\n");
        assert!(matches!(
            read_csv(body.as_bytes(), &CsvSchema::occupancy()),
            Err(DataError::Header { .. })
        ));
        assert!(matches!(read_csv("".as_bytes(), &CsvSchema::occupancy()), Err(DataError::Empty)));
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let mut body = hourly_rows(4, 0, &[1.0; 5]);
        body.push_str(&hourly_rows(4, 2, &[1.0]));
        assert!(matches!(
            read_csv(labeled(&body).as_bytes(), &CsvSchema::occupancy()),
            Err(DataError::NonMonotone { house: 4, line: 7 })
        ));
    }

    #[test]
    fn gaps_split_runs() {
        let mut body = hourly_rows(1, 0, &[1.0; 30]);
        body.push_str(&hourly_rows(1, 40, &[2.0; 24]));
        let ds = read_csv(labeled(&body).as_bytes(), &CsvSchema::occupancy()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.samples[1].y, vec![2.0; 24]);
    }

    #[test]
    fn synthetic_export_roundtrip() {
        let ds = generate_synthetic(5, 100, &SyntheticParams::default(), 4).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 12_001);
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER_LABELED);
        assert_eq!(read_csv(buf.as_slice(), &CsvSchema::occupancy()).unwrap(), ds);

        let params = SyntheticParams {
            task: SyntheticTask::Identity,
            ..SyntheticParams::default()
        };
        let ids = generate_synthetic(3, 4, &params, 4).unwrap();
        let mut buf = Vec::new();
        write_csv(&ids, &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice(), &CsvSchema::identity()).unwrap(), ids);
    }
}
