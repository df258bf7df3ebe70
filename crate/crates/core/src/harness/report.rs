//! CSV artifacts. Floats use the shortest representation that reads back
//! to the same value, so identical runs give byte-identical files.

use std::io::{Read, Write};

use super::{HarnessError, PsdReport, TradeoffPoint, TrainHistory};

pub const TRADEOFF_HEADER: [&str; 5] = ["lambda", "nrmse", "attacker_balanced_accuracy_pct", "di_bound_mean", "seed"];

const HISTORY_HEADER: [&str; 12] = [
    "iteration",
    "epoch",
    "adversary_loss",
    "releaser_loss",
    "distortion",
    "entropy",
    "di_bound",
    "val_distortion",
    "val_entropy",
    "val_objective",
    "val_adversary_loss",
    "val_di_bound",
];

pub fn write_tradeoff_csv<W: Write>(points: &[TradeoffPoint], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRADEOFF_HEADER)?;
    for p in points {
        w.write_record([
            p.lambda.to_string(),
            p.nrmse.to_string(),
            p.attacker_balanced_accuracy_pct.to_string(),
            p.di_bound_mean.to_string(),
            p.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tradeoff_csv<R: Read>(input: R) -> Result<Vec<TradeoffPoint>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(TRADEOFF_HEADER) {
        return Err(HarnessError::Metric(format!(
            "unexpected tradeoff header `{}`",
            r.headers()?.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let f = |i: usize| -> Result<f64, HarnessError> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Metric(format!("tradeoff.csv line {line}: bad field {}", i + 1)))
        };
        out.push(TradeoffPoint {
            lambda: f(0)?,
            nrmse: f(1)?,
            attacker_balanced_accuracy_pct: f(2)?,
            di_bound_mean: f(3)?,
            seed: rec
                .get(4)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Metric(format!("tradeoff.csv line {line}: bad seed")))?,
        });
    }
    Ok(out)
}

/// One row per releaser update; the validation columns are filled on the
/// last update of each epoch.
pub fn write_history_csv<W: Write>(history: &TrainHistory, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HISTORY_HEADER)?;
    for (i, r) in history.iterations.iter().enumerate() {
        let closes_epoch = history.iterations.get(i + 1).is_none_or(|n| n.epoch != r.epoch);
        let val = history.epochs.iter().find(|e| e.epoch == r.epoch).filter(|_| closes_epoch);
        let mut row = vec![
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.adversary_loss.to_string(),
            r.releaser_loss.to_string(),
            r.distortion.to_string(),
            r.entropy.to_string(),
            r.di_bound.to_string(),
        ];
        match val {
            Some(e) => row.extend(
                [e.distortion, e.entropy, e.objective, e.adversary_loss, e.di_bound].map(|v| v.to_string()),
            ),
            None => row.extend(std::iter::repeat_n(String::new(), 5)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_psd_csv<W: Write>(report: &PsdReport, out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency_cph", "input_psd", "error_psd"])?;
    for ((f, i), e) in report.frequencies.iter().zip(&report.input_psd).zip(&report.error_psd) {
        w.write_record([f.to_string(), i.to_string(), e.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{EpochRecord, IterationRecord};

    #[test]
    fn tradeoff_roundtrip() {
        let points = vec![
            TradeoffPoint {
                lambda: 0.0,
                nrmse: 0.0312,
                attacker_balanced_accuracy_pct: 93.25,
                di_bound_mean: 7.1,
                seed: 4,
            },
            TradeoffPoint {
                lambda: 0.5,
                nrmse: 1.0 / 3.0,
                attacker_balanced_accuracy_pct: 51.0,
                di_bound_mean: 0.25,
                seed: 4,
            },
        ];
        let mut buf = Vec::new();
        write_tradeoff_csv(&points, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("lambda,nrmse,attacker_balanced_accuracy_pct,di_bound_mean,seed\n0,0.0312,93.25,7.1,4\n"));
        assert_eq!(read_tradeoff_csv(buf.as_slice()).unwrap(), points);
        assert!(read_tradeoff_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn history_rows() {
        let it = |i, e| IterationRecord {
            iteration: i,
            epoch: e,
            adversary_loss: 0.5,
            releaser_loss: 0.1,
            distortion: 0.1,
            entropy: 0.0,
            di_bound: 1.0,
        };
        let h = TrainHistory {
            iterations: vec![it(0, 0), it(1, 0), it(2, 1)],
            epochs: vec![
                EpochRecord {
                    epoch: 0,
                    distortion: 0.2,
                    entropy: 0.3,
                    objective: 0.2,
                    adversary_loss: 0.6,
                    di_bound: 2.0,
                },
                EpochRecord {
                    epoch: 1,
                    distortion: 0.1,
                    entropy: 0.3,
                    objective: 0.1,
                    adversary_loss: 0.6,
                    di_bound: 2.0,
                },
            ],
            selected_epoch: Some(1),
        };
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[1].ends_with(",,,,,"));
        assert!(lines[2].ends_with(",0.2,0.3,0.2,0.6,2"));
        assert!(lines[3].ends_with(",0.1,0.3,0.1,0.6,2"));
    }

    #[test]
    fn psd_columns() {
        let r = PsdReport {
            frequencies: vec![0.0, 0.5],
            input_psd: vec![1.0, 2.0],
            error_psd: vec![0.25, 0.125],
            realizations: 10,
            houses: 1,
        };
        let mut buf = Vec::new();
        write_psd_csv(&r, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "frequency_cph,input_psd,error_psd\n0,1,0.25\n0.5,2,0.125\n"
        );
    }
}
