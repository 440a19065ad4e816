use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "step\tlr\traw_grad_norm\tsmoothed_grad_norm\tloss";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub raw_grad_norm: f64,
    pub smoothed_grad_norm: f64,
    pub loss: f64,
}

/// Per-step global gradient norms (before clipping) and their exponential
/// moving average. The average starts at the first recorded norm.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormTrace {
    smoothing: f64,
    rows: Vec<TraceRow>,
}

impl GradNormTrace {
    pub fn new(smoothing: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(Error::Config(format!("trace smoothing must be in [0, 1), got {smoothing}")));
        }
        Ok(Self { smoothing, rows: Vec::new() })
    }

    pub fn record(&mut self, lr: f64, raw_grad_norm: f64, loss: f64) {
        let smoothed = match self.rows.last() {
            None => raw_grad_norm,
            Some(prev) => self.smoothing * prev.smoothed_grad_norm + (1.0 - self.smoothing) * raw_grad_norm,
        };
        self.rows.push(TraceRow {
            step: self.rows.len(),
            lr,
            raw_grad_norm,
            smoothed_grad_norm: smoothed,
            loss,
        });
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn raw(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.raw_grad_norm).collect()
    }

    pub fn smoothed(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.smoothed_grad_norm).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                r.step, r.lr, r.raw_grad_norm, r.smoothed_grad_norm, r.loss
            ));
        }
        out
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_tsv().as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Reads a trace file back. The smoothing factor is not stored in the
    /// file and must be supplied.
    pub fn read_tsv(path: &Path, smoothing: f64) -> Result<Self> {
        let mut trace = Self::new(smoothing)?;
        let schema = |line: usize, message: String| Error::Schema { path: path.to_path_buf(), line, message };
        let reader = BufReader::new(File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if i == 0 {
                if line != TRACE_HEADER {
                    return Err(schema(lineno, format!("expected header `{TRACE_HEADER}`")));
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 5 {
                return Err(schema(lineno, format!("expected 5 columns, found {}", fields.len())));
            }
            let step: usize = fields[0]
                .parse()
                .map_err(|_| schema(lineno, format!("bad step `{}`", fields[0])))?;
            if step != trace.rows.len() {
                return Err(schema(lineno, format!("expected step {}, found {step}", trace.rows.len())));
            }
            let mut nums = [0.0; 4];
            for (slot, text) in nums.iter_mut().zip(&fields[1..]) {
                *slot = text.parse().map_err(|_| schema(lineno, format!("bad number `{text}`")))?;
            }
            trace.rows.push(TraceRow {
                step,
                lr: nums[0],
                raw_grad_norm: nums[1],
                smoothed_grad_norm: nums[2],
                loss: nums[3],
            });
        }
        Ok(trace)
    }
}

/// Unbiased sample variance; zero for fewer than two values.
pub fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ema_starts_at_first_value() {
        let mut t = GradNormTrace::new(0.5).unwrap();
        t.record(0.1, 2.0, 1.0);
        t.record(0.1, 4.0, 1.0);
        t.record(0.1, 0.0, 1.0);
        assert_eq!(t.smoothed(), vec![2.0, 3.0, 1.5]);
        assert_eq!(t.raw(), vec![2.0, 4.0, 0.0]);
        assert!(GradNormTrace::new(1.0).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let mut t = GradNormTrace::new(0.98).unwrap();
        for i in 0..20 {
            t.record(1e-3 * i as f64 / 7.0, (i as f64).sqrt() / 3.0, 1.0 / (1.0 + i as f64));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.tsv");
        t.write_tsv(&path).unwrap();
        assert_eq!(GradNormTrace::read_tsv(&path, 0.98).unwrap(), t);
    }

    #[test]
    fn malformed_trace_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.tsv");
        std::fs::write(&path, format!("{TRACE_HEADER}\n0\t0.1\t1\t1\t0.5\n1\t0.1\tx\t1\t0.5\n")).unwrap();
        match GradNormTrace::read_tsv(&path, 0.98) {
            Err(Error::Schema { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn variance_examples() {
        assert_eq!(sample_variance(&[]), 0.0);
        assert_eq!(sample_variance(&[3.0]), 0.0);
        assert_eq!(sample_variance(&[1.0, 3.0]), 2.0);
        assert_eq!(sample_variance(&[2.0, 2.0, 2.0]), 0.0);
    }
}
