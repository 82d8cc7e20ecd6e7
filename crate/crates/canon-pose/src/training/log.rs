//! Step-level training log: one CSV row per optimizer step.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::LossBreakdown;

pub const LOG_HEADER: &str = "epoch,step,angle,rec,adv_decoder,adv_critic,total,lr,seconds";

/// One row of the log. `(epoch, step)` increases monotonically over a run;
/// `adv_critic` is present only on critic-update steps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: u64,
    pub step: u64,
    pub losses: LossBreakdown,
    pub lr: f64,
    pub seconds: f64,
}

pub struct LogWriter {
    out: std::io::BufWriter<std::fs::File>,
    path: std::path::PathBuf,
}

impl LogWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        writeln!(out, "{LOG_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(LogWriter {
            out,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, r: &TrainLogRecord) -> Result<()> {
        let adv_critic = r
            .losses
            .adv_critic
            .map(|v| format!("{v:.9e}"))
            .unwrap_or_default();
        writeln!(
            self.out,
            "{},{},{:.9e},{:.9e},{:.9e},{},{:.9e},{:.9e},{:.3}",
            r.epoch,
            r.step,
            r.losses.angle,
            r.losses.rec,
            r.losses.adv_decoder,
            adv_critic,
            r.losses.total,
            r.lr,
            r.seconds
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads a log back; used by tests and the schedule checks.
pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if lineno == 0 {
            if line != LOG_HEADER {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    detail: format!("unexpected log header: {line}"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: expected 9 fields, got {}", lineno + 1, fields.len()),
            });
        }
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Format {
                path: path.to_path_buf(),
                detail: format!("line {}: bad {what}: {s:?}", lineno + 1),
            })
        };
        let adv_critic = if fields[5].is_empty() {
            None
        } else {
            Some(parse(fields[5], "adv_critic")?)
        };
        rows.push(TrainLogRecord {
            epoch: parse(fields[0], "epoch")? as u64,
            step: parse(fields[1], "step")? as u64,
            losses: LossBreakdown {
                angle: parse(fields[2], "angle")?,
                rec: parse(fields[3], "rec")?,
                adv_decoder: parse(fields[4], "adv_decoder")?,
                adv_critic,
                total: parse(fields[6], "total")?,
            },
            lr: parse(fields[7], "lr")?,
            seconds: parse(fields[8], "seconds")?,
        });
    }
    Ok(rows)
}
