//! CSV metric logs.
//!
//! Training logs have the header `epoch,task,psnr_db,ssim,loss,lr`, one row
//! per logged epoch. Evaluation tables have `frame,task,psnr_db,ssim,loss,lr`,
//! one row per frame; `loss` is the frame's MSE and `lr` is always 0.
//! Numbers use Rust's shortest round-trip formatting.

use std::fmt::Write as _;
use std::path::Path;

use super::{EpochLog, EvalTable};
use crate::error::{format_err, Error, Result};

pub const EPOCH_CSV_HEADER: &str = "epoch,task,psnr_db,ssim,loss,lr";
pub const EVAL_CSV_HEADER: &str = "frame,task,psnr_db,ssim,loss,lr";

pub fn epoch_csv(log: &[EpochLog]) -> String {
    let mut s = format!("{EPOCH_CSV_HEADER}\n");
    for r in log {
        writeln!(s, "{},{},{},{},{},{}", r.epoch, r.task.name(), r.psnr_db, r.ssim, r.loss, r.lr).expect("String write");
    }
    s
}

pub fn eval_csv(table: &EvalTable) -> String {
    let mut s = format!("{EVAL_CSV_HEADER}\n");
    for r in &table.rows {
        writeln!(s, "{},{},{},{},{},0", r.frame, table.task.name(), r.psnr_db, r.ssim, r.mse).expect("String write");
    }
    s
}

pub fn write_epoch_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    std::fs::write(path, epoch_csv(log)).map_err(|e| Error::io(path, e))
}

pub fn write_eval_csv(path: &Path, table: &EvalTable) -> Result<()> {
    std::fs::write(path, eval_csv(table)).map_err(|e| Error::io(path, e))
}

/// Parses one of the two CSV schemas, returning the header kind
/// (`"epoch"` or `"frame"`) and the numeric columns of each row.
pub fn read_csv(text: &str) -> Result<(String, Vec<(usize, String, [f64; 4])>)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| format_err!("empty CSV"))?;
    let kind = match header {
        EPOCH_CSV_HEADER => "epoch",
        EVAL_CSV_HEADER => "frame",
        other => return Err(format_err!("unexpected CSV header {other:?}")),
    };
    let rows = lines
        .enumerate()
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 6 {
                return Err(format_err!("CSV row {}: {} columns", n + 2, cols.len()));
            }
            let index = cols[0].parse().map_err(|_| format_err!("CSV row {}: bad index {:?}", n + 2, cols[0]))?;
            let mut vals = [0.0; 4];
            for (v, c) in vals.iter_mut().zip(&cols[2..]) {
                *v = c.parse().map_err(|_| format_err!("CSV row {}: bad number {c:?}", n + 2))?;
            }
            Ok((index, cols[1].to_string(), vals))
        })
        .collect::<Result<_>>()?;
    Ok((kind.to_string(), rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{FrameScore, Task};

    #[test]
    fn eval_csv_parses_back() {
        let table = EvalTable {
            task: Task::Interpolation,
            rows: vec![FrameScore { frame: 1, psnr_db: 31.25, ssim: 0.9, mse: 0.00075 }],
        };
        let text = eval_csv(&table);
        assert!(text.starts_with("frame,task,psnr_db,ssim,loss,lr\n1,interpolation,31.25,0.9,0.00075,0\n"));
        let (kind, rows) = read_csv(&text).unwrap();
        assert_eq!(kind, "frame");
        assert_eq!(rows[0].2, [31.25, 0.9, 0.00075, 0.0]);
    }
}
