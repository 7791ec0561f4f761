//! Evaluation CSV and mask dumps.

use std::fmt::Write as _;
use std::path::Path;

use dclust_core::eval::SdrReport;

use crate::error::{AppError, Result};

pub const REPORT_HEADER: &str = "mixture_id,source_idx,sdr_db,sdr_improvement_db,permutation,mode,strategy";

/// One evaluated mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub mixture_id: String,
    pub report: SdrReport,
    pub strategy: String,
}

/// Fixed-precision CSV so identical runs give identical bytes.
pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{REPORT_HEADER}\n");
    for row in rows {
        let perm = row.report.permutation.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        let mode = row.report.mode.name();
        for (j, (sdr, imp)) in row.report.per_source_sdr_db.iter().zip(&row.report.per_source_sdr_improvement_db).enumerate() {
            writeln!(out, "{},{j},{sdr:.6},{imp:.6},{perm},{mode},{}", row.mixture_id, row.strategy).expect("string write");
        }
    }
    out
}

/// Mean improvement per reference index over all rows.
pub fn mean_improvement(rows: &[ReportRow]) -> Vec<f64> {
    let k = rows.iter().map(|r| r.report.per_source_sdr_improvement_db.len()).max().unwrap_or(0);
    (0..k)
        .map(|j| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| r.report.per_source_sdr_improvement_db.get(j).copied()).collect();
            vals.iter().sum::<f64>() / vals.len().max(1) as f64
        })
        .collect()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

/// Binary PGM of a frame-major mask: one row per frequency bin (low
/// frequencies at the bottom), one column per frame, 255 where the mask is
/// at least 0.5.
pub fn mask_pgm(mask: &[f64], bins: usize) -> Vec<u8> {
    let frames = mask.len() / bins.max(1);
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for f in (0..bins).rev() {
        out.extend((0..frames).map(|t| if mask[t * bins + f] >= 0.5 { 255u8 } else { 0 }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use dclust_core::eval::SdrMode;

    #[test]
    fn csv_has_one_row_per_source() {
        let row = ReportRow {
            mixture_id: "m".into(),
            report: SdrReport {
                per_source_sdr_db: vec![10.0, 5.5],
                per_source_sdr_improvement_db: vec![8.0, 7.25],
                permutation: vec![1, 0],
                mode: SdrMode::ScaleInvariant,
            },
            strategy: "global_kmeans".into(),
        };
        let csv = to_csv(std::slice::from_ref(&row));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], REPORT_HEADER);
        assert_eq!(lines[1], "m,0,10.000000,8.000000,1 0,scale_invariant,global_kmeans");
        assert_eq!(lines.len(), 3);
        assert_eq!(mean_improvement(&[row.clone(), row]), vec![8.0, 7.25]);
    }

    #[test]
    fn pgm_layout() {
        // 2 frames x 3 bins, frame-major
        let pgm = mask_pgm(&[1.0, 0.0, 0.0, 0.0, 0.0, 1.0], 3);
        let header = b"P5\n2 3\n255\n";
        assert_eq!(&pgm[..header.len()], header);
        assert_eq!(&pgm[header.len()..], &[0, 255, 0, 0, 255, 0]);
    }
}
