use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::CampaignConfig;
use crate::deriv::max_abs;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Skipped => "skipped",
        })
    }
}

/// What a record compares against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    /// Sub-leading order that must vanish.
    Vanish,
    /// Leading order compared with an oracle.
    Match,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub point: Vec<f64>,
    pub order: usize,
    pub check: Check,
    pub estimate: Vec<f64>,
    pub oracle: Vec<f64>,
    pub residual: f64,
    pub tolerance: f64,
    pub error_estimate: f64,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl Record {
    pub fn compare(
        point: &[f64],
        order: usize,
        check: Check,
        estimate: Vec<f64>,
        oracle: Vec<f64>,
        tolerance: f64,
        error_estimate: f64,
    ) -> Self {
        let residual = crate::deriv::max_abs_diff(&estimate, &oracle);
        let verdict = if residual <= tolerance {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Record {
            point: point.to_vec(),
            order,
            check,
            estimate,
            oracle,
            residual,
            tolerance,
            error_estimate,
            verdict,
            reason: None,
        }
    }

    pub fn vanish(point: &[f64], order: usize, estimate: Vec<f64>, tol: f64, err: f64) -> Self {
        let zero = vec![0.0; estimate.len()];
        Self::compare(point, order, Check::Vanish, estimate, zero, tol, err)
    }

    pub fn unusable(point: &[f64], order: usize, verdict: Verdict, reason: String) -> Self {
        Record {
            point: point.to_vec(),
            order,
            check: Check::Match,
            estimate: Vec::new(),
            oracle: Vec::new(),
            residual: f64::NAN,
            tolerance: f64::NAN,
            error_estimate: f64::NAN,
            verdict,
            reason: Some(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub statement: String,
    pub config: CampaignConfig,
    pub records: Vec<Record>,
    pub points: usize,
    pub points_passed: usize,
    pub points_failed: usize,
    pub points_skipped: usize,
    pub max_residual: f64,
    pub verdict: Verdict,
    pub elapsed_seconds: f64,
}

impl Report {
    /// Aggregates per-point record groups. A point passes when all its
    /// records do; the campaign passes when nothing failed and at least 80%
    /// of the points passed.
    pub fn assemble(
        statement: &str,
        config: CampaignConfig,
        groups: Vec<Vec<Record>>,
        elapsed_seconds: f64,
    ) -> Self {
        let points = groups.len();
        let mut passed = 0;
        let mut failed = 0;
        let mut skipped = 0;
        for g in &groups {
            if g.iter().any(|r| r.verdict == Verdict::Fail) {
                failed += 1;
            } else if g.iter().any(|r| r.verdict == Verdict::Skipped) {
                skipped += 1;
            } else {
                passed += 1;
            }
        }
        let records: Vec<Record> = groups.into_iter().flatten().collect();
        let max_residual = records
            .iter()
            .filter(|r| r.residual.is_finite())
            .fold(0.0, |m, r| f64::max(m, r.residual));
        let needed = (0.8 * points as f64).ceil() as usize;
        let verdict = if failed == 0 && passed >= needed {
            Verdict::Pass
        } else {
            Verdict::Fail
        };
        Report {
            statement: statement.to_string(),
            config,
            records,
            points,
            points_passed: passed,
            points_failed: failed,
            points_skipped: skipped,
            max_residual,
            verdict,
            elapsed_seconds,
        }
    }

    /// 0 pass, 1 fail, 3 when more than 20% of the points broke down.
    pub fn exit_code(&self) -> i32 {
        if self.points > 0 && self.points_skipped * 5 > self.points {
            3
        } else if self.verdict == Verdict::Pass {
            0
        } else {
            1
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}: {} ({} point{}: {} pass, {} fail, {} skipped; max residual {:.3e})",
            self.statement,
            self.verdict.to_string().to_uppercase(),
            self.points,
            if self.points == 1 { "" } else { "s" },
            self.points_passed,
            self.points_failed,
            self.points_skipped,
            self.max_residual
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            _ => Err(Error::Config(format!("unknown report format '{s}'"))),
        }
    }
}

fn opt_num(x: f64) -> String {
    if x.is_finite() {
        x.to_string()
    } else {
        String::new()
    }
}

/// Serializes the report. CSV holds one row per record and no timing, so it
/// is reproducible byte for byte.
pub fn write_report<W: Write>(r: &Report, out: W, format: Format) -> Result<()> {
    match format {
        Format::Json => serde_json::to_writer_pretty(out, r).map_err(|e| Error::Io(e.to_string())),
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let io = |e: csv::Error| Error::Io(e.to_string());
            w.write_record([
                "point",
                "order",
                "estimate_norm",
                "oracle_norm",
                "residual",
                "error_estimate",
                "verdict",
            ])
            .map_err(io)?;
            for rec in &r.records {
                let point: Vec<String> = rec.point.iter().map(|v| v.to_string()).collect();
                let (en, on) = if rec.estimate.is_empty() {
                    (String::new(), String::new())
                } else {
                    (
                        max_abs(&rec.estimate).to_string(),
                        max_abs(&rec.oracle).to_string(),
                    )
                };
                w.write_record([
                    point.join(" "),
                    rec.order.to_string(),
                    en,
                    on,
                    opt_num(rec.residual),
                    opt_num(rec.error_estimate),
                    rec.verdict.to_string(),
                ])
                .map_err(io)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

pub fn emit_report(r: &Report, path: &Path, format: Format) -> Result<()> {
    let file =
        std::fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut buf = std::io::BufWriter::new(file);
    write_report(r, &mut buf, format)?;
    buf.flush()?;
    Ok(())
}
