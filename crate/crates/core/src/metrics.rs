//! Larynx-cycle reliability and accuracy measures (IDR, MR, FAR, IDA),
//! frame-level precision/recall/F1, and report formatting.
//!
//! Each reference GCI owns the half-open window reaching halfway to its
//! neighbours; the first and last windows mirror their one inner
//! half-span. Detections outside every window are ignored. IDA is the
//! population standard deviation of the timing error of identified cycles.

use crate::error::{Error, Result};
use crate::marks::GciMarks;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleWindow {
    pub ref_index: usize,
    pub lo: f64,
    pub hi: f64,
}

impl CycleWindow {
    pub fn contains(&self, x: usize) -> bool {
        let x = x as f64;
        self.lo <= x && x < self.hi
    }
}

pub fn build_cycles(refs: &GciMarks) -> Result<Vec<CycleWindow>> {
    let m = refs.positions();
    if m.len() < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 reference marks, got {}", m.len())));
    }
    let n = m.len();
    Ok((0..n)
        .map(|i| {
            let left = if i == 0 { m[1] - m[0] } else { m[i] - m[i - 1] };
            let right = if i == n - 1 { m[n - 1] - m[n - 2] } else { m[i + 1] - m[i] };
            CycleWindow {
                ref_index: m[i],
                lo: m[i] as f64 - left as f64 / 2.0,
                hi: m[i] as f64 + right as f64 / 2.0,
            }
        })
        .collect())
}

/// Precision, recall and F1 over the positive class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl FrameScores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            tp,
            fp,
            fn_,
        }
    }

    pub fn merge(&self, other: &FrameScores) -> FrameScores {
        Self::from_counts(self.tp + other.tp, self.fp + other.fp, self.fn_ + other.fn_)
    }
}

pub fn frame_f1(pred: &[u8], truth: &[u8]) -> Result<FrameScores> {
    if pred.len() != truth.len() {
        return Err(Error::Shape {
            expected: format!("{} predicted labels", truth.len()),
            actual: pred.len().to_string(),
        });
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == 1, t == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    Ok(FrameScores::from_counts(tp, fp, fn_))
}

/// Detection scores for one recording or a merged corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_ref: usize,
    pub n_det: usize,
    pub identified: usize,
    pub missed: usize,
    pub false_alarm: usize,
    pub outside: usize,
    pub sample_rate_hz: u32,
    /// Sum and sum of squares of identified timing errors, in samples.
    pub err_sum: i64,
    pub err_sq_sum: i128,
    pub frame: Option<FrameScores>,
}

impl EvalReport {
    fn pct(&self, k: usize) -> f64 {
        if self.n_ref == 0 {
            0.0
        } else {
            100.0 * k as f64 / self.n_ref as f64
        }
    }

    pub fn idr(&self) -> f64 {
        self.pct(self.identified)
    }

    pub fn mr(&self) -> f64 {
        self.pct(self.missed)
    }

    pub fn far(&self) -> f64 {
        self.pct(self.false_alarm)
    }

    /// Population standard deviation of identified timing errors in ms;
    /// `None` when nothing was identified.
    pub fn ida_ms(&self) -> Option<f64> {
        if self.identified == 0 {
            return None;
        }
        let n = self.identified as i128;
        let s = self.err_sum as i128;
        let var = (n * self.err_sq_sum - s * s) as f64 / (n * n) as f64;
        Some(var.max(0.0).sqrt() * 1000.0 / self.sample_rate_hz as f64)
    }

    /// Pools cycle counts and error moments of several reports.
    pub fn merge(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidArgument("nothing to merge".into()))?;
        let mut out = EvalReport {
            n_ref: 0,
            n_det: 0,
            identified: 0,
            missed: 0,
            false_alarm: 0,
            outside: 0,
            sample_rate_hz: first.sample_rate_hz,
            err_sum: 0,
            err_sq_sum: 0,
            frame: None,
        };
        for r in reports {
            if r.sample_rate_hz != out.sample_rate_hz {
                return Err(Error::InvalidArgument("cannot merge reports at different sample rates".into()));
            }
            out.n_ref += r.n_ref;
            out.n_det += r.n_det;
            out.identified += r.identified;
            out.missed += r.missed;
            out.false_alarm += r.false_alarm;
            out.outside += r.outside;
            out.err_sum += r.err_sum;
            out.err_sq_sum += r.err_sq_sum;
            out.frame = match (out.frame, r.frame) {
                (Some(a), Some(b)) => Some(a.merge(&b)),
                (None, b) => b,
                (a, None) => a,
            };
        }
        Ok(out)
    }
}

pub fn compute_metrics(refs: &GciMarks, dets: &GciMarks, sample_rate_hz: u32) -> Result<EvalReport> {
    let windows = build_cycles(refs)?;
    let mut counts = vec![0usize; windows.len()];
    let mut first_hit = vec![0usize; windows.len()];
    let mut outside = 0;
    for &d in dets.positions() {
        let x = d as f64;
        // windows tile [lo_0, hi_last) in order
        let i = windows.partition_point(|w| w.hi <= x);
        if i < windows.len() && windows[i].contains(d) {
            if counts[i] == 0 {
                first_hit[i] = d;
            }
            counts[i] += 1;
        } else {
            outside += 1;
        }
    }
    let mut report = EvalReport {
        n_ref: windows.len(),
        n_det: dets.len(),
        identified: 0,
        missed: 0,
        false_alarm: 0,
        outside,
        sample_rate_hz,
        err_sum: 0,
        err_sq_sum: 0,
        frame: None,
    };
    for (w, (&c, &hit)) in windows.iter().zip(counts.iter().zip(&first_hit)) {
        match c {
            0 => report.missed += 1,
            1 => {
                report.identified += 1;
                let e = hit as i64 - w.ref_index as i64;
                report.err_sum += e;
                report.err_sq_sum += (e * e) as i128;
            }
            _ => report.false_alarm += 1,
        }
    }
    Ok(report)
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{:.2}", (x * 100.0).round() / 100.0),
        _ => "n/a".into(),
    }
}

/// One table line: name padded to `width`, then IDR, MR, FAR and IDA.
pub fn format_row(name: &str, width: usize, idr: f64, mr: f64, far: f64, ida_ms: Option<f64>) -> String {
    format!(
        "{:<width$} {:>7} {:>7} {:>7} {:>9}",
        name,
        cell(Some(idr)),
        cell(Some(mr)),
        cell(Some(far)),
        cell(ida_ms)
    )
}

/// Fixed-width `Method IDR MR FAR IDA(msec)` table, two decimals.
pub fn format_report(rows: &[(String, EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(6);
    let mut s = format!("{:<width$} {:>7} {:>7} {:>7} {:>9}\n", "Method", "IDR", "MR", "FAR", "IDA(msec)");
    for (name, r) in rows {
        s.push_str(&format_row(name, width, r.idr(), r.mr(), r.far(), r.ida_ms()));
        s.push('\n');
    }
    s
}

/// Machine-readable `key=value` lines, one per report, after a header
/// naming the scoring conventions.
pub fn format_key_values(rows: &[(String, EvalReport)]) -> String {
    let mut s = String::from("# ida=population_std out_of_window_detections=ignored\n");
    for (name, r) in rows {
        s.push_str(&format!(
            "method={} idr={:.6} mr={:.6} far={:.6} ida_ms={} n_ref={} n_det={} identified={} missed={} false_alarm={} outside={}",
            name.replace(char::is_whitespace, "_"),
            r.idr(),
            r.mr(),
            r.far(),
            r.ida_ms().map_or("n/a".into(), |v| format!("{v:.6}")),
            r.n_ref,
            r.n_det,
            r.identified,
            r.missed,
            r.false_alarm,
            r.outside
        ));
        if let Some(f) = r.frame {
            s.push_str(&format!(" frame_precision={:.6} frame_recall={:.6} frame_f1={:.6}", f.precision, f.recall, f.f1));
        }
        s.push('\n');
    }
    s
}
