//! Plain-text and CSV reports. Every function here is a pure function of its
//! inputs, so equal results give equal bytes.

use crate::sim::{OutcomeLabel, SimConfig, SuiteEntry};
use crate::world::ScenarioKind;
use std::fmt::Write;

/// The three closed-loop suites of the model ablation.
pub const SUITES: [ScenarioKind; 3] = [ScenarioKind::ParkedCarNudge, ScenarioKind::PerturbRecovery, ScenarioKind::SlowLeadCar];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutcomeCounts {
    /// Indexed like `OutcomeLabel::ALL`.
    pub counts: [usize; 5],
    /// Runs aborted by an error, excluded from the rates.
    pub invalid: usize,
}

fn label_index(l: OutcomeLabel) -> usize {
    OutcomeLabel::ALL.iter().position(|&x| x == l).unwrap_or(0)
}

impl OutcomeCounts {
    pub fn from_entries(entries: &[SuiteEntry]) -> Self {
        let mut c = OutcomeCounts::default();
        for e in entries {
            match &e.outcome {
                Ok(o) => c.counts[label_index(o.label)] += 1,
                Err(_) => c.invalid += 1,
            }
        }
        c
    }

    pub fn valid(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn count(&self, l: OutcomeLabel) -> usize {
        self.counts[label_index(l)]
    }

    /// Percentage of valid runs with label `l` (0 when there are none).
    pub fn percent(&self, l: OutcomeLabel) -> f64 {
        let n = self.valid();
        if n == 0 {
            0.0
        } else {
            100.0 * self.count(l) as f64 / n as f64
        }
    }
}

/// Outcome rates: one column per model, one block of label rows per suite.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeTable {
    pub models: Vec<String>,
    pub rows: Vec<(ScenarioKind, Vec<OutcomeCounts>)>,
}

impl OutcomeTable {
    pub fn cell(&self, kind: ScenarioKind, model: &str) -> Option<&OutcomeCounts> {
        let j = self.models.iter().position(|m| m == model)?;
        self.rows.iter().find(|r| r.0 == kind).map(|r| &r.1[j])
    }
}

fn criteria_header(out: &mut String, cfg: &SimConfig) {
    let _ = writeln!(
        out,
        "# stuck: mean speed < {} m/s over the final {} s; recovers: |offset| < {} m and |heading error| < {} rad over the final {} s; slows down: min gap >= {} m",
        cfg.stuck_speed, cfg.stuck_window, cfg.recover_offset, cfg.recover_heading, cfg.recover_window, cfg.min_gap
    );
}

/// Fixed-width text table of label percentages.
pub fn outcome_table_text(t: &OutcomeTable, cfg: &SimConfig) -> String {
    let mut out = String::new();
    criteria_header(&mut out, cfg);
    let _ = write!(out, "{:<18} {:<10}", "scenario", "label");
    for m in &t.models {
        let _ = write!(out, " {m:>8}");
    }
    out.push('\n');
    for (kind, cells) in &t.rows {
        for l in OutcomeLabel::ALL {
            let _ = write!(out, "{:<18} {:<10}", kind.name(), l.to_string());
            for c in cells {
                let _ = write!(out, " {:>7.1}%", c.percent(l));
            }
            out.push('\n');
        }
        if cells.iter().any(|c| c.invalid > 0) {
            let _ = write!(out, "{:<18} {:<10}", kind.name(), "invalid");
            for c in cells {
                let _ = write!(out, " {:>8}", c.invalid);
            }
            out.push('\n');
        }
    }
    out
}

/// `scenario,model,label,count,percent` rows.
pub fn outcome_table_csv(t: &OutcomeTable) -> String {
    let mut out = String::from("scenario,model,label,count,percent\n");
    for (kind, cells) in &t.rows {
        for (m, c) in t.models.iter().zip(cells) {
            for l in OutcomeLabel::ALL {
                let _ = writeln!(out, "{},{m},{l},{},{:.1}", kind.name(), c.count(l), c.percent(l));
            }
            let _ = writeln!(out, "{},{m},invalid,{},", kind.name(), c.invalid);
        }
    }
    out
}

/// Per-waypoint mean L2 error (pixels), one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopTable {
    pub models: Vec<String>,
    pub errors: Vec<Vec<f64>>,
}

pub fn open_loop_text(t: &OpenLoopTable) -> String {
    let mut out = String::from("# mean L2 error in pixels per future waypoint\n");
    let _ = write!(out, "{:<9}", "waypoint");
    for m in &t.models {
        let _ = write!(out, " {m:>9}");
    }
    out.push('\n');
    let n = t.errors.iter().map(|e| e.len()).max().unwrap_or(0);
    for k in 0..n {
        let _ = write!(out, "{:<9}", format!("w{k}"));
        for e in &t.errors {
            match e.get(k) {
                Some(v) => {
                    let _ = write!(out, " {v:>9.4}");
                }
                None => out.push_str("         -"),
            }
        }
        out.push('\n');
    }
    out
}

pub fn open_loop_csv(t: &OpenLoopTable) -> String {
    let mut out = String::from("model,waypoint,mean_l2_px\n");
    for (m, e) in t.models.iter().zip(&t.errors) {
        for (k, v) in e.iter().enumerate() {
            let _ = writeln!(out, "{m},{k},{v:.6}");
        }
    }
    out
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.3}")
    } else {
        String::new()
    }
}

/// Per-run simulate report: scenario id, variation, label, time to event,
/// min gap, max lateral offset. Invalid runs carry the error text.
pub fn simulate_report_csv(entries: &[SuiteEntry]) -> String {
    let mut out = String::from("scenario,variation,label,time_to_event,min_gap,max_lateral_offset,error\n");
    for e in entries {
        match &e.outcome {
            Ok(o) => {
                let m = &o.metrics;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},",
                    e.kind.name(),
                    e.variation,
                    o.label,
                    m.time_to_event.map(num).unwrap_or_default(),
                    num(m.min_gap),
                    num(m.max_lateral_offset)
                );
            }
            Err(msg) => {
                let _ = writeln!(out, "{},{},invalid,,,,\"{}\"", e.kind.name(), e.variation, msg.replace('"', "'"));
            }
        }
    }
    out
}
