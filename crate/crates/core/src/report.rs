//! Ranked redundancy reports in text and JSON form.

use std::fmt::Write as _;

use serde::Serialize;

use crate::profile::{CanonicalContext, Frame, PairKey, Profile};
use crate::spatial::ObjectKey;
use crate::temporal::{FractionPair, ProgramTotals, RedundancyClass, RedundancyCounters};

pub const REPORT_FORMAT: &str = "loadscope-report";
pub const REPORT_VERSION: u32 = 1;
pub const DEFAULT_TOP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "text" => Ok(ReportFormat::Text),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown report format {other:?} (expected text or json)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub rank: usize,
    pub kind: RowKind,
    pub class: RedundancyClass,
    pub object: Option<ObjectKey>,
    /// The new load's context followed by the old load's context.
    pub chain: Vec<Frame>,
    /// Index in `chain` where the old context begins; equals the chain
    /// length when the old context is unknown.
    pub old_context_start: usize,
    pub scope: Option<Frame>,
    pub redundant_bytes: u64,
    pub total_bytes: u64,
    pub redundant_instances: u64,
    pub total_instances: u64,
    pub pair_fraction: f64,
    pub instance_percentage: f64,
    pub object_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgramSummary {
    pub temporal: FractionPair,
    pub spatial: FractionPair,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TotalsSummary {
    pub temporal: ProgramTotals,
    pub spatial: ProgramTotals,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub format: &'static str,
    pub version: u32,
    pub threads: u32,
    pub r_prog: ProgramSummary,
    pub totals: TotalsSummary,
    pub temporal: Vec<ReportRow>,
    pub spatial: Vec<ReportRow>,
}

struct Candidate {
    row: ReportRow,
    sort_key: String,
}

fn candidates(
    kind: RowKind,
    object: Option<(&ObjectKey, f64, f64)>,
    key: &PairKey,
    c: &RedundancyCounters,
    totals: &ProgramTotals,
    out: &mut Vec<Candidate>,
) {
    let classes = [
        (
            RedundancyClass::Precise,
            c.redundant_bytes_precise,
            c.total_bytes_precise,
            totals.total_nonfp_bytes,
        ),
        (
            RedundancyClass::Approx,
            c.redundant_bytes_approx,
            c.total_bytes_approx,
            totals.total_fp_bytes,
        ),
    ];
    for (class, redundant, total, denom) in classes {
        if redundant == 0 {
            continue;
        }
        let mut chain = key.c_new.frames().to_vec();
        let old_context_start = chain.len();
        if let Some(old) = &key.c_old {
            chain.extend(old.frames().iter().cloned());
        }
        let object_fraction = object.map(|(_, p, a)| match class {
            RedundancyClass::Precise => p,
            RedundancyClass::Approx => a,
        });
        let sort_key =
            serde_json::to_string(&(kind, class, object.map(|o| o.0), key)).expect("key serializes");
        out.push(Candidate {
            row: ReportRow {
                rank: 0,
                kind,
                class,
                object: object.map(|o| o.0.clone()),
                chain,
                old_context_start,
                scope: key.scope.as_ref().and_then(CanonicalContext::leaf).cloned(),
                redundant_bytes: redundant,
                total_bytes: total,
                redundant_instances: c.redundant_instances,
                total_instances: c.total_instances,
                pair_fraction: if denom == 0 {
                    0.0
                } else {
                    redundant as f64 / denom as f64
                },
                instance_percentage: c.instance_percentage(),
                object_fraction,
            },
            sort_key,
        });
    }
}

fn rank(mut c: Vec<Candidate>, top: usize) -> Vec<ReportRow> {
    c.sort_by(|a, b| {
        b.row
            .redundant_bytes
            .cmp(&a.row.redundant_bytes)
            .then_with(|| a.sort_key.cmp(&b.sort_key))
    });
    c.into_iter()
        .take(top)
        .enumerate()
        .map(|(i, mut c)| {
            c.row.rank = i + 1;
            c.row
        })
        .collect()
}

/// Top `top` rows per kind, ranked by redundant bytes.
pub fn build_report(profile: &Profile, top: usize) -> Report {
    let mut temporal = Vec::new();
    for (k, c) in &profile.pairs {
        candidates(
            RowKind::Temporal,
            None,
            k,
            c,
            &profile.temporal_totals,
            &mut temporal,
        );
    }
    let mut spatial = Vec::new();
    for (obj, rec) in &profile.objects {
        let f = profile.object_fraction(obj).expect("key present");
        for (k, c) in &rec.pairs {
            candidates(
                RowKind::Spatial,
                Some((obj, f.precise.value, f.approx.value)),
                k,
                c,
                &profile.spatial_totals,
                &mut spatial,
            );
        }
    }
    Report {
        format: REPORT_FORMAT,
        version: REPORT_VERSION,
        threads: profile.threads,
        r_prog: ProgramSummary {
            temporal: profile.temporal_fraction(),
            spatial: profile.spatial_fraction(),
        },
        totals: TotalsSummary {
            temporal: profile.temporal_totals,
            spatial: profile.spatial_totals,
        },
        temporal: rank(temporal, top),
        spatial: rank(spatial, top),
    }
}

/// Formats `x` with at least six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.6}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (5 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}

fn fraction_text(f: &FractionPair) -> String {
    let one = |v: &crate::temporal::Fraction, what: &str| {
        if v.defined {
            sig6(v.value)
        } else {
            format!("{} (no {what} loads)", sig6(v.value))
        }
    };
    format!(
        "precise {}  approx {}",
        one(&f.precise, "non-fp"),
        one(&f.approx, "fp")
    )
}

fn frame_line(f: &Frame) -> String {
    let kind = match f.kind {
        crate::profile::FrameKind::Function => "Function",
        crate::profile::FrameKind::Loop => "Loop",
        crate::profile::FrameKind::LoadSite => "LoadSite",
    };
    format!("{kind:<8} {} {}:{}", f.name, f.file, f.line)
}

fn write_rows(out: &mut String, title: &str, rows: &[ReportRow]) {
    let _ = writeln!(out, "\n== {title} ({} rows) ==", rows.len());
    for r in rows {
        let _ = writeln!(
            out,
            "#{} [{}] redundant bytes {} of {}  pair fraction {}  redundant instances {}% ({}/{})",
            r.rank,
            r.class.as_str(),
            r.redundant_bytes,
            r.total_bytes,
            sig6(r.pair_fraction),
            sig6(r.instance_percentage),
            r.redundant_instances,
            r.total_instances
        );
        if let Some(o) = &r.object {
            let _ = writeln!(
                out,
                "   object {}  object fraction {}",
                o.label(),
                sig6(r.object_fraction.unwrap_or(0.0))
            );
        }
        match &r.scope {
            Some(s) => {
                let _ = writeln!(out, "   scope {}:{}", s.file, s.line);
            }
            None => {
                let _ = writeln!(out, "   scope none");
            }
        }
        for (i, f) in r.chain.iter().enumerate() {
            if i == r.old_context_start {
                let _ = writeln!(out, "     -- previous load --");
            }
            let _ = writeln!(out, "     {}", frame_line(f));
        }
        if r.old_context_start == r.chain.len() {
            let _ = writeln!(out, "     -- previous load: none --");
        }
    }
}

pub fn render_text(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "loadscope report, {} thread(s)", report.threads);
    let _ = writeln!(out, "temporal R_prog: {}", fraction_text(&report.r_prog.temporal));
    let _ = writeln!(out, "spatial R_prog:  {}", fraction_text(&report.r_prog.spatial));
    if report.temporal.is_empty() && report.spatial.is_empty() {
        return out;
    }
    write_rows(&mut out, "temporal", &report.temporal);
    write_rows(&mut out, "spatial", &report.spatial);
    out
}

pub fn render_json(report: &Report) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn render(profile: &Profile, top: usize, format: ReportFormat) -> String {
    let report = build_report(profile, top);
    match format {
        ReportFormat::Text => render_text(&report),
        ReportFormat::Json => render_json(&report),
    }
}
