use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use super::{HarnessError, RunRecord};

fn io(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(e.to_string())
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().ok_or_else(|| io("output path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub const TRACE_COLUMNS: [&str; 7] = [
    "run_id",
    "seed",
    "test_task",
    "episode",
    "phase",
    "instant_regret",
    "cumulative_regret",
];

/// One row per episode (every `stride`-th plus the last) per record.
pub fn write_trace_csv<W: Write>(
    out: W,
    run_id: &str,
    records: &[RunRecord],
    stride: usize,
    header: bool,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    if header {
        w.write_record(TRACE_COLUMNS).map_err(io)?;
    }
    for r in records {
        let h = r.trace.len();
        let (seed, test) = (r.seed.to_string(), r.test_task.to_string());
        for row in r.trace.rows() {
            if row.episode % stride != 0 && row.episode != h {
                continue;
            }
            w.write_record([
                run_id,
                &seed,
                &test,
                &row.episode.to_string(),
                row.phase.as_str(),
                &row.instant.to_string(),
                &row.cumulative.to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Per-run-id aggregates read back from trace CSVs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSeries {
    pub run_id: String,
    pub seeds: usize,
    pub mean_final: f64,
    pub std_final: f64,
    /// Mean number of non-commit episodes among the written rows.
    pub mean_identify_rows: f64,
    /// `(episode, mean cumulative regret)` over the seeds present at that episode.
    pub curve: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub series: Vec<ReportSeries>,
}

#[derive(Default)]
struct Acc {
    // (seed, test_task) -> (final episode, final cumulative, non-commit rows)
    runs: BTreeMap<(u64, usize), (usize, f64, usize)>,
    curve: BTreeMap<usize, (f64, usize)>,
}

impl Report {
    /// Folds one trace CSV into the report.
    pub fn add_csv<R: Read>(&mut self, input: R) -> Result<(), HarnessError> {
        let mut accs: BTreeMap<String, Acc> = BTreeMap::new();
        let mut rd = csv::Reader::from_reader(input);
        let headers = rd.headers().map_err(io)?.clone();
        if headers.iter().collect::<Vec<_>>() != TRACE_COLUMNS {
            return Err(HarnessError::Io(format!("unexpected CSV header: {headers:?}")));
        }
        for rec in rd.records() {
            let rec = rec.map_err(io)?;
            let field = |k: usize| rec.get(k).unwrap_or_default();
            let parse_err = |k: usize| HarnessError::Io(format!("bad value {:?} in column {}", field(k), TRACE_COLUMNS[k]));
            let seed: u64 = field(1).parse().map_err(|_| parse_err(1))?;
            let test: usize = field(2).parse().map_err(|_| parse_err(2))?;
            let episode: usize = field(3).parse().map_err(|_| parse_err(3))?;
            let cumulative: f64 = field(6).parse().map_err(|_| parse_err(6))?;
            let acc = accs.entry(field(0).to_string()).or_default();
            let run = acc.runs.entry((seed, test)).or_insert((0, 0.0, 0));
            if episode >= run.0 {
                run.0 = episode;
                run.1 = cumulative;
            }
            if field(4) != "commit" {
                run.2 += 1;
            }
            let c = acc.curve.entry(episode).or_insert((0.0, 0));
            c.0 += cumulative;
            c.1 += 1;
        }
        for (run_id, acc) in accs {
            let finals: Vec<f64> = acc.runs.values().map(|r| r.1).collect();
            let n = finals.len() as f64;
            let mean = finals.iter().sum::<f64>() / n;
            let var = if finals.len() > 1 {
                finals.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            self.series.push(ReportSeries {
                run_id,
                seeds: finals.len(),
                mean_final: mean,
                std_final: var.sqrt(),
                mean_identify_rows: acc.runs.values().map(|r| r.2 as f64).sum::<f64>() / n,
                curve: acc.curve.into_iter().map(|(e, (s, k))| (e, s / k as f64)).collect(),
            });
        }
        Ok(())
    }
}

/// Markdown summary table.
pub fn render_report(report: &Report) -> String {
    let mut out = String::from("| run_id | seeds | mean regret | std regret | mean identify rows |\n");
    out.push_str("|---|---:|---:|---:|---:|\n");
    for s in &report.series {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.4} | {:.1} |",
            s.run_id, s.seeds, s.mean_final, s.std_final, s.mean_identify_rows
        );
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean cumulative regret curves, one polyline per run id.
pub fn render_svg(report: &Report) -> String {
    let (w, h) = (800.0, 480.0);
    let (left, right, top, bottom) = (70.0, 180.0, 20.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let x_max = report
        .series
        .iter()
        .flat_map(|s| s.curve.last().map(|p| p.0))
        .max()
        .unwrap_or(1)
        .max(1) as f64;
    let y_max = report
        .series
        .iter()
        .flat_map(|s| s.curve.iter().map(|p| p.1))
        .fold(0.0, f64::max)
        .max(1e-12);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        top + ph,
        left + pw
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (x, y) = (left + f * pw, top + ph - f * ph);
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, top + ph + 18.0, f * x_max);
        let _ = writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#, left - 6.0, y + 4.0, f * y_max);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">episode</text>"#, left + pw / 2.0, h - 10.0);
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">cumulative regret</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, s) in report.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let step = (s.curve.len() / 500).max(1);
        let pts: Vec<String> = s
            .curve
            .iter()
            .enumerate()
            .filter(|(i, _)| i % step == 0 || *i + 1 == s.curve.len())
            .map(|(_, (e, v))| format!("{:.2},{:.2}", left + *e as f64 / x_max * pw, top + ph - v / y_max * ph))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = top + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            left + pw + 10.0,
            left + pw + 30.0,
            left + pw + 36.0,
            ly + 4.0,
            escape(&s.run_id)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{Phase, RegretTrace};

    fn record(seed: u64, id: usize) -> RunRecord {
        let mut trace = RegretTrace::new();
        trace.push(id, 0.5, Phase::Identify);
        trace.push(10 - id, 0.0, Phase::Commit);
        RunRecord {
            seed,
            test_task: 0,
            identified_task: 0,
            success: true,
            truncated: false,
            identify_episodes: id,
            rounds: 1,
            identify_policies: 1,
            explore_episodes: 0,
            regret: trace.total(),
            trace,
        }
    }

    #[test]
    fn csv_round_trips_through_report() {
        let recs = [record(1, 2), record(2, 4)];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, "x", &recs, 1, true).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("run_id,seed,test_task,episode,phase,instant_regret,cumulative_regret\n"));
        assert_eq!(text.lines().count(), 21);
        assert!(text.contains("x,1,0,2,identify,0.5,1\n"));
        let mut rep = Report::default();
        rep.add_csv(buf.as_slice()).unwrap();
        let s = &rep.series[0];
        assert_eq!((s.seeds, s.mean_final, s.mean_identify_rows), (2, 1.5, 3.0));
        assert_eq!(s.curve.len(), 10);
        assert!(render_report(&rep).contains("| x | 2 | 1.5000 |"));
        let svg = render_svg(&rep);
        assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
    }

    #[test]
    fn stride_keeps_last_row() {
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, "x", &[record(1, 3)], 4, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let eps: Vec<&str> = text.lines().map(|l| l.split(',').nth(3).unwrap()).collect();
        assert_eq!(eps, vec!["4", "8", "10"]);
    }

    #[test]
    fn atomic_write_creates_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/out.csv");
        write_atomic(&p, b"hello").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"hello");
        assert!(Report::default().add_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
