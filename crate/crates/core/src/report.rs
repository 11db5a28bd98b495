//! Text and image exports: archive CSV, metrics CSV, heatmaps, summaries.

use std::fmt::Write as _;

use thiserror::Error;

use crate::domain::Domain;
use crate::pipeline::MetricsRow;
use crate::qd::{ArchiveSpec, GridArchive};

/// Pixels per archive cell side in heatmaps.
pub const HEATMAP_BLOCK: usize = 4;
pub const EMPTY_COLOR: [u8; 3] = [230, 230, 230];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("cell ({0}, {1}) lies outside the archive")]
    CellOutOfRange(usize, usize),
    #[error("runs mix domains {0} and {1}")]
    MixedDomains(Domain, Domain),
    #[error("no runs to summarize")]
    NoRuns,
}

fn num(v: f64) -> String {
    format!("{v:.8e}")
}

/// One archive CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveRow {
    pub cell: [usize; 2],
    pub measures: [f64; 2],
    pub objective: f64,
    pub theta: Vec<f64>,
}

pub fn archive_rows(archive: &GridArchive) -> Vec<ArchiveRow> {
    archive
        .iter()
        .map(|(idx, e)| {
            let c = archive.spec().unflatten(idx);
            ArchiveRow {
                cell: [c[0], c[1]],
                measures: [e.measures[0], e.measures[1]],
                objective: e.objective,
                theta: e.theta.clone(),
            }
        })
        .collect()
}

/// Archive CSV: one row per occupied cell, in cell order.
pub fn archive_csv(archive: &GridArchive, params: usize) -> String {
    rows_csv(&archive_rows(archive), params)
}

pub fn rows_csv(rows: &[ArchiveRow], params: usize) -> String {
    let mut out = String::from("cell_i,cell_j,measure_0,measure_1,objective");
    for k in 0..params {
        write!(out, ",theta_{k}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(
            out,
            "{},{},{},{},{}",
            r.cell[0],
            r.cell[1],
            num(r.measures[0]),
            num(r.measures[1]),
            num(r.objective)
        )
        .unwrap();
        for t in &r.theta {
            write!(out, ",{}", num(*t)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Parses an archive CSV; returns the parameter count and the rows.
pub fn parse_archive_csv(text: &str) -> Result<(usize, Vec<ArchiveRow>), ReportError> {
    let bad = |line: usize, reason: String| ReportError::Malformed { line, reason };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let fixed = ["cell_i", "cell_j", "measure_0", "measure_1", "objective"];
    if cols.len() < fixed.len() || cols[..fixed.len()] != fixed {
        return Err(bad(1, format!("unexpected header `{header}`")));
    }
    let params = cols.len() - fixed.len();
    for (k, c) in cols[fixed.len()..].iter().enumerate() {
        if *c != format!("theta_{k}") {
            return Err(bad(1, format!("unexpected column `{c}`")));
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(bad(
                i + 1,
                format!("{} fields, expected {}", fields.len(), cols.len()),
            ));
        }
        let cell = |k: usize| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| bad(i + 1, format!("{}: {e}", cols[k])))
        };
        let vals = fields[2..]
            .iter()
            .zip(&cols[2..])
            .map(|(f, c)| match f.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                Ok(v) => Err(bad(i + 1, format!("{c}: non-finite {v}"))),
                Err(e) => Err(bad(i + 1, format!("{c}: {e}"))),
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(ArchiveRow {
            cell: [cell(0)?, cell(1)?],
            measures: [vals[0], vals[1]],
            objective: vals[2],
            theta: vals[3..].to_vec(),
        });
    }
    Ok((params, rows))
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("evals,elapsed_s,qd_score,cells,best_objective\n");
    for r in rows {
        writeln!(
            out,
            "{},{:.3},{},{},{}",
            r.evals,
            r.elapsed_s,
            num(r.qd_score),
            r.cells,
            num(r.best_objective)
        )
        .unwrap();
    }
    out
}

/// Viridis-like ramp, `t` in [0, 1].
pub fn colormap(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let x = t * (STOPS.len() - 1) as f64;
    let k = (x.floor() as usize).min(STOPS.len() - 2);
    let w = x - k as f64;
    let mut c = [0u8; 3];
    for (ch, v) in c.iter_mut().enumerate() {
        *v = (STOPS[k][ch] * (1.0 - w) + STOPS[k + 1][ch] * w).round() as u8;
    }
    c
}

/// Binary PPM (P6) heatmap. Measure 0 runs left to right, measure 1 bottom to
/// top; each cell is a `HEATMAP_BLOCK`-pixel square colored by f over [0, cap].
pub fn heatmap_ppm(
    spec: &ArchiveSpec,
    rows: &[ArchiveRow],
    cap: f64,
) -> Result<Vec<u8>, ReportError> {
    let (nx, ny) = (spec.axes[0].bins, spec.axes[1].bins);
    let (w, h) = (nx * HEATMAP_BLOCK, ny * HEATMAP_BLOCK);
    let mut colors = vec![EMPTY_COLOR; nx * ny];
    for r in rows {
        let [i, j] = r.cell;
        if i >= nx || j >= ny {
            return Err(ReportError::CellOutOfRange(i, j));
        }
        colors[j * nx + i] = colormap(r.objective / cap);
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for y in 0..h {
        let j = ny - 1 - y / HEATMAP_BLOCK;
        for x in 0..w {
            out.extend_from_slice(&colors[j * nx + x / HEATMAP_BLOCK]);
        }
    }
    Ok(out)
}

/// Axis metadata describing a heatmap image.
pub fn heatmap_sidecar(domain: Domain, spec: &ArchiveSpec, rows: usize, cap: f64) -> String {
    let names = domain.measure_names();
    let mut out = format!("domain {domain}\n");
    for (axis, (dir, (name, a))) in ["x", "y"]
        .iter()
        .zip(names.iter().zip(&spec.axes))
        .enumerate()
    {
        writeln!(
            out,
            "axis {axis} {dir} {name} lo {} hi {} bins {}",
            a.lo, a.hi, a.bins
        )
        .unwrap();
    }
    writeln!(out, "y axis increases upward").unwrap();
    writeln!(out, "block_pixels {HEATMAP_BLOCK}").unwrap();
    writeln!(out, "color objective 0 to {cap} viridis").unwrap();
    let [r, g, b] = EMPTY_COLOR;
    writeln!(out, "empty_color {r} {g} {b}").unwrap();
    writeln!(out, "occupied {rows} of {}", spec.cells()).unwrap();
    out
}

/// Sample mean and standard error of the mean (zero for one sample).
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Final numbers of one finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub domain: Domain,
    pub algorithm: String,
    pub qd_score: f64,
    pub cells: usize,
}

/// Table of mean ± standard error of QD-score and occupied cells per
/// algorithm, in first-seen order.
pub fn summary_table(runs: &[RunOutcome]) -> Result<String, ReportError> {
    let first = runs.first().ok_or(ReportError::NoRuns)?;
    if let Some(r) = runs.iter().find(|r| r.domain != first.domain) {
        return Err(ReportError::MixedDomains(first.domain, r.domain));
    }
    let mut algos: Vec<&str> = Vec::new();
    for r in runs {
        if !algos.contains(&r.algorithm.as_str()) {
            algos.push(&r.algorithm);
        }
    }
    let mut out = format!(
        "{:<12} {:<22} {:>5} {:>24} {:>20}\n",
        "algorithm", "domain", "runs", "qd_score", "cells"
    );
    for a in algos {
        let sel: Vec<&RunOutcome> = runs.iter().filter(|r| r.algorithm == a).collect();
        let qd: Vec<f64> = sel.iter().map(|r| r.qd_score).collect();
        let cells: Vec<f64> = sel.iter().map(|r| r.cells as f64).collect();
        let (qm, qs) = mean_stderr(&qd);
        let (cm, cs) = mean_stderr(&cells);
        writeln!(
            out,
            "{:<12} {:<22} {:>5} {:>24} {:>20}",
            a,
            first.domain.name(),
            sel.len(),
            format!("{qm:.2} ± {qs:.2}"),
            format!("{cm:.1} ± {cs:.1}")
        )
        .unwrap();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qd::Elite;
    use proptest::prelude::*;

    fn teleop_archive() -> GridArchive {
        let mut a = GridArchive::new(ArchiveSpec::teleop());
        a.add(Elite::new(vec![0.1, 0.2, 1.0 / 3.0], 2.5, vec![0.01, 0.05]))
            .unwrap();
        a.add(Elite::new(vec![-1e-7, 4.0, 0.0], 10.0, vec![0.3, 0.1]))
            .unwrap();
        a
    }

    #[test]
    fn csv_has_documented_header_and_precision() {
        let csv = archive_csv(&teleop_archive(), 3);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "cell_i,cell_j,measure_0,measure_1,objective,theta_0,theta_1,theta_2"
        );
        assert_eq!(
            lines.next().unwrap(),
            "0,44,1.00000000e-2,5.00000000e-2,2.50000000e0,1.00000000e-1,2.00000000e-1,3.33333333e-1"
        );
        assert!(lines.next().unwrap().starts_with("23,89,"));
    }

    #[test]
    fn malformed_csv_is_rejected() {
        assert!(parse_archive_csv("").is_err());
        assert!(parse_archive_csv("cell_i,cell_j,objective\n").is_err());
        let hdr = "cell_i,cell_j,measure_0,measure_1,objective,theta_0\n";
        assert!(parse_archive_csv(&format!("{hdr}0,1,0.1,0.2,3\n")).is_err());
        assert!(parse_archive_csv(&format!("{hdr}0,x,0.1,0.2,3,4\n")).is_err());
        assert!(parse_archive_csv(&format!("{hdr}0,1,0.1,NaN,3,4\n")).is_err());
        let (p, rows) = parse_archive_csv(&format!("{hdr}0,1,0.1,0.2,3,4\n")).unwrap();
        assert_eq!((p, rows.len()), (1, 1));
    }

    #[test]
    fn heatmap_has_one_block_per_cell() {
        let spec = ArchiveSpec::teleop();
        let empty = heatmap_ppm(&spec, &[], 10.0).unwrap();
        let header = b"P6\n100 400\n255\n";
        assert_eq!(&empty[..header.len()], header);
        let pixels = &empty[header.len()..];
        assert_eq!(pixels.len(), 100 * 400 * 3);
        assert!(pixels.chunks(3).all(|p| p == EMPTY_COLOR));

        let rows = [ArchiveRow {
            cell: [24, 0],
            measures: [0.31, 0.0],
            objective: 10.0,
            theta: vec![],
        }];
        let img = heatmap_ppm(&spec, &rows, 10.0).unwrap();
        let px = &img[header.len()..];
        let colored: Vec<usize> = px
            .chunks(3)
            .enumerate()
            .filter(|(_, p)| *p != EMPTY_COLOR)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(colored.len(), HEATMAP_BLOCK * HEATMAP_BLOCK);
        // Bottom-right block, in the brightest color.
        assert!(colored.iter().all(|i| i % 100 >= 96 && i / 100 >= 396));
        assert_eq!(&px[colored[0] * 3..colored[0] * 3 + 3], &colormap(1.0));
        let out = [ArchiveRow {
            cell: [25, 0],
            ..rows[0].clone()
        }];
        assert!(heatmap_ppm(&spec, &out, 10.0).is_err());
    }

    #[test]
    fn colormap_endpoints_differ_from_background() {
        for t in [0.0, 0.25, 0.5, 1.0] {
            assert_ne!(colormap(t), EMPTY_COLOR);
        }
        assert_eq!(colormap(-1.0), colormap(0.0));
        assert_eq!(colormap(2.0), colormap(1.0));
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean_stderr(&[4.0]), (4.0, 0.0));
        let (m, s) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let run = |a: &str, q| RunOutcome {
            domain: Domain::Teleop,
            algorithm: a.into(),
            qd_score: q,
            cells: 3,
        };
        let t = summary_table(&[run("dsas", 5.0), run("random", 1.0), run("dsas", 7.0)]).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("dsas") && lines[1].contains("6.00 ± 1.00"));
        assert!(lines[2].contains("1.00 ± 0.00"));
        let mut other = run("random", 1.0);
        other.domain = Domain::CollabI;
        assert!(matches!(
            summary_table(&[run("dsas", 1.0), other]),
            Err(ReportError::MixedDomains(..))
        ));
    }

    proptest! {
        #[test]
        fn csv_export_parse_export_is_identity(
            rows in proptest::collection::vec(
                (0usize..25, 0usize..100, -1e3f64..1e3, -1e-3f64..1e3,
                 proptest::collection::vec(-1e6f64..1e6, 4)),
                0..20,
            )
        ) {
            let rows: Vec<ArchiveRow> = rows
                .into_iter()
                .map(|(i, j, m, f, theta)| ArchiveRow {
                    cell: [i, j],
                    measures: [m, -m],
                    objective: f,
                    theta,
                })
                .collect();
            let first = rows_csv(&rows, 4);
            let (p, parsed) = parse_archive_csv(&first).unwrap();
            prop_assert_eq!(p, 4);
            prop_assert_eq!(rows_csv(&parsed, p), first);
        }
    }
}
