//! Cross-method comparison of finished runs: peak tables matched by energy,
//! discrepancy summaries and shifted/re-broadened overlay curves.

use std::fmt::Write as _;
use std::path::PathBuf;

use corehole::greens::{postprocess, read_tsv, Peak, SpectralFunction};
use serde::{Deserialize, Serialize};

use crate::run::{load_run, PeakRow};
use crate::{to_json, write_file, CliError, SCHEMA_VERSION};

pub const DEFAULT_TOLERANCE_EV: f64 = 1.0;

#[derive(Clone, Debug)]
pub struct CompareOptions {
    /// Rigid shift applied to every computed spectrum (eV).
    pub shift: f64,
    /// Common re-broadening θ' (eV); each run keeps its own θ when absent.
    pub broaden: Option<f64>,
    pub experiment: Option<PathBuf>,
    /// Peaks further apart than this are never matched (eV).
    pub tolerance: f64,
    /// Compare runs on different integrals.
    pub force: bool,
    /// Where to write the report; nothing is written when absent.
    pub out: Option<PathBuf>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            shift: 0.0,
            broaden: None,
            experiment: None,
            tolerance: DEFAULT_TOLERANCE_EV,
            force: false,
            out: None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MatchedRow {
    /// One entry per run, in input order.
    pub entries: Vec<Option<PeakRow>>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Discrepancy {
    pub method: String,
    pub against: String,
    pub matched: usize,
    pub max_abs_energy_ev: f64,
    pub mean_abs_energy_ev: f64,
    pub max_abs_weight: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct OverlayPeaks {
    pub method: String,
    pub peaks: Vec<Peak>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub methods: Vec<String>,
    pub integrals_sha256: Vec<String>,
    pub shift_ev: f64,
    pub broaden_ev: Option<f64>,
    pub tolerance_ev: f64,
    /// Rows of the peak tables (shifted), matched against the first run.
    pub rows: Vec<MatchedRow>,
    /// Pairwise table-peak discrepancies, every run against every other.
    pub discrepancies: Vec<Discrepancy>,
    /// Local maxima of the post-processed curves.
    pub overlay_peaks: Vec<OverlayPeaks>,
    /// Pairwise discrepancies of the overlay maxima.
    pub overlay_discrepancies: Vec<Discrepancy>,
}

/// Greedy matching by energy proximity: closest pairs first, each peak used once.
pub fn match_peaks(a: &[f64], b: &[f64], tolerance: f64) -> Vec<(usize, usize)> {
    let mut cand: Vec<(f64, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let d = (x - y).abs();
            if d <= tolerance {
                cand.push((d, i, j));
            }
        }
    }
    cand.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (_, i, j) in cand {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort();
    out
}

fn discrepancy(
    method: &str,
    against: &str,
    a: &[(f64, f64)],
    b: &[(f64, f64)],
    tol: f64,
) -> Discrepancy {
    let ea: Vec<f64> = a.iter().map(|x| x.0).collect();
    let eb: Vec<f64> = b.iter().map(|x| x.0).collect();
    let pairs = match_peaks(&ea, &eb, tol);
    let de: Vec<f64> = pairs.iter().map(|&(i, j)| (ea[i] - eb[j]).abs()).collect();
    Discrepancy {
        method: method.into(),
        against: against.into(),
        matched: pairs.len(),
        max_abs_energy_ev: de.iter().copied().fold(0.0, f64::max),
        mean_abs_energy_ev: if de.is_empty() {
            0.0
        } else {
            de.iter().sum::<f64>() / de.len() as f64
        },
        max_abs_weight: pairs
            .iter()
            .map(|&(i, j)| (a[i].1 - b[j].1).abs())
            .fold(0.0, f64::max),
    }
}

fn interpolate(x: &[f64], y: &[f64], at: f64) -> f64 {
    if x.is_empty() || at < x[0] || at > *x.last().unwrap() {
        return 0.0;
    }
    let k = x.partition_point(|&v| v <= at).clamp(1, x.len() - 1);
    let (x0, x1) = (x[k - 1], x[k]);
    let t = if x1 > x0 { (at - x0) / (x1 - x0) } else { 0.0 };
    y[k - 1] * (1.0 - t) + y[k] * t
}

pub fn compare(dirs: &[PathBuf], opts: &CompareOptions) -> Result<ComparisonReport, CliError> {
    if dirs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two run directories".into(),
        ));
    }
    let runs = dirs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>, _>>()?;
    let hashes: Vec<String> = runs.iter().map(|r| r.0.integrals_sha256.clone()).collect();
    if !opts.force && hashes.iter().any(|h| h != &hashes[0]) {
        return Err(CliError::Config(
            "runs were made on different integrals (hash mismatch); pass --force to compare anyway"
                .into(),
        ));
    }
    let mut methods: Vec<String> = runs.iter().map(|r| r.1.method.clone()).collect();
    for i in 0..methods.len() {
        if methods.iter().filter(|m| **m == methods[i]).count() > 1 {
            let tag = dirs[i]
                .file_name()
                .map_or_else(|| i.to_string(), |n| n.to_string_lossy().into_owned());
            methods[i] = format!("{}:{tag}", methods[i]);
        }
    }

    let tables: Vec<Vec<PeakRow>> = runs
        .iter()
        .map(|r| {
            r.1.peaks
                .iter()
                .map(|p| PeakRow {
                    energy_ev: p.energy_ev + opts.shift,
                    ..*p
                })
                .collect()
        })
        .collect();
    let pairs_of =
        |t: &[PeakRow]| -> Vec<(f64, f64)> { t.iter().map(|p| (p.energy_ev, p.weight)).collect() };

    let mut rows: Vec<MatchedRow> = tables[0]
        .iter()
        .map(|p| MatchedRow {
            entries: std::iter::once(Some(*p))
                .chain(std::iter::repeat(None).take(runs.len() - 1))
                .collect(),
        })
        .collect();
    for (k, t) in tables.iter().enumerate().skip(1) {
        let base: Vec<f64> = tables[0].iter().map(|p| p.energy_ev).collect();
        let other: Vec<f64> = t.iter().map(|p| p.energy_ev).collect();
        let matched = match_peaks(&base, &other, opts.tolerance);
        let mut used = vec![false; t.len()];
        for (i, j) in matched {
            rows[i].entries[k] = Some(t[j]);
            used[j] = true;
        }
        for (p, _) in t.iter().zip(&used).filter(|(_, u)| !**u) {
            let mut entries = vec![None; runs.len()];
            entries[k] = Some(*p);
            rows.push(MatchedRow { entries });
        }
    }
    let row_energy = |r: &MatchedRow| {
        r.entries
            .iter()
            .flatten()
            .next()
            .map_or(0.0, |p| p.energy_ev)
    };
    rows.sort_by(|a, b| row_energy(a).total_cmp(&row_energy(b)));

    let mut discrepancies = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            discrepancies.push(discrepancy(
                &methods[b],
                &methods[a],
                &pairs_of(&tables[b]),
                &pairs_of(&tables[a]),
                opts.tolerance,
            ));
        }
    }

    let overlays: Vec<SpectralFunction> = runs
        .iter()
        .map(|r| postprocess(&r.2, opts.shift, opts.broaden.unwrap_or(r.2.broadening)))
        .collect::<Result<_, _>>()?;
    let overlay_peaks: Vec<OverlayPeaks> = overlays
        .iter()
        .zip(&methods)
        .map(|(sf, m)| {
            let top = sf.values.iter().copied().fold(0.0, f64::max);
            OverlayPeaks {
                method: m.clone(),
                peaks: sf.peaks(1e-3 * top),
            }
        })
        .collect();
    let mut overlay_discrepancies = Vec::new();
    for a in 0..runs.len() {
        for b in a + 1..runs.len() {
            let pa: Vec<(f64, f64)> = overlay_peaks[a]
                .peaks
                .iter()
                .map(|p| (p.position, p.height))
                .collect();
            let pb: Vec<(f64, f64)> = overlay_peaks[b]
                .peaks
                .iter()
                .map(|p| (p.position, p.height))
                .collect();
            overlay_discrepancies.push(discrepancy(
                &methods[b],
                &methods[a],
                &pb,
                &pa,
                opts.tolerance,
            ));
        }
    }

    let report = ComparisonReport {
        schema_version: SCHEMA_VERSION,
        methods: methods.clone(),
        integrals_sha256: hashes,
        shift_ev: opts.shift,
        broaden_ev: opts.broaden,
        tolerance_ev: opts.tolerance,
        rows,
        discrepancies,
        overlay_peaks,
        overlay_discrepancies,
    };

    if let Some(out) = &opts.out {
        std::fs::create_dir_all(out)
            .map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        write_file(&out.join("comparison.json"), to_json(&report))?;
        write_file(&out.join("comparison.txt"), render(&report))?;
        let experiment = match &opts.experiment {
            Some(p) => Some(
                read_tsv(&crate::read_file(p)?)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        write_file(
            &out.join("overlay.tsv"),
            overlay_tsv(&overlays, &methods, experiment.as_ref()),
        )?;
    }
    Ok(report)
}

/// All curves on the first run's (shifted) grid, plus the experiment if given.
fn overlay_tsv(
    curves: &[SpectralFunction],
    methods: &[String],
    experiment: Option<&(Vec<f64>, Vec<f64>)>,
) -> String {
    let mut s = String::new();
    let mut header = String::from("# omega_eV");
    for m in methods {
        write!(header, "\t{m}").unwrap();
    }
    if experiment.is_some() {
        header.push_str("\texperiment");
    }
    writeln!(s, "{header}").unwrap();
    for &w in &curves[0].grid {
        write!(s, "{w:.6}").unwrap();
        for c in curves {
            write!(s, "\t{:.10e}", interpolate(&c.grid, &c.values, w)).unwrap();
        }
        if let Some((x, y)) = experiment {
            write!(s, "\t{:.10e}", interpolate(x, y, w)).unwrap();
        }
        s.push('\n');
    }
    s
}

/// Plain-text report: side-by-side peak table and discrepancy summary.
pub fn render(report: &ComparisonReport) -> String {
    let mut s = String::new();
    write!(s, "{:>4}", "#").unwrap();
    for m in &report.methods {
        write!(s, "  {:>12} {:>8}", format!("{m} eV"), "weight").unwrap();
    }
    s.push('\n');
    for (k, row) in report.rows.iter().enumerate() {
        write!(s, "{:>4}", k + 1).unwrap();
        for e in &row.entries {
            match e {
                Some(p) => write!(s, "  {:>12.3} {:>8.4}", p.energy_ev, p.weight).unwrap(),
                None => write!(s, "  {:>12} {:>8}", "-", "-").unwrap(),
            }
        }
        s.push('\n');
    }
    s.push('\n');
    for (title, list) in [
        ("peak tables", &report.discrepancies),
        ("overlay maxima", &report.overlay_discrepancies),
    ] {
        writeln!(s, "discrepancies ({title}):").unwrap();
        for d in list {
            writeln!(
                s,
                "  {} vs {}: matched {}, max |dE| {:.3} eV, mean |dE| {:.3} eV, max |dw| {:.4}",
                d.method,
                d.against,
                d.matched,
                d.max_abs_energy_ev,
                d.mean_abs_energy_ev,
                d.max_abs_weight
            )
            .unwrap();
        }
    }
    s
}

pub fn default_out(dirs: &[PathBuf]) -> PathBuf {
    dirs.first()
        .and_then(|d| d.parent())
        .map_or_else(|| PathBuf::from("comparison"), |p| p.join("comparison"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_matching_prefers_closest_pairs() {
        let m = match_peaks(&[0.0, 1.0, 5.0], &[0.9, 0.2, 9.0], 1.0);
        assert_eq!(m, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn discrepancy_of_identical_tables_is_zero() {
        let t = [(-552.86, 0.82), (-580.86, 0.08)];
        let d = discrepancy("a", "b", &t, &t, 1.0);
        assert_eq!(d.matched, 2);
        assert_eq!(d.max_abs_energy_ev, 0.0);
        assert_eq!(d.max_abs_weight, 0.0);
    }

    #[test]
    fn interpolation_is_linear_and_zero_outside() {
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 2.0, 0.0];
        assert_eq!(interpolate(&x, &y, 0.5), 1.0);
        assert_eq!(interpolate(&x, &y, 3.0), 0.0);
    }
}
