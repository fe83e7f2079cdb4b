//! Line charts of coverage, sampling cost and LPB against the budget.
//!
//! Each panel is written as a data CSV and a standalone SVG with one line
//! per mode and a shaded ±1 std band.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, MeanStd, ModeSummary};
use crate::calibrate::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub mode: Mode,
    pub budget_per_prompt: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub coverage: MeanStd,
    pub samplings: MeanStd,
    pub lpb: MeanStd,
}

impl PlotPoint {
    pub fn from_summaries(
        budget_per_prompt: f64,
        gamma: f64,
        alpha: f64,
        modes: &[ModeSummary],
    ) -> Vec<PlotPoint> {
        modes
            .iter()
            .map(|m| PlotPoint {
                mode: m.mode,
                budget_per_prompt,
                gamma,
                alpha,
                coverage: m.avg_coverage,
                samplings: m.avg_budget,
                lpb: m.avg_lpb,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Panel {
    Coverage,
    Samplings,
    Lpb,
}

impl Panel {
    pub const ALL: [Panel; 3] = [Panel::Coverage, Panel::Samplings, Panel::Lpb];

    fn name(self) -> &'static str {
        match self {
            Panel::Coverage => "coverage",
            Panel::Samplings => "samplings",
            Panel::Lpb => "lpb",
        }
    }

    fn y_label(self) -> &'static str {
        match self {
            Panel::Coverage => "mean coverage",
            Panel::Samplings => "mean samplings per prompt",
            Panel::Lpb => "mean LPB",
        }
    }

    fn value(self, p: &PlotPoint) -> MeanStd {
        match self {
            Panel::Coverage => p.coverage,
            Panel::Samplings => p.samplings,
            Panel::Lpb => p.lpb,
        }
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 150.0, 40.0, 55.0);

/// Writes three panels per `(γ, α)` slice. Returns the files written.
pub fn emit_plots(points: &[PlotPoint], out_dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if points.is_empty() {
        log::warn!("no summary points; no plots written");
        return Err(HarnessError::EmptySummary);
    }
    fs::create_dir_all(out_dir)?;
    let mut slices: BTreeMap<(u64, u64), Vec<&PlotPoint>> = BTreeMap::new();
    for p in points {
        slices
            .entry((p.gamma.to_bits(), p.alpha.to_bits()))
            .or_default()
            .push(p);
    }
    let mut written = Vec::new();
    for ((g, a), pts) in slices {
        let (gamma, alpha) = (f64::from_bits(g), f64::from_bits(a));
        for panel in Panel::ALL {
            let stem = format!("{}_g{gamma}_a{alpha}", panel.name());
            let csv_path = out_dir.join(format!("{stem}.csv"));
            fs::write(&csv_path, panel_csv(panel, &pts)?)?;
            let svg_path = out_dir.join(format!("{stem}.svg"));
            fs::write(&svg_path, panel_svg(panel, &pts, gamma, alpha))?;
            written.push(csv_path);
            written.push(svg_path);
        }
    }
    Ok(written)
}

fn series(panel: Panel, pts: &[&PlotPoint]) -> BTreeMap<Mode, Vec<(f64, MeanStd)>> {
    let mut by_mode: BTreeMap<Mode, Vec<(f64, MeanStd)>> = BTreeMap::new();
    for p in pts {
        by_mode
            .entry(p.mode)
            .or_default()
            .push((p.budget_per_prompt, panel.value(p)));
    }
    for s in by_mode.values_mut() {
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    by_mode
}

fn panel_csv(panel: Panel, pts: &[&PlotPoint]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "budget_per_prompt", "mean", "std"])?;
    for (mode, s) in series(panel, pts) {
        for (x, v) in s {
            w.write_record([
                mode.to_string(),
                x.to_string(),
                v.mean.to_string(),
                v.std.to_string(),
            ])?;
        }
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.into_error()))
}

fn finite_or_zero(x: f64) -> f64 {
    if x.is_finite() {
        x
    } else {
        0.0
    }
}

fn panel_svg(panel: Panel, pts: &[&PlotPoint], gamma: f64, alpha: f64) -> String {
    let data = series(panel, pts);
    let xs: Vec<f64> = data.values().flatten().map(|(x, _)| *x).collect();
    let (x_min, x_max) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let log_x = x_min > 0.0 && x_max / x_min > 20.0;
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let (x_lo, x_hi) = pad(tx(x_min), tx(x_max));

    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for (_, v) in data.values().flatten() {
        let s = finite_or_zero(v.std);
        if v.mean.is_finite() {
            y_lo = y_lo.min(v.mean - s);
            y_hi = y_hi.max(v.mean + s);
        }
    }
    if panel == Panel::Coverage {
        y_lo = y_lo.min(1.0 - alpha);
        y_hi = y_hi.max(1.0 - alpha);
    }
    if !y_lo.is_finite() {
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let (y_lo, y_hi) = pad(y_lo, y_hi);

    let (ml, mr, mt, mb) = MARGIN;
    let pw = WIDTH - ml - mr;
    let ph = HEIGHT - mt - mb;
    let sx = |x: f64| ml + (tx(x) - x_lo) / (x_hi - x_lo) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{} (gamma = {gamma}, alpha = {alpha})</text>"#,
        ml + pw / 2.0,
        panel.y_label()
    );
    let _ = writeln!(
        s,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );

    for i in 0..=4 {
        let v = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let y = sy(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/>"#,
            ml - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 8.0,
            y + 4.0,
            tick_label(v)
        );
    }
    let mut ticks: Vec<f64> = xs.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for &x in &ticks {
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{}" x2="{px:.2}" y2="{}" stroke="black"/>"#,
            mt + ph,
            mt + ph + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#,
            mt + ph + 18.0,
            tick_label(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">budget per prompt{}</text>"#,
        ml + pw / 2.0,
        HEIGHT - 12.0,
        if log_x { " (log scale)" } else { "" }
    );

    if panel == Panel::Coverage {
        let y = sy(1.0 - alpha);
        let _ = writeln!(
            s,
            r#"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="6,4"/>"#,
            ml + pw
        );
    }

    for (k, (mode, pts)) in data.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let finite: Vec<_> = pts.iter().filter(|(_, v)| v.mean.is_finite()).collect();
        if finite.is_empty() {
            continue;
        }
        let upper = finite
            .iter()
            .map(|(x, v)| format!("{:.2},{:.2}", sx(*x), sy(v.mean + finite_or_zero(v.std))));
        let lower = finite
            .iter()
            .rev()
            .map(|(x, v)| format!("{:.2},{:.2}", sx(*x), sy(v.mean - finite_or_zero(v.std))));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = finite
            .iter()
            .map(|(x, v)| format!("{:.2},{:.2}", sx(*x), sy(v.mean)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            line.join(" ")
        );
        for (x, v) in &finite {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(*x),
                sy(v.mean)
            );
        }
        let ly = mt + 10.0 + 18.0 * k as f64;
        let lx = ml + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{mode}</text>"#,
            lx + 26.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn pad(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let m = 0.05 * (hi - lo);
        (lo - m, hi + m)
    } else {
        let m = if lo == 0.0 { 1.0 } else { 0.5 * lo.abs() };
        (lo - m, hi + m)
    }
}

fn tick_label(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(mode: Mode, b: f64, cov: f64) -> PlotPoint {
        let ms = |mean| MeanStd { mean, std: 0.01 };
        PlotPoint {
            mode,
            budget_per_prompt: b,
            gamma: 10.0,
            alpha: 0.1,
            coverage: ms(cov),
            samplings: ms(b),
            lpb: ms(100.0 * b),
        }
    }

    #[test]
    fn empty_summary_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("plots");
        assert!(matches!(
            emit_plots(&[], &out),
            Err(HarnessError::EmptySummary)
        ));
        assert!(!out.exists());
    }

    #[test]
    fn three_panels_per_slice_and_valid_svg() {
        let pts = vec![
            point(Mode::Optimized, 10.0, 0.9),
            point(Mode::Optimized, 1200.0, 0.91),
            point(Mode::Basic, 10.0, 0.95),
            point(Mode::Basic, 1200.0, 0.92),
        ];
        let dir = tempfile::tempdir().unwrap();
        let files = emit_plots(&pts, dir.path()).unwrap();
        let svgs: Vec<_> = files
            .iter()
            .filter(|p| p.extension().unwrap() == "svg")
            .collect();
        assert_eq!(svgs.len(), 3);
        assert_eq!(files.len(), 6);
        for f in svgs {
            let text = fs::read_to_string(f).unwrap();
            let doc = roxmltree::Document::parse(&text).unwrap();
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(doc.descendants().any(|n| n.has_tag_name("polygon")));
        }
        let cov = fs::read_to_string(dir.path().join("coverage_g10_a0.1.svg")).unwrap();
        assert!(cov.contains("stroke-dasharray"));
    }

    #[test]
    fn degenerate_values_still_render() {
        let mut p = point(Mode::Naive, 50.0, 1.0);
        p.coverage.std = f64::NAN;
        p.samplings = MeanStd {
            mean: f64::INFINITY,
            std: f64::NAN,
        };
        let dir = tempfile::tempdir().unwrap();
        for f in emit_plots(&[p], dir.path()).unwrap() {
            if f.extension().unwrap() == "svg" {
                roxmltree::Document::parse(&fs::read_to_string(f).unwrap()).unwrap();
            }
        }
    }
}
