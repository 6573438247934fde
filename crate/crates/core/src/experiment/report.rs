//! Markdown report over whatever stage artifacts exist in a run directory.
//! Numbers are copied from the stage outputs, never recomputed.

use super::stages::SaliencySummary;
use crate::error::{Error, IoContext, Result};
use crate::eval::{read_adaptation_csv, ProbeReport, TransferReport};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// One named polyline for [`line_chart_svg`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Minimal standalone SVG line chart. Non-finite points are skipped.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 150.0, 30.0, 45.0);
    let pts = series.iter().flat_map(|s| &s.points).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            px(xv),
            h - bottom + 16.0,
            tick(xv),
            left - 4.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, (left + w - right) / 2.0, h - 8.0, escape(x_label));
    let _ = writeln!(s, r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{}</text>"#, h / 2.0, h / 2.0, escape(y_label));
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, path.join(" "));
        let ly = top + 16.0 * i as f64 + 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 34.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    serde_json::from_str(&fs::read_to_string(path).at(path)?).map_err(Error::from)
}

fn transfer_section(run: &Path, md: &mut String) -> Result<()> {
    let dir = run.join("eval-transfer");
    let meta: TransferReport = read_json(&dir.join("transfer.json"))?;
    let csv_path = dir.join("transfer.csv");
    if !csv_path.exists() {
        return Err(Error::MissingArtifact(csv_path));
    }
    let mut r = csv::Reader::from_path(&csv_path)?;
    let _ = writeln!(
        md,
        "## Zero-shot transfer\n\nPolicy `{}`, {} episodes per domain.\n",
        meta.policy_checkpoint, meta.episodes_per_domain
    );
    md.push_str("| domain | role | encoder | mean | std | ratio |\n|---|---|---|---:|---:|---:|\n");
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {} |",
            f(0),
            f(1),
            meta.encoder_variant,
            f(2),
            f(3),
            f(4)
        );
    }
    md.push('\n');
    Ok(())
}

fn curve_section(run: &Path, out: &Path, md: &mut String) -> Result<()> {
    let points = read_adaptation_csv(&run.join("curve").join("adaptation.csv"))?;
    let mut by_domain: BTreeMap<(u8, String), Vec<(f64, f64)>> = BTreeMap::new();
    for p in &points {
        by_domain
            .entry((p.role as u8, p.domain.clone()))
            .or_default()
            .push((p.step as f64, p.ratio));
    }
    let series: Vec<Series> = by_domain
        .into_iter()
        .map(|((_, name), points)| Series { name, points })
        .collect();
    let svg = line_chart_svg("Transfer ratio during training", "environment steps", "target / source", &series);
    fs::write(out.join("adaptation.svg"), svg).at(out)?;
    md.push_str("## Adaptation during training\n\n![adaptation curve](adaptation.svg)\n\n");
    Ok(())
}

fn training_section(run: &Path, out: &Path, md: &mut String) -> Result<()> {
    let path = run.join("train-rl").join("curve.csv");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let mut r = csv::Reader::from_path(&path)?;
    let mut pts = Vec::new();
    for p in r.deserialize::<crate::rl::CurvePoint>() {
        let p = p?;
        pts.push((p.step as f64, p.mean_return));
    }
    let svg = line_chart_svg(
        "Source-domain training return",
        "environment steps",
        "mean episode return",
        &[Series {
            name: "source".into(),
            points: pts,
        }],
    );
    fs::write(out.join("training.svg"), svg).at(out)?;
    md.push_str("## Policy training\n\n![training curve](training.svg)\n\n");
    Ok(())
}

fn saliency_section(run: &Path, md: &mut String) -> Result<()> {
    let dir = run.join("saliency");
    let s: SaliencySummary = read_json(&dir.join("summary.json"))?;
    let _ = writeln!(
        md,
        "## Saliency\n\n{} frames from `{}`. Road saliency mass exceeds road area on {:.3} of frames \
         (mean mass {:.3}, mean area {:.3}).\n",
        s.frames, s.domain, s.road_dominant_fraction, s.mean_mass_fraction, s.mean_area_fraction
    );
    let mut panels: Vec<String> = fs::read_dir(&dir)
        .at(&dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with("_overlay.png"))
        .collect();
    panels.sort();
    for p in panels {
        let _ = writeln!(md, "![{p}](../saliency/{p})");
    }
    md.push('\n');
    Ok(())
}

fn probe_section(run: &Path, md: &mut String) -> Result<()> {
    let p: ProbeReport = read_json(&run.join("probe").join("probe.json"))?;
    let spec = p.accuracy_specific.map_or("n/a".to_string(), |a| format!("{a:.3}"));
    let _ = writeln!(
        md,
        "## Embedding probes\n\n{} paired states over {} domains (chance {:.3}).\n\n\
         | metric | value |\n|---|---:|\n| domain accuracy from specific code | {} |\n\
         | domain accuracy from general code | {:.3} |\n| paired distance | {:.4} |\n\
         | within-domain distance | {:.4} |\n| distance ratio | {:.4} |\n",
        p.n_states,
        p.domains.len(),
        p.chance,
        spec,
        p.accuracy_general,
        p.paired_distance,
        p.within_distance,
        p.distance_ratio
    );
    Ok(())
}

fn swap_section(run: &Path, md: &mut String) -> Result<()> {
    let path = run.join("demo-swap").join("swap_grid.png");
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    md.push_str(
        "## Swap reconstructions\n\nRows: specific-code source, general-code source, decode of the pair.\n\n\
         ![swap grid](../demo-swap/swap_grid.png)\n\n",
    );
    Ok(())
}

/// Assemble `report.md` under `out` and return one warning per section whose
/// artifacts are missing.
pub fn write_report(run: &Path, out: &Path) -> Result<Vec<String>> {
    let name = run.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut md = format!("# Run `{name}`\n\n");
    let mut warnings = Vec::new();
    let mut section = |label: &str, r: Result<()>| match r {
        Ok(()) => Ok(()),
        Err(Error::MissingArtifact(p)) => {
            warnings.push(format!("{label}: missing {}", p.display()));
            Ok(())
        }
        Err(e) => Err(e),
    };
    section("transfer", transfer_section(run, &mut md))?;
    section("adaptation curve", curve_section(run, out, &mut md))?;
    section("training curve", training_section(run, out, &mut md))?;
    section("saliency", saliency_section(run, &mut md))?;
    section("probe", probe_section(run, &mut md))?;
    section("swap", swap_section(run, &mut md))?;
    if !warnings.is_empty() {
        md.push_str("## Warnings\n\n");
        for w in &warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    let path = out.join("report.md");
    fs::write(&path, md).at(&path)?;
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_skips_nonfinite_points() {
        let svg = line_chart_svg(
            "t",
            "x",
            "y",
            &[Series {
                name: "a<b".into(),
                points: vec![(0.0, f64::NAN), (1.0, 2.0), (2.0, 3.0)],
            }],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn empty_run_reports_every_section_missing() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("report");
        fs::create_dir_all(&out).unwrap();
        let warnings = write_report(tmp.path(), &out).unwrap();
        assert_eq!(warnings.len(), 6);
        let md = fs::read_to_string(out.join("report.md")).unwrap();
        assert!(md.contains("## Warnings"));
    }
}
