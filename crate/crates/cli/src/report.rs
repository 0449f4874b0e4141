use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mtard_core::eval::{ControllerSnapshot, MetricRecord};

use crate::commands::METRICS;
use crate::{ReportArgs, UsageError};

fn attack_names(records: &[MetricRecord]) -> Vec<String> {
    let mut names: Vec<String> = records.iter().flat_map(|r| r.robust_acc.keys().cloned()).collect();
    names.sort();
    names.dedup();
    names
}

type ControllerField = (&'static str, fn(&ControllerSnapshot) -> Option<f64>);

const CONTROLLER_FIELDS: [ControllerField; 10] = [
    ("tau_nat", |c| Some(c.tau_nat)),
    ("tau_adv", |c| Some(c.tau_adv)),
    ("w_nat", |c| Some(c.w_nat)),
    ("w_adv", |c| Some(c.w_adv)),
    ("h_nat", |c| Some(c.h_nat)),
    ("h_adv", |c| Some(c.h_adv)),
    ("l_nat", |c| Some(c.l_nat)),
    ("l_adv", |c| Some(c.l_adv)),
    ("rel_nat", |c| c.rel_nat),
    ("rel_adv", |c| c.rel_adv),
];

/// One header line and one line per record. Missing values are empty cells.
pub fn to_csv(records: &[MetricRecord]) -> String {
    let attacks = attack_names(records);
    let mut out = String::from("epoch,train_loss,clean_acc");
    for a in &attacks {
        write!(out, ",robust_{a}").unwrap();
    }
    out += ",designated,pi_nat,pi_adv,w_robust";
    for (name, _) in CONTROLLER_FIELDS {
        write!(out, ",{name}").unwrap();
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{}", r.epoch, r.train_loss, r.clean_acc).unwrap();
        for a in &attacks {
            match r.robust_acc.get(a) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        write!(out, ",{},{},{},{}", r.designated, r.pi_nat, r.pi_adv, r.w_robust).unwrap();
        for (_, get) in CONTROLLER_FIELDS {
            match r.controller.as_ref().and_then(get) {
                Some(v) => write!(out, ",{v}").unwrap(),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart with a circle on every point.
pub fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 150.0, 40.0, 50.0);
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
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
        let pad = y0.abs().max(1.0) * 0.05;
        (y0, y1) = (y0 - pad, y1 + pad);
    }
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, left + pw / 2.0, escape(title)).unwrap();
    writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let (px, py) = (sx(xv), sy(yv));
        writeln!(s, r##"<line x1="{left}" y1="{py:.2}" x2="{}" y2="{py:.2}" stroke="#ddd"/>"##, left + pw).unwrap();
        writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 6.0, py + 4.0, tick(yv)).unwrap();
        writeln!(s, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, top + ph + 18.0, tick(xv)).unwrap();
    }
    writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, left + pw / 2.0, h - 10.0).unwrap();
    writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(y_label)
    )
    .unwrap();
    for (k, se) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let finite: Vec<_> = se.points.iter().filter(|p| p.1.is_finite()).collect();
        let path: Vec<String> = finite.iter().map(|&&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        if path.len() > 1 {
            writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" ")).unwrap();
        }
        for &&(x, y) in &finite {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y)).unwrap();
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = left + pw + 12.0;
        writeln!(s, r#"<circle cx="{lx}" cy="{ly}" r="4" fill="{color}"/>"#).unwrap();
        writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 10.0, ly + 4.0, escape(&se.name)).unwrap();
    }
    s += "</svg>\n";
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v != 0.0 && v.abs() < 0.01) {
        format!("{v:.2e}")
    } else {
        let t = format!("{v:.3}");
        t.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn series(name: &str, records: &[MetricRecord], get: impl Fn(&MetricRecord) -> Option<f64>) -> Option<Series> {
    let points: Vec<_> = records.iter().filter_map(|r| get(r).map(|v| (r.epoch as f64, v))).collect();
    (!points.is_empty()).then(|| Series { name: name.into(), points })
}

/// Chart file name, title, y label and series for one run history.
pub fn charts(records: &[MetricRecord]) -> Vec<(&'static str, &'static str, &'static str, Vec<Series>)> {
    let ctl = |f: fn(&ControllerSnapshot) -> Option<f64>| move |r: &MetricRecord| r.controller.as_ref().and_then(f);
    let mut acc = vec![series("clean", records, |r| Some(r.clean_acc))];
    for a in attack_names(records) {
        acc.push(series(&a, records, |r| r.robust_acc.get(&a).copied()));
    }
    acc.push(series("w-robust", records, |r| Some(r.w_robust)));
    let list = vec![
        ("loss.svg", "Training loss", "loss", vec![series("train", records, |r| Some(r.train_loss))]),
        (
            "branch_loss.svg",
            "Branch losses",
            "loss",
            vec![series("nat", records, ctl(|c| Some(c.l_nat))), series("adv", records, ctl(|c| Some(c.l_adv)))],
        ),
        (
            "relative_loss.svg",
            "Relative branch losses",
            "loss / initial loss",
            vec![series("nat", records, ctl(|c| c.rel_nat)), series("adv", records, ctl(|c| c.rel_adv))],
        ),
        (
            "entropy.svg",
            "Teacher entropy",
            "mean entropy (nats)",
            vec![series("clean teacher", records, ctl(|c| Some(c.h_nat))), series("robust teacher", records, ctl(|c| Some(c.h_adv)))],
        ),
        (
            "weights.svg",
            "Loss weights",
            "weight",
            vec![series("w_nat", records, ctl(|c| Some(c.w_nat))), series("w_adv", records, ctl(|c| Some(c.w_adv)))],
        ),
        (
            "temperature.svg",
            "Teacher temperatures",
            "temperature",
            vec![series("clean teacher", records, ctl(|c| Some(c.tau_nat))), series("robust teacher", records, ctl(|c| Some(c.tau_adv)))],
        ),
        ("accuracy.svg", "Accuracy", "accuracy", acc),
    ];
    list.into_iter()
        .map(|(f, t, y, s)| (f, t, y, s.into_iter().flatten().collect::<Vec<_>>()))
        .filter(|c| !c.3.is_empty())
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| UsageError(format!("cannot read {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn report(args: ReportArgs) -> Result<()> {
    let records = read_metrics(&args.run.join(METRICS))?;
    let out = args.out.unwrap_or_else(|| args.run.join("report"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("metrics.csv"), to_csv(&records))?;
    let mut written = vec!["metrics.csv".to_string()];
    for (file, title, y, s) in charts(&records) {
        fs::write(out.join(file), line_chart(title, y, &s))?;
        written.push(file.to_string());
    }
    for w in written {
        println!("{}", out.join(w).display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn rec(epoch: usize, ctl: bool) -> MetricRecord {
        MetricRecord {
            epoch,
            train_loss: 1.0 / (epoch + 1) as f64,
            clean_acc: 0.8,
            robust_acc: BTreeMap::from([("pgd-sat".to_string(), 0.5)]),
            designated: "pgd-sat".into(),
            pi_nat: 0.5,
            pi_adv: 0.5,
            w_robust: 0.65,
            controller: ctl.then_some(ControllerSnapshot {
                tau_nat: 1.0,
                tau_adv: 1.2,
                w_nat: 0.5,
                w_adv: 0.5,
                h_nat: 0.1,
                h_adv: 0.4,
                l_nat: 0.2,
                l_adv: 0.3,
                rel_nat: None,
                rel_adv: Some(0.9),
            }),
        }
    }

    #[test]
    fn csv_layout() {
        let csv = to_csv(&[rec(0, false), rec(1, true)]);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        let cols = lines[0].split(',').count();
        assert!(lines.iter().all(|l| l.split(',').count() == cols));
        assert!(lines[0].starts_with("epoch,train_loss,clean_acc,robust_pgd-sat,designated"));
        assert!(lines[2].ends_with(",,0.9"));
    }

    #[test]
    fn charts_skip_missing_series() {
        let names: Vec<_> = charts(&[rec(0, false)]).iter().map(|c| c.0).collect();
        assert_eq!(names, ["loss.svg", "accuracy.svg"]);
        let all = charts(&[rec(0, true), rec(1, true)]);
        assert_eq!(all.len(), 7);
    }

    #[test]
    fn svg_has_a_marker_per_point() {
        let s = Series { name: "a<b".into(), points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, f64::NAN)] };
        let svg = line_chart("t", "y", &[s]);
        // two data markers plus the legend marker
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.ends_with("</svg>\n"));
    }
}
