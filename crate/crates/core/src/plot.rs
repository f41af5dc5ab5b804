//! Minimal SVG rendering for training traces: line charts (optionally with
//! a logarithmic y axis) and grouped bar charts.
//!
//! Every drawn value comes straight from the data handed in; the renderer
//! only maps it to pixels.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::probes::ProbeResult;
use crate::trainer::TrainingLog;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

/// Plot families the CLI can render from logs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    EigenvalueTrace,
    Accuracy,
    AlignmentVsAccuracy,
    AlphaDelta,
    SurfaceScan,
}

impl PlotKind {
    pub const ALL: [PlotKind; 5] = [
        PlotKind::EigenvalueTrace,
        PlotKind::Accuracy,
        PlotKind::AlignmentVsAccuracy,
        PlotKind::AlphaDelta,
        PlotKind::SurfaceScan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlotKind::EigenvalueTrace => "eigenvalue-trace",
            PlotKind::Accuracy => "accuracy",
            PlotKind::AlignmentVsAccuracy => "alignment-vs-accuracy",
            PlotKind::AlphaDelta => "alpha-delta",
            PlotKind::SurfaceScan => "surface-scan",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    /// Category labels along the x axis.
    pub categories: Vec<String>,
    /// One bar per category in each group.
    pub groups: Vec<Series>,
}

/// Round tick positions covering `[lo, hi]`.
pub fn nice_ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).abs().max(f64::EPSILON * hi.abs().max(1.0));
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let start = (lo / step).floor() as i64;
    let end = (hi / step).ceil() as i64;
    (start..=end).map(|i| i as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (y, y0, y1) = if self.log_y {
            (y.log10(), self.y0.log10(), self.y1.log10())
        } else {
            (y, self.y0, self.y1)
        };
        HEIGHT - BOTTOM - (y - y0) / (y1 - y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, xticks: &[f64], yticks: &[f64], x_label: &str, y_label: &str) {
    let (l, r, t, b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(out, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
    for &x in xticks {
        let px = f.px(x);
        let _ = writeln!(out, r##"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{}" stroke="black"/>"##, b + 5.0);
        let _ = writeln!(out, r#"<text x="{px:.2}" y="{}" text-anchor="middle">{}</text>"#, b + 18.0, fmt_tick(x));
    }
    for &y in yticks {
        let py = f.py(y);
        let _ = writeln!(out, r##"<line x1="{l}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, l - 6.0, py + 4.0, fmt_tick(y));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, HEIGHT - 18.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="20" y="{0}" text-anchor="middle" transform="rotate(-90 20 {0})">{1}</text>"#,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * i as f64;
        let x = WIDTH - RIGHT + 12.0;
        let color = PALETTE[i % PALETTE.len()];
        let _ = writeln!(out, r#"<rect x="{x}" y="{}" width="14" height="4" fill="{color}"/>"#, y - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{y}">{}</text>"#, x + 20.0, escape(name));
    }
}

fn decade_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
    (a..=b).map(|e| 10f64.powi(e)).collect()
}

impl LineChart {
    /// Renders the chart. On a log axis, non-positive values are dropped.
    pub fn to_svg(&self) -> Result<String> {
        let keep = |y: f64| y.is_finite() && (!self.log_y || y > 0.0);
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter().copied())
            .filter(|&(x, y)| x.is_finite() && keep(y))
            .collect();
        if pts.is_empty() {
            return Err(Error::config(format!("nothing to plot for '{}'", self.title)));
        }
        let (mut x0, mut x1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
        let (mut y0, mut y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.1), b.max(p.1)));
        if x0 == x1 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        let yticks = if self.log_y {
            let t = decade_ticks(y0, y1);
            if t.len() < 2 {
                vec![t[0], t[0] * 10.0]
            } else {
                t
            }
        } else {
            if y0 == y1 {
                y0 -= 0.5;
                y1 += 0.5;
            }
            nice_ticks(y0, y1, 6)
        };
        let xticks = nice_ticks(x0, x1, 8);
        let frame = Frame {
            x0: xticks[0],
            x1: *xticks.last().unwrap(),
            y0: yticks[0],
            y1: *yticks.last().unwrap(),
            log_y: self.log_y,
        };
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &frame, &xticks, &yticks, &self.x_label, &self.y_label);
        for (i, s) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let coords: Vec<String> = s
                .points
                .iter()
                .filter(|&&(x, y)| x.is_finite() && keep(y))
                .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                escape(&s.name),
                coords.join(" ")
            );
        }
        legend(&mut out, &self.series.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        Ok(out)
    }
}

impl BarChart {
    pub fn to_svg(&self) -> Result<String> {
        let values: Vec<f64> = self.groups.iter().flat_map(|g| g.points.iter().map(|p| p.1)).filter(|v| v.is_finite()).collect();
        if values.is_empty() || self.categories.is_empty() {
            return Err(Error::config(format!("nothing to plot for '{}'", self.title)));
        }
        let lo = values.iter().copied().fold(0.0, f64::min);
        let hi = values.iter().copied().fold(0.0, f64::max);
        let yticks = nice_ticks(lo, if hi == lo { lo + 1.0 } else { hi }, 6);
        let nc = self.categories.len() as f64;
        let frame = Frame {
            x0: 0.0,
            x1: nc,
            y0: yticks[0],
            y1: *yticks.last().unwrap(),
            log_y: false,
        };
        let mut out = String::new();
        header(&mut out, &self.title);
        axes(&mut out, &frame, &[], &yticks, "", &self.y_label);
        let zero = frame.py(0.0);
        let _ = writeln!(out, r#"<line x1="{LEFT}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="black"/>"#, WIDTH - RIGHT);
        let ng = self.groups.len().max(1) as f64;
        let slot = (frame.px(1.0) - frame.px(0.0)) * 0.8 / ng;
        for (ci, cat) in self.categories.iter().enumerate() {
            let cx = frame.px(ci as f64 + 0.5);
            let _ = writeln!(out, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - BOTTOM + 18.0, escape(cat));
            for (gi, g) in self.groups.iter().enumerate() {
                let Some(&(_, v)) = g.points.get(ci) else { continue };
                if !v.is_finite() {
                    continue;
                }
                let x = cx - slot * ng / 2.0 + slot * gi as f64;
                let py = frame.py(v);
                let _ = writeln!(
                    out,
                    r#"<rect class="bar" x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-value="{v}"/>"#,
                    py.min(zero),
                    slot * 0.9,
                    (py - zero).abs(),
                    PALETTE[gi % PALETTE.len()]
                );
            }
        }
        legend(&mut out, &self.groups.iter().map(|s| s.name.as_str()).collect::<Vec<_>>());
        out.push_str("</svg>\n");
        Ok(out)
    }
}

fn run_label(log: &TrainingLog, fallback: usize) -> String {
    log.config().map(|c| format!("{} (seed {})", c.name, c.seed)).unwrap_or_else(|| format!("run {fallback}"))
}

fn require<T>(items: Vec<T>, kind: PlotKind) -> Result<Vec<T>> {
    if items.is_empty() {
        Err(Error::config(format!("the logs contain no rows for a {} plot", kind.name())))
    } else {
        Ok(items)
    }
}

/// λ₁ over steps, one series per log, on a log axis.
pub fn eigenvalue_trace(logs: &[(String, TrainingLog)]) -> Result<LineChart> {
    let series: Vec<Series> = logs
        .iter()
        .filter_map(|(name, log)| {
            let points: Vec<(f64, f64)> = log.curvature().filter_map(|r| r.lambdas.first().map(|&l| (r.t as f64, l))).collect();
            (!points.is_empty()).then(|| Series { name: name.clone(), points })
        })
        .collect();
    Ok(LineChart {
        title: "Top Hessian eigenvalue".into(),
        x_label: "step".into(),
        y_label: "λ1".into(),
        log_y: true,
        series: require(series, PlotKind::EigenvalueTrace)?,
    })
}

/// Training (and validation/test, when logged) accuracy per epoch.
pub fn accuracy_curves(logs: &[(String, TrainingLog)]) -> Result<LineChart> {
    let mut series = Vec::new();
    for (name, log) in logs {
        let epochs: Vec<_> = log.epochs().collect();
        let mut push = |suffix: &str, f: &dyn Fn(&crate::trainer::EpochRecord) -> Option<f64>| {
            let points: Vec<(f64, f64)> = epochs.iter().filter_map(|e| f(e).map(|a| (e.epoch as f64, a))).collect();
            if !points.is_empty() {
                series.push(Series { name: format!("{name} {suffix}"), points });
            }
        };
        push("train", &|e| e.train_acc);
        push("val", &|e| e.val_acc);
        push("test", &|e| e.test_acc);
    }
    Ok(LineChart {
        title: "Accuracy".into(),
        x_label: "epoch".into(),
        y_label: "accuracy".into(),
        log_y: false,
        series: require(series, PlotKind::Accuracy)?,
    })
}

/// Gradient alignment with the top eigenvectors against training accuracy.
pub fn alignment_vs_accuracy(logs: &[(String, TrainingLog)]) -> Result<LineChart> {
    let series: Vec<Series> = logs
        .iter()
        .filter_map(|(name, log)| {
            let points: Vec<(f64, f64)> = log.curvature().filter_map(|r| Some((r.train_acc?, r.alignment?))).collect();
            (!points.is_empty()).then(|| Series { name: name.clone(), points })
        })
        .collect();
    Ok(LineChart {
        title: "Gradient alignment with top eigenvectors".into(),
        x_label: "training accuracy".into(),
        y_label: "mean |cos|".into(),
        log_y: false,
        series: require(series, PlotKind::AlignmentVsAccuracy)?,
    })
}

fn probes_of(logs: &[(String, TrainingLog)]) -> Vec<(String, ProbeResult)> {
    logs.iter().flat_map(|(name, log)| log.probes().map(move |p| (format!("{name} t={}", p.step), p.clone()))).collect()
}

/// Mean relative loss change for each α, averaged over all probes of each
/// log.
pub fn alpha_delta(logs: &[(String, TrainingLog)]) -> Result<BarChart> {
    let mut alphas: Vec<f64> = Vec::new();
    for (_, p) in probes_of(logs) {
        for d in &p.deltas {
            if !alphas.contains(&d[0]) {
                alphas.push(d[0]);
            }
        }
    }
    alphas.sort_by(f64::total_cmp);
    let groups: Vec<Series> = logs
        .iter()
        .filter_map(|(name, log)| {
            let probes: Vec<&ProbeResult> = log.probes().collect();
            if probes.is_empty() {
                return None;
            }
            let points = alphas
                .iter()
                .map(|&a| {
                    let v: Vec<f64> = probes.iter().filter_map(|p| p.delta_at(a)).collect();
                    (a, if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 })
                })
                .collect();
            Some(Series { name: name.clone(), points })
        })
        .collect();
    Ok(BarChart {
        title: "Loss change along the top eigenvector".into(),
        y_label: "mean relative loss change".into(),
        categories: alphas.iter().map(|a| format!("α={}", fmt_tick(*a))).collect(),
        groups: require(groups, PlotKind::AlphaDelta)?,
    })
}

/// Loss along `θ + k·Δ·e` for every probe, as a ridge of curves.
pub fn surface_scan(logs: &[(String, TrainingLog)]) -> Result<LineChart> {
    let series: Vec<Series> = probes_of(logs)
        .into_iter()
        .filter(|(_, p)| !p.scan.is_empty())
        .map(|(name, p)| Series {
            name,
            points: p.scan.iter().map(|s| (s[0], s[1])).collect(),
        })
        .collect();
    Ok(LineChart {
        title: "Loss along the probed eigenvector".into(),
        x_label: "k (multiples of the expected step)".into(),
        y_label: "loss".into(),
        log_y: false,
        series: require(series, PlotKind::SurfaceScan)?,
    })
}

/// Renders `kind` for the given named logs.
pub fn render(kind: PlotKind, logs: &[(String, TrainingLog)]) -> Result<String> {
    if logs.iter().all(|(_, l)| l.entries.is_empty()) {
        return Err(Error::config("cannot plot empty logs"));
    }
    match kind {
        PlotKind::EigenvalueTrace => eigenvalue_trace(logs)?.to_svg(),
        PlotKind::Accuracy => accuracy_curves(logs)?.to_svg(),
        PlotKind::AlignmentVsAccuracy => alignment_vs_accuracy(logs)?.to_svg(),
        PlotKind::AlphaDelta => alpha_delta(logs)?.to_svg(),
        PlotKind::SurfaceScan => surface_scan(logs)?.to_svg(),
    }
}

/// Default series names for logs read from `paths`.
pub fn label_logs(logs: Vec<TrainingLog>) -> Vec<(String, TrainingLog)> {
    logs.into_iter().enumerate().map(|(i, l)| (run_label(&l, i), l)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_cover_the_range() {
        let t = nice_ticks(0.13, 9.7, 6);
        assert!(t[0] <= 0.13 && *t.last().unwrap() >= 9.7);
        assert_eq!(t[1] - t[0], 2.0);
    }

    #[test]
    fn log_axis_uses_decades() {
        assert_eq!(decade_ticks(3.0, 250.0), vec![1.0, 10.0, 100.0, 1000.0]);
    }

    #[test]
    fn line_chart_has_one_polyline_per_series() {
        let chart = LineChart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_y: true,
            series: (0..3)
                .map(|i| Series {
                    name: format!("s{i}"),
                    points: vec![(0.0, 1.0 + i as f64), (1.0, 10.0), (2.0, -1.0)],
                })
                .collect(),
        };
        let svg = chart.to_svg().unwrap();
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.starts_with("<svg"));
    }

    #[test]
    fn empty_chart_is_an_error() {
        let chart = LineChart {
            title: "t".into(),
            x_label: String::new(),
            y_label: String::new(),
            log_y: false,
            series: vec![],
        };
        assert!(matches!(chart.to_svg(), Err(Error::Config(_))));
    }

    #[test]
    fn bars_scale_with_value() {
        let chart = BarChart {
            title: "b".into(),
            y_label: "v".into(),
            categories: vec!["a".into(), "b".into()],
            groups: vec![Series {
                name: "g".into(),
                points: vec![(0.0, 1.0), (1.0, -2.0)],
            }],
        };
        let svg = chart.to_svg().unwrap();
        let heights: Vec<f64> = svg
            .lines()
            .filter(|l| l.contains("class=\"bar\""))
            .map(|l| l.split("height=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap())
            .collect();
        assert_eq!(heights.len(), 2);
        assert!((heights[1] / heights[0] - 2.0).abs() < 1e-3);
    }
}
