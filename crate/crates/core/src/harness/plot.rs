//! Self-contained SVG 1.1 line charts of record fields against step.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::harness::export::RunLog;
use crate::metrics::{MetricRecord, NUMERIC_FIELDS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Linear,
    /// `v ↦ sign(v) · log10(1 + |v| / s)` with `s = SYMLOG_THRESHOLD`.
    Symlog,
}

pub const SYMLOG_THRESHOLD: f64 = 1.0;

impl Scale {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Scale::Linear => v,
            Scale::Symlog => v.signum() * (1.0 + v.abs() / SYMLOG_THRESHOLD).log10(),
        }
    }

    pub fn invert(self, u: f64) -> f64 {
        match self {
            Scale::Linear => u,
            Scale::Symlog => u.signum() * SYMLOG_THRESHOLD * (10f64.powf(u.abs()) - 1.0),
        }
    }

    fn axis_label(self) -> String {
        match self {
            Scale::Linear => "value (linear)".into(),
            Scale::Symlog => format!("value (symlog, linear threshold s={SYMLOG_THRESHOLD})"),
        }
    }
}

/// One labelled record sequence to draw.
pub struct Series<'a> {
    pub label: String,
    pub records: &'a [MetricRecord],
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 20.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn tick_text(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Trailing mean over the last `window` points (fewer at the start).
fn trailing_mean(values: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let mut sum = 0.0;
    values
        .iter()
        .enumerate()
        .map(|(i, &(x, v))| {
            sum += v;
            if i >= window {
                sum -= values[i - window].1;
            }
            (x, sum / (i + 1).min(window) as f64)
        })
        .collect()
}

/// Renders one polyline per (series, field) with a legend entry each.
///
/// With `smooth_window > 1` each series is replaced by its trailing mean
/// over that many points before scaling; the window is stated in the legend
/// and in the SVG `<metadata>`.
pub fn render_svg(series: &[Series<'_>], fields: &[&str], scale: Scale, smooth_window: usize) -> Result<String> {
    if let Some(bad) = fields.iter().find(|f| !NUMERIC_FIELDS.contains(f)) {
        return Err(Error::UnknownField(bad.to_string()));
    }
    let mut lines: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for s in series {
        for &field in fields {
            let raw: Vec<(f64, f64)> = s
                .records
                .iter()
                .filter_map(|r| r.get(field).flatten().map(|v| (r.step as f64, v)))
                .collect();
            let (raw, suffix) = if smooth_window > 1 {
                (
                    trailing_mean(&raw, smooth_window),
                    format!(" (mean of last {smooth_window})"),
                )
            } else {
                (raw, String::new())
            };
            let pts = raw
                .into_iter()
                .map(|(x, v)| (x, scale.apply(v)))
                .filter(|(_, v)| v.is_finite())
                .collect();
            lines.push((format!("{}: {field}{suffix}", s.label), pts));
        }
    }

    let all = lines.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<metadata>{{"scale":"{}","symlog_threshold":{SYMLOG_THRESHOLD},"smoothing_window":{}}}</metadata>"#,
        match scale {
            Scale::Linear => "linear",
            Scale::Symlog => "symlog",
        },
        smooth_window.max(1)
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let u = y0 + (y1 - y0) * k as f64 / 4.0;
        let y = py(u);
        let _ = writeln!(
            svg,
            r##"<line x1="{LEFT}" y1="{y:.3}" x2="{:.3}" y2="{y:.3}" stroke="#ddd"/><text x="{:.3}" y="{:.3}" font-size="11" text-anchor="end">{}</text>"##,
            LEFT + pw,
            LEFT - 5.0,
            y + 4.0,
            tick_text(scale.invert(u))
        );
        let xv = x0 + (x1 - x0) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-size="11" text-anchor="middle">{}</text>"#,
            px(xv),
            TOP + ph + 15.0,
            tick_text(xv.round())
        );
    }
    if y0 < 0.0 && y1 > 0.0 {
        let _ = writeln!(
            svg,
            r#"<line class="zero" x1="{LEFT}" y1="{0:.3}" x2="{1:.3}" y2="{0:.3}" stroke="gray" stroke-dasharray="4 3"/>"#,
            py(0.0),
            LEFT + pw
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.3}" y="{:.3}" font-size="12" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{0:.3}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {0:.3})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&scale.axis_label())
    );

    for (i, (label, pts)) in lines.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !pts.is_empty() {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.3},{:.3}", px(x), py(y))).collect();
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = TOP + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{color}" stroke-width="2"/><text x="{:.3}" y="{:.3}" font-size="11">{}</text></g>"#,
            LEFT + 10.0,
            ly - 4.0,
            LEFT + 30.0,
            ly - 4.0,
            LEFT + 35.0,
            ly,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Plots `fields` of every log into a standalone SVG file, labelled by run
/// name.
pub fn plot_svg(
    logs: &[RunLog],
    fields: &[&str],
    scale: Scale,
    smooth_window: usize,
    path: impl AsRef<Path>,
) -> Result<()> {
    let series: Vec<Series<'_>> = logs
        .iter()
        .map(|l| Series {
            label: l.meta.name.clone(),
            records: &l.records,
        })
        .collect();
    fs::write(path, render_svg(&series, fields, scale, smooth_window)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(values: &[f64]) -> Vec<MetricRecord> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricRecord {
                step: i as u64,
                loss: v,
                cum_update_corr_rs: v,
                ..MetricRecord::default()
            })
            .collect()
    }

    fn polylines(svg: &str) -> Vec<Vec<(f64, f64)>> {
        svg.lines()
            .filter_map(|l| l.split("points=\"").nth(1))
            .map(|rest| {
                rest.split('"')
                    .next()
                    .unwrap()
                    .split(' ')
                    .map(|p| {
                        let (x, y) = p.split_once(',').unwrap();
                        (x.parse().unwrap(), y.parse().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn constant_series_is_horizontal() {
        let r = recs(&[5.0; 10]);
        let svg = render_svg(
            &[Series {
                label: "a".into(),
                records: &r,
            }],
            &["loss"],
            Scale::Linear,
            1,
        )
        .unwrap();
        let lines = polylines(&svg);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].len(), 10);
        assert!(lines[0].iter().all(|&(_, y)| y == lines[0][0].1));
    }

    #[test]
    fn symlog_is_odd() {
        let r = recs(&[-100.0, 0.0, 100.0]);
        let svg = render_svg(
            &[Series {
                label: "a".into(),
                records: &r,
            }],
            &["loss"],
            Scale::Symlog,
            1,
        )
        .unwrap();
        let ys: Vec<f64> = polylines(&svg)[0].iter().map(|p| p.1).collect();
        assert!((ys[0] - ys[1] - (ys[1] - ys[2])).abs() < 1e-9, "{ys:?}");
        assert!(svg.contains("linear threshold s=1"));
        assert!(svg.contains("class=\"zero\""));
        assert_eq!(Scale::Symlog.apply(-9.0), -1.0);
        assert!((Scale::Symlog.invert(Scale::Symlog.apply(123.0)) - 123.0).abs() < 1e-9);
    }

    #[test]
    fn one_polyline_and_legend_entry_per_log() {
        let a = recs(&[1.0, 2.0]);
        let b = recs(&[3.0, -1.0]);
        let s = [
            Series {
                label: "none".into(),
                records: &a,
            },
            Series {
                label: "exp1".into(),
                records: &b,
            },
        ];
        let svg = render_svg(&s, &["cum_update_corr_rs"], Scale::Symlog, 1).unwrap();
        assert_eq!(polylines(&svg).len(), 2);
        assert_eq!(svg.matches("class=\"legend\"").count(), 2);
    }

    #[test]
    fn smoothing_window_is_applied_and_recorded() {
        let r = recs(&[0.0, 3.0, 0.0, 3.0, 0.0, 3.0]);
        let svg = render_svg(
            &[Series {
                label: "a".into(),
                records: &r,
            }],
            &["loss"],
            Scale::Linear,
            2,
        )
        .unwrap();
        let ys: Vec<f64> = polylines(&svg)[0].iter().map(|p| p.1).collect();
        assert!(ys[1..].iter().all(|&y| (y - ys[1]).abs() < 1e-9), "{ys:?}");
        assert!(svg.contains("\"smoothing_window\":2") && svg.contains("(mean of last 2)"));
        assert_eq!(
            trailing_mean(&[(0.0, 2.0), (1.0, 4.0), (2.0, 6.0)], 2),
            vec![(0.0, 2.0), (1.0, 3.0), (2.0, 5.0)]
        );
    }

    #[test]
    fn unknown_field_is_named() {
        let r = recs(&[1.0]);
        match render_svg(
            &[Series {
                label: "a".into(),
                records: &r,
            }],
            &["loss", "los"],
            Scale::Linear,
            1,
        ) {
            Err(Error::UnknownField(f)) => assert_eq!(f, "los"),
            other => panic!("{other:?}"),
        }
    }
}
