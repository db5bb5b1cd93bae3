//! Static SVG line plots of summary tables.
//!
//! One panel per quantity (the part of the metric before `/`), one line per
//! series with a translucent ±1 std band.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::experiments::{SummaryRow, SummaryTable};

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const COLUMNS: usize = 2;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22", "#7f7f7f",
];

/// Labels for [`render_svg`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
}

impl PlotSpec {
    /// Title from the table name; width sweeps get a `width` axis.
    pub fn for_table(table: &SummaryTable) -> Self {
        let x_label = if table.name == "bound_tightness" {
            "width"
        } else {
            "layer"
        };
        Self {
            title: table.name.clone(),
            x_label: x_label.into(),
        }
    }
}

struct Series<'a> {
    name: &'a str,
    points: Vec<&'a SummaryRow>,
}

struct Panel<'a> {
    quantity: &'a str,
    series: Vec<Series<'a>>,
}

fn panels(table: &SummaryTable) -> Vec<Panel<'_>> {
    let mut panels: Vec<Panel> = Vec::new();
    for metric in table.metrics() {
        let rows: Vec<&SummaryRow> = table
            .series(metric)
            .into_iter()
            .filter(|r| r.mean.is_finite())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let quantity = rows[0].quantity();
        let series = Series {
            name: if rows[0].series().is_empty() {
                quantity
            } else {
                rows[0].series()
            },
            points: rows,
        };
        match panels.iter_mut().find(|p| p.quantity == quantity) {
            Some(p) => p.series.push(series),
            None => panels.push(Panel {
                quantity,
                series: vec![series],
            }),
        }
    }
    panels
}

/// Linear map from data to pixels. A degenerate range is padded so a flat
/// series sits in the middle of the panel.
#[derive(Clone, Copy, Debug)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(mut lo: f64, mut hi: f64, px_lo: f64, px_hi: f64) -> Self {
        if hi - lo <= f64::EPSILON * lo.abs().max(hi.abs()).max(1.0) {
            let pad = 0.5 * lo.abs().max(1.0);
            lo -= pad;
            hi += pad;
        } else {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|k| self.lo + (self.hi - self.lo) * k as f64 / 4.0)
            .collect()
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" {
            "0".into()
        } else {
            s.into()
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

fn draw_panel(out: &mut String, panel: &Panel, spec: &PlotSpec, x0: f64, y0: f64) {
    let left = x0 + MARGIN_L;
    let right = x0 + PANEL_W - MARGIN_R;
    let top = y0 + MARGIN_T;
    let bottom = y0 + PANEL_H - MARGIN_B;

    let all = panel.series.iter().flat_map(|s| s.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for r in all {
        let x = r.layer_or_width as f64;
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(r.mean - r.std);
        ymax = ymax.max(r.mean + r.std);
    }
    let xa = Axis::new(xmin, xmax, left, right);
    let ya = Axis::new(ymin, ymax, bottom, top);

    writeln!(
        out,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="rgb(51,51,51)"/>"#,
        px(left),
        px(top),
        px(right - left),
        px(bottom - top)
    )
    .unwrap();
    for t in xa.ticks() {
        let x = xa.map(t);
        writeln!(
            out,
            r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="rgb(51,51,51)"/><text x="{0}" y="{3}" font-size="11" text-anchor="middle">{4}</text>"#,
            px(x),
            px(bottom),
            px(bottom + 5.0),
            px(bottom + 18.0),
            tick_label(t)
        )
        .unwrap();
    }
    for t in ya.ticks() {
        let y = ya.map(t);
        writeln!(
            out,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="rgb(51,51,51)"/><text x="{3}" y="{4}" font-size="11" text-anchor="end">{5}</text>"#,
            px(left - 5.0),
            px(y),
            px(left),
            px(left - 8.0),
            px(y + 4.0),
            tick_label(t)
        )
        .unwrap();
    }
    writeln!(
        out,
        r#"<text class="x-label" x="{}" y="{}" font-size="13" text-anchor="middle">{}</text>"#,
        px((left + right) / 2.0),
        px(bottom + 38.0),
        escape(&spec.x_label)
    )
    .unwrap();
    let ymid = (top + bottom) / 2.0;
    writeln!(
        out,
        r#"<text class="y-label" x="{0}" y="{1}" font-size="13" text-anchor="middle" transform="rotate(-90 {0} {1})">{2}</text>"#,
        px(x0 + 16.0),
        px(ymid),
        escape(panel.quantity)
    )
    .unwrap();

    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<(f64, f64, f64)> = s
            .points
            .iter()
            .map(|r| (xa.map(r.layer_or_width as f64), r.mean, r.std))
            .collect();
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper = pts
                .iter()
                .map(|&(x, m, sd)| format!("{},{}", px(x), px(ya.map(m + sd))));
            let lower = pts
                .iter()
                .rev()
                .map(|&(x, m, sd)| format!("{},{}", px(x), px(ya.map(m - sd))));
            let poly: Vec<String> = upper.chain(lower).collect();
            writeln!(
                out,
                r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
                poly.join(" ")
            )
            .unwrap();
        }
        let line: Vec<String> = pts
            .iter()
            .map(|&(x, m, _)| format!("{},{}", px(x), px(ya.map(m))))
            .collect();
        if line.len() == 1 {
            let (x, m, _) = pts[0];
            writeln!(
                out,
                r#"<circle class="mean" cx="{}" cy="{}" r="3.5" fill="{color}"/>"#,
                px(x),
                px(ya.map(m))
            )
            .unwrap();
        } else {
            writeln!(
                out,
                r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
                line.join(" ")
            )
            .unwrap();
        }
        let ly = top + 8.0 + 18.0 * k as f64;
        writeln!(
            out,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="3"/><text class="legend" x="{3}" y="{4}" font-size="11">{5}</text>"#,
            px(right + 12.0),
            px(ly),
            px(right + 32.0),
            px(right + 38.0),
            px(ly + 4.0),
            escape(s.name)
        )
        .unwrap();
    }
}

/// Renders every quantity of `table` as a panel of a self-contained SVG.
pub fn render_svg(table: &SummaryTable, spec: &PlotSpec) -> Result<String> {
    let panels = panels(table);
    if panels.is_empty() {
        return Err(Error::invalid("nothing to plot: the table has no finite series"));
    }
    let cols = COLUMNS.min(panels.len());
    let rows = panels.len().div_ceil(cols);
    let width = PANEL_W * cols as f64;
    let height = 30.0 + PANEL_H * rows as f64;
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{0}" height="{1}" viewBox="0 0 {0} {1}" font-family="sans-serif">"#,
        px(width),
        px(height)
    )
    .unwrap();
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<text x="{}" y="22" font-size="16" text-anchor="middle">{}</text>"#,
        px(width / 2.0),
        escape(&spec.title)
    )
    .unwrap();
    for (i, panel) in panels.iter().enumerate() {
        let x0 = PANEL_W * (i % cols) as f64;
        let y0 = 30.0 + PANEL_H * (i / cols) as f64;
        draw_panel(&mut out, panel, spec, x0, y0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::Stats;

    fn spec() -> PlotSpec {
        PlotSpec {
            title: "t".into(),
            x_label: "layer".into(),
        }
    }

    fn polyline_ys(svg: &str) -> Vec<Vec<f64>> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let pts = l.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
                pts.split(' ')
                    .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn flat_series_is_horizontal_and_centered() {
        let mut t = SummaryTable::new("flat", 0, serde_json::json!({}));
        for l in 1..=5 {
            t.push(SummaryRow::point("act_ratio/one", l, 1.0, 1));
        }
        let svg = render_svg(&t, &spec()).unwrap();
        let ys = polyline_ys(&svg);
        assert_eq!(ys.len(), 1);
        let mid = 30.0 + (MARGIN_T + PANEL_H - MARGIN_B) / 2.0;
        assert!(ys[0].iter().all(|&y| (y - mid).abs() < 0.01));
        assert!(!svg.contains("<polygon"));
    }

    #[test]
    fn two_series_get_two_colors_and_a_legend() {
        let mut t = SummaryTable::new("two", 0, serde_json::json!({}));
        for l in 1..=3 {
            t.push(SummaryRow::new(
                "act_ratio/alpha",
                l,
                Stats {
                    mean: 1.0,
                    std: 0.1,
                    count: 9,
                },
            ));
            t.push(SummaryRow::new(
                "act_ratio/beta",
                l,
                Stats {
                    mean: 0.5,
                    std: 0.1,
                    count: 9,
                },
            ));
        }
        let svg = render_svg(&t, &spec()).unwrap();
        assert!(svg.contains(">alpha</text>") && svg.contains(">beta</text>"));
        assert!(svg.contains(PALETTE[0]) && svg.contains(PALETTE[1]));
        assert_eq!(svg.matches("<polygon").count(), 2);
        assert!(svg.contains(">act_ratio</text>"));
    }

    #[test]
    fn empty_is_an_error() {
        let t = SummaryTable::new("e", 0, serde_json::json!({}));
        assert!(render_svg(&t, &spec()).unwrap_err().is_validation());
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(0.5), "0.5");
        assert_eq!(tick_label(2.0), "2");
        assert_eq!(tick_label(1e-6), "1.00e-6");
        assert_eq!(tick_label(0.0), "0");
    }
}
