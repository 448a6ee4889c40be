//! Minimal standalone SVG scatter and box plots drawn from CSV tables.
//!
//! Every plot uses a fixed 800×600 viewport, labels each axis with its
//! minimum and maximum, and contains no timestamps.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::stats::quantile;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 70.0;

/// Box-plot statistics. Quartiles use linear interpolation between order
/// statistics; whiskers sit at the 5% and 95% quantiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub whisker_lo: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_hi: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let q = |p| quantile(values, p).ok_or_else(|| Error::Validation("box plot group is empty".into()));
        Ok(BoxStats {
            whisker_lo: q(0.05)?,
            q1: q(0.25)?,
            median: q(0.5)?,
            q3: q(0.75)?,
            whisker_hi: q(0.95)?,
        })
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r
            .headers()
            .map_err(|e| Error::Parse(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(|e| Error::Parse(e.to_string()))?;
        if header.is_empty() || rows.is_empty() {
            return Err(Error::Parse("CSV has no data rows".into()));
        }
        Ok(Table { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse(format!("CSV has no column {name:?}")))
    }

    fn numeric(&self, col: usize) -> Result<Vec<f64>> {
        self.rows
            .iter()
            .map(|r| {
                let s = r[col].trim();
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Parse(format!("column {:?}: {s:?} is not a finite number", self.header[col])))
            })
            .collect()
    }

    fn is_numeric(&self, col: usize) -> bool {
        self.numeric(col).is_ok()
    }

    fn pick(&self, name: Option<&str>, numeric: bool, skip: Option<usize>) -> Result<usize> {
        if let Some(n) = name {
            return self.column(n);
        }
        (0..self.header.len())
            .filter(|&c| Some(c) != skip)
            .find(|&c| self.is_numeric(c) == numeric)
            .ok_or_else(|| {
                let what = if numeric { "numeric" } else { "non-numeric" };
                Error::Parse(format!("CSV has no {what} column to plot"))
            })
    }
}

/// Linear map from a data range onto a pixel range; a zero-width range maps to
/// the centre.
fn scale(v: f64, lo: f64, hi: f64, p0: f64, p1: f64) -> f64 {
    if hi > lo {
        p0 + (v - lo) / (hi - lo) * (p1 - p0)
    } else {
        (p0 + p1) / 2.0
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn label(v: f64) -> String {
    format!("{v:.4}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(svg: &mut String, title: &str) {
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="30" text-anchor="middle" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn axes(svg: &mut String, x_name: &str, x_range: Option<(f64, f64)>, y_name: &str, (y_lo, y_hi): (f64, f64)) {
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{l}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{l}" y1="{b}" x2="{l}" y2="{t}" stroke="black"/>"#
    );
    if let Some((x_lo, x_hi)) = x_range {
        let _ = writeln!(
            svg,
            r#"<text x="{l}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            b + 18.0,
            label(x_lo)
        );
        let _ = writeln!(
            svg,
            r#"<text x="{r}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
            b + 18.0,
            label(x_hi)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{b}" text-anchor="end" font-size="12">{}</text>"#,
        l - 6.0,
        label(y_lo)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-size="12">{}</text>"#,
        l - 6.0,
        t + 4.0,
        label(y_hi)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 20.0,
        escape(x_name)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_name)
    );
}

/// Scatter plot of column `y` against column `x`, one circle per row. Without
/// names the first two numeric columns are used.
pub fn scatter_svg(csv_text: &str, x: Option<&str>, y: Option<&str>, title: &str) -> Result<String> {
    let t = Table::parse(csv_text)?;
    let xc = t.pick(x, true, None)?;
    let yc = t.pick(y, true, Some(xc))?;
    let (xs, ys) = (t.numeric(xc)?, t.numeric(yc)?);
    let xr = range(xs.iter().copied());
    let yr = range(ys.iter().copied());

    let mut svg = String::new();
    open(&mut svg, title);
    axes(&mut svg, &t.header[xc], Some(xr), &t.header[yc], yr);
    for (&xv, &yv) in xs.iter().zip(&ys) {
        let cx = scale(xv, xr.0, xr.1, MARGIN, WIDTH - MARGIN);
        let cy = scale(yv, yr.0, yr.1, HEIGHT - MARGIN, MARGIN);
        let _ = writeln!(svg, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="steelblue"/>"#);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Box plot of column `value`, one box per distinct value of column `group`
/// in order of first appearance. Without a group column all rows form one box;
/// without a value column the first numeric column is used.
pub fn box_svg(csv_text: &str, value: Option<&str>, group: Option<&str>, title: &str) -> Result<String> {
    let t = Table::parse(csv_text)?;
    let vc = t.pick(value, true, None)?;
    let gc = match group {
        Some(g) => Some(t.column(g)?),
        None => None,
    };
    let values = t.numeric(vc)?;
    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    for (row, v) in t.rows.iter().zip(values) {
        let key = gc.map(|c| row[c].clone()).unwrap_or_default();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, vs)) => vs.push(v),
            None => groups.push((key, vec![v])),
        }
    }
    let stats: Vec<BoxStats> = groups
        .iter()
        .map(|(_, vs)| BoxStats::from_values(vs))
        .collect::<Result<_>>()?;
    let yr = range(stats.iter().flat_map(|s| [s.whisker_lo, s.whisker_hi]));

    let mut svg = String::new();
    open(&mut svg, title);
    let x_name = gc.map(|c| t.header[c].as_str()).unwrap_or("");
    axes(&mut svg, x_name, None, &t.header[vc], yr);
    let slot = (WIDTH - 2.0 * MARGIN) / groups.len() as f64;
    let half = (slot * 0.3).min(60.0);
    for (i, ((name, _), s)) in groups.iter().zip(&stats).enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let y = |v| scale(v, yr.0, yr.1, HEIGHT - MARGIN, MARGIN);
        let (x0, x1) = (cx - half, cx + half);
        let _ = writeln!(
            svg,
            r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(s.whisker_lo),
            y(s.q1)
        );
        let _ = writeln!(
            svg,
            r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y(s.q3),
            y(s.whisker_hi)
        );
        let _ = writeln!(
            svg,
            r#"<rect class="box" x="{x0:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="lightsteelblue" stroke="black"/>"#,
            y(s.q3),
            x1 - x0,
            y(s.q1) - y(s.q3)
        );
        for (class, v) in [("q1", s.q1), ("median", s.median), ("q3", s.q3)] {
            let _ = writeln!(
                svg,
                r#"<line class="{class}" data-value="{v}" x1="{x0:.2}" y1="{:.2}" x2="{x1:.2}" y2="{:.2}" stroke="black"/>"#,
                y(v),
                y(v)
            );
        }
        if !name.is_empty() {
            let _ = writeln!(
                svg,
                r#"<text x="{cx:.2}" y="{}" text-anchor="middle" font-size="12">{}</text>"#,
                HEIGHT - MARGIN + 34.0,
                escape(name)
            );
        }
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_scatter_has_two_circles() {
        let svg = scatter_svg("a,b\n1,2\n3,4\n", None, None, "t").unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert!(svg.contains(r#"viewBox="0 0 800 600""#));
        assert!(svg.contains(">1.0000<") && svg.contains(">3.0000<"));
    }

    #[test]
    fn scatter_skips_text_columns() {
        let svg = scatter_svg("id,x,y\nP1,0,1\nP2,1,0\n", None, None, "").unwrap();
        assert_eq!(svg.matches("<circle").count(), 2);
    }

    #[test]
    fn empty_or_malformed_csv_is_an_error() {
        assert!(scatter_svg("", None, None, "").is_err());
        assert!(scatter_svg("a,b\n", None, None, "").is_err());
        assert!(box_svg("a\n", None, None, "").is_err());
        assert!(scatter_svg("a,b\n1,x\n", Some("a"), Some("b"), "").is_err());
        assert!(scatter_svg("a,b\n1,2,3\n", None, None, "").is_err());
        assert!(scatter_svg("a,b\n1,2\n", Some("c"), None, "").is_err());
    }

    #[test]
    fn box_quartiles_follow_linear_rule() {
        let mut text = String::from("v\n");
        for i in 1..=100 {
            text.push_str(&format!("{i}\n"));
        }
        let svg = box_svg(&text, None, None, "").unwrap();
        assert!(svg.contains(r#"class="q1" data-value="25.75""#));
        assert!(svg.contains(r#"class="median" data-value="50.5""#));
        assert!(svg.contains(r#"class="q3" data-value="75.25""#));
        let s = BoxStats::from_values(&(1..=100).map(f64::from).collect::<Vec<_>>()).unwrap();
        assert!((s.whisker_lo - 5.95).abs() < 1e-12);
        assert!((s.whisker_hi - 95.05).abs() < 1e-12);
    }

    #[test]
    fn box_groups_in_first_appearance_order() {
        let svg = box_svg("g,v\nb,1\na,2\nb,3\n", Some("v"), Some("g"), "").unwrap();
        assert_eq!(svg.matches(r#"class="box""#).count(), 2);
        assert!(svg.find(">b<").unwrap() < svg.find(">a<").unwrap());
    }

    #[test]
    fn labels_are_escaped() {
        let svg = scatter_svg("x<1,y&2\n0,0\n1,1\n", None, None, "a<b").unwrap();
        assert!(svg.contains("x&lt;1") && svg.contains("y&amp;2") && svg.contains("a&lt;b"));
    }
}
