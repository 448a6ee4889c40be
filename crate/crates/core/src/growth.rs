//! Growth charts and growth-driven rescaling of templates.
//!
//! A chart holds per-sex median stature knots by age in months; lookups
//! interpolate linearly and clamp outside the tabulated range. The scale factor
//! between two ages is the ratio of median statures.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{barycenter, Point};
use crate::types::{Minutia, Sex, Template};

/// Built-in stature-for-age chart in CDC layout. The values are a smooth,
/// monotone synthetic table of plausible median statures (24–240.5 months),
/// not a copy of any published chart.
pub const FIXTURE_CHART: &str = include_str!("../data/stature_for_age_fixture.csv");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knot {
    pub age_months: f64,
    pub median_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthChart {
    male: Vec<Knot>,
    female: Vec<Knot>,
}

fn check_knots(sex: Sex, knots: &[Knot]) -> Result<()> {
    if knots.is_empty() {
        let code = if sex == Sex::Male { 1 } else { 2 };
        return Err(Error::Validation(format!("missing sex {code}")));
    }
    for w in knots.windows(2) {
        if w[1].age_months <= w[0].age_months {
            return Err(Error::Validation(format!(
                "sex {sex}: Agemos not strictly increasing at {} -> {}",
                w[0].age_months, w[1].age_months
            )));
        }
        if w[1].median_cm < w[0].median_cm {
            return Err(Error::Validation(format!(
                "sex {sex}: median stature decreases at {} months",
                w[1].age_months
            )));
        }
    }
    if let Some(k) = knots
        .iter()
        .find(|k| !(k.median_cm.is_finite() && k.median_cm > 0.0 && k.age_months.is_finite()))
    {
        return Err(Error::Validation(format!(
            "sex {sex}: invalid knot ({}, {})",
            k.age_months, k.median_cm
        )));
    }
    Ok(())
}

impl GrowthChart {
    pub fn new(male: Vec<Knot>, female: Vec<Knot>) -> Result<Self> {
        check_knots(Sex::Male, &male)?;
        check_knots(Sex::Female, &female)?;
        Ok(GrowthChart { male, female })
    }

    /// The chart shipped with the crate.
    pub fn fixture() -> Self {
        GrowthChart::parse(FIXTURE_CHART).expect("fixture chart is valid")
    }

    pub fn knots(&self, sex: Sex) -> &[Knot] {
        match sex {
            Sex::Male => &self.male,
            Sex::Female => &self.female,
        }
    }

    /// Parses a chart in CDC stature-for-age layout: a header naming at least
    /// `Sex`, `Agemos` and `M`, then one row per knot. The separator (comma,
    /// semicolon or tab) is taken from the header line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty chart file".into()))?;
        let sep = [',', ';', '\t']
            .into_iter()
            .max_by_key(|&c| header.matches(c).count())
            .unwrap();
        let names: Vec<String> = header
            .split(sep)
            .map(|h| h.trim().trim_matches('"').to_ascii_lowercase())
            .collect();
        let col = |name: &str| {
            names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::Parse(format!("chart header lacks column {name:?}")))
        };
        let (sex_col, age_col, m_col) = (col("sex")?, col("agemos")?, col("m")?);

        let (mut male, mut female) = (Vec::new(), Vec::new());
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(sep).map(|f| f.trim().trim_matches('"')).collect();
            // Some published chart files repeat the header part-way through.
            if fields.get(sex_col).is_some_and(|f| f.eq_ignore_ascii_case("sex")) {
                continue;
            }
            let get = |i: usize| -> Result<f64> {
                fields
                    .get(i)
                    .and_then(|f| f.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse(format!("line {}: unparseable row {line:?}", lineno + 1)))
            };
            let knot = Knot {
                age_months: get(age_col)?,
                median_cm: get(m_col)?,
            };
            match get(sex_col)? {
                1.0 => male.push(knot),
                2.0 => female.push(knot),
                s => {
                    return Err(Error::Parse(format!(
                        "line {}: sex code {s} not in {{1, 2}}",
                        lineno + 1
                    )))
                }
            }
        }
        GrowthChart::new(male, female)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GrowthChart::parse(&text)
    }

    /// Median stature (cm) at `age` years, linearly interpolated in months and
    /// clamped to the first/last knot outside the tabulated range.
    pub fn median_stature(&self, age: f64, sex: Sex) -> f64 {
        let knots = self.knots(sex);
        let months = age * 12.0;
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if months <= first.age_months {
            return first.median_cm;
        }
        if months >= last.age_months {
            return last.median_cm;
        }
        let hi = knots.partition_point(|k| k.age_months <= months);
        let (a, b) = (knots[hi - 1], knots[hi]);
        if months == a.age_months {
            return a.median_cm;
        }
        let t = (months - a.age_months) / (b.age_months - a.age_months);
        a.median_cm + t * (b.median_cm - a.median_cm)
    }

    /// Median stature at the last tabulated age.
    pub fn adult_stature(&self, sex: Sex) -> f64 {
        self.knots(sex).last().unwrap().median_cm
    }

    /// Growth factor between ages `from` and `to` (years).
    pub fn scale_factor(&self, from: f64, to: f64, sex: Sex) -> Result<ScaleFactor> {
        if !(from > 0.0 && to > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ages must be positive, got {from} and {to}"
            )));
        }
        Ok(ScaleFactor {
            value: self.median_stature(to, sex) / self.median_stature(from, sex),
            age_from: from,
            age_to: to,
            sex,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleFactor {
    pub value: f64,
    pub age_from: f64,
    pub age_to: f64,
    pub sex: Sex,
}

impl ScaleFactor {
    /// A factor not derived from a chart (e.g. a manual override).
    pub fn fixed(value: f64, sex: Sex) -> Self {
        ScaleFactor {
            value,
            age_from: f64::NAN,
            age_to: f64::NAN,
            sex,
        }
    }

    pub fn with_value(self, value: f64) -> Self {
        ScaleFactor { value, ..self }
    }
}

/// Scales every minutia about the template barycenter. Metadata is kept.
pub fn rescale_template(t: &Template, f: &ScaleFactor) -> Result<Template> {
    let k = f.value;
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "scale factor must be positive, got {k}"
        )));
    }
    if k == 1.0 {
        return Ok(t.clone());
    }
    let c = barycenter(&t.points());
    let minutiae = t
        .minutiae
        .iter()
        .map(|m| {
            let p = c + (Point::new(m.x, m.y) - c) * k;
            Minutia::new(p.x, p.y, m.kind)
        })
        .collect();
    Ok(Template { minutiae, ..t.clone() })
}

/// The DPI to declare so that pixel coordinates are magnified by `f`.
pub fn rescale_dpi(dpi: f64, f: &ScaleFactor) -> Result<f64> {
    if !(dpi > 0.0 && f.value > 0.0) {
        return Err(Error::InvalidArgument("dpi and scale factor must be positive".into()));
    }
    Ok(dpi / f.value)
}

/// `count` factors spaced evenly between `(1 - p)·f` and `(1 + p)·f`, where
/// `p = spread_pct / 100`. Three factors at 5 % give `{0.95f, f, 1.05f}`.
pub fn factor_set(f: &ScaleFactor, spread_pct: f64, count: usize) -> Result<Vec<ScaleFactor>> {
    if count == 0 || count.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("factor count must be odd, got {count}")));
    }
    if !(0.0..100.0).contains(&spread_pct) {
        return Err(Error::InvalidArgument(format!(
            "spread percentage must be in [0, 100), got {spread_pct}"
        )));
    }
    let p = spread_pct / 100.0;
    let half = (count / 2) as f64;
    Ok((0..count)
        .map(|i| {
            let q = if count == 1 { 0.0 } else { (i as f64 - half) / half };
            let value = if q == 0.0 { f.value } else { f.value * (1.0 + p * q) };
            f.with_value(value)
        })
        .collect())
}
