//! Dataset and template files.
//!
//! A dataset file is a single JSON document:
//!
//! ```json
//! {
//!   "format": "fingergrowth-dataset",
//!   "version": 1,
//!   "seed": 7,
//!   "correspondence": true,
//!   "persons": [
//!     { "person_id": "P001", "sex": "M",
//!       "checkouts": [
//!         { "co_index": 1, "age": 11.5,
//!           "templates": [
//!             { "finger": "right_index", "imprint": "rolled", "dpi": 500.0,
//!               "unit": "mm",
//!               "minutiae": [ { "x": 1.25, "y": 3.5, "kind": "bifurcation" } ] } ] } ] } ]
//! }
//! ```
//!
//! `unit` is optional and defaults to `"mm"`; `"px"` coordinates are converted
//! with the template's dpi on load. Files are always written in mm, with
//! shortest round-trip float formatting, so save/load is bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{px_to_mm, CheckoutRecord, Dataset, Finger, ImprintKind, Minutia, Person, Sex, Template};

pub const DATASET_FORMAT: &str = "fingergrowth-dataset";
pub const TEMPLATE_FORMAT: &str = "fingergrowth-template";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum CoordUnit {
    #[default]
    Mm,
    Px,
}

#[derive(Serialize, Deserialize)]
struct TemplateRecord {
    finger: Finger,
    imprint: ImprintKind,
    dpi: f64,
    #[serde(default)]
    unit: CoordUnit,
    minutiae: Vec<Minutia>,
}

impl TemplateRecord {
    fn from_template(t: &Template) -> Self {
        TemplateRecord {
            finger: t.finger,
            imprint: t.imprint,
            dpi: t.dpi,
            unit: CoordUnit::Mm,
            minutiae: t.minutiae.clone(),
        }
    }

    fn into_template(self) -> Result<Template> {
        let minutiae = match self.unit {
            CoordUnit::Mm => self.minutiae,
            CoordUnit::Px => self
                .minutiae
                .into_iter()
                .map(|m| Ok(Minutia::new(px_to_mm(m.x, self.dpi)?, px_to_mm(m.y, self.dpi)?, m.kind)))
                .collect::<Result<_>>()
                .map_err(|e| Error::Validation(e.to_string()))?,
        };
        Ok(Template::new(self.finger, self.imprint, self.dpi, minutiae))
    }
}

#[derive(Serialize, Deserialize)]
struct CheckoutFile {
    co_index: u32,
    age: f64,
    templates: Vec<TemplateRecord>,
}

#[derive(Serialize, Deserialize)]
struct PersonFile {
    person_id: String,
    sex: Sex,
    checkouts: Vec<CheckoutFile>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    correspondence: bool,
    persons: Vec<PersonFile>,
}

#[derive(Serialize, Deserialize)]
struct TemplateFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    template: TemplateRecord,
}

fn check_header(format: &str, version: u32, expected: &str) -> Result<()> {
    if format != expected {
        return Err(Error::Parse(format!("expected format {expected:?}, found {format:?}")));
    }
    if version != VERSION {
        return Err(Error::Parse(format!("unsupported {expected} version {version}")));
    }
    Ok(())
}

/// Parses and validates a dataset document.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    check_header(&file.format, file.version, DATASET_FORMAT)?;
    let persons = file
        .persons
        .into_iter()
        .map(|p| {
            let checkouts = p
                .checkouts
                .into_iter()
                .map(|c| {
                    Ok(CheckoutRecord {
                        co_index: c.co_index,
                        age: c.age,
                        templates: c
                            .templates
                            .into_iter()
                            .map(TemplateRecord::into_template)
                            .collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?;
            Ok(Person {
                person_id: p.person_id,
                sex: p.sex,
                checkouts,
            })
        })
        .collect::<Result<_>>()?;
    let dataset = Dataset {
        correspondence: file.correspondence,
        persons,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn dataset_to_string(dataset: &Dataset, seed: Option<u64>) -> String {
    let file = DatasetFile {
        format: DATASET_FORMAT.to_string(),
        version: VERSION,
        seed,
        correspondence: dataset.correspondence,
        persons: dataset
            .persons
            .iter()
            .map(|p| PersonFile {
                person_id: p.person_id.clone(),
                sex: p.sex,
                checkouts: p
                    .checkouts
                    .iter()
                    .map(|c| CheckoutFile {
                        co_index: c.co_index,
                        age: c.age,
                        templates: c.templates.iter().map(TemplateRecord::from_template).collect(),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("dataset serializes");
    s.push('\n');
    s
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text)
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset, seed: Option<u64>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_string(dataset, seed)).map_err(|e| Error::io(path, e))
}

pub fn parse_template(text: &str) -> Result<Template> {
    let file: TemplateFile = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    check_header(&file.format, file.version, TEMPLATE_FORMAT)?;
    let t = file.template.into_template()?;
    t.validate()?;
    Ok(t)
}

pub fn template_to_string(t: &Template) -> String {
    let file = TemplateFile {
        format: TEMPLATE_FORMAT.to_string(),
        version: VERSION,
        template: TemplateRecord::from_template(t),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("template serializes");
    s.push('\n');
    s
}

pub fn load_template(path: impl AsRef<Path>) -> Result<Template> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_template(&text)
}

pub fn save_template(path: impl AsRef<Path>, t: &Template) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, template_to_string(t)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(ages: (f64, f64), counts: (usize, usize)) -> String {
        let mins = |n: usize| {
            (0..n)
                .map(|i| format!(r#"{{"x": {}.5, "y": {}.25}}"#, i, i * i))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            r#"{{"format": "fingergrowth-dataset", "version": 1, "correspondence": true,
              "persons": [{{"person_id": "P1", "sex": "F", "checkouts": [
                {{"co_index": 1, "age": {}, "templates": [{{"finger": "right_index", "imprint": "rolled", "dpi": 500, "minutiae": [{}]}}]}},
                {{"co_index": 2, "age": {}, "templates": [{{"finger": "right_index", "imprint": "rolled", "dpi": 500, "minutiae": [{}]}}]}}
              ]}}]}}"#,
            ages.0,
            mins(counts.0),
            ages.1,
            mins(counts.1)
        )
    }

    #[test]
    fn minimal_dataset_loads() {
        let d = parse_dataset(&minimal((10.0, 20.0), (3, 3))).unwrap();
        assert!(d.correspondence);
        assert_eq!(d.persons.len(), 1);
        assert_eq!(d.persons[0].checkouts.len(), 2);
        let t = &d.persons[0].checkouts[0].templates[0];
        assert_eq!(t.minutiae[1].kind, crate::types::MinutiaKind::Unknown);
    }

    #[test]
    fn too_few_minutiae_rejected() {
        let err = parse_dataset(&minimal((10.0, 20.0), (3, 2))).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("minutiae count < 3")),
            "{err}"
        );
    }

    #[test]
    fn decreasing_ages_rejected() {
        let err = parse_dataset(&minimal((20.0, 10.0), (3, 3))).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("does not increase")),
            "{err}"
        );
    }

    #[test]
    fn unequal_counts_break_correspondence() {
        let err = parse_dataset(&minimal((10.0, 20.0), (3, 4))).unwrap_err();
        assert!(
            matches!(err, Error::Validation(ref m) if m.contains("correspondence")),
            "{err}"
        );
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_dataset("{ not json"), Err(Error::Parse(_))));
    }

    #[test]
    fn pixel_units_converted_on_load() {
        let text = r#"{"format": "fingergrowth-template", "version": 1,
            "finger": "left_thumb", "imprint": "plain", "dpi": 500, "unit": "px",
            "minutiae": [{"x": 500, "y": 0}, {"x": 0, "y": 250}, {"x": 10, "y": 10, "kind": "ridge_ending"}]}"#;
        let t = parse_template(text).unwrap();
        assert_eq!(t.minutiae[0].x, 25.4);
        assert_eq!(t.minutiae[1].y, 12.7);
        let back = parse_template(&template_to_string(&t)).unwrap();
        assert_eq!(back, t);
    }
}
