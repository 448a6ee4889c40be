//! Domain data model: minutiae, templates, check-outs and datasets.
//!
//! All coordinates are millimetres. Pixel coordinates only exist at the file
//! boundary and are converted with [`px_to_mm`] during loading.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

const MM_PER_INCH: f64 = 25.4;

/// Converts a pixel distance at `dpi` into millimetres.
pub fn px_to_mm(px: f64, dpi: f64) -> Result<f64> {
    check_dpi(dpi)?;
    Ok(px * MM_PER_INCH / dpi)
}

/// Converts millimetres into pixels at `dpi`.
pub fn mm_to_px(mm: f64, dpi: f64) -> Result<f64> {
    check_dpi(dpi)?;
    Ok(mm * dpi / MM_PER_INCH)
}

fn check_dpi(dpi: f64) -> Result<()> {
    if dpi.is_finite() && dpi > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("dpi must be positive, got {dpi}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinutiaKind {
    RidgeEnding,
    Bifurcation,
    SingularPoint,
    #[default]
    Unknown,
}

impl MinutiaKind {
    /// Unknown is compatible with every kind; otherwise kinds must agree.
    pub fn compatible(self, other: MinutiaKind) -> bool {
        self == MinutiaKind::Unknown || other == MinutiaKind::Unknown || self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minutia {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub kind: MinutiaKind,
}

impl Minutia {
    pub fn new(x: f64, y: f64, kind: MinutiaKind) -> Self {
        Minutia { x, y, kind }
    }

    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImprintKind {
    Rolled,
    Plain,
}

impl ImprintKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ImprintKind::Rolled => "rolled",
            ImprintKind::Plain => "plain",
        }
    }
}

impl fmt::Display for ImprintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Finger positions, numbered 1..=10 in the usual forensic order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Finger {
    RightThumb,
    RightIndex,
    RightMiddle,
    RightRing,
    RightLittle,
    LeftThumb,
    LeftIndex,
    LeftMiddle,
    LeftRing,
    LeftLittle,
}

impl Finger {
    pub const ALL: [Finger; 10] = [
        Finger::RightThumb,
        Finger::RightIndex,
        Finger::RightMiddle,
        Finger::RightRing,
        Finger::RightLittle,
        Finger::LeftThumb,
        Finger::LeftIndex,
        Finger::LeftMiddle,
        Finger::LeftRing,
        Finger::LeftLittle,
    ];

    pub fn position(self) -> u8 {
        Finger::ALL.iter().position(|&f| f == self).unwrap() as u8 + 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Finger::RightThumb => "right_thumb",
            Finger::RightIndex => "right_index",
            Finger::RightMiddle => "right_middle",
            Finger::RightRing => "right_ring",
            Finger::RightLittle => "right_little",
            Finger::LeftThumb => "left_thumb",
            Finger::LeftIndex => "left_index",
            Finger::LeftMiddle => "left_middle",
            Finger::LeftRing => "left_ring",
            Finger::LeftLittle => "left_little",
        }
    }
}

impl fmt::Display for Finger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "M")]
    Male,
    #[serde(rename = "F")]
    Female,
}

impl Sex {
    pub fn code(self) -> &'static str {
        match self {
            Sex::Male => "M",
            Sex::Female => "F",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl std::str::FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "M" | "m" | "male" => Ok(Sex::Male),
            "F" | "f" | "female" => Ok(Sex::Female),
            other => Err(Error::InvalidArgument(format!("unknown sex code {other:?}"))),
        }
    }
}

/// One imprint of one finger. Coordinates are in mm; `dpi` records the
/// acquisition resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub finger: Finger,
    pub imprint: ImprintKind,
    pub dpi: f64,
    pub minutiae: Vec<Minutia>,
}

impl Template {
    pub fn new(finger: Finger, imprint: ImprintKind, dpi: f64, minutiae: Vec<Minutia>) -> Self {
        Template {
            finger,
            imprint,
            dpi,
            minutiae,
        }
    }

    pub fn len(&self) -> usize {
        self.minutiae.len()
    }

    pub fn is_empty(&self) -> bool {
        self.minutiae.is_empty()
    }

    pub fn points(&self) -> Vec<Point> {
        self.minutiae.iter().map(Minutia::point).collect()
    }

    /// Checks the per-template invariants.
    pub fn validate(&self) -> Result<()> {
        if !(self.dpi.is_finite() && self.dpi > 0.0) {
            return Err(Error::Validation(format!("dpi must be positive, got {}", self.dpi)));
        }
        if self.minutiae.len() < 3 {
            return Err(Error::Validation(format!(
                "minutiae count < 3 ({} found)",
                self.minutiae.len()
            )));
        }
        if let Some(m) = self.minutiae.iter().find(|m| !(m.x.is_finite() && m.y.is_finite())) {
            return Err(Error::Validation(format!(
                "non-finite minutia coordinate ({}, {})",
                m.x, m.y
            )));
        }
        Ok(())
    }
}

/// One check-out event of a person: age at acquisition and the imprints taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckoutRecord {
    pub co_index: u32,
    /// Age in decimal years.
    pub age: f64,
    pub templates: Vec<Template>,
}

impl CheckoutRecord {
    pub fn template(&self, finger: Finger, imprint: ImprintKind) -> Option<&Template> {
        self.templates
            .iter()
            .find(|t| t.finger == finger && t.imprint == imprint)
    }

    pub fn fingers(&self) -> BTreeSet<Finger> {
        self.templates.iter().map(|t| t.finger).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Person {
    pub person_id: String,
    pub sex: Sex,
    pub checkouts: Vec<CheckoutRecord>,
}

impl Person {
    pub fn first_checkout(&self) -> Option<&CheckoutRecord> {
        self.checkouts.first()
    }

    pub fn last_checkout(&self) -> Option<&CheckoutRecord> {
        self.checkouts.last()
    }

    /// Fingers with a rolled imprint at every check-out.
    pub fn fingers_at_all_checkouts(&self) -> Vec<Finger> {
        Finger::ALL
            .iter()
            .copied()
            .filter(|&f| {
                !self.checkouts.is_empty()
                    && self
                        .checkouts
                        .iter()
                        .all(|co| co.template(f, ImprintKind::Rolled).is_some())
            })
            .collect()
    }

    /// The finger used for per-person analyses: the right index finger when it
    /// was taken at every check-out, otherwise the lowest-numbered finger that was.
    pub fn marked_finger(&self) -> Option<Finger> {
        let fingers = self.fingers_at_all_checkouts();
        if fingers.contains(&Finger::RightIndex) {
            Some(Finger::RightIndex)
        } else {
            fingers.first().copied()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Minutiae lists are index-aligned across all imprints of the same
    /// person and finger.
    pub correspondence: bool,
    pub persons: Vec<Person>,
}

impl Dataset {
    pub fn person(&self, person_id: &str) -> Option<&Person> {
        self.persons.iter().find(|p| p.person_id == person_id)
    }

    /// Validates every invariant, reporting the first violation with the
    /// offending record.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for person in &self.persons {
            let pid = &person.person_id;
            if !seen.insert(pid.as_str()) {
                return Err(Error::Validation(format!("duplicate person id {pid}")));
            }
            if person.checkouts.is_empty() {
                return Err(Error::Validation(format!("person {pid}: no check-outs")));
            }
            let mut prev: Option<&CheckoutRecord> = None;
            for co in &person.checkouts {
                let at = format!("person {pid}, co {}", co.co_index);
                if !(co.age.is_finite() && co.age > 0.0) {
                    return Err(Error::Validation(format!("{at}: age must be positive, got {}", co.age)));
                }
                if let Some(p) = prev {
                    if co.co_index <= p.co_index {
                        return Err(Error::Validation(format!(
                            "{at}: co_index not strictly increasing (previous {})",
                            p.co_index
                        )));
                    }
                    if co.age <= p.age {
                        return Err(Error::Validation(format!(
                            "{at}: age {} does not increase with co_index (previous age {})",
                            co.age, p.age
                        )));
                    }
                }
                let mut keys = BTreeSet::new();
                for t in &co.templates {
                    t.validate().map_err(|e| match e {
                        Error::Validation(msg) => Error::Validation(format!("{at}, {} {}: {msg}", t.finger, t.imprint)),
                        other => other,
                    })?;
                    if !keys.insert((t.finger, t.imprint)) {
                        return Err(Error::Validation(format!(
                            "{at}: duplicate {} {} imprint",
                            t.finger, t.imprint
                        )));
                    }
                }
                prev = Some(co);
            }
            if self.correspondence {
                for finger in Finger::ALL {
                    let counts: BTreeSet<usize> = person
                        .checkouts
                        .iter()
                        .flat_map(|co| co.templates.iter())
                        .filter(|t| t.finger == finger)
                        .map(Template::len)
                        .collect();
                    if counts.len() > 1 {
                        return Err(Error::Validation(format!(
                            "person {pid}, {finger}: correspondence requires equal minutiae counts, found {counts:?}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn px_to_mm_examples() {
        assert_eq!(px_to_mm(500.0, 500.0).unwrap(), 25.4);
        assert_eq!(px_to_mm(0.0, 500.0).unwrap(), 0.0);
        assert!((px_to_mm(31.5, 400.0).unwrap() - 2.00025).abs() < 1e-12);
        assert!(px_to_mm(1.0, 0.0).is_err());
        assert!(px_to_mm(1.0, -3.0).is_err());
    }

    #[test]
    fn kind_compatibility() {
        use MinutiaKind::*;
        assert!(Unknown.compatible(Bifurcation));
        assert!(RidgeEnding.compatible(Unknown));
        assert!(!RidgeEnding.compatible(Bifurcation));
        assert!(SingularPoint.compatible(SingularPoint));
    }

    #[test]
    fn finger_positions() {
        assert_eq!(Finger::RightThumb.position(), 1);
        assert_eq!(Finger::LeftLittle.position(), 10);
    }
}
