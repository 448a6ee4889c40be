//! Synthetic longitudinal fingerprint data with known growth and noise.
//!
//! Every random draw comes from a ChaCha8 stream keyed by the seed and the
//! position of the draw (person, check-out, finger, imprint), so generation is
//! reproducible, independent of thread count, and adding persons leaves the
//! earlier persons unchanged.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{barycenter, spread, Point};
use crate::growth::GrowthChart;
use crate::types::{CheckoutRecord, Dataset, Finger, ImprintKind, Minutia, MinutiaKind, Person, Sex, Template};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_persons: usize,
    /// Inclusive range of check-outs per person.
    pub cos_per_person: (usize, usize),
    /// Inclusive range of minutiae per finger.
    pub minutiae_per_finger: (usize, usize),
    pub sigma_eta: f64,
    pub sigma_eps: f64,
    /// Per-coordinate positional noise, mm. Applied after scaling, so it does
    /// not grow with age. The default puts the rolled-vs-plain SMSD near 0.39 mm.
    pub jitter_mm: f64,
    pub dropout_prob: f64,
    /// RMS distance of minutiae from their barycenter at adult median stature, mm.
    pub base_size_mm: f64,
    /// Log-scale std of the per-person size proportionality.
    pub person_size_sd: f64,
    /// Uniform range of the age at the first check-out, years.
    pub first_age: (f64, f64),
    /// Uniform range of the age at the last check-out, years.
    pub last_age: (f64, f64),
    /// Probability that a person is male.
    pub male_fraction: f64,
    /// Number of persons (taken first) with only the right index finger recorded.
    pub simplified_persons: usize,
    /// Relative x-stretch of the latent configuration per year since the first
    /// check-out (anisotropic growth); 0 for isotropic growth.
    pub anisotropy: f64,
    pub dpi: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_persons: 48,
            cos_per_person: (2, 6),
            minutiae_per_finger: (8, 20),
            sigma_eta: 0.0224,
            sigma_eps: 0.0225,
            jitter_mm: 0.2,
            dropout_prob: 0.0,
            base_size_mm: 4.0,
            person_size_sd: 0.05,
            first_age: (6.0, 15.0),
            last_age: (17.0, 34.0),
            male_fraction: 35.0 / 48.0,
            simplified_persons: 2,
            anisotropy: 0.0,
            dpi: 500.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        for (name, v) in [
            ("sigma_eta", self.sigma_eta),
            ("sigma_eps", self.sigma_eps),
            ("jitter_mm", self.jitter_mm),
            ("person_size_sd", self.person_size_sd),
            ("anisotropy", self.anisotropy),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be a non-negative number, got {v}"));
            }
        }
        for (name, v) in [
            ("dropout_prob", self.dropout_prob),
            ("male_fraction", self.male_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if !(self.base_size_mm.is_finite() && self.base_size_mm > 0.0) {
            return bad(format!("base_size_mm must be positive, got {}", self.base_size_mm));
        }
        if !(self.dpi.is_finite() && self.dpi > 0.0) {
            return bad(format!("dpi must be positive, got {}", self.dpi));
        }
        if self.n_persons == 0 {
            return bad("n_persons must be at least 1".into());
        }
        let (c0, c1) = self.cos_per_person;
        if c0 < 2 || c0 > c1 {
            return bad(format!("check-out range must satisfy 2 <= min <= max, got {c0}..{c1}"));
        }
        let (m0, m1) = self.minutiae_per_finger;
        if m0 < 3 || m0 > m1 {
            return bad(format!("minutiae range must satisfy 3 <= min <= max, got {m0}..{m1}"));
        }
        let (f0, f1) = self.first_age;
        let (l0, l1) = self.last_age;
        if !(f0 > 0.0 && f0 <= f1 && l0 <= l1 && l1.is_finite()) {
            return bad(format!(
                "age ranges must be positive and non-empty, got {f0}..{f1} and {l0}..{l1}"
            ));
        }
        if f1 >= l0 {
            return bad(format!(
                "first-age range {f0}..{f1} must lie below last-age range {l0}..{l1}"
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateTruth {
    pub finger: Finger,
    pub imprint: ImprintKind,
    pub eps: f64,
    /// Intended spread of the emitted configuration, mm.
    pub size_mm: f64,
    pub rotation: f64,
    pub translation: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckoutTruth {
    pub co_index: u32,
    pub age: f64,
    pub eta: f64,
    pub templates: Vec<TemplateTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerTruth {
    pub finger: Finger,
    /// Centered latent configuration with unit spread.
    pub latent: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTruth {
    pub person_id: String,
    pub sex: Sex,
    /// Multiplicative size proportionality `c_i`.
    pub size_proportionality: f64,
    pub fingers: Vec<FingerTruth>,
    pub checkouts: Vec<CheckoutTruth>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub config: SynthConfig,
    pub persons: Vec<PersonTruth>,
}

impl GroundTruth {
    pub fn person(&self, id: &str) -> Option<&PersonTruth> {
        self.persons.iter().find(|p| p.person_id == id)
    }
}

const TAG_PERSON: u64 = 1;
const TAG_LATENT: u64 = 2;
const TAG_CHECKOUT: u64 = 3;
const TAG_IMPRINT: u64 = 4;
const TAG_DISTRACTOR: u64 = 5;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for the draw site identified by `path`.
fn stream(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed);
    for &p in path {
        h = splitmix(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).unwrap().sample(rng)
}

/// Uniform points in the unit disk, centered and scaled to unit spread.
fn latent_config(rng: &mut ChaCha8Rng, n: usize) -> Vec<(Point, MinutiaKind)> {
    let raw: Vec<(Point, MinutiaKind)> = (0..n)
        .map(|_| {
            let r = rng.gen::<f64>().sqrt();
            let a = 2.0 * PI * rng.gen::<f64>();
            let kind = if rng.gen_bool(0.5) {
                MinutiaKind::RidgeEnding
            } else {
                MinutiaKind::Bifurcation
            };
            (Point::new(r * a.cos(), r * a.sin()), kind)
        })
        .collect();
    let pts: Vec<Point> = raw.iter().map(|r| r.0).collect();
    let (c, s) = (barycenter(&pts), spread(&pts));
    raw.into_iter().map(|(p, k)| ((p - c) * (1.0 / s), k)).collect()
}

/// Centers `points` on `center` and scales them to spread `size`.
fn renormalize(points: &mut [Point], center: Point, size: f64) {
    let (c, s) = (barycenter(points), spread(points));
    for p in points.iter_mut() {
        *p = center + (*p - c) * (size / s);
    }
}

struct Imprint<'a> {
    latent: &'a [(Point, MinutiaKind)],
    stretch: f64,
    size: f64,
}

/// Scale, jitter, rigid motion and dropout of one imprint.
fn render(
    rng: &mut ChaCha8Rng,
    imp: &Imprint,
    cfg: &SynthConfig,
    finger: Finger,
    kind: ImprintKind,
) -> (Template, f64, Point) {
    let mut pts: Vec<Point> = imp
        .latent
        .iter()
        .map(|(p, _)| Point::new(p.x * imp.stretch, p.y))
        .collect();
    renormalize(&mut pts, Point::ORIGIN, imp.size);
    if cfg.jitter_mm > 0.0 {
        for p in pts.iter_mut() {
            p.x += normal(rng, cfg.jitter_mm);
            p.y += normal(rng, cfg.jitter_mm);
        }
        // Jitter distorts shape only; the intended size is kept exactly.
        renormalize(&mut pts, Point::ORIGIN, imp.size);
    }
    let rotation = (rng.gen::<f64>() * 2.0 - 1.0) * PI / 6.0;
    let translation = Point::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    let mut keep: Vec<bool> = (0..pts.len())
        .map(|_| cfg.dropout_prob == 0.0 || !rng.gen_bool(cfg.dropout_prob))
        .collect();
    let mut kept = keep.iter().filter(|&&k| k).count();
    for k in keep.iter_mut() {
        if kept >= 3 {
            break;
        }
        if !*k {
            *k = true;
            kept += 1;
        }
    }
    let minutiae = pts
        .iter()
        .zip(imp.latent)
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|((p, (_, mk)), _)| {
            let q = p.rotated(rotation) + translation;
            Minutia::new(q.x, q.y, *mk)
        })
        .collect();
    (Template::new(finger, kind, cfg.dpi, minutiae), rotation, translation)
}

fn generate_person(i: usize, cfg: &SynthConfig, chart: &GrowthChart) -> (Person, PersonTruth) {
    let seed = cfg.seed;
    let pi = i as u64;
    let mut rng = stream(seed, &[TAG_PERSON, pi]);
    let sex = if rng.gen_bool(cfg.male_fraction) {
        Sex::Male
    } else {
        Sex::Female
    };
    let c = normal(&mut rng, cfg.person_size_sd).exp();
    let n_cos = rng.gen_range(cfg.cos_per_person.0..=cfg.cos_per_person.1);
    let first = rng.gen_range(cfg.first_age.0..=cfg.first_age.1);
    let last = rng.gen_range(cfg.last_age.0..=cfg.last_age.1);
    let mut ages = vec![first];
    let mut mid: Vec<f64> = (0..n_cos - 2).map(|_| rng.gen_range(first..last)).collect();
    mid.sort_by(f64::total_cmp);
    mid.dedup();
    ages.extend(mid.into_iter().filter(|&a| a > first));
    ages.push(last);

    let fingers: Vec<Finger> = if i < cfg.simplified_persons {
        vec![Finger::RightIndex]
    } else {
        Finger::ALL.to_vec()
    };
    let latents: Vec<Vec<(Point, MinutiaKind)>> = fingers
        .iter()
        .map(|&f| {
            let mut r = stream(seed, &[TAG_LATENT, pi, f.position() as u64]);
            let n = r.gen_range(cfg.minutiae_per_finger.0..=cfg.minutiae_per_finger.1);
            latent_config(&mut r, n)
        })
        .collect();

    let adult = chart.adult_stature(sex);
    let mut checkouts = Vec::with_capacity(ages.len());
    let mut truths = Vec::with_capacity(ages.len());
    for (j, &age) in ages.iter().enumerate() {
        let co = j as u64 + 1;
        let eta = normal(&mut stream(seed, &[TAG_CHECKOUT, pi, co]), cfg.sigma_eta);
        let g = chart.median_stature(age, sex);
        let stretch = if cfg.anisotropy > 0.0 {
            (1.0 + cfg.anisotropy).powf(age - first)
        } else {
            1.0
        };
        let mut templates = Vec::new();
        let mut ttruth = Vec::new();
        for (f, latent) in fingers.iter().zip(&latents) {
            for kind in [ImprintKind::Rolled, ImprintKind::Plain] {
                let kind_tag = match kind {
                    ImprintKind::Rolled => 0,
                    ImprintKind::Plain => 1,
                };
                let mut r = stream(seed, &[TAG_IMPRINT, pi, co, f.position() as u64, kind_tag]);
                let eps = normal(&mut r, cfg.sigma_eps);
                let size = cfg.base_size_mm * (latent.len() as f64).sqrt() * c * (g / adult) * (eta + eps).exp();
                let imp = Imprint { latent, stretch, size };
                let (t, rotation, translation) = render(&mut r, &imp, cfg, *f, kind);
                templates.push(t);
                ttruth.push(TemplateTruth {
                    finger: *f,
                    imprint: kind,
                    eps,
                    size_mm: size,
                    rotation,
                    translation: (translation.x, translation.y),
                });
            }
        }
        checkouts.push(CheckoutRecord {
            co_index: co as u32,
            age,
            templates,
        });
        truths.push(CheckoutTruth {
            co_index: co as u32,
            age,
            eta,
            templates: ttruth,
        });
    }
    let person_id = format!("P{:03}", i + 1);
    let truth = PersonTruth {
        person_id: person_id.clone(),
        sex,
        size_proportionality: c,
        fingers: fingers
            .iter()
            .zip(&latents)
            .map(|(&finger, l)| FingerTruth {
                finger,
                latent: l.iter().map(|(p, _)| (p.x, p.y)).collect(),
            })
            .collect(),
        checkouts: truths,
    };
    (
        Person {
            person_id,
            sex,
            checkouts,
        },
        truth,
    )
}

/// Longitudinal dataset and the ground truth it was drawn from.
pub fn generate(cfg: &SynthConfig, chart: &GrowthChart) -> Result<(Dataset, GroundTruth)> {
    cfg.validate()?;
    let (persons, truths): (Vec<Person>, Vec<PersonTruth>) = (0..cfg.n_persons)
        .into_par_iter()
        .map(|i| generate_person(i, cfg, chart))
        .unzip();
    let dataset = Dataset {
        correspondence: cfg.dropout_prob == 0.0,
        persons,
    };
    dataset.validate()?;
    Ok((
        dataset,
        GroundTruth {
            seed: cfg.seed,
            config: cfg.clone(),
            persons: truths,
        },
    ))
}

/// `n` independent adult rolled right-index templates.
pub fn distractor_gallery(n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<Template>> {
    cfg.validate()?;
    Ok((0..n as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, &[TAG_DISTRACTOR, k]);
            let m = rng.gen_range(cfg.minutiae_per_finger.0..=cfg.minutiae_per_finger.1);
            let latent = latent_config(&mut rng, m);
            let log_size = normal(&mut rng, cfg.person_size_sd)
                + normal(&mut rng, cfg.sigma_eta)
                + normal(&mut rng, cfg.sigma_eps);
            let size = cfg.base_size_mm * (m as f64).sqrt() * log_size.exp();
            let imp = Imprint {
                latent: &latent,
                stretch: 1.0,
                size,
            };
            render(&mut rng, &imp, cfg, Finger::RightIndex, ImprintKind::Rolled).0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rigid_align;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            n_persons: 6,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let chart = GrowthChart::fixture();
        let a = generate(&small(3), &chart).unwrap();
        let b = generate(&small(3), &chart).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(4), &chart).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn adding_persons_keeps_earlier_ones() {
        let chart = GrowthChart::fixture();
        let (a, _) = generate(&small(9), &chart).unwrap();
        let (b, _) = generate(
            &SynthConfig {
                n_persons: 9,
                ..small(9)
            },
            &chart,
        )
        .unwrap();
        assert_eq!(a.persons[..], b.persons[..6]);
    }

    #[test]
    fn noise_free_spread_and_motion() {
        let chart = GrowthChart::fixture();
        let cfg = SynthConfig {
            sigma_eta: 0.0,
            sigma_eps: 0.0,
            jitter_mm: 0.0,
            ..small(1)
        };
        let (d, truth) = generate(&cfg, &chart).unwrap();
        for (p, pt) in d.persons.iter().zip(&truth.persons) {
            for (co, ct) in p.checkouts.iter().zip(&pt.checkouts) {
                for (t, tt) in co.templates.iter().zip(&ct.templates) {
                    assert!((spread(&t.points()) - tt.size_mm).abs() < 1e-9);
                    let latent = &pt.fingers.iter().find(|f| f.finger == t.finger).unwrap().latent;
                    let src: Vec<Point> = latent.iter().map(|&(x, y)| Point::new(x, y) * tt.size_mm).collect();
                    let (rt, s) = rigid_align(&src, &t.points()).unwrap();
                    assert!(s < 1e-9);
                    assert!((rt.rotation - tt.rotation).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn invalid_configs() {
        let chart = GrowthChart::fixture();
        for cfg in [
            SynthConfig {
                sigma_eta: -1.0,
                ..Default::default()
            },
            SynthConfig {
                dropout_prob: 1.5,
                ..Default::default()
            },
            SynthConfig {
                cos_per_person: (3, 2),
                ..Default::default()
            },
            SynthConfig {
                minutiae_per_finger: (2, 5),
                ..Default::default()
            },
            SynthConfig {
                first_age: (6.0, 20.0),
                ..Default::default()
            },
        ] {
            assert!(matches!(generate(&cfg, &chart), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn dropout_keeps_three_and_clears_correspondence() {
        let chart = GrowthChart::fixture();
        let cfg = SynthConfig {
            dropout_prob: 0.95,
            ..small(2)
        };
        let (d, _) = generate(&cfg, &chart).unwrap();
        assert!(!d.correspondence);
        assert!(d
            .persons
            .iter()
            .flat_map(|p| &p.checkouts)
            .flat_map(|c| &c.templates)
            .all(|t| t.len() >= 3));
    }

    #[test]
    fn distractors() {
        let cfg = SynthConfig::default();
        assert!(distractor_gallery(0, &cfg, 1).unwrap().is_empty());
        let a = distractor_gallery(20, &cfg, 1).unwrap();
        assert_eq!(a, distractor_gallery(20, &cfg, 1).unwrap());
        assert_ne!(a[0], a[1]);
    }
}
