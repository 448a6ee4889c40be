//! Alignment, verification and identification experiments.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::rigid_align;
use crate::growth::{factor_set, rescale_template, GrowthChart, ScaleFactor};
use crate::matcher::{match_prepared, match_prepared_at_least, MatchParams, Normalizer, PreparedTemplate};
use crate::stats::{median, spearman};
use crate::types::{Dataset, Finger, ImprintKind, Sex, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unscaled,
    Rescaled,
    MultiFactor,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Unscaled, Mode::Rescaled, Mode::MultiFactor];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unscaled => "unscaled",
            Mode::Rescaled => "rescaled",
            Mode::MultiFactor => "multi_factor",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unscaled" => Ok(Mode::Unscaled),
            "rescaled" => Ok(Mode::Rescaled),
            "multi-factor" | "multi_factor" => Ok(Mode::MultiFactor),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?}"))),
        }
    }
}

/// Matcher configurations and factor-set shape shared by the protocols.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    /// One entry per matcher; several are normalized and fused by the sum rule.
    pub matchers: Vec<MatchParams>,
    pub factor_count: usize,
    pub spread_pct: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            matchers: vec![MatchParams::default()],
            factor_count: 3,
            spread_pct: 5.0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.matchers.is_empty() {
            return Err(Error::InvalidArgument(
                "at least one matcher configuration is required".into(),
            ));
        }
        for m in &self.matchers {
            m.validate()?;
        }
        factor_set(&ScaleFactor::fixed(1.0, Sex::Male), self.spread_pct, self.factor_count)?;
        Ok(())
    }

    pub fn label(&self) -> String {
        self.matchers
            .iter()
            .map(MatchParams::label)
            .collect::<Vec<_>>()
            .join("+")
    }

    /// Factors applied to a reference for `mode`, given its chart factor.
    pub fn factors(&self, mode: Mode, chart_factor: ScaleFactor) -> Result<Vec<ScaleFactor>> {
        match mode {
            Mode::Unscaled => Ok(vec![chart_factor.with_value(1.0)]),
            Mode::Rescaled => Ok(vec![chart_factor]),
            Mode::MultiFactor => factor_set(&chart_factor, self.spread_pct, self.factor_count),
        }
    }
}

// ---------------------------------------------------------------------------
// Alignment

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentRow {
    pub person_id: String,
    pub finger: Finger,
    pub age_first: f64,
    pub age_last: f64,
    pub scale_factor: f64,
    pub smsd_unscaled: f64,
    pub smsd_rescaled: f64,
    pub smsd_control: f64,
    /// `1 - smsd_rescaled / smsd_unscaled`.
    pub relative_reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentReport {
    pub rows: Vec<AlignmentRow>,
    pub median_unscaled: f64,
    pub median_rescaled: f64,
    pub median_control: f64,
    /// `median_unscaled - median_rescaled`, mm.
    pub raw_reduction: f64,
    /// Raw reduction relative to the unscaled median.
    pub relative_reduction: f64,
    /// Raw reduction relative to the unscaled median's excess over control.
    pub excess_reduction: f64,
    /// Rank correlation of per-finger relative reduction with scale factor.
    pub reduction_factor_spearman: f64,
}

/// SMSD of first versus last rolled imprint with and without chart rescaling,
/// and of the last plain control versus the last rolled imprint.
pub fn alignment_experiment(d: &Dataset, chart: &GrowthChart) -> Result<AlignmentReport> {
    if !d.correspondence {
        return Err(Error::Validation(
            "alignment experiment requires a dataset with minutiae correspondence".into(),
        ));
    }
    let mut rows = Vec::new();
    for p in &d.persons {
        let (Some(first), Some(last)) = (p.first_checkout(), p.last_checkout()) else {
            continue;
        };
        if p.checkouts.len() < 2 {
            continue;
        }
        let finger = p
            .marked_finger()
            .ok_or_else(|| Error::Validation(format!("person {}: no finger taken at every check-out", p.person_id)))?;
        let missing = |what: &str| Error::Validation(format!("person {}: missing {what} imprint", p.person_id));
        let t_first = first
            .template(finger, ImprintKind::Rolled)
            .ok_or_else(|| missing("first rolled"))?;
        let t_last = last
            .template(finger, ImprintKind::Rolled)
            .ok_or_else(|| missing("last rolled"))?;
        let t_ctrl = last
            .template(finger, ImprintKind::Plain)
            .ok_or_else(|| missing("last plain control"))?;
        let f = chart.scale_factor(first.age, last.age, p.sex)?;
        let target = t_last.points();
        let unscaled = rigid_align(&t_first.points(), &target)?.1;
        let rescaled = rigid_align(&rescale_template(t_first, &f)?.points(), &target)?.1;
        let control = rigid_align(&t_ctrl.points(), &target)?.1;
        rows.push(AlignmentRow {
            person_id: p.person_id.clone(),
            finger,
            age_first: first.age,
            age_last: last.age,
            scale_factor: f.value,
            smsd_unscaled: unscaled,
            smsd_rescaled: rescaled,
            smsd_control: control,
            relative_reduction: if unscaled > 0.0 { 1.0 - rescaled / unscaled } else { 0.0 },
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation("no person with first and last check-out".into()));
    }
    let col = |f: fn(&AlignmentRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let mu = median(&col(|r| r.smsd_unscaled)).unwrap();
    let mr = median(&col(|r| r.smsd_rescaled)).unwrap();
    let mc = median(&col(|r| r.smsd_control)).unwrap();
    let raw = mu - mr;
    Ok(AlignmentReport {
        median_unscaled: mu,
        median_rescaled: mr,
        median_control: mc,
        raw_reduction: raw,
        relative_reduction: if mu > 0.0 { raw / mu } else { f64::NAN },
        excess_reduction: if mu > mc { raw / (mu - mc) } else { f64::NAN },
        reduction_factor_spearman: spearman(&col(|r| r.relative_reduction), &col(|r| r.scale_factor))
            .unwrap_or(f64::NAN),
        rows,
    })
}

// ---------------------------------------------------------------------------
// Error rates

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Weight `1 / (P · n_p)` for every item of group `p`, where `P` is the number
/// of distinct groups and `n_p` the size of group `p`.
pub fn group_weights<T: Eq + std::hash::Hash>(groups: &[T]) -> Vec<f64> {
    let mut count: HashMap<&T, usize> = HashMap::new();
    for g in groups {
        *count.entry(g).or_default() += 1;
    }
    let p = count.len() as f64;
    groups.iter().map(|g| 1.0 / (p * count[g] as f64)).collect()
}

fn check_weights(scores: &[f64], weights: Option<&[f64]>, what: &str) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument(format!("no {what} scores")));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidArgument(format!("{what} score is {s}")));
    }
    let w = match weights {
        None => vec![1.0; scores.len()],
        Some(w) if w.len() != scores.len() => {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: w.len(),
            })
        }
        Some(w) => w.to_vec(),
    };
    let total: f64 = w.iter().sum();
    if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || !(total > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "{what} weights must be non-negative with positive sum"
        )));
    }
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// FAR and FRR at every distinct score plus a final `+inf` threshold.
/// FAR(t) is the weighted share of impostor scores `>= t`, FRR(t) the weighted
/// share of genuine scores `< t`.
pub fn error_curve(
    genuine: &[f64],
    genuine_weights: Option<&[f64]>,
    impostor: &[f64],
    impostor_weights: Option<&[f64]>,
) -> Result<Vec<ErrorPoint>> {
    let gw = check_weights(genuine, genuine_weights, "genuine")?;
    let iw = check_weights(impostor, impostor_weights, "impostor")?;
    let mut all: Vec<(f64, bool, f64)> = genuine
        .iter()
        .zip(&gw)
        .map(|(&s, &w)| (s, true, w))
        .chain(impostor.iter().zip(&iw).map(|(&s, &w)| (s, false, w)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut curve = Vec::new();
    let (mut gen_below, mut imp_below) = (0.0f64, 0.0f64);
    let mut i = 0;
    while i < all.len() {
        let t = all[i].0;
        curve.push(ErrorPoint {
            threshold: t,
            far: (1.0 - imp_below).max(0.0),
            frr: gen_below,
        });
        while i < all.len() && all[i].0 == t {
            if all[i].1 {
                gen_below += all[i].2;
            } else {
                imp_below += all[i].2;
            }
            i += 1;
        }
    }
    curve.push(ErrorPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(curve)
}

/// Equal error rate from an error curve: the first threshold where
/// FAR - FRR is no longer positive, interpolated linearly with the previous
/// threshold when the difference changes sign strictly.
pub fn eer_from_curve(curve: &[ErrorPoint]) -> f64 {
    let mut prev: Option<&ErrorPoint> = None;
    for pt in curve {
        let d = pt.far - pt.frr;
        if d <= 0.0 {
            return match prev {
                Some(p) if d < 0.0 => {
                    let dp = p.far - p.frr;
                    let lambda = dp / (dp - d);
                    p.far + lambda * (pt.far - p.far)
                }
                _ => (pt.far + pt.frr) / 2.0,
            };
        }
        prev = Some(pt);
    }
    unreachable!("curve ends with FAR 0, FRR 1")
}

/// Unweighted equal error rate.
pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    Ok(eer_from_curve(&error_curve(genuine, None, impostor, None)?))
}

/// Equal error rate with per-score weights (normalized per set).
pub fn eer_weighted(
    genuine: &[f64],
    genuine_weights: &[f64],
    impostor: &[f64],
    impostor_weights: &[f64],
) -> Result<f64> {
    Ok(eer_from_curve(&error_curve(
        genuine,
        Some(genuine_weights),
        impostor,
        Some(impostor_weights),
    )?))
}

// ---------------------------------------------------------------------------
// Verification

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeScores {
    pub person_id: String,
    pub finger: Finger,
    pub age_first: f64,
    pub age_last: f64,
    pub scale_factor: f64,
    pub genuine: f64,
    /// Against every other last-check-out print, in probe order.
    pub impostors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub mode: Mode,
    pub matcher_label: String,
    /// Whether scores were median/MAD normalized and fused.
    pub fused: bool,
    pub probes: Vec<ProbeScores>,
    /// EER with error rates averaged within persons first.
    pub eer: f64,
    /// EER with all attempts pooled.
    pub eer_pooled: f64,
}

impl VerificationReport {
    pub fn genuine_scores(&self) -> Vec<f64> {
        self.probes.iter().map(|p| p.genuine).collect()
    }

    pub fn impostor_scores(&self) -> Vec<f64> {
        self.probes.iter().flat_map(|p| p.impostors.iter().copied()).collect()
    }

    /// Per-person weighted error curve.
    pub fn error_curve(&self) -> Result<Vec<ErrorPoint>> {
        let (gw, iw) = self.weights();
        error_curve(&self.genuine_scores(), Some(&gw), &self.impostor_scores(), Some(&iw))
    }

    fn weights(&self) -> (Vec<f64>, Vec<f64>) {
        let gw = group_weights(&self.probes.iter().map(|p| p.person_id.as_str()).collect::<Vec<_>>());
        let ig: Vec<&str> = self
            .probes
            .iter()
            .flat_map(|p| std::iter::repeat_n(p.person_id.as_str(), p.impostors.len()))
            .collect();
        (gw, group_weights(&ig))
    }
}

struct Probe<'a> {
    person_id: &'a str,
    finger: Finger,
    first: &'a Template,
    last: &'a Template,
    factor: ScaleFactor,
}

fn probes<'a>(d: &'a Dataset, chart: &GrowthChart) -> Result<Vec<Probe<'a>>> {
    let mut out = Vec::new();
    for p in &d.persons {
        if p.checkouts.len() < 2 {
            continue;
        }
        let (first, last) = (p.first_checkout().unwrap(), p.last_checkout().unwrap());
        let factor = chart.scale_factor(first.age, last.age, p.sex)?;
        for finger in Finger::ALL {
            if let (Some(a), Some(b)) = (
                first.template(finger, ImprintKind::Rolled),
                last.template(finger, ImprintKind::Rolled),
            ) {
                out.push(Probe {
                    person_id: &p.person_id,
                    finger,
                    first: a,
                    last: b,
                    factor,
                });
            }
        }
    }
    if out.len() < 2 {
        return Err(Error::Validation(
            "verification needs at least two fingers with rolled imprints at first and last check-out".into(),
        ));
    }
    Ok(out)
}

fn max_score(q: &PreparedTemplate, refs: &[PreparedTemplate], m: &MatchParams) -> f64 {
    refs.iter()
        .map(|r| match_prepared(q, r, m).value)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn prepared_rescaled(templates: &[Template], factor: &ScaleFactor) -> Result<Vec<PreparedTemplate>> {
    templates
        .par_iter()
        .map(|t| PreparedTemplate::new(&rescale_template(t, factor)?))
        .collect()
}

type ModeScores = (Vec<f64>, Vec<Vec<f64>>);

/// Impostor matched counts for one matcher, shared between modes. Row `i`
/// holds query `i` against every other reference in order.
struct ImpostorCache<'a> {
    queries: &'a [PreparedTemplate],
    lasts: &'a [Template],
    m: MatchParams,
    by_factor: HashMap<u64, Vec<Vec<usize>>>,
}

impl ImpostorCache<'_> {
    fn counts(&mut self, factor: &ScaleFactor) -> Result<&Vec<Vec<usize>>> {
        let key = factor.value.to_bits();
        if !self.by_factor.contains_key(&key) {
            let refs = prepared_rescaled(self.lasts, factor)?;
            let m = self.m;
            let matrix = self
                .queries
                .par_iter()
                .enumerate()
                .map(|(i, q)| {
                    (0..refs.len())
                        .filter(|&j| j != i)
                        .map(|j| match_prepared(q, &refs[j], &m).matched_count)
                        .collect()
                })
                .collect();
            self.by_factor.insert(key, matrix);
        }
        Ok(&self.by_factor[&key])
    }

    /// Best count over `factors`. The first factor is matched exhaustively,
    /// the others only where they can improve on the running best.
    fn max_counts(&mut self, factors: &[ScaleFactor]) -> Result<Vec<Vec<usize>>> {
        let mut best = self.counts(&factors[0])?.clone();
        for f in &factors[1..] {
            let refs = prepared_rescaled(self.lasts, f)?;
            let m = self.m;
            best = self
                .queries
                .par_iter()
                .zip(best)
                .enumerate()
                .map(|(i, (q, row))| {
                    (0..refs.len())
                        .filter(|&j| j != i)
                        .zip(row)
                        .map(|(j, c)| match_prepared_at_least(q, &refs[j], &m, c + 1).map_or(c, |s| s.matched_count))
                        .collect()
                })
                .collect();
        }
        Ok(best)
    }

    fn scores(&self, counts: &[Vec<usize>]) -> Vec<Vec<f64>> {
        counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let nq = self.queries[i].len();
                (0..self.queries.len())
                    .filter(|&j| j != i)
                    .zip(row)
                    .map(|(j, &c)| (c * c) as f64 / (nq * self.lasts[j].len()) as f64)
                    .collect()
            })
            .collect()
    }
}

/// Runs the verification protocol for several modes, sharing impostor scores
/// wherever the applied factors coincide.
pub fn run_verification_modes(
    d: &Dataset,
    chart: &GrowthChart,
    modes: &[Mode],
    cfg: &EvalConfig,
) -> Result<Vec<VerificationReport>> {
    cfg.validate()?;
    if d.persons.is_empty() {
        return Err(Error::Validation("empty dataset".into()));
    }
    let probes = probes(d, chart)?;
    let lasts: Vec<Template> = probes.iter().map(|p| p.last.clone()).collect();
    let queries: Vec<PreparedTemplate> = lasts.iter().map(PreparedTemplate::new).collect::<Result<_>>()?;
    let unit = ScaleFactor::fixed(1.0, Sex::Male);

    // Raw [matcher][mode] genuine and impostor scores.
    let mut raw: Vec<Vec<ModeScores>> = Vec::new();
    for m in &cfg.matchers {
        let mut cache = ImpostorCache {
            queries: &queries,
            lasts: &lasts,
            m: *m,
            by_factor: HashMap::new(),
        };
        let mut per_mode = Vec::new();
        for &mode in modes {
            let genuine: Vec<f64> = probes
                .par_iter()
                .zip(&queries)
                .map(|(p, q)| {
                    let refs: Vec<PreparedTemplate> = cfg
                        .factors(mode, p.factor)?
                        .iter()
                        .map(|f| PreparedTemplate::new(&rescale_template(p.first, f)?))
                        .collect::<Result<_>>()?;
                    Ok(max_score(q, &refs, m))
                })
                .collect::<Result<_>>()?;
            // Unit factor first so that its exhaustive counts are reused.
            let mut factors = cfg.factors(mode, unit)?;
            factors.sort_by_key(|f| f.value != 1.0);
            let counts = if factors.len() == 1 {
                cache.counts(&factors[0])?.clone()
            } else {
                cache.max_counts(&factors)?
            };
            per_mode.push((genuine, cache.scores(&counts)));
        }
        raw.push(per_mode);
    }

    let label = cfg.label();
    let mut reports = Vec::new();
    for (mi, &mode) in modes.iter().enumerate() {
        let (genuine, impostors, fused) = if cfg.matchers.len() == 1 {
            let (g, i) = raw[0][mi].clone();
            (g, i, false)
        } else {
            let mut g = vec![0.0; probes.len()];
            let mut imp: Vec<Vec<f64>> = raw[0][mi].1.iter().map(|r| vec![0.0; r.len()]).collect();
            for per_matcher in &raw {
                let (gs, is) = &per_matcher[mi];
                let pooled: Vec<f64> = gs.iter().chain(is.iter().flatten()).copied().collect();
                let norm = Normalizer::fit(&pooled)?;
                for (a, s) in g.iter_mut().zip(gs) {
                    *a += norm.apply(*s);
                }
                for (row, srow) in imp.iter_mut().zip(is) {
                    for (a, s) in row.iter_mut().zip(srow) {
                        *a += norm.apply(*s);
                    }
                }
            }
            (g, imp, true)
        };
        let rows: Vec<ProbeScores> = probes
            .iter()
            .zip(genuine)
            .zip(impostors)
            .map(|((p, g), imp)| ProbeScores {
                person_id: p.person_id.to_string(),
                finger: p.finger,
                age_first: p.factor.age_from,
                age_last: p.factor.age_to,
                scale_factor: p.factor.value,
                genuine: g,
                impostors: imp,
            })
            .collect();
        let mut report = VerificationReport {
            mode,
            matcher_label: label.clone(),
            fused,
            probes: rows,
            eer: f64::NAN,
            eer_pooled: f64::NAN,
        };
        report.eer = eer_from_curve(&report.error_curve()?);
        report.eer_pooled = eer(&report.genuine_scores(), &report.impostor_scores())?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn run_verification(d: &Dataset, chart: &GrowthChart, mode: Mode, cfg: &EvalConfig) -> Result<VerificationReport> {
    Ok(run_verification_modes(d, chart, &[mode], cfg)?.remove(0))
}

// ---------------------------------------------------------------------------
// Identification

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationQuery {
    pub person_id: String,
    pub finger: Finger,
    /// Age at acquisition; juvenile gallery entries are rescaled to it.
    pub age: f64,
    pub template: Template,
}

/// A gallery print with its acquisition age. Juvenile entries carry a person
/// and are rescaled to each query's age; distractors (no person) are adult
/// prints that are never rescaled.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub person_id: Option<String>,
    pub finger: Finger,
    pub sex: Sex,
    pub age: f64,
    pub template: Template,
}

/// Age recorded for distractor entries.
pub const DISTRACTOR_AGE: f64 = 30.0;

/// Last-check-out marked-finger queries and first-check-out gallery entries,
/// followed by the distractors.
pub fn identification_setup(
    d: &Dataset,
    distractors: Vec<Template>,
) -> Result<(Vec<IdentificationQuery>, Vec<GalleryEntry>)> {
    let mut queries = Vec::new();
    let mut gallery = Vec::new();
    for p in &d.persons {
        if p.checkouts.len() < 2 {
            continue;
        }
        let Some(finger) = p.marked_finger() else { continue };
        let (first, last) = (p.first_checkout().unwrap(), p.last_checkout().unwrap());
        queries.push(IdentificationQuery {
            person_id: p.person_id.clone(),
            finger,
            age: last.age,
            template: last.template(finger, ImprintKind::Rolled).unwrap().clone(),
        });
        gallery.push(GalleryEntry {
            person_id: Some(p.person_id.clone()),
            finger,
            sex: p.sex,
            age: first.age,
            template: first.template(finger, ImprintKind::Rolled).unwrap().clone(),
        });
    }
    gallery.extend(distractors.into_iter().map(|t| GalleryEntry {
        person_id: None,
        finger: t.finger,
        sex: Sex::Male,
        age: DISTRACTOR_AGE,
        template: t,
    }));
    Ok((queries, gallery))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryRank {
    pub person_id: String,
    pub finger: Finger,
    pub genuine_score: f64,
    pub rank: usize,
    /// True rank exceeds the cap; `rank` is the cap plus one.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationReport {
    pub mode: Mode,
    pub matcher_label: String,
    pub gallery_size: usize,
    pub rank_cap: Option<usize>,
    pub queries: Vec<QueryRank>,
    pub top1_rate: f64,
    pub top3_rate: f64,
}

/// Rank of each query's genuine entry among all gallery scores. Juvenile
/// entries are rescaled from their own age and sex to the query's age
/// according to `mode`; distractors are matched as recorded. Ties with
/// non-genuine entries count against the genuine. With `rank_cap = Some(k)` the
/// gallery scan stops once the rank is known to exceed `k`, and such ranks are
/// reported as `k + 1` with `censored` set. The cap must be at least 3 so that
/// the reported top-1 and top-3 rates stay exact.
pub fn run_identification(
    queries: &[IdentificationQuery],
    gallery: &[GalleryEntry],
    chart: &GrowthChart,
    mode: Mode,
    params: &MatchParams,
    rank_cap: Option<usize>,
) -> Result<IdentificationReport> {
    params.validate()?;
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no identification queries".into()));
    }
    if rank_cap.is_some_and(|k| k < 3) {
        return Err(Error::InvalidArgument("rank cap must be at least 3".into()));
    }
    let cfg = EvalConfig {
        matchers: vec![*params],
        ..Default::default()
    };
    let genuine_index: Vec<usize> = queries
        .iter()
        .map(|q| {
            let hits: Vec<usize> = gallery
                .iter()
                .enumerate()
                .filter(|(_, e)| e.person_id.as_deref() == Some(q.person_id.as_str()) && e.finger == q.finger)
                .map(|(i, _)| i)
                .collect();
            match hits[..] {
                [i] => Ok(i),
                [] => Err(Error::Validation(format!(
                    "query {} {} has no genuine gallery entry",
                    q.person_id, q.finger
                ))),
                _ => Err(Error::Validation(format!(
                    "query {} {} has several genuine gallery entries",
                    q.person_id, q.finger
                ))),
            }
        })
        .collect::<Result<_>>()?;

    let fixed: Vec<Option<Vec<PreparedTemplate>>> = gallery
        .par_iter()
        .map(|e| match e.person_id {
            None => PreparedTemplate::new(&e.template).map(|t| Some(vec![t])),
            Some(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    let juvenile: Vec<usize> = (0..gallery.len()).filter(|&i| fixed[i].is_none()).collect();

    const CHUNK: usize = 256;
    let ranks: Vec<QueryRank> = queries
        .iter()
        .zip(&genuine_index)
        .map(|(q, &gi)| {
            let pq = PreparedTemplate::new(&q.template)?;
            let rescaled: Vec<Vec<PreparedTemplate>> = juvenile
                .par_iter()
                .map(|&i| {
                    let e = &gallery[i];
                    let f = chart.scale_factor(e.age, q.age, e.sex)?;
                    cfg.factors(mode, f)?
                        .iter()
                        .map(|f| PreparedTemplate::new(&rescale_template(&e.template, f)?))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            let mut variants: Vec<&[PreparedTemplate]> = fixed.iter().map(|v| v.as_deref().unwrap_or(&[])).collect();
            for (&i, v) in juvenile.iter().zip(&rescaled) {
                variants[i] = v;
            }
            let genuine = variants[gi]
                .iter()
                .map(|r| (match_prepared(&pq, r, params).matched_count, r.len()))
                .max_by(|a, b| score_cmp(*a, *b))
                .unwrap();
            let mut ahead = 0usize;
            let mut censored = false;
            for start in (0..gallery.len()).step_by(CHUNK) {
                let end = (start + CHUNK).min(gallery.len());
                ahead += (start..end)
                    .into_par_iter()
                    .filter(|&i| i != gi && at_least_genuine(&pq, variants[i], params, genuine))
                    .count();
                if let Some(k) = rank_cap {
                    if 1 + ahead > k {
                        censored = true;
                        break;
                    }
                }
            }
            let rank = match rank_cap {
                Some(k) if censored => k + 1,
                _ => 1 + ahead,
            };
            Ok(QueryRank {
                person_id: q.person_id.clone(),
                finger: q.finger,
                genuine_score: (genuine.0 * genuine.0) as f64 / (pq.len() * genuine.1) as f64,
                rank,
                censored,
            })
        })
        .collect::<Result<_>>()?;
    let rate = |k: usize| ranks.iter().filter(|r| r.rank <= k).count() as f64 / ranks.len() as f64;
    Ok(IdentificationReport {
        mode,
        matcher_label: params.label(),
        gallery_size: gallery.len(),
        rank_cap,
        top1_rate: rate(1),
        top3_rate: rate(3),
        queries: ranks,
    })
}

/// Whether any variant of a gallery entry scores at least the genuine score,
/// given as (matched count, reference size).
fn at_least_genuine(
    q: &PreparedTemplate,
    variants: &[PreparedTemplate],
    p: &MatchParams,
    genuine: (usize, usize),
) -> bool {
    variants.iter().any(|r| {
        let floor = min_count_to_reach(genuine, r.len());
        match_prepared_at_least(q, r, p, floor).is_some()
    })
}

/// Compares scores `c² / (n_q · n_r)` for a fixed query given as
/// (matched count, reference size), exactly.
fn score_cmp(a: (usize, usize), b: (usize, usize)) -> std::cmp::Ordering {
    ((a.0 * a.0) as u128 * b.1 as u128).cmp(&((b.0 * b.0) as u128 * a.1 as u128))
}

/// Smallest matched count against a reference of size `n` whose score is at
/// least the genuine score.
fn min_count_to_reach(genuine: (usize, usize), n: usize) -> usize {
    let mut c = ((genuine.0 * genuine.0 * n) as f64 / genuine.1 as f64).sqrt().floor() as usize;
    while c > 0 && score_cmp((c - 1, n), genuine).is_ge() {
        c -= 1;
    }
    while score_cmp((c, n), genuine).is_lt() {
        c += 1;
    }
    c
}
