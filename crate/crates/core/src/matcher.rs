//! Position-based minutiae matcher, score normalization and fusion.
//!
//! Alignment hypotheses come from pairs of minutia pairs with consistent
//! lengths. Each hypothesis is scored by greedy one-to-one assignment of query
//! minutiae to reference minutiae within the tolerance radius.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, RigidTransform};
use crate::growth::{rescale_template, ScaleFactor};
use crate::stats::{mad, median};
use crate::types::{MinutiaKind, Template};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Tolerance radius for a matched minutia pair, mm.
    pub radius_mm: f64,
    /// Maximum length difference of two pairs forming a hypothesis, mm.
    pub pair_tolerance_mm: f64,
    pub max_hypotheses: usize,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            radius_mm: 0.8,
            pair_tolerance_mm: 0.8,
            max_hypotheses: 200,
        }
    }
}

impl MatchParams {
    pub fn with_radius(radius_mm: f64) -> Self {
        MatchParams {
            radius_mm,
            pair_tolerance_mm: radius_mm,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "radius must be positive, got {}",
                self.radius_mm
            )));
        }
        if !(self.pair_tolerance_mm.is_finite() && self.pair_tolerance_mm >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "pair tolerance must be non-negative, got {}",
                self.pair_tolerance_mm
            )));
        }
        if self.max_hypotheses == 0 {
            return Err(Error::InvalidArgument("hypothesis cap must be at least 1".into()));
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        format!("r{}", self.radius_mm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatchScore {
    pub value: f64,
    pub matched_count: usize,
    pub transform: RigidTransform,
}

impl MatchScore {
    fn new(count: usize, nq: usize, nr: usize, transform: RigidTransform) -> Self {
        MatchScore {
            value: (count * count) as f64 / (nq * nr) as f64,
            matched_count: count,
            transform,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pair {
    /// Index in lexicographic (i, j) order, used for tie-breaking.
    id: u32,
    i: u32,
    j: u32,
    len: f64,
    dir: Point,
    mid: Point,
}

/// A template with the pair table and spatial index precomputed, for repeated
/// matching.
#[derive(Debug, Clone)]
pub struct PreparedTemplate {
    points: Vec<Point>,
    kinds: Vec<MinutiaKind>,
    pairs: Vec<Pair>,
    /// Point indices sorted by x.
    order: Vec<u32>,
    sx: Vec<f64>,
    sy: Vec<f64>,
    skind: Vec<MinutiaKind>,
    /// First sorted index with `x >= x0 + b * BUCKET_MM`, per bucket `b`.
    buckets: Vec<u32>,
    x0: f64,
}

/// Width of the x buckets used to start neighbour scans, mm.
const BUCKET_MM: f64 = 0.25;

impl PreparedTemplate {
    pub fn new(t: &Template) -> Result<Self> {
        t.validate()?;
        let points = t.points();
        let kinds: Vec<MinutiaKind> = t.minutiae.iter().map(|m| m.kind).collect();
        let n = points.len();
        let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
        let mut id = 0u32;
        for i in 0..n {
            for j in i + 1..n {
                let v = points[j] - points[i];
                let len = v.norm();
                if len > 1e-9 {
                    pairs.push(Pair {
                        id,
                        i: i as u32,
                        j: j as u32,
                        len,
                        dir: v * (1.0 / len),
                        mid: (points[i] + points[j]) * 0.5,
                    });
                }
                id += 1;
            }
        }
        pairs.sort_by(|a, b| a.len.total_cmp(&b.len).then(a.id.cmp(&b.id)));
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| points[a as usize].x.total_cmp(&points[b as usize].x).then(a.cmp(&b)));
        let sx: Vec<f64> = order.iter().map(|&k| points[k as usize].x).collect();
        let x0 = sx[0];
        let n_buckets = (((sx[n - 1] - x0) / BUCKET_MM) as usize + 2).min(1 << 16);
        let buckets = (0..n_buckets)
            .map(|b| sx.partition_point(|&v| v < x0 + b as f64 * BUCKET_MM) as u32)
            .collect();
        Ok(PreparedTemplate {
            buckets,
            x0,
            sx,
            sy: order.iter().map(|&k| points[k as usize].y).collect(),
            skind: order.iter().map(|&k| kinds[k as usize]).collect(),
            points,
            kinds,
            pairs,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// A sorted index at or before the first point with `x >= lo`.
    fn scan_start(&self, lo: f64) -> usize {
        let b = (lo - self.x0) / BUCKET_MM;
        if b <= 0.0 {
            0
        } else {
            match self.buckets.get(b as usize) {
                Some(&i) => i as usize,
                None => self.sx.partition_point(|&v| v < lo),
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct Hypothesis {
    /// Length difference quantized to 1e-9 mm (so that ordering is stable under
    /// rigid motion of either template), then pair ids and orientation.
    order: u128,
    qp: u32,
    rp: u32,
    flip: bool,
}

/// Quantum of the length-difference ordering key, mm.
const KEY_QUANTUM: f64 = 1e-9;

fn hypotheses(q: &PreparedTemplate, r: &PreparedTemplate, p: &MatchParams) -> Vec<Hypothesis> {
    // Candidates are ordered by quantized length difference, so collecting only
    // keys up to some bound yields the same top set whenever the bound already
    // admits `max_hypotheses` candidates. The bound is widened until it does.
    let full = (p.pair_tolerance_mm / KEY_QUANTUM).round() as u64;
    let mut bound = (full / 16).max(1);
    let mut out = Vec::new();
    loop {
        bound = bound.min(full);
        out.clear();
        collect_hypotheses(q, r, p.pair_tolerance_mm, bound, &mut out);
        if out.len() >= p.max_hypotheses || bound == full {
            break;
        }
        bound *= 2;
    }
    if out.len() > p.max_hypotheses {
        out.select_nth_unstable_by_key(p.max_hypotheses - 1, |h| h.order);
        out.truncate(p.max_hypotheses);
    }
    out.sort_unstable_by_key(|h| h.order);
    out
}

fn collect_hypotheses(q: &PreparedTemplate, r: &PreparedTemplate, tol: f64, bound: u64, out: &mut Vec<Hypothesis>) {
    let window = (bound as f64 * KEY_QUANTUM).min(tol) + KEY_QUANTUM;
    let mut lo = 0;
    for (qi, qp) in q.pairs.iter().enumerate() {
        while lo < r.pairs.len() && r.pairs[lo].len < qp.len - window {
            lo += 1;
        }
        let (ka, kb) = (q.kinds[qp.i as usize], q.kinds[qp.j as usize]);
        for (ri, rp) in r.pairs.iter().enumerate().skip(lo) {
            let diff = rp.len - qp.len;
            if diff > window {
                break;
            }
            if diff.abs() > tol {
                continue;
            }
            let key = (diff.abs() * (1.0 / KEY_QUANTUM) + 0.5) as u64;
            if key > bound {
                continue;
            }
            let (ra, rb) = (r.kinds[rp.i as usize], r.kinds[rp.j as usize]);
            for flip in [false, true] {
                let ok = if flip {
                    ka.compatible(rb) && kb.compatible(ra)
                } else {
                    ka.compatible(ra) && kb.compatible(rb)
                };
                if ok {
                    out.push(Hypothesis {
                        order: (key as u128) << 64 | (qp.id as u128) << 33 | (rp.id as u128) << 1 | flip as u128,
                        qp: qi as u32,
                        rp: ri as u32,
                        flip,
                    });
                }
            }
        }
    }
}

struct Scratch {
    cands: Vec<(f64, u32, u32)>,
    q_used: Vec<bool>,
    r_used: Vec<bool>,
}

/// Greedy one-to-one count under the transform `(c, s, t)`. Returns `None` as
/// soon as the count provably cannot reach `need`.
fn count_matches(
    q: &PreparedTemplate,
    r: &PreparedTemplate,
    (c, s, t): (f64, f64, Point),
    radius: f64,
    need: usize,
    sc: &mut Scratch,
) -> Option<usize> {
    let r2 = radius * radius;
    let nq = q.len();
    sc.cands.clear();
    let mut misses = 0;
    for (qi, p) in q.points.iter().enumerate() {
        let x = c * p.x - s * p.y + t.x;
        let y = s * p.x + c * p.y + t.y;
        let start = r.scan_start(x - radius);
        let mut any = false;
        for k in start..r.sx.len() {
            if r.sx[k] > x + radius {
                break;
            }
            let dx = r.sx[k] - x;
            let dy = r.sy[k] - y;
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 && q.kinds[qi].compatible(r.skind[k]) {
                sc.cands.push((d2, qi as u32, r.order[k]));
                any = true;
            }
        }
        if !any {
            misses += 1;
            if nq - misses < need {
                return None;
            }
        }
    }
    // Without competing candidates greedy assignment keeps every candidate.
    sc.r_used.iter_mut().for_each(|u| *u = false);
    let mut conflict = false;
    for (k, &(_, qi, ri)) in sc.cands.iter().enumerate() {
        if (k > 0 && sc.cands[k - 1].1 == qi) || sc.r_used[ri as usize] {
            conflict = true;
            break;
        }
        sc.r_used[ri as usize] = true;
    }
    if !conflict {
        let count = sc.cands.len();
        return (count >= need).then_some(count);
    }
    sc.cands
        .sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    sc.q_used.iter_mut().for_each(|u| *u = false);
    sc.r_used.iter_mut().for_each(|u| *u = false);
    let mut count = 0;
    for &(_, qi, ri) in &sc.cands {
        let (qi, ri) = (qi as usize, ri as usize);
        if !sc.q_used[qi] && !sc.r_used[ri] {
            sc.q_used[qi] = true;
            sc.r_used[ri] = true;
            count += 1;
        }
    }
    (count >= need).then_some(count)
}

/// Best matched count over all hypotheses, or `None` when it is below `floor`.
fn best_count(
    q: &PreparedTemplate,
    r: &PreparedTemplate,
    p: &MatchParams,
    floor: usize,
) -> Option<(usize, RigidTransform)> {
    let cap = q.len().min(r.len());
    if floor > cap {
        return None;
    }
    let mut sc = Scratch {
        cands: Vec::with_capacity(4 * q.len()),
        q_used: vec![false; q.len()],
        r_used: vec![false; r.len()],
    };
    let mut best: Option<(usize, (f64, f64, Point))> = None;
    for h in hypotheses(q, r, p) {
        let qp = &q.pairs[h.qp as usize];
        let rp = &r.pairs[h.rp as usize];
        let rdir = if h.flip { rp.dir * -1.0 } else { rp.dir };
        let c = qp.dir.dot(rdir);
        let s = qp.dir.cross(rdir);
        let t = rp.mid - Point::new(c * qp.mid.x - s * qp.mid.y, s * qp.mid.x + c * qp.mid.y);
        let need = best.map_or(floor.max(1), |(b, _)| b + 1);
        if let Some(n) = count_matches(q, r, (c, s, t), p.radius_mm, need, &mut sc) {
            best = Some((n, (c, s, t)));
            if n == cap {
                break;
            }
        }
    }
    match best {
        Some((n, (c, s, t))) => Some((n, RigidTransform::new(s.atan2(c), t))),
        None if floor == 0 => Some((0, RigidTransform::IDENTITY)),
        None => None,
    }
}

/// Score of a prepared query against a prepared reference.
pub fn match_prepared(q: &PreparedTemplate, r: &PreparedTemplate, p: &MatchParams) -> MatchScore {
    let (n, t) = best_count(q, r, p, 0).expect("floor 0 always yields a count");
    MatchScore::new(n, q.len(), r.len(), t)
}

/// Like [`match_prepared`] but gives up with `None` once the matched count
/// cannot reach `floor`. A returned score is identical to the unbounded one.
pub fn match_prepared_at_least(
    q: &PreparedTemplate,
    r: &PreparedTemplate,
    p: &MatchParams,
    floor: usize,
) -> Option<MatchScore> {
    best_count(q, r, p, floor).map(|(n, t)| MatchScore::new(n, q.len(), r.len(), t))
}

pub fn match_score(query: &Template, reference: &Template, p: &MatchParams) -> Result<MatchScore> {
    p.validate()?;
    Ok(match_prepared(
        &PreparedTemplate::new(query)?,
        &PreparedTemplate::new(reference)?,
        p,
    ))
}

/// Maximum score over the reference rescaled by each factor.
pub fn best_over_factors(
    query: &Template,
    reference: &Template,
    factors: &[ScaleFactor],
    p: &MatchParams,
) -> Result<MatchScore> {
    if factors.is_empty() {
        return Err(Error::InvalidArgument("empty factor list".into()));
    }
    p.validate()?;
    let q = PreparedTemplate::new(query)?;
    let mut best: Option<MatchScore> = None;
    for f in factors {
        let r = PreparedTemplate::new(&rescale_template(reference, f)?)?;
        let s = match_prepared(&q, &r, p);
        if best.is_none_or(|b| s.value > b.value) {
            best = Some(s);
        }
    }
    Ok(best.unwrap())
}

/// Median/MAD location-scale normalizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Normalizer {
    pub median: f64,
    pub mad: f64,
}

impl Normalizer {
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.len() < 2 {
            return Err(Error::InvalidArgument("normalization needs at least 2 scores".into()));
        }
        let m = median(scores).unwrap();
        let d = mad(scores).unwrap();
        if !(d > 0.0) {
            return Err(Error::Degenerate("MAD of scores is zero".into()));
        }
        Ok(Normalizer { median: m, mad: d })
    }

    pub fn apply(&self, s: f64) -> f64 {
        (s - self.median) / self.mad
    }
}

/// `(s - median) / MAD` for every score.
pub fn normalize_scores(scores: &[f64]) -> Result<Vec<f64>> {
    let n = Normalizer::fit(scores)?;
    Ok(scores.iter().map(|&s| n.apply(s)).collect())
}

/// Elementwise sum of per-matcher score lists.
pub fn fuse_sum(normalized: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = normalized
        .first()
        .ok_or_else(|| Error::InvalidArgument("no score lists to fuse".into()))?;
    let mut out = first.clone();
    for list in &normalized[1..] {
        if list.len() != out.len() {
            return Err(Error::LengthMismatch {
                left: out.len(),
                right: list.len(),
            });
        }
        for (o, s) in out.iter_mut().zip(list) {
            *o += s;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Finger, ImprintKind, Minutia};

    fn template(xy: &[(f64, f64)]) -> Template {
        Template::new(
            Finger::RightIndex,
            ImprintKind::Rolled,
            500.0,
            xy.iter()
                .map(|&(x, y)| Minutia::new(x, y, MinutiaKind::Unknown))
                .collect(),
        )
    }

    fn grid() -> Template {
        template(&[
            (0.0, 0.0),
            (3.1, 0.4),
            (1.2, 2.9),
            (4.4, 3.3),
            (-2.0, 1.7),
            (0.5, -3.6),
            (2.2, 5.1),
        ])
    }

    #[test]
    fn identical_templates_score_one() {
        let t = grid();
        let s = match_score(&t, &t, &MatchParams::default()).unwrap();
        assert_eq!(s.value, 1.0);
        assert_eq!(s.matched_count, t.len());
    }

    #[test]
    fn far_apart_templates_score_near_zero() {
        let a = template(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        let b = template(&[(0.0, 0.0), (30.0, 0.0), (0.0, 60.0)]);
        let s = match_score(&a, &b, &MatchParams::with_radius(0.1)).unwrap();
        assert!(s.value <= 1.0 / 9.0);
    }

    #[test]
    fn too_few_minutiae() {
        let a = template(&[(0.0, 0.0), (1.0, 0.0)]);
        assert!(match_score(&a, &grid(), &MatchParams::default()).is_err());
    }

    #[test]
    fn kinds_must_agree() {
        let mut a = grid();
        let mut b = grid();
        for m in &mut a.minutiae {
            m.kind = MinutiaKind::RidgeEnding;
        }
        for m in &mut b.minutiae {
            m.kind = MinutiaKind::Bifurcation;
        }
        assert_eq!(match_score(&a, &b, &MatchParams::default()).unwrap().matched_count, 0);
    }

    #[test]
    fn bounded_search_agrees() {
        let a = grid();
        let mut b = grid();
        b.minutiae[0].x += 3.0;
        b.minutiae[3].y -= 2.0;
        let p = MatchParams::default();
        let (qa, qb) = (PreparedTemplate::new(&a).unwrap(), PreparedTemplate::new(&b).unwrap());
        let full = match_prepared(&qa, &qb, &p);
        assert_eq!(match_prepared_at_least(&qa, &qb, &p, full.matched_count), Some(full));
        assert_eq!(match_prepared_at_least(&qa, &qb, &p, full.matched_count + 1), None);
    }

    #[test]
    fn normalization_example() {
        assert_eq!(
            normalize_scores(&[1.0, 2.0, 3.0, 4.0, 100.0]).unwrap(),
            vec![-2.0, -1.0, 0.0, 1.0, 97.0]
        );
        assert!(matches!(normalize_scores(&[2.0; 4]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse_sum(&[vec![1.0, 2.0]]).unwrap(), vec![1.0, 2.0]);
        assert_eq!(fuse_sum(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![4.0, 6.0]);
        assert!(fuse_sum(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(fuse_sum(&[]).is_err());
    }

    #[test]
    fn single_unit_factor_equals_plain_match() {
        let a = grid();
        let mut b = grid();
        b.minutiae[2].x += 0.5;
        let p = MatchParams::default();
        let plain = match_score(&a, &b, &p).unwrap();
        let one = best_over_factors(&a, &b, &[ScaleFactor::fixed(1.0, crate::types::Sex::Male)], &p).unwrap();
        assert_eq!(plain, one);
        assert!(best_over_factors(&a, &b, &[], &p).is_err());
    }
}
