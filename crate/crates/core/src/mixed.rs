//! Random-intercept model for log finger size relative to the growth chart.
//!
//! The response for person `i`, check-out `j` and imprint kind `k` is
//! `log S_ijk - log G_ij`, modelled as
//!
//! ```text
//! y_ijk = mu_k + pi_i + eta_ij + eps_ijk
//! ```
//!
//! with independent Gaussian `eta_ij ~ N(0, sigma_eta²)` shared by the imprints of
//! one check-out and `eps_ijk ~ N(0, sigma_eps²)`. The person intercept
//! `pi_i ~ N(0, sigma_person²)` absorbs individual finger-size proportionality
//! and can be switched off, leaving the plain two-level model.
//!
//! Parameters are estimated by maximum likelihood using EM; random effects are
//! reported as empirical BLUPs at the estimates.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::spread;
use crate::growth::GrowthChart;
use crate::stats::average_ranks;
use crate::types::{Dataset, ImprintKind};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeObservation {
    pub person_id: String,
    pub co_index: u32,
    pub imprint: ImprintKind,
    /// `ln(spread) - ln(median stature)`.
    pub response: f64,
}

/// One observation per (person, check-out, imprint) of each person's marked
/// finger.
pub fn build_observations(d: &Dataset, chart: &GrowthChart) -> Result<Vec<SizeObservation>> {
    if !d.correspondence {
        return Err(Error::Validation(
            "size modelling requires a dataset with minutiae correspondence".into(),
        ));
    }
    let mut obs = Vec::new();
    for person in &d.persons {
        let Some(finger) = person.marked_finger() else { continue };
        for co in &person.checkouts {
            let g = chart.median_stature(co.age, person.sex);
            for imprint in [ImprintKind::Rolled, ImprintKind::Plain] {
                let Some(t) = co.template(finger, imprint) else {
                    continue;
                };
                if t.len() < 3 {
                    return Err(Error::Validation(format!(
                        "person {}, co {}: minutiae count < 3",
                        person.person_id, co.co_index
                    )));
                }
                let s = spread(&t.points());
                if !(s > 0.0) {
                    return Err(Error::Degenerate(format!(
                        "person {}, co {}: zero spread",
                        person.person_id, co.co_index
                    )));
                }
                obs.push(SizeObservation {
                    person_id: person.person_id.clone(),
                    co_index: co.co_index,
                    imprint,
                    response: s.ln() - g.ln(),
                });
            }
        }
    }
    Ok(obs)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Include the person-level random intercept.
    pub person_effect: bool,
    pub max_iterations: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tolerance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            person_effect: true,
            max_iterations: 10_000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupEffect {
    pub person_id: String,
    pub co_index: u32,
    pub eta_hat: f64,
    /// Mean residual of the group after removing fixed effects and the
    /// predicted person intercept.
    pub mean_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixedFit {
    pub mu: BTreeMap<ImprintKind, f64>,
    pub sigma_eta: f64,
    pub sigma_eps: f64,
    /// Zero when the person effect is disabled.
    pub sigma_person: f64,
    pub loglik: f64,
    pub eta_hat: Vec<GroupEffect>,
    pub person_hat: Vec<(String, f64)>,
    pub converged: bool,
    pub iterations: usize,
    pub person_effect: bool,
    /// Log-likelihood after each EM iteration.
    #[serde(skip)]
    pub loglik_history: Vec<f64>,
}

impl MixedFit {
    pub fn eta(&self, person_id: &str, co_index: u32) -> Option<f64> {
        self.eta_hat
            .iter()
            .find(|g| g.person_id == person_id && g.co_index == co_index)
            .map(|g| g.eta_hat)
    }
}

/// `(exp(sigma) - 1) · 100`: a log-scale standard deviation as a relative
/// (multiplicative) percentage.
pub fn relative_effect(sigma: f64) -> f64 {
    sigma.exp_m1() * 100.0
}

struct Layout {
    y: Vec<f64>,
    /// Fixed-effect column of each observation.
    kind: Vec<usize>,
    kinds: Vec<ImprintKind>,
    persons: Vec<String>,
    /// Per person: its groups, each a list of observation indices.
    person_groups: Vec<Vec<Vec<usize>>>,
    groups: Vec<(usize, u32)>,
}

impl Layout {
    fn new(obs: &[SizeObservation]) -> Self {
        let kinds: Vec<ImprintKind> = {
            let mut k: Vec<ImprintKind> = obs.iter().map(|o| o.imprint).collect();
            k.sort();
            k.dedup();
            k
        };
        let mut persons = Vec::new();
        let mut pindex: HashMap<&str, usize> = HashMap::new();
        let mut gindex: HashMap<(usize, u32), (usize, usize)> = HashMap::new();
        let mut person_groups: Vec<Vec<Vec<usize>>> = Vec::new();
        let mut groups = Vec::new();
        for (i, o) in obs.iter().enumerate() {
            let p = *pindex.entry(o.person_id.as_str()).or_insert_with(|| {
                persons.push(o.person_id.clone());
                person_groups.push(Vec::new());
                persons.len() - 1
            });
            let (gp, gl) = *gindex.entry((p, o.co_index)).or_insert_with(|| {
                person_groups[p].push(Vec::new());
                groups.push((p, o.co_index));
                (p, person_groups[p].len() - 1)
            });
            person_groups[gp][gl].push(i);
        }
        Layout {
            y: obs.iter().map(|o| o.response).collect(),
            kind: obs
                .iter()
                .map(|o| kinds.iter().position(|&k| k == o.imprint).unwrap())
                .collect(),
            kinds,
            persons,
            person_groups,
            groups,
        }
    }

    fn n_groups(&self) -> usize {
        self.groups.len()
    }
}

#[derive(Debug, Clone, Copy)]
struct Variances {
    person: f64,
    eta: f64,
    eps: f64,
}

/// Posterior summary of one person's random effects.
struct Posterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    loglik: f64,
}

/// Random-effect prior-plus-data precision of person `p`, the log determinant
/// of its prior covariance, and the random-effect column of every observation
/// (group column, plus column 0 for the person intercept).
fn precision(lay: &Layout, p: usize, v: Variances, person_effect: bool) -> (DMatrix<f64>, f64) {
    let groups = &lay.person_groups[p];
    let off = usize::from(person_effect);
    let q = groups.len() + off;
    let mut prec = DMatrix::<f64>::zeros(q, q);
    let mut log_det_d = 0.0;
    if person_effect {
        prec[(0, 0)] = 1.0 / v.person;
        log_det_d += v.person.ln();
    }
    for (g, idx) in groups.iter().enumerate() {
        let col = g + off;
        prec[(col, col)] += 1.0 / v.eta;
        log_det_d += v.eta.ln();
        let ng = idx.len() as f64;
        prec[(col, col)] += ng / v.eps;
        if person_effect {
            prec[(0, 0)] += ng / v.eps;
            prec[(0, col)] += ng / v.eps;
            prec[(col, 0)] += ng / v.eps;
        }
    }
    (prec, log_det_d)
}

fn person_posterior(lay: &Layout, p: usize, mu: &[f64], v: Variances, person_effect: bool) -> Result<Posterior> {
    let groups = &lay.person_groups[p];
    let off = usize::from(person_effect);
    let (prec, log_det_d) = precision(lay, p, v, person_effect);
    let mut ztr = DVector::<f64>::zeros(prec.nrows());
    let (mut n, mut rr) = (0usize, 0.0);
    for (g, idx) in groups.iter().enumerate() {
        let col = g + off;
        for &i in idx {
            let r = lay.y[i] - mu[lay.kind[i]];
            rr += r * r;
            n += 1;
            ztr[col] += r;
            if person_effect {
                ztr[0] += r;
            }
        }
    }
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::Degenerate("random-effect precision not positive definite".into()))?;
    let log_det_p: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let cov = chol.inverse();
    let mean = &cov * &ztr / v.eps;
    let quad = (rr - ztr.dot(&mean)) / v.eps;
    let log_det_v = n as f64 * v.eps.ln() + log_det_d + log_det_p;
    let loglik = -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + log_det_v + quad);
    Ok(Posterior { mean, cov, loglik })
}

fn kind_means(lay: &Layout, values: &[f64]) -> Vec<f64> {
    let mut sum = vec![0.0; lay.kinds.len()];
    let mut cnt = vec![0usize; lay.kinds.len()];
    for (i, &v) in values.iter().enumerate() {
        sum[lay.kind[i]] += v;
        cnt[lay.kind[i]] += 1;
    }
    sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect()
}

/// Fixed effects maximizing the likelihood at variances `v`, using the
/// Woodbury form of each person's inverse marginal covariance.
fn profile_mu(lay: &Layout, v: Variances, person_effect: bool) -> Result<Vec<f64>> {
    let k = lay.kinds.len();
    let off = usize::from(person_effect);
    let mut xtvx = DMatrix::<f64>::zeros(k, k);
    let mut xtvy = DVector::<f64>::zeros(k);
    for p in 0..lay.persons.len() {
        let (prec, _) = precision(lay, p, v, person_effect);
        let q = prec.nrows();
        let cov = prec
            .cholesky()
            .ok_or_else(|| Error::Degenerate("random-effect precision not positive definite".into()))?
            .inverse();
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut xtz = DMatrix::<f64>::zeros(k, q);
        let mut xty = DVector::<f64>::zeros(k);
        let mut zty = DVector::<f64>::zeros(q);
        for (g, idx) in lay.person_groups[p].iter().enumerate() {
            for &i in idx {
                let c = lay.kind[i];
                xtx[(c, c)] += 1.0;
                xty[c] += lay.y[i];
                xtz[(c, g + off)] += 1.0;
                zty[g + off] += lay.y[i];
                if person_effect {
                    xtz[(c, 0)] += 1.0;
                    zty[0] += lay.y[i];
                }
            }
        }
        let xtz_cov = &xtz * &cov / v.eps;
        xtvx += (xtx - &xtz_cov * xtz.transpose()) / v.eps;
        xtvy += (xty - &xtz_cov * zty) / v.eps;
    }
    xtvx.lu()
        .solve(&xtvy)
        .map(|b| b.iter().copied().collect())
        .ok_or_else(|| Error::Degenerate("singular GLS system".into()))
}

/// Maximum-likelihood fit of the size model.
pub fn fit_ml(obs: &[SizeObservation], opts: &FitOptions) -> Result<MixedFit> {
    if obs.iter().any(|o| !o.response.is_finite()) {
        return Err(Error::Validation("non-finite response".into()));
    }
    let lay = Layout::new(obs);
    if lay.n_groups() < 2 {
        return Err(Error::Unidentifiable(format!(
            "need at least 2 (person, check-out) groups, got {}",
            lay.n_groups()
        )));
    }
    if !lay.person_groups.iter().flatten().any(|g| g.len() >= 2) {
        return Err(Error::Unidentifiable(
            "no check-out with two imprints: sigma_eps cannot be separated from sigma_eta".into(),
        ));
    }
    let mut mu = kind_means(&lay, &lay.y);
    let resid: Vec<f64> = lay.y.iter().zip(&lay.kind).map(|(y, &k)| y - mu[k]).collect();
    let total = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
    let scale = lay.y.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1.0);
    if total <= (1e-15 * scale).powi(2) {
        return Ok(degenerate_fit(&lay, mu, opts.person_effect));
    }

    if opts.person_effect {
        if lay.persons.len() < 2 {
            return Err(Error::Unidentifiable("person effect needs at least 2 persons".into()));
        }
        if !lay.person_groups.iter().any(|g| g.len() >= 2) {
            return Err(Error::Unidentifiable(
                "person effect needs a person with at least 2 check-outs".into(),
            ));
        }
    }

    let floor = total * 1e-14;
    let (mut wss, mut wdf) = (0.0, 0usize);
    for g in lay.person_groups.iter().flatten() {
        let m = g.iter().map(|&i| resid[i]).sum::<f64>() / g.len() as f64;
        wss += g.iter().map(|&i| (resid[i] - m).powi(2)).sum::<f64>();
        wdf += g.len() - 1;
    }
    let eps0 = (wss / wdf as f64).max(0.1 * total);
    let between = (total - eps0).max(0.2 * total);
    let mut v = Variances {
        person: if opts.person_effect { between / 2.0 } else { 0.0 },
        eta: if opts.person_effect { between / 2.0 } else { between },
        eps: eps0,
    };

    let n_obs = lay.y.len() as f64;
    let off = usize::from(opts.person_effect);
    let mut history: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        mu = profile_mu(&lay, v, opts.person_effect)?;
        let posts: Vec<Posterior> = (0..lay.persons.len())
            .map(|p| person_posterior(&lay, p, &mu, v, opts.person_effect))
            .collect::<Result<_>>()?;
        let ll: f64 = posts.iter().map(|p| p.loglik).sum();
        if let Some(&prev) = history.last() {
            if ((ll - prev) / prev.abs().max(1.0)).abs() < opts.tolerance {
                history.push(ll);
                converged = true;
                break;
            }
        }
        history.push(ll);

        // M-step.
        let mut person_ss = 0.0;
        let mut eta_ss = 0.0;
        let mut adjusted = lay.y.clone();
        for (p, post) in posts.iter().enumerate() {
            if opts.person_effect {
                person_ss += post.mean[0].powi(2) + post.cov[(0, 0)];
            }
            for (g, idx) in lay.person_groups[p].iter().enumerate() {
                let c = g + off;
                eta_ss += post.mean[c].powi(2) + post.cov[(c, c)];
                let shift = post.mean[c] + if opts.person_effect { post.mean[0] } else { 0.0 };
                for &i in idx {
                    adjusted[i] -= shift;
                }
            }
        }
        let mut eps_ss = 0.0;
        for (p, post) in posts.iter().enumerate() {
            for (g, idx) in lay.person_groups[p].iter().enumerate() {
                let c = g + off;
                let var = if opts.person_effect {
                    post.cov[(0, 0)] + post.cov[(c, c)] + 2.0 * post.cov[(0, c)]
                } else {
                    post.cov[(c, c)]
                };
                for &i in idx {
                    eps_ss += (adjusted[i] - mu[lay.kind[i]]).powi(2) + var;
                }
            }
        }
        v = Variances {
            person: if opts.person_effect {
                (person_ss / lay.persons.len() as f64).max(floor)
            } else {
                0.0
            },
            eta: (eta_ss / lay.n_groups() as f64).max(floor),
            eps: (eps_ss / n_obs).max(floor),
        };
    }

    if !converged {
        return Err(Error::NonConvergence { iterations });
    }
    let posts: Vec<Posterior> = (0..lay.persons.len())
        .map(|p| person_posterior(&lay, p, &mu, v, opts.person_effect))
        .collect::<Result<_>>()?;
    let loglik = posts.iter().map(|p| p.loglik).sum();

    let mut eta_hat = Vec::with_capacity(lay.n_groups());
    let mut person_hat = Vec::with_capacity(lay.persons.len());
    for (p, post) in posts.iter().enumerate() {
        let pi = if opts.person_effect { post.mean[0] } else { 0.0 };
        person_hat.push((lay.persons[p].clone(), pi));
        for (g, idx) in lay.person_groups[p].iter().enumerate() {
            let mean_residual = idx.iter().map(|&i| lay.y[i] - mu[lay.kind[i]]).sum::<f64>() / idx.len() as f64 - pi;
            eta_hat.push(GroupEffect {
                person_id: lay.persons[p].clone(),
                co_index: obs[idx[0]].co_index,
                eta_hat: post.mean[g + off],
                mean_residual,
            });
        }
    }
    let sd = |var: f64| if var <= floor { 0.0 } else { var.sqrt() };
    Ok(MixedFit {
        mu: lay.kinds.iter().copied().zip(mu).collect(),
        sigma_eta: sd(v.eta),
        sigma_eps: sd(v.eps),
        sigma_person: if opts.person_effect { sd(v.person) } else { 0.0 },
        loglik,
        eta_hat,
        person_hat,
        converged,
        iterations,
        person_effect: opts.person_effect,
        loglik_history: history,
    })
}

fn degenerate_fit(lay: &Layout, mu: Vec<f64>, person_effect: bool) -> MixedFit {
    let eta_hat = lay
        .groups
        .iter()
        .map(|&(p, co)| GroupEffect {
            person_id: lay.persons[p].clone(),
            co_index: co,
            eta_hat: 0.0,
            mean_residual: 0.0,
        })
        .collect();
    MixedFit {
        mu: lay.kinds.iter().copied().zip(mu).collect(),
        sigma_eta: 0.0,
        sigma_eps: 0.0,
        sigma_person: 0.0,
        loglik: f64::INFINITY,
        eta_hat,
        person_hat: lay.persons.iter().map(|p| (p.clone(), 0.0)).collect(),
        converged: true,
        iterations: 0,
        person_effect,
        loglik_history: Vec::new(),
    }
}

/// Generalized-least-squares fixed effects at the fitted variance components.
pub fn gls_fixed_effects(obs: &[SizeObservation], fit: &MixedFit) -> Result<BTreeMap<ImprintKind, f64>> {
    let lay = Layout::new(obs);
    let k = lay.kinds.len();
    let v = Variances {
        person: fit.sigma_person.powi(2),
        eta: fit.sigma_eta.powi(2),
        eps: fit.sigma_eps.powi(2),
    };
    if v.eps <= 0.0 || v.eta <= 0.0 || (fit.person_effect && v.person <= 0.0) {
        return Err(Error::Degenerate("GLS needs positive variance components".into()));
    }
    let mut xtvx = DMatrix::<f64>::zeros(k, k);
    let mut xtvy = DVector::<f64>::zeros(k);
    for p in 0..lay.persons.len() {
        let idx: Vec<usize> = lay.person_groups[p].iter().flatten().copied().collect();
        let n = idx.len();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        let group_of: Vec<usize> = lay.person_groups[p]
            .iter()
            .enumerate()
            .flat_map(|(g, members)| std::iter::repeat_n(g, members.len()))
            .collect();
        for a in 0..n {
            for b in 0..n {
                let mut c = if fit.person_effect { v.person } else { 0.0 };
                if group_of[a] == group_of[b] {
                    c += v.eta;
                }
                if a == b {
                    c += v.eps;
                }
                cov[(a, b)] = c;
            }
        }
        let inv = cov
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("singular marginal covariance".into()))?;
        let x = DMatrix::from_fn(n, k, |r, c| if lay.kind[idx[r]] == c { 1.0 } else { 0.0 });
        let y = DVector::from_iterator(n, idx.iter().map(|&i| lay.y[i]));
        xtvx += x.transpose() * &inv * &x;
        xtvy += x.transpose() * &inv * y;
    }
    let beta = xtvx
        .lu()
        .solve(&xtvy)
        .ok_or_else(|| Error::Degenerate("singular GLS system".into()))?;
    Ok(lay.kinds.iter().copied().zip(beta.iter().copied()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualRow {
    pub person_id: String,
    pub co_index: u32,
    pub age: f64,
    /// Average rank of the age among all (person, check-out) pairs, mapped to [0, 1].
    pub age_rank: f64,
    pub eta_hat: f64,
}

pub fn residual_table(fit: &MixedFit, d: &Dataset) -> Result<Vec<ResidualRow>> {
    let ages: Vec<f64> = fit
        .eta_hat
        .iter()
        .map(|g| {
            d.person(&g.person_id)
                .and_then(|p| p.checkouts.iter().find(|c| c.co_index == g.co_index))
                .map(|c| c.age)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "fit group (person {}, co {}) not in dataset",
                        g.person_id, g.co_index
                    ))
                })
        })
        .collect::<Result<_>>()?;
    let ranks = average_ranks(&ages);
    let n = ranks.len();
    Ok(fit
        .eta_hat
        .iter()
        .zip(ages.iter().zip(&ranks))
        .map(|(g, (&age, &r))| ResidualRow {
            person_id: g.person_id.clone(),
            co_index: g.co_index,
            age,
            age_rank: if n > 1 { (r - 1.0) / (n - 1) as f64 } else { 0.0 },
            eta_hat: g.eta_hat,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSeriesRow {
    pub co_index: u32,
    pub age: f64,
    pub imprint: ImprintKind,
    pub size: f64,
    pub chart_value: f64,
    pub normalized_size: f64,
    pub normalized_chart_value: f64,
}

/// Sizes and chart values of one person's marked finger, each divided by its
/// geometric mean over the person's imprints.
pub fn demeaned_growth_series(d: &Dataset, chart: &GrowthChart, person_id: &str) -> Result<Vec<GrowthSeriesRow>> {
    let person = d
        .person(person_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown person {person_id}")))?;
    if person.checkouts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "person {person_id} has fewer than 2 check-outs"
        )));
    }
    let finger = person
        .marked_finger()
        .ok_or_else(|| Error::Validation(format!("person {person_id} has no finger taken at every check-out")))?;
    let mut rows = Vec::new();
    for co in &person.checkouts {
        for imprint in [ImprintKind::Rolled, ImprintKind::Plain] {
            if let Some(t) = co.template(finger, imprint) {
                rows.push(GrowthSeriesRow {
                    co_index: co.co_index,
                    age: co.age,
                    imprint,
                    size: spread(&t.points()),
                    chart_value: chart.median_stature(co.age, person.sex),
                    normalized_size: 0.0,
                    normalized_chart_value: 0.0,
                });
            }
        }
    }
    let gm = |f: fn(&GrowthSeriesRow) -> f64| (rows.iter().map(|r| f(r).ln()).sum::<f64>() / rows.len() as f64).exp();
    let (gs, gc) = (gm(|r| r.size), gm(|r| r.chart_value));
    for r in &mut rows {
        r.normalized_size = r.size / gs;
        r.normalized_chart_value = r.chart_value / gc;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ob(p: &str, co: u32, k: ImprintKind, y: f64) -> SizeObservation {
        SizeObservation {
            person_id: p.into(),
            co_index: co,
            imprint: k,
            response: y,
        }
    }

    #[test]
    fn relative_effects() {
        assert_eq!(relative_effect(0.0), 0.0);
        assert!((relative_effect(0.02235) - 2.26).abs() < 0.005);
        assert!((relative_effect(0.02255) - 2.28).abs() < 0.005);
    }

    #[test]
    fn identical_responses_are_degenerate() {
        let obs: Vec<_> = (0..4)
            .flat_map(|p| {
                [ImprintKind::Rolled, ImprintKind::Plain].map(|k| ob(&format!("P{p}"), 1 + (p % 2) as u32, k, -3.7))
            })
            .collect();
        let fit = fit_ml(&obs, &FitOptions::default()).unwrap();
        assert_eq!(fit.sigma_eta, 0.0);
        assert_eq!(fit.sigma_eps, 0.0);
        assert_eq!(fit.mu[&ImprintKind::Rolled], -3.7);
        assert_eq!(fit.mu[&ImprintKind::Plain], -3.7);
    }

    #[test]
    fn unidentifiable_inputs() {
        let one_group = vec![
            ob("A", 1, ImprintKind::Rolled, 0.1),
            ob("A", 1, ImprintKind::Plain, 0.2),
        ];
        assert!(matches!(
            fit_ml(&one_group, &FitOptions::default()),
            Err(Error::Unidentifiable(_))
        ));
        let singletons = vec![
            ob("A", 1, ImprintKind::Rolled, 0.1),
            ob("B", 1, ImprintKind::Rolled, 0.3),
        ];
        let opts = FitOptions {
            person_effect: false,
            ..Default::default()
        };
        assert!(matches!(fit_ml(&singletons, &opts), Err(Error::Unidentifiable(_))));
    }

    #[test]
    fn two_level_closed_form_on_balanced_toy() {
        // Two groups of two: ML gives sigma_eps² = within SS / 4 and
        // sigma_eta² = between variance - sigma_eps² / 2.
        let obs = vec![
            ob("A", 1, ImprintKind::Rolled, 0.10),
            ob("A", 1, ImprintKind::Rolled, 0.14),
            ob("B", 1, ImprintKind::Rolled, -0.05),
            ob("B", 1, ImprintKind::Rolled, -0.03),
        ];
        let opts = FitOptions {
            person_effect: false,
            ..Default::default()
        };
        let fit = fit_ml(&obs, &opts).unwrap();
        assert_abs_diff_eq!(fit.mu[&ImprintKind::Rolled], 0.04, epsilon = 1e-9);
        assert_abs_diff_eq!(fit.sigma_eps, 0.0005f64.sqrt(), epsilon = 1e-5);
        assert_abs_diff_eq!(fit.sigma_eta, 0.00615f64.sqrt(), epsilon = 1e-5);
    }

    #[test]
    fn rank_transform_of_residual_table() {
        let obs = vec![
            ob("A", 1, ImprintKind::Rolled, 0.10),
            ob("A", 1, ImprintKind::Plain, 0.12),
            ob("A", 2, ImprintKind::Rolled, 0.20),
            ob("A", 2, ImprintKind::Plain, 0.17),
            ob("B", 1, ImprintKind::Rolled, -0.05),
            ob("B", 1, ImprintKind::Plain, -0.02),
            ob("B", 2, ImprintKind::Rolled, 0.01),
            ob("B", 2, ImprintKind::Plain, 0.03),
        ];
        let fit = fit_ml(&obs, &FitOptions::default()).unwrap();
        use crate::types::*;
        let person = |id: &str, ages: [f64; 2]| Person {
            person_id: id.into(),
            sex: Sex::Male,
            checkouts: ages
                .iter()
                .enumerate()
                .map(|(j, &a)| CheckoutRecord {
                    co_index: j as u32 + 1,
                    age: a,
                    templates: vec![],
                })
                .collect(),
        };
        let d = Dataset {
            correspondence: true,
            persons: vec![person("A", [10.0, 20.0]), person("B", [10.0, 30.0])],
        };
        let rows = residual_table(&fit, &d).unwrap();
        let ranks: Vec<f64> = rows.iter().map(|r| r.age_rank).collect();
        assert_eq!(ranks, vec![1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0, 1.0]);
    }
}
