//! CSV tables for the analysis reports. Floats use the shortest representation
//! that round-trips, so output is byte-stable across runs.

use crate::error::{Error, Result};
use crate::evaluation::{AlignmentReport, ErrorPoint, IdentificationReport, VerificationReport};
use crate::mixed::{relative_effect, MixedFit, ResidualRow};
use crate::shape::IsotropyReport;

fn num(x: f64) -> String {
    format!("{x}")
}

fn table<I, R>(header: &[&str], rows: I) -> Result<String>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Two-column `key,value` table.
pub fn summary_csv(pairs: &[(&str, String)]) -> Result<String> {
    table(&["key", "value"], pairs.iter().map(|(k, v)| [k.to_string(), v.clone()]))
}

pub fn isotropy_csv(r: &IsotropyReport) -> Result<String> {
    table(
        &[
            "person_id",
            "finger",
            "n_configs",
            "n_points",
            "pc1_fraction_full",
            "size_fraction_full",
            "pc1_fraction_partial",
            "size_fraction_partial",
        ],
        r.rows.iter().map(|row| {
            [
                row.person_id.clone(),
                row.finger.to_string(),
                row.n_configs.to_string(),
                row.n_points.to_string(),
                num(row.pc1_fraction_full),
                num(row.size_fraction_full),
                num(row.pc1_fraction_partial),
                num(row.size_fraction_partial),
            ]
        }),
    )
}

pub fn isotropy_summary_csv(r: &IsotropyReport) -> Result<String> {
    summary_csv(&[
        ("persons", r.rows.len().to_string()),
        ("median_pc1_full", num(r.median_pc1_full)),
        ("median_size_full", num(r.median_size_full)),
        ("median_pc1_partial", num(r.median_pc1_partial)),
        ("median_size_partial", num(r.median_size_partial)),
    ])
}

/// Variance components, their relative-percentage forms, fixed effects and
/// fit diagnostics.
pub fn mixed_fit_csv(fit: &MixedFit) -> Result<String> {
    let mut pairs: Vec<(&str, String)> = vec![
        ("sigma_eta", num(fit.sigma_eta)),
        ("sigma_eps", num(fit.sigma_eps)),
        ("sigma_person", num(fit.sigma_person)),
        ("relative_eta_pct", num(relative_effect(fit.sigma_eta))),
        ("relative_eps_pct", num(relative_effect(fit.sigma_eps))),
        ("relative_person_pct", num(relative_effect(fit.sigma_person))),
    ];
    let mu_keys: Vec<String> = fit.mu.keys().map(|k| format!("mu_{k}")).collect();
    for (key, v) in mu_keys.iter().zip(fit.mu.values()) {
        pairs.push((key.as_str(), num(*v)));
    }
    pairs.extend([
        ("loglik", num(fit.loglik)),
        ("iterations", fit.iterations.to_string()),
        ("converged", fit.converged.to_string()),
        ("person_effect", fit.person_effect.to_string()),
        ("groups", fit.eta_hat.len().to_string()),
    ]);
    summary_csv(&pairs)
}

pub fn residual_csv(rows: &[ResidualRow]) -> Result<String> {
    table(
        &["person_id", "co_index", "age", "age_rank", "eta_hat"],
        rows.iter().map(|r| {
            [
                r.person_id.clone(),
                r.co_index.to_string(),
                num(r.age),
                num(r.age_rank),
                num(r.eta_hat),
            ]
        }),
    )
}

pub fn alignment_csv(r: &AlignmentReport) -> Result<String> {
    table(
        &[
            "person_id",
            "finger",
            "age_first",
            "age_last",
            "scale_factor",
            "smsd_unscaled",
            "smsd_rescaled",
            "smsd_control",
            "relative_reduction",
        ],
        r.rows.iter().map(|row| {
            [
                row.person_id.clone(),
                row.finger.to_string(),
                num(row.age_first),
                num(row.age_last),
                num(row.scale_factor),
                num(row.smsd_unscaled),
                num(row.smsd_rescaled),
                num(row.smsd_control),
                num(row.relative_reduction),
            ]
        }),
    )
}

pub fn alignment_summary_csv(r: &AlignmentReport) -> Result<String> {
    summary_csv(&[
        ("fingers", r.rows.len().to_string()),
        ("median_unscaled", num(r.median_unscaled)),
        ("median_rescaled", num(r.median_rescaled)),
        ("median_control", num(r.median_control)),
        ("raw_reduction", num(r.raw_reduction)),
        ("relative_reduction", num(r.relative_reduction)),
        ("excess_reduction", num(r.excess_reduction)),
        ("reduction_factor_spearman", num(r.reduction_factor_spearman)),
    ])
}

/// One row per probe: genuine score plus impostor count and maximum.
pub fn verification_probes_csv(r: &VerificationReport) -> Result<String> {
    table(
        &[
            "person_id",
            "finger",
            "age_first",
            "age_last",
            "scale_factor",
            "genuine",
            "impostors",
            "impostor_max",
        ],
        r.probes.iter().map(|p| {
            let max = p.impostors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            [
                p.person_id.clone(),
                p.finger.to_string(),
                num(p.age_first),
                num(p.age_last),
                num(p.scale_factor),
                num(p.genuine),
                p.impostors.len().to_string(),
                num(max),
            ]
        }),
    )
}

pub fn verification_summary_csv(r: &VerificationReport) -> Result<String> {
    summary_csv(&[
        ("mode", r.mode.to_string()),
        ("matcher", r.matcher_label.clone()),
        ("fused", r.fused.to_string()),
        ("genuine_attempts", r.probes.len().to_string()),
        (
            "impostor_attempts",
            r.probes.iter().map(|p| p.impostors.len()).sum::<usize>().to_string(),
        ),
        ("eer", num(r.eer)),
        ("eer_pooled", num(r.eer_pooled)),
    ])
}

pub fn error_curve_csv(points: &[ErrorPoint]) -> Result<String> {
    table(
        &["threshold", "far", "frr"],
        points.iter().map(|p| [num(p.threshold), num(p.far), num(p.frr)]),
    )
}

pub fn identification_csv(r: &IdentificationReport) -> Result<String> {
    table(
        &["person_id", "finger", "genuine_score", "rank", "censored"],
        r.queries.iter().map(|q| {
            [
                q.person_id.clone(),
                q.finger.to_string(),
                num(q.genuine_score),
                q.rank.to_string(),
                q.censored.to_string(),
            ]
        }),
    )
}

pub fn identification_summary_csv(r: &IdentificationReport) -> Result<String> {
    summary_csv(&[
        ("mode", r.mode.to_string()),
        ("matcher", r.matcher_label.clone()),
        ("gallery_size", r.gallery_size.to_string()),
        ("queries", r.queries.len().to_string()),
        ("rank_cap", r.rank_cap.map(|k| k.to_string()).unwrap_or_default()),
        ("top1_rate", num(r.top1_rate)),
        ("top3_rate", num(r.top3_rate)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trips_through_csv_reader() {
        let s = summary_csv(&[("a", "1".into()), ("b, c", "x\"y".into())]).unwrap();
        let mut r = csv::Reader::from_reader(s.as_bytes());
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 2);
        assert_eq!(&rows[1][0], "b, c");
        assert_eq!(&rows[1][1], "x\"y");
    }

    #[test]
    fn floats_use_round_trip_formatting() {
        let x = 0.1 + 0.2;
        assert_eq!(num(x).parse::<f64>().unwrap(), x);
        assert_eq!(num(1.0), "1");
    }

    #[test]
    fn error_curve_has_one_row_per_point() {
        let pts = [
            ErrorPoint {
                threshold: 0.5,
                far: 0.25,
                frr: 0.0,
            },
            ErrorPoint {
                threshold: f64::INFINITY,
                far: 0.0,
                frr: 1.0,
            },
        ];
        let s = error_curve_csv(&pts).unwrap();
        assert_eq!(s.lines().count(), 3);
        assert!(s.lines().nth(2).unwrap().starts_with("inf,"));
    }
}
