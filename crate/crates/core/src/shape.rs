//! Generalized Procrustes analysis and tangent-space statistics.
//!
//! Full GPA removes translation, rotation and scale; partial GPA removes only
//! translation and rotation, so size differences stay in the tangent
//! coordinates. Configurations are stacked as `[x0, y0, x1, y1, ...]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{centered, optimal_rotation, spread, Point};
use crate::stats::median;
use crate::types::{Dataset, Finger, ImprintKind};

const MAX_ITERATIONS: usize = 1000;
const MEAN_TOLERANCE: f64 = 1e-10;
/// Total tangent variance below this counts as "no variation".
const ZERO_VARIANCE: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GpaMode {
    Full,
    Partial,
}

#[derive(Debug, Clone)]
pub struct GpaResult {
    pub mode: GpaMode,
    pub mean_shape: Vec<Point>,
    pub aligned: Vec<Vec<Point>>,
    /// One row per configuration; `2m-4` columns (full) or `2m-3` (partial).
    pub tangent_coords: DMatrix<f64>,
    /// Centroid size of each input configuration.
    pub sizes: Vec<f64>,
    pub iterations: usize,
}

fn norm(points: &[Point]) -> f64 {
    points.iter().map(|p| p.norm_sq()).sum::<f64>().sqrt()
}

fn rotate_all(points: &[Point], angle: f64) -> Vec<Point> {
    points.iter().map(|p| p.rotated(angle)).collect()
}

/// Rotation putting a configuration into a reproducible orientation: principal
/// axis along x, sign fixed by the third moment (or by the first landmark when
/// the configuration is too symmetric to decide).
fn canonical_rotation(mean: &[Point]) -> f64 {
    let scale: f64 = mean.iter().map(|p| p.norm_sq()).sum();
    let (re, im) = mean.iter().fold((0.0, 0.0), |(re, im), p| {
        (re + p.x * p.x - p.y * p.y, im + 2.0 * p.x * p.y)
    });
    let landmark = || {
        mean.iter()
            .find(|p| p.norm_sq() > 1e-12 * scale)
            .map(|p| -p.y.atan2(p.x))
            .unwrap_or(0.0)
    };
    if (re * re + im * im).sqrt() <= 1e-8 * scale {
        return landmark();
    }
    let base = -0.5 * im.atan2(re);
    let third: f64 = mean.iter().map(|p| p.rotated(base).x.powi(3)).sum();
    if third.abs() <= 1e-8 * scale.powf(1.5) {
        landmark()
    } else if third < 0.0 {
        base + std::f64::consts::PI
    } else {
        base
    }
}

fn flatten(points: &[Point]) -> DVector<f64> {
    DVector::from_iterator(points.len() * 2, points.iter().flat_map(|p| [p.x, p.y]))
}

/// Orthonormal basis of the complement of the given orthonormal directions,
/// built by Gram–Schmidt over the standard basis.
fn complement_basis(removed: &[DVector<f64>], dim: usize) -> DMatrix<f64> {
    let target = dim - removed.len();
    let mut accepted: Vec<DVector<f64>> = removed.to_vec();
    let mut basis = Vec::with_capacity(target);
    for k in 0..dim {
        if basis.len() == target {
            break;
        }
        let mut v = DVector::zeros(dim);
        v[k] = 1.0;
        for _ in 0..2 {
            for u in &accepted {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            v /= n;
            accepted.push(v.clone());
            basis.push(v);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Generalized Procrustes analysis of corresponding point configurations.
pub fn gpa(configs: &[Vec<Point>], mode: GpaMode) -> Result<GpaResult> {
    if configs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "GPA needs at least 2 configurations, got {}",
            configs.len()
        )));
    }
    let m = configs[0].len();
    if m < 3 {
        return Err(Error::InvalidArgument(format!("GPA needs at least 3 points, got {m}")));
    }
    if let Some(c) = configs.iter().find(|c| c.len() != m) {
        return Err(Error::LengthMismatch {
            left: m,
            right: c.len(),
        });
    }

    let sizes: Vec<f64> = configs.iter().map(|c| spread(c)).collect();
    let mut shapes: Vec<Vec<Point>> = configs.iter().map(|c| centered(c)).collect();
    if sizes.contains(&0.0) {
        return Err(Error::Degenerate("configuration with all points coincident".into()));
    }
    if mode == GpaMode::Full {
        for (s, &size) in shapes.iter_mut().zip(&sizes) {
            s.iter_mut().for_each(|p| *p = *p * (1.0 / size));
        }
    }

    let mut mean = shapes[0].clone();
    let mut aligned = shapes.clone();
    let mut iterations = 0;
    loop {
        for (a, s) in aligned.iter_mut().zip(&shapes) {
            *a = rotate_all(s, optimal_rotation(s, &mean));
        }
        let k = 1.0 / aligned.len() as f64;
        let mut next = vec![Point::ORIGIN; m];
        for a in &aligned {
            for (n, p) in next.iter_mut().zip(a) {
                *n = *n + *p * k;
            }
        }
        if mode == GpaMode::Full {
            let size = norm(&next);
            if size == 0.0 {
                return Err(Error::Degenerate("Procrustes mean collapsed to a point".into()));
            }
            next.iter_mut().for_each(|p| *p = *p * (1.0 / size));
        }
        let change = norm(&next.iter().zip(&mean).map(|(a, b)| *a - *b).collect::<Vec<_>>());
        mean = next;
        iterations += 1;
        if change < MEAN_TOLERANCE {
            for (a, s) in aligned.iter_mut().zip(&shapes) {
                *a = rotate_all(s, optimal_rotation(s, &mean));
            }
            break;
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::NonConvergence { iterations });
        }
    }

    let turn = canonical_rotation(&mean);
    mean = rotate_all(&mean, turn);
    for a in aligned.iter_mut() {
        *a = rotate_all(a, turn);
    }
    shapes.clear();

    let dim = 2 * m;
    let inv_sqrt_m = 1.0 / (m as f64).sqrt();
    let tx = DVector::from_iterator(dim, (0..dim).map(|i| if i % 2 == 0 { inv_sqrt_m } else { 0.0 }));
    let ty = DVector::from_iterator(dim, (0..dim).map(|i| if i % 2 == 1 { inv_sqrt_m } else { 0.0 }));
    let mu = flatten(&mean);
    let mu_norm = mu.norm();
    let rot = DVector::from_iterator(dim, mean.iter().flat_map(|p| [-p.y, p.x])) / mu_norm;
    let mut removed = vec![tx, ty, rot];
    if mode == GpaMode::Full {
        removed.push(&mu / mu_norm);
    }
    let basis = complement_basis(&removed, dim);

    let mut tangent = DMatrix::zeros(aligned.len(), basis.ncols());
    for (i, a) in aligned.iter().enumerate() {
        let resid = flatten(a) - &mu;
        let coords = basis.tr_mul(&resid);
        tangent.row_mut(i).copy_from(&coords.transpose());
    }

    Ok(GpaResult {
        mode,
        mean_shape: mean,
        aligned,
        tangent_coords: tangent,
        sizes,
        iterations,
    })
}

fn centered_columns(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut c = y.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    c
}

/// Eigenvalues of the tangent-coordinate covariance as fractions of their
/// sum, in descending order.
pub fn pc_variance_fractions(g: &GpaResult) -> Result<Vec<f64>> {
    let n = g.tangent_coords.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least 2 configurations".into()));
    }
    let y = centered_columns(&g.tangent_coords);
    let gram = if n <= y.ncols() {
        &y * y.transpose()
    } else {
        y.transpose() * &y
    };
    let total = gram.trace();
    if !(total > ZERO_VARIANCE) {
        return Err(Error::Degenerate("zero total tangent variance".into()));
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(gram)
        .eigenvalues
        .iter()
        .map(|&v| v.max(0.0))
        .collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let sum: f64 = eig.iter().sum();
    Ok(eig.into_iter().map(|v| v / sum).collect())
}

/// Fraction of total tangent variance explained by a linear regression of
/// every coordinate on centroid size (with intercept).
pub fn variance_explained_by_size(g: &GpaResult) -> Result<f64> {
    let n = g.tangent_coords.nrows();
    if g.sizes.len() != n {
        return Err(Error::LengthMismatch {
            left: g.sizes.len(),
            right: n,
        });
    }
    let ms = g.sizes.iter().sum::<f64>() / n as f64;
    let s = DVector::from_iterator(n, g.sizes.iter().map(|v| v - ms));
    let ss = s.norm_squared();
    if !(ss > 1e-24 * ms * ms * n as f64) {
        return Err(Error::Degenerate("size is constant across configurations".into()));
    }
    let y = centered_columns(&g.tangent_coords);
    let total = y.norm_squared();
    if !(total > ZERO_VARIANCE) {
        return Err(Error::Degenerate("zero total tangent variance".into()));
    }
    let proj = y.tr_mul(&s);
    Ok((proj.norm_squared() / ss / total).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct IsotropyRow {
    pub person_id: String,
    pub finger: Finger,
    pub n_configs: usize,
    pub n_points: usize,
    pub pc1_fraction_full: f64,
    pub size_fraction_full: f64,
    pub pc1_fraction_partial: f64,
    pub size_fraction_partial: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IsotropyReport {
    pub rows: Vec<IsotropyRow>,
    pub median_pc1_full: f64,
    pub median_size_full: f64,
    pub median_pc1_partial: f64,
    pub median_size_partial: f64,
}

/// First-PC and size fractions for one mode. Configurations without any
/// tangent variation contribute zero to both.
fn mode_fractions(configs: &[Vec<Point>], mode: GpaMode) -> Result<(f64, f64)> {
    let g = gpa(configs, mode)?;
    let pc1 = match pc_variance_fractions(&g) {
        Ok(f) => f[0],
        Err(Error::Degenerate(_)) => return Ok((0.0, 0.0)),
        Err(e) => return Err(e),
    };
    let size = match variance_explained_by_size(&g) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok((pc1, size))
}

/// Per-person isotropy analysis on all imprints (rolled and plain) of each
/// person's marked finger, for persons with more than two check-outs.
pub fn isotropy_report(d: &Dataset) -> Result<IsotropyReport> {
    if !d.correspondence {
        return Err(Error::Validation(
            "isotropy analysis requires a dataset with minutiae correspondence".into(),
        ));
    }
    let mut rows = Vec::new();
    for person in &d.persons {
        let Some(finger) = person.marked_finger() else { continue };
        if person.checkouts.len() <= 2 {
            continue;
        }
        let configs: Vec<Vec<Point>> = person
            .checkouts
            .iter()
            .flat_map(|co| [ImprintKind::Rolled, ImprintKind::Plain].map(|k| co.template(finger, k)))
            .flatten()
            .map(|t| t.points())
            .collect();
        let (pc1_full, size_full) = mode_fractions(&configs, GpaMode::Full)?;
        let (pc1_partial, size_partial) = mode_fractions(&configs, GpaMode::Partial)?;
        rows.push(IsotropyRow {
            person_id: person.person_id.clone(),
            finger,
            n_configs: configs.len(),
            n_points: configs[0].len(),
            pc1_fraction_full: pc1_full,
            size_fraction_full: size_full,
            pc1_fraction_partial: pc1_partial,
            size_fraction_partial: size_partial,
        });
    }
    if rows.is_empty() {
        return Err(Error::Validation("no finger with more than two check-outs".into()));
    }
    let med = |f: fn(&IsotropyRow) -> f64| median(&rows.iter().map(f).collect::<Vec<_>>()).unwrap();
    Ok(IsotropyReport {
        median_pc1_full: med(|r| r.pc1_fraction_full),
        median_size_full: med(|r| r.size_fraction_full),
        median_pc1_partial: med(|r| r.pc1_fraction_partial),
        median_size_partial: med(|r| r.size_fraction_partial),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{apply_similarity, RigidTransform};
    use approx::assert_abs_diff_eq;

    fn base() -> Vec<Point> {
        [
            (0.0, 0.0),
            (3.0, 0.5),
            (1.0, 2.5),
            (-1.5, 1.0),
            (2.0, -2.0),
            (0.5, -1.2),
        ]
        .iter()
        .map(|&(x, y)| Point::new(x, y))
        .collect()
    }

    fn similar(scale: f64, angle: f64, dx: f64) -> Vec<Point> {
        apply_similarity(&base(), scale, &RigidTransform::new(angle, Point::new(dx, -dx))).unwrap()
    }

    #[test]
    fn exact_copies_have_zero_full_tangent() {
        let configs = vec![similar(1.0, 0.0, 0.0), similar(1.1, 0.4, 2.0), similar(1.2, -1.0, 5.0)];
        let g = gpa(&configs, GpaMode::Full).unwrap();
        assert_eq!(g.tangent_coords.ncols(), 2 * 6 - 4);
        assert!(g.tangent_coords.amax() <= 1e-9);
        for a in &g.aligned {
            assert_abs_diff_eq!(spread(a), 1.0, epsilon = 1e-12);
        }
        assert!(matches!(pc_variance_fractions(&g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn partial_gpa_of_scaled_copies_is_all_size() {
        let configs = vec![similar(1.0, 0.0, 0.0), similar(1.1, 0.4, 2.0), similar(1.2, -1.0, 5.0)];
        let g = gpa(&configs, GpaMode::Partial).unwrap();
        assert_eq!(g.tangent_coords.ncols(), 2 * 6 - 3);
        for (a, c) in g.aligned.iter().zip(&configs) {
            assert_abs_diff_eq!(spread(a), spread(c), epsilon = 1e-12);
        }
        let fr = pc_variance_fractions(&g).unwrap();
        assert!(fr[0] > 0.999_999);
        assert!(variance_explained_by_size(&g).unwrap() >= 0.99);
    }

    #[test]
    fn two_configs_mean_is_midpoint() {
        let mut other = base();
        other[2] = other[2] + Point::new(0.3, -0.2);
        let configs = vec![
            base(),
            apply_similarity(&other, 1.0, &RigidTransform::new(0.7, Point::new(1.0, 1.0))).unwrap(),
        ];
        let g = gpa(&configs, GpaMode::Partial).unwrap();
        for (k, m) in g.mean_shape.iter().enumerate() {
            let mid = (g.aligned[0][k] + g.aligned[1][k]) * 0.5;
            assert_abs_diff_eq!((*m - mid).norm(), 0.0, epsilon = 1e-9);
        }
        let g = gpa(&configs, GpaMode::Full).unwrap();
        let mid: Vec<Point> = (0..6).map(|k| (g.aligned[0][k] + g.aligned[1][k]) * 0.5).collect();
        let s = norm(&mid);
        for (m, p) in g.mean_shape.iter().zip(&mid) {
            assert_abs_diff_eq!((*m - *p * (1.0 / s)).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn tangent_rows_have_zero_mean() {
        let mut configs = Vec::new();
        for k in 0..5 {
            let mut c = similar(1.0 + 0.05 * k as f64, 0.3 * k as f64, k as f64);
            c[k] = c[k] + Point::new(0.1 * k as f64, -0.05);
            configs.push(c);
        }
        for mode in [GpaMode::Full, GpaMode::Partial] {
            let g = gpa(&configs, mode).unwrap();
            for col in g.tangent_coords.column_iter() {
                assert!(col.mean().abs() < 1e-9, "{mode:?}");
            }
            let fr = pc_variance_fractions(&g).unwrap();
            assert_abs_diff_eq!(fr.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(fr.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    fn synthetic_result(rows: Vec<Vec<f64>>, sizes: Vec<f64>) -> GpaResult {
        let n = rows.len();
        let p = rows[0].len();
        GpaResult {
            mode: GpaMode::Full,
            mean_shape: Vec::new(),
            aligned: Vec::new(),
            tangent_coords: DMatrix::from_row_iterator(n, p, rows.into_iter().flatten()),
            sizes,
            iterations: 0,
        }
    }

    #[test]
    fn size_regression_extremes() {
        let sizes = vec![1.0, 2.0, 4.0, 5.0];
        let rows = sizes.iter().map(|s| vec![2.0 * s + 1.0, -0.5 * s, 0.0]).collect();
        assert_abs_diff_eq!(
            variance_explained_by_size(&synthetic_result(rows, sizes.clone())).unwrap(),
            1.0,
            epsilon = 1e-12
        );

        // Columns orthogonal to centered sizes (-2, -1, 1, 2).
        let rows = vec![vec![1.0, 1.0], vec![-1.0, -2.0], vec![-1.0, 2.0], vec![1.0, -1.0]];
        assert_abs_diff_eq!(
            variance_explained_by_size(&synthetic_result(rows, sizes)).unwrap(),
            0.0,
            epsilon = 1e-12
        );

        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert!(matches!(
            variance_explained_by_size(&synthetic_result(rows, vec![2.0; 3])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn single_direction_variation_has_unit_first_fraction() {
        let rows = (0..6)
            .map(|k| vec![0.5 * k as f64, -(k as f64), 0.25 * k as f64])
            .collect();
        let g = synthetic_result(rows, vec![1.0; 6]);
        let fr = pc_variance_fractions(&g).unwrap();
        assert_abs_diff_eq!(fr[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gpa_input_errors() {
        assert!(gpa(&[base()], GpaMode::Full).is_err());
        let mut short = base();
        short.pop();
        assert!(matches!(
            gpa(&[base(), short, base()], GpaMode::Full),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
