use std::path::Path;
use std::process::{Command, Output};

use fingergrowth::dataset::{load_template, save_template};
use fingergrowth::geometry::spread;
use fingergrowth::growth::GrowthChart;
use fingergrowth::types::{Finger, ImprintKind, Minutia, MinutiaKind, Sex, Template};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fingergrowth"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn csv_value(path: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key},")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing in {}", path.display()))
}

fn sample_template(dir: &Path) -> Template {
    let t = Template::new(
        Finger::RightIndex,
        ImprintKind::Rolled,
        500.0,
        [(0.0, 0.0), (3.0, 1.0), (-2.0, 4.5), (1.5, -3.0), (4.0, 4.0)]
            .iter()
            .map(|&(x, y)| Minutia::new(x, y, MinutiaKind::Unknown))
            .collect(),
    );
    save_template(dir.join("t.json"), &t).unwrap();
    t
}

#[test]
fn usage_and_validation_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["synth", "--persons", "4"]).status.code(), Some(1));
    assert_eq!(run(d, &["unknown"]).status.code(), Some(1));
    let bad = run(d, &["synth", "--sigma-eta", "-1", "--out", "d.json"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("sigma_eta"));
    assert!(
        std::fs::read_dir(d).unwrap().next().is_none(),
        "nothing may be written on error"
    );
    assert_eq!(
        run(d, &["align", "--dataset", "missing.json", "--out", "a.csv"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(run(d, &["synth", "--out", "no/such/dir/d.json"]).status.code(), Some(2));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));
}

#[test]
fn synth_writes_dataset_truth_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["synth", "--persons", "5", "--seed", "7", "--out", "d.json"])
        .status
        .success());
    for f in ["d.json", "d_truth.json", "d.json.manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let data: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("d.json")).unwrap()).unwrap();
    let truth: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("d_truth.json")).unwrap()).unwrap();
    assert_eq!(data["seed"], 7);
    assert_eq!(truth["seed"], 7);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(d.join("d.json.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"][0], 7);
    assert_eq!(manifest["command"]["synth"]["persons"], 5);
}

#[test]
fn analysis_commands_on_noise_free_data() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = [
        "synth",
        "--persons",
        "8",
        "--seed",
        "2",
        "--sigma-eta",
        "0",
        "--sigma-eps",
        "0",
        "--jitter-mm",
        "0",
        "--min-checkouts",
        "3",
        "--out",
        "d.json",
    ];
    assert!(run(d, &synth).status.success());
    assert!(run(d, &["isotropy", "--dataset", "d.json", "--out", "iso.csv"])
        .status
        .success());
    let full: f64 = csv_value(&d.join("iso_summary.csv"), "median_size_full")
        .parse()
        .unwrap();
    assert!(full.abs() < 1e-6, "{full}");

    assert!(run(d, &["align", "--dataset", "d.json", "--out", "al.csv"])
        .status
        .success());
    let rescaled: f64 = csv_value(&d.join("al_summary.csv"), "median_rescaled").parse().unwrap();
    assert!(rescaled < 1e-9, "{rescaled}");

    let manifest = std::fs::read_to_string(d.join("al.csv.manifest.json")).unwrap();
    assert!(manifest.contains("sha256"));
}

#[test]
fn isotropy_needs_correspondence() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(
        run(d, &["synth", "--persons", "4", "--dropout", "0.2", "--out", "d.json"])
            .status
            .success()
    );
    let out = run(d, &["isotropy", "--dataset", "d.json", "--out", "iso.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!d.join("iso.csv").exists());
}

#[test]
fn fit_growth_writes_summary_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["synth", "--persons", "12", "--out", "d.json"])
        .status
        .success());
    assert!(run(d, &["fit-growth", "--dataset", "d.json", "--out", "fit.csv"])
        .status
        .success());
    let sigma: f64 = csv_value(&d.join("fit.csv"), "sigma_eta").parse().unwrap();
    assert!(sigma > 0.0 && sigma < 0.1);
    let residuals = std::fs::read_to_string(d.join("fit_residuals.csv")).unwrap();
    assert!(residuals.starts_with("person_id,co_index,age,age_rank,eta_hat\n"));
    assert!(run(
        d,
        &[
            "plot",
            "--input",
            "fit_residuals.csv",
            "--kind",
            "scatter",
            "--x",
            "age_rank",
            "--y",
            "eta_hat",
            "--out",
            "r.svg"
        ]
    )
    .status
    .success());
    let svg = std::fs::read_to_string(d.join("r.svg")).unwrap();
    assert_eq!(svg.matches("<circle").count(), residuals.lines().count() - 1);
}

#[test]
fn rescale_identity_and_factor_sets() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let t = sample_template(d);

    let args = [
        "rescale",
        "--template",
        "t.json",
        "--from-age",
        "10",
        "--to-age",
        "10",
        "--sex",
        "f",
        "--out",
        "same.json",
    ];
    assert!(run(d, &args).status.success());
    let same = load_template(d.join("same.json")).unwrap();
    assert_eq!(same.minutiae, t.minutiae);

    let args = [
        "rescale",
        "--template",
        "t.json",
        "--from-age",
        "8",
        "--to-age",
        "16",
        "--sex",
        "m",
        "--out",
        "r.json",
    ];
    assert!(run(d, &args).status.success());
    let f = GrowthChart::fixture().scale_factor(8.0, 16.0, Sex::Male).unwrap().value;
    let r = load_template(d.join("r.json")).unwrap();
    assert!((spread(&r.points()) / spread(&t.points()) - f).abs() < 1e-12);

    let args = [
        "rescale",
        "--template",
        "t.json",
        "--from-age",
        "8",
        "--to-age",
        "16",
        "--sex",
        "m",
        "--factors",
        "3",
        "--spread-pct",
        "5",
        "--out",
        "m.json",
    ];
    assert!(run(d, &args).status.success());
    let ratios: Vec<f64> = (1..=3)
        .map(|i| spread(&load_template(d.join(format!("m_{i}.json"))).unwrap().points()) / spread(&t.points()))
        .collect();
    for (got, want) in ratios.iter().zip([0.95 * f, f, 1.05 * f]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!(!d.join("m.json").exists());
    assert_eq!(
        run(
            d,
            &[
                "rescale",
                "--template",
                "t.json",
                "--from-age",
                "8",
                "--to-age",
                "16",
                "--sex",
                "m",
                "--factors",
                "2",
                "--out",
                "x.json"
            ]
        )
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn plot_kinds_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("two.csv"), "x,y\n1,2\n3,5\n").unwrap();
    assert!(run(
        d,
        &["plot", "--input", "two.csv", "--kind", "scatter", "--out", "s.svg"]
    )
    .status
    .success());
    assert_eq!(
        std::fs::read_to_string(d.join("s.svg"))
            .unwrap()
            .matches("<circle")
            .count(),
        2
    );

    let values: String = (1..=100).map(|i| format!("{i}\n")).collect();
    std::fs::write(d.join("v.csv"), format!("v\n{values}")).unwrap();
    assert!(run(d, &["plot", "--input", "v.csv", "--kind", "box", "--out", "b.svg"])
        .status
        .success());
    let svg = std::fs::read_to_string(d.join("b.svg")).unwrap();
    assert!(svg.contains(r#"data-value="25.75""#) && svg.contains(r#"data-value="75.25""#));

    std::fs::write(d.join("empty.csv"), "").unwrap();
    assert_eq!(
        run(
            d,
            &["plot", "--input", "empty.csv", "--kind", "scatter", "--out", "e.svg"]
        )
        .status
        .code(),
        Some(2)
    );
    assert!(!d.join("e.svg").exists());
}

#[test]
fn verify_and_identify_small_runs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["synth", "--persons", "6", "--seed", "1", "--out", "d.json"])
        .status
        .success());
    assert!(run(
        d,
        &["verify", "--dataset", "d.json", "--mode", "unscaled", "--out", "v.csv"]
    )
    .status
    .success());
    let eer: f64 = csv_value(&d.join("v_summary.csv"), "eer").parse().unwrap();
    assert!((0.0..=0.5).contains(&eer));
    let curve = std::fs::read_to_string(d.join("v_curve.csv")).unwrap();
    assert!(curve.lines().last().unwrap().starts_with("inf,0,1"));

    let args = [
        "identify",
        "--dataset",
        "d.json",
        "--gallery-size",
        "50",
        "--rank-cap",
        "3",
        "--out",
        "id.csv",
    ];
    assert!(run(d, &args).status.success());
    assert_eq!(csv_value(&d.join("id_summary.csv"), "gallery_size"), "56");
    let bad = [
        "identify",
        "--dataset",
        "d.json",
        "--gallery-size",
        "50",
        "--rank-cap",
        "1",
        "--out",
        "id2.csv",
    ];
    assert_eq!(run(d, &bad).status.code(), Some(2));
}
