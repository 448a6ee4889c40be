//! Command-line interface. Every command computes its results in memory and
//! only then writes the output files, each set accompanied by a
//! `<out>.manifest.json` recording flags, seeds and input digests.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input, 3 numerical failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dataset::{dataset_to_string, parse_dataset, parse_template, template_to_string};
use crate::error::{Error, Result};
use crate::evaluation::{
    alignment_experiment, identification_setup, run_identification, run_verification, EvalConfig, Mode,
};
use crate::growth::{factor_set, rescale_template, GrowthChart};
use crate::matcher::MatchParams;
use crate::mixed::{build_observations, fit_ml, residual_table, FitOptions};
use crate::shape::isotropy_report;
use crate::synth::{distractor_gallery, generate, SynthConfig};
use crate::types::Sex;
use crate::{plot, report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "fingergrowth",
    version,
    about = "Growth modelling and rescaling of juvenile fingerprint minutiae"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a synthetic longitudinal dataset and its ground truth.
    Synth(SynthArgs),
    /// Per-person shape analysis under full and partial GPA.
    Isotropy(IsotropyArgs),
    /// Fit the log-size mixed model.
    FitGrowth(FitGrowthArgs),
    /// SMSD of first versus last imprints with and without rescaling.
    Align(AlignArgs),
    /// Verification protocol: genuine and impostor scores and the EER.
    Verify(VerifyArgs),
    /// Identification against a synthetic distractor gallery.
    Identify(IdentifyArgs),
    /// Rescale a template from one age to another.
    Rescale(RescaleArgs),
    /// Draw an SVG plot from a CSV table.
    Plot(PlotArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ChartArg {
    /// Stature-for-age chart CSV; the built-in fixture when omitted.
    #[arg(long)]
    pub chart: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth JSON path; defaults to `<out stem>_truth.json`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long, default_value_t = 48)]
    pub persons: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0224, allow_negative_numbers = true)]
    pub sigma_eta: f64,
    #[arg(long, default_value_t = 0.0225, allow_negative_numbers = true)]
    pub sigma_eps: f64,
    #[arg(long, default_value_t = 0.2, allow_negative_numbers = true)]
    pub jitter_mm: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub dropout: f64,
    #[arg(long, default_value_t = 4.0, allow_negative_numbers = true)]
    pub base_size_mm: f64,
    /// Relative x-stretch per year since the first check-out.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub anisotropy: f64,
    #[arg(long, default_value_t = 2)]
    pub min_checkouts: usize,
    #[arg(long, default_value_t = 6)]
    pub max_checkouts: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
}

#[derive(Debug, Args, Serialize)]
pub struct IsotropyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FitGrowthArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
    /// Fit without the per-person random intercept.
    #[arg(long)]
    pub no_person_effect: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AlignArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Unscaled,
    Rescaled,
    MultiFactor,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Unscaled => Mode::Unscaled,
            ModeArg::Rescaled => Mode::Rescaled,
            ModeArg::MultiFactor => Mode::MultiFactor,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct MatchArgs {
    /// Match radius in mm; repeat or comma-separate to fuse several matchers.
    #[arg(long, value_delimiter = ',', default_value = "0.8", allow_negative_numbers = true)]
    pub radius_mm: Vec<f64>,
    /// Size of the factor set in multi-factor mode.
    #[arg(long, default_value_t = 3)]
    pub factors: usize,
    /// Spacing of the factor set, percent.
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub spread_pct: f64,
}

impl MatchArgs {
    fn eval_config(&self) -> Result<EvalConfig> {
        let cfg = EvalConfig {
            matchers: self.radius_mm.iter().map(|&r| MatchParams::with_radius(r)).collect(),
            factor_count: self.factors,
            spread_pct: self.spread_pct,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args, Serialize)]
pub struct VerifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Rescaled)]
    pub mode: ModeArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub matching: MatchArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IdentifyArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
    #[arg(long, value_enum, default_value_t = ModeArg::Rescaled)]
    pub mode: ModeArg,
    /// Number of synthetic adult distractors added to the gallery.
    #[arg(long, default_value_t = 10_000)]
    pub gallery_size: usize,
    /// Seed of the distractor gallery.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8, allow_negative_numbers = true)]
    pub radius_mm: f64,
    /// Stop ranking a query once its rank exceeds this value (at least 3).
    #[arg(long)]
    pub rank_cap: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SexArg {
    M,
    F,
}

#[derive(Debug, Args, Serialize)]
pub struct RescaleArgs {
    #[arg(long)]
    pub template: PathBuf,
    #[arg(long)]
    pub from_age: f64,
    #[arg(long)]
    pub to_age: f64,
    #[arg(long, value_enum)]
    pub sex: SexArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub chart: ChartArg,
    /// Emit this many templates spaced `--spread-pct` apart around the chart
    /// factor; files are numbered `<stem>_1`, `<stem>_2`, ... in factor order.
    #[arg(long, default_value_t = 1)]
    pub factors: usize,
    #[arg(long, default_value_t = 5.0, allow_negative_numbers = true)]
    pub spread_pct: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlotKind {
    Scatter,
    Box,
}

#[derive(Debug, Args, Serialize)]
pub struct PlotArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    /// Scatter x column; first numeric column by default.
    #[arg(long)]
    pub x: Option<String>,
    /// Scatter y column; next numeric column by default.
    #[arg(long)]
    pub y: Option<String>,
    /// Box-plot value column; first numeric column by default.
    #[arg(long)]
    pub value: Option<String>,
    /// Box-plot grouping column; one box when omitted.
    #[arg(long)]
    pub group: Option<String>,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seeds: Vec<u64>,
    inputs: BTreeMap<&'static str, InputDigest>,
    outputs: Vec<PathBuf>,
}

/// Files a command will write, with the inputs it read.
struct Outputs {
    files: Vec<(PathBuf, String)>,
    inputs: BTreeMap<&'static str, InputDigest>,
    seeds: Vec<u64>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            files: Vec::new(),
            inputs: BTreeMap::new(),
            seeds: Vec::new(),
        }
    }

    fn add(&mut self, path: PathBuf, content: String) {
        self.files.push((path, content));
    }

    fn read(&mut self, role: &'static str, path: &Path) -> Result<String> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        self.inputs.insert(
            role,
            InputDigest {
                path: path.to_path_buf(),
                sha256: hex::encode(Sha256::digest(&bytes)),
            },
        );
        String::from_utf8(bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    fn chart(&mut self, arg: &ChartArg) -> Result<GrowthChart> {
        match &arg.chart {
            Some(p) => {
                let text = self.read("chart", p)?;
                GrowthChart::parse(&text)
            }
            None => Ok(GrowthChart::fixture()),
        }
    }

    fn dataset(&mut self, path: &Path) -> Result<crate::types::Dataset> {
        let text = self.read("dataset", path)?;
        parse_dataset(&text)
    }

    fn write(self, command: &Command, manifest_for: &Path) -> Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            seeds: self.seeds,
            inputs: self.inputs,
            outputs: self.files.iter().map(|(p, _)| p.clone()).collect(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
        json.push('\n');
        let manifest_path = append_to_name(manifest_for, ".manifest.json");
        for (path, content) in self.files.iter().chain(std::iter::once(&(manifest_path, json))) {
            fs::write(path, content).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn append_to_name(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

/// `dir/stem.ext` becomes `dir/stem<tag>.ext`.
fn sibling(path: &Path, tag: &str, default_ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_else(|| default_ext.to_string());
    path.with_file_name(format!("{stem}{tag}.{ext}"))
}

fn check_output_dir(out: &Path) -> Result<()> {
    match out.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Validation(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn out_path(cmd: &Command) -> &Path {
    match cmd {
        Command::Synth(a) => &a.out,
        Command::Isotropy(a) => &a.out,
        Command::FitGrowth(a) => &a.out,
        Command::Align(a) => &a.out,
        Command::Verify(a) => &a.out,
        Command::Identify(a) => &a.out,
        Command::Rescale(a) => &a.out,
        Command::Plot(a) => &a.out,
    }
}

fn execute(cmd: &Command) -> Result<Outputs> {
    let mut o = Outputs::new();
    match cmd {
        Command::Synth(a) => {
            let mut chart_o = Outputs::new();
            let chart = chart_o.chart(&a.chart)?;
            o.inputs = chart_o.inputs;
            let cfg = SynthConfig {
                n_persons: a.persons,
                cos_per_person: (a.min_checkouts, a.max_checkouts),
                sigma_eta: a.sigma_eta,
                sigma_eps: a.sigma_eps,
                jitter_mm: a.jitter_mm,
                dropout_prob: a.dropout,
                base_size_mm: a.base_size_mm,
                anisotropy: a.anisotropy,
                seed: a.seed,
                ..SynthConfig::default()
            };
            cfg.validate()?;
            let (d, truth) = generate(&cfg, &chart)?;
            let mut truth_json = serde_json::to_string_pretty(&truth).map_err(|e| Error::Parse(e.to_string()))?;
            truth_json.push('\n');
            let truth_path = a.truth.clone().unwrap_or_else(|| sibling(&a.out, "_truth", "json"));
            o.seeds.push(a.seed);
            o.add(a.out.clone(), dataset_to_string(&d, Some(a.seed)));
            o.add(truth_path, truth_json);
        }
        Command::Isotropy(a) => {
            let d = o.dataset(&a.dataset)?;
            let r = isotropy_report(&d)?;
            o.add(a.out.clone(), report::isotropy_csv(&r)?);
            o.add(sibling(&a.out, "_summary", "csv"), report::isotropy_summary_csv(&r)?);
        }
        Command::FitGrowth(a) => {
            let d = o.dataset(&a.dataset)?;
            let chart = o.chart(&a.chart)?;
            let obs = build_observations(&d, &chart)?;
            let opts = FitOptions {
                person_effect: !a.no_person_effect,
                ..FitOptions::default()
            };
            let fit = fit_ml(&obs, &opts)?;
            let rows = residual_table(&fit, &d)?;
            o.add(a.out.clone(), report::mixed_fit_csv(&fit)?);
            o.add(sibling(&a.out, "_residuals", "csv"), report::residual_csv(&rows)?);
        }
        Command::Align(a) => {
            let d = o.dataset(&a.dataset)?;
            let chart = o.chart(&a.chart)?;
            let r = alignment_experiment(&d, &chart)?;
            o.add(a.out.clone(), report::alignment_csv(&r)?);
            o.add(sibling(&a.out, "_summary", "csv"), report::alignment_summary_csv(&r)?);
        }
        Command::Verify(a) => {
            let cfg = a.matching.eval_config()?;
            let d = o.dataset(&a.dataset)?;
            let chart = o.chart(&a.chart)?;
            let r = run_verification(&d, &chart, a.mode.into(), &cfg)?;
            o.add(a.out.clone(), report::verification_probes_csv(&r)?);
            o.add(
                sibling(&a.out, "_summary", "csv"),
                report::verification_summary_csv(&r)?,
            );
            o.add(
                sibling(&a.out, "_curve", "csv"),
                report::error_curve_csv(&r.error_curve()?)?,
            );
        }
        Command::Identify(a) => {
            let params = MatchParams::with_radius(a.radius_mm);
            params.validate()?;
            if a.rank_cap.is_some_and(|k| k < 3) {
                return Err(Error::InvalidArgument("--rank-cap must be at least 3".into()));
            }
            let d = o.dataset(&a.dataset)?;
            let chart = o.chart(&a.chart)?;
            let distractors = distractor_gallery(a.gallery_size, &SynthConfig::default(), a.seed)?;
            let (queries, gallery) = identification_setup(&d, distractors)?;
            let r = run_identification(&queries, &gallery, &chart, a.mode.into(), &params, a.rank_cap)?;
            o.seeds.push(a.seed);
            o.add(a.out.clone(), report::identification_csv(&r)?);
            o.add(
                sibling(&a.out, "_summary", "csv"),
                report::identification_summary_csv(&r)?,
            );
        }
        Command::Rescale(a) => {
            let text = o.read("template", &a.template)?;
            let t = parse_template(&text)?;
            let chart = o.chart(&a.chart)?;
            let sex = match a.sex {
                SexArg::M => Sex::Male,
                SexArg::F => Sex::Female,
            };
            let f = chart.scale_factor(a.from_age, a.to_age, sex)?;
            if a.factors == 1 {
                o.add(a.out.clone(), template_to_string(&rescale_template(&t, &f)?));
            } else {
                for (i, fi) in factor_set(&f, a.spread_pct, a.factors)?.iter().enumerate() {
                    let path = sibling(&a.out, &format!("_{}", i + 1), "json");
                    o.add(path, template_to_string(&rescale_template(&t, fi)?));
                }
            }
        }
        Command::Plot(a) => {
            let text = o.read("input", &a.input)?;
            let svg = match a.kind {
                PlotKind::Scatter => plot::scatter_svg(&text, a.x.as_deref(), a.y.as_deref(), &a.title)?,
                PlotKind::Box => plot::box_svg(&text, a.value.as_deref(), a.group.as_deref(), &a.title)?,
            };
            o.add(a.out.clone(), svg);
        }
    }
    Ok(o)
}

/// Runs the command given by `args` (program name first) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let out = out_path(&cli.command);
    let result = check_output_dir(out)
        .and_then(|_| execute(&cli.command))
        .and_then(|o| o.write(&cli.command, out));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_INVALID
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_paths() {
        assert_eq!(
            sibling(Path::new("a/r.csv"), "_summary", "csv"),
            PathBuf::from("a/r_summary.csv")
        );
        assert_eq!(sibling(Path::new("r"), "_1", "json"), PathBuf::from("r_1.json"));
        assert_eq!(
            append_to_name(Path::new("a/r.csv"), ".manifest.json"),
            PathBuf::from("a/r.csv.manifest.json")
        );
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["fingergrowth", "synth"]), EXIT_USAGE);
        assert_eq!(run(["fingergrowth", "frobnicate"]), EXIT_USAGE);
        assert_eq!(
            run([
                "fingergrowth",
                "verify",
                "--dataset",
                "x",
                "--out",
                "y",
                "--mode",
                "sideways"
            ]),
            EXIT_USAGE
        );
    }

    #[test]
    fn validation_errors_exit_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.json");
        let out = out.to_str().unwrap();
        assert_eq!(
            run(["fingergrowth", "synth", "--out", out, "--sigma-eta", "-1"]),
            EXIT_INVALID
        );
        assert!(std::fs::read_dir(dir.path()).unwrap().next().is_none());
        assert_eq!(
            run([
                "fingergrowth",
                "isotropy",
                "--dataset",
                "/nonexistent/d.json",
                "--out",
                out
            ]),
            EXIT_INVALID
        );
    }
}
