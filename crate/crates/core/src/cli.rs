//! Command-line front end: `generate`, `analyze` and `verify`.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::curvature::{curvature_field, FieldOptions, FieldSummary, Method, PruneStats, TangentSource};
use crate::energy::{lp_energy, EnergyReport};
use crate::error::{Error, Result};
use crate::graphpatch::GraphFunction;
use crate::multiscale::{
    decay_fit, default_grid, fineness, scale_profile, spread_indices, DecayFit, EnergyKind, FinenessReport,
    DEFAULT_SCALES,
};
use crate::report::{fmt_human, histogram, plot_data, to_json, CsvTable, SCHEMA_VERSION};
use crate::sampled_set::{generate, load_points, to_csv, InputFormat, LoadOptions, Shape, ShapeSpec, WeightedSample};
use crate::suites::{input_suite, run_suite, suite_names, CriterionResult};

/// Base points used for the beta/theta profile.
pub const PROFILE_BASE_POINTS: usize = 64;
/// Default PCA radius in units of the mean spacing.
pub const PCA_SPACING_FACTOR: f64 = 8.0;
const HISTOGRAM_BINS: usize = 40;

#[derive(Parser, Debug)]
#[command(name = "curvametric", version, about = "Curvature energies and multiscale flatness of sampled sets")]
pub struct Cli {
    /// Worker threads (results never depend on it).
    #[arg(long, global = true, env = "CURVAMETRIC_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a builtin shape to CSV with a JSON sidecar.
    Generate(GenerateArgs),
    /// Profiles, fineness, curvature field and energy of a sample.
    Analyze(AnalyzeArgs),
    /// Run an acceptance suite, or the checks applicable to an input.
    Verify(VerifyArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Sphere,
    Ellipsoid,
    Torus,
    FlatDisk,
    Graph,
    StackedSpheres,
    Trefoil,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum FunctionKind {
    Zero,
    Affine,
    Quadratic,
    Paraboloid,
    Sinusoidal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindArg {
    Menger,
    Tp,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum MethodArg {
    Exact,
    Pruned,
}

/// `analytic`, `pca` (radius 8 x mean spacing) or `pca:R`.
#[derive(Clone, Debug, PartialEq)]
pub enum TangentArg {
    Analytic,
    Pca(Option<f64>),
}

impl FromStr for TangentArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "analytic" => Ok(TangentArg::Analytic),
            "pca" => Ok(TangentArg::Pca(None)),
            _ => {
                let r = s
                    .strip_prefix("pca:")
                    .ok_or_else(|| format!("expected analytic, pca or pca:R, got {s:?}"))?
                    .parse::<f64>()
                    .map_err(|e| format!("bad PCA radius: {e}"))?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(format!("PCA radius must be positive, got {r}"));
                }
                Ok(TangentArg::Pca(Some(r)))
            }
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct ShapeArgs {
    #[arg(long, value_enum)]
    pub shape: Option<ShapeKind>,
    /// Ambient dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Intrinsic dimension.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub radius: Option<f64>,
    /// Ellipse/ellipsoid semi-axes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub axes: Vec<f64>,
    #[arg(long)]
    pub major: Option<f64>,
    #[arg(long)]
    pub minor: Option<f64>,
    #[arg(long)]
    pub depth: Option<usize>,
    /// Trefoil scale.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Graph function.
    #[arg(long, value_enum)]
    pub function: Option<FunctionKind>,
    /// Graph grid cells per axis (multiple of 4); derived from --count when absent.
    #[arg(long)]
    pub intervals: Option<usize>,
    /// Affine slope, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub slope: Vec<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub offset: Option<f64>,
    /// Quadratic form, row-major m x m.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub matrix: Vec<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub frequency: Option<f64>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[arg(long)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub shape: ShapeArgs,
    /// CSV (x1..xn[,w]) or OBJ point file instead of a builtin shape.
    #[arg(long, conflicts_with = "shape")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "input")]
    pub count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4.0)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "tp")]
    pub kind: KindArg,
    #[arg(long, value_enum, default_value = "pruned")]
    pub method: MethodArg,
    /// analytic | pca | pca:R (default: analytic for builtin shapes, pca otherwise).
    #[arg(long)]
    pub tangents: Option<TangentArg>,
    #[arg(long, default_value_t = DEFAULT_SCALES)]
    pub scales: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all", conflicts_with = "input")]
    pub suite: String,
    /// Run the checks applicable to this sample instead of a suite.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Intrinsic dimension of the input.
    #[arg(long)]
    pub m: Option<usize>,
    /// Where `verify.json` goes; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn graph_function(a: &ShapeArgs, m: usize) -> Result<GraphFunction> {
    let f = match a.function.unwrap_or(FunctionKind::Paraboloid) {
        FunctionKind::Zero => GraphFunction::Zero,
        FunctionKind::Paraboloid => GraphFunction::Paraboloid,
        FunctionKind::Affine => GraphFunction::Affine {
            slope: if a.slope.is_empty() { vec![0.5; m] } else { a.slope.clone() },
            offset: a.offset.unwrap_or(0.0),
        },
        FunctionKind::Quadratic => GraphFunction::Quadratic {
            matrix: if a.matrix.is_empty() {
                (0..m * m).map(|k| if k % (m + 1) == 0 { 1.0 } else { 0.0 }).collect()
            } else {
                a.matrix.clone()
            },
        },
        FunctionKind::Sinusoidal => GraphFunction::Sinusoidal {
            amplitude: a.amplitude.unwrap_or(0.1),
            frequency: a.frequency.unwrap_or(3.0),
        },
    };
    Ok(f)
}

/// Builds the shape spec and checks `--n`/`--m` against it.
pub fn shape_spec(a: &ShapeArgs, count: usize, seed: u64) -> Result<ShapeSpec> {
    let kind = a.shape.ok_or_else(|| Error::InvalidParameter("either --shape or --input is required".into()))?;
    let shape = match kind {
        ShapeKind::Circle => Shape::Circle { radius: a.radius.unwrap_or(1.0), ambient_dim: a.n.unwrap_or(2) },
        ShapeKind::Sphere => Shape::Sphere { radius: a.radius.unwrap_or(1.0) },
        ShapeKind::Ellipsoid => {
            if a.axes.is_empty() {
                return Err(Error::InvalidParameter("--axes is required for --shape ellipsoid".into()));
            }
            Shape::Ellipsoid { axes: a.axes.clone() }
        }
        ShapeKind::Torus => Shape::Torus { major: a.major.unwrap_or(1.0), minor: a.minor.unwrap_or(0.4) },
        ShapeKind::FlatDisk => Shape::FlatDisk { radius: a.radius.unwrap_or(1.0), ambient_dim: a.n.unwrap_or(3) },
        ShapeKind::Graph => {
            let m = a.m.unwrap_or(2);
            let intervals = match a.intervals {
                Some(k) => k,
                None => {
                    let side = (count as f64).powf(1.0 / m as f64).round() as usize;
                    (side.saturating_sub(1) / 4).max(1) * 4
                }
            };
            Shape::GraphOfFunction {
                function: graph_function(a, m)?,
                m,
                ambient_dim: a.n.unwrap_or(m + 1),
                radius: a.radius.unwrap_or(1.0),
                intervals,
            }
        }
        ShapeKind::StackedSpheres => Shape::StackedSpheres { depth: a.depth.unwrap_or(3) },
        ShapeKind::Trefoil => Shape::Trefoil { scale: a.scale.unwrap_or(1.0) },
    };
    let (n, m) = shape.dims();
    if let Some(want) = a.n {
        if want != n {
            return Err(Error::InvalidParameter(format!("--n {want} does not match the shape (n = {n})")));
        }
    }
    if let Some(want) = a.m {
        if want != m {
            return Err(Error::InvalidParameter(format!("--m {want} does not match the shape (m = {m})")));
        }
    }
    Ok(ShapeSpec { shape, count, seed })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    schema_version: u32,
    spec: &'a ShapeSpec,
    seed: u64,
    count: usize,
    ambient_dim: usize,
    intrinsic_dim: usize,
    analytic_measure: Option<f64>,
    total_measure: f64,
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<Vec<PathBuf>> {
    let spec = shape_spec(&a.shape, a.count, a.seed)?;
    let s = generate(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    let csv = a.out.join("sample.csv");
    let json = a.out.join("sample.json");
    std::fs::write(&csv, to_csv(&s))?;
    let side = Sidecar {
        schema_version: SCHEMA_VERSION,
        spec: &spec,
        seed: spec.seed,
        count: s.len(),
        ambient_dim: s.ambient_dim(),
        intrinsic_dim: s.intrinsic_dim(),
        analytic_measure: spec.shape.analytic_measure(),
        total_measure: s.total_measure(),
    };
    std::fs::write(&json, to_json(&side) + "\n")?;
    Ok(vec![csv, json])
}

#[derive(Debug, Clone)]
pub enum Source {
    Shape(ShapeSpec),
    Input { path: PathBuf, m: usize },
}

/// Everything `analyze` needs; the thread count is deliberately absent.
#[derive(Debug, Clone)]
pub struct AnalyzeConfig {
    pub source: Source,
    pub p: f64,
    pub kind: EnergyKind,
    pub method: Method,
    /// `None` picks analytic tangents when the sample has them, PCA otherwise.
    pub tangents: Option<TangentSource>,
    pub scales: usize,
    pub seed: u64,
}

impl AnalyzeConfig {
    pub fn for_shape(spec: ShapeSpec) -> Self {
        Self {
            seed: spec.seed,
            source: Source::Shape(spec),
            p: 4.0,
            kind: EnergyKind::TangentPoint,
            method: Method::Pruned,
            tangents: None,
            scales: DEFAULT_SCALES,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleInfo {
    pub count: usize,
    pub ambient_dim: usize,
    pub intrinsic_dim: usize,
    pub total_measure: f64,
    pub analytic_measure: Option<f64>,
    pub mean_spacing: f64,
    pub diam: f64,
    pub diam_exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeSummary {
    pub schema_version: u32,
    pub source: String,
    pub spec: Option<ShapeSpec>,
    pub p: f64,
    pub kind: EnergyKind,
    pub method: Method,
    pub tangents: TangentSource,
    pub seed: u64,
    pub sample: SampleInfo,
    pub radii: Vec<f64>,
    pub field: FieldSummary,
    pub prune_stats: PruneStats,
    pub energy: EnergyReport,
    pub fineness: Option<FinenessReport>,
    pub fineness_error: Option<String>,
    pub decay: Option<DecayFit>,
    pub decay_error: Option<String>,
}

pub struct AnalyzeOutput {
    pub summary: AnalyzeSummary,
    /// File name and contents, in write order.
    pub files: Vec<(String, String)>,
}

fn load_source(src: &Source) -> Result<(WeightedSample, String, Option<ShapeSpec>)> {
    match src {
        Source::Shape(spec) => Ok((generate(spec)?, "builtin".into(), Some(spec.clone()))),
        Source::Input { path, m } => {
            let format = InputFormat::from_path(path).ok_or_else(|| {
                Error::InvalidParameter(format!("cannot tell the format of {} (want .csv or .obj)", path.display()))
            })?;
            Ok((load_points(path, format, *m, LoadOptions::default())?, path.display().to_string(), None))
        }
    }
}

pub fn analyze(cfg: &AnalyzeConfig) -> Result<AnalyzeOutput> {
    let (s, source, spec) = load_source(&cfg.source)?;
    let tangents = match &cfg.tangents {
        Some(t) => t.clone(),
        None if s.tangents().is_some() => TangentSource::Analytic,
        None => TangentSource::Pca(PCA_SPACING_FACTOR * s.mean_spacing()),
    };
    let opts = FieldOptions { tangents: tangents.clone(), method: cfg.method, seed: cfg.seed, override_cutoff: false };
    let field = curvature_field(&s, cfg.kind, &opts)?;
    let energy = lp_energy(&field, &s, cfg.p)?;
    let radii = default_grid(&s, cfg.scales);
    let base = spread_indices(s.len(), PROFILE_BASE_POINTS);
    let profile = scale_profile(&s, &base, &radii, true)?;
    let (fine, fine_err) = match fineness(&s, &profile) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (decay, decay_err) = match decay_fit(&profile, cfg.p, s.intrinsic_dim(), cfg.kind) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let diam = s.sample_diam();

    let k = field.witnesses.iter().map(Vec::len).max().unwrap_or(0);
    let mut header = vec!["point_index".to_string(), "value".into(), "certified".into()];
    header.extend((0..k).map(|j| format!("witness_{j}")));
    let mut field_csv = CsvTable::new(&header);
    for (i, v) in field.values.iter().enumerate() {
        let mut row = vec![i.into(), (*v).into(), field.certified[i].into()];
        row.extend((0..k).map(|j| field.witnesses[i].get(j).map_or("".into(), |w| w.to_string().into())));
        field_csv.push(row);
    }
    let mut prof_csv = CsvTable::new(&["point_index", "r", "beta", "theta"]);
    for (row, &i) in profile.base_indices.iter().enumerate() {
        for (j, &r) in profile.radii.iter().enumerate() {
            prof_csv.push(vec![i.into(), r.into(), profile.beta[row][j].into(), profile.theta[row][j].into()]);
        }
    }
    let theta_max = profile.max_theta_per_scale();
    let decay_rows: Vec<Vec<f64>> = profile
        .radii
        .iter()
        .enumerate()
        .map(|(j, &r)| vec![r, profile.beta.iter().map(|b| b[j]).fold(0.0, f64::max), theta_max[j]])
        .collect();

    let summary = AnalyzeSummary {
        schema_version: SCHEMA_VERSION,
        source,
        spec: spec.clone(),
        p: cfg.p,
        kind: cfg.kind,
        method: cfg.method,
        tangents,
        seed: cfg.seed,
        sample: SampleInfo {
            count: s.len(),
            ambient_dim: s.ambient_dim(),
            intrinsic_dim: s.intrinsic_dim(),
            total_measure: s.total_measure(),
            analytic_measure: spec.and_then(|sp| sp.shape.analytic_measure()),
            mean_spacing: s.mean_spacing(),
            diam: diam.value,
            diam_exact: diam.exact,
        },
        radii: profile.radii.clone(),
        field: field.summary(),
        prune_stats: field.prune_stats,
        energy,
        fineness: fine,
        fineness_error: fine_err,
        decay,
        decay_error: decay_err,
    };
    let files = vec![
        ("field.csv".to_string(), field_csv.render()),
        ("profile.csv".to_string(), prof_csv.render()),
        (
            "beta_decay.dat".to_string(),
            plot_data(&["r", "beta_max", "theta_max"], &decay_rows) + "# plot with: set logscale xy; plot 'beta_decay.dat' u 1:2\n",
        ),
        ("field_histogram.dat".to_string(), plot_data(&["value", "count"], &histogram(&field.values, HISTOGRAM_BINS))),
        ("summary.json".to_string(), to_json(&summary) + "\n"),
    ];
    Ok(AnalyzeOutput { summary, files })
}

fn analyze_config(a: &AnalyzeArgs) -> Result<AnalyzeConfig> {
    let source = match &a.input {
        Some(path) => Source::Input {
            path: path.clone(),
            m: a.shape.m.ok_or_else(|| Error::InvalidParameter("--m is required with --input".into()))?,
        },
        None => Source::Shape(shape_spec(&a.shape, a.count.unwrap_or(0), a.seed)?),
    };
    let tangents = match &a.tangents {
        None => None,
        Some(TangentArg::Analytic) => Some(TangentSource::Analytic),
        Some(TangentArg::Pca(Some(r))) => Some(TangentSource::Pca(*r)),
        // Resolved against the sample's spacing.
        Some(TangentArg::Pca(None)) => None,
    };
    if matches!(a.tangents, Some(TangentArg::Analytic)) && a.input.is_some() {
        return Err(Error::InvalidParameter("analytic tangents need a builtin --shape".into()));
    }
    if !(a.p > 0.0) {
        return Err(Error::InvalidParameter(format!("--p must be positive, got {}", a.p)));
    }
    let force_pca = matches!(a.tangents, Some(TangentArg::Pca(None)));
    let mut cfg = AnalyzeConfig {
        source,
        p: a.p,
        kind: match a.kind {
            KindArg::Menger => EnergyKind::Menger,
            KindArg::Tp => EnergyKind::TangentPoint,
        },
        method: match a.method {
            MethodArg::Exact => Method::Exact,
            MethodArg::Pruned => Method::Pruned,
        },
        tangents,
        scales: a.scales,
        seed: a.seed,
    };
    if force_pca {
        let (s, _, _) = load_source(&cfg.source)?;
        cfg.tangents = Some(TangentSource::Pca(PCA_SPACING_FACTOR * s.mean_spacing()));
    }
    Ok(cfg)
}

pub fn cmd_analyze(a: &AnalyzeArgs) -> Result<String> {
    let cfg = analyze_config(a)?;
    let out = analyze(&cfg)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, text) in &out.files {
        std::fs::write(a.out.join(name), text)?;
    }
    let s = &out.summary;
    let mut t = String::new();
    let mut row = |k: &str, v: String| {
        let _ = writeln!(t, "{k:<24} {v}");
    };
    row("points", s.sample.count.to_string());
    row("total measure", fmt_human(s.sample.total_measure));
    row("field max", fmt_human(s.field.max));
    row("field mean", fmt_human(s.field.mean));
    row("all certified", s.field.all_certified.to_string());
    row(&format!("L^{} norm", s.p), fmt_human(s.energy.lp_norm));
    if let (Some(b), Some(r)) = (s.energy.bound, s.energy.ratio) {
        row("sharp bound", fmt_human(b));
        row("ratio to bound", fmt_human(r));
    }
    match &s.fineness {
        Some(f) => {
            row("Ahlfors constant", fmt_human(f.ahlfors_constant));
            row("hole constant", fmt_human(f.hole_constant));
        }
        None => row("fineness", s.fineness_error.clone().unwrap_or_default()),
    }
    match &s.decay {
        Some(d) => {
            row("decay slope", fmt_human(d.kappa_hat));
            row("decay bound", fmt_human(d.kappa_bound));
        }
        None => row("decay", s.decay_error.clone().unwrap_or_default()),
    }
    row("output", a.out.display().to_string());
    Ok(t)
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    schema_version: u32,
    suite: &'a str,
    passed: bool,
    criteria: &'a [CriterionResult],
}

/// Exit code 0 when every criterion passes, 1 otherwise; errors map to 2.
pub fn cmd_verify(a: &VerifyArgs) -> Result<(u8, String)> {
    let (label, results) = match &a.input {
        Some(path) => {
            let m = a.m.ok_or_else(|| Error::InvalidParameter("--m is required with --input".into()))?;
            let (s, _, _) = load_source(&Source::Input { path: path.clone(), m })?;
            (path.display().to_string(), input_suite(&s))
        }
        None => (a.suite.clone(), run_suite(&a.suite)?),
    };
    let passed = results.iter().all(|r| r.passed);
    let mut text = String::new();
    for r in &results {
        let _ = writeln!(text, "{}", r.line());
    }
    if let Some(bad) = results.iter().filter(|r| !r.passed).max_by(|x, y| x.worst_load.total_cmp(&y.worst_load)) {
        let _ = writeln!(text, "worst offender: criterion {} ({}): {}", bad.id, bad.suite, bad.worst);
    }
    let json = to_json(&VerifyReport { schema_version: SCHEMA_VERSION, suite: &label, passed, criteria: &results }) + "\n";
    match &a.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("verify.json"), json)?;
        }
        None => text.push_str(&json),
    }
    Ok((if passed { 0 } else { 1 }, text))
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(k) = threads {
        if k == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    Ok(())
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

pub fn run(cli: Cli) -> ExitCode {
    if let Err(e) = set_threads(cli.threads) {
        return report_error(&e);
    }
    match &cli.command {
        Command::Generate(a) => match cmd_generate(a) {
            Ok(paths) => {
                for p in paths {
                    println!("{}", p.display());
                }
                ExitCode::SUCCESS
            }
            Err(e) => report_error(&e),
        },
        Command::Analyze(a) => match cmd_analyze(a) {
            Ok(t) => {
                print!("{t}");
                ExitCode::SUCCESS
            }
            Err(e) => report_error(&e),
        },
        Command::Verify(a) => match cmd_verify(a) {
            Ok((code, t)) => {
                print!("{t}");
                ExitCode::from(code)
            }
            Err(e) => {
                if matches!(e, Error::InvalidParameter(_)) && a.input.is_none() {
                    eprintln!("available suites: {}", suite_names().join(", "));
                }
                report_error(&e)
            }
        },
    }
}
