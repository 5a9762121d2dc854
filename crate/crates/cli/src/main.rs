mod svg;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use exlb::bounds::{bounds_csv, bounds_report, is_bimodal_guaranteed, monotone_threshold};
use exlb::closed_form::ClosedFormDensities;
use exlb::degenerate::DegenerateModel;
use exlb::estimator::{estimate_curves, level_grid, EstimatorConfig, EstimatorReport, FieldModel, HistogramSpec};
use exlb::sampler::mix_seed;
use exlb::spectral::MeasureDocument;
use exlb::topology::{audit_morse_identity, sweep, ConnectivityPair, EventKind};
use exlb::Error;

use svg::{line_chart, Series};

const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "exlb", version, about = "Level-set component statistics of planar Gaussian fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimates of c_NS, c_ES and critical-point histograms
    Estimate(EstimateArgs),
    /// Analytic lower/upper bounds on c_NS and c_ES
    Bounds(BoundsArgs),
    /// Closed-form critical-point densities
    Densities(DensitiesArgs),
    /// Exact curves for the five-atom degenerate model
    Degenerate(DegenerateArgs),
    /// Sweep audit of the census identity
    Audit(AuditArgs),
}

#[derive(Args, Clone)]
struct SamplingArgs {
    /// rpw | bargmann-fock | atomic:<measure.json>
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    side: Option<f64>,
    /// Grid points per shortest wavelength
    #[arg(long)]
    resolution: Option<f64>,
    #[arg(long)]
    reals: Option<usize>,
    /// lo:hi:step
    #[arg(long, allow_hyphen_values = true)]
    levels: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// 8-4 (8-connected superlevel sets) or 4-8
    #[arg(long)]
    connectivity: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    sampling: SamplingArgs,
    /// JSON run configuration; flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_sweep_fault: bool,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    lambda: f64,
    #[arg(long = "eta-sq")]
    eta_sq: f64,
    #[arg(long, allow_hyphen_values = true, default_value = "-3:3:0.05")]
    levels: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DensitiesArgs {
    /// rpw | bargmann-fock | <radial or circle measure.json>
    #[arg(long, conflicts_with_all = ["lambda", "eta_sq"])]
    model: Option<String>,
    #[arg(long, requires = "eta_sq")]
    lambda: Option<f64>,
    #[arg(long = "eta-sq", requires = "lambda")]
    eta_sq: Option<f64>,
    #[arg(long, allow_hyphen_values = true, default_value = "-4:4:0.05")]
    levels: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct DegenerateArgs {
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    #[arg(long, allow_hyphen_values = true, default_value = "-3:3:0.05")]
    levels: String,
    /// Curves for α ∈ {0, 0.1, 0.3, 0.6} × β−γ ∈ {0, 0.5, 0.9}
    #[arg(long)]
    grid: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    sampling: SamplingArgs,
}

/// Optional run settings read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<String>,
    side: Option<f64>,
    resolution: Option<f64>,
    reals: Option<usize>,
    levels: Option<String>,
    seed: Option<u64>,
    connectivity: Option<String>,
    margin_wavelengths: Option<f64>,
    histogram: Option<HistogramSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    subcommand: String,
    config_path: Option<PathBuf>,
    output_dir: PathBuf,
    master_seed: Option<u64>,
    artifact_version: String,
    started_unix: u64,
    finished_unix: u64,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::IdentityViolation { .. } => 2,
            Error::QuadratureFailure { .. } => 3,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 1, message: message.into() }
}

type CmdResult = Result<(), Failure>;

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Appends one run to `<out>/manifest.json`.
fn append_manifest(out: &Path, entry: RunManifest) -> CmdResult {
    let path = out.join("manifest.json");
    let mut runs: Vec<RunManifest> = match std::fs::read_to_string(&path) {
        Ok(text) => serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        Err(_) => Vec::new(),
    };
    runs.push(entry);
    let body = serde_json::to_string_pretty(&runs).map_err(|e| usage(e.to_string()))?;
    write_file(&path, &body)
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    std::fs::write(path, body).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))
}

fn parse_levels(spec: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(usage(format!("levels must be lo:hi:step, got {spec:?}")));
    };
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| usage(format!("bad number {s:?} in levels")));
    Ok(level_grid(num(lo)?, num(hi)?, num(step)?)?)
}

fn parse_model(spec: &str) -> Result<FieldModel, Failure> {
    match spec {
        "rpw" => Ok(FieldModel::rpw()),
        "bargmann-fock" | "bf" => Ok(FieldModel::bargmann_fock()),
        other => {
            let Some(file) = other.strip_prefix("atomic:") else {
                return Err(usage(format!("unknown model {other:?}; use rpw, bargmann-fock or atomic:<file>")));
            };
            let (doc, label) = read_measure(Path::new(file))?;
            Ok(FieldModel::from_measure(label, &doc.to_measure()?)?)
        }
    }
}

fn read_measure(path: &Path) -> Result<(MeasureDocument, String), Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let doc: MeasureDocument = serde_json::from_str(&text).map_err(|e| json_error(path, &text, &e))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "atomic".into());
    Ok((doc, label))
}

/// Parse error with the offending line quoted.
fn json_error(path: &Path, text: &str, e: &serde_json::Error) -> Failure {
    let line = text.lines().nth(e.line().saturating_sub(1)).unwrap_or("");
    usage(format!("{}:{}:{}: {e}\n  | {line}", path.display(), e.line(), e.column()))
}

fn read_config(path: &Path) -> Result<ConfigFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| json_error(path, &text, &e))
}

/// Flags override the config file, which overrides the defaults.
fn build_config(s: &SamplingArgs, file: &ConfigFile, default_reals: usize) -> Result<EstimatorConfig, Failure> {
    let model = parse_model(s.model.as_deref().or(file.model.as_deref()).unwrap_or("rpw"))?;
    let side = s.side.or(file.side).unwrap_or(120.0);
    let resolution = s.resolution.or(file.resolution).unwrap_or(6.0);
    let levels = parse_levels(s.levels.as_deref().or(file.levels.as_deref()).unwrap_or("-3:3:0.1"))?;
    let seed = s.seed.or(file.seed).unwrap_or(0);
    let reals = s.reals.or(file.reals).unwrap_or(default_reals);
    let spec = model.grid(side, resolution)?;
    let mut cfg = EstimatorConfig::new(model, spec, reals, levels, seed);
    if let Some(c) = s.connectivity.as_deref().or(file.connectivity.as_deref()) {
        cfg.connectivity = c.parse::<ConnectivityPair>()?;
    }
    if let Some(m) = file.margin_wavelengths {
        cfg.margin_wavelengths = m;
    }
    if let Some(h) = file.histogram {
        cfg.histogram = h;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_estimate(args: &EstimateArgs) -> CmdResult {
    let started = now_unix();
    let file = match &args.config {
        Some(p) => read_config(p)?,
        None => ConfigFile::default(),
    };
    let cfg = build_config(&args.sampling, &file, 200)?;
    let out = &args.sampling.out;
    create_dir(out)?;
    if args.inject_sweep_fault {
        inject_sweep_fault(&cfg)?;
    }
    info!(
        "{}: {} realizations, {} points per side, seed {}",
        cfg.model.label(),
        cfg.n_realizations,
        cfg.spec.points_per_side,
        cfg.master_seed
    );
    let report = estimate_curves(&cfg)?;
    let mut files = report.save(out)?;
    let svg_path = out.join(format!("{}-curves.svg", report.file_stem()));
    write_file(&svg_path, &curves_chart(&report))?;
    files.push(svg_path);
    for l in &report.levels {
        println!("level {:>6.2}  c_NS {:.6} ± {:.6}  c_ES {:.6} ± {:.6}", l.level, l.c_ns_hat, l.c_ns_se, l.c_es_hat, l.c_es_se);
    }
    println!("audit: {} realizations, max |Δ_all| = {}", report.audit.realizations, report.audit.max_abs_delta_all);
    for f in &files {
        println!("wrote {}", f.display());
    }
    append_manifest(
        out,
        RunManifest {
            subcommand: "estimate".into(),
            config_path: args.config.clone(),
            output_dir: out.clone(),
            master_seed: Some(cfg.master_seed),
            artifact_version: ARTIFACT_VERSION.into(),
            started_unix: started,
            finished_unix: now_unix(),
        },
    )
}

/// Drops the highest maximum from the first realization's sweep before
/// auditing it, so the audit path can be exercised end to end.
fn inject_sweep_fault(cfg: &EstimatorConfig) -> CmdResult {
    let field = cfg.model.sample(&cfg.spec, mix_seed(cfg.master_seed, 0))?;
    let mut sr = sweep(&field, cfg.connectivity, &cfg.levels);
    if let Some(pos) = sr.events.iter().position(|e| e.kind == EventKind::Max) {
        sr.events.remove(pos);
    }
    audit_morse_identity(&sr, &cfg.levels)?;
    Ok(())
}

fn curves_chart(r: &EstimatorReport) -> String {
    let pick = |f: fn(&exlb::estimator::LevelEstimate) -> f64| r.levels.iter().map(|l| (l.level, f(l))).collect();
    let mut series = vec![Series::new("c_NS", pick(|l| l.c_ns_hat)), Series::new("c_ES", pick(|l| l.c_es_hat))];
    if let Some(cf) = r.config.model.closed_form() {
        series.push(Series::new("lower", r.levels.iter().map(|l| (l.level, bounds_report(l.level, &cf).cns_lower)).collect()));
        series.push(
            Series::new("upper", r.levels.iter().map(|l| (l.level, bounds_report(l.level, &cf).cns_upper)).collect())
                .dashed(),
        );
    }
    line_chart(&format!("{} (seed {})", r.model_label, r.master_seed), "level", "components per unit area", &series)
}

fn cmd_bounds(args: &BoundsArgs) -> CmdResult {
    let started = now_unix();
    let cf = ClosedFormDensities::new(args.lambda, args.eta_sq)?;
    let levels = parse_levels(&args.levels)?;
    let rows: Vec<_> = levels.iter().map(|&l| bounds_report(l, &cf)).collect();
    create_dir(&args.out)?;
    let stem = format!("bounds-lambda{}-eta{}", args.lambda, args.eta_sq);
    write_file(&args.out.join(format!("{stem}.csv")), &bounds_csv(&rows))?;
    let series = [
        Series::new("c_NS lower", rows.iter().map(|r| (r.level, r.cns_lower)).collect()),
        Series::new("c_NS upper", rows.iter().map(|r| (r.level, r.cns_upper)).collect()).dashed(),
        Series::new("c_ES(l) - c_ES(-l)", rows.iter().map(|r| (r.level, r.ces_diff)).collect()),
    ];
    write_file(&args.out.join(format!("{stem}.svg")), &line_chart(&stem, "level", "per unit area", &series))?;
    println!("bimodal: {}", if is_bimodal_guaranteed(cf.lambda) { "yes" } else { "no" });
    println!("threshold: {:.4}", monotone_threshold(cf.lambda));
    println!("wrote {}", args.out.join(format!("{stem}.csv")).display());
    simple_manifest("bounds", &args.out, None, started)
}

fn simple_manifest(name: &str, out: &Path, seed: Option<u64>, started: u64) -> CmdResult {
    append_manifest(
        out,
        RunManifest {
            subcommand: name.into(),
            config_path: None,
            output_dir: out.to_path_buf(),
            master_seed: seed,
            artifact_version: ARTIFACT_VERSION.into(),
            started_unix: started,
            finished_unix: now_unix(),
        },
    )
}

fn cmd_densities(args: &DensitiesArgs) -> CmdResult {
    let started = now_unix();
    let (cf, label) = match (&args.model, args.lambda, args.eta_sq) {
        (_, Some(l), Some(e)) => (ClosedFormDensities::new(l, e)?, format!("lambda{l}-eta{e}")),
        (Some(m), _, _) => {
            let model = match m.as_str() {
                "rpw" | "bargmann-fock" | "bf" => parse_model(m)?,
                path => {
                    let (doc, label) = read_measure(Path::new(path))?;
                    FieldModel::from_measure(label, &doc.to_measure()?)?
                }
            };
            let cf = model.closed_form().ok_or_else(|| usage(format!("{} has no isotropic closed form", model.label())))?;
            (cf, model.label())
        }
        _ => (ClosedFormDensities::rpw(), "rpw".into()),
    };
    let xs = parse_levels(&args.levels)?;
    create_dir(&args.out)?;
    let stem = format!("densities-{label}");
    write_file(&args.out.join(format!("{stem}.csv")), &cf.table_csv(&xs))?;
    let series = [
        Series::new("p_max", xs.iter().map(|&x| (x, cf.p_max(x))).collect()),
        Series::new("p_min", xs.iter().map(|&x| (x, cf.p_min(x))).collect()),
        Series::new("p_saddle", xs.iter().map(|&x| (x, cf.p_saddle(x))).collect()).dashed(),
    ];
    write_file(&args.out.join(format!("{stem}.svg")), &line_chart(&stem, "level", "density", &series))?;
    println!("lambda {:.6}, eta^2 {:.6}, case {:?}", cf.lambda, cf.eta_sq, cf.case);
    println!("wrote {}", args.out.join(format!("{stem}.csv")).display());
    simple_manifest("densities", &args.out, None, started)
}

fn cmd_degenerate(args: &DegenerateArgs) -> CmdResult {
    let started = now_unix();
    let levels = parse_levels(&args.levels)?;
    create_dir(&args.out)?;
    if args.grid {
        let mut csv = String::from("alpha,beta_minus_gamma,level,cns_exact,ces_exact,p_max,p_lower_saddle\n");
        let mut series = Vec::new();
        for alpha in [0.0, 0.1, 0.3, 0.6] {
            for d in [0.0, 0.5, 0.9] {
                let m = match DegenerateModel::standard(alpha, d) {
                    Ok(m) => m,
                    Err(e) => {
                        warn!("skipping α={alpha}, β−γ={d}: {e}");
                        continue;
                    }
                };
                let mut pts = Vec::with_capacity(levels.len());
                for &l in &levels {
                    let (pm, ps) = m.densities(l)?;
                    let cns = m.cns_exact(l)?;
                    let _ = writeln!(csv, "{alpha},{d},{l},{cns},{},{pm},{ps}", m.ces_exact(l)?);
                    pts.push((l, cns));
                }
                series.push(Series::new(format!("a={alpha} d={d}"), pts));
            }
        }
        write_file(&args.out.join("degenerate-grid.csv"), &csv)?;
        write_file(&args.out.join("degenerate-grid.svg"), &line_chart("c_NS", "level", "per unit area", &series))?;
        println!("wrote {}", args.out.join("degenerate-grid.csv").display());
    } else {
        let m = DegenerateModel::new(args.alpha, args.beta, args.gamma, [1.0, 0.0], [0.0, 1.0])?;
        let stem = format!("degenerate-a{}-b{}-g{}", args.alpha, args.beta, args.gamma);
        write_file(&args.out.join(format!("{stem}.csv")), &m.curves_csv(&levels)?)?;
        let mut cns = Vec::new();
        let mut ces = Vec::new();
        for &l in &levels {
            cns.push((l, m.cns_exact(l)?));
            ces.push((l, m.ces_exact(l)?));
        }
        let chart = line_chart(&stem, "level", "per unit area", &[Series::new("c_NS", cns), Series::new("c_ES", ces).dashed()]);
        write_file(&args.out.join(format!("{stem}.svg")), &chart)?;
        println!("wrote {}", args.out.join(format!("{stem}.csv")).display());
    }
    simple_manifest("degenerate", &args.out, None, started)
}

fn cmd_audit(args: &AuditArgs) -> CmdResult {
    let started = now_unix();
    let s = &args.sampling;
    let cfg = build_config(s, &ConfigFile::default(), 5)?;
    create_dir(&s.out)?;
    let mut csv = String::from(
        "realization,level,census,delta_all,delta_sub_all,delta_contained,boundary_tangents,within_boundary_bound\n",
    );
    let mut worst = 0i64;
    let mut rows = 0usize;
    for i in 0..cfg.n_realizations {
        let field = cfg.model.sample(&cfg.spec, mix_seed(cfg.master_seed, i as u64))?;
        let sr = sweep(&field, cfg.connectivity, &cfg.levels);
        let audit = audit_morse_identity(&sr, &cfg.levels)?;
        worst = worst.max(audit.max_abs_delta_all());
        for r in &audit.rows {
            rows += 1;
            let _ = writeln!(
                csv,
                "{i},{},{},{},{},{},{},{}",
                r.level, r.census, r.delta_all, r.delta_sub_all, r.delta_contained, r.boundary_tangents, r.within_boundary_bound
            );
        }
    }
    let path = s.out.join(format!("audit-{}-seed{}.csv", cfg.model.label(), cfg.master_seed));
    write_file(&path, &csv)?;
    println!("{rows} rows, max |Δ_all| = {worst}");
    println!("wrote {}", path.display());
    simple_manifest("audit", &s.out, Some(cfg.master_seed), started)
}

fn configure_threads() {
    if let Ok(v) = std::env::var("EXLB_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("EXLB_THREADS ignored: {e}");
                }
            }
            _ => warn!("EXLB_THREADS={v:?} is not a positive integer"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    configure_threads();
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Densities(a) => cmd_densities(a),
        Command::Degenerate(a) => cmd_degenerate(a),
        Command::Audit(a) => cmd_audit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
