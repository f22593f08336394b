use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use sflab::error::SflabError;
use sflab::experiments::{load_structure, run, ExperimentConfig, Report};
use sflab::geodesic::{distance_batch, DistanceOptions};

/// Sub-Finsler workbench: flags, privileged coordinates, nilpotent approximation, distances,
/// ball measures, blow-up checks and entropy experiments.
#[derive(Parser, Debug)]
#[command(name = "sflab", version)]
struct Cli {
    /// JSON experiment config; subcommand flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Growth vector, weights, step and homogeneous dimension at a point.
    Flag(Params),
    /// Privileged chart at a point, certified symbolically.
    Privileged(Params),
    /// Nilpotent approximation with homogeneity and nilpotency checks.
    Nilpotent(Params),
    /// Distance between two points, or a CSV batch of pairs.
    Dist(DistArgs),
    /// Scaling identity ε·d^ε(δ_{1/ε}a, δ_{1/ε}b) = d(a, b).
    Scaling(Params),
    /// Convergence of d^ε to the tangent distance over ε = 2^-m.
    Converge(Params),
    /// Ball-Box constant search.
    Ballbox(Params),
    /// Ball masses m(B(q, r)).
    Ballmass(Params),
    /// Log-log fit of ball masses.
    Ahlfors(Params),
    /// Tangent normalization constant m(q).
    Mq(Params),
    /// Blow-up distortion, coverage and measure discrepancy against the tangent.
    TangentCheck(Params),
    /// Entropy-convexity midpoint checks over random pairs of uniform measures.
    CdScan(Params),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Flag(_) => "flag",
            Command::Privileged(_) => "privileged",
            Command::Nilpotent(_) => "nilpotent",
            Command::Dist(_) => "dist",
            Command::Scaling(_) => "scaling",
            Command::Converge(_) => "converge",
            Command::Ballbox(_) => "ballbox",
            Command::Ballmass(_) => "ballmass",
            Command::Ahlfors(_) => "ahlfors",
            Command::Mq(_) => "mq",
            Command::TangentCheck(_) => "tangent-check",
            Command::CdScan(_) => "cd-scan",
        }
    }

    fn params(&self) -> &Params {
        match self {
            Command::Dist(d) => &d.params,
            Command::Flag(p)
            | Command::Privileged(p)
            | Command::Nilpotent(p)
            | Command::Scaling(p)
            | Command::Converge(p)
            | Command::Ballbox(p)
            | Command::Ballmass(p)
            | Command::Ahlfors(p)
            | Command::Mq(p)
            | Command::TangentCheck(p)
            | Command::CdScan(p) => p,
        }
    }
}

#[derive(Args, Debug, Default)]
struct Params {
    /// Structure JSON file or bundled fixture name (e.g. heisenberg.json).
    #[arg(long)]
    structure: Option<String>,
    /// Norm override: l2, linf, l<p>.
    #[arg(long)]
    norm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Report path; the report goes to stdout otherwise.
    #[arg(long, short)]
    output: Option<String>,
    /// Plot-ready CSV of the report's main table.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Base point, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    point: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    radii: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Largest m in ε = 2^-m.
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long)]
    divisions: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    constants: Option<Vec<f64>>,
    /// constant, sinusoid, piecewise, or an inline JSON density.
    #[arg(long)]
    density: Option<String>,
    #[arg(long)]
    face_nodes: Option<usize>,
    #[arg(long)]
    face_panels: Option<usize>,
    #[arg(long)]
    identity_chart: bool,
    /// Cheaper solver settings.
    #[arg(long)]
    fast: bool,
    #[arg(long = "N-grid", value_delimiter = ',')]
    n_grid: Option<Vec<f64>>,
    #[arg(long = "K", allow_negative_numbers = true)]
    k: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    per_axis: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    depth_cap: Option<usize>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct DistArgs {
    #[command(flatten)]
    params: Params,
    /// Start point (default: origin).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    from: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    to: Option<Vec<f64>>,
    /// CSV of pairs (a_1..a_n, b_1..b_n per row, with header); writes distances as CSV.
    #[arg(long)]
    batch: Option<PathBuf>,
}

fn merge(mut cfg: ExperimentConfig, p: &Params) -> Result<ExperimentConfig, SflabError> {
    macro_rules! set {
        ($($f:ident),*) => {$(if p.$f.is_some() { cfg.$f = p.$f.clone(); })*};
    }
    if let Some(s) = &p.structure {
        cfg.structure = s.clone();
    }
    if let Some(s) = p.seed {
        cfg.seed = s;
    }
    set!(norm, output, point, radii, eps, levels, grid_size, divisions, constants, face_nodes, face_panels, n_grid, k, pairs, per_axis, budget, depth_cap, tolerance);
    if let Some(d) = &p.density {
        cfg.density = Some(serde_json::from_str(d).unwrap_or_else(|_| Value::String(d.clone())));
    }
    if p.identity_chart {
        cfg.identity_chart = Some(true);
    }
    if p.fast {
        cfg.fast = Some(true);
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("SFLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode, SflabError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut csv_path = None;
    if let Some(cmd) = &cli.command {
        cfg.experiment = cmd.name().into();
        cfg = merge(cfg, cmd.params())?;
        csv_path = cmd.params().csv.clone();
        if let Command::Dist(d) = cmd {
            if d.from.is_some() {
                cfg.a = d.from.clone();
            }
            if d.to.is_some() {
                cfg.b = d.to.clone();
            }
            if let Some(batch) = &d.batch {
                return dist_batch(&cfg, batch, cfg.output.as_deref());
            }
        }
    }
    if cfg.experiment.is_empty() {
        return Err(SflabError::InvalidArgument("no experiment given: use a subcommand or set \"experiment\" in --config".into()));
    }
    if cfg.structure.is_empty() {
        return Err(SflabError::InvalidArgument("no structure given: use --structure".into()));
    }
    let report = run(&cfg)?;
    emit(&report, cfg.output.as_deref())?;
    if let Some(path) = csv_path {
        write_csv(&report, &path)?;
    }
    Ok(match report.passed {
        Some(false) => ExitCode::from(2),
        _ => ExitCode::SUCCESS,
    })
}

fn emit(report: &Report, output: Option<&str>) -> Result<(), SflabError> {
    let status = match report.passed {
        Some(true) => "PASS",
        Some(false) => "FAIL",
        None => "REPORT",
    };
    let line = format!("[{status}] {}: {}", report.provenance.experiment, report.summary);
    match output {
        Some(path) => {
            std::fs::write(path, report.to_json())?;
            println!("{line}");
        }
        None => {
            print!("{}", report.to_json());
            eprintln!("{line}");
        }
    }
    Ok(())
}

/// Columns of the main table of each experiment's result.
fn table(report: &Report) -> Option<(Vec<&'static str>, Vec<Vec<f64>>)> {
    let r = &report.result;
    let nums = |v: &Value, keys: &[&str]| keys.iter().map(|k| v[*k].as_f64().unwrap_or(f64::NAN)).collect::<Vec<f64>>();
    let rows = |path: &Value, keys: &[&'static str]| -> Option<(Vec<&'static str>, Vec<Vec<f64>>)> {
        Some((keys.to_vec(), path.as_array()?.iter().map(|v| nums(v, keys)).collect()))
    };
    match report.provenance.experiment.as_str() {
        "ballmass" | "ahlfors" => {
            let curve = if r.get("curve").is_some() { &r["curve"] } else { r };
            let radii = curve["radii"].as_array()?;
            let masses = curve["masses"].as_array()?;
            Some((vec!["radius", "mass"], radii.iter().zip(masses).map(|(a, b)| vec![a.as_f64().unwrap_or(f64::NAN), b.as_f64().unwrap_or(f64::NAN)]).collect()))
        }
        "scaling" => rows(&r["rows"], &["pair", "eps", "distance", "rescaled", "rel_error"]),
        "converge" => rows(&r["rows"], &["m", "eps", "sup_error"]),
        "tangent-check" => rows(&r["rows"], &["r", "distortion", "coverage_defect", "coverage_eps", "discrepancy", "sample_size"]),
        "cd-scan" => {
            let v = r["ranked"].as_array()?;
            Some((
                vec!["pair", "N", "deficit", "eps_disc"],
                v.iter().map(|c| vec![c["pair"].as_f64().unwrap_or(f64::NAN), c["report"]["n"].as_f64().unwrap_or(f64::NAN), c["report"]["deficit"].as_f64().unwrap_or(f64::NAN), c["report"]["eps_disc"].as_f64().unwrap_or(f64::NAN)]).collect(),
            ))
        }
        _ => None,
    }
}

fn write_csv(report: &Report, path: &Path) -> Result<(), SflabError> {
    let (header, rows) = table(report).ok_or_else(|| SflabError::InvalidArgument(format!("experiment {} has no CSV table", report.provenance.experiment)))?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> SflabError {
    SflabError::Parse(format!("csv: {e}"))
}

fn dist_batch(cfg: &ExperimentConfig, input: &Path, output: Option<&str>) -> Result<ExitCode, SflabError> {
    let s = load_structure(&cfg.structure, cfg.norm.as_deref())?;
    let n = s.dim();
    let mut rd = csv::Reader::from_path(input).map_err(csv_err)?;
    let mut pairs = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let vals = rec
            .iter()
            .map(|f| f.trim().parse::<f64>().map_err(|_| SflabError::Parse(format!("row {}: {f:?} is not a number", line + 1))))
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.len() != 2 * n {
            return Err(SflabError::Parse(format!("row {}: expected {} values, found {}", line + 1, 2 * n, vals.len())));
        }
        pairs.push((vals[..n].to_vec(), vals[n..].to_vec()));
    }
    let base = if cfg.fast.unwrap_or(false) { DistanceOptions::fast() } else { DistanceOptions::default() };
    let opts = DistanceOptions { seed: cfg.seed, ..base };
    let results = distance_batch(&s, &pairs, &opts);
    let mut w = match output {
        Some(p) => csv::Writer::from_writer(Box::new(std::fs::File::create(p)?) as Box<dyn std::io::Write>),
        None => csv::Writer::from_writer(Box::new(std::io::stdout()) as Box<dyn std::io::Write>),
    };
    let mut header: Vec<String> = (0..n).map(|i| format!("a{i}")).chain((0..n).map(|i| format!("b{i}"))).collect();
    header.extend(["distance".into(), "endpoint_error".into(), "status".into()]);
    w.write_record(&header).map_err(csv_err)?;
    let mut failures = 0;
    for ((a, b), r) in pairs.iter().zip(results) {
        let mut row: Vec<String> = a.iter().chain(b).map(|x| x.to_string()).collect();
        match r {
            Ok(c) => row.extend([c.value.to_string(), c.endpoint_error.to_string(), "ok".into()]),
            Err(e) => {
                failures += 1;
                row.extend(["".into(), "".into(), e.to_string()]);
            }
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(if failures > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}
