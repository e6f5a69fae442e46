mod config;
mod output;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use ruelle_core::grid::{fundamental_set, julia_cells, JuliaParams};
use ruelle_core::linefield::{
    integral_diagnostics, invariance_residual, lattes_field, sigma_field, DiagnosticScheme, DiagnosticsOptions,
};
use ruelle_core::poly::parse_cplx;
use ruelle_core::rational::parse_map;
use ruelle_core::residue::{verify_identity, Identity, VerifyOptions};
use ruelle_core::transfer::test_functions;
use ruelle_core::{CellSet, Cplx, Error, Grid, LineField, MapKind, RationalMap, Resolvent, ResolventCtrl};

use output::{sig17, write_atomic};

#[derive(Parser, Debug)]
#[command(name = "ruelle", version, about = "Transfer-operator experiments on rational maps")]
#[command(args_override_self = true)]
struct Cli {
    /// Worker threads (1 gives the bit-reproducible reference run).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log verbosity (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Flat `key = value` file of flags; explicit flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Check operator identities on random samples.
    Verify(VerifyArgs),
    /// Evaluate a truncated resolvent at a point.
    Resolvent(ResolventArgs),
    /// Write a pixmap of the Julia-set cell model.
    RenderJulia(RenderJuliaArgs),
    /// Draw a line field as oriented segments.
    RenderLinefield(RenderLinefieldArgs),
    /// Area-integral diagnostics over a sequence of fundamental sets.
    Diagnose(DiagnoseArgs),
    /// Build the invariant field of a Lattès-like map and test its invariance.
    LattesCheck(LattesArgs),
    /// Compute a fundamental set and its boundary layer.
    FundamentalSet(FundamentalArgs),
}

const SUBCOMMANDS: [&str; 7] =
    ["verify", "resolvent", "render-julia", "render-linefield", "diagnose", "lattes-check", "fundamental-set"];

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct VerifyArgs {
    #[arg(long)]
    map: PathBuf,
    /// Identity name, a comma-separated list, or `all` for every identity that applies.
    #[arg(long, default_value = "all")]
    identity: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Test-function index used by the resolvent equation.
    #[arg(long, default_value_t = 0)]
    psi: usize,
    #[arg(long, default_value_t = 1e-8)]
    resolvent_tol: f64,
    /// Resolvent truncation depth; each evaluation visits up to `d^depth` preimages.
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    #[arg(long, default_value_t = 2.0)]
    box_radius: f64,
    /// Monte Carlo draws per transform in the functional equation.
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct ResolventArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = 0)]
    psi: usize,
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    #[arg(long, default_value_t = 20)]
    max_depth: usize,
    #[arg(long)]
    exclusion_radius: Option<f64>,
    #[arg(long)]
    allow_outside: bool,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct RenderJuliaArgs {
    #[arg(long)]
    map: PathBuf,
    /// `xmin,ymin,xmax,ymax`
    #[arg(long = "box", default_value = "-2,-2,2,2", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    bbox: String,
    #[arg(long, default_value_t = 512)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    iter_cap: usize,
    #[arg(long, default_value_t = 1e6)]
    escape_radius: f64,
    /// Backward-orbit samples for non-polynomial maps.
    #[arg(long, default_value_t = 1 << 20)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct RenderLinefieldArgs {
    #[arg(long)]
    map: PathBuf,
    /// `sigma:PSI_INDEX`, `lattes` or `file:PATH`.
    #[arg(long)]
    field: String,
    #[arg(long = "box", default_value = "-2,-2,2,2", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    bbox: String,
    #[arg(long, default_value_t = 128)]
    res: usize,
    #[arg(long)]
    out: PathBuf,
    /// Pixels per cell side.
    #[arg(long, default_value_t = 8)]
    cell_px: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 12)]
    max_depth: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct DiagnoseArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = 0)]
    psi: usize,
    /// `W/H1,H2,...` with `W` either `full` or disks `center:radius,...`.
    #[arg(long, allow_hyphen_values = true)]
    sets: String,
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long = "box", default_value = "-2.5,-2.5,2.5,2.5", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    bbox: String,
    #[arg(long, default_value_t = 256)]
    res: usize,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Also integrate `|r|` on sub-cells refined by this factor.
    #[arg(long)]
    reference_factor: Option<usize>,
    #[arg(long, default_value_t = 1)]
    dilation: usize,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct LattesArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Half-width of the sampling box.
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
struct FundamentalArgs {
    #[arg(long)]
    map: PathBuf,
    #[arg(long = "box", default_value = "-2.5,-2.5,2.5,2.5", allow_hyphen_values = true)]
    #[serde(rename = "box")]
    bbox: String,
    #[arg(long, default_value_t = 256)]
    res: usize,
    /// `full` or disks `center:radius,...`.
    #[arg(long, default_value = "full", allow_hyphen_values = true)]
    w: String,
    #[arg(long, default_value_t = 2)]
    horizon: usize,
    #[arg(long)]
    out_k: Option<PathBuf>,
    #[arg(long)]
    out_kprime: Option<PathBuf>,
}

enum Failure {
    /// Bad flags, config, or input files.
    Config(String),
    /// A computation failed or a check did not pass.
    Run(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse(_)
            | Error::InvalidInput(_)
            | Error::InvalidMap(_)
            | Error::KindRequired
            | Error::HintRequired
            | Error::NormalizationImpossible(_) => Failure::Config(e.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

type CmdResult = Result<bool, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Run(format!("cannot write {}: {e}", path.display()))
}

fn emit(v: &Value) {
    println!("{v}");
}

fn load_map(path: &Path) -> Result<RationalMap, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read map {}: {e}", path.display())))?;
    Ok(parse_map(&text)?)
}

fn parse_box(text: &str, res: usize) -> Result<Grid, Failure> {
    let v: Vec<f64> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Config(format!("invalid box `{text}`")))?;
    let [x0, y0, x1, y1] = v[..] else {
        return Err(Failure::Config(format!("box needs four numbers, got `{text}`")));
    };
    Ok(Grid::new(Cplx::new(x0, y0), Cplx::new(x1, y1), res)?)
}

fn parse_w(text: &str, grid: Grid) -> Result<CellSet, Failure> {
    if text.trim() == "full" {
        return Ok(CellSet::full(grid));
    }
    let mut w = CellSet::empty(grid);
    for disk in text.split(',') {
        let (center, radius) = disk
            .split_once(':')
            .ok_or_else(|| Failure::Config(format!("disk `{disk}` must be `center:radius`")))?;
        let r: f64 = radius
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("invalid radius in `{disk}`")))?;
        w = w.union(&CellSet::disk(grid, parse_cplx(center)?, r));
    }
    Ok(w)
}

fn grid_json(grid: &Grid) -> Value {
    json!({
        "box": [grid.lo.re, grid.lo.im, grid.hi.re, grid.hi.im],
        "resolution": grid.resolution,
    })
}

fn write_pixmap(path: &Path, bytes: &[u8], grid: &Grid) -> Result<(), Failure> {
    write_atomic(path, bytes).map_err(|e| io_failure(path, e))?;
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    let side = PathBuf::from(side);
    write_atomic(&side, grid_json(grid).to_string().as_bytes()).map_err(|e| io_failure(&side, e))
}

fn identities_for(f: &RationalMap, spec: &str) -> Result<Vec<Identity>, Failure> {
    if spec == "all" {
        return Ok(match f.kind() {
            MapKind::Polynomial | MapKind::NormalizedRational { .. } => {
                vec![Identity::CauchyKernel, Identity::ResolventEquation, Identity::Duality]
            }
            MapKind::SphereJulia => {
                let mut v = vec![Identity::SphereKernel, Identity::Duality];
                if lattes_field(f).is_ok() {
                    v.push(Identity::FunctionalEquation);
                }
                v
            }
            MapKind::General => return Err(Failure::Config(Error::KindRequired.to_string())),
        });
    }
    spec.split(',')
        .map(|name| name.trim().parse::<Identity>().map_err(Failure::from))
        .collect()
}

fn cmd_verify(a: &VerifyArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let which = identities_for(&f, &a.identity)?;
    let opts = VerifyOptions {
        box_radius: a.box_radius,
        psi_index: a.psi,
        resolvent: ResolventCtrl { tol: a.resolvent_tol, max_depth: a.max_depth, ..Default::default() },
        mc_samples: a.mc_samples,
        ..Default::default()
    };
    let mut all_pass = true;
    for id in which {
        let report = verify_identity(&f, id, a.samples, a.tol, a.seed, &opts)?;
        all_pass &= report.pass;
        emit(&serde_json::to_value(&report).expect("report serializes"));
    }
    Ok(all_pass)
}

fn resolvent_for(f: &RationalMap, psi: usize, ctrl: ResolventCtrl) -> Result<Resolvent, Failure> {
    let catalog = test_functions(f)?;
    let n = catalog.len();
    let psi = catalog
        .into_iter()
        .nth(psi)
        .ok_or_else(|| Failure::Config(format!("psi index {psi} out of range (catalog has {n})")))?;
    Ok(Resolvent::new(f, psi, ctrl))
}

fn cmd_resolvent(a: &ResolventArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let x = parse_cplx(&a.point)?;
    let ctrl = ResolventCtrl {
        tol: a.tol,
        max_depth: a.max_depth,
        exclusion_radius: a.exclusion_radius,
        allow_outside: a.allow_outside,
        ..Default::default()
    };
    let r = resolvent_for(&f, a.psi, ctrl)?;
    let e = r.eval(x)?;
    emit(&serde_json::to_value(e).expect("evaluation serializes"));
    Ok(true)
}

fn cmd_render_julia(a: &RenderJuliaArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let grid = parse_box(&a.bbox, a.res)?;
    let params = JuliaParams {
        iter_cap: a.iter_cap,
        escape_radius: a.escape_radius,
        inverse_samples: a.samples,
        seed: a.seed,
    };
    let j = julia_cells(&f, grid, &params)?;
    write_pixmap(&a.out, &j.to_ppm(), &grid)?;
    emit(&json!({ "cells": j.count(), "total": grid.len(), "out": a.out }));
    Ok(true)
}

fn field_values(f: &RationalMap, a: &RenderLinefieldArgs, grid: Grid) -> Result<Vec<Cplx>, Failure> {
    let zero = Cplx::new(0.0, 0.0);
    let centers: Vec<Cplx> = (0..grid.len()).map(|i| grid.center(i)).collect();
    if let Some(index) = a.field.strip_prefix("sigma:") {
        let psi: usize = index
            .parse()
            .map_err(|_| Failure::Config(format!("invalid test-function index `{index}`")))?;
        let r = resolvent_for(f, psi, ResolventCtrl { tol: a.tol, max_depth: a.max_depth, ..Default::default() })?;
        let params = JuliaParams { seed: a.seed, ..Default::default() };
        let j = julia_cells(f, grid, &params)?;
        use rayon::prelude::*;
        return Ok(centers
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                if !j.contains(i) {
                    return zero;
                }
                sigma_field(&r, x).map_or(zero, |s| s.value)
            })
            .collect());
    }
    let field = if a.field == "lattes" {
        lattes_field(f)?.field
    } else if let Some(path) = a.field.strip_prefix("file:") {
        read_field_file(Path::new(path))?
    } else {
        return Err(Failure::Config(format!("unknown field `{}`", a.field)));
    };
    Ok(centers.iter().map(|&x| field.eval(x)).collect())
}

/// JSON `{box: [x0, y0, x1, y1], resolution, values: [[re, im], ...]}`.
fn read_field_file(path: &Path) -> Result<LineField, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read field {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("field file: {e}")))?;
    let bad = || Failure::Config("field file needs box, resolution and values".into());
    let b: Vec<f64> = v["box"].as_array().ok_or_else(bad)?.iter().filter_map(Value::as_f64).collect();
    let res = v["resolution"].as_u64().ok_or_else(bad)? as usize;
    let [x0, y0, x1, y1] = b[..] else { return Err(bad()) };
    let grid = Grid::new(Cplx::new(x0, y0), Cplx::new(x1, y1), res)?;
    let values = v["values"]
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|p| match p.as_array().map(|a| a.as_slice()) {
            Some([re, im]) => Ok(Cplx::new(re.as_f64().ok_or_else(bad)?, im.as_f64().ok_or_else(bad)?)),
            _ => Err(bad()),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LineField::sampled(grid, values)?)
}

fn cmd_render_linefield(a: &RenderLinefieldArgs) -> CmdResult {
    if a.cell_px == 0 {
        return Err(Failure::Config("cell-px must be ≥ 1".into()));
    }
    let f = load_map(&a.map)?;
    let grid = parse_box(&a.bbox, a.res)?;
    let values = field_values(&f, a, grid)?;
    let canvas = render::draw_line_field(&values, grid.resolution, grid.resolution, a.cell_px);
    write_pixmap(&a.out, &canvas.to_ppm(), &grid)?;
    let nonzero = values.iter().filter(|v| v.norm() > 0.0).count();
    emit(&json!({ "nonzero_cells": nonzero, "total": grid.len(), "out": a.out }));
    Ok(true)
}

fn parse_sets(spec: &str, grid: Grid) -> Result<(CellSet, Vec<usize>), Failure> {
    let (w, hs) = spec
        .split_once('/')
        .ok_or_else(|| Failure::Config(format!("sets `{spec}` must be `W/H1,H2,...`")))?;
    let horizons = hs
        .split(',')
        .map(|h| h.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| Failure::Config(format!("invalid horizons `{hs}`")))?;
    Ok((parse_w(w, grid)?, horizons))
}

fn cmd_diagnose(a: &DiagnoseArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let grid = parse_box(&a.bbox, a.res)?;
    let (w, horizons) = parse_sets(&a.sets, grid)?;
    let r = resolvent_for(&f, a.psi, ResolventCtrl::default())?;
    let j = julia_cells(&f, grid, &JuliaParams::default())?;
    let sets: Vec<_> = horizons.iter().map(|&h| fundamental_set(&f, &j, &w, h)).collect();
    let opts = DiagnosticsOptions {
        depth: a.depth,
        scheme: DiagnosticScheme::MonteCarlo { n: a.samples, seed: a.seed },
        reference_factor: a.reference_factor,
        dilation: a.dilation,
    };
    let rows = integral_diagnostics(&r, &j, &sets, &opts)?;
    let mut csv = String::from("n,int_abs_r,int_sigma_psi_re,int_sigma_psi_im,stderr,depth\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.n,
            sig17(row.int_abs_r.value.re),
            sig17(row.int_sigma_psi.value.re),
            sig17(row.int_sigma_psi.value.im),
            sig17(row.stderr),
            row.depth
        ));
        emit(&json!({
            "n": row.n,
            "horizon": horizons[row.n],
            "kprime_cells": sets[row.n].k_prime.count(),
            "int_abs_r": row.int_abs_r,
            "int_sigma_psi": row.int_sigma_psi,
            "stderr": row.stderr,
            "difference": row.difference(),
            "reference_abs_r": row.reference_abs_r,
            "depth": row.depth,
        }));
    }
    write_atomic(&a.out, csv.as_bytes()).map_err(|e| io_failure(&a.out, e))?;
    Ok(true)
}

fn cmd_lattes(a: &LattesArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let l = lattes_field(&f)?;
    let (max, mean) = invariance_residual(&f, &l.field, a.samples, a.seed, a.radius)?;
    let pass = l.residual < a.tol && max < a.tol;
    emit(&json!({
        "lambda": l.lambda,
        "residual": l.residual,
        "points": l.points,
        "invariance_max": max,
        "invariance_mean": mean,
        "samples": a.samples,
        "pass": pass,
    }));
    Ok(pass)
}

fn cmd_fundamental(a: &FundamentalArgs) -> CmdResult {
    let f = load_map(&a.map)?;
    let grid = parse_box(&a.bbox, a.res)?;
    let w = parse_w(&a.w, grid)?;
    let j = julia_cells(&f, grid, &JuliaParams::default())?;
    let fs = fundamental_set(&f, &j, &w, a.horizon);
    if let Some(p) = &a.out_k {
        write_pixmap(p, &fs.k.to_ppm(), &grid)?;
    }
    if let Some(p) = &a.out_kprime {
        write_pixmap(p, &fs.k_prime.to_ppm(), &grid)?;
    }
    emit(&json!({
        "julia_cells": j.count(),
        "k_cells": fs.k.count(),
        "kprime_cells": fs.k_prime.count(),
        "k_area": fs.k.area(),
        "kprime_area": fs.k_prime.area(),
        "K_empty": fs.k_empty,
        "Kprime_empty": fs.k_prime_empty,
        "horizon": fs.horizon,
    }));
    Ok(true)
}

fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Verify(a) => cmd_verify(a),
        Command::Resolvent(a) => cmd_resolvent(a),
        Command::RenderJulia(a) => cmd_render_julia(a),
        Command::RenderLinefield(a) => cmd_render_linefield(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::LattesCheck(a) => cmd_lattes(a),
        Command::FundamentalSet(a) => cmd_fundamental(a),
    }
}

/// The resolved configuration, in the flat form accepted by `--config`.
fn config_record(cli: &Cli, workers: usize) -> Value {
    let tagged = serde_json::to_value(&cli.command).expect("config serializes");
    let (name, args) = tagged
        .as_object()
        .and_then(|m| m.iter().next())
        .map(|(k, v)| (k.clone(), v.clone()))
        .expect("externally tagged enum");
    let mut flat = serde_json::Map::new();
    flat.insert("command".into(), Value::String(name));
    flat.insert("workers".into(), json!(workers));
    if let Value::Object(m) = args {
        flat.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    json!({ "config": flat })
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand(argv, &SUBCOMMANDS) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).init();
    let workers = cli
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        eprintln!("error: --workers must be ≥ 1");
        return ExitCode::from(2);
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global() {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(1);
    }
    emit(&config_record(&cli, workers));
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
