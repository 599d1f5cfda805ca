//! Subcommands. Each writes plain-text summaries to `stdout` and CSV artifacts into
//! the configured output directory; every artifact starts with the `#!` config header.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use jumpmil::errorlab::{
    asymptotic_constant, convergence_study, emit_report, tabulate_expected_y, ConstantKind, ErrorLab, MeshKind,
};
use jumpmil::meshdesign::{
    equidistant_mesh, merton_expected_y, merton_optimal_mesh, mesh_from_density, optimal_density,
    pilot_expected_y, Density, PilotEstimate, DENSITY_NODES,
};
use jumpmil::pathkit::union_grid;
use jumpmil::scheme::{COMMUTATIVITY_TOL, Mesh};
use jumpmil::{GridPath, MilsteinScheme, RngStream};

use crate::config::{ConfigError, FileConfig, MeshChoice, RunConfig, HEADER_PREFIX};

/// Tolerance of the derivative consistency check.
pub const DERIVATIVE_TOL: f64 = 1e-6;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Contract(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Contract(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Contract(m) => write!(f, "contract failure: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<jumpmil::Error> for CliError {
    fn from(e: jumpmil::Error) -> Self {
        use jumpmil::Error as E;
        match e {
            E::Contract(_) => CliError::Contract(e.to_string()),
            E::Argument(_) | E::Domain { .. } => CliError::Config(e.to_string()),
            E::Numerical(_) | E::Io(_) => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Loads the base config: `--config`, or `--replay` from an artifact header, or defaults.
pub fn load_config(config: Option<&Path>, replay: Option<&Path>) -> CliResult<FileConfig> {
    match (config, replay) {
        (Some(_), Some(_)) => Err(CliError::Config("--config and --replay are exclusive".into())),
        (Some(p), None) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            FileConfig::parse(&text).map_err(|e| CliError::Config(format!("{}: {}", p.display(), e.0)))
        }
        (None, Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            Ok(FileConfig::from_artifact(&text)?)
        }
        (None, None) => Ok(FileConfig::default()),
    }
}

/// Runs `f` on a rayon pool with `threads` workers (0: the global pool).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(pool.install(f))
}

fn artifact(cfg: &RunConfig, name: &str) -> CliResult<(PathBuf, BufWriter<File>)> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("run.out: cannot create {}: {e}", cfg.out.display())))?;
    let path = cfg.out.join(name);
    let file = File::create(&path)
        .map_err(|e| CliError::Config(format!("run.out: cannot write {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    for line in cfg.header_lines() {
        writeln!(w, "{line}")?;
    }
    Ok((path, w))
}

fn scheme(cfg: &RunConfig) -> CliResult<MilsteinScheme> {
    let (model, intensity) = cfg.build()?;
    Ok(MilsteinScheme::new(model, intensity)?)
}

/// `check`: commutativity and derivative consistency on the default grid.
pub fn cmd_check(cfg: &RunConfig, stdout: &mut dyn Write) -> CliResult<()> {
    let (model, _intensity) = cfg.build()?;
    let grid = model.default_check_grid();
    let comm = model.check_commutativity(&grid, COMMUTATIVITY_TOL)?;
    let der = model.check_derivatives(&grid, DERIVATIVE_TOL)?;
    let verdict = |p: bool| if p { "pass" } else { "FAIL" };
    writeln!(stdout, "model: {}", model.name())?;
    writeln!(
        stdout,
        "commutativity: {} (max |L-1 b - L1 c| = {:e} at t = {}, y = {})",
        verdict(comm.pass),
        comm.max_violation,
        comm.worst.0,
        comm.worst.1
    )?;
    writeln!(
        stdout,
        "derivatives: {} (max scaled deviation {:e} at t = {}, y = {})",
        verdict(der.pass),
        der.max_violation,
        der.worst.0,
        der.worst.1
    )?;
    if !comm.pass {
        return Err(CliError::Contract("jump commutativity condition violated".into()));
    }
    if !der.pass {
        return Err(CliError::Contract("supplied derivatives disagree with finite differences".into()));
    }
    Ok(())
}

fn relevant_for_pilot(line: &str) -> bool {
    let key = line.split_once(" = ").map_or(line, |(k, _)| k);
    key.starts_with("model.") || key.starts_with("intensity.") || key.starts_with("pilot.") || key == "run.seed"
}

/// Runs the pilot, or reads it from `cache` when that file was written with the same
/// model, intensity, pilot settings and seed. A fresh pilot is written back to `cache`.
pub fn load_or_run_pilot(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<PilotEstimate> {
    let wanted: Vec<String> = cfg.header_lines().into_iter().filter(|l| relevant_for_pilot(&l[HEADER_PREFIX.len()..])).collect();
    if let Some(path) = cache.filter(|p| p.exists()) {
        let text = fs::read_to_string(path)?;
        let have: Vec<String> = text
            .lines()
            .filter(|l| l.starts_with(HEADER_PREFIX) && relevant_for_pilot(&l[HEADER_PREFIX.len()..]))
            .map(str::to_string)
            .collect();
        if have == wanted {
            writeln!(stdout, "pilot: reusing {}", path.display())?;
            return Ok(PilotEstimate::read_csv(text.as_bytes(), cfg.pilot_replications)?);
        }
        writeln!(stdout, "pilot: cache {} has different settings, recomputing", path.display())?;
    }
    let scheme = scheme(cfg)?;
    let pilot = pilot_expected_y(&scheme, cfg.pilot_grid, cfg.pilot_replications, cfg.pilot_seed(), cfg.exec())?;
    if let Some(path) = cache {
        let mut w = BufWriter::new(File::create(path)?);
        for line in cfg.header_lines() {
            writeln!(w, "{line}")?;
        }
        pilot.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(pilot)
}

/// `E𝒴` on a grid: closed form for Merton, the pilot otherwise.
fn expected_y_table(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<PilotEstimate> {
    match cfg.merton() {
        Some(p) => Ok(tabulate_expected_y(p.horizon, DENSITY_NODES, |t| {
            merton_expected_y(&p, t).expect("t in [0, T]")
        })?),
        None => load_or_run_pilot(cfg, cache, stdout),
    }
}

fn mesh_kind(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<MeshKind> {
    Ok(match cfg.mesh {
        MeshChoice::Equidistant => MeshKind::Equidistant,
        MeshChoice::MertonOptimal => MeshKind::MertonOptimal(cfg.merton().expect("validated")),
        MeshChoice::PilotOptimal => {
            let pilot = load_or_run_pilot(cfg, cache, stdout)?;
            MeshKind::Density(optimal_density(&pilot, cfg.floor)?)
        }
    })
}

/// `pilot`: writes `pilot.csv` (`E𝒴` estimate) and `density.csv` (`ψ₀`).
pub fn cmd_pilot(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let pilot = load_or_run_pilot(cfg, cache, stdout)?;
    let density = optimal_density(&pilot, cfg.floor)?;
    let (p1, mut w) = artifact(cfg, "pilot.csv")?;
    pilot.write_csv(&mut w)?;
    w.flush()?;
    let (p2, mut w) = artifact(cfg, "density.csv")?;
    density.write_csv(&mut w)?;
    w.flush()?;
    let max_rel = pilot
        .ey_hat
        .iter()
        .zip(&pilot.stderr)
        .filter(|(v, _)| **v > 0.0)
        .map(|(v, s)| s / v)
        .fold(0.0f64, f64::max);
    writeln!(stdout, "pilot: {} points, {} replications, max relative stderr {:.3e}", pilot.grid.len(), pilot.replications, max_rel)?;
    writeln!(stdout, "wrote {}\nwrote {}", p1.display(), p2.display())?;
    Ok(vec![p1, p2])
}

/// `mesh`: knots for every `n` of the equidistant, pilot-optimal and (for Merton)
/// merton-optimal families, one `n,i,t` file per family.
pub fn cmd_mesh(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let horizon = cfg.horizon();
    let mut families: Vec<(&str, Box<dyn Fn(usize) -> jumpmil::Result<Mesh>>)> =
        vec![("equidistant", Box::new(move |n| equidistant_mesh(horizon, n)))];
    let pilot = load_or_run_pilot(cfg, cache, stdout)?;
    let density: Density = optimal_density(&pilot, cfg.floor)?;
    families.push(("pilot-optimal", Box::new(move |n| mesh_from_density(&density, n))));
    if let Some(p) = cfg.merton() {
        families.push(("merton-optimal", Box::new(move |n| merton_optimal_mesh(&p, n))));
    }
    let mut written = Vec::new();
    for (name, make) in &families {
        let (path, mut w) = artifact(cfg, &format!("mesh_{name}.csv"))?;
        writeln!(w, "n,i,t")?;
        for &n in &cfg.n_list {
            for (i, t) in make(n)?.knots().iter().enumerate() {
                writeln!(w, "{n},{i},{t}")?;
            }
        }
        w.flush()?;
        writeln!(stdout, "wrote {}", path.display())?;
        written.push(path);
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c_eq: f64,
    pub c_noneq: f64,
    pub c_psi: f64,
}

fn constants_for(ey: &PilotEstimate, kind: &MeshKind) -> jumpmil::Result<Constants> {
    Ok(Constants {
        c_eq: asymptotic_constant(ey, ConstantKind::Equidistant)?,
        c_noneq: asymptotic_constant(ey, ConstantKind::NoneqOptimal)?,
        c_psi: kind.constant(ey)?,
    })
}

/// `constants`: prints `C^eq`, `C^noneq`, `C_ψ` for the configured mesh and `C^eq/C^noneq`;
/// for pilot-based tables also the spread induced by a one-stderr shift of `E𝒴`.
pub fn cmd_constants(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<Constants> {
    let ey = expected_y_table(cfg, cache, stdout)?;
    let kind = mesh_kind(cfg, cache, stdout)?;
    let c = constants_for(&ey, &kind)?;
    let spread = if ey.replications > 0 {
        let shifted = |sign: f64| PilotEstimate {
            ey_hat: ey.ey_hat.iter().zip(&ey.stderr).map(|(v, s)| (v + sign * s).max(0.0)).collect(),
            ..ey.clone()
        };
        let hi = constants_for(&shifted(1.0), &kind)?;
        let lo = constants_for(&shifted(-1.0), &kind)?;
        Some(Constants {
            c_eq: 0.5 * (hi.c_eq - lo.c_eq).abs(),
            c_noneq: 0.5 * (hi.c_noneq - lo.c_noneq).abs(),
            c_psi: 0.5 * (hi.c_psi - lo.c_psi).abs(),
        })
    } else {
        None
    };
    let rows = [
        ("C_eq", c.c_eq, spread.map(|s| s.c_eq)),
        ("C_noneq", c.c_noneq, spread.map(|s| s.c_noneq)),
        ("C_psi", c.c_psi, spread.map(|s| s.c_psi)),
        ("C_eq/C_noneq", c.c_eq / c.c_noneq, None),
    ];
    let (path, mut w) = artifact(cfg, "constants.csv")?;
    writeln!(w, "name,value,uncertainty")?;
    for (name, v, u) in rows {
        let u = u.unwrap_or(0.0);
        writeln!(w, "{name},{v},{u}")?;
        if u > 0.0 {
            writeln!(stdout, "{name} = {v:.6} ± {u:.2e}")?;
        } else {
            writeln!(stdout, "{name} = {v:.6}")?;
        }
    }
    w.flush()?;
    writeln!(stdout, "mesh: {}\nwrote {}", kind.name(), path.display())?;
    Ok(c)
}

/// `converge`: convergence study over `mesh.n`; writes `converge.csv` and `converge.dat`.
pub fn cmd_converge(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<PathBuf> {
    let scheme = scheme(cfg)?;
    let ey = expected_y_table(cfg, cache, stdout)?;
    let kind = mesh_kind(cfg, cache, stdout)?;
    let lab = ErrorLab::new(scheme, cfg.reference, cfg.replications, cfg.eval_grid)?
        .with_seed(cfg.seed)
        .with_exec(cfg.exec())
        .with_tilt(cfg.tilt)?;
    let mut report = convergence_study(&lab, cfg.method, &kind, &cfg.n_list, &ey)?;
    report.metadata = cfg
        .header_lines()
        .iter()
        .filter_map(|l| l[HEADER_PREFIX.len()..].split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Config(format!("run.out: cannot create {}: {e}", cfg.out.display())))?;
    let (csv, dat) = emit_report(&report, &cfg.out.join("converge.csv"))?;
    writeln!(stdout, "{:>6} {:>7} {:>12} {:>10} {:>10} {:>12} {:>10}", "n", "cost_n", "e_hat", "stderr", "sqrt_n_e", "sqrt_cost_e", "limit")?;
    for r in &report.rows {
        writeln!(
            stdout,
            "{:>6} {:>7} {:>12.5e} {:>10.2e} {:>10.5} {:>12.5} {:>10.5}",
            r.n, r.cost_n, r.e_hat, r.stderr, r.sqrt_n_e, r.sqrt_cost_e, r.predicted_limit
        )?;
    }
    writeln!(stdout, "slope {:.4}, C_psi {:.6}", report.slope, report.c_psi)?;
    writeln!(stdout, "wrote {}\nwrote {}", csv.display(), dat.display())?;
    Ok(csv)
}

/// `simulate`: one path (stream 0) with its approximation on the first mesh of `mesh.n`.
pub fn cmd_simulate(cfg: &RunConfig, cache: Option<&Path>, stdout: &mut dyn Write) -> CliResult<Vec<PathBuf>> {
    let scheme = scheme(cfg)?;
    let kind = mesh_kind(cfg, cache, stdout)?;
    let horizon = cfg.horizon();
    let mesh = kind.mesh(horizon, cfg.n_list[0])?;
    let uniform = equidistant_mesh(horizon, cfg.simulate_grid)?;
    let grid = union_grid([uniform.knots(), mesh.knots()]);
    let mut rng = RngStream::new(cfg.seed, 0).rng();
    let path = GridPath::simulate(scheme.intensity(), &grid, &mut rng)?;
    let traj = scheme.build(cfg.method, &mesh, &path)?;

    let (p1, mut w) = artifact(cfg, "path.csv")?;
    path.write_csv(&mut w)?;
    w.flush()?;
    let (p2, mut w) = artifact(cfg, "approx.csv")?;
    traj.write_csv(&grid, &mut w)?;
    w.flush()?;
    let (p3, mut w) = artifact(cfg, "jumps.csv")?;
    writeln!(w, "t,W")?;
    for (t, wv) in path.jumps.times().iter().zip(&path.w_jumps) {
        writeln!(w, "{t},{wv}")?;
    }
    w.flush()?;
    let mut written = vec![p1, p2, p3];
    if let Some(p) = cfg.merton() {
        let (p4, mut w) = artifact(cfg, "exact.csv")?;
        writeln!(w, "t,x")?;
        for ((t, wv), n) in path.grid.iter().zip(&path.w).zip(&path.n) {
            writeln!(w, "{t},{}", p.exact(*wv, *n, *t)?)?;
        }
        w.flush()?;
        written.push(p4);
    }
    writeln!(stdout, "{} jumps, {} mesh intervals ({})", path.jumps.len(), mesh.intervals(), kind.name())?;
    for p in &written {
        writeln!(stdout, "wrote {}", p.display())?;
    }
    Ok(written)
}
