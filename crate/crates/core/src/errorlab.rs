//! Monte-Carlo estimation of the global error
//! `e_n = (E∫₀ᵀ|X(t) − X̂_n(t)|² dt)^{1/2}`, the asymptotic constants `C_ψ`,
//! `C^eq`, `C^noneq`, convergence studies and the local Hölder ratio.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::meshdesign::{equidistant_mesh, mesh_from_density, merton_optimal_mesh, Density, PilotEstimate};
use crate::model::{IntensityModel, MertonParams, SdeModel};
use crate::pathkit::{union_grid, GridPath, RngStream};
use crate::quad::trapezoid;
use crate::scheme::{ContinuousMilstein, Mesh, MethodKind, MilsteinScheme};
use crate::stats::{ls_slope, Moments};

pub const DEFAULT_FINE_FACTOR: usize = 16;
pub const MIN_FINE_FACTOR: usize = 8;

/// Number of noise evaluations used by a method on `n` intervals: `2n` when both
/// `b` and `c` are non-trivial, `n` when exactly one is, `0` otherwise.
pub fn cost_of(n: usize, model: &SdeModel) -> usize {
    let active = usize::from(!model.diffusion_trivial()) + usize::from(!model.jump_trivial());
    active * n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorEstimate {
    pub e_hat: f64,
    pub stderr: f64,
    /// Raw `∫|X − X̂|²` statistics behind `e_hat`.
    pub mean_sq: f64,
    pub mean_sq_stderr: f64,
    pub replications: u64,
    pub n: usize,
    pub eval_grid_size: usize,
}

impl ErrorEstimate {
    fn from_moments(m: &Moments, n: usize, eval_grid_size: usize) -> Self {
        let mean_sq = m.mean.max(0.0);
        let e_hat = mean_sq.sqrt();
        let se2 = m.stderr();
        let stderr = if e_hat > 0.0 { se2 / (2.0 * e_hat) } else { 0.0 };
        ErrorEstimate { e_hat, stderr, mean_sq, mean_sq_stderr: se2, replications: m.count, n, eval_grid_size }
    }
}

/// How the true solution is obtained on each simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// Closed-form Merton solution.
    MertonExact(MertonParams),
    /// Continuous Milstein process on the union of all meshes refined `factor` times.
    FineMilstein { factor: usize },
}

impl Default for Reference {
    fn default() -> Self {
        Reference::FineMilstein { factor: DEFAULT_FINE_FACTOR }
    }
}

impl fmt::Display for Reference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reference::MertonExact(_) => write!(f, "merton-exact"),
            Reference::FineMilstein { factor } => write!(f, "fine-milstein({factor})"),
        }
    }
}

fn check_merton(p: &MertonParams, model: &SdeModel, intensity: &IntensityModel) -> Result<()> {
    let bad = |what: &str| Err(Error::arg(format!("merton-exact reference does not fit the model: {what}")));
    if model.x0() != p.x0 || model.horizon() != p.horizon {
        return bad("initial value or horizon");
    }
    if intensity.constant_rate() != Some(p.lam) {
        return bad("intensity");
    }
    for (t, y) in model.default_check_grid() {
        let close = |u: f64, v: f64| (u - v).abs() <= 1e-12 * (1.0 + y.abs());
        if !close(model.a(t, y), p.r * y) || !close(model.b(t, y), p.sigma * y) || !close(model.c(t, y), y) {
            return bad("coefficients");
        }
    }
    Ok(())
}

/// Importance-sampling change of measure for the driving noise. Paths are drawn with
/// `W` carrying drift `drift` and the intensity multiplied by `intensity_factor`;
/// every sample is reweighted by the likelihood ratio, so the estimated expectations
/// are unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tilt {
    pub drift: f64,
    pub intensity_factor: f64,
}

impl Tilt {
    pub const NONE: Tilt = Tilt { drift: 0.0, intensity_factor: 1.0 };

    pub fn is_none(&self) -> bool {
        *self == Tilt::NONE
    }

    /// Esscher tilt by `X(T)^θ` in Merton's model: drift `θσ`, intensity factor `2^θ`.
    /// With `θ = 2` the weighted `X(T)²` is constant.
    pub fn merton(p: &MertonParams, theta: f64) -> Tilt {
        Tilt { drift: theta * p.sigma, intensity_factor: theta.exp2() }
    }
}

impl Default for Tilt {
    fn default() -> Self {
        Tilt::NONE
    }
}

impl fmt::Display for Tilt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "drift {} intensity x{}", self.drift, self.intensity_factor)
    }
}

/// Shared configuration of the Monte-Carlo experiments.
#[derive(Debug, Clone)]
pub struct ErrorLab {
    scheme: MilsteinScheme,
    reference: Reference,
    replications: u64,
    eval_grid_size: usize,
    seed: u64,
    exec: Exec,
    tilt: Tilt,
    sampling_intensity: IntensityModel,
}

/// Sorted evaluation times with the reference solution on one path, including
/// both one-sided limits at every jump.
struct RefSamples {
    times: Vec<f64>,
    /// `(left, right)` reference values; equal except at jump times.
    values: Vec<(f64, f64)>,
}

impl RefSamples {
    /// Trapezoid rule for `∫|X − X̂|²`, taking left limits on the left end of
    /// every cell so jumps never straddle a cell.
    fn squared_error(&self, approx: &[f64]) -> f64 {
        let mut total = 0.0;
        for j in 0..self.times.len() - 1 {
            let right = self.values[j].1 - approx[j];
            let left = self.values[j + 1].0 - approx[j + 1];
            total += 0.5 * (self.times[j + 1] - self.times[j]) * (right * right + left * left);
        }
        total
    }
}

impl ErrorLab {
    pub fn new(scheme: MilsteinScheme, reference: Reference, replications: u64, eval_grid_size: usize) -> Result<Self> {
        if replications < 2 {
            return Err(Error::arg("need at least two replications"));
        }
        if eval_grid_size < 1 {
            return Err(Error::arg("eval grid needs at least one interval"));
        }
        match &reference {
            Reference::MertonExact(p) => check_merton(p, scheme.model(), scheme.intensity())?,
            Reference::FineMilstein { factor } if *factor < MIN_FINE_FACTOR => {
                return Err(Error::arg(format!("fine-milstein factor must be at least {MIN_FINE_FACTOR}")));
            }
            Reference::FineMilstein { .. } => {}
        }
        let sampling_intensity = scheme.intensity().clone();
        Ok(ErrorLab {
            scheme,
            reference,
            replications,
            eval_grid_size,
            seed: 0,
            exec: Exec::default(),
            tilt: Tilt::NONE,
            sampling_intensity,
        })
    }

    pub fn with_tilt(mut self, tilt: Tilt) -> Result<Self> {
        if !tilt.drift.is_finite() {
            return Err(Error::arg("tilt drift must be finite"));
        }
        self.sampling_intensity = self.scheme.intensity().scaled(tilt.intensity_factor)?;
        self.tilt = tilt;
        Ok(self)
    }

    pub fn tilt(&self) -> Tilt {
        self.tilt
    }

    /// Path `k` on `grid` (which must end at `T`) and its likelihood-ratio weight.
    fn sample_path(&self, k: u64, grid: &[f64]) -> Result<(GridPath, f64)> {
        let mut rng = RngStream::new(self.seed, k).rng();
        let mut path = GridPath::simulate(&self.sampling_intensity, grid, &mut rng)?;
        if self.tilt.is_none() {
            return Ok((path, 1.0));
        }
        let mu = self.tilt.drift;
        for (w, &t) in path.w.iter_mut().zip(&path.grid) {
            *w += mu * t;
        }
        for (w, &t) in path.w_jumps.iter_mut().zip(path.jumps.times()) {
            *w += mu * t;
        }
        let horizon = path.horizon();
        let kappa = self.tilt.intensity_factor;
        let lam_total = self.scheme.intensity().big_lambda(horizon, 0.0);
        let w_end = *path.w.last().unwrap();
        let n_end = *path.n.last().unwrap() as f64;
        let log_weight =
            -mu * w_end + 0.5 * mu * mu * horizon - n_end * kappa.ln() + (kappa - 1.0) * lam_total;
        Ok((path, log_weight.exp()))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn scheme(&self) -> &MilsteinScheme {
        &self.scheme
    }

    pub fn reference(&self) -> Reference {
        self.reference
    }

    pub fn replications(&self) -> u64 {
        self.replications
    }

    pub fn eval_grid_size(&self) -> usize {
        self.eval_grid_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn horizon(&self) -> f64 {
        self.scheme.model().horizon()
    }

    fn fine_mesh(&self, meshes: &[&Mesh]) -> Result<Option<Mesh>> {
        let Reference::FineMilstein { factor } = self.reference else {
            return Ok(None);
        };
        let horizon = self.horizon();
        let all = union_grid(meshes.iter().map(|m| m.knots()));
        // drop near-coincident knots coming from different meshes
        let mut knots: Vec<f64> = Vec::with_capacity(all.len());
        for t in all {
            if knots.last().is_none_or(|&p| t - p > 1e-12 * horizon) {
                knots.push(t);
            }
        }
        *knots.last_mut().unwrap() = horizon;
        Ok(Some(Mesh::new(knots)?.refine(factor)))
    }

    fn check_meshes(&self, meshes: &[&Mesh]) -> Result<()> {
        if meshes.is_empty() {
            return Err(Error::arg("no meshes given"));
        }
        for m in meshes {
            if m.horizon() != self.horizon() {
                return Err(Error::arg("mesh horizon differs from the model horizon"));
            }
        }
        Ok(())
    }

    fn reference_samples(&self, path: &GridPath, fine: Option<&ContinuousMilstein>) -> RefSamples {
        let jt = path.jumps.times();
        let mut times = Vec::with_capacity(path.grid.len() + jt.len());
        let mut values = Vec::with_capacity(path.grid.len() + jt.len());
        let value = |t: f64, w: f64, n: u64, left: bool| match (&self.reference, fine) {
            (Reference::MertonExact(p), _) => p.exact_unchecked(w, n, t),
            (_, Some(f)) => f.value(t, w, n, left),
            _ => unreachable!("fine reference is built for fine-milstein"),
        };
        let (mut i, mut k) = (0, 0);
        while i < path.grid.len() || k < jt.len() {
            if k >= jt.len() || (i < path.grid.len() && path.grid[i] <= jt[k]) {
                let (t, w, n) = (path.grid[i], path.w[i], path.n[i]);
                let x = value(t, w, n, false);
                times.push(t);
                values.push((x, x));
                i += 1;
            } else {
                let (t, w) = (jt[k], path.w_jumps[k]);
                let n = path.jumps.count_at(t);
                let before = path.jumps.count_before(t);
                times.push(t);
                values.push((value(t, w, before, true), value(t, w, n, false)));
                k += 1;
            }
        }
        RefSamples { times, values }
    }

    /// `e_n` for several `(method, mesh)` pairs, all evaluated on the same paths.
    /// The path grid is the union of the uniform eval grid, all mesh knots and,
    /// for the fine reference, the fine mesh; the error integral uses every point of it.
    pub fn l2_errors(&self, cases: &[(MethodKind, &Mesh)]) -> Result<Vec<ErrorEstimate>> {
        let meshes: Vec<&Mesh> = cases.iter().map(|c| c.1).collect();
        self.check_meshes(&meshes)?;
        let eval = equidistant_mesh(self.horizon(), self.eval_grid_size)?;
        let fine = self.fine_mesh(&meshes)?;
        let mut parts: Vec<&[f64]> = vec![eval.knots()];
        parts.extend(meshes.iter().map(|m| m.knots()));
        if let Some(f) = &fine {
            parts.push(f.knots());
        }
        let grid = union_grid(parts);
        let model = self.scheme.model();
        let moments = self.exec.moments(self.replications, cases.len(), |k| {
            let (path, weight) = self.sample_path(k, &grid)?;
            let fine_ref = fine.as_ref().map(|f| ContinuousMilstein::new(model, f, &path)).transpose()?;
            let refs = self.reference_samples(&path, fine_ref.as_ref());
            let mut out = Vec::with_capacity(cases.len());
            for &(kind, mesh) in cases {
                let traj = self.scheme.build(kind, mesh, &path)?;
                let approx = traj.eval_sorted(&refs.times)?;
                out.push(weight * refs.squared_error(&approx));
            }
            if out.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite squared error on replication {k}")));
            }
            Ok(out)
        })?;
        Ok(cases
            .iter()
            .zip(&moments)
            .map(|((_, mesh), m)| ErrorEstimate::from_moments(m, mesh.intervals(), self.eval_grid_size))
            .collect())
    }

    pub fn l2_error(&self, kind: MethodKind, mesh: &Mesh) -> Result<ErrorEstimate> {
        Ok(self.l2_errors(&[(kind, mesh)])?[0])
    }

    /// `max_i (E|X(tᵢ) − X̂(tᵢ)|²)^{1/2}` per mesh, on shared paths. The stderr is the
    /// delta-method stderr at the maximizing knot.
    pub fn knot_errors(&self, meshes: &[&Mesh]) -> Result<Vec<ErrorEstimate>> {
        self.check_meshes(meshes)?;
        let fine = self.fine_mesh(meshes)?;
        let mut parts: Vec<&[f64]> = meshes.iter().map(|m| m.knots()).collect();
        if let Some(f) = &fine {
            parts.push(f.knots());
        }
        let grid = union_grid(parts);
        let widths: Vec<usize> = meshes.iter().map(|m| m.knots().len()).collect();
        let total: usize = widths.iter().sum();
        let model = self.scheme.model();
        let moments = self.exec.moments(self.replications, total, |k| {
            let (path, weight) = self.sample_path(k, &grid)?;
            let fine_ref = fine.as_ref().map(|f| ContinuousMilstein::new(model, f, &path)).transpose()?;
            let mut out = Vec::with_capacity(total);
            for mesh in meshes {
                let knots = mesh.knots();
                let (w, n) = path.samples_at(knots)?;
                let xs = self.scheme.knot_values(knots, &w, &n);
                for (j, &t) in knots.iter().enumerate() {
                    let x = match (&self.reference, &fine_ref) {
                        (Reference::MertonExact(p), _) => p.exact_unchecked(w[j], n[j], t),
                        (_, Some(f)) => f.value(t, w[j], n[j], false),
                        _ => unreachable!(),
                    };
                    out.push(weight * (x - xs[j]).powi(2));
                }
            }
            Ok(out)
        })?;
        let mut result = Vec::with_capacity(meshes.len());
        let mut offset = 0;
        for (mesh, &width) in meshes.iter().zip(&widths) {
            let worst = moments[offset..offset + width]
                .iter()
                .max_by(|a, b| a.mean.total_cmp(&b.mean))
                .expect("meshes have knots");
            result.push(ErrorEstimate::from_moments(worst, mesh.intervals(), 0));
            offset += width;
        }
        Ok(result)
    }

    /// `(h, ‖X(t+h) − X(t)‖_{L²}/h^{1/2}, stderr)` for each `h`, from the reference solution.
    pub fn holder_ratio(&self, t: f64, h_list: &[f64]) -> Result<Vec<(f64, f64, f64)>> {
        let horizon = self.horizon();
        if h_list.is_empty() || h_list.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::arg("h values must be positive"));
        }
        if h_list.windows(2).any(|w| !(w[0] > w[1])) {
            return Err(Error::arg("h values must be decreasing"));
        }
        if !(t >= 0.0 && t + h_list[0] <= horizon) {
            return Err(Error::Domain { t: t + h_list[0], lo: 0.0, hi: horizon });
        }
        let mut points = vec![0.0, t, horizon];
        points.extend(h_list.iter().map(|&h| t + h));
        points.sort_by(f64::total_cmp);
        points.dedup();
        let fine = match self.reference {
            Reference::MertonExact(_) => None,
            Reference::FineMilstein { factor } => {
                // uniform steps no longer than h_min/factor, plus the probe points
                let h_min = *h_list.last().unwrap();
                let steps = ((horizon / h_min).ceil() as usize).saturating_mul(factor);
                let base = equidistant_mesh(horizon, steps)?;
                Some(Mesh::new(union_grid([base.knots(), &points[..]]))?)
            }
        };
        let grid = match &fine {
            Some(f) => f.knots().to_vec(),
            None => points.clone(),
        };
        let model = self.scheme.model();
        let moments = self.exec.moments(self.replications, h_list.len(), |k| {
            let (path, weight) = self.sample_path(k, &grid)?;
            let fine_ref = fine.as_ref().map(|f| ContinuousMilstein::new(model, f, &path)).transpose()?;
            let at = |s: f64| -> Result<f64> {
                let (w, n) = path.samples_at(&[s])?;
                Ok(match (&self.reference, &fine_ref) {
                    (Reference::MertonExact(p), _) => p.exact_unchecked(w[0], n[0], s),
                    (_, Some(f)) => f.value(s, w[0], n[0], false),
                    _ => unreachable!(),
                })
            };
            let x_t = at(t)?;
            h_list.iter().map(|&h| Ok(weight * (at(t + h)? - x_t).powi(2))).collect()
        })?;
        Ok(h_list
            .iter()
            .zip(&moments)
            .map(|(&h, m)| {
                let est = ErrorEstimate::from_moments(m, 0, 0);
                (h, est.e_hat / h.sqrt(), est.stderr / h.sqrt())
            })
            .collect())
    }
}

/// Single-mesh convenience wrapper around [`ErrorLab::l2_error`].
#[allow(clippy::too_many_arguments)]
pub fn l2_error_mc(
    model: SdeModel,
    intensity: IntensityModel,
    kind: MethodKind,
    mesh: &Mesh,
    replications: u64,
    eval_grid_size: usize,
    reference: Reference,
    seed: u64,
) -> Result<ErrorEstimate> {
    let scheme = MilsteinScheme::new(model, intensity)?;
    ErrorLab::new(scheme, reference, replications, eval_grid_size)?.with_seed(seed).l2_error(kind, mesh)
}

/// Which asymptotic constant to compute from a tabulated `E𝒴`.
#[derive(Debug, Clone, Copy)]
pub enum ConstantKind<'a> {
    /// `C^eq = √(T/6)·(∫E𝒴)^{1/2}`.
    Equidistant,
    /// `C^noneq = 6^{-1/2}·∫√E𝒴`.
    NoneqOptimal,
    /// `C_ψ = 6^{-1/2}·(∫E𝒴/ψ)^{1/2}`.
    Density(&'a Density),
}

/// Composite-trapezoid evaluation of the asymptotic constants on the grid of `ey`.
pub fn asymptotic_constant(ey: &PilotEstimate, kind: ConstantKind<'_>) -> Result<f64> {
    let grid = &ey.grid;
    if grid.len() < 2 || grid.len() != ey.ey_hat.len() {
        return Err(Error::arg("E𝒴 table needs matching grid and values"));
    }
    if ey.ey_hat.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::arg("E𝒴 must be nonnegative"));
    }
    let horizon = *grid.last().unwrap();
    let sixth = 1.0 / 6.0f64;
    match kind {
        ConstantKind::Equidistant => Ok((horizon * sixth * trapezoid(grid, &ey.ey_hat)).sqrt()),
        ConstantKind::NoneqOptimal => {
            let roots: Vec<f64> = ey.ey_hat.iter().map(|v| v.sqrt()).collect();
            Ok(sixth.sqrt() * trapezoid(grid, &roots))
        }
        ConstantKind::Density(d) => {
            if d.horizon() != horizon {
                return Err(Error::arg("density and E𝒴 table have different horizons"));
            }
            // a piecewise-linear density must be tabulated on the same grid
            let nodes = d.nodes();
            if nodes.len() > 2 && nodes.len() != grid.len() && nodes.len() != crate::meshdesign::DENSITY_NODES {
                return Err(Error::arg("density grid does not match the E𝒴 grid"));
            }
            let mut ratio = Vec::with_capacity(grid.len());
            for (&t, &v) in grid.iter().zip(&ey.ey_hat) {
                let p = d.value(t);
                if p > 0.0 {
                    ratio.push(v / p);
                } else if v == 0.0 {
                    ratio.push(0.0);
                } else {
                    return Err(Error::contract(format!("density vanishes at t = {t} where E𝒴 > 0")));
                }
            }
            Ok((sixth * trapezoid(grid, &ratio)).sqrt())
        }
    }
}

/// Tabulates an analytically known `E𝒴` on `points` uniform points.
pub fn tabulate_expected_y(horizon: f64, points: usize, ey: impl Fn(f64) -> f64) -> Result<PilotEstimate> {
    let grid = equidistant_mesh(horizon, points.max(2) - 1)?.knots().to_vec();
    let ey_hat = grid.iter().map(|&t| ey(t)).collect();
    Ok(PilotEstimate { stderr: vec![0.0; grid.len()], grid, ey_hat, replications: 0 })
}

#[derive(Debug, Clone)]
pub enum MeshKind {
    Equidistant,
    Density(Density),
    MertonOptimal(MertonParams),
}

impl MeshKind {
    pub fn mesh(&self, horizon: f64, n: usize) -> Result<Mesh> {
        match self {
            MeshKind::Equidistant => equidistant_mesh(horizon, n),
            MeshKind::Density(d) => mesh_from_density(d, n),
            MeshKind::MertonOptimal(p) => merton_optimal_mesh(p, n),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MeshKind::Equidistant => "equidistant",
            MeshKind::Density(_) => "density",
            MeshKind::MertonOptimal(_) => "merton-optimal",
        }
    }

    /// `C_ψ` for the density generating this mesh family.
    pub fn constant(&self, ey: &PilotEstimate) -> Result<f64> {
        match self {
            MeshKind::Equidistant => asymptotic_constant(ey, ConstantKind::Equidistant),
            MeshKind::Density(d) => asymptotic_constant(ey, ConstantKind::Density(d)),
            MeshKind::MertonOptimal(_) => asymptotic_constant(ey, ConstantKind::NoneqOptimal),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub cost_n: usize,
    pub e_hat: f64,
    pub stderr: f64,
    pub sqrt_n_e: f64,
    pub sqrt_cost_e: f64,
    /// Limit of `sqrt_cost_e`: `√2·C_ψ` for cost `2n`, `C_ψ` for cost `n`.
    pub predicted_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log e_hat` against `log n`.
    pub slope: f64,
    pub c_psi: f64,
    /// `key = value` pairs written as header comments.
    pub metadata: Vec<(String, String)>,
}

impl ConvergenceReport {
    pub fn push_meta(&mut self, key: impl Into<String>, value: impl ToString) {
        self.metadata.push((key.into(), value.to_string()));
    }
}

/// Runs one [`ErrorLab::l2_errors`] batch over `n_list` (common paths for all `n`)
/// and tabulates scaled errors against the predicted constant computed from `ey`.
pub fn convergence_study(
    lab: &ErrorLab,
    kind: MethodKind,
    mesh_kind: &MeshKind,
    n_list: &[usize],
    ey: &PilotEstimate,
) -> Result<ConvergenceReport> {
    if n_list.is_empty() || n_list.iter().any(|&n| n < 2) {
        return Err(Error::arg("n_list entries must be at least 2"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::arg("n_list must be strictly increasing"));
    }
    let horizon = lab.horizon();
    let meshes = n_list.iter().map(|&n| mesh_kind.mesh(horizon, n)).collect::<Result<Vec<_>>>()?;
    let cases: Vec<(MethodKind, &Mesh)> = meshes.iter().map(|m| (kind, m)).collect();
    let estimates = lab.l2_errors(&cases)?;
    let c_psi = mesh_kind.constant(ey)?;
    let model = lab.scheme().model();
    let rows: Vec<ConvergenceRow> = estimates
        .iter()
        .map(|e| {
            let cost_n = cost_of(e.n, model);
            let factor = (cost_n as f64 / e.n as f64).sqrt();
            ConvergenceRow {
                n: e.n,
                cost_n,
                e_hat: e.e_hat,
                stderr: e.stderr,
                sqrt_n_e: (e.n as f64).sqrt() * e.e_hat,
                sqrt_cost_e: (cost_n as f64).sqrt() * e.e_hat,
                predicted_limit: factor * c_psi,
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.e_hat.ln()).collect();
    let slope = if rows.len() >= 2 { ls_slope(&xs, &ys) } else { f64::NAN };
    let mut report = ConvergenceReport { rows, slope, c_psi, metadata: Vec::new() };
    report.push_meta("model", model.name());
    report.push_meta("method", kind);
    report.push_meta("mesh", mesh_kind.name());
    report.push_meta("reference", lab.reference());
    report.push_meta("replications", lab.replications());
    report.push_meta("eval_grid_size", lab.eval_grid_size());
    report.push_meta("seed", lab.seed());
    if !lab.tilt().is_none() {
        report.push_meta("tilt", lab.tilt());
    }
    Ok(report)
}

pub const REPORT_COLUMNS: &str = "n,cost_n,e_hat,stderr,sqrt_n_e,sqrt_cost_e,predicted_limit";

/// Writes the report as CSV at `path` and gnuplot data blocks next to it
/// (same stem, `.dat`). Metadata goes into `#! key = value` header lines.
/// Returns the two paths written.
pub fn emit_report(report: &ConvergenceReport, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut csv = BufWriter::new(File::create(path)?);
    write_report_csv(report, &mut csv)?;
    csv.flush()?;
    let dat_path = path.with_extension("dat");
    let mut dat = BufWriter::new(File::create(&dat_path)?);
    write_report_dat(report, &mut dat)?;
    dat.flush()?;
    Ok((path.to_path_buf(), dat_path))
}

pub fn write_report_csv<W: Write>(report: &ConvergenceReport, out: &mut W) -> Result<()> {
    for (k, v) in &report.metadata {
        writeln!(out, "#! {k} = {v}")?;
    }
    writeln!(out, "# slope = {}", report.slope)?;
    writeln!(out, "# c_psi = {}", report.c_psi)?;
    writeln!(out, "{REPORT_COLUMNS}")?;
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.n, r.cost_n, r.e_hat, r.stderr, r.sqrt_n_e, r.sqrt_cost_e, r.predicted_limit
        )?;
    }
    Ok(())
}

/// Three blocks separated by blank-line pairs (gnuplot `index 0..2`):
/// `log n, log e_hat`; `log n, log sqrt_n_e`; `log n, log C_ψ`.
pub fn write_report_dat<W: Write>(report: &ConvergenceReport, out: &mut W) -> Result<()> {
    writeln!(out, "# log n\tlog e_hat")?;
    for r in &report.rows {
        writeln!(out, "{}\t{}", (r.n as f64).ln(), r.e_hat.ln())?;
    }
    writeln!(out, "\n\n# log n\tlog sqrt_n_e")?;
    for r in &report.rows {
        writeln!(out, "{}\t{}", (r.n as f64).ln(), r.sqrt_n_e.ln())?;
    }
    writeln!(out, "\n\n# log n\tlog C_psi")?;
    for r in &report.rows {
        writeln!(out, "{}\t{}", (r.n as f64).ln(), report.c_psi.ln())?;
    }
    Ok(())
}
