//! Meshes generated as quantiles of a density `ψ` on `[0, T]`, pilot estimation of
//! `E𝒴(t)`, the optimal density `ψ₀ ∝ √E𝒴(t)` and Merton's closed-form optimal mesh.

use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::error::{check_time, Error, Result};
use crate::exec::Exec;
use crate::model::{MertonParams, TimeFn};
use crate::pathkit::{GridPath, RngStream};
use crate::quad::adaptive_simpson;
use crate::scheme::{Mesh, MilsteinScheme};

/// Default number of nodes for tabulated densities.
pub const DENSITY_NODES: usize = 1025;
/// Absolute tolerance on `cumulative(knot) − i/n`.
pub const QUANTILE_TOL: f64 = 1e-12;
pub const DEFAULT_FLOOR: f64 = 1e-6;
pub const DEFAULT_PILOT_GRID: usize = 512;
pub const DEFAULT_PILOT_REPLICATIONS: u64 = 2000;

#[derive(Clone)]
enum Repr {
    /// Piecewise-linear `ψ` through `(grid[j], values[j])`; `cumulative` is exact for it.
    Table { grid: Vec<f64>, values: Vec<f64>, cumulative: Vec<f64>, stderr: Option<Vec<f64>> },
    /// Callable `ψ = scale·f` with cumulative masses tabulated at uniform `nodes`.
    Function { f: TimeFn, scale: f64, nodes: Vec<f64>, cumulative: Vec<f64> },
}

/// A probability density on `[0, T]`, normalized so that `cumulative(T) = 1`.
#[derive(Clone)]
pub struct Density {
    horizon: f64,
    repr: Repr,
}

impl std::fmt::Debug for Density {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self.repr {
            Repr::Table { .. } => "table",
            Repr::Function { .. } => "function",
        };
        f.debug_struct("Density").field("horizon", &self.horizon).field("repr", &kind).finish()
    }
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    for (j, &v) in values.iter().enumerate() {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::contract(format!("density value {v} at node {j} is not positive")));
        }
    }
    // isolated zeros keep the cumulative strictly increasing; a zero cell does not
    if values.windows(2).any(|w| w[0] == 0.0 && w[1] == 0.0) {
        return Err(Error::contract("density vanishes on a whole cell"));
    }
    Ok(())
}

impl Density {
    /// `ψ ≡ 1/T`.
    pub fn uniform(horizon: f64) -> Result<Self> {
        Density::from_table(vec![0.0, horizon], vec![1.0, 1.0])
    }

    /// Piecewise-linear density through `(grid[j], values[j])`; rescaled to unit mass.
    pub fn from_table(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != values.len() {
            return Err(Error::arg("density table needs matching grid and values, at least two nodes"));
        }
        if grid[0] != 0.0 || grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("density grid must start at 0 and increase strictly"));
        }
        check_nonnegative(&values)?;
        let mut cumulative = Vec::with_capacity(grid.len());
        cumulative.push(0.0);
        for j in 0..grid.len() - 1 {
            let mass = 0.5 * (grid[j + 1] - grid[j]) * (values[j] + values[j + 1]);
            cumulative.push(cumulative[j] + mass);
        }
        let total = *cumulative.last().unwrap();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::contract("density has no mass"));
        }
        let values = values.into_iter().map(|v| v / total).collect();
        let mut cumulative: Vec<f64> = cumulative.into_iter().map(|c| c / total).collect();
        *cumulative.last_mut().unwrap() = 1.0;
        let horizon = *grid.last().unwrap();
        Ok(Density { horizon, repr: Repr::Table { grid, values, cumulative, stderr: None } })
    }

    /// Density proportional to the callable `f`, normalized by adaptive quadrature.
    /// Positivity is spot-checked on [`DENSITY_NODES`] uniform nodes.
    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::arg("horizon must be positive"));
        }
        let f: TimeFn = Arc::new(f);
        let k = DENSITY_NODES - 1;
        let nodes: Vec<f64> = (0..=k).map(|j| horizon * (j as f64 / k as f64)).collect();
        let sampled: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
        check_nonnegative(&sampled)?;
        let mut cumulative = Vec::with_capacity(nodes.len());
        cumulative.push(0.0);
        let scale_guess = sampled.iter().fold(0.0f64, |a, &b| a.max(b)) * horizon;
        let tol = 1e-16 * scale_guess.max(f64::MIN_POSITIVE);
        for j in 0..k {
            let mass = adaptive_simpson(&*f, nodes[j], nodes[j + 1], tol);
            cumulative.push(cumulative[j] + mass);
        }
        let total = *cumulative.last().unwrap();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::contract("density has no mass"));
        }
        let mut cumulative: Vec<f64> = cumulative.into_iter().map(|c| c / total).collect();
        *cumulative.last_mut().unwrap() = 1.0;
        Ok(Density { horizon, repr: Repr::Function { f, scale: 1.0 / total, nodes, cumulative } })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Tabulation nodes (the table grid, or the uniform nodes of a callable density).
    pub fn nodes(&self) -> &[f64] {
        match &self.repr {
            Repr::Table { grid, .. } => grid,
            Repr::Function { nodes, .. } => nodes,
        }
    }

    fn cell(nodes: &[f64], t: f64) -> usize {
        nodes.partition_point(|&s| s <= t).saturating_sub(1).min(nodes.len() - 2)
    }

    /// `ψ(t)`; `t` is clamped into `[0, T]`.
    pub fn value(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        match &self.repr {
            Repr::Table { grid, values, .. } => {
                let j = Self::cell(grid, t);
                let h = grid[j + 1] - grid[j];
                let s = (t - grid[j]) / h;
                values[j] * (1.0 - s) + values[j + 1] * s
            }
            Repr::Function { f, scale, .. } => scale * f(t),
        }
    }

    /// `∫₀ᵗ ψ`; `t` is clamped into `[0, T]`.
    pub fn cumulative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.horizon);
        if t == self.horizon {
            return 1.0;
        }
        match &self.repr {
            Repr::Table { grid, values, cumulative, .. } => {
                let j = Self::cell(grid, t);
                let h = grid[j + 1] - grid[j];
                let s = t - grid[j];
                cumulative[j] + values[j] * s + 0.5 * (values[j + 1] - values[j]) * s * s / h
            }
            Repr::Function { f, scale, nodes, cumulative } => {
                let j = Self::cell(nodes, t);
                let tol = 1e-16 / scale;
                cumulative[j] + scale * adaptive_simpson(&**f, nodes[j], t, tol)
            }
        }
    }

    /// Smallest `t` with `cumulative(t) = u`, by bracketing on the node table and
    /// safeguarded Newton iteration inside the bracket.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return self.horizon;
        }
        let (nodes, cum) = match &self.repr {
            Repr::Table { grid, cumulative, .. } => (grid, cumulative),
            Repr::Function { nodes, cumulative, .. } => (nodes, cumulative),
        };
        let j = cum.partition_point(|&c| c <= u).saturating_sub(1).min(nodes.len() - 2);
        let (mut lo, mut hi) = (nodes[j], nodes[j + 1]);
        let mut t = match &self.repr {
            Repr::Table { values, .. } => {
                // exact root of the quadratic cumulative on this cell
                let h = hi - lo;
                let (v0, dv) = (values[j], values[j + 1] - values[j]);
                let r = u - cum[j];
                let disc = (v0 * v0 + 2.0 * dv * r / h).max(0.0);
                lo + (2.0 * r / (v0 + disc.sqrt())).clamp(0.0, h)
            }
            Repr::Function { .. } => {
                let w = (u - cum[j]) / (cum[j + 1] - cum[j]);
                lo + w * (hi - lo)
            }
        };
        for _ in 0..100 {
            let g = self.cumulative(t) - u;
            if g.abs() <= 0.1 * QUANTILE_TOL {
                break;
            }
            if g > 0.0 {
                hi = t;
            } else {
                lo = t;
            }
            let d = self.value(t);
            let newton = t - g / d;
            t = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
            if hi - lo <= f64::EPSILON * self.horizon {
                break;
            }
        }
        t
    }

    /// `(‖ψ‖∞, ‖1/ψ‖∞)` over the tabulation nodes.
    pub fn sup_norms(&self) -> (f64, f64) {
        let vals: Vec<f64> = self.nodes().iter().map(|&t| self.value(t)).collect();
        let sup = vals.iter().fold(0.0f64, |a, &b| a.max(b));
        let inf = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        (sup, 1.0 / inf)
    }

    /// Writes `t,value,stderr` at the tabulation nodes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value,stderr")?;
        let se = match &self.repr {
            Repr::Table { stderr, .. } => stderr.clone(),
            Repr::Function { .. } => None,
        };
        for (j, &t) in self.nodes().iter().enumerate() {
            let s = se.as_ref().map_or(0.0, |s| s[j]);
            writeln!(out, "{t},{},{s}", self.value(t))?;
        }
        Ok(())
    }
}

/// `{ i·T/n }`.
pub fn equidistant_mesh(horizon: f64, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::arg("mesh size must be at least 1"));
    }
    let mut knots: Vec<f64> = (0..=n).map(|i| horizon * (i as f64 / n as f64)).collect();
    knots[n] = horizon;
    Mesh::new(knots)
}

/// Knots solving `∫₀^{tᵢ} ψ = i/n`.
pub fn mesh_from_density(density: &Density, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::arg("mesh size must be at least 1"));
    }
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(0.0);
    for i in 1..n {
        knots.push(density.quantile(i as f64 / n as f64));
    }
    knots.push(density.horizon());
    Mesh::new(knots)
}

/// Monte-Carlo estimate of `E𝒴(t)` on a uniform pilot grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    pub grid: Vec<f64>,
    pub ey_hat: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replications: u64,
}

impl PilotEstimate {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,value,stderr")?;
        for ((t, v), s) in self.grid.iter().zip(&self.ey_hat).zip(&self.stderr) {
            writeln!(out, "{t},{v},{s}")?;
        }
        Ok(())
    }

    /// Reads the format written by [`PilotEstimate::write_csv`]; lines starting with `#` are skipped.
    pub fn read_csv<R: BufRead>(input: R, replications: u64) -> Result<Self> {
        let mut est = PilotEstimate { grid: vec![], ey_hat: vec![], stderr: vec![], replications };
        let mut header_seen = false;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !header_seen {
                if line != "t,value,stderr" {
                    return Err(Error::arg(format!("line {}: expected header t,value,stderr", lineno + 1)));
                }
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::arg(format!("line {}: bad number '{s}'", lineno + 1)))
            };
            if fields.len() != 3 {
                return Err(Error::arg(format!("line {}: expected 3 fields", lineno + 1)));
            }
            est.grid.push(parse(fields[0])?);
            est.ey_hat.push(parse(fields[1])?);
            est.stderr.push(parse(fields[2])?);
        }
        if est.grid.len() < 2 {
            return Err(Error::arg("pilot table needs at least two rows"));
        }
        Ok(est)
    }
}

/// Runs `replications` Milstein paths on a `grid_size`-point uniform grid and averages
/// `|b(t,X̂)|² + λ(t)|c(t,X̂)|²` at every grid point. Replication `k` uses stream `k` of `seed`.
pub fn pilot_expected_y(
    scheme: &MilsteinScheme,
    grid_size: usize,
    replications: u64,
    seed: u64,
    exec: Exec,
) -> Result<PilotEstimate> {
    if grid_size < 2 {
        return Err(Error::arg("pilot grid needs at least two points"));
    }
    if replications < 100 {
        return Err(Error::arg("pilot needs at least 100 replications"));
    }
    let model = scheme.model();
    let intensity = scheme.intensity();
    let mesh = equidistant_mesh(model.horizon(), grid_size - 1)?;
    let knots = mesh.knots();
    let moments = exec.moments(replications, knots.len(), |k| {
        let mut rng = RngStream::new(seed, k).rng();
        let path = GridPath::simulate(intensity, knots, &mut rng)?;
        let xs = scheme.knot_values(knots, &path.w, &path.n);
        Ok(knots.iter().zip(xs).map(|(&t, x)| model.local_y_unchecked(intensity, t, x)).collect())
    })?;
    Ok(PilotEstimate {
        grid: knots.to_vec(),
        ey_hat: moments.iter().map(|m| m.mean.max(0.0)).collect(),
        stderr: moments.iter().map(|m| m.stderr()).collect(),
        replications,
    })
}

/// `ψ₀ ∝ √max(E𝒴, floor·max E𝒴)`, piecewise linear on the pilot grid.
pub fn optimal_density(pilot: &PilotEstimate, floor_eps: f64) -> Result<Density> {
    if !(floor_eps >= 0.0) {
        return Err(Error::arg("floor must be nonnegative"));
    }
    let peak = pilot.ey_hat.iter().fold(0.0f64, |a, &b| a.max(b));
    if !(peak > 0.0) {
        return Err(Error::contract("E𝒴 vanishes identically; no optimal density exists"));
    }
    let floor = floor_eps * peak;
    let roots: Vec<f64> = pilot.ey_hat.iter().map(|&v| v.max(floor).sqrt()).collect();
    if floor == 0.0 && roots.iter().any(|&r| r == 0.0) {
        return Err(Error::contract("E𝒴 vanishes at a pilot node; raise the floor"));
    }
    let mut density = Density::from_table(pilot.grid.clone(), roots.clone())?;
    // delta method: se(√v) ≈ se(v)/(2√v), scaled like the values
    if let Repr::Table { values, stderr, .. } = &mut density.repr {
        let scale = values[0] / roots[0].max(f64::MIN_POSITIVE);
        *stderr = Some(
            roots
                .iter()
                .zip(&pilot.stderr)
                .map(|(&r, &s)| if r > 0.0 { scale * s / (2.0 * r) } else { 0.0 })
                .collect(),
        );
    }
    Ok(density)
}

/// `ψ₀ ∝ √E𝒴` for an analytically known `E𝒴`.
pub fn optimal_density_from_fn(
    expected_y: impl Fn(f64) -> f64 + Send + Sync + 'static,
    horizon: f64,
) -> Result<Density> {
    Density::from_fn(move |t| expected_y(t).max(0.0).sqrt(), horizon)
}

/// `E𝒴(t) = (σ² + λ)·x0²·e^{2γt}` for Merton's model.
pub fn merton_expected_y(params: &MertonParams, t: f64) -> Result<f64> {
    check_time(t, 0.0, params.horizon)?;
    Ok(merton_ey(params, t))
}

pub(crate) fn merton_ey(p: &MertonParams, t: f64) -> f64 {
    (p.sigma * p.sigma + p.lam) * p.x0 * p.x0 * (2.0 * p.gamma() * t).exp()
}

/// `tᵢ = γ⁻¹ ln((i/n)(e^{γT} − 1) + 1)`, equidistant when `|γ|T ≤ 1e-8`.
pub fn merton_optimal_mesh(params: &MertonParams, n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::arg("mesh size must be at least 1"));
    }
    let gamma = params.gamma();
    let horizon = params.horizon;
    if gamma.abs() * horizon <= 1e-8 {
        return equidistant_mesh(horizon, n);
    }
    let growth = (gamma * horizon).exp_m1();
    let mut knots = Vec::with_capacity(n + 1);
    knots.push(0.0);
    for i in 1..n {
        knots.push(((i as f64 / n as f64) * growth).ln_1p() / gamma);
    }
    knots.push(horizon);
    Mesh::new(knots)
}
