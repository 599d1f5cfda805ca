//! Milstein scheme under jump commutativity and its two global approximations.
//!
//! Under `L₋₁b = L₁c` the mixed integrals only enter through
//! `I(N,W) + I(W,N) = ΔN·ΔW`, so the knot values of the continuous Milstein
//! process are computable from `W` and `N` sampled at the knots alone. Between
//! knots the approximation is either
//!
//! * [`MethodKind::Conditional`]: the conditional expectation of the continuous
//!   Milstein process given the knot samples, with Brownian-bridge weights
//!   `(t−tᵢ)/(tᵢ₊₁−tᵢ)` and Poisson-bridge weights `Λ(t,tᵢ)/Λ(tᵢ₊₁,tᵢ)`, or
//! * [`MethodKind::Linear`]: the chord between consecutive knot values.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::error::{check_time, Error, Result};
use crate::model::{Coefficient, IntensityModel, SdeModel};
use crate::pathkit::{i_nn, i_ww, GridPath};

/// Default bound on the sampled commutativity violation accepted by the scheme.
pub const COMMUTATIVITY_TOL: f64 = 1e-8;

/// Discretization `0 = t₀ < t₁ < … < tₙ = T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    knots: Vec<f64>,
}

impl Mesh {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::arg("a mesh needs at least two knots"));
        }
        if knots[0] != 0.0 {
            return Err(Error::arg(format!("mesh must start at 0, got {}", knots[0])));
        }
        let horizon = *knots.last().unwrap();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::arg("mesh must end at a positive horizon"));
        }
        let min_step = 1e-14 * horizon;
        for (i, w) in knots.windows(2).enumerate() {
            if !(w[1] - w[0] >= min_step) {
                return Err(Error::arg(format!(
                    "mesh interval {i} = [{}, {}] is degenerate or unsorted",
                    w[0], w[1]
                )));
            }
        }
        Ok(Mesh { knots })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of intervals.
    pub fn intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn max_step(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn min_step(&self) -> f64 {
        self.knots.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Each interval split into `factor` equal parts.
    pub fn refine(&self, factor: usize) -> Mesh {
        let factor = factor.max(1);
        let mut knots = Vec::with_capacity(self.intervals() * factor + 1);
        for w in self.knots.windows(2) {
            let h = (w[1] - w[0]) / factor as f64;
            knots.push(w[0]);
            for j in 1..factor {
                knots.push(w[0] + j as f64 * h);
            }
        }
        knots.push(self.horizon());
        Mesh { knots }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodKind {
    Conditional,
    Linear,
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MethodKind::Conditional => "conditional",
            MethodKind::Linear => "linear",
        })
    }
}

impl FromStr for MethodKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conditional" | "cond" => Ok(MethodKind::Conditional),
            "linear" | "lin" => Ok(MethodKind::Linear),
            other => Err(Error::arg(format!("unknown method kind '{other}'"))),
        }
    }
}

/// Milstein increments of one interval, all coefficients frozen at `(tᵢ, xᵢ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct StepTerms {
    a: f64,
    b_dw: f64,
    c_dn: f64,
    lb_iww: f64,
    lmc_inn: f64,
    lc_dndw: f64,
}

impl StepTerms {
    #[inline]
    fn new(model: &SdeModel, t: f64, x: f64, dw: f64, dn: u64, iww: f64, inn: f64) -> Self {
        let a = model.a(t, x);
        let b = model.b(t, x);
        let c = model.c(t, x);
        let (lb, lc, lmc) = if dn == 0 {
            // L₋₁c only multiplies I(N,N) and L₁c only ΔN·ΔW
            (b * model.db_dy(t, x), 0.0, 0.0)
        } else {
            (
                b * model.db_dy(t, x),
                b * model.dc_dy(t, x),
                model.lm1(Coefficient::Jump, t, x),
            )
        };
        let dnf = dn as f64;
        StepTerms {
            a,
            b_dw: b * dw,
            c_dn: c * dnf,
            lb_iww: lb * iww,
            lmc_inn: if inn == 0.0 { 0.0 } else { lmc * inn },
            lc_dndw: lc * dnf * dw,
        }
    }

    #[inline]
    fn advance(&self, x: f64, h: f64) -> f64 {
        x + self.a * h + self.b_dw + self.c_dn + self.lb_iww + self.lmc_inn + self.lc_dndw
    }
}

/// One Milstein step from `(t_i, x_i)` to `t_ip1`:
/// `x + aΔt + bΔW + cΔN + L₁b·I(W,W) + L₋₁c·I(N,N) + L₁c·ΔN·ΔW`.
#[allow(clippy::too_many_arguments)]
pub fn milstein_step(
    model: &SdeModel,
    t_i: f64,
    t_ip1: f64,
    x_i: f64,
    dw: f64,
    dn: u64,
    iww: f64,
    inn: f64,
) -> f64 {
    let h = t_ip1 - t_i;
    StepTerms::new(model, t_i, x_i, dw, dn, iww, inn).advance(x_i, h)
}

/// Scheme options; `commutativity_tol = None` skips the commutativity check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeOptions {
    pub commutativity_tol: Option<f64>,
}

impl Default for SchemeOptions {
    fn default() -> Self {
        SchemeOptions { commutativity_tol: Some(COMMUTATIVITY_TOL) }
    }
}

/// A model/intensity pair that passed the commutativity check, ready to build trajectories.
#[derive(Debug, Clone)]
pub struct MilsteinScheme {
    model: SdeModel,
    intensity: IntensityModel,
}

impl MilsteinScheme {
    pub fn new(model: SdeModel, intensity: IntensityModel) -> Result<Self> {
        Self::with_options(model, intensity, SchemeOptions::default())
    }

    pub fn with_options(model: SdeModel, intensity: IntensityModel, opts: SchemeOptions) -> Result<Self> {
        ensure_commutative(&model, opts)?;
        Ok(MilsteinScheme { model, intensity })
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    pub fn intensity(&self) -> &IntensityModel {
        &self.intensity
    }

    /// Knot values from the knot samples of `W` and `N` only.
    pub fn knot_values(&self, knots: &[f64], w: &[f64], n: &[u64]) -> Vec<f64> {
        iterate(&self.model, knots, w, n)
    }

    pub fn run(&self, mesh: &Mesh, path: &GridPath) -> Result<Vec<f64>> {
        let (w, n) = path.samples_at(mesh.knots())?;
        Ok(self.knot_values(mesh.knots(), &w, &n))
    }

    pub fn build(&self, kind: MethodKind, mesh: &Mesh, path: &GridPath) -> Result<ApproxTrajectory> {
        let (w, n) = path.samples_at(mesh.knots())?;
        self.build_from_samples(kind, mesh, &w, &n)
    }

    /// Builds a trajectory from `W`, `N` observed at the mesh knots.
    pub fn build_from_samples(
        &self,
        kind: MethodKind,
        mesh: &Mesh,
        w: &[f64],
        n: &[u64],
    ) -> Result<ApproxTrajectory> {
        let knots = mesh.knots();
        if w.len() != knots.len() || n.len() != knots.len() {
            return Err(Error::arg("samples must match the mesh knots"));
        }
        let mut values = Vec::with_capacity(knots.len());
        let mut segments = Vec::with_capacity(knots.len() - 1);
        let mut x = self.model.x0();
        values.push(x);
        for i in 0..knots.len() - 1 {
            let h = knots[i + 1] - knots[i];
            let dw = w[i + 1] - w[i];
            if n[i + 1] < n[i] {
                return Err(Error::arg("Poisson samples must be nondecreasing"));
            }
            let dn = n[i + 1] - n[i];
            let terms = StepTerms::new(&self.model, knots[i], x, dw, dn, i_ww(dw, h), i_nn(dn));
            x = terms.advance(x, h);
            values.push(x);
            if kind == MethodKind::Conditional {
                let lam_total = if dn == 0 { 1.0 } else { self.intensity.big_lambda(knots[i + 1], knots[i]) };
                if !(lam_total > 0.0) {
                    return Err(Error::contract(format!(
                        "Λ({}, {}) = {lam_total} must be positive",
                        knots[i + 1],
                        knots[i]
                    )));
                }
                segments.push(Segment { terms, jumped: dn > 0, lam_total });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Milstein iteration produced a non-finite value".into()));
        }
        Ok(ApproxTrajectory {
            kind,
            knots: knots.to_vec(),
            values,
            segments,
            intensity: (kind == MethodKind::Conditional).then(|| self.intensity.clone()),
        })
    }
}

fn ensure_commutative(model: &SdeModel, opts: SchemeOptions) -> Result<()> {
    if let Some(tol) = opts.commutativity_tol {
        let rep = model.check_commutativity(&model.default_check_grid(), tol)?;
        if !rep.pass {
            return Err(Error::contract(format!(
                "jump commutativity violated: |L₋₁b − L₁c| = {} at (t, y) = ({}, {})",
                rep.max_violation, rep.worst.0, rep.worst.1
            )));
        }
    }
    Ok(())
}

/// Milstein knot values for `model` on `mesh`, reading `W` and `N` from `path`.
pub fn run_milstein(model: &SdeModel, mesh: &Mesh, path: &GridPath) -> Result<Vec<f64>> {
    ensure_commutative(model, SchemeOptions::default())?;
    let (w, n) = path.samples_at(mesh.knots())?;
    Ok(iterate(model, mesh.knots(), &w, &n))
}

fn iterate(model: &SdeModel, knots: &[f64], w: &[f64], n: &[u64]) -> Vec<f64> {
    let mut values = Vec::with_capacity(knots.len());
    let mut x = model.x0();
    values.push(x);
    for i in 0..knots.len() - 1 {
        let h = knots[i + 1] - knots[i];
        let dw = w[i + 1] - w[i];
        let dn = n[i + 1] - n[i];
        x = StepTerms::new(model, knots[i], x, dw, dn, i_ww(dw, h), i_nn(dn)).advance(x, h);
        values.push(x);
    }
    values
}

pub fn build_trajectory(
    kind: MethodKind,
    model: &SdeModel,
    intensity: &IntensityModel,
    mesh: &Mesh,
    path: &GridPath,
) -> Result<ApproxTrajectory> {
    MilsteinScheme::new(model.clone(), intensity.clone())?.build(kind, mesh, path)
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    terms: StepTerms,
    jumped: bool,
    /// `Λ(tᵢ₊₁, tᵢ)`; unused when no jump occurred.
    lam_total: f64,
}

/// A global approximation on `[0, T]` built from one path's knot samples.
#[derive(Debug, Clone)]
pub struct ApproxTrajectory {
    kind: MethodKind,
    knots: Vec<f64>,
    values: Vec<f64>,
    segments: Vec<Segment>,
    intensity: Option<IntensityModel>,
}

impl ApproxTrajectory {
    pub fn kind(&self) -> MethodKind {
        self.kind
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.knots.last().unwrap()
    }

    pub fn eval(&self, t: f64) -> Result<f64> {
        check_time(t, 0.0, self.horizon())?;
        Ok(self.eval_unchecked(t))
    }

    /// Evaluation without the domain check; `t` must lie in `[0, T]`.
    pub fn eval_unchecked(&self, t: f64) -> f64 {
        let i = self.knots.partition_point(|&k| k <= t).saturating_sub(1);
        self.eval_in(i, t)
    }

    #[inline]
    fn eval_in(&self, i: usize, t: f64) -> f64 {
        if self.knots[i] == t || i + 1 >= self.knots.len() {
            return self.values[i];
        }
        let (t_i, t_ip1) = (self.knots[i], self.knots[i + 1]);
        let h = t_ip1 - t_i;
        let dt = t - t_i;
        let w = dt / h;
        match self.kind {
            MethodKind::Linear => (self.values[i] * (t_ip1 - t) + self.values[i + 1] * dt) / h,
            MethodKind::Conditional => {
                let seg = &self.segments[i];
                let s = &seg.terms;
                let v = if !seg.jumped {
                    0.0
                } else {
                    let intensity = self.intensity.as_ref().expect("conditional kind keeps intensity");
                    if intensity.constant_rate().is_some() {
                        w
                    } else {
                        intensity.big_lambda(t, t_i) / seg.lam_total
                    }
                };
                self.values[i]
                    + s.a * dt
                    + s.b_dw * w
                    + s.c_dn * v
                    + s.lb_iww * w * w
                    + s.lc_dndw * v * w
                    + s.lmc_inn * v * v
            }
        }
    }

    /// Evaluates on a sorted list of times with a moving cursor.
    pub fn eval_sorted(&self, times: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(times.len());
        let mut i = 0;
        let mut prev = f64::NEG_INFINITY;
        for &t in times {
            check_time(t, 0.0, self.horizon())?;
            if t < prev {
                return Err(Error::arg("eval_sorted needs nondecreasing times"));
            }
            prev = t;
            while i + 1 < self.knots.len() && self.knots[i + 1] <= t {
                i += 1;
            }
            out.push(self.eval_in(i, t));
        }
        Ok(out)
    }

    /// Writes `t,x_hat` rows at the given times.
    pub fn write_csv<W: Write>(&self, times: &[f64], mut out: W) -> Result<()> {
        let xs = self.eval_sorted(times)?;
        writeln!(out, "t,x_hat")?;
        for (t, x) in times.iter().zip(xs) {
            writeln!(out, "{t},{x}")?;
        }
        Ok(())
    }
}

/// The continuous Milstein process on a mesh, evaluated with the true `W(t)`, `N(t)`
/// between knots. Used as a reference solution when no closed form exists.
#[derive(Debug, Clone)]
pub struct ContinuousMilstein {
    knots: Vec<f64>,
    values: Vec<f64>,
    w: Vec<f64>,
    n: Vec<u64>,
    coefs: Vec<[f64; 6]>,
}

impl ContinuousMilstein {
    pub fn new(model: &SdeModel, mesh: &Mesh, path: &GridPath) -> Result<Self> {
        let knots = mesh.knots();
        let (w, n) = path.samples_at(knots)?;
        let mut values = Vec::with_capacity(knots.len());
        let mut coefs = Vec::with_capacity(knots.len());
        let mut x = model.x0();
        for i in 0..knots.len() {
            let t = knots[i];
            let c = [
                model.a(t, x),
                model.b(t, x),
                model.c(t, x),
                model.l1(Coefficient::Diffusion, t, x),
                model.lm1(Coefficient::Jump, t, x),
                model.l1(Coefficient::Jump, t, x),
            ];
            values.push(x);
            coefs.push(c);
            if i + 1 < knots.len() {
                let h = knots[i + 1] - t;
                let dw = w[i + 1] - w[i];
                let dn = n[i + 1] - n[i];
                x = Self::increment(&c, x, h, dw, dn);
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("reference Milstein produced a non-finite value".into()));
        }
        Ok(ContinuousMilstein { knots: knots.to_vec(), values, w, n, coefs })
    }

    #[inline]
    fn increment(c: &[f64; 6], x: f64, h: f64, dw: f64, dn: u64) -> f64 {
        let dnf = dn as f64;
        x + c[0] * h + c[1] * dw + c[2] * dnf + c[3] * i_ww(dw, h) + c[4] * i_nn(dn) + c[5] * dnf * dw
    }

    pub fn knot_values(&self) -> &[f64] {
        &self.values
    }

    /// Value at `t` given `W(t)` and the count `n_t`. With `left = true` the
    /// interval `(tⱼ, tⱼ₊₁]` containing `t` is used, which yields left limits when
    /// `n_t` is `N(t−)`.
    pub fn value(&self, t: f64, w_t: f64, n_t: u64, left: bool) -> f64 {
        let j = if left {
            self.knots.partition_point(|&k| k < t).saturating_sub(1)
        } else {
            self.knots.partition_point(|&k| k <= t).saturating_sub(1)
        };
        if !left && self.knots[j] == t {
            return self.values[j];
        }
        let h = t - self.knots[j];
        let dn = n_t.saturating_sub(self.n[j]);
        Self::increment(&self.coefs[j], self.values[j], h, w_t - self.w[j], dn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AffineCoef, MertonParams};
    use crate::pathkit::{JumpTimes, RngStream};

    fn merton(r: f64, sigma: f64, lam: f64) -> MertonParams {
        MertonParams::new(r, sigma, lam, 1.0, 1.0).unwrap()
    }

    #[test]
    fn mesh_validation() {
        assert!(Mesh::new(vec![0.0]).is_err());
        assert!(Mesh::new(vec![0.1, 1.0]).is_err());
        assert!(Mesh::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Mesh::new(vec![0.0, 0.6, 0.5, 1.0]).is_err());
        assert!(Mesh::new(vec![0.0, 1e-16, 1.0]).is_err());
        let m = Mesh::new(vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(m.intervals(), 2);
        assert_eq!(m.max_step(), 0.75);
        assert_eq!(m.refine(2).knots(), &[0.0, 0.125, 0.25, 0.625, 1.0]);
    }

    #[test]
    fn step_examples() {
        let euler = SdeModel::new("e", 0.0, 1.0).unwrap().with_drift(|_, _| 1.0);
        assert_eq!(milstein_step(&euler, 0.0, 0.5, 0.0, 0.3, 0, i_ww(0.3, 0.5), 0.0), 0.5);

        let m = merton(0.0, 1.0, 1.0).model();
        let x = milstein_step(&m, 0.0, 0.1, 1.0, 0.2, 1, i_ww(0.2, 0.1), i_nn(1));
        assert!((x - 2.37).abs() < 1e-14, "{x}");

        // noise-free increments still carry the −Δt/2 correction
        let p = MertonParams::new(0.3, 0.5, 1.0, 1.0, 1.0).unwrap().model();
        let (xi, h) = (2.0, 0.2);
        let x = milstein_step(&p, 0.0, h, xi, 0.0, 0, i_ww(0.0, h), 0.0);
        let expect = xi + 0.3 * xi * h + 0.25 * xi * (-h / 2.0);
        assert!((x - expect).abs() < 1e-15);
    }

    #[test]
    fn single_interval_run_is_one_step() {
        let p = merton(0.1, 0.4, 2.0);
        let path = GridPath::with_jumps(
            &[0.0, 0.5, 1.0],
            JumpTimes::new(vec![0.3, 0.7], 1.0).unwrap(),
            &mut RngStream::new(1, 2).rng(),
        )
        .unwrap();
        let mesh = Mesh::new(vec![0.0, 1.0]).unwrap();
        let vals = run_milstein(&p.model(), &mesh, &path).unwrap();
        let dw = path.w[2];
        let step = milstein_step(&p.model(), 0.0, 1.0, 1.0, dw, 2, i_ww(dw, 1.0), i_nn(2));
        assert_eq!(vals, vec![1.0, step]);
        assert!(run_milstein(&p.model(), &Mesh::new(vec![0.0, 0.3, 1.0]).unwrap(), &path).is_err());
    }

    #[test]
    fn refuses_non_commutative_models() {
        let broken = SdeModel::new("broken", 1.0, 1.0)
            .unwrap()
            .with_diffusion(|_, y| y, |_, _| 1.0)
            .with_jump(|_, _| 1.0, |_, _| 0.0);
        let lam = IntensityModel::constant(1.0).unwrap();
        assert!(matches!(MilsteinScheme::new(broken.clone(), lam.clone()), Err(Error::Contract(_))));
        let opts = SchemeOptions { commutativity_tol: None };
        assert!(MilsteinScheme::with_options(broken, lam, opts).is_ok());
    }

    fn sample_path(lam: &IntensityModel, n: usize, seed: u64) -> (Mesh, GridPath) {
        let knots: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let mesh = Mesh::new(knots.clone()).unwrap();
        let path = GridPath::simulate(lam, &knots, &mut RngStream::new(seed, 0).rng()).unwrap();
        (mesh, path)
    }

    #[test]
    fn both_kinds_hit_knots_exactly() {
        let p = merton(0.2, 0.6, 3.0);
        let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
        let (mesh, path) = sample_path(&p.intensity(), 8, 5);
        for kind in [MethodKind::Conditional, MethodKind::Linear] {
            let tr = scheme.build(kind, &mesh, &path).unwrap();
            assert_eq!(tr.knot_values()[0], 1.0);
            for (t, v) in mesh.knots().iter().zip(tr.knot_values()) {
                assert_eq!(tr.eval(*t).unwrap(), *v);
            }
            assert!(tr.eval(1.01).is_err());
            assert!(tr.eval(-0.01).is_err());
        }
    }

    #[test]
    fn conditional_midpoint_without_increments() {
        let p = MertonParams::new(0.0, 0.5, 1.0, 1.0, 1.0).unwrap();
        let m = SdeModel::new("no-drift", 2.0, 1.0)
            .unwrap()
            .with_diffusion(move |_, y| p.sigma * y, move |_, _| p.sigma)
            .with_jump(|_, y| y, |_, _| 1.0);
        let scheme = MilsteinScheme::new(m, p.intensity()).unwrap();
        let mesh = Mesh::new(vec![0.0, 0.4, 1.0]).unwrap();
        let tr = scheme
            .build_from_samples(MethodKind::Conditional, &mesh, &[0.0, 0.0, 0.0], &[0, 0, 0])
            .unwrap();
        // x + L₁b·I(W,W)·¼ with I(W,W) = −Δt/2 and L₁b = σ²x
        let expect = 2.0 + 0.25 * 2.0 * (-0.2) * 0.25;
        assert!((tr.eval(0.2).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn conditional_equals_linear_for_state_free_noise() {
        let m = SdeModel::affine(
            "additive",
            0.5,
            1.0,
            AffineCoef::new(vec![0.2], vec![-0.7]),
            AffineCoef::new(vec![0.3, 0.5], vec![]),
            AffineCoef::new(vec![-0.2, 0.1], vec![]),
        )
        .unwrap();
        let lam = IntensityModel::constant(4.0).unwrap();
        let scheme = MilsteinScheme::new(m, lam.clone()).unwrap();
        let (mesh, path) = sample_path(&lam, 16, 8);
        let c = scheme.build(MethodKind::Conditional, &mesh, &path).unwrap();
        let l = scheme.build(MethodKind::Linear, &mesh, &path).unwrap();
        for k in 0..=500 {
            let t = k as f64 / 500.0;
            assert!((c.eval(t).unwrap() - l.eval(t).unwrap()).abs() < 1e-13);
        }
    }

    #[test]
    fn samples_only_reproduce_knot_values() {
        let p = merton(0.05, 0.3, 1.5);
        let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
        let knots: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let fine: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let path = GridPath::simulate(&p.intensity(), &fine, &mut RngStream::new(4, 4).rng()).unwrap();
        let mesh = Mesh::new(knots.clone()).unwrap();
        let full = scheme.run(&mesh, &path).unwrap();
        let (w, n) = path.samples_at(&knots).unwrap();
        let only = scheme.build_from_samples(MethodKind::Linear, &mesh, &w, &n).unwrap();
        assert_eq!(full, only.knot_values());
    }

    #[test]
    fn eval_sorted_matches_eval() {
        let p = merton(0.05, 0.3, 1.5);
        let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
        let (mesh, path) = sample_path(&p.intensity(), 7, 3);
        let tr = scheme.build(MethodKind::Conditional, &mesh, &path).unwrap();
        let ts: Vec<f64> = (0..=99).map(|i| i as f64 / 99.0).collect();
        let a = tr.eval_sorted(&ts).unwrap();
        for (t, v) in ts.iter().zip(a) {
            assert_eq!(tr.eval(*t).unwrap(), v);
        }
    }

    #[test]
    fn continuous_milstein_matches_knots_and_limits() {
        let p = merton(0.05, 0.3, 1.5);
        let m = p.model();
        let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let jumps = JumpTimes::new(vec![0.33, 0.5], 1.0).unwrap();
        let path = GridPath::with_jumps(&grid, jumps, &mut RngStream::new(1, 9).rng()).unwrap();
        let mesh = Mesh::new(vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let cm = ContinuousMilstein::new(&m, &mesh, &path).unwrap();
        assert_eq!(cm.knot_values(), run_milstein(&m, &mesh, &path).unwrap().as_slice());
        // right value at a knot is the knot value, the left limit at a jump on a knot differs
        assert_eq!(cm.value(0.5, path.w[10], 2, false), cm.knot_values()[2]);
        let left = cm.value(0.5, path.w[10], 1, true);
        let y = cm.knot_values()[1];
        // c·1 + L₋₁c·(I(N,N)|₂ − I(N,N)|₁) + L₁c·1·ΔW with L₋₁c = y, L₁c = σy
        let jump_part = y + y + 0.3 * y * (path.w[10] - path.w[5]);
        assert!((cm.knot_values()[2] - left - jump_part).abs() < 1e-12);
    }
}
