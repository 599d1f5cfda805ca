//! Scalar jump-diffusion problems
//! `dX = a(t,X) dt + b(t,X) dW + c(t,X-) dN`, `X(0) = x0`, on `[0, T]`,
//! driven by a Wiener process `W` and an independent Poisson process `N`
//! with deterministic intensity `λ(t)`.

use std::fmt;
use std::sync::Arc;

use crate::error::{check_time, Error, Result};
use crate::quad::adaptive_simpson;

pub type CoefFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Absolute tolerance used for quadrature-based compensators.
pub const COMPENSATOR_TOL: f64 = 1e-10;

/// Selects which of the noise coefficients an operator is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coefficient {
    Diffusion,
    Jump,
}

fn zero2() -> CoefFn {
    Arc::new(|_, _| 0.0)
}

/// Coefficients of a scalar jump-diffusion together with the `y`-derivatives of `b` and `c`.
///
/// Derivatives are supplied by the caller; [`SdeModel::check_derivatives`] compares them
/// with central differences.
#[derive(Clone)]
pub struct SdeModel {
    name: String,
    drift: CoefFn,
    diffusion: CoefFn,
    diffusion_dy: CoefFn,
    jump: CoefFn,
    jump_dy: CoefFn,
    x0: f64,
    horizon: f64,
    diffusion_trivial: bool,
    jump_trivial: bool,
}

impl fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeModel")
            .field("name", &self.name)
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .field("diffusion_trivial", &self.diffusion_trivial)
            .field("jump_trivial", &self.jump_trivial)
            .finish_non_exhaustive()
    }
}

impl SdeModel {
    /// A model with all coefficients identically zero.
    pub fn new(name: impl Into<String>, x0: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::arg(format!("horizon must be positive, got {horizon}")));
        }
        if !x0.is_finite() {
            return Err(Error::arg("initial value must be finite"));
        }
        Ok(SdeModel {
            name: name.into(),
            drift: zero2(),
            diffusion: zero2(),
            diffusion_dy: zero2(),
            jump: zero2(),
            jump_dy: zero2(),
            x0,
            horizon,
            diffusion_trivial: true,
            jump_trivial: true,
        })
    }

    pub fn with_drift(mut self, a: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.drift = Arc::new(a);
        self
    }

    /// Sets `b` and `∂b/∂y`; the diffusion is declared non-trivial.
    pub fn with_diffusion(
        mut self,
        b: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        db_dy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Arc::new(b);
        self.diffusion_dy = Arc::new(db_dy);
        self.diffusion_trivial = false;
        self
    }

    /// Sets `c` and `∂c/∂y`; the jump coefficient is declared non-trivial.
    pub fn with_jump(
        mut self,
        c: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        dc_dy: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.jump = Arc::new(c);
        self.jump_dy = Arc::new(dc_dy);
        self.jump_trivial = false;
        self
    }

    /// Overrides the declared triviality flags used by the cost model.
    pub fn declare_trivial(mut self, diffusion: bool, jump: bool) -> Self {
        self.diffusion_trivial = diffusion;
        self.jump_trivial = jump;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn x0(&self) -> f64 {
        self.x0
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn diffusion_trivial(&self) -> bool {
        self.diffusion_trivial
    }
    pub fn jump_trivial(&self) -> bool {
        self.jump_trivial
    }

    #[inline]
    pub fn a(&self, t: f64, y: f64) -> f64 {
        (self.drift)(t, y)
    }
    #[inline]
    pub fn b(&self, t: f64, y: f64) -> f64 {
        (self.diffusion)(t, y)
    }
    #[inline]
    pub fn c(&self, t: f64, y: f64) -> f64 {
        (self.jump)(t, y)
    }
    #[inline]
    pub fn db_dy(&self, t: f64, y: f64) -> f64 {
        (self.diffusion_dy)(t, y)
    }
    #[inline]
    pub fn dc_dy(&self, t: f64, y: f64) -> f64 {
        (self.jump_dy)(t, y)
    }

    fn coef(&self, which: Coefficient, t: f64, y: f64) -> f64 {
        match which {
            Coefficient::Diffusion => self.b(t, y),
            Coefficient::Jump => self.c(t, y),
        }
    }

    /// `L₁f = b·∂f/∂y`, unchecked.
    #[inline]
    pub fn l1(&self, which: Coefficient, t: f64, y: f64) -> f64 {
        let d = match which {
            Coefficient::Diffusion => self.db_dy(t, y),
            Coefficient::Jump => self.dc_dy(t, y),
        };
        self.b(t, y) * d
    }

    /// `L₋₁f = f(t, y + c(t,y)) − f(t, y)`, unchecked.
    #[inline]
    pub fn lm1(&self, which: Coefficient, t: f64, y: f64) -> f64 {
        let shifted = y + self.c(t, y);
        self.coef(which, t, shifted) - self.coef(which, t, y)
    }

    pub fn l1_apply(&self, which: Coefficient, t: f64, y: f64) -> Result<f64> {
        check_time(t, 0.0, self.horizon)?;
        Ok(self.l1(which, t, y))
    }

    pub fn lm1_apply(&self, which: Coefficient, t: f64, y: f64) -> Result<f64> {
        check_time(t, 0.0, self.horizon)?;
        Ok(self.lm1(which, t, y))
    }

    /// The default verification grid: 21 equidistant times times 41 states in `[-5, 5]`.
    pub fn default_check_grid(&self) -> Vec<(f64, f64)> {
        let mut grid = Vec::with_capacity(21 * 41);
        for i in 0..=20 {
            let t = self.horizon * i as f64 / 20.0;
            for j in 0..=40 {
                grid.push((t, -5.0 + 0.25 * j as f64));
            }
        }
        grid
    }

    /// Samples `|L₋₁b − L₁c|` over `grid`.
    pub fn check_commutativity(&self, grid: &[(f64, f64)], tol: f64) -> Result<CheckReport> {
        self.max_over(grid, tol, |t, y| {
            (self.lm1(Coefficient::Diffusion, t, y) - self.l1(Coefficient::Jump, t, y)).abs()
        })
    }

    /// Compares the supplied derivatives with central differences:
    /// the violation at `(t, y)` is `|f'(t,y) − D_h f(t,y)| / (1 + |y|)` for `f ∈ {b, c}`.
    pub fn check_derivatives(&self, grid: &[(f64, f64)], tol: f64) -> Result<CheckReport> {
        self.max_over(grid, tol, |t, y| {
            let h = 1e-5 * (1.0 + y.abs());
            let fd_b = (self.b(t, y + h) - self.b(t, y - h)) / (2.0 * h);
            let fd_c = (self.c(t, y + h) - self.c(t, y - h)) / (2.0 * h);
            let vb = (self.db_dy(t, y) - fd_b).abs();
            let vc = (self.dc_dy(t, y) - fd_c).abs();
            vb.max(vc) / (1.0 + y.abs())
        })
    }

    fn max_over(
        &self,
        grid: &[(f64, f64)],
        tol: f64,
        violation: impl Fn(f64, f64) -> f64,
    ) -> Result<CheckReport> {
        if grid.is_empty() {
            return Err(Error::arg("check grid is empty"));
        }
        if !(tol >= 0.0) {
            return Err(Error::arg(format!("tolerance must be nonnegative, got {tol}")));
        }
        let mut report = CheckReport { max_violation: 0.0, worst: grid[0], pass: true };
        for &(t, y) in grid {
            check_time(t, 0.0, self.horizon)?;
            let v = violation(t, y);
            if v.is_nan() {
                return Err(Error::Numerical(format!("NaN coefficient at (t={t}, y={y})")));
            }
            if v > report.max_violation {
                report.max_violation = v;
                report.worst = (t, y);
            }
        }
        report.pass = report.max_violation <= tol;
        Ok(report)
    }

    /// `𝒴 = |b(t,x)|² + λ(t)·|c(t,x)|²`.
    pub fn local_y(&self, intensity: &IntensityModel, t: f64, x: f64) -> Result<f64> {
        check_time(t, 0.0, self.horizon)?;
        Ok(self.local_y_unchecked(intensity, t, x))
    }

    #[inline]
    pub(crate) fn local_y_unchecked(&self, intensity: &IntensityModel, t: f64, x: f64) -> f64 {
        let b = self.b(t, x);
        let c = self.c(t, x);
        b * b + intensity.rate(t) * c * c
    }
}

/// Outcome of a sampled pointwise check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckReport {
    pub max_violation: f64,
    /// Grid point attaining `max_violation`.
    pub worst: (f64, f64),
    pub pass: bool,
}

/// Coefficient of the form `p(t) + q(t)·y` with polynomials `p`, `q` in `t`.
///
/// Polynomials are stored lowest degree first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineCoef {
    pub constant: Vec<f64>,
    pub slope: Vec<f64>,
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

impl AffineCoef {
    pub fn new(constant: Vec<f64>, slope: Vec<f64>) -> Self {
        AffineCoef { constant, slope }
    }

    pub fn eval(&self, t: f64, y: f64) -> f64 {
        horner(&self.constant, t) + horner(&self.slope, t) * y
    }

    pub fn dy(&self, t: f64) -> f64 {
        horner(&self.slope, t)
    }

    pub fn is_zero(&self) -> bool {
        self.constant.iter().chain(&self.slope).all(|&c| c == 0.0)
    }

    pub fn is_state_free(&self) -> bool {
        self.slope.iter().all(|&c| c == 0.0)
    }
}

impl SdeModel {
    /// The polynomial-coefficient family: `a`, `b`, `c` affine in `y` with
    /// polynomial-in-`t` coefficients. Zero coefficients are declared trivial.
    pub fn affine(
        name: impl Into<String>,
        x0: f64,
        horizon: f64,
        a: AffineCoef,
        b: AffineCoef,
        c: AffineCoef,
    ) -> Result<Self> {
        let mut m = SdeModel::new(name, x0, horizon)?;
        let a2 = a.clone();
        m = m.with_drift(move |t, y| a2.eval(t, y));
        if !b.is_zero() {
            let (b1, b2) = (b.clone(), b.clone());
            m = m.with_diffusion(move |t, y| b1.eval(t, y), move |t, _| b2.dy(t));
        }
        if !c.is_zero() {
            let (c1, c2) = (c.clone(), c.clone());
            m = m.with_jump(move |t, y| c1.eval(t, y), move |t, _| c2.dy(t));
        }
        Ok(m)
    }

    /// `b ≡ 0`, `c = c(t)`: additive Poisson noise.
    pub fn pure_jump_additive(x0: f64, horizon: f64, a: AffineCoef, c_of_t: Vec<f64>) -> Result<Self> {
        SdeModel::affine(
            "pure-jump-additive",
            x0,
            horizon,
            a,
            AffineCoef::default(),
            AffineCoef::new(c_of_t, vec![]),
        )
    }

    /// `c ≡ 0`.
    pub fn pure_diffusion(x0: f64, horizon: f64, a: AffineCoef, b: AffineCoef) -> Result<Self> {
        SdeModel::affine("pure-diffusion", x0, horizon, a, b, AffineCoef::default())
    }
}

/// How the compensator `m(t) = ∫₀ᵗ λ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorMode {
    Analytic,
    /// Adaptive Simpson with absolute tolerance [`COMPENSATOR_TOL`].
    Quadrature,
}

/// Deterministic jump intensity `λ(t) > 0` with its compensator and a thinning bound.
#[derive(Clone)]
pub struct IntensityModel {
    rate: TimeFn,
    compensator: Option<TimeFn>,
    inverse: Option<TimeFn>,
    rate_max: f64,
    constant: Option<f64>,
}

impl fmt::Debug for IntensityModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntensityModel")
            .field("rate_max", &self.rate_max)
            .field("mode", &self.mode())
            .field("constant", &self.constant)
            .finish_non_exhaustive()
    }
}

impl IntensityModel {
    pub fn constant(lam: f64) -> Result<Self> {
        if !(lam > 0.0 && lam.is_finite()) {
            return Err(Error::contract(format!("intensity must be positive, got {lam}")));
        }
        Ok(IntensityModel {
            rate: Arc::new(move |_| lam),
            compensator: Some(Arc::new(move |t| lam * t)),
            inverse: Some(Arc::new(move |u| u / lam)),
            rate_max: lam,
            constant: Some(lam),
        })
    }

    /// `λ(t) = l0 + l1·t`, positive on `[0, horizon]`.
    pub fn linear(l0: f64, l1: f64, horizon: f64) -> Result<Self> {
        if l1 == 0.0 {
            return IntensityModel::constant(l0);
        }
        let end = l0 + l1 * horizon;
        if !(l0 > 0.0 && end > 0.0) {
            return Err(Error::contract("linear intensity must stay positive on [0, T]"));
        }
        Ok(IntensityModel {
            rate: Arc::new(move |t| l0 + l1 * t),
            compensator: Some(Arc::new(move |t| l0 * t + 0.5 * l1 * t * t)),
            inverse: Some(Arc::new(move |u| {
                // positive root of l1/2 t² + l0 t − u = 0, written without cancellation
                2.0 * u / (l0 + (l0 * l0 + 2.0 * l1 * u).sqrt())
            })),
            rate_max: l0.max(end),
            constant: None,
        })
    }

    /// Arbitrary rate; the compensator is computed by adaptive quadrature.
    pub fn from_rate(rate: impl Fn(f64) -> f64 + Send + Sync + 'static, rate_max: f64) -> Self {
        IntensityModel {
            rate: Arc::new(rate),
            compensator: None,
            inverse: None,
            rate_max,
            constant: None,
        }
    }

    pub fn with_compensator(mut self, m: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.compensator = Some(Arc::new(m));
        self
    }

    /// Supplies `m⁻¹`, enabling inversion sampling of jump times.
    pub fn with_inverse(mut self, m_inv: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.inverse = Some(Arc::new(m_inv));
        self
    }

    /// `k·λ(t)`, used for importance sampling of the jump times.
    pub fn scaled(&self, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::arg(format!("intensity factor must be positive, got {k}")));
        }
        let rate = Arc::clone(&self.rate);
        let compensator = self.compensator.clone();
        let inverse = self.inverse.clone();
        Ok(IntensityModel {
            rate: Arc::new(move |t| k * rate(t)),
            compensator: compensator.map(|m| Arc::new(move |t| k * m(t)) as TimeFn),
            inverse: inverse.map(|m| Arc::new(move |u| m(u / k)) as TimeFn),
            rate_max: k * self.rate_max,
            constant: self.constant.map(|l| k * l),
        })
    }

    #[inline]
    pub fn rate(&self, t: f64) -> f64 {
        (self.rate)(t)
    }

    pub fn rate_max(&self) -> f64 {
        self.rate_max
    }

    /// `Some(λ)` when the intensity was built as a constant.
    pub fn constant_rate(&self) -> Option<f64> {
        self.constant
    }

    pub fn mode(&self) -> CompensatorMode {
        if self.compensator.is_some() {
            CompensatorMode::Analytic
        } else {
            CompensatorMode::Quadrature
        }
    }

    pub(crate) fn inverse(&self) -> Option<&TimeFn> {
        self.inverse.as_ref()
    }

    /// `m(t) = ∫₀ᵗ λ(s) ds`.
    pub fn compensator(&self, t: f64) -> f64 {
        match &self.compensator {
            Some(m) => m(t),
            None => adaptive_simpson(&*self.rate, 0.0, t, COMPENSATOR_TOL),
        }
    }

    /// `Λ(t, s) = m(t) − m(s)`.
    pub fn big_lambda(&self, t: f64, s: f64) -> f64 {
        if let Some(lam) = self.constant {
            return lam * (t - s);
        }
        match &self.compensator {
            Some(m) => m(t) - m(s),
            None => adaptive_simpson(&*self.rate, s, t, COMPENSATOR_TOL),
        }
    }

    /// Spot-checks positivity, the thinning bound and the compensator on `samples + 1`
    /// equidistant points of `[0, horizon]`.
    pub fn validate(&self, horizon: f64, samples: usize) -> Result<()> {
        let samples = samples.max(1);
        let m0 = self.compensator(0.0);
        if m0.abs() > 1e-14 {
            return Err(Error::contract(format!("m(0) = {m0}, expected 0")));
        }
        let mut prev = m0;
        for k in 0..=samples {
            let t = horizon * k as f64 / samples as f64;
            let lam = self.rate(t);
            if !(lam > 0.0) {
                return Err(Error::contract(format!("intensity λ({t}) = {lam} is not positive")));
            }
            if lam > self.rate_max {
                return Err(Error::contract(format!(
                    "intensity λ({t}) = {lam} exceeds bound {}",
                    self.rate_max
                )));
            }
            let m = self.compensator(t);
            if m < prev {
                return Err(Error::contract(format!("compensator decreases at t = {t}")));
            }
            if self.compensator.is_some() {
                let q = adaptive_simpson(&*self.rate, 0.0, t, COMPENSATOR_TOL);
                if (q - m).abs() > 1e-8 * (1.0 + m.abs()) {
                    return Err(Error::contract(format!(
                        "compensator m({t}) = {m} disagrees with ∫λ = {q}"
                    )));
                }
            }
            prev = m;
        }
        Ok(())
    }
}

/// Merton's linear jump-diffusion `dX = rX dt + σX dW + X(t−) dN` with constant intensity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonParams {
    pub r: f64,
    pub sigma: f64,
    pub lam: f64,
    pub x0: f64,
    pub horizon: f64,
}

impl MertonParams {
    pub fn new(r: f64, sigma: f64, lam: f64, x0: f64, horizon: f64) -> Result<Self> {
        if !(sigma > 0.0 && lam > 0.0 && x0 > 0.0 && horizon > 0.0) {
            return Err(Error::arg("Merton parameters need σ > 0, λ > 0, x0 > 0, T > 0"));
        }
        Ok(MertonParams { r, sigma, lam, x0, horizon })
    }

    /// Chooses `r` so that `γ = r + σ²/2 + 3λ/2` takes the requested value.
    pub fn with_gamma(gamma: f64, sigma: f64, lam: f64, x0: f64, horizon: f64) -> Result<Self> {
        MertonParams::new(gamma - 0.5 * sigma * sigma - 1.5 * lam, sigma, lam, x0, horizon)
    }

    /// `γ = r + σ²/2 + 3λ/2`, the growth rate of `√E𝒴(t)`.
    pub fn gamma(&self) -> f64 {
        self.r + 0.5 * self.sigma * self.sigma + 1.5 * self.lam
    }

    pub fn model(&self) -> SdeModel {
        let (r, s) = (self.r, self.sigma);
        SdeModel::new("merton", self.x0, self.horizon)
            .expect("validated parameters")
            .with_drift(move |_, y| r * y)
            .with_diffusion(move |_, y| s * y, move |_, _| s)
            .with_jump(|_, y| y, |_, _| 1.0)
    }

    pub fn intensity(&self) -> IntensityModel {
        IntensityModel::constant(self.lam).expect("validated parameters")
    }

    /// The closed-form solution `x0·exp((r − σ²/2)t + σW(t))·2^{N(t)}`.
    pub fn exact(&self, w_t: f64, n_t: u64, t: f64) -> Result<f64> {
        check_time(t, 0.0, self.horizon)?;
        Ok(self.exact_unchecked(w_t, n_t, t))
    }

    #[inline]
    pub(crate) fn exact_unchecked(&self, w_t: f64, n_t: u64, t: f64) -> f64 {
        let drift = (self.r - 0.5 * self.sigma * self.sigma) * t;
        self.x0 * (drift + self.sigma * w_t).exp() * 2f64.powi(n_t as i32)
    }
}
