//! Driving noise: nonhomogeneous Poisson jump times, Wiener samples on grids,
//! the iterated-integral identities and Brownian/Poisson bridge moments.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};
use crate::model::IntensityModel;

pub type StreamRng = ChaCha8Rng;

/// Identifies one reproducible random stream: replication `stream_id` under `master_seed`.
///
/// Streams are ChaCha8 keyed by the master seed with the stream id selecting one of
/// its 2⁶⁴ independent counter streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, stream_id: u64) -> Self {
        RngStream { master_seed, stream_id }
    }

    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Sorted jump instants of `N` in `(0, T]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct JumpTimes {
    times: Vec<f64>,
}

impl JumpTimes {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::arg("jump times must be strictly increasing"));
        }
        if times.iter().any(|&t| !(t > 0.0 && t <= horizon)) {
            return Err(Error::arg("jump times must lie in (0, T]"));
        }
        Ok(JumpTimes { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `N(t)`: jumps at or before `t`.
    pub fn count_at(&self, t: f64) -> u64 {
        self.times.partition_point(|&s| s <= t) as u64
    }

    /// `N(t−)`: jumps strictly before `t`.
    pub fn count_before(&self, t: f64) -> u64 {
        self.times.partition_point(|&s| s < t) as u64
    }
}

/// Nonhomogeneous Poisson jump times on `(0, horizon]` by thinning a homogeneous
/// process of rate `λ_max`.
pub fn poisson_jump_times<R: Rng + ?Sized>(
    intensity: &IntensityModel,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpTimes> {
    let bound = intensity.rate_max();
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::contract(format!("thinning bound must be positive, got {bound}")));
    }
    let gaps = Exp::new(bound).map_err(|e| Error::arg(e.to_string()))?;
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t > horizon {
            break;
        }
        let lam = intensity.rate(t);
        if lam > bound {
            return Err(Error::contract(format!(
                "intensity λ({t}) = {lam} exceeds thinning bound {bound}"
            )));
        }
        if !(lam > 0.0) {
            return Err(Error::contract(format!("intensity λ({t}) = {lam} is not positive")));
        }
        let u: f64 = rng.random();
        if u * bound < lam {
            times.push(t);
        }
    }
    Ok(JumpTimes { times })
}

/// Jump times by inverting the compensator of a unit-rate process; needs `m⁻¹`.
pub fn poisson_jump_times_inversion<R: Rng + ?Sized>(
    intensity: &IntensityModel,
    horizon: f64,
    rng: &mut R,
) -> Result<JumpTimes> {
    let inverse = intensity
        .inverse()
        .ok_or_else(|| Error::arg("inversion sampling needs an analytic inverse compensator"))?;
    let total = intensity.compensator(horizon);
    let unit = Exp::new(1.0).expect("unit rate");
    let mut times = Vec::new();
    let mut s = 0.0;
    loop {
        s += unit.sample(rng);
        if s > total {
            break;
        }
        let t = inverse(s).clamp(f64::MIN_POSITIVE, horizon);
        if times.last().is_some_and(|&p| t <= p) {
            continue;
        }
        times.push(t);
    }
    Ok(JumpTimes { times })
}

/// Wiener values on a nondecreasing grid starting at 0.
pub fn wiener_on_grid<R: Rng + ?Sized>(grid: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if grid.is_empty() || grid[0] != 0.0 {
        return Err(Error::arg("Wiener grid must start at 0"));
    }
    if grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::arg("Wiener grid must be sorted"));
    }
    let mut w = Vec::with_capacity(grid.len());
    w.push(0.0);
    for pair in grid.windows(2) {
        let z: f64 = StandardNormal.sample(rng);
        let prev = *w.last().unwrap();
        w.push(prev + (pair[1] - pair[0]).sqrt() * z);
    }
    Ok(w)
}

/// `I(W,W)` over an interval: `½(ΔW² − Δt)`.
#[inline]
pub fn i_ww(delta_w: f64, delta_t: f64) -> f64 {
    debug_assert!(delta_t >= 0.0);
    0.5 * (delta_w * delta_w - delta_t)
}

/// `I(N,N)` over an interval: `½(ΔN² − ΔN)`, the number of ordered jump pairs.
#[inline]
pub fn i_nn(delta_n: u64) -> f64 {
    let d = delta_n as f64;
    0.5 * (d * d - d)
}

/// Checked variant of [`i_nn`] for signed input.
pub fn i_nn_checked(delta_n: i64) -> Result<f64> {
    if delta_n < 0 {
        return Err(Error::arg(format!("jump count increment must be nonnegative, got {delta_n}")));
    }
    Ok(i_nn(delta_n as u64))
}

/// `I(N,W) + I(W,N) = ΔN·ΔW`.
#[inline]
pub fn cross_sum(delta_n: u64, delta_w: f64) -> f64 {
    delta_n as f64 * delta_w
}

fn check_bracket(t_i: f64, t_ip1: f64, t: f64) -> Result<()> {
    if !(t_i < t_ip1) {
        return Err(Error::arg(format!("degenerate interval [{t_i}, {t_ip1}]")));
    }
    crate::error::check_time(t, t_i, t_ip1)
}

/// `E(W(t) | W(t_i), W(t_{i+1}))`.
pub fn brownian_bridge_mean(w_i: f64, w_ip1: f64, t_i: f64, t_ip1: f64, t: f64) -> Result<f64> {
    check_bracket(t_i, t_ip1, t)?;
    Ok(w_i + (w_ip1 - w_i) * (t - t_i) / (t_ip1 - t_i))
}

/// Conditional law of `N(t)` given `N(t_i)`, `N(t_{i+1})`: `N(t_i)` plus a binomial
/// with `ΔN` trials and success probability `Λ(t,t_i)/Λ(t_{i+1},t_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonBridge {
    pub n_i: u64,
    pub trials: u64,
    pub p: f64,
    /// `Λ(t_{i+1}, t_i)`
    pub total: f64,
}

impl PoissonBridge {
    pub fn new(
        n_i: u64,
        n_ip1: u64,
        intensity: &IntensityModel,
        t_i: f64,
        t_ip1: f64,
        t: f64,
    ) -> Result<Self> {
        check_bracket(t_i, t_ip1, t)?;
        if n_ip1 < n_i {
            return Err(Error::arg("counts must be nondecreasing"));
        }
        let total = intensity.big_lambda(t_ip1, t_i);
        if !(total > 0.0) {
            return Err(Error::contract(format!(
                "Λ({t_ip1}, {t_i}) = {total} must be positive"
            )));
        }
        let p = if t == t_ip1 {
            1.0
        } else {
            (intensity.big_lambda(t, t_i) / total).clamp(0.0, 1.0)
        };
        Ok(PoissonBridge { n_i, trials: n_ip1 - n_i, p, total })
    }

    /// `[N(t_{i+1})·Λ(t,t_i) + N(t_i)·Λ(t_{i+1},t)] / Λ(t_{i+1},t_i)`.
    pub fn mean(&self) -> f64 {
        self.n_i as f64 + self.trials as f64 * self.p
    }

    /// `ΔN·Λ(t_{i+1},t)·Λ(t,t_i)/Λ(t_{i+1},t_i)²`.
    pub fn conditional_variance(&self) -> f64 {
        self.trials as f64 * self.p * (1.0 - self.p)
    }

    /// Unconditional mean-square bridge error `Λ(t_{i+1},t)·Λ(t,t_i)/Λ(t_{i+1},t_i)`.
    pub fn marginal_variance(&self) -> f64 {
        self.total * self.p * (1.0 - self.p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.trials == 0 || self.p == 0.0 {
            return self.n_i;
        }
        if self.p == 1.0 {
            return self.n_i + self.trials;
        }
        let b = Binomial::new(self.trials, self.p).expect("p in (0, 1)");
        self.n_i + b.sample(rng)
    }
}

pub fn poisson_bridge_mean(
    n_i: u64,
    n_ip1: u64,
    intensity: &IntensityModel,
    t_i: f64,
    t_ip1: f64,
    t: f64,
) -> Result<f64> {
    Ok(PoissonBridge::new(n_i, n_ip1, intensity, t_i, t_ip1, t)?.mean())
}

pub fn poisson_bridge_var(
    n_i: u64,
    n_ip1: u64,
    intensity: &IntensityModel,
    t_i: f64,
    t_ip1: f64,
    t: f64,
) -> Result<f64> {
    Ok(PoissonBridge::new(n_i, n_ip1, intensity, t_i, t_ip1, t)?.conditional_variance())
}

pub fn poisson_bridge_marginal_var(
    intensity: &IntensityModel,
    t_i: f64,
    t_ip1: f64,
    t: f64,
) -> Result<f64> {
    Ok(PoissonBridge::new(0, 0, intensity, t_i, t_ip1, t)?.marginal_variance())
}

pub fn poisson_bridge_sample<R: Rng + ?Sized>(
    n_i: u64,
    n_ip1: u64,
    intensity: &IntensityModel,
    t_i: f64,
    t_ip1: f64,
    t: f64,
    rng: &mut R,
) -> Result<u64> {
    Ok(PoissonBridge::new(n_i, n_ip1, intensity, t_i, t_ip1, t)?.sample(rng))
}

/// Coupled samples of `W` and `N` on a grid, plus the exact jump times and the
/// Wiener values at those jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub grid: Vec<f64>,
    pub w: Vec<f64>,
    /// `N(grid[i])`; a jump landing exactly on a grid point is counted there.
    pub n: Vec<u64>,
    pub jumps: JumpTimes,
    /// `W(τ_k)` for every jump time.
    pub w_jumps: Vec<f64>,
}

impl GridPath {
    /// Draws the jump times first, then `W` on the merged set of grid points and jump times.
    pub fn simulate<R: Rng + ?Sized>(
        intensity: &IntensityModel,
        grid: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        validate_grid(grid)?;
        let horizon = *grid.last().unwrap();
        let jumps = poisson_jump_times(intensity, horizon, rng)?;
        Self::with_jumps(grid, jumps, rng)
    }

    /// Samples `W` for a given set of jump times.
    pub fn with_jumps<R: Rng + ?Sized>(grid: &[f64], jumps: JumpTimes, rng: &mut R) -> Result<Self> {
        validate_grid(grid)?;
        let jt = jumps.times();
        // merged event times; grid points sort before coincident jumps
        let mut merged = Vec::with_capacity(grid.len() + jt.len());
        let (mut i, mut k) = (0, 0);
        while i < grid.len() || k < jt.len() {
            if k >= jt.len() || (i < grid.len() && grid[i] <= jt[k]) {
                merged.push(grid[i]);
                i += 1;
            } else {
                merged.push(jt[k]);
                k += 1;
            }
        }
        let wm = wiener_on_grid(&merged, rng)?;
        let mut w = Vec::with_capacity(grid.len());
        let mut w_jumps = Vec::with_capacity(jt.len());
        let (mut i, mut k) = (0, 0);
        for &wv in &wm {
            if k >= jt.len() || (i < grid.len() && grid[i] <= jt[k]) {
                w.push(wv);
                i += 1;
            } else {
                w_jumps.push(wv);
                k += 1;
            }
        }
        let n = grid.iter().map(|&t| jumps.count_at(t)).collect();
        Ok(GridPath { grid: grid.to_vec(), w, n, jumps, w_jumps })
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    /// Index of `t` in the grid, by exact match.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.grid.partition_point(|&s| s < t);
        (i < self.grid.len() && self.grid[i] == t).then_some(i)
    }

    /// `(W, N)` at the given times, each of which must be a grid point.
    pub fn samples_at(&self, times: &[f64]) -> Result<(Vec<f64>, Vec<u64>)> {
        let mut w = Vec::with_capacity(times.len());
        let mut n = Vec::with_capacity(times.len());
        for &t in times {
            let i = self
                .index_of(t)
                .ok_or_else(|| Error::arg(format!("time {t} is not a point of the path grid")))?;
            w.push(self.w[i]);
            n.push(self.n[i]);
        }
        Ok((w, n))
    }

    /// Writes `t,W,N` rows for every grid point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,W,N")?;
        for ((t, w), n) in self.grid.iter().zip(&self.w).zip(&self.n) {
            writeln!(out, "{t},{w},{n}")?;
        }
        Ok(())
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.len() < 2 || grid[0] != 0.0 {
        return Err(Error::arg("path grid needs at least two points starting at 0"));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::arg("path grid must be strictly increasing"));
    }
    Ok(())
}

/// Sorted union of several sorted time lists, exact duplicates removed.
pub fn union_grid<'a>(parts: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let mut all: Vec<f64> = parts.into_iter().flat_map(|p| p.iter().copied()).collect();
    all.sort_by(|a, b| a.total_cmp(b));
    all.dedup();
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::Moments;

    #[test]
    fn stream_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| RngStream::new(7, 3).rng().random()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let x: u64 = RngStream::new(7, 3).rng().random();
        let y: u64 = RngStream::new(7, 4).rng().random();
        let z: u64 = RngStream::new(8, 3).rng().random();
        assert_ne!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn single_point_grid() {
        let mut rng = RngStream::new(1, 0).rng();
        assert_eq!(wiener_on_grid(&[0.0], &mut rng).unwrap(), vec![0.0]);
        assert!(wiener_on_grid(&[0.0, 0.5, 0.2], &mut rng).is_err());
        assert!(wiener_on_grid(&[0.1, 0.5], &mut rng).is_err());
    }

    #[test]
    fn iterated_integral_values() {
        assert_eq!(i_ww(1.0, 0.5), 0.25);
        assert_eq!(i_ww(0.0, 0.3), -0.15);
        assert_eq!(i_nn(0), 0.0);
        assert_eq!(i_nn(1), 0.0);
        assert_eq!(i_nn(3), 3.0);
        assert_eq!(i_nn(4), 6.0);
        assert!(i_nn_checked(-1).is_err());
        assert_eq!(cross_sum(0, 0.7), 0.0);
        assert!((cross_sum(2, -0.3) + 0.6).abs() < 1e-15);
    }

    #[test]
    fn bridge_examples() {
        assert_eq!(brownian_bridge_mean(0.3, 1.1, 0.0, 1.0, 0.0).unwrap(), 0.3);
        assert_eq!(brownian_bridge_mean(0.3, 1.1, 0.0, 1.0, 1.0).unwrap(), 1.1);
        assert_eq!(brownian_bridge_mean(0.0, 2.0, 0.0, 1.0, 0.5).unwrap(), 1.0);
        assert!(brownian_bridge_mean(0.0, 2.0, 0.0, 1.0, 1.5).is_err());

        let two = IntensityModel::constant(2.0).unwrap();
        assert!((poisson_bridge_mean(0, 4, &two, 0.0, 1.0, 0.25).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(poisson_bridge_mean(3, 9, &two, 0.2, 0.7, 0.2).unwrap(), 3.0);

        let one = IntensityModel::constant(1.0).unwrap();
        assert!((poisson_bridge_marginal_var(&one, 0.0, 1.0, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(poisson_bridge_marginal_var(&one, 0.0, 1.0, 0.0).unwrap(), 0.0);
        assert_eq!(poisson_bridge_marginal_var(&one, 0.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(poisson_bridge_var(2, 5, &one, 0.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(poisson_bridge_mean(5, 2, &one, 0.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn bridge_sample_degenerate_cases() {
        let lin = IntensityModel::linear(1.0, 1.0, 1.0).unwrap();
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..100 {
            assert_eq!(poisson_bridge_sample(4, 4, &lin, 0.1, 0.9, 0.5, &mut rng).unwrap(), 4);
            assert_eq!(poisson_bridge_sample(4, 7, &lin, 0.1, 0.9, 0.9, &mut rng).unwrap(), 7);
        }
    }

    #[test]
    fn thinning_detects_bad_bound() {
        let bad = IntensityModel::from_rate(|t| 1.0 + 10.0 * t, 2.0);
        let mut rng = RngStream::new(2, 0).rng();
        let mut saw_error = false;
        for _ in 0..50 {
            if let Err(Error::Contract(_)) = poisson_jump_times(&bad, 1.0, &mut rng) {
                saw_error = true;
                break;
            }
        }
        assert!(saw_error);
    }

    #[test]
    fn constant_rate_count_law() {
        // E N(1) = Var N(1) = 2 for λ ≡ 2
        let two = IntensityModel::constant(2.0).unwrap();
        let counts: Moments = (0..100_000u64)
            .map(|k| {
                let mut rng = RngStream::new(11, k).rng();
                poisson_jump_times(&two, 1.0, &mut rng).unwrap().len() as f64
            })
            .collect();
        assert!((counts.mean - 2.0).abs() < 3.0 * counts.stderr(), "mean {}", counts.mean);
        // variance of the sample variance of Poisson(μ) ≈ (μ + 2μ²)/M
        let se_var = ((2.0 + 2.0 * 4.0) / 100_000f64).sqrt();
        assert!((counts.variance() - 2.0).abs() < 3.0 * se_var, "var {}", counts.variance());
    }

    #[test]
    fn linear_rate_count_mean() {
        let lin = IntensityModel::linear(1.0, 1.0, 1.0).unwrap();
        let thinned: Moments = (0..100_000u64)
            .map(|k| poisson_jump_times(&lin, 1.0, &mut RngStream::new(3, k).rng()).unwrap().len() as f64)
            .collect();
        assert!((thinned.mean - 1.5).abs() < 3.0 * thinned.stderr());
        let inverted: Moments = (0..100_000u64)
            .map(|k| {
                poisson_jump_times_inversion(&lin, 1.0, &mut RngStream::new(4, k).rng())
                    .unwrap()
                    .len() as f64
            })
            .collect();
        assert!((inverted.mean - 1.5).abs() < 3.0 * inverted.stderr());
    }

    #[test]
    fn wiener_variance_and_independence() {
        let grid = [0.0, 0.5, 1.0];
        let mut end = Moments::default();
        let (mut s12, mut s11, mut s22) = (0.0, 0.0, 0.0);
        let m = 100_000u64;
        for k in 0..m {
            let w = wiener_on_grid(&grid, &mut RngStream::new(9, k).rng()).unwrap();
            end.push(w[2] * w[2]);
            let (d1, d2) = (w[1] - w[0], w[2] - w[1]);
            s12 += d1 * d2;
            s11 += d1 * d1;
            s22 += d2 * d2;
        }
        assert!((end.mean - 1.0).abs() < 3.0 * end.stderr());
        let corr = s12 / (s11 * s22).sqrt();
        assert!(corr.abs() < 3.0 / (m as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn grid_path_counts_and_collisions() {
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        let jumps = JumpTimes::new(vec![0.1, 0.5, 0.6], 1.0).unwrap();
        let p = GridPath::with_jumps(&grid, jumps, &mut RngStream::new(1, 1).rng()).unwrap();
        assert_eq!(p.n, vec![0, 1, 2, 3, 3]);
        assert_eq!(p.jumps.count_before(0.5), 1);
        // jump on a grid point shares the Wiener value
        assert_eq!(p.w_jumps[1], p.w[2]);
        assert_eq!(p.w[0], 0.0);
        let (w, n) = p.samples_at(&[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(n, vec![0, 2, 3]);
        assert_eq!(w[1], p.w[2]);
        assert!(p.samples_at(&[0.3]).is_err());
    }

    #[test]
    fn path_is_reproducible() {
        let lam = IntensityModel::constant(3.0).unwrap();
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let a = GridPath::simulate(&lam, &grid, &mut RngStream::new(42, 17).rng()).unwrap();
        let b = GridPath::simulate(&lam, &grid, &mut RngStream::new(42, 17).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_dump() {
        let grid = [0.0, 0.5, 1.0];
        let p = GridPath::with_jumps(&grid, JumpTimes::default(), &mut RngStream::new(0, 0).rng()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,W,N\n0,0,0\n"));
        assert_eq!(s.lines().count(), 4);
    }
}
