//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any criterion fails. Run with `cargo test -p jumpmil-cli --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use jumpmil::errorlab::{
    asymptotic_constant, convergence_study, tabulate_expected_y, ConstantKind, ErrorLab, MeshKind, Reference, Tilt,
};
use jumpmil::meshdesign::{equidistant_mesh, merton_expected_y, merton_optimal_mesh, mesh_from_density, Density};
use jumpmil::model::AffineCoef;
use jumpmil::pathkit::{cross_sum, i_nn, poisson_jump_times, PoissonBridge};
use jumpmil::stats::{ls_slope, Moments};
use jumpmil::{GridPath, IntensityModel, MertonParams, Mesh, MethodKind, MilsteinScheme, RngStream, SdeModel};
use jumpmil_cli::{cmd_converge, FileConfig, RunConfig};

const SEED: u64 = 20261019;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn merton_lab(p: MertonParams, m: u64, eval_grid: usize, theta: f64) -> ErrorLab {
    let scheme = MilsteinScheme::new(p.model(), p.intensity()).unwrap();
    ErrorLab::new(scheme, Reference::MertonExact(p), m, eval_grid)
        .unwrap()
        .with_seed(SEED)
        .with_tilt(Tilt::merton(&p, theta))
        .unwrap()
}

fn merton_ey_table(p: MertonParams) -> jumpmil::meshdesign::PilotEstimate {
    tabulate_expected_y(p.horizon, 4097, |t| merton_expected_y(&p, t).unwrap()).unwrap()
}

/// Equidistant constant for Merton with γ = 0.
fn criterion_1() -> Outcome {
    let p = MertonParams::with_gamma(0.0, 1.0, 2.0, 1.0, 1.0).unwrap();
    let c_eq_oracle = p.x0 * ((p.sigma * p.sigma + p.lam) / 6.0).sqrt();
    let ey = merton_ey_table(p);
    let lab = merton_lab(p, 10_000, 4096, 1.5);
    let report = convergence_study(&lab, MethodKind::Linear, &MeshKind::Equidistant, &[64, 128, 256, 512], &ey).unwrap();
    let scaled: Vec<f64> = report.rows.iter().map(|r| r.sqrt_n_e).collect();
    let at_512 = scaled[3];
    let rel = (at_512 / c_eq_oracle - 1.0).abs();
    let top = &scaled[2..];
    let mean = top.iter().sum::<f64>() / top.len() as f64;
    let spread = (top[0] - top[1]).abs() / mean;
    let c_eq_quad = report.c_psi;
    let pass = rel <= 0.15 && spread < 0.10 && (c_eq_quad - c_eq_oracle).abs() < 1e-9;
    outcome(
        pass,
        format!(
            "sqrt(n)*e_n = {:?}; at n=512 {:.4} vs C_eq {:.4} ({:.1}% off, limit 15%); spread over 256..512 {:.1}% (limit 10%)",
            scaled.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            at_512,
            c_eq_oracle,
            100.0 * rel,
            100.0 * spread
        ),
    )
}

/// Error ratio of the Merton-optimal mesh to the equidistant mesh for γT = 3.
fn criterion_2() -> Outcome {
    let p = MertonParams::with_gamma(3.0, 1.0, 2.0, 1.0, 1.0).unwrap();
    let ey = merton_ey_table(p);
    let c_noneq = asymptotic_constant(&ey, ConstantKind::NoneqOptimal).unwrap();
    let c_eq = asymptotic_constant(&ey, ConstantKind::Equidistant).unwrap();
    // closed-form integrals of e^{γt} and e^{2γt}
    let g = p.gamma();
    let base = p.x0 * ((p.sigma * p.sigma + p.lam) / 6.0).sqrt();
    let oracle = (base * g.exp_m1() / g) / (base * ((2.0 * g).exp_m1() / (2.0 * g)).sqrt());
    let target = c_noneq / c_eq;
    let lab = merton_lab(p, 10_000, 4096, 2.0);
    let opt = merton_optimal_mesh(&p, 512).unwrap();
    let eq = equidistant_mesh(1.0, 512).unwrap();
    let est = lab.l2_errors(&[(MethodKind::Linear, &opt), (MethodKind::Linear, &eq)]).unwrap();
    let ratio = est[0].e_hat / est[1].e_hat;
    let rel = (ratio / target - 1.0).abs();
    let pass = rel <= 0.15 && (target - oracle).abs() < 1e-6;
    outcome(
        pass,
        format!(
            "e(opt)={:.5}±{:.5}, e(eq)={:.5}±{:.5}, ratio {:.4} vs C_noneq/C_eq {:.4} (closed form {:.4}); {:.1}% off, limit 15%",
            est[0].e_hat, est[0].stderr, est[1].e_hat, est[1].stderr, ratio, target, oracle, 100.0 * rel
        ),
    )
}

/// Conditional and linear methods coincide for constant λ and state-free b, c.
fn criterion_3() -> Outcome {
    let model = SdeModel::affine(
        "state-free-noise",
        0.7,
        1.0,
        AffineCoef::new(vec![0.2, -0.1], vec![-0.4, 0.3]),
        AffineCoef::new(vec![0.3, 0.2], vec![]),
        AffineCoef::new(vec![0.5, -0.1, 0.05], vec![]),
    )
    .unwrap();
    let scheme = MilsteinScheme::new(model, IntensityModel::constant(1.5).unwrap()).unwrap();
    let eval = equidistant_mesh(1.0, 4096).unwrap();
    let meshes = [
        equidistant_mesh(1.0, 16).unwrap(),
        Mesh::new(vec![0.0, 0.05, 0.1, 0.3, 0.31, 0.6, 0.9, 1.0]).unwrap(),
    ];
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let mut rng = RngStream::new(SEED, k).rng();
        let grid = jumpmil::pathkit::union_grid([eval.knots(), meshes[0].knots(), meshes[1].knots()]);
        let path = GridPath::simulate(scheme.intensity(), &grid, &mut rng).unwrap();
        for mesh in &meshes {
            let cond = scheme.build(MethodKind::Conditional, mesh, &path).unwrap();
            let lin = scheme.build(MethodKind::Linear, mesh, &path).unwrap();
            let a = cond.eval_sorted(eval.knots()).unwrap();
            let b = lin.eval_sorted(eval.knots()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("max |conditional - linear| = {worst:.3e} over 4097 points, 100 paths (limit 1e-12)"))
}

/// Milstein knot error decays like n⁻¹.
fn criterion_4() -> Outcome {
    let p = MertonParams::new(0.0, 0.8, 0.3, 1.0, 1.0).unwrap();
    let lab = merton_lab(p, 4000, 8, 0.0);
    let ns = [16usize, 32, 64, 128, 256, 512];
    let meshes: Vec<Mesh> = ns.iter().map(|&n| equidistant_mesh(1.0, n).unwrap()).collect();
    let refs: Vec<&Mesh> = meshes.iter().collect();
    let est = lab.knot_errors(&refs).unwrap();
    let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = est.iter().map(|e| e.e_hat.ln()).collect();
    let slope = ls_slope(&xs, &ys);
    outcome(
        (slope + 1.0).abs() <= 0.15,
        format!(
            "knot errors {:?}; log-log slope {:.4} (target -1 ± 0.15)",
            est.iter().map(|e| format!("{:.2e}", e.e_hat)).collect::<Vec<_>>(),
            slope
        ),
    )
}

/// Poisson bridge moments for λ(t) = 1 + t.
fn criterion_5() -> Outcome {
    let intensity = IntensityModel::linear(1.0, 1.0, 1.0).unwrap();
    // Λ(t, s) for λ = 1 + t, written out independently of the library
    let big = |t: f64, s: f64| (t - s) + 0.5 * (t * t - s * s);
    let times = [0.25, 0.5, 0.75];
    let samples = 100_000u64;
    let mut resid = vec![Moments::default(); 3];
    let mut resid_var = vec![Moments::default(); 3];
    let mut lib_agrees = true;
    for k in 0..samples {
        let mut rng = RngStream::new(SEED ^ 5, k).rng();
        let jumps = poisson_jump_times(&intensity, 1.0, &mut rng).unwrap();
        let n1 = jumps.count_at(1.0);
        for (j, &t) in times.iter().enumerate() {
            let nt = jumps.count_at(t) as f64;
            let p = big(t, 0.0) / big(1.0, 0.0);
            let mean = n1 as f64 * p;
            let var = n1 as f64 * p * (1.0 - p);
            let bridge = PoissonBridge::new(0, n1, &intensity, 0.0, 1.0, t).unwrap();
            lib_agrees &= (bridge.mean() - mean).abs() <= 1e-12 * (1.0 + mean)
                && (bridge.conditional_variance() - var).abs() <= 1e-12 * (1.0 + var);
            resid[j].push(nt - mean);
            resid_var[j].push((nt - mean).powi(2) - var);
        }
    }
    let mut pass = lib_agrees;
    let mut parts = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let zm = resid[j].mean / resid[j].stderr();
        let zv = resid_var[j].mean / resid_var[j].stderr();
        pass &= zm.abs() <= 3.0 && zv.abs() <= 3.0;
        parts.push(format!("t={t}: z_mean {zm:+.2}, z_var {zv:+.2}"));
    }
    outcome(pass, format!("{} over {samples} conditioned samples; library formulas agree: {lib_agrees}", parts.join("; ")))
}

/// Iterated-integral identities against brute-force sums over jump pairs.
fn criterion_6() -> Outcome {
    let intensity = IntensityModel::constant(4.0).unwrap();
    // W is rounded to multiples of 2^-20 so every sum below is exact in binary floating point
    let q = |w: f64| (w * 1048576.0).round() / 1048576.0;
    let mut mismatches = 0usize;
    let mut with_pairs = 0usize;
    for k in 0..10_000u64 {
        let mut rng = RngStream::new(SEED ^ 6, k).rng();
        let (t0, t1) = (0.0, 1.0);
        let path = GridPath::simulate(&intensity, &[t0, t1], &mut rng).unwrap();
        let w0 = q(path.w[0]);
        let w1 = q(path.w[1]);
        let wj: Vec<f64> = path.w_jumps.iter().map(|&w| q(w)).collect();
        let dn = path.n[1] - path.n[0];
        let mut pairs = 0u64;
        for a in 0..wj.len() {
            for b in 0..wj.len() {
                pairs += u64::from(path.jumps.times()[b] < path.jumps.times()[a]);
            }
        }
        with_pairs += usize::from(pairs > 0);
        // I(W,N) = Σ_k (W(τ_k) − W(t0)),  I(N,W) = Σ_k (W(t1) − W(τ_k))
        let i_wn: f64 = wj.iter().map(|w| w - w0).sum();
        let i_nw: f64 = wj.iter().map(|w| w1 - w).sum();
        if i_nn(dn) != pairs as f64 || cross_sum(dn, w1 - w0) != i_wn + i_nw {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} mismatches on 10000 paths ({with_pairs} with at least one jump pair)"))
}

/// Local Hölder ratio approaches √E𝒴(t).
fn criterion_7() -> Outcome {
    let p = MertonParams::new(0.1, 0.5, 1.0, 1.0, 1.0).unwrap();
    let t = 0.5;
    let target = (p.sigma * p.sigma + p.lam).sqrt() * p.x0 * (p.gamma() * t).exp();
    let lab = merton_lab(p, 100_000, 8, 1.0);
    let hs: Vec<f64> = (4..=10).map(|k| 2f64.powi(-k)).collect();
    let out = lab.holder_ratio(t, &hs).unwrap();
    let (h, ratio, se) = *out.last().unwrap();
    let pass = (ratio - target).abs() <= 3.0 * se + 0.1 * target;
    outcome(
        pass,
        format!(
            "ratios {:?}; at h=2^-10 ({h:.2e}) {ratio:.4} ± {se:.4} vs sqrt(E Y(t)) {target:.4}",
            out.iter().map(|(_, r, _)| (r * 1e4).round() / 1e4).collect::<Vec<_>>()
        ),
    )
}

/// Quantile knots of ψ(t) = 2t/T².
fn criterion_8() -> Outcome {
    let horizon = 1.5;
    let density = Density::from_fn(move |t| 2.0 * t / (horizon * horizon), horizon).unwrap();
    let n = 1000;
    let mesh = mesh_from_density(&density, n).unwrap();
    let worst = mesh
        .knots()
        .iter()
        .enumerate()
        .map(|(i, &t)| (t - horizon * (i as f64 / n as f64).sqrt()).abs())
        .fold(0.0f64, f64::max);
    outcome(worst <= 1e-10, format!("max |t_i - T sqrt(i/n)| = {worst:.3e} for n = {n}, T = {horizon} (limit 1e-10)"))
}

/// Two deterministic `converge` runs with the same config write identical CSV bytes.
fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut file = FileConfig::default();
    for s in ["mesh.n=[8, 16, 32]", "mc.replications=2000", "mc.eval_grid=128", "run.mode=det", "run.seed=99"] {
        file.set(s).unwrap();
    }
    file.run.out = dir.path().to_string_lossy().into_owned();
    let cfg = RunConfig::resolve(file).unwrap();
    let mut sink = Vec::new();
    let first_path = cmd_converge(&cfg, None, &mut sink).unwrap();
    let first = std::fs::read(&first_path).unwrap();
    let second_path = cmd_converge(&cfg, None, &mut sink).unwrap();
    let second = std::fs::read(&second_path).unwrap();
    outcome(first == second && !first.is_empty(), format!("{} bytes, identical: {}", first.len(), first == second))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("merton equidistant constant", criterion_1),
        ("optimal-mesh gain", criterion_2),
        ("conditional = linear for state-free noise", criterion_3),
        ("milstein knot-error order", criterion_4),
        ("poisson bridge moments", criterion_5),
        ("iterated-integral identities", criterion_6),
        ("hoelder ratio", criterion_7),
        ("quantile mesh", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        failed += usize::from(!o.pass);
        println!("criterion {} [{verdict}] {name}: {} ({:.1}s)", i + 1, o.detail, start.elapsed().as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
