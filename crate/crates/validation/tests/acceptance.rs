//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use diloc::deployment::{
    generate_poisson_field, generate_uniform_field, min_radius_for_probability, triangulate_all, triangulate_within,
    SensorField, TriangulationParams,
};
use diloc::engine::{diloc_step, relaxation_matrix, run_to_convergence, IterationState, Mode, StopRule, TraceOptions};
use diloc::experiment::{self, PRESET_NAMES};
use diloc::fixtures;
use diloc::geometry::{
    barycentric_coordinates, convex_hull_inclusion, generalized_volume, DistanceMatrix, HullInclusion, NodeId,
};
use diloc::random_env::{
    conditional_mean_step, dlre_limit, dlre_step, dlre_update, relative_error, sample_environment, BiasSpec,
    ChannelNoise, Environment, NoiseModel, WeightSchedule,
};
use diloc::system::{
    build_system_matrices, exact_locations_oracle, spectral_radius, AnchorBlock, SpectralOptions, SystemMatrices,
};

struct Setup {
    field: SensorField,
    sys: SystemMatrices,
    u: AnchorBlock,
}

fn setup(field: SensorField) -> Setup {
    let tris = triangulate_all(&field, TriangulationParams::for_field(&field)).expect("triangulation");
    let sys = build_system_matrices(&field, &tris).expect("system");
    let u = AnchorBlock::from_field(&field);
    Setup { field, sys, u }
}

fn small_triangle() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 9.0]]
}

fn fifty_node_field(seed: u64) -> SensorField {
    generate_uniform_field(small_triangle(), 47, seed).expect("field")
}

fn max_abs(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn deployment_bound() -> Outcome {
    let r = min_radius_for_probability(1.0, 0.99).unwrap();
    outcome((r - 5.52).abs() <= 0.01, format!("R = {r:.4} (target 5.52 +/- 0.01)"))
}

fn monte_carlo_triangulation() -> Outcome {
    let side = 160.0;
    let r = 2.76;
    let anchors = vec![vec![0.0, 0.0], vec![side, 0.0], vec![0.0, side]];
    let field = generate_poisson_field(2, 1.0, anchors, 2024).unwrap();
    // sensors whose whole search disk lies inside the region, so edge effects
    // of the finite deployment do not enter
    let interior: Vec<NodeId> = field
        .sensor_ids()
        .filter(|&id| {
            let p = field.true_position(id).unwrap();
            p[0] >= r && p[1] >= r && (side - p[0] - p[1]) / 2f64.sqrt() >= r
        })
        .take(10_000)
        .collect();
    if interior.len() < 10_000 {
        return outcome(false, format!("only {} interior sensors deployed", interior.len()));
    }
    let hits = interior.par_iter().filter(|&&id| triangulate_within(&field, id, r).unwrap().is_some()).count();
    let rate = hits as f64 / interior.len() as f64;
    let sigma = (0.99f64 * 0.01 / interior.len() as f64).sqrt();
    let threshold = 0.99 - 3.0 * sigma;
    outcome(rate >= threshold, format!("success rate {rate:.4} over 10000 sensors (threshold {threshold:.4})"))
}

/// Coordinate-based volume: |det(v1 - v0, ..., vm - v0)| / m!.
fn coordinate_volume(pts: &[Vec<f64>]) -> f64 {
    let m = pts.len() - 1;
    let e = DMatrix::from_fn(m, m, |i, j| pts[i + 1][j] - pts[0][j]);
    let fact: f64 = (1..=m).map(|k| k as f64).product();
    e.determinant().abs() / fact
}

/// Half-space oracle: barycentric coordinates by a linear solve.
fn linear_barycentric(pts: &[Vec<f64>], x: &[f64]) -> DVector<f64> {
    let m = pts.len() - 1;
    let a = DMatrix::from_fn(m + 1, m + 1, |i, j| if i < m { pts[j][i] } else { 1.0 });
    let mut rhs = DVector::from_element(m + 1, 1.0);
    for i in 0..m {
        rhs[i] = x[i];
    }
    a.lu().solve(&rhs).expect("non-degenerate simplex")
}

/// Shape quality `m! V / L_max^m`: one for a unit right simplex, near zero
/// for slivers.
fn quality(pts: &[Vec<f64>]) -> f64 {
    let m = pts.len() - 1;
    let mut longest = 0.0f64;
    for i in 0..=m {
        for j in i + 1..=m {
            let d2: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            longest = longest.max(d2.sqrt());
        }
    }
    let fact: f64 = (1..=m).map(|k| k as f64).product();
    fact * coordinate_volume(pts) / longest.powi(m as i32)
}

fn well_shaped_simplex(rng: &mut ChaCha8Rng, m: usize, rejected: &mut usize) -> Vec<Vec<f64>> {
    loop {
        let pts: Vec<Vec<f64>> = (0..=m).map(|_| (0..m).map(|_| rng.random_range(-10.0..10.0)).collect()).collect();
        if quality(&pts) >= 0.05 {
            return pts;
        }
        *rejected += 1;
    }
}

fn geometry_suite() -> Outcome {
    const BAND: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_vol, mut worst_rec) = (0.0f64, 0.0f64);
    let (mut hull_checked, mut hull_mismatch) = (0, 0);
    let mut rejected = 0usize;
    for m in 1..=3usize {
        for _ in 0..1000 {
            let pts = well_shaped_simplex(&mut rng, m, &mut rejected);
            let ids: Vec<NodeId> = (1..=m + 2).map(NodeId).collect();
            let exact = coordinate_volume(&pts);
            let d = DistanceMatrix::from_points(ids[..m + 1].to_vec(), &pts);
            let vol = generalized_volume(&d, m).unwrap();
            worst_vol = worst_vol.max((vol - exact).abs() / exact);

            // interior point from random positive weights
            let w: Vec<f64> = (0..=m).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = w.iter().sum();
            let inner: Vec<f64> = (0..m).map(|j| (0..=m).map(|k| w[k] / total * pts[k][j]).sum()).collect();
            let mut all = pts.clone();
            all.push(inner.clone());
            let d = DistanceMatrix::from_points(ids.clone(), &all);
            let bw = barycentric_coordinates(ids[m + 1], &ids[..m + 1], &d, m).unwrap();
            for j in 0..m {
                let rebuilt: f64 = (0..=m).map(|k| bw.weights[k] * pts[k][j]).sum();
                worst_rec = worst_rec.max((rebuilt - inner[j]).abs());
            }

            // arbitrary point, inside or outside
            let probe: Vec<f64> = (0..m).map(|_| rng.random_range(-12.0..12.0)).collect();
            let lambda = linear_barycentric(&pts, &probe);
            let min_l = lambda.min();
            if min_l.abs() <= BAND {
                continue;
            }
            let mut all = pts.clone();
            all.push(probe);
            let d = DistanceMatrix::from_points(ids.clone(), &all);
            let verdict = convex_hull_inclusion(ids[m + 1], &ids[..m + 1], &d, m).unwrap();
            let expect = if min_l > 0.0 { HullInclusion::Inside } else { HullInclusion::Outside };
            hull_checked += 1;
            if verdict != expect {
                hull_mismatch += 1;
            }
        }
    }
    let pass = worst_vol < 1e-8 && worst_rec < 1e-8 && hull_mismatch == 0;
    outcome(
        pass,
        format!(
            "3000 simplices: max rel volume error {worst_vol:.2e}, max reconstruction error {worst_rec:.2e}, \
             hull mismatches {hull_mismatch}/{hull_checked}, slivers redrawn {rejected}"
        ),
    )
}

fn diloc_exactness() -> Outcome {
    let mut fields = vec![("fixture".to_string(), fixtures::seven_node_field())];
    fields.extend((0..20u64).map(|s| (format!("random-{s}"), fifty_node_field(s))));
    let results: Vec<(String, f64, f64, f64, f64, bool)> = fields
        .into_par_iter()
        .map(|(name, field)| {
            let s = setup(field);
            let truth = experiment::true_sensor_block(&s.field);
            let x_star = exact_locations_oracle(&s.sys, &s.u).unwrap();
            let init = IterationState::uniform_in_box(&s.u, s.sys.num_sensors(), 17);
            let opts = TraceOptions { oracle: Some(&truth), ..Default::default() };
            let trace = run_to_convergence(init, &s.sys, &s.u, Mode::Diloc, StopRule::default(), &opts).unwrap();
            let final_x = trace.final_state.sensors();
            let oracle_err = max_abs(&final_x, &truth);
            let limit_err = max_abs(&final_x, &x_star);
            let rho = trace.reference_radius.unwrap();
            let rate = trace.decay_rate.unwrap_or(f64::NAN);
            (name, oracle_err, limit_err, rho, rate, trace.converged_at.is_some())
        })
        .collect();
    let mut pass = true;
    let (mut worst_oracle, mut worst_limit, mut worst_rate) = (0.0f64, 0.0f64, 0.0f64);
    for (name, oracle_err, limit_err, rho, rate, converged) in &results {
        let gap = (rate - rho).abs();
        let ok = *converged && *oracle_err < 1e-6 && *limit_err < 1e-8 && gap <= 0.05;
        if !ok {
            eprintln!("  {name}: oracle {oracle_err:.2e} limit {limit_err:.2e} rho {rho:.4} rate {rate:.4}");
        }
        pass &= ok;
        worst_oracle = worst_oracle.max(*oracle_err);
        worst_limit = worst_limit.max(*limit_err);
        worst_rate = worst_rate.max(if gap.is_nan() { f64::INFINITY } else { gap });
    }
    outcome(
        pass,
        format!(
            "fixture + 20 fields: max oracle error {worst_oracle:.2e}, max gap to (I-P)^-1 B U {worst_limit:.2e}, \
             max |decay rate - rho(P)| {worst_rate:.4}"
        ),
    )
}

fn relaxation_invariance() -> Outcome {
    let mut fields = vec![fixtures::seven_node_field()];
    fields.extend((0..5u64).map(fifty_node_field));
    let stop = StopRule { step_tol: 1e-12, max_iters: 100_000 };
    let mut pass = true;
    let (mut worst_gap, mut worst_rho) = (0.0f64, 0.0f64);
    let mut identical = true;
    for field in fields {
        let s = setup(field);
        let init = IterationState::uniform_in_box(&s.u, s.sys.num_sensors(), 5);
        let opts = TraceOptions::default();
        let plain = run_to_convergence(init.clone(), &s.sys, &s.u, Mode::Diloc, stop, &opts).unwrap();
        let mut limits = Vec::new();
        for alpha in [0.2, 0.5, 1.0] {
            let t = run_to_convergence(init.clone(), &s.sys, &s.u, Mode::DilocRel(alpha), stop, &opts).unwrap();
            pass &= t.converged_at.is_some();
            let rho_j = spectral_radius(&relaxation_matrix(s.sys.p(), alpha), SpectralOptions::default()).unwrap();
            worst_rho = worst_rho.max(rho_j);
            if alpha == 1.0 {
                identical &= t.final_state == plain.final_state && t.records == plain.records;
            }
            limits.push(t.final_state.sensors());
        }
        for l in &limits[1..] {
            worst_gap = worst_gap.max(max_abs(l, &limits[0]));
        }
    }
    pass &= worst_gap < 1e-8 && worst_rho < 1.0 && identical;
    outcome(
        pass,
        format!(
            "fixture + 5 fields: max limit gap over alpha in {{0.2, 0.5, 1}} {worst_gap:.2e}, \
             max rho(J) {worst_rho:.4}, alpha=1 bit-identical: {identical}"
        ),
    )
}

fn complexity_accounting() -> Outcome {
    let line = vec![vec![0.0], vec![10.0]];
    let tetra = vec![vec![0.0, 0.0, 0.0], vec![6.0, 0.0, 0.0], vec![0.0, 6.0, 0.0], vec![0.0, 0.0, 6.0]];
    let fields = vec![
        generate_uniform_field(line, 20, 1).unwrap(),
        fixtures::seven_node_field(),
        fifty_node_field(3),
        generate_uniform_field(tetra, 40, 2).unwrap(),
    ];
    let mut pass = true;
    let mut seen = Vec::new();
    for field in fields {
        let m = field.dim();
        let s = setup(field);
        let mut state = IterationState::uniform_in_box(&s.u, s.sys.num_sensors(), 1);
        for _ in 0..25 {
            state = diloc_step(&state, &s.sys, &s.u).unwrap();
            let c = state.counts();
            pass &= c.messages.iter().all(|&k| k == m + 1) && c.ops.iter().all(|&k| k == 2 * m + 1);
        }
        seen.push(format!("m={m}: {} msgs, {} ops", state.counts().messages[0], state.counts().ops[0]));
    }
    outcome(pass, format!("25 steps per field, per sensor per iteration: {}", seen.join("; ")))
}

fn conditional_drift() -> Outcome {
    let s = setup(fixtures::seven_node_field());
    let model = NoiseModel {
        link_prob: 0.9,
        channel_noise: ChannelNoise::InverseSensorCount {},
        matrix_fluct_var: 0.1,
        bias: BiasSpec::Random { norm: 0.01 },
        seed: 77,
    };
    let env = Environment::new(model, &s.sys).unwrap();
    let limit = dlre_limit(&s.sys, &s.u, &env).unwrap();
    let alpha = 0.5;
    let draws = 10_000;
    let states = [
        ("random", IterationState::uniform_in_box(&s.u, 4, 1).sensors()),
        ("X*", exact_locations_oracle(&s.sys, &s.u).unwrap()),
        ("d*", limit.d_star.clone()),
    ];
    let mut pass = true;
    let mut worst = 0.0f64;
    for (name, x) in &states {
        let expected = conditional_mean_step(x, &s.u, &env, alpha);
        let (n, m) = x.shape();
        let mut sum = DMatrix::zeros(n, m);
        let mut sum_sq = DMatrix::zeros(n, m);
        for t in 0..draws {
            let sample = sample_environment(&env, &s.sys, t);
            let (next, _) = dlre_update(x, &s.sys, &s.u, &env, &sample, alpha);
            sum += &next;
            sum_sq += next.component_mul(&next);
        }
        let k = draws as f64;
        for i in 0..n {
            for j in 0..m {
                let mean = sum[(i, j)] / k;
                let var = (sum_sq[(i, j)] / k - mean * mean).max(0.0) * k / (k - 1.0);
                let se = (var / k).sqrt();
                let z = (mean - expected[(i, j)]).abs() / se;
                worst = worst.max(z);
                if z > 4.0 {
                    eprintln!("  state {name} entry ({i},{j}): {z:.2} standard errors");
                    pass = false;
                }
            }
        }
    }
    outcome(pass, format!("3 states x 10000 draws: max deviation {worst:.2} standard errors (limit 4)"))
}

fn dlre_limit_check() -> Outcome {
    let checkpoints = [1_000usize, 10_000, 100_000];
    let per_seed: Vec<[f64; 3]> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let s = setup(fifty_node_field(seed));
            let model = NoiseModel {
                link_prob: 0.9,
                channel_noise: ChannelNoise::InverseSensorCount {},
                matrix_fluct_var: 0.1,
                bias: BiasSpec::None {},
                seed,
            };
            let env = Environment::new(model, &s.sys).unwrap();
            let d_star = dlre_limit(&s.sys, &s.u, &env).unwrap().d_star;
            let schedule = WeightSchedule::Harmonic { a: 4.0 };
            let mut x = IterationState::uniform_in_box(&s.u, s.sys.num_sensors(), seed).sensors();
            let mut out = [0.0; 3];
            let mut next_cp = 0;
            for t in 0..checkpoints[2] {
                x = dlre_step(&x, &s.sys, &s.u, &env, &schedule, t);
                if t + 1 == checkpoints[next_cp] {
                    out[next_cp] = relative_error(&x, &d_star);
                    next_cp += 1;
                }
            }
            out
        })
        .collect();
    let medians: Vec<f64> = (0..3).map(|k| median(per_seed.iter().map(|r| r[k]).collect())).collect();
    let monotone = medians.windows(2).all(|w| w[1] < w[0]);
    let pass = medians[2] < 0.05 && monotone;
    outcome(
        pass,
        format!(
            "median relative error at 1e3/1e4/1e5 iterations: {:.4} / {:.4} / {:.4} (need final < 0.05, \
             decreasing: {monotone})",
            medians[0], medians[1], medians[2]
        ),
    )
}

fn bias_characterization() -> Outcome {
    let s = setup(fixtures::seven_node_field());
    let unbiased = Environment::new(NoiseModel::degenerate(1), &s.sys).unwrap();
    let e0 = dlre_limit(&s.sys, &s.u, &unbiased).unwrap().e_l;
    let mut model = NoiseModel::degenerate(9);
    model.bias = BiasSpec::Random { norm: 0.01 };
    let env = Environment::new(model, &s.sys).unwrap();
    let ladder: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
        .iter()
        .map(|&k| dlre_limit(&s.sys, &s.u, &env.with_bias_scaled(&s.sys, k).unwrap()).unwrap().e_l)
        .collect();
    let decreasing = ladder.windows(2).all(|w| w[1] < w[0]);
    let pass = e0 == 0.0 && ladder[0] > 0.0 && decreasing && ladder[3] < ladder[0] / 4.0;
    outcome(
        pass,
        format!(
            "e_l at zero bias {e0:e}; along s = 1, 1/2, 1/4, 1/8: {:.3e}, {:.3e}, {:.3e}, {:.3e}",
            ladder[0], ladder[1], ladder[2], ladder[3]
        ),
    )
}

fn files_equal(a: &Path, b: &Path) -> bool {
    match (std::fs::read(a), std::fs::read(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut differing = Vec::new();
    for name in PRESET_NAMES {
        let cfg = experiment::preset(name).unwrap();
        let a = root.path().join(format!("{name}-a"));
        let b = root.path().join(format!("{name}-b"));
        experiment::run_experiment(&cfg, &a).unwrap();
        experiment::run_experiment(&cfg, &b).unwrap();
        let mut files = vec!["trace.csv".to_string(), "summary.json".to_string()];
        let mut plots: Vec<String> = std::fs::read_dir(a.join("plot"))
            .unwrap()
            .map(|e| format!("plot/{}", e.unwrap().file_name().to_string_lossy()))
            .collect();
        plots.sort();
        files.extend(plots);
        for file in &files {
            if !files_equal(&a.join(file), &b.join(file)) {
                differing.push(format!("{name}/{file}"));
            }
        }
    }
    let detail = if differing.is_empty() {
        format!("{} presets re-run: trace, summary and plot files byte-identical", PRESET_NAMES.len())
    } else {
        format!("differences in {}", differing.join(", "))
    };
    outcome(differing.is_empty(), detail)
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("deployment bound", deployment_bound),
        ("Monte-Carlo triangulation", monte_carlo_triangulation),
        ("geometry oracle suite", geometry_suite),
        ("DILOC exactness", diloc_exactness),
        ("relaxation invariance", relaxation_invariance),
        ("complexity accounting", complexity_accounting),
        ("DLRE conditional drift", conditional_drift),
        ("DLRE limit", dlre_limit_check),
        ("bias-error characterization", bias_characterization),
        ("determinism", determinism),
    ];
    // `cargo test --test acceptance -- 3 7` runs only criteria 3 and 7
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {:>2} {verdict}: {name}: {} [{:.1}s]", i + 1, o.detail, start.elapsed().as_secs_f64());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
