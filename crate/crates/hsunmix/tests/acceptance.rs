//! Acceptance suite: one test per criterion, each printing a PASS/FAIL
//! line. Solver criteria use independent numeric oracles implemented in
//! this file (direct linear solves, golden-section scalar minimization,
//! and a proximal-gradient reference solver).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use hsunmix::admm::{
    self, prox_l1, prox_l21, prox_quadratic, project_nonneg, project_sum_to_one, QuadraticCache,
};
use hsunmix::eval;
use hsunmix::io;
use hsunmix::model::{
    build_interaction_matrix, count_interactions, enumerate_multi_indices,
    interaction_coefficient, AbundanceMatrix, EndmemberMatrix, SpectralCube,
};
use hsunmix::synth::{self, ClassModel, SceneSpec};
use hsunmix::unmixers::{self, Method, UnmixSpec, NUSAL_TAU_GRID, RUSAL_TAU_GRID};

fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    println!("acceptance {criterion}: {verdict} ({detail})");
    assert!(pass, "{criterion} failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_endmembers(l: usize, r: usize, rng: &mut ChaCha8Rng) -> EndmemberMatrix {
    EndmemberMatrix::new(DMatrix::from_fn(l, r, |_, _| rng.random_range(0.05..1.0))).unwrap()
}

fn random_simplex_cols(r: usize, n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::from_fn(r, n, |_, _| -f64::ln(rng.random_range(1e-12..1.0f64)));
    for mut col in a.column_iter_mut() {
        let s = col.sum();
        col.scale_mut(1.0 / s);
    }
    a
}

#[test]
fn criterion_01_interaction_count_table() {
    let table = [
        (3, 2, 6u64),
        (3, 3, 16),
        (3, 4, 31),
        (3, 5, 52),
        (6, 2, 21),
        (6, 3, 77),
        (6, 4, 203),
        (6, 5, 455),
        (10, 2, 55),
        (10, 3, 275),
        (10, 4, 990),
        (10, 5, 2992),
    ];
    let start = Instant::now();
    let all_match = table
        .iter()
        .all(|&(r, k, expected)| count_interactions(r, k).unwrap() == expected);
    let elapsed = start.elapsed();
    report(
        "criterion 01 (interaction count table)",
        all_match && elapsed.as_micros() < 1000,
        &format!("12 entries exact, {:?}", elapsed),
    );
}

#[test]
fn criterion_02_kernel_identity() {
    let mut g = rng(2002);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r = g.random_range(2..=6usize);
        let k = g.random_range(2..=4u32);
        let l = 10;
        let m = random_endmembers(l, r, &mut g);
        let a = random_simplex_cols(r, 1, &mut g).column(0).clone_owned();
        let dict = build_interaction_matrix(&m, k).unwrap();
        // gamma induced by the abundance vector, per multi-index
        let gamma = DVector::from_iterator(
            dict.num_terms(),
            dict.indices().iter().map(|idx| {
                interaction_coefficient(idx)
                    * idx
                        .exponents()
                        .iter()
                        .enumerate()
                        .map(|(j, &e)| a[j].powi(e as i32))
                        .product::<f64>()
            }),
        );
        let ma = m.data() * &a;
        for order in 2..=k {
            // per-order slice of the dictionary and coefficients
            let cols: Vec<usize> = dict
                .indices()
                .iter()
                .enumerate()
                .filter(|(_, idx)| idx.order() == order)
                .map(|(c, _)| c)
                .collect();
            let q = dict.matrix().select_columns(cols.iter());
            let gi = DVector::from_iterator(cols.len(), cols.iter().map(|&c| gamma[c]));
            let mut target = DVector::from_element(l, 1.0);
            for _ in 0..order {
                target.component_mul_assign(&ma);
            }
            worst = worst.max((q * gi - target).abs().max());
        }
    }
    report(
        "criterion 02 (kernel identity)",
        worst < 1e-12,
        &format!("max deviation {worst:.3e} over 100 instances"),
    );
}

/// Golden-section minimization of a unimodal scalar function.
fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn criterion_03_prox_oracles() {
    let mut g = rng(3003);
    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let mu = g.random_range(0.05..5.0);
        let tau = g.random_range(0.01..2.0);

        // quadratic: independent dense normal-equation solve
        let l = 8;
        let p = 5;
        let s = DMatrix::from_fn(l, p, |_, _| g.random_range(-1.0..1.0));
        let y = DMatrix::from_fn(l, 3, |_, _| g.random_range(-1.0..1.0));
        let v = DMatrix::from_fn(p, 3, |_, _| g.random_range(-1.0..1.0));
        let cache = QuadraticCache::new(&s, &y);
        let fast = prox_quadratic(&v, &cache, mu).unwrap();
        let lhs = s.transpose() * &s + DMatrix::identity(p, p) * mu;
        let rhs = s.transpose() * &y + &v * mu;
        let direct = lhs.lu().solve(&rhs).unwrap();
        worst = worst.max((&fast - &direct).abs().max());

        // soft threshold: scalar golden-section on tau|u| + mu/2 (u-v)^2
        let vs = g.random_range(-3.0..3.0);
        let fast = prox_l1(&DMatrix::from_element(1, 1, vs), tau / mu)[(0, 0)];
        let oracle = golden_min(|u| tau * u.abs() + 0.5 * mu * (u - vs) * (u - vs), -5.0, 5.0);
        worst = worst.max((fast - oracle).abs());

        // vector soft threshold: minimum is radial, search the magnitude
        let vcol = DVector::from_fn(4, |_, _| g.random_range(-2.0..2.0f64));
        let fast = prox_l21(&DMatrix::from_column_slice(4, 1, vcol.as_slice()), tau / mu);
        let norm_v = vcol.norm();
        let t = golden_min(
            |t| tau * t + 0.5 * mu * (t - norm_v) * (t - norm_v),
            0.0,
            norm_v + 1.0,
        );
        let oracle = &vcol * (t / norm_v);
        worst = worst.max((fast.column(0) - oracle).abs().max());

        // nonnegative projection: per-entry golden-section over u >= 0
        let vs = g.random_range(-2.0..2.0);
        let fast = project_nonneg(&DMatrix::from_element(1, 1, vs))[(0, 0)];
        let oracle = golden_min(|u| (u - vs) * (u - vs), 0.0, 3.0);
        worst = worst.max((fast - oracle).abs());

        // sum-to-one projection: independent KKT system solve
        let r = 3 + trial % 3;
        let vcol = DVector::from_fn(r, |_, _| g.random_range(-1.0..1.0f64));
        let fast = project_sum_to_one(&DMatrix::from_column_slice(r, 1, vcol.as_slice()));
        let mut kkt = DMatrix::zeros(r + 1, r + 1);
        kkt.view_mut((0, 0), (r, r)).copy_from(&DMatrix::identity(r, r));
        for i in 0..r {
            kkt[(i, r)] = 1.0;
            kkt[(r, i)] = 1.0;
        }
        let mut rhs = DVector::zeros(r + 1);
        rhs.rows_mut(0, r).copy_from(&vcol);
        rhs[r] = 1.0;
        let sol = kkt.lu().solve(&rhs).unwrap();
        worst = worst.max(
            (fast.column(0) - sol.rows(0, r))
                .abs()
                .max(),
        );
    }
    report(
        "criterion 03 (prox operator oracles)",
        worst < 1e-6,
        &format!("max deviation {worst:.3e} over 50 trials x 5 operators"),
    );
}

/// Euclidean projection onto the probability simplex (sort-based).
fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().cloned().collect();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in sorted.iter().enumerate() {
        cum += u;
        let candidate = (cum - 1.0) / (i + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Proximal-gradient reference solver for the composite unmixing
/// objective. Exact prox of the sparse-group penalty (soft threshold, then
/// group shrinkage), simplex projection for the abundance block.
fn prox_grad_oracle(
    y: &DMatrix<f64>,
    s: &DMatrix<f64>,
    r: usize,
    tau1: f64,
    tau2: f64,
    nonneg_x: bool,
    iters: usize,
) -> DMatrix<f64> {
    let p = s.ncols();
    let n = y.ncols();
    let d = p - r;
    let lip = {
        let sts = s.transpose() * s;
        sts.symmetric_eigen().eigenvalues.max()
    };
    let step = 1.0 / lip;
    let mut z = DMatrix::from_element(p, n, 1.0 / r as f64);
    z.view_mut((r, 0), (d, n)).fill(0.0);
    for _ in 0..iters {
        let grad = s.transpose() * (s * &z - y);
        z -= step * grad;
        for c in 0..n {
            let a = project_simplex(&z.view((0, c), (r, 1)).clone_owned().column(0).into());
            z.view_mut((0, c), (r, 1)).copy_from(&a);
        }
        if d > 0 {
            let mut x = z.view((r, 0), (d, n)).clone_owned();
            if nonneg_x {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            let x = prox_l1(&x, step * tau1);
            let x = prox_l21(&x, step * tau2);
            z.view_mut((r, 0), (d, n)).copy_from(&x);
        }
    }
    z
}

#[test]
fn criterion_04_solver_oracle() {
    let start = Instant::now();
    let mut g = rng(4004);
    let mut worst: f64 = 0.0;
    for (method, tau1, tau2) in [
        (Method::Nusal { k: 2 }, 0.05, 0.05),
        (Method::Rusal { d: 3 }, 0.01, 0.01),
    ] {
        let l = 12;
        let r = 2;
        let n = 5;
        let m = random_endmembers(l, r, &mut g);
        let a = random_simplex_cols(r, n, &mut g);
        let mut y = m.data() * &a;
        for v in y.iter_mut() {
            *v += g.random_range(-0.05..0.05);
        }
        let cube = SpectralCube::from_pixels(y.clone()).unwrap();

        let mut spec = UnmixSpec::nusal(2);
        spec.method = method;
        spec.tau1 = tau1;
        spec.tau2 = tau2;
        spec.solver.tol = 1e-9;
        spec.solver.max_iter = 50_000;
        let problem = match method {
            Method::Nusal { .. } => unmixers::assemble_nusal(&cube, &m, &spec).unwrap(),
            Method::Rusal { .. } => unmixers::assemble_rusal(&cube, &m, &spec).unwrap(),
            Method::LinearBaseline => unreachable!(),
        };
        let (state, _) = admm::solve(&problem, &spec.solver, None).unwrap();
        let admm_obj = problem.objective(&state.z);

        let nonneg_x = matches!(method, Method::Nusal { .. });
        let z_ref = prox_grad_oracle(
            &y,
            problem.stacked_operator(),
            r,
            tau1,
            tau2,
            nonneg_x,
            200_000,
        );
        let ref_obj = problem.objective(&z_ref);
        let rel = (admm_obj - ref_obj).abs() / ref_obj.abs().max(1.0);
        worst = worst.max(rel);
    }
    let elapsed = start.elapsed();
    report(
        "criterion 04 (solver objective vs proximal-gradient oracle)",
        worst < 1e-4 && elapsed.as_secs() < 10,
        &format!("max relative gap {worst:.3e}, {elapsed:?}"),
    );
}

#[test]
fn criterion_05_structural_g() {
    let mut g = rng(5005);
    let m = random_endmembers(24, 3, &mut g);
    let a = random_simplex_cols(3, 6, &mut g);
    let cube = SpectralCube::from_pixels(m.data() * &a).unwrap();

    let nusal = unmixers::assemble_nusal(&cube, &m, &UnmixSpec::nusal(2)).unwrap();
    let gn = nusal.g_diagonal();
    let dk = count_interactions(3, 2).unwrap() as usize;
    let nusal_ok = gn.len() == 3 + dk
        && gn.iter().take(3).all(|&v| v == 3.0)
        && gn.iter().skip(3).all(|&v| v == 4.0);

    let rusal = unmixers::assemble_rusal(&cube, &m, &UnmixSpec::rusal(10)).unwrap();
    let gr = rusal.g_diagonal();
    let rusal_ok = gr.len() == 13 && gr.iter().all(|&v| v == 3.0);

    report(
        "criterion 05 (structural G diagonals)",
        nusal_ok && rusal_ok,
        "NUSAL diag[3*1_R, 4*1_D], RUSAL 3*I",
    );
}

fn tight(spec: &mut UnmixSpec) {
    spec.solver.tol = 1e-6;
    spec.solver.max_iter = 1000;
    spec.solver.require_both = true;
}

#[test]
fn criterion_06_exact_recovery() {
    let m = synth::generate_endmembers(100, 3, 606).unwrap();
    let truth = synth::sample_abundances(900, 3, 606).unwrap();
    let cube = SpectralCube::new(m.data() * truth.data(), 30, 30).unwrap();

    let mut results = Vec::new();
    for (name, mut spec) in [
        ("linear", UnmixSpec::linear_baseline()),
        ("nusal-2", UnmixSpec::nusal(2)),
        ("rusal", UnmixSpec::rusal(20)),
    ] {
        tight(&mut spec);
        let out = unmixers::unmix(&cube, &m, &spec).unwrap();
        let err = eval::armse(&truth, &out.abundances).unwrap();
        results.push((name, err, out.report.converged, out.report.iterations));
    }
    let ok = results
        .iter()
        .all(|&(_, err, conv, iters)| err < 1e-3 && conv && iters <= 1000);
    report(
        "criterion 06 (noiseless recovery)",
        ok,
        &format!("{results:?}"),
    );
}

fn desk_scene(preset: char, seed: u64) -> SceneSpec {
    let mut spec = if preset == '1' {
        SceneSpec::i1(3, seed)
    } else {
        SceneSpec::i2(3, seed)
    };
    spec.rows = 30;
    spec.cols = 30;
    spec.l = 100;
    if preset == '2' {
        // a smoothness scale of 10 bands keeps the residuals inside what a
        // 20-term DCT expansion can represent at 100 bands
        spec.classes = vec![
            ClassModel::Lmm,
            ClassModel::Ev { eps2: 0.001, corr_len: 10.0 },
            ClassModel::Me { eps2: 0.002, corr_len: 10.0 },
        ];
    }
    spec
}

#[test]
fn criterion_07_i1_analog_ratios() {
    let start = Instant::now();
    let spec = desk_scene('1', 3);
    let (truth, m) = synth::build_scene(&spec).unwrap();

    let mut base_spec = UnmixSpec::linear_baseline();
    tight(&mut base_spec);
    let base = unmixers::unmix(&truth.noisy, &m, &base_spec).unwrap();
    let base_armse = eval::armse(&truth.abundances, &base.abundances).unwrap();
    let base_lmm =
        eval::per_class_rmse(&truth.abundances, &base.abundances, &truth.labels, 0).unwrap();

    let mut nusal_spec = UnmixSpec::nusal(2);
    tight(&mut nusal_spec);
    let (nusal, point) = unmixers::grid_search(
        &truth.noisy,
        &m,
        &nusal_spec,
        &NUSAL_TAU_GRID,
        Some(&truth.abundances),
    )
    .unwrap();
    let nusal_armse = eval::armse(&truth.abundances, &nusal.abundances).unwrap();
    let nusal_lmm =
        eval::per_class_rmse(&truth.abundances, &nusal.abundances, &truth.labels, 0).unwrap();

    let elapsed = start.elapsed();
    let ok = nusal_armse <= 0.6 * base_armse
        && nusal_lmm <= 1.3 * base_lmm
        && elapsed.as_secs() < 120;
    report(
        "criterion 07 (I1 analog, NUSAL-2 vs baseline)",
        ok,
        &format!(
            "aRMSE {nusal_armse:.4} vs {base_armse:.4} (ratio {:.2}), LMM-class {nusal_lmm:.4} vs {base_lmm:.4}, tau ({}, {}), {elapsed:?}",
            nusal_armse / base_armse,
            point.tau1,
            point.tau2
        ),
    );
}

#[test]
fn criterion_08_i2_analog_rusal_beats_baseline() {
    let start = Instant::now();
    let spec = desk_scene('2', 808);
    let (truth, m) = synth::build_scene(&spec).unwrap();

    let mut base_spec = UnmixSpec::linear_baseline();
    tight(&mut base_spec);
    let base = unmixers::unmix(&truth.noisy, &m, &base_spec).unwrap();
    let base_armse = eval::armse(&truth.abundances, &base.abundances).unwrap();
    let base_re = eval::reconstruction_error(&truth.noisy, &base.reconstruction).unwrap();

    let mut rusal_spec = UnmixSpec::rusal(20);
    tight(&mut rusal_spec);
    let (rusal, _) = unmixers::grid_search(
        &truth.noisy,
        &m,
        &rusal_spec,
        &RUSAL_TAU_GRID,
        Some(&truth.abundances),
    )
    .unwrap();
    let rusal_armse = eval::armse(&truth.abundances, &rusal.abundances).unwrap();
    let rusal_re = eval::reconstruction_error(&truth.noisy, &rusal.reconstruction).unwrap();

    let elapsed = start.elapsed();
    let ok = rusal_armse < base_armse && rusal_re < base_re && elapsed.as_secs() < 120;
    report(
        "criterion 08 (I2 analog, RUSAL vs baseline)",
        ok,
        &format!(
            "aRMSE {rusal_armse:.4} vs {base_armse:.4}, RE {rusal_re:.5} vs {base_re:.5}, {elapsed:?}"
        ),
    );
}

#[test]
fn criterion_09_order_monotonicity() {
    let spec = desk_scene('1', 909);
    let (truth, m) = synth::build_scene(&spec).unwrap();

    let mut results = Vec::new();
    for k in [2u32, 3] {
        let mut spec = UnmixSpec::nusal(k);
        tight(&mut spec);
        spec.solver.max_iter = 3000;
        let problem = unmixers::assemble_nusal(&truth.noisy, &m, &spec).unwrap();
        let (_, solve_report) = admm::solve(&problem, &spec.solver, None).unwrap();
        let out = unmixers::unmix(&truth.noisy, &m, &spec).unwrap();
        let armse = eval::armse(&truth.abundances, &out.abundances).unwrap();
        results.push((solve_report.objective, armse));
    }
    let (obj2, armse2) = results[0];
    let (obj3, armse3) = results[1];
    let ok = obj3 <= obj2 + 1e-6 && armse3 <= 1.1 * armse2;
    report(
        "criterion 09 (order monotonicity)",
        ok,
        &format!("objective {obj3:.6} vs {obj2:.6}, aRMSE {armse3:.4} vs {armse2:.4}"),
    );
}

#[test]
fn criterion_10_snr_calibration() {
    let mut worst_dev: f64 = 0.0;
    for seed in 1..=5u64 {
        let spec = SceneSpec::i1(3, seed);
        let (truth, _) = synth::build_scene(&spec).unwrap();
        let noise = truth.noisy.data() - truth.clean.data();
        let realized =
            10.0 * f64::log10(truth.clean.data().norm_squared() / noise.norm_squared());
        worst_dev = worst_dev.max((realized - 25.0).abs());
    }
    report(
        "criterion 10 (SNR calibration)",
        worst_dev < 0.5,
        &format!("worst |SNR - 25| = {worst_dev:.4} dB over 5 full-size scenes"),
    );
}

#[test]
fn criterion_11_convergence_discipline() {
    let mut g = rng(1111);
    let m = random_endmembers(60, 3, &mut g);
    let a = random_simplex_cols(3, 100, &mut g);
    let mut y = m.data() * &a;
    for v in y.iter_mut() {
        *v += g.random_range(-0.01..0.01);
    }
    let cube = SpectralCube::from_pixels(y).unwrap();

    // both residuals must fall below threshold
    let mut spec = UnmixSpec::nusal(2);
    tight(&mut spec);
    spec.solver.tol = 1e-5;
    spec.solver.max_iter = 5000;
    let problem = unmixers::assemble_nusal(&cube, &m, &spec).unwrap();
    let (_, r1) = admm::solve(&problem, &spec.solver, None).unwrap();
    let (rr, dd, nn, _) = problem.dims();
    let threshold = spec.solver.tol * (((rr + dd) * nn) as f64).sqrt();
    let both_below = r1.converged && r1.primal_res < threshold && r1.dual_res < threshold;

    // with adaptation off, reruns are bit-identical
    spec.solver.adapt = false;
    let (s_a, _) = admm::solve(&problem, &spec.solver, None).unwrap();
    let (s_b, _) = admm::solve(&problem, &spec.solver, None).unwrap();
    let identical = s_a.z == s_b.z;

    report(
        "criterion 11 (convergence discipline)",
        both_below && identical,
        &format!(
            "primal {:.3e}, dual {:.3e}, threshold {:.3e}, reruns identical: {identical}",
            r1.primal_res, r1.dual_res, threshold
        ),
    );
}

#[test]
fn criterion_12_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut g = rng(1212);

    let cube = SpectralCube::new(
        DMatrix::from_fn(31, 35, |_, _| g.random_range(0.0..1.5)),
        5,
        7,
    )
    .unwrap();
    let cube_path = dir.path().join("cube.hsib");
    io::write_cube(&cube_path, &cube).unwrap();
    let cube_back = io::read_cube(&cube_path).unwrap();
    let cube_exact = cube_back.data() == cube.data()
        && cube_back.rows() == cube.rows()
        && cube_back.cols() == cube.cols();

    let m = synth::generate_endmembers(64, 4, 1212).unwrap();
    let csv_path = dir.path().join("m.csv");
    io::write_csv(&csv_path, m.data()).unwrap();
    let m_back = synth::load_endmembers(&csv_path).unwrap();
    let csv_exact = m_back.data() == m.data();

    report(
        "criterion 12 (file round trips)",
        cube_exact && csv_exact,
        "HSIB bit-exact, CSV value-exact",
    );
}

#[test]
fn acceptance_pipeline_abundances_are_feasible() {
    // supporting sanity check: unmix output always satisfies the
    // constraints after cleanup
    let mut g = rng(99);
    let m = random_endmembers(40, 3, &mut g);
    let a = random_simplex_cols(3, 36, &mut g);
    let cube = SpectralCube::new(m.data() * &a, 6, 6).unwrap();
    for mut spec in [
        UnmixSpec::linear_baseline(),
        UnmixSpec::nusal(2),
        UnmixSpec::rusal(8),
    ] {
        spec.solver.max_iter = 400;
        let out = unmixers::unmix(&cube, &m, &spec).unwrap();
        for col in out.abundances.data().column_iter() {
            assert!((col.sum() - 1.0).abs() < 1e-9);
            assert!(col.iter().all(|&v| v >= 0.0));
        }
        let truth = AbundanceMatrix::new(a.clone()).unwrap();
        assert!(eval::armse(&truth, &out.abundances).unwrap() < 0.5);
    }
}
