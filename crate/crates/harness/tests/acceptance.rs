//! Acceptance suite: one PASS/FAIL line per criterion; exits non-zero when
//! any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use metric_stitch::commands;
use metric_stitch::config::{ExperimentId, ExperimentSpec, ModelSpec, StitchKind};
use metric_stitch::output::csv_string;
use metric_stitch::{run_experiment, with_jobs, CellSummary, ExperimentOutput};
use metric_stitch_core::{
    build_pi, feature, fit_constrained_erm, impossibility_witness, loss_value_grad, phantom_point,
    project_metric, psd_project, psi, shared_pair_designs, solve_multi_user, solve_single_user,
    solve_subspace_unquantized, stitch_exact, stitch_ls, ComparisonGraph, ErmData, Error, Label,
    LossSpec, Measurement, QuantizedMeasurement, SolverConfig, Subspace, SubspaceMetric, SymMatrix,
    UnquantizedMeasurement,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.sample(StandardNormal))
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn random_pd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let g = gaussian_matrix(rng, d, d);
    SymMatrix::from_matrix(&(&g * g.transpose() + DMatrix::identity(d, d) * 0.5)).unwrap()
}

fn random_sym(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    SymMatrix::from_matrix(&gaussian_matrix(rng, d, d)).unwrap()
}

fn random_subspace(rng: &mut ChaCha8Rng, d: usize, r: usize) -> Subspace {
    Subspace::from_spanning(gaussian_matrix(rng, d, r)).unwrap()
}

/// `⟨xxᵀ - x'x'ᵀ, M⟩ + ⟨x - x', v⟩` from dense products.
fn dense_linear(m: &DMatrix<f64>, v: &DVector<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let delta = x * x.transpose() - y * y.transpose();
    delta.component_mul(m).sum() + (x - y).dot(v)
}

/// `‖x - u‖²_M - ‖x' - u‖²_M` from dense products.
fn dense_distance_gap(
    m: &DMatrix<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let a = x - u;
    let b = y - u;
    (a.transpose() * m * &a)[0] - (b.transpose() * m * &b)[0]
}

fn rel(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a.to_matrix() - b.to_matrix()).norm() / b.to_matrix().norm()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_measurement_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let d = 1 + i % 6;
        let m = random_pd(&mut r, d);
        let (u, x, y) = (
            gaussian(&mut r, d),
            gaussian(&mut r, d),
            gaussian(&mut r, d),
        );
        let md = m.to_matrix();
        let v = &md * &u * -2.0;
        let value = psi(&m, &x, &y, &u).map_err(|e| e.to_string())?;
        let linear = dense_linear(&md, &v, &x, &y);
        let gap = dense_distance_gap(&md, &x, &y, &u);
        let packed = feature(&x, &y)
            .and_then(|f| f.pair_with(&m, &v))
            .map_err(|e| e.to_string())?;
        let scale = 1.0 + value.abs();
        worst = worst
            .max((value - linear).abs() / scale)
            .max((gap - linear).abs() / scale)
            .max((packed - linear).abs() / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst <= 1e-9, || format!("max scaled gap {worst:.3e}"))?;
    ensure(secs < 1.0, || format!("took {secs:.2}s"))?;
    Ok(format!(
        "1000 instances, max scaled gap {worst:.2e}, {secs:.3}s"
    ))
}

fn respond(
    m: &SymMatrix,
    u: &DVector<f64>,
    pairs: Vec<(DVector<f64>, DVector<f64>)>,
) -> Vec<UnquantizedMeasurement> {
    pairs
        .into_iter()
        .map(|(x, y)| {
            let value = psi(m, &x, &y, u).unwrap();
            Measurement::new(x, y, value)
        })
        .collect()
}

fn c2_exact_unquantized() -> Outcome {
    let mut worst: f64 = 0.0;
    for d in 2..=6 {
        let p = d * (d + 1) / 2;
        for seed in 0..50 {
            let mut r = rng(1000 * d as u64 + seed);
            let m = random_pd(&mut r, d);
            // one user, enough comparisons for the full system
            let u = gaussian(&mut r, d);
            let pairs = (0..p + d + 2)
                .map(|_| (gaussian(&mut r, d), gaussian(&mut r, d)))
                .collect();
            let single = solve_single_user(&respond(&m, &u, pairs)).map_err(|e| e.to_string())?;
            ensure(single.unique, || {
                format!("d={d} seed={seed}: single user not unique")
            })?;
            worst = worst.max(rel(&single.metric, &m));
            // many users with d + 2 comparisons each
            let per_user: Vec<_> = (0..p)
                .map(|_| {
                    let u = gaussian(&mut r, d);
                    let pairs = (0..d + 2)
                        .map(|_| (gaussian(&mut r, d), gaussian(&mut r, d)))
                        .collect();
                    respond(&m, &u, pairs)
                })
                .collect();
            let multi = solve_multi_user(&per_user).map_err(|e| e.to_string())?;
            ensure(multi.unique, || {
                format!("d={d} seed={seed}: multi user not unique")
            })?;
            worst = worst.max(rel(&multi.metric, &m));
            // lines, solved per subspace and stitched
            let lines: Vec<Subspace> = (0..p + 2).map(|_| random_subspace(&mut r, d, 1)).collect();
            let estimates = lines
                .iter()
                .map(|v| {
                    let data: Vec<_> = (0..2)
                        .map(|_| {
                            let u = gaussian(&mut r, d);
                            let pairs = (0..3)
                                .map(|_| {
                                    (
                                        v.embed(&gaussian(&mut r, 1)).unwrap(),
                                        v.embed(&gaussian(&mut r, 1)).unwrap(),
                                    )
                                })
                                .collect();
                            respond(&m, &u, pairs)
                        })
                        .collect();
                    solve_subspace_unquantized(v, &data).map(|s| s.metric)
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let stitched = stitch_exact(&estimates).map_err(|e| e.to_string())?;
            worst = worst.max(rel(&stitched, &m));
        }
    }
    ensure(worst <= 1e-7, || format!("max relative error {worst:.3e}"))?;
    Ok(format!(
        "d=2..6 x 50 seeds x 3 routes, max relative error {worst:.2e}"
    ))
}

fn c3_impossibility() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for d in 2..=5 {
        for seed in 0..20 {
            let mut r = rng(3000 + 100 * d as u64 + seed);
            let m = random_pd(&mut r, d);
            let m_alt = random_pd(&mut r, d);
            let k = 2 + (seed as usize % 4);
            let graphs: Vec<ComparisonGraph> = (0..k)
                .map(|_| {
                    let rows = r.random_range(1..=d);
                    let items = (0..=rows).map(|_| gaussian(&mut r, d)).collect();
                    ComparisonGraph::new(items, (1..=rows).map(|j| (0, j)).collect()).unwrap()
                })
                .collect();
            let points: Vec<DVector<f64>> = (0..k).map(|_| gaussian(&mut r, d)).collect();
            let alt = impossibility_witness(&m, &m_alt, &graphs, &points)
                .map_err(|e| format!("d={d} seed={seed}: {e}"))?;
            let (md, mad) = (m.to_matrix(), m_alt.to_matrix());
            for ((g, v), v_alt) in graphs.iter().zip(&points).zip(&alt) {
                for &(i, j) in &g.edges {
                    let (x, y) = (&g.items[i], &g.items[j]);
                    let gap = dense_linear(&md, v, x, y) - dense_linear(&mad, v_alt, x, y);
                    worst = worst.max(gap.abs());
                }
            }
            let per_user: Vec<_> = graphs
                .iter()
                .zip(&points)
                .map(|(g, v)| g.respond(&m, v).unwrap())
                .collect();
            let sol = solve_multi_user(&per_user).map_err(|e| e.to_string())?;
            ensure(!sol.unique, || {
                format!("d={d} seed={seed}: solve_multi_user claimed uniqueness")
            })?;
            cases += 1;
        }
    }
    ensure(worst <= 1e-8, || {
        format!("max witness residual {worst:.3e}")
    })?;
    Ok(format!(
        "{cases} metric pairs, max witness residual {worst:.2e}, none unique"
    ))
}

fn c4_phantom_point() -> Outcome {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for i in 0..200 {
        let d = 2 + i % 5;
        let k = 1 + i % (d - 1);
        let m = random_pd(&mut r, d);
        let v = random_subspace(&mut r, d, k);
        let u = gaussian(&mut r, d);
        let (a, b) = (gaussian(&mut r, k), gaussian(&mut r, k));
        let (x, y) = (v.embed(&a).unwrap(), v.embed(&b).unwrap());
        let q = project_metric(&v, &m).map_err(|e| e.to_string())?.q;
        let u_v = phantom_point(&m, &v, &u).map_err(|e| e.to_string())?;
        let full = dense_distance_gap(&m.to_matrix(), &x, &y, &u);
        let reduced = dense_distance_gap(&q.to_matrix(), &a, &b, &u_v);
        worst = worst.max((full - reduced).abs());
    }
    ensure(worst <= 1e-9, || format!("max gap {worst:.3e}"))?;
    Ok(format!("200 instances, max |psi_M - psi_Q| {worst:.2e}"))
}

fn exact_estimates(m: &SymMatrix, lines: &[Subspace]) -> Vec<SubspaceMetric> {
    lines
        .iter()
        .map(|v| project_metric(v, m).unwrap())
        .collect()
}

fn c5_stitch_identifiability() -> Outcome {
    let mut worst: f64 = 0.0;
    for (d, needed) in [(3usize, 6usize), (10, 55)] {
        for seed in 0..30 {
            let mut r = rng(5000 + 100 * d as u64 + seed);
            let m = random_pd(&mut r, d);
            let lines: Vec<Subspace> = (0..needed).map(|_| random_subspace(&mut r, d, 1)).collect();
            let est = exact_estimates(&m, &lines);
            let a = stitch_exact(&est).map_err(|e| format!("d={d} n={needed}: {e}"))?;
            worst = worst.max(rel(&a, &m));
            match stitch_exact(&est[..needed - 1]) {
                Err(Error::Underdetermined { .. }) => {}
                other => {
                    return Err(format!(
                        "d={d} n={}: expected a rank error, got {other:?}",
                        needed - 1
                    ))
                }
            }
        }
    }
    ensure(worst <= 1e-8, || format!("max relative error {worst:.3e}"))?;
    Ok(format!(
        "d=3: 6 recover / 5 rank error; d=10: 55 / 54; 30 seeds; max error {worst:.2e}"
    ))
}

fn c6_shared_pair_designs() -> Outcome {
    let mut worst: f64 = 0.0;
    for r_dim in 1..=3usize {
        for seed in 0..10 {
            let mut r = rng(6000 + 10 * r_dim as u64 + seed);
            let d = r_dim + 3;
            let v = random_subspace(&mut r, d, r_dim);
            let m = random_pd(&mut r, d);
            let items: Vec<_> = (0..4 * r_dim + 4)
                .map(|_| v.embed(&gaussian(&mut r, r_dim)).unwrap())
                .collect();
            let designs = shared_pair_designs(&items, &v).map_err(|e| e.to_string())?;
            let k = r_dim * (r_dim + 1) / 2;
            ensure(designs.len() == k, || {
                format!("r={r_dim}: {} users, expected {k}", designs.len())
            })?;
            ensure(designs.iter().all(|g| g.len() == r_dim + 1), || {
                format!("r={r_dim}: design size is not r+1")
            })?;
            let data: Vec<_> = designs
                .iter()
                .map(|g| {
                    let u = gaussian(&mut r, d);
                    respond(
                        &m,
                        &u,
                        g.iter()
                            .map(|&(i, j)| (items[i].clone(), items[j].clone()))
                            .collect(),
                    )
                })
                .collect();
            let sol = solve_subspace_unquantized(&v, &data).map_err(|e| e.to_string())?;
            let truth = project_metric(&v, &m).unwrap().q;
            worst = worst.max(rel(&sol.metric.q, &truth));
        }
    }
    ensure(worst <= 1e-8, || format!("max relative error {worst:.3e}"))?;
    Ok(format!(
        "r=1..3, K=r(r+1)/2 users of r+1 comparisons, max error {worst:.2e}"
    ))
}

fn c7_psd_projection() -> Outcome {
    let mut r = rng(7);
    let mut idem: f64 = 0.0;
    for i in 0..200 {
        let a = random_sym(&mut r, 1 + i % 6);
        let p = psd_project(&a).unwrap();
        idem = idem.max(psd_project(&p).unwrap().distance(&p).unwrap());
    }
    ensure(idem <= 1e-12, || format!("idempotence gap {idem:.3e}"))?;
    let mut worst_margin = f64::INFINITY;
    for d in [2usize, 3] {
        for _ in 0..5 {
            let a = random_sym(&mut r, d);
            let p = psd_project(&a).unwrap();
            let best = p.distance(&a).unwrap();
            for j in 0..10_000 {
                let g = gaussian_matrix(&mut r, d, d);
                let psd = SymMatrix::from_matrix(&(&g * g.transpose())).unwrap();
                let cand = if j % 2 == 0 {
                    psd
                } else {
                    // near the projection, where a competitor is likeliest
                    SymMatrix::from_matrix(&(p.to_matrix() + psd.to_matrix() * 1e-3)).unwrap()
                };
                worst_margin = worst_margin.min(cand.distance(&a).unwrap() - best);
            }
        }
    }
    ensure(worst_margin >= -1e-10, || {
        format!("beaten by {:.3e}", -worst_margin)
    })?;
    Ok(format!(
        "idempotence gap {idem:.1e}; 10^5 candidates, closest margin {worst_margin:.2e}"
    ))
}

fn random_erm(r: &mut ChaCha8Rng, dim: usize, users: usize, per_user: usize) -> ErmData {
    let data: Vec<Vec<QuantizedMeasurement>> = (0..users)
        .map(|_| {
            (0..per_user)
                .map(|_| {
                    let y = if r.random::<bool>() {
                        Label::Pos
                    } else {
                        Label::Neg
                    };
                    Measurement::new(gaussian(r, dim), gaussian(r, dim), y)
                })
                .collect()
        })
        .collect();
    ErmData::new(dim, &data).unwrap()
}

fn c8_solver() -> Outcome {
    let mut r = rng(8);
    let mut worst_fd: f64 = 0.0;
    for i in 0..100 {
        let dim = 1 + i % 4;
        let users = 1 + i % 3;
        let data = random_erm(&mut r, dim, users, 1 + i % 5);
        let spec = LossSpec::Logistic {
            beta: r.random_range(0.5..4.0),
        };
        let a = random_sym(&mut r, dim);
        let w: Vec<DVector<f64>> = (0..users).map(|_| gaussian(&mut r, dim)).collect();
        let (_, ga, gw) = loss_value_grad(&spec, &data, &a, &w).map_err(|e| e.to_string())?;
        let f = |a: &SymMatrix, w: &[DVector<f64>]| loss_value_grad(&spec, &data, a, w).unwrap().0;
        let h = 1e-6;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for j in 0..a.packed().len() {
            let shift = |s: f64| {
                let mut p = a.packed().to_vec();
                p[j] += s;
                SymMatrix::from_packed(dim, p).unwrap()
            };
            numeric.push((f(&shift(h), &w) - f(&shift(-h), &w)) / (2.0 * h));
            analytic.push(ga.packed()[j]);
        }
        for k in 0..users {
            for j in 0..dim {
                let shift = |s: f64| {
                    let mut w2 = w.clone();
                    w2[k][j] += s;
                    w2
                };
                numeric.push((f(&a, &shift(h)) - f(&a, &shift(-h))) / (2.0 * h));
                analytic.push(gw[k][j]);
            }
        }
        let diff = DVector::from_vec(analytic.clone()) - DVector::from_vec(numeric);
        let norm = DVector::from_vec(analytic).norm().max(1e-8);
        worst_fd = worst_fd.max(diff.norm() / norm);
    }
    ensure(worst_fd <= 1e-5, || {
        format!("gradient relative error {worst_fd:.3e}")
    })?;

    let mut logged = 0;
    let mut iterates = 0;
    for i in 0..40 {
        let dim = 1 + i % 3;
        let users = 1 + i % 4;
        let data = random_erm(&mut r, dim, users, 2 + i % 6);
        let spec = if i % 4 == 3 {
            LossSpec::Hinge
        } else {
            LossSpec::Logistic {
                beta: 1.0 + (i % 3) as f64,
            }
        };
        let (zm, zv) = (r.random_range(0.2..3.0), r.random_range(0.2..3.0));
        let mut cfg = SolverConfig::new(zm, zv).unwrap();
        cfg.record_trace = true;
        cfg.max_iters = 2000;
        let fit = fit_constrained_erm(&data, &spec, &cfg).map_err(|e| e.to_string())?;
        for pair in fit.trace.windows(2) {
            ensure(pair[1].objective <= pair[0].objective, || {
                format!("run {i}: objective rose")
            })?;
        }
        for t in &fit.trace {
            ensure(
                t.min_eigenvalue >= -1e-8
                    && t.frobenius_norm <= zm + 1e-8
                    && t.max_w_norm <= zv + 1e-8,
                || format!("run {i}: infeasible iterate {t:?}"),
            )?;
        }
        logged += 1;
        iterates += fit.trace.len();
    }
    Ok(format!(
        "100 gradient checks, max relative error {worst_fd:.2e}; {logged} logged runs, {iterates} iterates monotone and feasible"
    ))
}

fn c9_stitch_bound() -> Outcome {
    let mut worst_slack = f64::INFINITY;
    for seed in 0..50 {
        let mut r = rng(9000 + seed);
        let d = 2 + (seed as usize % 4);
        let k = 1 + (seed as usize % 2).min(d - 1);
        let n = d * (d + 1) + 2;
        let m = random_pd(&mut r, d);
        let subspaces: Vec<Subspace> = (0..n).map(|_| random_subspace(&mut r, d, k)).collect();
        let eps = 10f64.powf(r.random_range(-4.0..-1.0));
        let noisy: Vec<SubspaceMetric> = subspaces
            .iter()
            .map(|v| {
                let q = project_metric(v, &m).unwrap().q;
                let e = random_sym(&mut r, k);
                let e = e.scaled(eps / e.frobenius_norm());
                SubspaceMetric::new(v.clone(), &q + &e).unwrap()
            })
            .collect();
        let pi = build_pi(&subspaces).map_err(|e| e.to_string())?;
        let fit = stitch_ls(&noisy).map_err(|e| e.to_string())?;
        let err = fit.metric.distance(&m).unwrap();
        let bound = (n as f64).sqrt() * eps / pi.min_singular();
        worst_slack = worst_slack.min(bound + 1e-9 - err);
    }
    ensure(worst_slack >= 0.0, || {
        format!("bound violated by {:.3e}", -worst_slack)
    })?;
    Ok(format!("50 instances, smallest slack {worst_slack:.2e}"))
}

fn spec(
    id: ExperimentId,
    d: usize,
    n: usize,
    users: &[usize],
    comparisons: &[usize],
    runs: usize,
) -> ExperimentSpec {
    let mut s = ExperimentSpec::preset(id);
    s.runs = runs;
    s.seed = 2024;
    s.d = vec![d];
    s.n_subspaces = vec![n];
    s.users = users.to_vec();
    s.comparisons = comparisons.to_vec();
    s.sigma = vec![0.0];
    s.beta_data = vec![1.0];
    s.model = vec![ModelSpec::MATCHED];
    s
}

fn mean_where(out: &ExperimentOutput, f: impl Fn(&CellSummary) -> bool) -> Result<f64, String> {
    let hits: Vec<&CellSummary> = out.summary.iter().filter(|s| f(s)).collect();
    match hits.as_slice() {
        [one] if one.failures == 0 => Ok(one.mean_rel_error),
        [one] => Err(format!("{} failed runs in a cell", one.failures)),
        _ => Err(format!("expected one matching cell, found {}", hits.len())),
    }
}

fn c10_experiment1_trend() -> Outcome {
    let out = run_experiment(&spec(ExperimentId::Exp1, 10, 80, &[10, 60], &[2, 4, 8], 10))
        .map_err(|e| e.to_string())?;
    let at =
        |k: usize, m: usize| mean_where(&out, |s| s.cell.users == k && s.cell.comparisons == m);
    let (k60m8, k60m2, k60m4, k10m4) = (at(60, 8)?, at(60, 2)?, at(60, 4)?, at(10, 4)?);
    ensure(k60m8 < k60m2, || {
        format!("(60,8) {k60m8:.4} !< (60,2) {k60m2:.4}")
    })?;
    ensure(k60m4 < k10m4, || {
        format!("(60,4) {k60m4:.4} !< (10,4) {k10m4:.4}")
    })?;
    Ok(format!(
        "mean rel_error (K,m): (60,2) {k60m2:.4}, (60,4) {k60m4:.4}, (60,8) {k60m8:.4}, (10,4) {k10m4:.4}"
    ))
}

fn c11_experiment2_threshold() -> Outcome {
    let mut s = spec(ExperimentId::Exp2, 4, 8, &[60], &[4], 10);
    s.n_subspaces = vec![8, 30];
    let out = run_experiment(&s).map_err(|e| e.to_string())?;
    let below = mean_where(&out, |c| c.cell.n_subspaces == 8)?;
    let above = mean_where(&out, |c| c.cell.n_subspaces == 30)?;
    let threshold = out.summary[0].threshold;
    ensure(threshold == 10, || {
        format!("threshold {threshold}, expected 10")
    })?;
    ensure(below >= 2.0 * above, || {
        format!("n=8 {below:.4} vs n=30 {above:.4}")
    })?;
    Ok(format!(
        "threshold n* = {threshold}; n=8 {below:.4}, n=30 {above:.4}, ratio {:.1}",
        below / above
    ))
}

fn c12_experiment3_degradation() -> Outcome {
    let mut s = spec(ExperimentId::Exp3, 6, 40, &[60], &[8], 10);
    s.sigma = vec![0.0, 0.1, 0.2, 0.3];
    let out = run_experiment(&s).map_err(|e| e.to_string())?;
    let means = s
        .sigma
        .iter()
        .map(|&sig| mean_where(&out, |c| c.cell.sigma == sig))
        .collect::<Result<Vec<_>, _>>()?;
    ensure(means.windows(2).all(|w| w[1] > w[0]), || {
        format!("means not increasing: {means:?}")
    })?;

    let plain = run_experiment(&spec(ExperimentId::Exp1, 6, 40, &[60], &[8], 10))
        .map_err(|e| e.to_string())?;
    let zero_rows: Vec<_> = out
        .rows
        .iter()
        .filter(|r| r.sigma == 0.0)
        .cloned()
        .collect();
    ensure(csv_string(&zero_rows) == csv_string(&plain.rows), || {
        "sigma=0 rows differ from the plain pipeline".into()
    })?;

    let mut strong = s.clone();
    strong.sigma = vec![0.1, 1.0];
    let diag = run_experiment(&strong).map_err(|e| e.to_string())?;
    let angle = diag.summary[1].mean_principal_angle;
    Ok(format!(
        "sigma 0/0.1/0.2/0.3: {:.4}/{:.4}/{:.4}/{:.4}; sigma=0 identical to no denoising; sigma=1: {:.4} (angle {angle:.3} rad)",
        means[0], means[1], means[2], means[3], diag.summary[1].mean_rel_error
    ))
}

fn c13_misspecification() -> Outcome {
    let matched = run_experiment(&spec(ExperimentId::Misspec, 10, 80, &[60], &[4], 10))
        .map_err(|e| e.to_string())?;
    let mut s = spec(ExperimentId::Misspec, 10, 80, &[60], &[4], 10);
    s.beta_data = vec![f64::INFINITY];
    s.model = vec![ModelSpec::Logistic { beta: Some(1.0) }];
    let noiseless = run_experiment(&s).map_err(|e| e.to_string())?;
    let base = matched.summary[0].mean_rel_error;
    let mis = noiseless.summary[0].mean_rel_error;
    ensure(
        matched.summary[0].failures == 0 && noiseless.summary[0].failures == 0,
        || "failed runs".into(),
    )?;
    ensure(mis <= 2.0 * base, || {
        format!("beta=inf/model 1: {mis:.4} vs matched {base:.4}")
    })?;

    let mut h = spec(ExperimentId::Misspec, 10, 80, &[60], &[4], 10);
    h.model = vec![ModelSpec::Hinge];
    let hinge = run_experiment(&h).map_err(|e| e.to_string())?;
    ensure(hinge.rows.iter().all(|r| r.rel_error.is_finite()), || {
        "hinge produced non-finite errors".into()
    })?;
    Ok(format!(
        "matched {base:.4}, beta_data=inf with beta_model=1 {mis:.4} (ratio {:.2}); hinge mean {:.4}, all finite",
        mis / base,
        hinge.summary[0].mean_rel_error
    ))
}

fn run_cli(
    dir: &Path,
    sub: &str,
    config: &Path,
    out: &str,
    jobs: usize,
) -> Result<Vec<u8>, String> {
    let out_path = dir.join(out);
    let status = Command::new(env!("CARGO_BIN_EXE_metric-stitch"))
        .args([
            sub,
            config.to_str().unwrap(),
            "--jobs",
            &jobs.to_string(),
            "--out",
            out_path.to_str().unwrap(),
        ])
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "{sub} --jobs {jobs} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    std::fs::read(&out_path).map_err(|e| e.to_string())
}

fn c14_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut configs = Vec::new();
    let mut e1 = spec(ExperimentId::Exp1, 5, 20, &[10, 20], &[2, 4], 3);
    e1.stitch = StitchKind::Huber;
    configs.push(("exp1", e1));
    let mut e3 = spec(ExperimentId::Exp3, 5, 20, &[10], &[4], 3);
    e3.sigma = vec![0.0, 0.2];
    configs.push(("exp3", e3));
    let mut ms = spec(ExperimentId::Misspec, 5, 20, &[10], &[4], 3);
    ms.beta_data = vec![4.0, f64::INFINITY];
    ms.model = vec![ModelSpec::Logistic { beta: Some(1.0) }, ModelSpec::Hinge];
    configs.push(("misspec", ms));
    let mut lines = 0;
    for (name, s) in &configs {
        let path = dir.path().join(format!("{name}.toml"));
        std::fs::write(&path, s.to_toml_string()).map_err(|e| e.to_string())?;
        let one = run_cli(dir.path(), name, &path, &format!("{name}-1.csv"), 1)?;
        let eight = run_cli(dir.path(), name, &path, &format!("{name}-8.csv"), 8)?;
        let again = run_cli(dir.path(), name, &path, &format!("{name}-8b.csv"), 8)?;
        ensure(one == eight && eight == again, || {
            format!("{name}: CSV differs across --jobs")
        })?;
        let summary = |tag: &str| {
            std::fs::read(dir.path().join(format!("{name}-{tag}.summary.csv"))).unwrap_or_default()
        };
        ensure(summary("1") == summary("8"), || {
            format!("{name}: summary differs across --jobs")
        })?;
        lines += one.iter().filter(|&&b| b == b'\n').count();
    }
    // the library path on an explicit pool agrees with the binary
    let mut lib_spec = configs[0].1.clone();
    lib_spec.output = Some(dir.path().join("lib.csv"));
    with_jobs(Some(3), || commands::experiment(&lib_spec))
        .and_then(|r| r)
        .map_err(|e| e.to_string())?;
    let lib_bytes = std::fs::read(dir.path().join("lib.csv")).map_err(|e| e.to_string())?;
    let cli_bytes = std::fs::read(dir.path().join("exp1-1.csv")).map_err(|e| e.to_string())?;
    ensure(lib_bytes == cli_bytes, || {
        "library output differs from the binary".into()
    })?;
    Ok(format!(
        "exp1, exp3, misspec byte-identical for --jobs 1, 8, 8 ({lines} CSV lines)"
    ))
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("measurement-model equivalence", c1_measurement_equivalence),
        ("exact unquantized recovery", c2_exact_unquantized),
        ("impossibility witness", c3_impossibility),
        ("phantom point", c4_phantom_point),
        ("stitch identifiability", c5_stitch_identifiability),
        ("shared-pair designs", c6_shared_pair_designs),
        ("PSD projection", c7_psd_projection),
        ("solver correctness", c8_solver),
        ("stage-2 error bound", c9_stitch_bound),
        ("experiment 1 trend", c10_experiment1_trend),
        ("experiment 2 threshold", c11_experiment2_threshold),
        ("experiment 3 degradation", c12_experiment3_degradation),
        ("misspecification robustness", c13_misspecification),
        ("reproducibility", c14_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
