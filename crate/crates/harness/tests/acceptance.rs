//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use banditlab::config::{AlgoSpec, ExperimentConfig, InstanceConfig};
use banditlab::experiment::{dynamics_metrics, mean_stderr, run_experiment};
use banditlab_core::alexp::{exp_weights_update, schedule_eta};
use banditlab_core::baselines::log_barrier_omd;
use banditlab_core::diagnostics::{restricted_eigenvalue, EigenMethod, EigenOptions};
use banditlab_core::environment::SyntheticEnv;
use banditlab_core::grouplasso::{solve_problem, GramProblem, LassoSchedule, SolveStatus, SolverOptions};
use banditlab_core::legendre::{ActionGrid, ModelClass};
use banditlab_core::ridge::{FeatureMap, RidgeAgent};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn instance(p: usize, s: usize, n: usize) -> InstanceConfig {
    InstanceConfig {
        p,
        s,
        sigma: 0.01,
        n,
        grid_size: 512,
        models: None,
        model_seed: 0,
        census_min_shared: None,
    }
}

fn experiment(inst: InstanceConfig, algorithms: Vec<AlgoSpec>) -> ExperimentConfig {
    ExperimentConfig {
        instance: inst,
        algorithms,
        seeds: (0..20).collect(),
        output_dir: "unused".into(),
        svg: false,
        diagnostics: None,
    }
}

fn instance_counts() -> Outcome {
    let start = Instant::now();
    let easy = ModelClass::enumerate(10, 2).map_err(|e| e.to_string())?.num_models();
    let large = ModelClass::enumerate(10, 3).map_err(|e| e.to_string())?.num_models();
    let hard = ModelClass::enumerate(10, 8).map_err(|e| e.to_string())?;
    let censuses: Vec<usize> = (0..hard.num_models()).map(|j| hard.overlap_census(j, 6)).collect();
    let census_min = *censuses.iter().min().unwrap();
    let census_max = *censuses.iter().max().unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let sub = ModelClass::sample_on(10, 8, 55, &ActionGrid::default(), 0).map_err(|e| e.to_string())?;
    let sub_census: Vec<usize> = (0..sub.num_models()).map(|j| sub.overlap_census(j, 6)).collect();
    let sub_mean = sub_census.iter().sum::<usize>() as f64 / sub_census.len() as f64;
    let detail = format!(
        "(10,2) -> {easy}, (10,3) -> {large}, (10,8) -> {} (expected 55), census >= 6 shared -> {census_min}..={census_max} (expected 36), {elapsed:.2}s; \
         55-model subsample of (10,8): mean census {sub_mean:.1}",
        hard.num_models()
    );
    ensure(
        easy == 55 && large == 165 && hard.num_models() == 55 && census_min == 36 && census_max == 36 && elapsed < 1.0,
        detail,
    )
}

fn benchmark_ordering() -> Outcome {
    let mut etc = AlgoSpec::defaults("etc").unwrap();
    etc.set_param("n0", 20.0).unwrap();
    let algos = vec![
        AlgoSpec::defaults("oracle_ucb").unwrap(),
        AlgoSpec::defaults("alexp").unwrap(),
        AlgoSpec::defaults("naive_ucb").unwrap(),
        etc,
        AlgoSpec::defaults("corral").unwrap(),
    ];
    let start = Instant::now();
    let result = run_experiment(&experiment(instance(10, 2, 100), algos)).map_err(|e| e.to_string())?;
    let stats: Vec<(String, f64, f64)> = result
        .runs
        .iter()
        .map(|r| {
            let finals: Vec<f64> = r.traces.iter().map(|t| t.cumulative_regret()).collect();
            let (m, se) = mean_stderr(&finals);
            (r.spec.name().to_string(), m, se)
        })
        .collect();
    let get = |name: &str| stats.iter().find(|s| s.0 == name).map(|s| (s.1, s.2)).unwrap();
    let (oracle, _) = get("oracle_ucb");
    let (alexp, alexp_se) = get("alexp");
    let (naive, naive_se) = get("naive_ucb");
    let (etc, _) = get("etc");
    let (corral, _) = get("corral");
    let pooled = (alexp_se.powi(2) + naive_se.powi(2)).sqrt();
    let detail = format!(
        "R(100): oracle {oracle:.3}, alexp {alexp:.3}, naive {naive:.3}, etc {etc:.3}, corral {corral:.3}; naive - alexp = {:.3} vs pooled se {pooled:.3}; {:.1}s",
        naive - alexp,
        start.elapsed().as_secs_f64()
    );
    ensure(
        oracle < alexp && alexp < naive && alexp < etc && alexp < corral && naive - alexp > pooled,
        detail,
    )
}

fn learning_dynamics() -> Outcome {
    let result = run_experiment(&experiment(instance(10, 3, 20), vec![AlgoSpec::defaults("alexp").unwrap()]))
        .map_err(|e| e.to_string())?;
    let m = result.instance.model_class.num_models();
    let mut sparse_visits = 0;
    let mut top_decile = 0;
    let mut fractions = Vec::new();
    let mut ranks = Vec::new();
    for (trace, info) in result.runs[0].traces.iter().zip(&result.seeds) {
        let at20 = dynamics_metrics(trace, info.oracle_index)[19].clone();
        fractions.push(at20.visited_fraction);
        ranks.push(at20.oracle_rank);
        if at20.visited_fraction <= 0.15 {
            sparse_visits += 1;
        }
        if at20.oracle_rank * 10 <= m {
            top_decile += 1;
        }
    }
    let max_fraction = fractions.iter().cloned().fold(0.0, f64::max);
    let detail = format!(
        "M = {m}; visited <= 15% in {sparse_visits}/20 seeds (max {:.1}%); j* in top decile of q_20 in {top_decile}/20 seeds (ranks {ranks:?})",
        100.0 * max_fraction
    );
    ensure(sparse_visits >= 15 && top_decile >= 12, detail)
}

fn kkt_violation(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>, g: usize, lambda: f64) -> f64 {
    let t = x.nrows() as f64;
    let corr = x.transpose() * (y - x * theta) * (2.0 / t);
    let mut worst: f64 = 0.0;
    for j in 0..theta.len() / g {
        let c = corr.rows(j * g, g);
        let th = theta.rows(j * g, g);
        let n = th.norm();
        let v = if n > 0.0 {
            (c - th * (2.0 * lambda / n)).norm()
        } else {
            (c.norm() - 2.0 * lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst / (1.0 + 2.0 * lambda)
}

fn lasso_kkt() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let opts = SolverOptions {
        record_objective: true,
        ..SolverOptions::default()
    };
    let mut worst: f64 = 0.0;
    let mut unconverged = 0;
    let mut increases = 0;
    for _ in 0..100 {
        let t = rng.random_range(1..=50);
        let m = rng.random_range(1..=10);
        let g = rng.random_range(1..=3);
        let x = DMatrix::from_fn(t, m * g, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(t, |_, _| rng.random_range(-1.0..1.0));
        let lambda = 10f64.powf(rng.random_range(-3.0..0.0));
        let est = solve_problem(&GramProblem::from_design(&x, &y, g).unwrap(), lambda, None, &opts)
            .map_err(|e| e.to_string())?;
        if est.status != SolveStatus::Converged {
            unconverged += 1;
        }
        if est.objective_trace.windows(2).any(|w| w[1] > w[0]) {
            increases += 1;
        }
        worst = worst.max(kkt_violation(&x, &y, &est.theta_hat, g, lambda));
    }
    ensure(
        worst <= 1e-6 && unconverged == 0 && increases == 0,
        format!("max KKT residual {worst:.2e}, unconverged {unconverged}, runs with an objective increase {increases}"),
    )
}

fn anytime_coverage() -> Outcome {
    let start = Instant::now();
    let grid = ActionGrid::default();
    let mc = ModelClass::enumerate_on(3, 2, &grid).map_err(|e| e.to_string())?;
    let (m, g) = (mc.num_models(), mc.group_size());
    let delta = 0.1;
    let schedule = LassoSchedule::new(0.01, m, g, delta, 1.0).map_err(|e| e.to_string())?;
    let eig = EigenOptions {
        restarts: 2,
        iterations: 60,
        seed: 0,
    };
    let runs = 100;
    let mut covered = 0;
    for run in 0..runs as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + run);
        let j = rng.random_range(0..m);
        let mut theta: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        theta.iter_mut().for_each(|v| *v /= norm);
        let mut env = SyntheticEnv::with_parameters(mc.clone(), grid.clone(), j, theta, 0.01, run)
            .map_err(|e| e.to_string())?;
        let truth = DVector::from_vec(env.theta_concat());
        let mut problem = GramProblem::empty(mc.dim(), g).unwrap();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut estimate = DVector::zeros(mc.dim());
        let mut all_hold = true;
        for t in 1..=200 {
            let x = grid.point(rng.random_range(0..grid.len()));
            let y = env.observe(x).map_err(|e| e.to_string())?;
            let phi = mc.concat_feature_vector(x).map_err(|e| e.to_string())?;
            problem.push_row(&phi, y);
            rows.push(phi);
            let lambda = schedule.lambda(t);
            estimate = solve_problem(&problem, lambda, Some(&estimate), &SolverOptions::default())
                .map_err(|e| e.to_string())?
                .theta_hat;
            let design = DMatrix::from_fn(t, mc.dim(), |r, c| rows[r][c]);
            let kappa = restricted_eigenvalue(&design, g, 2, &eig).map_err(|e| e.to_string())?.kappa_hat;
            let radius = if kappa > 0.0 { 4.0 * 10f64.sqrt() * lambda / (kappa * kappa) } else { f64::INFINITY };
            if (&truth - &estimate).norm() > radius {
                all_hold = false;
                break;
            }
        }
        if all_hold {
            covered += 1;
        }
    }
    let freq = covered as f64 / runs as f64;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(
        freq >= 1.0 - delta && elapsed < 120.0,
        format!("simultaneous coverage {covered}/{runs} = {freq:.2} (need >= {:.2}), {elapsed:.1}s", 1.0 - delta),
    )
}

fn exp_weights_lemma() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    let mut checks = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..50 {
        let m = rng.random_range(2..=30);
        let eta0 = 10f64.powf(rng.random_range(-1.0..1.5));
        let bound = 1.0 / eta0;
        let n = 200;
        let mut cum = vec![0.0; m];
        let mut q = vec![1.0 / m as f64; m];
        let mut lhs_k = vec![0.0; m];
        let mut mixed = 0.0;
        let mut second = 0.0;
        for t in 1..=n {
            let rhat: Vec<f64> = (0..m).map(|_| rng.random_range(-bound..=bound)).collect();
            let eta = schedule_eta(eta0, t, None);
            assert!(rhat.iter().all(|r| eta * r <= 1.0));
            mixed += q.iter().zip(&rhat).map(|(a, b)| a * b).sum::<f64>();
            second += eta * q.iter().zip(&rhat).map(|(a, b)| a * b * b).sum::<f64>();
            for (l, r) in lhs_k.iter_mut().zip(&rhat) {
                *l += r;
            }
            let rhs = (m as f64).ln() / eta + second;
            for &l in &lhs_k {
                checks += 1;
                let slack = rhs - (l - mixed);
                tightest = tightest.min(slack);
                if slack < -1e-12 {
                    violations += 1;
                }
            }
            for (c, r) in cum.iter_mut().zip(&rhat) {
                *c += r;
            }
            q = exp_weights_update(&cum, eta);
        }
    }
    ensure(
        violations == 0,
        format!("{violations} violations over {checks} (k, n) checks; smallest slack {tightest:.3e}"),
    )
}

fn omd_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_simplex, mut worst_residual, mut worst_equal): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..1000 {
        let m = rng.random_range(2..=50);
        let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.01..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / total).collect();
        let eta: Vec<f64> = (0..m).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();
        let loss: Vec<f64> = if k % 2 == 0 {
            (0..m).map(|_| rng.random_range(-5.0..5.0)).collect()
        } else {
            // importance-weighted one-hot, as Corral produces
            let mut l = vec![0.0; m];
            l[rng.random_range(0..m)] = rng.random_range(-20.0..20.0);
            l
        };
        let out = log_barrier_omd(&q, &loss, &eta).map_err(|e| e.to_string())?;
        let sum: f64 = out.q.iter().sum();
        worst_simplex = worst_simplex.max((sum - 1.0).abs());
        if out.q.iter().any(|&v| !(v > 0.0)) {
            worst_simplex = f64::INFINITY;
        }
        worst_residual = worst_residual.max(out.residual);
        let c = rng.random_range(-3.0..3.0);
        let same = log_barrier_omd(&q, &vec![c; m], &eta).map_err(|e| e.to_string())?;
        for (a, b) in same.q.iter().zip(&q) {
            worst_equal = worst_equal.max((a - b).abs());
        }
    }
    ensure(
        worst_simplex <= 1e-10 && worst_residual < 1e-12 && worst_equal <= 1e-12,
        format!("max |sum q - 1| {worst_simplex:.2e}, max root residual {worst_residual:.2e}, max equal-loss drift {worst_equal:.2e}"),
    )
}

/// Exact minimum of `b^T A b` over `v` in `[-r, r]` along coordinate `k`, all else fixed.
fn line_min(a: &DMatrix<f64>, b: &mut DVector<f64>, k: usize, r: f64) -> f64 {
    b[k] = 0.0;
    let lin = (a * &*b)[k];
    let quad = a[(k, k)];
    b[k] = if quad > 0.0 { (-lin / quad).clamp(-r, r) } else if lin > 0.0 { -r } else { r };
    b.dot(&(a * &*b))
}

/// Dense-grid cone minimum for scalar groups, `M <= 3`: one free direction is
/// gridded, the last free coordinate is minimised exactly.
fn brute_force_kappa(phi: &DMatrix<f64>, s: usize) -> f64 {
    let t = phi.nrows() as f64;
    let a = phi.transpose() * phi / t;
    let m = a.nrows();
    let steps = 200_000;
    let mut best = f64::INFINITY;
    for size in 1..=s.min(m) {
        let supports: Vec<Vec<usize>> = match (m, size) {
            (_, 1) => (0..m).map(|j| vec![j]).collect(),
            (2, 2) => vec![vec![0, 1]],
            (3, 2) => vec![vec![0, 1], vec![0, 2], vec![1, 2]],
            _ => unreachable!(),
        };
        for support in supports {
            let rest: Vec<usize> = (0..m).filter(|j| !support.contains(j)).collect();
            for i in 0..=steps {
                let f = i as f64 / steps as f64;
                let mut b = DVector::zeros(m);
                let budget;
                if size == 1 {
                    b[support[0]] = 1.0;
                    budget = 3.0;
                } else {
                    let th = std::f64::consts::PI * f;
                    b[support[0]] = th.cos();
                    b[support[1]] = th.sin();
                    budget = 3.0 * (th.cos().abs() + th.sin().abs());
                }
                let value = match rest.len() {
                    0 => b.dot(&(&a * &b)),
                    1 => line_min(&a, &mut b, rest[0], budget),
                    _ => {
                        if size == 1 {
                            let v = -budget + 2.0 * budget * f;
                            b[rest[0]] = v;
                            line_min(&a, &mut b, rest[1], budget - v.abs())
                        } else {
                            unreachable!()
                        }
                    }
                };
                best = best.min(value);
                if size == 1 && rest.len() <= 1 {
                    break;
                }
            }
        }
    }
    best.max(0.0).sqrt()
}

fn kappa_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for _ in 0..10 {
        for m in 2..=3 {
            for s in 1..=2 {
                let t = rng.random_range(1..=8);
                let phi = DMatrix::from_fn(t, m, |_, _| rng.random_range(-1.0..1.0));
                let est = restricted_eigenvalue(&phi, 1, s, &EigenOptions::default()).map_err(|e| e.to_string())?;
                worst = worst.max((est.kappa_hat - brute_force_kappa(&phi, s)).abs());
                cases += 1;
            }
        }
    }
    let mut exact = true;
    for (t, d, g) in [(4, 4, 1), (6, 6, 2), (8, 4, 2)] {
        let mut phi = DMatrix::zeros(t, d);
        for c in 0..d {
            phi[(c, c)] = (t as f64).sqrt();
        }
        let rep = restricted_eigenvalue(&phi, g, 2, &EigenOptions::default()).map_err(|e| e.to_string())?;
        exact &= rep.kappa_hat == 1.0 && rep.method == EigenMethod::ExactOrthonormal;
    }
    ensure(
        worst < 1e-3 && exact,
        format!("{cases} random designs, max |kappa_hat - brute force| {worst:.2e}; orthonormal designs exact: {exact}"),
    )
}

fn ridge_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let grid = ActionGrid::new(128).unwrap();
    let mc = ModelClass::enumerate_on(8, 3, &grid).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let reg = rng.random_range(0.01..1.0);
        let map = FeatureMap::new(mc.model(rng.random_range(0..mc.num_models())).to_vec(), mc.scale());
        let mut agent = RidgeAgent::new(map.clone(), reg, 2.0).unwrap();
        let t = rng.random_range(1..=15);
        let xs: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let ys: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (&x, &y) in xs.iter().zip(&ys) {
            agent.observe(x, y).map_err(|e| e.to_string())?;
        }
        let a = DMatrix::from_fn(t, map.dim(), |r, c| map.eval(xs[r]).unwrap()[c]);
        let v = a.transpose() * &a + DMatrix::identity(map.dim(), map.dim()) * (reg * reg);
        let lu = v.lu();
        let w = lu.solve(&(a.transpose() * DVector::from_column_slice(&ys))).unwrap();
        for _ in 0..10 {
            let x = rng.random_range(-1.0..=1.0);
            let phi = map.eval(x).unwrap();
            let (mu, sd) = agent.get_posterior(x).map_err(|e| e.to_string())?;
            let mu_p = phi.dot(&w);
            let sd_p = reg * phi.dot(&lu.solve(&phi).unwrap()).max(0.0).sqrt();
            worst = worst.max((mu - mu_p).abs()).max((sd - sd_p).abs());
        }
    }
    ensure(worst < 1e-8, format!("50 instances, max kernel/primal gap {worst:.2e}"))
}

fn read_all_csv(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "seeds = [0, 1, 2]\noutput_dir = \"{}\"\n[instance]\np = 5\ns = 2\nn = 40\ngrid_size = 128\n\
             [algorithms.alexp]\n[algorithms.oracle_ucb]\n[algorithms.naive_ucb]\n[algorithms.etc]\nn0 = 10\n\
             [algorithms.ets]\nn0 = 10\n[algorithms.corral]\n",
            out.display()
        ),
    )
    .map_err(|e| e.to_string())?;
    let mut snapshots = Vec::new();
    for threads in ["1", "3"] {
        let status = Command::new(env!("CARGO_BIN_EXE_banditlab"))
            .args(["run", "--config"])
            .arg(&config)
            .env("BANDITLAB_THREADS", threads)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("banditlab run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        snapshots.push(read_all_csv(&out));
    }
    let files = snapshots[0].len();
    ensure(
        files > 0 && snapshots[0] == snapshots[1],
        format!("{files} CSV files compared byte for byte across two runs (1 and 3 worker threads)"),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("instance counts", instance_counts),
        ("benchmark ordering", benchmark_ordering),
        ("learning dynamics", learning_dynamics),
        ("group-lasso KKT suite", lasso_kkt),
        ("anytime coverage", anytime_coverage),
        ("exponential-weights bound", exp_weights_lemma),
        ("log-barrier OMD", omd_checks),
        ("restricted-eigenvalue oracle", kappa_oracle),
        ("ridge kernel/primal equivalence", ridge_equivalence),
        ("end-to-end determinism", end_to_end_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {:<32} {tag}  {detail}", i + 1, name);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
