//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use poscon::metrics::{audit_l2_gain, audit_contraction, audit_positivity, KappaSpec};
use poscon::model::{is_metzler, small_eigenvalues, AgentModel, DisturbanceSignal, PatternModel, ToleranceConfig};
use poscon::numerics::{mat_from_rows, Mat, Vector};
use poscon::regulator::solve_regulator;
use poscon::scenario::{BuiltScenario, RunMode, Scenario};
use poscon::sim::{build_closed_loop, build_generator, integrate_lti, InitialConditions, Integrator};
use poscon::synthesis::{
    check_state_conditions, input_gamma_form, select_mu, synthesize_gain_set, ConditionSet, ControllerKind, GainSet,
    MuChoice, SynthesisRequest, M_INPUT_GAMMA,
};
use poscon::topology::{Graph, SwitchingSchedule};

struct Outcome {
    pass: bool,
    summary: String,
}

fn outcome(pass: bool, summary: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        summary: summary.into(),
    }
}

fn example() -> BuiltScenario {
    Scenario::example().build().expect("built-in scenario")
}

/// Published class data: (representative agent, X, U).
fn published_regulator() -> Vec<(usize, Mat, Mat)> {
    vec![
        (
            0,
            mat_from_rows(&[&[0.5960, 0.5960], &[0.1980, 0.1980], &[1.0, 1.0]]),
            mat_from_rows(&[&[0.2160, 0.2160]]),
        ),
        (2, mat_from_rows(&[&[0.4975, 0.4975], &[1.0, 1.0]]), mat_from_rows(&[&[0.0100, 0.0100]])),
        (4, mat_from_rows(&[&[0.5000, 0.5000], &[0.1661, 0.1661]]), mat_from_rows(&[&[0.0050, 0.0050]])),
    ]
}

/// Published gains `(K1, K2, K3)` for agents 1..8.
fn published_gains() -> Vec<(Mat, Mat, Mat)> {
    let class1 = (
        mat_from_rows(&[&[0.0, 0.0, -1.0]]),
        mat_from_rows(&[&[1.2160, 1.2160]]),
        mat_from_rows(&[&[0.0], &[0.0], &[1.0]]),
    );
    let class3 = (
        mat_from_rows(&[&[0.0, -1.0]]),
        mat_from_rows(&[&[1.0100, 1.0100]]),
        mat_from_rows(&[&[0.0], &[1.0]]),
    );
    let class5 = (
        mat_from_rows(&[&[-1.0, 0.0]]),
        mat_from_rows(&[&[0.5050, 0.5050]]),
        mat_from_rows(&[&[1.0], &[0.0]]),
    );
    [&class1, &class1, &class3, &class3, &class5, &class5, &class1, &class5]
        .into_iter()
        .cloned()
        .collect()
}

fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    if a.shape() != b.shape() {
        return f64::INFINITY;
    }
    (a - b).amax()
}

fn reproduce_gains(s: &BuiltScenario) -> Result<GainSet, String> {
    let report = synthesize_gain_set(
        &s.agents,
        &s.pattern,
        &s.schedule,
        &s.request(RunMode::Reproduce, true, None),
        &s.tolerances,
    );
    match report.gains {
        Some(g) if report.failures.is_empty() => Ok(g),
        _ => Err(format!("{:?}", report.failures)),
    }
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let s = example();
    let mut worst = 0.0_f64;
    let mut residual = 0.0_f64;
    for (idx, x, u) in published_regulator() {
        match solve_regulator(&s.agents[idx], &s.pattern, &s.tolerances) {
            Ok(sol) => {
                worst = worst.max(max_abs_diff(&sol.x, &x)).max(max_abs_diff(&sol.u, &u));
                residual = residual.max(sol.residual);
            }
            Err(e) => return outcome(false, format!("agent {}: {e}", idx + 1)),
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-3 && residual <= 1e-8 && elapsed < Duration::from_secs(1),
        format!("max |X,U - published| = {worst:.2e} (<= 1e-3), residual = {residual:.1e} (<= 1e-8), {elapsed:.2?} (< 1 s)"),
    )
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let s = example();
    let gains = match reproduce_gains(&s) {
        Ok(g) => g,
        Err(e) => return outcome(false, format!("synthesis failed: {e}")),
    };
    let elapsed = start.elapsed();
    let mut worst = 0.0_f64;
    for (g, (k1, k2, k3)) in gains.agents.iter().zip(published_gains()) {
        worst = worst
            .max(max_abs_diff(&g.k1, &k1))
            .max(max_abs_diff(&g.k2, &k2))
            .max(g.k3.as_ref().map_or(f64::INFINITY, |k| max_abs_diff(k, &k3)));
    }
    outcome(
        worst <= 1e-3 && elapsed < Duration::from_secs(1),
        format!("max |K - published| over 8 agents = {worst:.2e} (<= 1e-3), {elapsed:.2?} (< 1 s)"),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let s = example();
    let tol = ToleranceConfig::default();
    let a3 = check_state_conditions(&s.agents[2], &[1.0, 1.0], 2.0, 4.0, &tol);
    let sym = input_gamma_form(&s.agents[2], &Mat::identity(2, 2), 4.0);
    let mut eig: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    let oracle = [-4.275_680_149_6, -0.599_319_850_4];
    let eig_err = eig.iter().zip(oracle).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let a5 = check_state_conditions(&s.agents[4], &[1.0, 1.0], 3.0, 4.0, &tol);
    let diag5 = a5.get(M_INPUT_GAMMA).and_then(|m| m.detail.clone()).unwrap_or_default();
    let a5_infeasible = !a5.all_pass() && diag5 == "diagonal entry (1,1) = 2.062500 > 0";
    let elapsed = start.elapsed();
    outcome(
        a3.all_pass() && eig_err < 1e-6 && a5_infeasible && elapsed < Duration::from_millis(100),
        format!(
            "agent 3 feasible = {}, eigenvalues = [{:.6}, {:.6}] (oracle err {eig_err:.1e}); agent 5 infeasible = {a5_infeasible} ({diag5}); {elapsed:.2?} (< 0.1 s)",
            a3.all_pass(),
            eig[0],
            eig[1]
        ),
    )
}

fn example_run(zero_disturbance: bool) -> Result<(BuiltScenario, GainSet, poscon::sim::Trajectory, Duration), String> {
    let start = Instant::now();
    let s = example();
    let gains = reproduce_gains(&s)?;
    let d = if zero_disturbance {
        DisturbanceSignal::Zero { dim: 1 }
    } else {
        s.disturbance.clone()
    };
    let sys = build_closed_loop(&s.agents, &gains, &s.pattern, &s.schedule, &d, &s.initial).map_err(|e| e.to_string())?;
    let traj = sys.integrate(200.0, 0.01, Integrator::Rk4).map_err(|e| e.to_string())?;
    Ok((s, gains, traj, start.elapsed()))
}

fn ac4() -> Outcome {
    let (_, _, traj, elapsed) = match example_run(true) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let last = traj.len() - 1;
    let worst_err = (0..8).map(|i| traj.error_norm(last, i)).fold(0.0, f64::max);
    let all_min = traj.states.iter().map(|s| s.min()).fold(f64::INFINITY, f64::min);
    outcome(
        worst_err < 1e-3 && all_min >= -1e-8 && elapsed < Duration::from_secs(30),
        format!("max_i ||e_i(200)|| = {worst_err:.2e} (< 1e-3), min state entry = {all_min:.2e} (>= -1e-8), {elapsed:.2?} (< 30 s)"),
    )
}

fn ac5() -> Outcome {
    let (s, gains, traj, elapsed) = match example_run(false) {
        Ok(r) => r,
        Err(e) => return outcome(false, e),
    };
    let pos = audit_positivity(&traj, 1e-8);
    let l2 = audit_l2_gain(
        &traj,
        4.0,
        KappaSpec::Auto {
            agents: &s.agents,
            gains: Some(&gains),
            lambda_min: s.schedule.lambda_min(),
        },
    );
    let l2 = match l2 {
        Ok(a) => a,
        Err(e) => return outcome(false, format!("L2 audit: {e}")),
    };
    let min_slack = l2.slack.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        pos.pass && l2.pass && elapsed < Duration::from_secs(30),
        format!(
            "min entry = {:.2e} (>= -1e-8), min_i L2 slack = {min_slack:.3e} (>= 0, gamma^2 int d^2 = {:.1}), {elapsed:.2?} (< 30 s)",
            pos.positivity_min,
            16.0 * l2.l2_disturbance
        ),
    )
}

fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.gen_range(0..v), v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.gen_bool(0.25) && !edges.contains(&(a, b)) {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, &edges).expect("valid edges")
}

fn random_schedule(rng: &mut ChaCha8Rng, n: usize, horizon: f64) -> SwitchingSchedule {
    let family: Vec<Graph> = (0..rng.gen_range(1..=3)).map(|_| random_connected(rng, n)).collect();
    let order: Vec<usize> = (0..family.len()).collect();
    // periods on a 0.01 grid keep switch instants representable on the step grid
    let period = rng.gen_range(50..=400) as f64 / 100.0;
    SwitchingSchedule::periodic(family, &order, period, horizon).expect("valid schedule")
}

fn random_pattern(rng: &mut ChaCha8Rng) -> PatternModel {
    PatternModel::new(
        mat_from_rows(&[&[rng.gen_range(0.0..0.02), rng.gen_range(0.0..0.02)], &[0.0, 0.0]]),
        mat_from_rows(&[&[1.0, 1.0]]),
    )
    .expect("pattern")
}

fn ac6() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tol = ToleranceConfig::default();
    let mut failures = 0;
    let mut worst_rel = f64::INFINITY;
    let mut worst_entry = f64::INFINITY;
    for _ in 0..50 {
        let n = rng.gen_range(2..=6);
        let n0 = rng.gen_range(1..=2);
        let a0 = DMatrix::from_fn(n0, n0, |i, j| {
            if i == j {
                rng.gen_range(-0.5..0.5)
            } else {
                rng.gen_range(0.0..0.5)
            }
        });
        let pattern = PatternModel::new(a0, Mat::from_element(1, n0, 1.0)).expect("pattern");
        let schedule = random_schedule(&mut rng, n, 10.0);
        let mu = select_mu(&pattern, &schedule, 0.0, &tol).expect("connected family");
        let w0: Vec<Vector> = (0..n).map(|_| DVector::from_fn(n0, |_, _| rng.gen_range(0.0..7.0))).collect();
        let sys = build_generator(&pattern, &schedule, mu, &w0).expect("generator");
        let traj = match sys.integrate(10.0, 0.01, Integrator::Rk4) {
            Ok(t) => t,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let bound = audit_contraction(&traj, schedule.lambda_min());
        let pos = audit_positivity(&traj, 1e-8);
        let rel = bound.margin / bound.initial_disagreement.max(f64::MIN_POSITIVE);
        worst_rel = worst_rel.min(rel);
        worst_entry = worst_entry.min(pos.positivity_min);
        if !(bound.pass && pos.pass) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        failures == 0 && elapsed < Duration::from_secs(60),
        format!(
            "50 scenarios, {failures} failures; min relative margin = {worst_rel:.2e} (>= -1e-6), min w entry = {worst_entry:.2e} (>= -1e-8), {elapsed:.2?} (< 60 s)"
        ),
    )
}

struct RandomLoop {
    agents: Vec<AgentModel>,
    gains: GainSet,
    pattern: PatternModel,
    schedule: SwitchingSchedule,
    disturbance: DisturbanceSignal,
    init: InitialConditions,
}

/// Random closed loop built from perturbed copies of the example agent
/// classes. Returns `None` when synthesis rejects the draw.
fn random_loop(rng: &mut ChaCha8Rng, kind: ControllerKind, horizon: f64) -> Option<RandomLoop> {
    let classes = example();
    let reps = [0usize, 2, 4];
    let n = rng.gen_range(2..=5);
    let agents: Vec<AgentModel> = (0..n)
        .map(|i| {
            let base = &classes.agents[reps[rng.gen_range(0..3)]];
            let shift = if rng.gen_bool(0.5) { rng.gen_range(0.0..0.3) } else { 0.0 };
            let a = &base.a - Mat::identity(base.state_dim(), base.state_dim()) * shift;
            AgentModel::new(format!("agent {}", i + 1), a, base.b.clone(), base.c.clone(), base.d.clone()).expect("agent")
        })
        .collect();
    let pattern = random_pattern(rng);
    let schedule = random_schedule(rng, n, horizon);
    let request = SynthesisRequest {
        kind,
        conditions: ConditionSet::Full,
        gamma: Some(4.0),
        relaxed_fallback: true,
        mu: MuChoice::Auto { margin: 0.5 },
        ..SynthesisRequest::default()
    };
    let report = synthesize_gain_set(&agents, &pattern, &schedule, &request, &ToleranceConfig::default());
    let gains = report.gains.filter(|_| report.failures.is_empty())?;
    let disturbance = if rng.gen_bool(0.5) {
        DisturbanceSignal::Zero { dim: 1 }
    } else {
        DisturbanceSignal::Constant(DVector::from_element(1, rng.gen_range(0.0..1.0)))
    };
    let x0: Vec<Vector> = agents
        .iter()
        .map(|a| DVector::from_fn(a.state_dim(), |_, _| rng.gen_range(0.0..7.0)))
        .collect();
    let w0 = match kind {
        ControllerKind::OutputFeedback => None,
        ControllerKind::StateFeedback => Some((0..n).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(0.0..7.0))).collect()),
    };
    Some(RandomLoop {
        agents,
        gains,
        pattern,
        schedule,
        disturbance,
        init: InitialConditions { x0, xi0: Vec::new(), w0 },
    })
}

/// Relative end-of-interval error of RK4 against the exact flow, started
/// from the same state at the interval start.
fn interval_errors(sys: &poscon::sim::ClosedLoopSystem, horizon: f64, step: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut state = sys.initial_state().clone();
    for (start, end, p) in sys.schedule().intervals(horizon) {
        let len = end - start;
        let steps = ((len / step) - 1e-9).ceil().max(1.0) as usize;
        let h = len / steps as f64;
        let mut rk = state.clone();
        for j in 0..steps {
            rk = sys.rk4_step(p, start + j as f64 * h, &rk, h);
        }
        let (phi, offset) = sys.exact_step(p, len).expect("exact flow");
        let exact = phi * &state + offset;
        out.push((&rk - &exact).norm() / exact.norm().max(1e-300));
        state = exact;
    }
    out
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scenarios = 0;
    let mut rejected = 0;
    let mut worst = 0.0_f64;
    let mut ratios = Vec::new();
    while scenarios < 20 {
        let kind = if rng.gen_bool(0.5) {
            ControllerKind::StateFeedback
        } else {
            ControllerKind::OutputFeedback
        };
        let Some(lp) = random_loop(&mut rng, kind, 20.0) else {
            rejected += 1;
            continue;
        };
        let sys = build_closed_loop(&lp.agents, &lp.gains, &lp.pattern, &lp.schedule, &lp.disturbance, &lp.init)
            .expect("closed loop");
        worst = interval_errors(&sys, 20.0, 0.01).into_iter().fold(worst, f64::max);
        // refinement study on the first interval only, at steps large enough
        // that truncation dominates rounding
        let first = sys.schedule().intervals(20.0)[0];
        let coarse = interval_errors(&sys, first.1, 0.1)[0];
        let fine = interval_errors(&sys, first.1, 0.05)[0];
        ratios.push(coarse / fine);
        scenarios += 1;
    }
    ratios.sort_by(f64::total_cmp);
    let median = 0.5 * (ratios[9] + ratios[10]);
    outcome(
        worst <= 1e-6 && (12.0..=20.0).contains(&median),
        format!(
            "20 scenarios ({rejected} draws rejected by synthesis); max relative interval-end error = {worst:.2e} (<= 1e-6); halving h: median ratio = {median:.2} (in [12, 20]), range [{:.2}, {:.2}]; {:.2?}",
            ratios[0],
            ratios[19],
            start.elapsed()
        ),
    )
}

fn ac8() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut runs = 0;
    let mut disturbed_runs = 0;
    let mut rejected = 0;
    let mut worst = 0.0_f64;
    let mut unforced_gap = 0.0_f64;
    let mut bad_k3 = Vec::new();
    while runs < 20 {
        let Some(lp) = random_loop(&mut rng, ControllerKind::OutputFeedback, 20.0) else {
            rejected += 1;
            continue;
        };
        let sys = build_closed_loop(&lp.agents, &lp.gains, &lp.pattern, &lp.schedule, &lp.disturbance, &lp.init)
            .expect("closed loop");
        let traj = sys.integrate(20.0, 0.01, Integrator::Rk4).expect("integration");
        let d = lp.disturbance.eval(0.0);
        let disturbed = !lp.disturbance.is_zero();
        disturbed_runs += disturbed as usize;
        for (i, (agent, g)) in lp.agents.iter().zip(&lp.gains.agents).enumerate() {
            let k3 = g.k3.as_ref().expect("output gains");
            let err_dyn = &agent.a - k3 * &agent.c;
            let hurwitz = small_eigenvalues(&err_dyn).is_ok_and(|ev| ev.iter().all(|z| z.re < 0.0));
            if !(is_metzler(&err_dyn, 0.0) && hurwitz) {
                bad_k3.push(format!("run {runs} agent {}", i + 1));
            }
            // x̄' = (A - K3 C) x̄ + D d, written as an LTI system on [x̄; 1]
            let n = agent.state_dim();
            let mut forced = Mat::zeros(n + 1, n + 1);
            forced.view_mut((0, 0), (n, n)).copy_from(&err_dyn);
            forced.view_mut((0, n), (n, 1)).copy_from(&(&agent.d * &d));
            let x = traj.layout.x(i);
            let xi = traj.layout.xi(i).expect("observer block");
            let bar0 = traj.states[0].rows_range(x.clone()) - traj.states[0].rows_range(xi.clone());
            let mut aug0 = Vector::from_element(n + 1, 1.0);
            aug0.rows_mut(0, n).copy_from(&bar0);
            let direct = integrate_lti(&forced, &aug0, 20.0, 0.01);
            let unforced = integrate_lti(&err_dyn, &bar0, 20.0, 0.01);
            for (k, s) in traj.states.iter().enumerate() {
                let simulated = s.rows_range(x.clone()) - s.rows_range(xi.clone());
                worst = worst.max((&simulated - direct[k].rows(0, n)).amax());
                if disturbed {
                    unforced_gap = unforced_gap.max((&simulated - &unforced[k]).amax());
                } else {
                    worst = worst.max((&simulated - &unforced[k]).amax());
                }
            }
        }
        runs += 1;
    }
    outcome(
        worst <= 1e-7 && bad_k3.is_empty(),
        format!(
            "20 runs ({disturbed_runs} with d != 0, {rejected} draws rejected); max |x_i - xi_i - xbar_i| = {worst:.2e} (<= 1e-7, xbar driven by (A - K3 C) and D d only); \
             d-free model on d != 0 runs is off by {unforced_gap:.2e}; A - K3 C not Metzler+Hurwitz: {bad_k3:?}; {:.2?}",
            start.elapsed()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("regulator regression", ac1),
        ("gain regression", ac2),
        ("feasibility witness", ac3),
        ("nominal consensus", ac4),
        ("robust run", ac5),
        ("generator contraction suite", ac6),
        ("exact-flow equivalence", ac7),
        ("observer-error autonomy", ac8),
    ];
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!("AC{} {} {name}: {}", k + 1, if o.pass { "PASS" } else { "FAIL" }, o.summary);
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
