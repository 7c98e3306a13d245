//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Formula, gradient, budget, world-model and determinism criteria are exact
//! properties of the implementation and fail the process when they break.
//! Ordering, learning-curve and ablation criteria compare trained agents
//! across seeds; they are reported as measured and never fail the process,
//! so a regression shows up as a FAIL line rather than a tuned threshold.

use bcs_core::agent::{BufferKind, ReplayBuffer};
use bcs_core::artifacts::write_curve;
use bcs_core::bcs::{
    controller_route, epoch_rate, poisson_pmf, sample_goal, CategoryStats, ControllerThresholds, GoalSampling, Route,
    ScheduleKind,
};
use bcs_core::domain::{Experience, ExperienceSource};
use bcs_core::env::{run_dialogue, DqnPolicy};
use bcs_core::harness::{run, AgentKind, Experiment, RunArtifacts, RunConfig};
use bcs_core::kb::{categorize_goals, enumerate_goals};
use bcs_core::nn::{binary_cross_entropy, mse, softmax_cross_entropy, Activation, DenseNet, InitScheme};
use bcs_core::world_model::{WorldModel, WorldModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::HashMap;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

const SEEDS: u64 = 5;
const EPOCHS: u64 = 100;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Trained runs shared between criteria, keyed by (agent, budget, seed).
struct Runs {
    exp: Experiment,
    cache: HashMap<(AgentKind, u64, u64), Arc<RunArtifacts>>,
}

impl Runs {
    fn get(&mut self, kind: AgentKind, budget: u64, seed: u64) -> Arc<RunArtifacts> {
        let exp = &self.exp;
        self.cache
            .entry((kind, budget, seed))
            .or_insert_with(|| Arc::new(run(exp, &RunConfig::new(kind, budget, EPOCHS, seed)).unwrap()))
            .clone()
    }

    fn seeds(&mut self, kind: AgentKind, budget: u64) -> Vec<Arc<RunArtifacts>> {
        (0..SEEDS).map(|s| self.get(kind, budget, s)).collect()
    }

    fn finals(&mut self, kind: AgentKind, budget: u64) -> Vec<f64> {
        self.seeds(kind, budget).iter().map(|r| r.final_metrics().success_rate).collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn fmt_all(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(" ")
}

fn formula_suite() -> Verdict {
    let mut failures = Vec::new();

    // Poisson pmf against the textbook formula, evaluated independently.
    for lambda in [0.5f64, 1.0, 2.0, 2.9851, 7.5, 30.0] {
        for n in 0..=60i64 {
            let mut oracle = (-lambda).exp();
            for i in 1..=n {
                oracle *= lambda / i as f64;
            }
            let got = poisson_pmf(n, lambda).unwrap();
            if (got - oracle).abs() > 1e-9 {
                failures.push(format!("pmf({n}, {lambda})"));
            }
        }
    }

    for (b, m) in [(300u64, 200u64), (50, 10), (7, 3)] {
        let total: f64 = (1..=m).map(|k| epoch_rate(ScheduleKind::Decayed, b, m, k).unwrap()).sum();
        if (total - b as f64).abs() > 1e-9 * b as f64 {
            failures.push(format!("sum of rates for b={b}, m={m} is {total}"));
        }
    }

    let t = ControllerThresholds::default();
    for s in [0.0, 0.33, 1.0 / 3.0, 0.34, 0.66, 2.0 / 3.0, 0.67, 1.0] {
        for b_k in 0..=3u64 {
            let expected = if b_k == 0 || s >= 2.0 / 3.0 {
                (Route::Sim, 0)
            } else if s <= 1.0 / 3.0 && b_k >= 2 {
                (Route::Hh, 2)
            } else {
                (Route::Ha, 1)
            };
            if controller_route(s, b_k, t) != expected {
                failures.push(format!("controller({s}, {b_k})"));
            }
        }
    }

    let exp_goals = enumerate_goals(&bcs_core::kb::default_kb(), 0, 300);
    let cats = categorize_goals(&exp_goals, 2);
    let mut stats = CategoryStats::new(2);
    stats.failure_rate = vec![0.9, 0.1];
    stats.counts = vec![100, 100];
    let sigma = (2.0 * 200f64.ln() / 100.0).sqrt();
    let oracle = Normal::new(0.0, 1.0).unwrap().cdf(0.8 / (sigma * 2f64.sqrt()));
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| sample_goal(&cats, &stats, 2, GoalSampling::Active, &mut rng).unwrap().1 == 0)
        .count();
    let p = hits as f64 / n as f64;
    if (p - 0.959).abs() > 0.01 || (p - oracle).abs() > 0.01 {
        failures.push(format!("thompson P(select) {p:.4}"));
    }

    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("pmf, rate sums, 32-cell controller grid, thompson {p:.4} (oracle {oracle:.4})")
        } else {
            failures.join("; ")
        },
    )
}

/// Central finite differences of `loss` around `params` at the given
/// indices; returns the worst relative error against `analytic`.
fn worst_error(
    params: &[f64],
    analytic: &[f64],
    indices: &[usize],
    loss: &mut dyn FnMut(&[f64]) -> f64,
) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for &i in indices {
        p[i] = params[i] + h;
        let up = loss(&p);
        p[i] = params[i] - h;
        let down = loss(&p);
        p[i] = params[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
    }
    worst
}

fn flat_grads(g: &bcs_core::nn::Gradients) -> Vec<f64> {
    g.layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(&l.biases).copied().collect::<Vec<_>>())
        .collect()
}

fn gradient_checks(exp: &Experiment) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst: f64 = 0.0;
    let trials = 50;

    // Small nets with each output head and its loss.
    for trial in 0..trials / 2 {
        let out = [Activation::Linear, Activation::Softmax, Activation::Sigmoid][trial % 3];
        let dims = [5, 8, if out == Activation::Sigmoid { 1 } else { 3 }];
        let net = DenseNet::new(&dims, &[Activation::Tanh, out], rng.random(), InitScheme::Glorot).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let class = rng.random_range(0..3);
        let flag = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let loss_of = |y: &[f64]| -> (f64, Vec<f64>) {
            match out {
                Activation::Softmax => softmax_cross_entropy(y, class),
                Activation::Sigmoid => {
                    let (l, g) = binary_cross_entropy(y[0], flag);
                    (l, vec![g])
                }
                _ => mse(y, &target),
            }
        };
        let cache = net.forward(&x).unwrap();
        let analytic = flat_grads(&net.backward(&cache, &loss_of(cache.output()).1).unwrap());
        let params = net.flat_params();
        let mut probe = net.clone();
        let all: Vec<usize> = (0..params.len()).collect();
        worst = worst.max(worst_error(&params, &analytic, &all, &mut |p| {
            probe.set_flat_params(p).unwrap();
            loss_of(&probe.predict(&x).unwrap()).0
        }));
    }

    // Full world model: shared trunk over [state, one-hot action] and three
    // 80-unit heads, trained jointly.
    let mut batch_pool: Vec<Experience> = Vec::new();
    let mut expert = DqnPolicy {
        agent: &exp.expert,
        epsilon: 0.3,
    };
    for g in exp.goals.iter().take(20) {
        batch_pool.extend(run_dialogue(&exp.env, &mut expert, g, ExperienceSource::HumanAgent, &mut rng).unwrap().experiences);
    }
    for _ in 0..trials / 2 {
        let config = WorldModelConfig {
            hidden_size: 80,
            ..WorldModelConfig::default()
        };
        let wm = WorldModel::new(config, exp.env.state_dim(), exp.env.actions.len(), exp.vocab.clone(), rng.random()).unwrap();
        let batch: Vec<Experience> = (0..4).map(|_| batch_pool[rng.random_range(0..batch_pool.len())].clone()).collect();
        let refs: Vec<&Experience> = batch.iter().collect();
        let (_, grads) = wm.gradients(&refs).unwrap();
        for (net_index, g) in grads.iter().enumerate() {
            let analytic = flat_grads(g);
            let params = wm.nets()[net_index].flat_params();
            let indices: Vec<usize> = (0..20).map(|_| rng.random_range(0..params.len())).collect();
            let mut probe = wm.clone();
            worst = worst.max(worst_error(&params, &analytic, &indices, &mut |p| {
                probe.nets_mut()[net_index].set_flat_params(p).unwrap();
                probe.losses(&batch).unwrap().total()
            }));
        }
    }
    verdict(worst < 1e-4, format!("{trials} trials, worst relative error {worst:.2e}"))
}

fn budget_safety(runs: &mut Runs) -> Verdict {
    let mut checked = 0;
    let mut failures = Vec::new();
    for kind in AgentKind::ALL {
        for budget in [50, 300] {
            for run in runs.seeds(kind, budget) {
                let l = run.ledger;
                let logged_ok = !kind.is_bcs() || run.routes.iter().map(|r| r.cost).sum::<u64>() == l.spent_total;
                if l.spent_total > budget || 2 * l.hh + l.ha != l.spent_total || !logged_ok {
                    failures.push(format!("{kind} b={budget} seed={}", run.config.seed));
                }
                checked += 1;
            }
        }
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{checked} runs audited")
        } else {
            failures.join("; ")
        },
    )
}

/// Soft criterion: every mean condition holds and each pairwise condition
/// holds on at least 4 of the 5 seeds.
fn ordering(runs: &mut Runs) -> Verdict {
    let bcs = runs.finals(AgentKind::BcsDdq, 300);
    let ddq = runs.finals(AgentKind::Ddq, 300);
    let dqn = runs.finals(AgentKind::Dqn, 300);
    let sl50 = runs.finals(AgentKind::Sl, 50);
    let dqn50 = runs.finals(AgentKind::Dqn, 50);
    let wins = |a: &[f64], b: &[f64], margin: f64| a.iter().zip(b).filter(|(x, y)| **x >= **y + margin).count();
    let checks = [
        (mean(&bcs) >= mean(&ddq) + 0.05, wins(&bcs, &ddq, 0.05)),
        (mean(&ddq) >= mean(&dqn), wins(&ddq, &dqn, 0.0)),
        (mean(&sl50) >= mean(&dqn50), wins(&sl50, &dqn50, 0.0)),
    ];
    let pass = checks.iter().all(|(m, w)| *m && *w >= 4);
    verdict(
        pass,
        format!(
            "b=300 BCS-DDQ {:.3} [{}] DDQ {:.3} [{}] DQN {:.3} [{}]; b=50 SL {:.3} [{}] DQN {:.3} [{}]; seed wins {}/{}/{}",
            mean(&bcs),
            fmt_all(&bcs),
            mean(&ddq),
            fmt_all(&ddq),
            mean(&dqn),
            fmt_all(&dqn),
            mean(&sl50),
            fmt_all(&sl50),
            mean(&dqn50),
            fmt_all(&dqn50),
            checks[0].1,
            checks[1].1,
            checks[2].1
        ),
    )
}

fn curve_shape(runs: &mut Runs) -> Verdict {
    let at = |rs: &[Arc<RunArtifacts>]| mean(&rs.iter().map(|r| r.success_at(EPOCHS / 4).unwrap()).collect::<Vec<_>>());
    let bcs = at(&runs.seeds(AgentKind::BcsDdq, 300));
    let dqn = at(&runs.seeds(AgentKind::Dqn, 300));
    verdict(
        bcs >= dqn + 0.10,
        format!("epoch {}: BCS-DDQ {bcs:.3} vs DQN {dqn:.3}", EPOCHS / 4),
    )
}

fn ablation(runs: &mut Runs) -> Verdict {
    let bcs = mean(&runs.finals(AgentKind::BcsDdq, 300));
    let var1 = mean(&runs.finals(AgentKind::BcsVar1, 300));
    let var2 = mean(&runs.finals(AgentKind::BcsVar2, 300));
    let pass = bcs >= var1 && var1 >= var2 && bcs - var2 >= bcs - var1;
    verdict(pass, format!("BCS-DDQ {bcs:.3}, var1 {var1:.3}, var2 {var2:.3}"))
}

fn world_model_sanity(exp: &Experiment) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut demo = DqnPolicy {
        agent: &exp.expert,
        epsilon: 0.0,
    };
    let mut real = ReplayBuffer::new(BufferKind::Real, 1000);
    while real.len() < 1000 {
        let goal = &exp.goals[rng.random_range(0..exp.goals.len())];
        let episode = run_dialogue(&exp.env, &mut demo, goal, ExperienceSource::HumanHuman, &mut rng).unwrap();
        for e in episode.experiences {
            if real.len() < 1000 {
                real.push(e).unwrap();
            }
        }
    }
    let mut held = Vec::new();
    for _ in 0..200 {
        let goal = &exp.goals[rng.random_range(0..exp.goals.len())];
        held.extend(run_dialogue(&exp.env, &mut demo, goal, ExperienceSource::HumanHuman, &mut rng).unwrap().experiences);
    }
    let mut wm = WorldModel::new(
        WorldModelConfig::default(),
        exp.env.state_dim(),
        exp.env.actions.len(),
        exp.vocab.clone(),
        5,
    )
    .unwrap();
    wm.train(&real, 1000, &mut rng).unwrap();
    let e = wm.evaluate(&held).unwrap();
    let chance = 1.0 / exp.vocab.len() as f64;
    let ratio = e.reward_mse / e.zero_reward_mse;
    verdict(
        e.user_act_accuracy > 5.0 * chance && ratio < 0.25,
        format!(
            "user-act accuracy {:.3} vs 5x chance {:.3}; reward MSE {:.1} = {:.1}% of predict-zero {:.1}",
            e.user_act_accuracy,
            5.0 * chance,
            e.reward_mse,
            100.0 * ratio,
            e.zero_reward_mse
        ),
    )
}

fn determinism(runs: &mut Runs) -> Verdict {
    let first = runs.get(AgentKind::BcsDdq, 300, 0);
    let second = run(&runs.exp, &RunConfig::new(AgentKind::BcsDdq, 300, EPOCHS, 0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_curve(&a, &first.curve).unwrap();
    write_curve(&b, &second.curve).unwrap();
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    verdict(a == b, format!("two BCS-DDQ runs, seed 0: curve.csv {} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    // Respect the usual filter argument so `cargo test <name>` in other
    // targets does not trigger this long suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }

    let mut runs = Runs {
        exp: Experiment::standard().unwrap(),
        cache: HashMap::new(),
    };
    let mut hard_failures = 0;
    let mut report = |name: &str, hard: bool, f: &mut dyn FnMut(&mut Runs) -> Verdict, runs: &mut Runs| {
        let start = Instant::now();
        let v = f(runs);
        let status = if v.pass { "PASS" } else { "FAIL" };
        let kind = if hard { "" } else { " (reported)" };
        println!(
            "{status} {name}{kind}: {} [{:.1}s]",
            v.detail,
            start.elapsed().as_secs_f64()
        );
        if hard && !v.pass {
            hard_failures += 1;
        }
    };
    report("formula suite", true, &mut |_| formula_suite(), &mut runs);
    report("gradient checks", true, &mut |r| gradient_checks(&r.exp), &mut runs);
    report("world-model sanity", true, &mut |r| world_model_sanity(&r.exp), &mut runs);
    report("budget safety", true, &mut budget_safety, &mut runs);
    report("ordering", false, &mut ordering, &mut runs);
    report("learning-curve shape", false, &mut curve_shape, &mut runs);
    report("ablation ordering", false, &mut ablation, &mut runs);
    report("determinism", true, &mut determinism, &mut runs);
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
