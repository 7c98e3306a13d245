use bcs_core::bcs::Route;
use bcs_core::harness::{run, run_ablation, run_baseline, run_bcs_ddq, AgentKind, Experiment, RunArtifacts, RunConfig};
use std::sync::OnceLock;

fn experiment() -> &'static Experiment {
    static EXP: OnceLock<Experiment> = OnceLock::new();
    EXP.get_or_init(|| Experiment::standard().unwrap())
}

/// Short runs: few epochs, small evaluations, light pretraining.
fn quick(kind: AgentKind, budget: u64, seed: u64) -> RunConfig {
    RunConfig {
        eval_dialogues: 10,
        warm_start_dialogues: 8,
        warm_start_agent_dialogues: 2,
        rbs_steps: 100,
        wm_pretrain_steps: 50,
        max_updates_per_epoch: 20,
        max_wm_updates_per_epoch: 10,
        rollouts_per_estimate: 4,
        goal_cap_per_epoch: 10,
        ..RunConfig::new(kind, budget, 6, seed)
    }
}

fn audit(artifacts: &RunArtifacts) {
    let ledger = artifacts.ledger;
    let b = artifacts.config.budget;
    assert!(ledger.spent_total <= b, "{} overspent", artifacts.config.agent_kind);
    assert_eq!(2 * ledger.hh + ledger.ha, ledger.spent_total);
    // The route log has to tell the same story as the ledger.
    if artifacts.config.agent_kind.is_bcs() {
        let count = |r: Route| artifacts.routes.iter().filter(|row| row.route == r).count() as u64;
        assert_eq!(count(Route::Hh), ledger.hh);
        assert_eq!(count(Route::Ha), ledger.ha);
        assert_eq!(count(Route::Sim), ledger.sim);
        let logged: u64 = artifacts.routes.iter().map(|row| row.cost).sum();
        assert_eq!(logged, ledger.spent_total);
    }
    let mut last = 0;
    for m in &artifacts.curve {
        assert!((0.0..=1.0).contains(&m.success_rate));
        assert!(m.budget_spent_cumulative >= last && m.budget_spent_cumulative <= b);
        last = m.budget_spent_cumulative;
    }
    assert!(artifacts.agent.q_net().is_finite());
}

#[test]
fn zero_budget_routes_everything_to_simulation() {
    let artifacts = run(experiment(), &quick(AgentKind::BcsDdq, 0, 1)).unwrap();
    assert!(!artifacts.routes.is_empty());
    assert!(artifacts.routes.iter().all(|r| r.route == Route::Sim && r.cost == 0));
    assert_eq!(artifacts.ledger.spent_total, 0);
    audit(&artifacts);
}

#[test]
fn every_agent_kind_stays_within_budget() {
    for kind in AgentKind::ALL {
        for budget in [7, 20] {
            let artifacts = run(experiment(), &quick(kind, budget, 2)).unwrap();
            audit(&artifacts);
            assert_eq!(artifacts.curve.len(), 7, "{kind}: one evaluation per epoch plus the initial one");
        }
    }
}

#[test]
fn supervised_budget_buys_demonstrations_only() {
    let artifacts = run_baseline(experiment(), &quick(AgentKind::Sl, 50, 3)).unwrap();
    assert_eq!(artifacts.ledger.hh, 25);
    assert_eq!(artifacts.ledger.ha, 0);
    assert_eq!(artifacts.ledger.spent_total, 50);
    // Spent before the first evaluation.
    assert_eq!(artifacts.curve[0].budget_spent_cumulative, 50);
    assert!(artifacts.real_buffer_sources.0 > 0);
    assert_eq!(artifacts.real_buffer_sources.1, 0);
}

#[test]
fn fixed_spend_baselines_spread_the_budget() {
    let artifacts = run_baseline(experiment(), &quick(AgentKind::Dqn, 20, 4)).unwrap();
    // 20 over 6 epochs: 4, 4, 3, 3, 3, 3.
    let spent: Vec<u64> = artifacts.curve.iter().map(|m| m.budget_spent_cumulative).collect();
    assert_eq!(spent, vec![0, 4, 8, 11, 14, 17, 20]);
    assert_eq!(artifacts.ledger.ha, 20);
    assert!(artifacts.world_model.is_none());
    assert!(artifacts.routes.is_empty());
    assert_eq!(artifacts.ledger.sim, 0, "DQN never simulates");
}

#[test]
fn ddq_without_planning_is_dqn() {
    let dqn = run(experiment(), &quick(AgentKind::Dqn, 12, 5)).unwrap();
    let mut config = quick(AgentKind::Ddq, 12, 5);
    config.planning_steps = 0;
    let ddq = run(experiment(), &config).unwrap();
    assert_eq!(ddq.curve, dqn.curve);
    assert_eq!(ddq.routes, dqn.routes);
    assert_eq!(ddq.agent.q_net().flat_params(), dqn.agent.q_net().flat_params());
}

#[test]
fn world_model_training_never_reads_simulated_experience() {
    for kind in [AgentKind::Ddq, AgentKind::BcsDdq] {
        let artifacts = run(experiment(), &quick(kind, 12, 6)).unwrap();
        assert!(artifacts.world_model.is_some());
        assert_eq!(artifacts.wm_simulated_reads, 0);
    }
}

#[test]
fn constant_rate_ablation_keeps_lambda_fixed() {
    let artifacts = run_ablation(experiment(), &quick(AgentKind::BcsVar1, 30, 7)).unwrap();
    let lambdas: Vec<f64> = artifacts.routes.iter().map(|r| r.lambda_k).collect();
    assert!(!lambdas.is_empty());
    assert!(lambdas.iter().all(|&l| l == 30.0 / 6.0));
    let decayed = run_bcs_ddq(experiment(), &quick(AgentKind::BcsDdq, 30, 7)).unwrap();
    let first = decayed.routes.first().unwrap().lambda_k;
    let last = decayed.routes.last().unwrap().lambda_k;
    assert!(first > last, "decayed rates shrink over epochs");
}

#[test]
fn entry_points_check_the_agent_kind() {
    assert!(run_bcs_ddq(experiment(), &quick(AgentKind::Dqn, 1, 0)).is_err());
    assert!(run_baseline(experiment(), &quick(AgentKind::BcsVar1, 1, 0)).is_err());
    assert!(run_ablation(experiment(), &quick(AgentKind::BcsDdq, 1, 0)).is_err());
}

#[test]
fn identical_seeds_give_identical_runs() {
    let a = run(experiment(), &quick(AgentKind::BcsVar2, 15, 8)).unwrap();
    let b = run(experiment(), &quick(AgentKind::BcsVar2, 15, 8)).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.routes, b.routes);
    let c = run(experiment(), &quick(AgentKind::BcsVar2, 15, 9)).unwrap();
    assert_ne!(a.routes, c.routes);
}
