//! Run artifacts on disk: `curve.csv`, `routes.csv`, `result.json`,
//! checkpoints, and aggregation across runs for plotting.

use crate::harness::{AgentKind, EpochMetrics, RouteLogRow, RunArtifacts};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

const CURVE_HEADER: [&str; 8] = [
    "epoch",
    "success_rate",
    "avg_reward",
    "avg_turns",
    "budget_spent_cumulative",
    "hh_dialogues",
    "ha_dialogues",
    "sim_dialogues",
];

const ROUTE_HEADER: [&str; 9] = [
    "epoch",
    "lambda_k",
    "b_k_drawn",
    "b_k_clamped",
    "goals_sampled",
    "route",
    "cost",
    "S_gu",
    "category_id",
];

/// Four-decimal rendering used for every metric column.
pub fn fmt4(x: f64) -> String {
    format!("{x:.4}")
}

pub fn write_curve(path: &Path, curve: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for m in curve {
        w.write_record([
            m.epoch.to_string(),
            fmt4(m.success_rate),
            fmt4(m.avg_reward),
            fmt4(m.avg_turns),
            m.budget_spent_cumulative.to_string(),
            m.hh_dialogues.to_string(),
            m.ha_dialogues.to_string(),
            m.sim_dialogues.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_routes(path: &Path, routes: &[RouteLogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ROUTE_HEADER)?;
    for r in routes {
        w.write_record([
            r.epoch.to_string(),
            fmt4(r.lambda_k),
            r.b_k_drawn.to_string(),
            r.b_k_clamped.to_string(),
            r.goals_sampled.to_string(),
            r.route.as_str().to_string(),
            r.cost.to_string(),
            r.s_gu.map(fmt4).unwrap_or_default(),
            r.category_id.map(|c| c.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_routes(path: &Path) -> Result<Vec<RouteLogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Contents of `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent_kind: AgentKind,
    pub budget: u64,
    pub epochs: u64,
    pub seed: u64,
    pub final_metrics: EpochMetrics,
    pub ledger: crate::bcs::BudgetLedger,
    pub config: crate::harness::RunConfig,
}

impl RunSummary {
    pub fn of(run: &RunArtifacts) -> Self {
        Self {
            agent_kind: run.config.agent_kind,
            budget: run.config.budget,
            epochs: run.config.epochs,
            seed: run.config.seed,
            final_metrics: *run.final_metrics(),
            ledger: run.ledger,
            config: run.config.clone(),
        }
    }
}

/// Writes every artifact of a run into `dir`.
pub fn save_run(dir: &Path, run: &RunArtifacts) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_curve(&dir.join("curve.csv"), &run.curve)?;
    write_routes(&dir.join("routes.csv"), &run.routes)?;
    fs::write(dir.join("result.json"), serde_json::to_string_pretty(&RunSummary::of(run))?)?;
    run.agent.save(&dir.join("agent.ckpt"))?;
    if let Some(wm) = &run.world_model {
        wm.save(&dir.join("world_model.ckpt"))?;
    }
    Ok(())
}

/// Directory of one run inside a sweep: `<root>/<agent>/b<budget>/seed<seed>`.
pub fn run_dir(root: &Path, agent: AgentKind, budget: u64, seed: u64) -> PathBuf {
    root.join(agent.as_str()).join(format!("b{budget}")).join(format!("seed{seed}"))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// One aggregated point of a learning curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub agent: AgentKind,
    pub budget: u64,
    pub epoch: u64,
    pub runs: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub reward_mean: f64,
    pub turns_mean: f64,
}

/// Aggregates runs of one (agent, budget) group epoch by epoch.
pub fn aggregate_curves(agent: AgentKind, budget: u64, curves: &[Vec<EpochMetrics>]) -> Vec<CurvePoint> {
    let mut by_epoch: BTreeMap<u64, Vec<&EpochMetrics>> = BTreeMap::new();
    for curve in curves {
        for m in curve {
            by_epoch.entry(m.epoch).or_default().push(m);
        }
    }
    by_epoch
        .into_iter()
        .map(|(epoch, ms)| {
            let success: Vec<f64> = ms.iter().map(|m| m.success_rate).collect();
            let (success_mean, success_std) = mean_std(&success);
            let reward: Vec<f64> = ms.iter().map(|m| m.avg_reward).collect();
            let turns: Vec<f64> = ms.iter().map(|m| m.avg_turns).collect();
            CurvePoint {
                agent,
                budget,
                epoch,
                runs: ms.len(),
                success_mean,
                success_std,
                reward_mean: mean_std(&reward).0,
                turns_mean: mean_std(&turns).0,
            }
        })
        .collect()
}

/// Final success of one (agent, budget) group across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub agent: AgentKind,
    pub budget: u64,
    pub runs: usize,
    pub final_success_mean: f64,
    pub final_success_std: f64,
}

/// Every run found under a sweep root, grouped by (agent, budget).
pub fn collect_sweep(root: &Path) -> Result<BTreeMap<(AgentKind, u64), Vec<Vec<EpochMetrics>>>> {
    let mut groups: BTreeMap<(AgentKind, u64), Vec<Vec<EpochMetrics>>> = BTreeMap::new();
    for agent_entry in sorted_dirs(root)? {
        let Ok(agent) = agent_entry.file_name().and_then(|n| n.to_str()).unwrap_or("").parse::<AgentKind>() else {
            continue;
        };
        for budget_entry in sorted_dirs(&agent_entry)? {
            let name = budget_entry.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let Some(budget) = name.strip_prefix('b').and_then(|b| b.parse::<u64>().ok()) else {
                continue;
            };
            for seed_dir in sorted_dirs(&budget_entry)? {
                let curve = seed_dir.join("curve.csv");
                if curve.exists() {
                    groups.entry((agent, budget)).or_default().push(read_curve(&curve)?);
                }
            }
        }
    }
    Ok(groups)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

/// Writes `curves.csv` (success per epoch, mean ± std over runs) and
/// `budgets.csv` (final success per budget) for a sweep root.
pub fn write_plotdata(root: &Path, out_dir: &Path) -> Result<(usize, usize)> {
    let groups = collect_sweep(root)?;
    fs::create_dir_all(out_dir)?;
    let mut curves = csv::Writer::from_path(out_dir.join("curves.csv"))?;
    curves.write_record([
        "agent",
        "budget",
        "epoch",
        "runs",
        "success_mean",
        "success_std",
        "reward_mean",
        "turns_mean",
    ])?;
    let mut budgets = csv::Writer::from_path(out_dir.join("budgets.csv"))?;
    budgets.write_record(["agent", "budget", "runs", "final_success_mean", "final_success_std"])?;
    let (mut n_curve, mut n_budget) = (0, 0);
    for ((agent, budget), runs) in &groups {
        for p in aggregate_curves(*agent, *budget, runs) {
            curves.write_record([
                p.agent.as_str().to_string(),
                p.budget.to_string(),
                p.epoch.to_string(),
                p.runs.to_string(),
                fmt4(p.success_mean),
                fmt4(p.success_std),
                fmt4(p.reward_mean),
                fmt4(p.turns_mean),
            ])?;
            n_curve += 1;
        }
        let finals: Vec<f64> = runs.iter().filter_map(|c| c.last().map(|m| m.success_rate)).collect();
        let (mean, std) = mean_std(&finals);
        budgets.write_record([
            agent.as_str().to_string(),
            budget.to_string(),
            finals.len().to_string(),
            fmt4(mean),
            fmt4(std),
        ])?;
        n_budget += 1;
    }
    curves.flush()?;
    budgets.flush()?;
    Ok((n_curve, n_budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcs::Route;

    fn metrics(epoch: u64, success: f64) -> EpochMetrics {
        EpochMetrics {
            epoch,
            success_rate: success,
            avg_reward: -3.25,
            avg_turns: 11.0,
            budget_spent_cumulative: 4,
            hh_dialogues: 1,
            ha_dialogues: 2,
            sim_dialogues: 7,
        }
    }

    #[test]
    fn success_renders_to_four_decimals() {
        assert_eq!(fmt4(0.7542), "0.7542");
        assert_eq!(fmt4(0.75), "0.7500");
    }

    #[test]
    fn curve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        let curve = vec![metrics(0, 0.1), metrics(1, 0.7542)];
        write_curve(&path, &curve).unwrap();
        assert_eq!(read_curve(&path).unwrap(), curve);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("epoch,success_rate,avg_reward,avg_turns,"));
        assert!(text.contains("1,0.7542,-3.2500,11.0000,4,1,2,7"));
    }

    #[test]
    fn routes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("routes.csv");
        let rows = vec![RouteLogRow {
            epoch: 3,
            lambda_k: 2.5,
            b_k_drawn: 4,
            b_k_clamped: 4,
            goals_sampled: 1,
            route: Route::Hh,
            cost: 2,
            s_gu: Some(0.2),
            category_id: Some(17),
        }];
        write_routes(&path, &rows).unwrap();
        assert_eq!(read_routes(&path).unwrap(), rows);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("epoch,lambda_k,b_k_drawn,b_k_clamped,goals_sampled,route,cost,S_gu,category_id"));
    }

    #[test]
    fn aggregation_mean_and_std() {
        let curves = vec![vec![metrics(0, 0.2), metrics(1, 0.4)], vec![metrics(0, 0.4), metrics(1, 0.8)]];
        let points = aggregate_curves(AgentKind::Dqn, 50, &curves);
        assert_eq!(points.len(), 2);
        assert!((points[1].success_mean - 0.6).abs() < 1e-12);
        assert!((points[1].success_std - 0.2).abs() < 1e-12);
        assert_eq!(points[0].runs, 2);
    }

    #[test]
    fn plotdata_from_sweep_layout() {
        let root = tempfile::tempdir().unwrap();
        for seed in 0..2 {
            let dir = run_dir(root.path(), AgentKind::BcsDdq, 300, seed);
            fs::create_dir_all(&dir).unwrap();
            write_curve(&dir.join("curve.csv"), &[metrics(0, 0.1), metrics(1, 0.5 + seed as f64 * 0.1)]).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        assert_eq!(write_plotdata(root.path(), out.path()).unwrap(), (2, 1));
        let budgets = fs::read_to_string(out.path().join("budgets.csv")).unwrap();
        assert!(budgets.contains("bcs_ddq,300,2,0.5500,0.0500"));
    }
}
