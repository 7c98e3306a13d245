//! Budget-conscious scheduling: Poisson allocation of the real-interaction
//! budget over epochs, active user-goal sampling, the routing controller,
//! and the budget ledger.

use crate::domain::{DialogueOutcome, UserGoal};
use crate::kb::GoalCategory;
use crate::{Error, Result};
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// `P{X = n}` for `X ~ Poisson(lambda)`; log space above `n = 20`.
pub fn poisson_pmf(n: i64, lambda: f64) -> Result<f64> {
    if n < 0 {
        return Err(Error::InvalidArgument(format!("negative count {n}")));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {lambda}")));
    }
    if n <= 20 {
        let factorial: f64 = (1..=n).map(|i| i as f64).product();
        return Ok(lambda.powi(n as i32) / factorial * (-lambda).exp());
    }
    let ln_factorial: f64 = (1..=n).map(|i| (i as f64).ln()).sum();
    Ok((n as f64 * lambda.ln() - lambda - ln_factorial).exp())
}

/// How the per-epoch Poisson rate evolves over training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `λ = 2b/(m+1)`, `λ_k = (m+1-k)/m · λ`.
    Decayed,
    /// `λ_k = b/m` for every epoch.
    Constant,
}

/// Base rate `λ` of the schedule.
pub fn base_rate(kind: ScheduleKind, b: u64, m: u64) -> f64 {
    match kind {
        ScheduleKind::Decayed => 2.0 * b as f64 / (m as f64 + 1.0),
        ScheduleKind::Constant => b as f64 / m as f64,
    }
}

/// Poisson rate for epoch `k` (1-based).
pub fn epoch_rate(kind: ScheduleKind, b: u64, m: u64, k: u64) -> Result<f64> {
    if m == 0 || k == 0 || k > m {
        return Err(Error::InvalidArgument(format!("epoch {k} outside 1..={m}")));
    }
    let lambda = base_rate(kind, b, m);
    Ok(match kind {
        ScheduleKind::Decayed => (m + 1 - k) as f64 / m as f64 * lambda,
        ScheduleKind::Constant => lambda,
    })
}

/// One epoch's budget draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub lambda_k: f64,
    pub drawn: u64,
    /// `drawn` capped at the budget still unspent.
    pub clamped: u64,
}

/// Draws `b_k ~ Poisson(λ_k)` and clamps it to `remaining`.
pub fn schedule_budget<R: Rng + ?Sized>(
    kind: ScheduleKind,
    b: u64,
    m: u64,
    k: u64,
    remaining: u64,
    rng: &mut R,
) -> Result<Allocation> {
    let lambda_k = epoch_rate(kind, b, m, k)?;
    let drawn = if lambda_k > 0.0 {
        let poisson = Poisson::new(lambda_k).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        poisson.sample(rng) as u64
    } else {
        0
    };
    Ok(Allocation {
        lambda_k,
        drawn,
        clamped: drawn.min(remaining),
    })
}

/// Per-category failure-rate estimates and sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub failure_rate: Vec<f64>,
    pub counts: Vec<u64>,
    pub decay: f64,
}

impl CategoryStats {
    pub fn new(l: usize) -> Self {
        Self {
            failure_rate: vec![0.0; l],
            counts: vec![0; l],
            decay: 0.9,
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `N`, the total number of recorded outcomes.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Folds outcomes into category `id`: the count grows by one per
    /// outcome and the failure rate is an exponential moving average of the
    /// failure indicator. A category's first outcome sets the rate outright.
    pub fn update(&mut self, id: usize, outcomes: &[DialogueOutcome]) -> Result<()> {
        if id >= self.len() {
            return Err(Error::InvalidArgument(format!("category {id} out of range")));
        }
        for outcome in outcomes {
            let failure = if outcome.success { 0.0 } else { 1.0 };
            let f = &mut self.failure_rate[id];
            *f = if self.counts[id] == 0 {
                failure
            } else {
                self.decay * *f + (1.0 - self.decay) * failure
            };
            self.counts[id] += 1;
        }
        Ok(())
    }
}

/// How the next goal category is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalSampling {
    /// Gaussian draws around each category's failure rate.
    Active,
    /// Uniform category, then uniform goal.
    Uniform,
}

/// Picks a category and a uniformly random goal inside it.
///
/// Active sampling visits unexplored categories first (uniformly among
/// them). Afterwards it draws `p_i ~ N(f_i, sqrt(l ln N / n_i))` per
/// category and takes the largest, ties to the lowest id.
pub fn sample_goal<'a, R: Rng + ?Sized>(
    categories: &'a [GoalCategory],
    stats: &CategoryStats,
    l: usize,
    mode: GoalSampling,
    rng: &mut R,
) -> Result<(&'a UserGoal, usize)> {
    if categories.is_empty() {
        return Err(Error::InvalidArgument("no goal categories".into()));
    }
    if stats.len() != categories.len() {
        return Err(Error::InvalidArgument("stats do not match categories".into()));
    }
    let id = match mode {
        GoalSampling::Uniform => rng.random_range(0..categories.len()),
        GoalSampling::Active => active_category(stats, l, rng)?,
    };
    let goals = &categories[id].goals;
    if goals.is_empty() {
        return Err(Error::InvalidArgument(format!("category {id} has no goals")));
    }
    Ok((&goals[rng.random_range(0..goals.len())], id))
}

fn active_category<R: Rng + ?Sized>(stats: &CategoryStats, l: usize, rng: &mut R) -> Result<usize> {
    let unexplored: Vec<usize> = (0..stats.len()).filter(|&i| stats.counts[i] == 0).collect();
    if !unexplored.is_empty() {
        return Ok(unexplored[rng.random_range(0..unexplored.len())]);
    }
    let ln_n = (stats.total() as f64).ln();
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..stats.len() {
        let sigma = (l as f64 * ln_n / stats.counts[i] as f64).sqrt();
        let p = if sigma > 0.0 {
            Normal::new(stats.failure_rate[i], sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?
                .sample(rng)
        } else {
            stats.failure_rate[i]
        };
        if p > best.1 {
            best = (i, p);
        }
    }
    Ok(best.0)
}

/// Where one sampled goal's dialogue comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// World-model simulation.
    Sim,
    /// Human-human demonstration.
    Hh,
    /// Human user with the agent.
    Ha,
}

impl Route {
    /// Number of people involved.
    pub fn cost(self) -> u64 {
        match self {
            Route::Sim => 0,
            Route::Hh => 2,
            Route::Ha => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Route::Sim => "sim",
            Route::Hh => "hh",
            Route::Ha => "ha",
        }
    }
}

/// Controller thresholds `λ1 > λ2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerThresholds {
    pub upper: f64,
    pub lower: f64,
}

impl Default for ControllerThresholds {
    fn default() -> Self {
        Self {
            upper: 2.0 / 3.0,
            lower: 1.0 / 3.0,
        }
    }
}

/// Routes a goal by the agent's estimated success rate on it: confident
/// goals or an empty epoch budget go to simulation, hard goals with room
/// for two people go to a demonstration, the rest to a human user.
pub fn controller_route(s_gu: f64, b_k: u64, thresholds: ControllerThresholds) -> (Route, u64) {
    let route = if s_gu >= thresholds.upper || b_k == 0 {
        Route::Sim
    } else if s_gu <= thresholds.lower && b_k >= 2 {
        Route::Hh
    } else {
        Route::Ha
    };
    (route, route.cost())
}

/// Running account of real-interaction spend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetLedger {
    pub total_b: u64,
    pub spent_total: u64,
    pub hh: u64,
    pub ha: u64,
    pub sim: u64,
}

impl BudgetLedger {
    pub fn new(total_b: u64) -> Self {
        Self {
            total_b,
            ..Self::default()
        }
    }

    pub fn remaining(&self) -> u64 {
        self.total_b - self.spent_total
    }

    /// Records one dialogue on `route`, refusing to overspend.
    pub fn charge(&mut self, route: Route) -> Result<()> {
        let cost = route.cost();
        if cost > self.remaining() {
            return Err(Error::BudgetExceeded {
                cost,
                remaining: self.remaining(),
            });
        }
        self.spent_total += cost;
        match route {
            Route::Sim => self.sim += 1,
            Route::Hh => self.hh += 1,
            Route::Ha => self.ha += 1,
        }
        Ok(())
    }

    /// `spent_total <= total_b` and `2·hh + ha = spent_total`.
    pub fn is_consistent(&self) -> bool {
        self.spent_total <= self.total_b && 2 * self.hh + self.ha == self.spent_total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::{categorize_goals, default_kb, enumerate_goals};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

    fn outcome(success: bool) -> DialogueOutcome {
        DialogueOutcome {
            success,
            turns: 5,
            cumulative_reward: 0.0,
        }
    }

    #[test]
    fn pmf_analytic_values() {
        assert!((poisson_pmf(0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-12);
        assert!((poisson_pmf(1, 2.0).unwrap() - 2.0 * (-2.0f64).exp()).abs() < 1e-12);
        assert!(poisson_pmf(-1, 1.0).is_err());
        assert!(poisson_pmf(1, 0.0).is_err());
    }

    #[test]
    fn pmf_sums_to_one_and_is_continuous_across_log_switch() {
        let total: f64 = (0..=200).map(|n| poisson_pmf(n, 3.0).unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-9);
        let d = statrs::distribution::Poisson::new(25.0).unwrap();
        for n in 15..30 {
            let want = statrs::distribution::Discrete::pmf(&d, n as u64);
            assert!((poisson_pmf(n, 25.0).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn decayed_rates() {
        let l1 = epoch_rate(ScheduleKind::Decayed, 300, 200, 1).unwrap();
        assert!((l1 - 600.0 / 201.0).abs() < 1e-12);
        let lm = epoch_rate(ScheduleKind::Decayed, 300, 200, 200).unwrap();
        assert!((lm - base_rate(ScheduleKind::Decayed, 300, 200) / 200.0).abs() < 1e-12);
        for k in 1..200 {
            assert!(
                epoch_rate(ScheduleKind::Decayed, 300, 200, k + 1).unwrap()
                    < epoch_rate(ScheduleKind::Decayed, 300, 200, k).unwrap()
            );
        }
        assert!(epoch_rate(ScheduleKind::Decayed, 300, 200, 0).is_err());
        assert!(epoch_rate(ScheduleKind::Decayed, 300, 200, 201).is_err());
    }

    #[test]
    fn constant_rates() {
        for k in 1..=10 {
            assert_eq!(epoch_rate(ScheduleKind::Constant, 50, 10, k).unwrap(), 5.0);
        }
    }

    #[test]
    fn draws_respect_remaining_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let a = schedule_budget(ScheduleKind::Decayed, 300, 10, 1, 3, &mut rng).unwrap();
            assert!(a.clamped <= 3 && a.clamped <= a.drawn);
        }
        let a = schedule_budget(ScheduleKind::Decayed, 0, 10, 1, 0, &mut rng).unwrap();
        assert_eq!((a.drawn, a.clamped), (0, 0));
    }

    #[test]
    fn draw_mean_matches_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let sum: u64 = (0..n)
            .map(|_| schedule_budget(ScheduleKind::Decayed, 300, 200, 1, u64::MAX, &mut rng).unwrap().drawn)
            .sum();
        let lambda = 600.0 / 201.0;
        assert!((sum as f64 / n as f64 - lambda).abs() < 0.01 * lambda);
    }

    #[test]
    fn controller_examples() {
        let t = ControllerThresholds::default();
        assert_eq!(controller_route(0.8, 1, t), (Route::Sim, 0));
        assert_eq!(controller_route(0.2, 2, t), (Route::Hh, 2));
        assert_eq!(controller_route(0.2, 1, t), (Route::Ha, 1));
        assert_eq!(controller_route(0.5, 0, t), (Route::Sim, 0));
        assert_eq!(controller_route(2.0 / 3.0, 5, t), (Route::Sim, 0));
        assert_eq!(controller_route(1.0 / 3.0, 5, t), (Route::Hh, 2));
    }

    #[test]
    fn ema_updates() {
        let mut stats = CategoryStats::new(2);
        stats.update(0, &vec![outcome(false); 10]).unwrap();
        assert_eq!(stats.counts[0], 10);
        assert!(stats.failure_rate[0] > 0.99);
        let mut prev = stats.failure_rate[0];
        for _ in 0..20 {
            stats.update(0, &[outcome(true)]).unwrap();
            assert!(stats.failure_rate[0] < prev);
            prev = stats.failure_rate[0];
        }
        let before = stats.clone();
        stats.update(1, &[]).unwrap();
        assert_eq!(stats, before);
        assert!(stats.update(2, &[]).is_err());
    }

    fn two_categories() -> Vec<GoalCategory> {
        let kb = default_kb();
        let goals = enumerate_goals(&kb, 0, 300);
        categorize_goals(&goals, 2)
    }

    #[test]
    fn single_category_always_selected() {
        let cats = &two_categories()[..1];
        let mut stats = CategoryStats::new(1);
        stats.update(0, &[outcome(true)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (goal, id) = sample_goal(cats, &stats, 1, GoalSampling::Active, &mut rng).unwrap();
            assert_eq!(id, 0);
            assert!(cats[0].goals.contains(goal));
        }
    }

    #[test]
    fn unexplored_categories_first() {
        let cats = two_categories();
        let mut stats = CategoryStats::new(2);
        stats.update(0, &vec![outcome(false); 50]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            assert_eq!(sample_goal(&cats, &stats, 2, GoalSampling::Active, &mut rng).unwrap().1, 1);
        }
    }

    #[test]
    fn symmetric_categories_split_evenly() {
        let cats = two_categories();
        let mut stats = CategoryStats::new(2);
        stats.failure_rate = vec![0.5, 0.5];
        stats.counts = vec![10, 10];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 10_000;
        let first = (0..n)
            .filter(|_| sample_goal(&cats, &stats, 2, GoalSampling::Active, &mut rng).unwrap().1 == 0)
            .count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!((first as f64 - n as f64 / 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn thompson_example_matches_gaussian_oracle() {
        let cats = two_categories();
        let mut stats = CategoryStats::new(2);
        stats.failure_rate = vec![0.9, 0.1];
        stats.counts = vec![100, 100];
        let sigma = (2.0 * 200f64.ln() / 100.0).sqrt();
        assert!((sigma - 0.3256).abs() < 1e-4);
        let oracle = StatNormal::new(0.0, 1.0).unwrap().cdf(0.8 / (sigma * 2f64.sqrt()));
        assert!((oracle - 0.959).abs() < 1e-3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_goal(&cats, &stats, 2, GoalSampling::Active, &mut rng).unwrap().1 == 0)
            .count();
        assert!((hits as f64 / n as f64 - oracle).abs() < 0.01);
    }

    #[test]
    fn uniform_sampling_is_uniform() {
        let kb = default_kb();
        let cats = categorize_goals(&enumerate_goals(&kb, 0, 300), 8);
        let stats = CategoryStats::new(cats.len());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 10_000;
        let mut counts = vec![0usize; cats.len()];
        for _ in 0..n {
            counts[sample_goal(&cats, &stats, cats.len(), GoalSampling::Uniform, &mut rng).unwrap().1] += 1;
        }
        let p = 1.0 / cats.len() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn ledger_refuses_overspend() {
        let mut ledger = BudgetLedger::new(3);
        ledger.charge(Route::Hh).unwrap();
        ledger.charge(Route::Sim).unwrap();
        assert!(matches!(ledger.charge(Route::Hh), Err(Error::BudgetExceeded { cost: 2, remaining: 1 })));
        ledger.charge(Route::Ha).unwrap();
        assert_eq!(ledger.remaining(), 0);
        assert!(ledger.is_consistent());
        assert_eq!((ledger.hh, ledger.ha, ledger.sim), (1, 1, 1));
    }
}
