//! Many flights across scenarios and seeds, with per-cell landing statistics.

use airdrop_core::planner::{plan, PlanOutcome};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::flight::{run_flight_with_plan, FlightResult};
use crate::scenario::{Ablation, ScenarioConfig, TriggerMode};

/// Landing statistics over the successful flights of one
/// (scenario, trigger, ablation) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStats {
    pub scenario_id: String,
    pub trigger: TriggerMode,
    pub ablation: Ablation,
    pub flights: usize,
    pub failures: usize,
    pub rmse: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

/// RMSE, mean, median and max of a non-empty error list.
pub fn error_stats(errors: &[f64]) -> Option<(f64, f64, f64, f64)> {
    if errors.is_empty() {
        return None;
    }
    let n = errors.len() as f64;
    let rmse = (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt();
    let mean = errors.iter().sum::<f64>() / n;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 { sorted[mid] } else { 0.5 * (sorted[mid - 1] + sorted[mid]) };
    Some((rmse, mean, median, *sorted.last().expect("non-empty")))
}

/// Cells in order of first appearance.
pub fn summarize(results: &[FlightResult]) -> Vec<CellStats> {
    let mut keys: Vec<(String, TriggerMode, Ablation)> = Vec::new();
    for r in results {
        let k = (r.scenario_id.clone(), r.trigger, r.ablation);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(id, trigger, ablation)| {
            let cell: Vec<&FlightResult> = results
                .iter()
                .filter(|r| r.scenario_id == id && r.trigger == trigger && r.ablation == ablation)
                .collect();
            let errors: Vec<f64> = cell.iter().filter(|r| !r.failed()).filter_map(|r| r.landing_error).collect();
            let (rmse, mean, median, max) = error_stats(&errors).unwrap_or((f64::NAN, f64::NAN, f64::NAN, f64::NAN));
            CellStats {
                scenario_id: id,
                trigger,
                ablation,
                flights: cell.len(),
                failures: cell.len() - errors.len(),
                rmse,
                mean,
                median,
                max,
            }
        })
        .collect()
}

/// Plan each scenario once, in parallel.
pub fn plan_all(scenarios: &[ScenarioConfig], workers: usize) -> Result<Vec<std::result::Result<PlanOutcome, String>>> {
    pool(workers)?.install(|| {
        Ok(scenarios
            .par_iter()
            .map(|s| {
                if s.hover.is_some() {
                    return Err("hover scenario".to_string());
                }
                plan(&s.planner).map_err(|e| format!("planner failed: {e}"))
            })
            .collect())
    })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))
}

/// Fly every scenario with every seed. Results are ordered by scenario, then
/// seed, independent of the worker count.
pub fn run_campaign(scenarios: &[ScenarioConfig], seeds: &[u64], workers: usize) -> Result<Vec<FlightResult>> {
    let plans = plan_all(scenarios, workers)?;
    run_campaign_with_plans(scenarios, &plans, seeds, workers)
}

pub fn run_campaign_with_plans(
    scenarios: &[ScenarioConfig],
    plans: &[std::result::Result<PlanOutcome, String>],
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<FlightResult>> {
    if plans.len() != scenarios.len() {
        return Err(SimError::Config("one plan per scenario required".into()));
    }
    let jobs: Vec<(usize, u64)> = (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    pool(workers)?.install(|| {
        Ok(jobs
            .par_iter()
            .map(|&(i, seed)| {
                let mut s = scenarios[i].clone();
                s.seed = seed;
                match (&plans[i], s.hover.is_some()) {
                    (_, true) => run_flight_with_plan(&s, None),
                    (Ok(p), false) => run_flight_with_plan(&s, Some(p)),
                    (Err(e), false) => {
                        let mut r = run_flight_with_plan(&s, None);
                        r.failure = Some(e.clone());
                        r
                    }
                }
            })
            .collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn stats_examples() {
        let (rmse, mean, median, max) = error_stats(&[0.03, 0.04]).unwrap();
        assert!((rmse - 0.035355339).abs() < 1e-8);
        assert!((mean - 0.035).abs() < 1e-15 && (median - 0.035).abs() < 1e-15);
        assert_eq!(max, 0.04);
        let (rmse, mean, median, max) = error_stats(&[0.07]).unwrap();
        assert!([rmse, mean, median, max].iter().all(|v| (v - 0.07).abs() < 1e-15));
        assert!(error_stats(&[]).is_none());
    }

    proptest! {
        #[test]
        fn stats_are_ordered(errors in proptest::collection::vec(0.0f64..5.0, 1..40)) {
            let (rmse, mean, median, max) = error_stats(&errors).unwrap();
            let min = errors.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(min <= median && median <= max);
            prop_assert!(min <= mean + 1e-12 && mean <= max + 1e-12);
            prop_assert!(mean <= rmse + 1e-12 && rmse <= max + 1e-12);
        }
    }
}
