//! Exact multiple-choice knapsack solving.
//!
//! One option per class, total cost within budget, minimum total loss.
//! The solver prunes dominated options per class, computes LP-relaxation
//! bounds from the per-class convex hulls, seeds the incumbent with the
//! greedy rounding of the LP solution, and runs depth-first branch and bound
//! to the exact optimum. Everything is single-threaded and deterministic:
//! preferring lower (loss, id) on ties and keeping the first-found incumbent
//! among equal-loss solutions.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{QpalError, Result};
use crate::rate::LayerSpec;

/// One candidate quantizer for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub layer: String,
    #[serde(rename = "quantizer")]
    pub quantizer_id: String,
    pub bits: f64,
    pub loss: f64,
    pub cost: f64,
}

/// On-disk catalog: layer table plus per-(layer, quantizer) options.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CatalogDocument {
    #[serde(default)]
    pub layers: Vec<LayerSpec>,
    pub options: Vec<CatalogEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MsqSolution {
    /// (layer, quantizer) per class, in first-occurrence layer order.
    pub assignment: Vec<(String, String)>,
    pub total_loss: f64,
    pub total_cost: f64,
    /// False only when the time cap expired and the incumbent was returned.
    pub optimal: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub time_limit: Duration,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { time_limit: Duration::from_secs(60) }
    }
}

pub fn solve_mckp(catalog: &[CatalogEntry], budget: f64) -> Result<MsqSolution> {
    solve_mckp_with(catalog, budget, SolveOptions::default())
}

pub fn solve_mckp_with(
    catalog: &[CatalogEntry],
    budget: f64,
    options: SolveOptions,
) -> Result<MsqSolution> {
    let (names, classes) = group_catalog(catalog)?;
    check_feasible(&names, &classes, budget)?;
    let core = solve_classes(&classes, budget, options.time_limit);
    let assignment = names
        .iter()
        .enumerate()
        .map(|(c, layer)| {
            let entry = classes[c].items[core.chosen[c]].entry;
            (layer.clone(), catalog[entry].quantizer_id.clone())
        })
        .collect();
    Ok(MsqSolution {
        assignment,
        total_loss: core.total_loss,
        total_cost: core.total_cost,
        optimal: core.optimal,
    })
}

/// LP relaxation value and the greedily rounded (feasible) loss; the exact
/// optimum always lies between them.
pub fn lp_relaxation_bounds(catalog: &[CatalogEntry], budget: f64) -> Result<(f64, f64)> {
    let (names, classes) = group_catalog(catalog)?;
    check_feasible(&names, &classes, budget)?;
    let prep = Prepared::build(&classes);
    let lp = prep.suffix_lp_bound(0, budget).expect("feasibility checked");
    let greedy = prep.greedy_rounded(budget).1;
    Ok((lp, greedy))
}

// ---------------------------------------------------------------------------
// Generic class solver (shared with the fusion-aware path)
// ---------------------------------------------------------------------------

/// One option after attaching a deterministic order key.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Item {
    pub cost: f64,
    pub loss: f64,
    /// Index into the caller's item storage.
    pub entry: usize,
    /// Tie-break rank within the class; lower wins on equal (cost, loss).
    pub rank: usize,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Class {
    pub items: Vec<Item>,
}

pub(crate) struct CoreSolution {
    /// Item index (into `Class::items`) per class.
    pub chosen: Vec<usize>,
    pub total_loss: f64,
    pub total_cost: f64,
    pub optimal: bool,
}

fn group_catalog(catalog: &[CatalogEntry]) -> Result<(Vec<String>, Vec<Class>)> {
    if catalog.is_empty() {
        return Err(QpalError::InvalidConfig("empty catalog".into()));
    }
    let mut names: Vec<String> = Vec::new();
    let mut classes: Vec<Class> = Vec::new();
    for (i, e) in catalog.iter().enumerate() {
        if !e.loss.is_finite() {
            return Err(QpalError::InvalidConfig(format!(
                "option ({}, {}) has non-finite loss",
                e.layer, e.quantizer_id
            )));
        }
        if !(e.cost > 0.0) {
            return Err(QpalError::InvalidConfig(format!(
                "option ({}, {}) needs positive cost",
                e.layer, e.quantizer_id
            )));
        }
        let class = match names.iter().position(|n| n == &e.layer) {
            Some(c) => c,
            None => {
                names.push(e.layer.clone());
                classes.push(Class::default());
                names.len() - 1
            }
        };
        classes[class].items.push(Item { cost: e.cost, loss: e.loss, entry: i, rank: 0 });
    }
    // Tie-break rank within each class: (loss, quantizer_id).
    for class in &mut classes {
        let mut order: Vec<usize> = (0..class.items.len()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&catalog[class.items[a].entry], &catalog[class.items[b].entry]);
            ea.loss.partial_cmp(&eb.loss).unwrap().then(ea.quantizer_id.cmp(&eb.quantizer_id))
        });
        for (rank, &idx) in order.iter().enumerate() {
            class.items[idx].rank = rank;
        }
    }
    Ok((names, classes))
}

fn check_feasible(names: &[String], classes: &[Class], budget: f64) -> Result<()> {
    let mut total_min = 0.0;
    let mut binding = (0usize, f64::NEG_INFINITY);
    for (c, class) in classes.iter().enumerate() {
        let min_cost = class.items.iter().map(|i| i.cost).fold(f64::INFINITY, f64::min);
        total_min += min_cost;
        if min_cost > binding.1 {
            binding = (c, min_cost);
        }
    }
    if total_min > budget {
        return Err(QpalError::Infeasible(format!(
            "budget {budget} is below the sum of per-layer minimum costs {total_min}; \
             binding layer: {} (minimum cost {})",
            names[binding.0], binding.1
        )));
    }
    Ok(())
}

/// Per-class pruned staircase plus hull increments for LP bounds.
struct Prepared {
    /// Pruned items per class, sorted by cost ascending (loss strictly
    /// decreasing).
    pruned: Vec<Vec<Item>>,
    /// Cost/loss of each class's min-cost item, summed over suffixes.
    suffix_cost: Vec<f64>,
    suffix_loss: Vec<f64>,
    /// Hull increments sorted by efficiency descending.
    increments: Vec<Increment>,
}

#[derive(Debug, Clone, Copy)]
struct Increment {
    class: usize,
    /// Steps from the hull start; step `s` upgrades hull point `s-1` to `s`.
    step: usize,
    d_cost: f64,
    d_loss: f64,
    efficiency: f64,
    /// Target item index in the pruned list.
    target: usize,
}

impl Prepared {
    fn build(classes: &[Class]) -> Self {
        let pruned: Vec<Vec<Item>> = classes.iter().map(|c| prune_class(&c.items)).collect();
        let n = classes.len();
        let mut suffix_cost = vec![0.0; n + 1];
        let mut suffix_loss = vec![0.0; n + 1];
        for c in (0..n).rev() {
            suffix_cost[c] = suffix_cost[c + 1] + pruned[c][0].cost;
            suffix_loss[c] = suffix_loss[c + 1] + pruned[c][0].loss;
        }
        let mut increments = Vec::new();
        for (c, items) in pruned.iter().enumerate() {
            let hull = lower_hull(items);
            for (step, pair) in hull.windows(2).enumerate() {
                let (a, b) = (pair[0], pair[1]);
                let d_cost = items[b].cost - items[a].cost;
                let d_loss = items[a].loss - items[b].loss;
                increments.push(Increment {
                    class: c,
                    step: step + 1,
                    d_cost,
                    d_loss,
                    efficiency: d_loss / d_cost,
                    target: b,
                });
            }
        }
        increments.sort_by(|a, b| {
            b.efficiency
                .partial_cmp(&a.efficiency)
                .unwrap()
                .then(a.class.cmp(&b.class))
                .then(a.step.cmp(&b.step))
        });
        Prepared { pruned, suffix_cost, suffix_loss, increments }
    }

    /// LP relaxation over classes `k..` with remaining budget `r`: start at
    /// the min-cost base and take hull increments in efficiency order, the
    /// last one fractionally. Returns `None` when even the base is over
    /// budget.
    fn suffix_lp_bound(&self, k: usize, r: f64) -> Option<f64> {
        if self.suffix_cost[k] > r {
            return None;
        }
        let mut slack = r - self.suffix_cost[k];
        let mut loss = self.suffix_loss[k];
        for inc in &self.increments {
            if inc.class < k {
                continue;
            }
            if inc.d_cost <= slack {
                slack -= inc.d_cost;
                loss -= inc.d_loss;
            } else {
                loss -= inc.d_loss * slack / inc.d_cost;
                break;
            }
        }
        Some(loss)
    }

    /// Feasible solution from rounding the LP: take whole increments as long
    /// as they fit and their class chain is unbroken.
    fn greedy_rounded(&self, budget: f64) -> (Vec<usize>, f64, f64) {
        let n = self.pruned.len();
        let mut level = vec![0usize; n];
        let mut cost: f64 = (0..n).map(|c| self.pruned[c][0].cost).sum();
        let mut loss: f64 = (0..n).map(|c| self.pruned[c][0].loss).sum();
        let mut blocked = vec![false; n];
        let mut hull_step = vec![0usize; n];
        let mut slack = budget - cost;
        for inc in &self.increments {
            if blocked[inc.class] || inc.step != hull_step[inc.class] + 1 {
                continue;
            }
            if inc.d_cost <= slack {
                slack -= inc.d_cost;
                cost += inc.d_cost;
                loss -= inc.d_loss;
                hull_step[inc.class] = inc.step;
                level[inc.class] = inc.target;
            } else {
                blocked[inc.class] = true;
            }
        }
        (level, loss, cost)
    }
}

/// Drop dominated items: sort by (cost, loss, rank) and keep strict loss
/// improvements.
fn prune_class(items: &[Item]) -> Vec<Item> {
    let mut sorted: Vec<Item> = items.to_vec();
    sorted.sort_by(|a, b| {
        a.cost
            .partial_cmp(&b.cost)
            .unwrap()
            .then(a.loss.partial_cmp(&b.loss).unwrap())
            .then(a.rank.cmp(&b.rank))
    });
    let mut kept: Vec<Item> = Vec::new();
    for item in sorted {
        if kept.last().map_or(true, |last| item.loss < last.loss) {
            kept.push(item);
        }
    }
    kept
}

/// Indices into the pruned staircase forming the lower convex hull
/// (efficiencies strictly decreasing).
fn lower_hull(items: &[Item]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::new();
    for i in 0..items.len() {
        while hull.len() >= 2 {
            let a = hull[hull.len() - 2];
            let b = hull[hull.len() - 1];
            // Pop b when eff(a->b) <= eff(b->i).
            let lhs = (items[a].loss - items[b].loss) * (items[i].cost - items[b].cost);
            let rhs = (items[b].loss - items[i].loss) * (items[b].cost - items[a].cost);
            if lhs <= rhs {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

pub(crate) fn solve_classes(classes: &[Class], budget: f64, time_limit: Duration) -> CoreSolution {
    let prep = Prepared::build(classes);
    let n = classes.len();
    let deadline = Instant::now() + time_limit;

    let (greedy_level, greedy_loss, greedy_cost) = prep.greedy_rounded(budget);
    let mut best_level = greedy_level;
    let mut best_loss = greedy_loss;
    let mut best_cost = greedy_cost;

    struct Dfs<'a> {
        prep: &'a Prepared,
        budget: f64,
        n: usize,
        deadline: Instant,
        expired: bool,
        node_count: u64,
        best_loss: f64,
        best_cost: f64,
        best_level: Vec<usize>,
        current: Vec<usize>,
    }

    impl Dfs<'_> {
        fn run(&mut self, k: usize, cost: f64, loss: f64) {
            if self.expired {
                return;
            }
            self.node_count += 1;
            if self.node_count % 1024 == 0 && Instant::now() >= self.deadline {
                self.expired = true;
                return;
            }
            if k == self.n {
                if loss < self.best_loss {
                    self.best_loss = loss;
                    self.best_cost = cost;
                    self.best_level = self.current.clone();
                }
                return;
            }
            match self.prep.suffix_lp_bound(k, self.budget - cost) {
                None => return,
                Some(bound) => {
                    if loss + bound >= self.best_loss {
                        return;
                    }
                }
            }
            // Lowest loss first: the staircase is sorted by cost ascending,
            // so walk it backwards.
            let items = &self.prep.pruned[k];
            for idx in (0..items.len()).rev() {
                let item = items[idx];
                if cost + item.cost + self.prep.suffix_cost[k + 1] > self.budget {
                    continue;
                }
                self.current[k] = idx;
                self.run(k + 1, cost + item.cost, loss + item.loss);
                if self.expired {
                    return;
                }
            }
        }
    }

    let mut dfs = Dfs {
        prep: &prep,
        budget,
        n,
        deadline,
        expired: false,
        node_count: 0,
        best_loss,
        best_cost,
        best_level: best_level.clone(),
        current: vec![0; n],
    };
    dfs.run(0, 0.0, 0.0);
    if dfs.best_loss < best_loss {
        best_loss = dfs.best_loss;
        best_cost = dfs.best_cost;
        best_level = dfs.best_level.clone();
    }
    let optimal = !dfs.expired;

    // Map pruned indices back to original item indices per class.
    let chosen: Vec<usize> = best_level
        .iter()
        .enumerate()
        .map(|(c, &lvl)| {
            let entry = prep.pruned[c][lvl].entry;
            classes[c].items.iter().position(|it| it.entry == entry).unwrap()
        })
        .collect();
    CoreSolution { chosen, total_loss: best_loss, total_cost: best_cost, optimal }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chacha;
    use rand::Rng;

    fn entry(layer: &str, q: &str, loss: f64, cost: f64) -> CatalogEntry {
        CatalogEntry { layer: layer.into(), quantizer_id: q.into(), bits: 2.0, loss, cost }
    }

    /// Exhaustive minimum over all assignments.
    fn brute_force(catalog: &[CatalogEntry], budget: f64) -> Option<f64> {
        let mut names: Vec<&str> = Vec::new();
        for e in catalog {
            if !names.contains(&e.layer.as_str()) {
                names.push(&e.layer);
            }
        }
        let per: Vec<Vec<&CatalogEntry>> = names
            .iter()
            .map(|n| catalog.iter().filter(|e| &e.layer == n).collect())
            .collect();
        let mut best: Option<f64> = None;
        let mut idx = vec![0usize; per.len()];
        loop {
            let cost: f64 = idx.iter().zip(&per).map(|(&i, c)| c[i].cost).sum();
            if cost <= budget {
                let loss: f64 = idx.iter().zip(&per).map(|(&i, c)| c[i].loss).sum();
                if best.map_or(true, |b| loss < b) {
                    best = Some(loss);
                }
            }
            let mut k = 0;
            loop {
                if k == per.len() {
                    return best;
                }
                idx[k] += 1;
                if idx[k] < per[k].len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    #[test]
    fn unconstrained_budget_takes_min_loss() {
        let catalog = vec![
            entry("a", "q1", 0.5, 1.0),
            entry("a", "q2", 0.1, 4.0),
            entry("b", "q1", 0.3, 1.0),
            entry("b", "q2", 0.2, 4.0),
        ];
        let sol = solve_mckp(&catalog, 100.0).unwrap();
        assert!((sol.total_loss - 0.3).abs() < 1e-12);
        assert!(sol.optimal);
        assert_eq!(sol.assignment[0], ("a".into(), "q2".into()));
        assert_eq!(sol.assignment[1], ("b".into(), "q2".into()));
    }

    #[test]
    fn two_layer_upgrade_case() {
        // Options per layer: (cost 2, loss 0.10) and (cost 4, loss 0.01);
        // budget 6 upgrades exactly one layer.
        let catalog = vec![
            entry("a", "cheap", 0.10, 2.0),
            entry("a", "good", 0.01, 4.0),
            entry("b", "cheap", 0.10, 2.0),
            entry("b", "good", 0.01, 4.0),
        ];
        let sol = solve_mckp(&catalog, 6.0).unwrap();
        assert!((sol.total_loss - 0.11).abs() < 1e-12, "loss {}", sol.total_loss);
    }

    #[test]
    fn infeasible_names_binding_layer() {
        let catalog = vec![entry("big", "only", 0.1, 10.0), entry("small", "only", 0.1, 1.0)];
        match solve_mckp(&catalog, 5.0) {
            Err(QpalError::Infeasible(msg)) => assert!(msg.contains("big"), "{msg}"),
            other => panic!("expected Infeasible, got {other:?}"),
        }
    }

    #[test]
    fn matches_brute_force_on_random_instances() {
        let mut rng = chacha(99);
        for trial in 0..60 {
            let n_classes = rng.random_range(1..=6);
            let mut catalog = Vec::new();
            for c in 0..n_classes {
                let n_opts = rng.random_range(1..=5);
                for o in 0..n_opts {
                    catalog.push(entry(
                        &format!("l{c}"),
                        &format!("q{o}"),
                        rng.random::<f64>(),
                        rng.random::<f64>().max(1e-6),
                    ));
                }
            }
            let min_sum: f64 = (0..n_classes)
                .map(|c| {
                    catalog
                        .iter()
                        .filter(|e| e.layer == format!("l{c}"))
                        .map(|e| e.cost)
                        .fold(f64::INFINITY, f64::min)
                })
                .sum();
            let budget = min_sum + rng.random::<f64>() * n_classes as f64;
            let expected = brute_force(&catalog, budget).unwrap();
            let sol = solve_mckp(&catalog, budget).unwrap();
            assert!(
                (sol.total_loss - expected).abs() <= 1e-12,
                "trial {trial}: solver {} vs brute force {expected}",
                sol.total_loss
            );
            assert!(sol.total_cost <= budget);
            assert!(sol.optimal);
        }
    }

    #[test]
    fn solution_between_lp_bounds() {
        let mut rng = chacha(7);
        for _ in 0..30 {
            let mut catalog = Vec::new();
            for c in 0..4 {
                for o in 0..4 {
                    catalog.push(entry(
                        &format!("l{c}"),
                        &format!("q{o}"),
                        rng.random::<f64>(),
                        0.1 + rng.random::<f64>(),
                    ));
                }
            }
            let budget = 2.0 + rng.random::<f64>() * 2.0;
            if let Ok(sol) = solve_mckp(&catalog, budget) {
                let (lp, greedy) = lp_relaxation_bounds(&catalog, budget).unwrap();
                assert!(
                    sol.total_loss >= lp - 1e-9 && sol.total_loss <= greedy + 1e-12,
                    "loss {} outside [{lp}, {greedy}]",
                    sol.total_loss
                );
            }
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let catalog = vec![
            entry("a", "q1", 0.5, 1.0),
            entry("a", "q2", 0.5, 1.0),
            entry("b", "q1", 0.2, 2.0),
            entry("b", "q2", 0.2, 2.0),
        ];
        let s1 = solve_mckp(&catalog, 3.0).unwrap();
        let s2 = solve_mckp(&catalog, 3.0).unwrap();
        assert_eq!(s1.assignment, s2.assignment);
    }
}
