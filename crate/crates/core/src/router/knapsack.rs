//! Exact 0/1 knapsack over integer costs and real values.

/// Values within this distance are treated as equal when reconstructing.
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Item {
    pub value: f64,
    pub cost: usize,
}

/// Returns indices (ascending) of an optimal subset of `items` under `budget`.
///
/// Among optimal subsets, the one whose inclusion vector is lexicographically
/// greatest in the given item order is returned, so callers control the
/// tie-break by ordering `items`.
pub fn solve(items: &[Item], budget: usize) -> Vec<usize> {
    let total: usize = items.iter().map(|i| i.cost).sum();
    let cap = budget.min(total);
    let n = items.len();
    let width = cap + 1;

    // best[i * width + w]: optimum over items[i..] with capacity w.
    let mut best = vec![0.0f64; (n + 1) * width];
    for i in (0..n).rev() {
        let Item { value, cost } = items[i];
        for w in 0..width {
            let skip = best[(i + 1) * width + w];
            let take = if cost <= w {
                value + best[(i + 1) * width + (w - cost)]
            } else {
                f64::NEG_INFINITY
            };
            best[i * width + w] = skip.max(take);
        }
    }

    let mut chosen = Vec::new();
    let mut w = cap;
    for (i, item) in items.iter().enumerate() {
        if item.cost <= w {
            let take = item.value + best[(i + 1) * width + (w - item.cost)];
            if take >= best[i * width + w] - EPS {
                chosen.push(i);
                w -= item.cost;
            }
        }
    }
    chosen
}

pub fn total_value(items: &[Item], chosen: &[usize]) -> f64 {
    chosen.iter().map(|&i| items[i].value).sum()
}

pub fn total_cost(items: &[Item], chosen: &[usize]) -> usize {
    chosen.iter().map(|&i| items[i].cost).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items(spec: &[(f64, usize)]) -> Vec<Item> {
        spec.iter().map(|&(value, cost)| Item { value, cost }).collect()
    }

    #[test]
    fn picks_value_dense_combination() {
        // Greedy by value would take the 0.9 item (cost 10) and stop.
        let it = items(&[(0.9, 10), (0.5, 5), (0.5, 5)]);
        let s = solve(&it, 10);
        assert_eq!(s, vec![1, 2]);
        assert!((total_value(&it, &s) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_budget_and_empty_input() {
        assert!(solve(&items(&[(1.0, 1)]), 0).is_empty());
        assert!(solve(&[], 100).is_empty());
    }

    #[test]
    fn ties_prefer_earlier_items() {
        let it = items(&[(0.5, 3), (0.5, 3)]);
        assert_eq!(solve(&it, 3), vec![0]);
    }
}
