//! Largest-remainder (Hamilton) apportionment with per-bucket capacities.

/// Splits `budget` slots across buckets in proportion to `weights`.
///
/// No bucket receives more than its capacity; slots a full bucket cannot take
/// are re-apportioned among the buckets that still have room. The result sums
/// to `min(budget, Σ capacities)`. Leftover single slots go to the largest
/// fractional quotas, ties to the lower bucket index. Buckets with zero weight
/// only receive slots once every positively weighted bucket is full.
pub fn apportion(weights: &[f64], budget: usize, capacities: &[usize]) -> Vec<usize> {
    assert_eq!(weights.len(), capacities.len(), "one capacity per weight");
    let mut alloc = vec![0usize; weights.len()];
    let mut remaining = budget.min(capacities.iter().sum());

    while remaining > 0 {
        let open: Vec<usize> = (0..weights.len()).filter(|&i| alloc[i] < capacities[i]).collect();
        let weighted: Vec<usize> = open.iter().copied().filter(|&i| weights[i] > 0.0).collect();
        let (active, w): (Vec<usize>, Vec<f64>) = if weighted.is_empty() {
            (open.clone(), vec![1.0; open.len()])
        } else {
            let w = weighted.iter().map(|&i| weights[i]).collect();
            (weighted, w)
        };
        let total: f64 = w.iter().sum();

        let quotas: Vec<f64> = w.iter().map(|wi| remaining as f64 * wi / total).collect();
        let mut given = 0usize;
        let mut fracs: Vec<(usize, f64)> = Vec::with_capacity(active.len());
        for (slot, &b) in active.iter().enumerate() {
            let room = capacities[b] - alloc[b];
            let whole = (quotas[slot].floor() as usize).min(room).min(remaining - given);
            alloc[b] += whole;
            given += whole;
            if alloc[b] < capacities[b] {
                fracs.push((b, quotas[slot] - quotas[slot].floor()));
            }
        }
        fracs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for (b, _) in fracs {
            if given == remaining {
                break;
            }
            alloc[b] += 1;
            given += 1;
        }
        if given == 0 {
            // Every open bucket had a zero quota; hand out one slot in order.
            let b = active[0];
            alloc[b] += 1;
            given = 1;
        }
        remaining -= given;
    }
    alloc
}
