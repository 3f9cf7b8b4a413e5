//! Stratified integer apportionment.
//!
//! Splitting `n_c` rows of each class into parts with ratio weights needs a
//! rounding rule. Every class receives, per part, either the floor or the
//! ceiling of its exact quota (so each class is within one row of its
//! proportional share), and the part totals across classes follow the
//! largest-remainder rounding of the pooled quota. The leftover rows of each
//! class are routed to parts with a small max-flow; classes are visited in
//! index order and, within a class, parts are tried by descending remainder.

/// Weights are in units of 1/1000 percent.
pub const WEIGHT_SCALE: u64 = 100_000;

/// Convert percentages (summing to 100) to integer weights.
pub fn percent_weights(percentages: &[f64]) -> Option<Vec<u64>> {
    let mut weights = Vec::with_capacity(percentages.len());
    for &p in percentages {
        if !p.is_finite() || p < 0.0 {
            return None;
        }
        weights.push((p * 1000.0).round() as u64);
    }
    (weights.iter().sum::<u64>() == WEIGHT_SCALE).then_some(weights)
}

/// Hamilton / largest-remainder rounding of `n * w_j / W`. Ties go to the
/// lower part index.
pub fn largest_remainder(n: usize, weights: &[u64]) -> Vec<usize> {
    let total: u64 = weights.iter().sum();
    if total == 0 {
        return vec![0; weights.len()];
    }
    let n = n as u64;
    let mut counts: Vec<usize> = weights.iter().map(|&w| (n * w / total) as usize).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by_key(|&j| (std::cmp::Reverse(n * weights[j] % total), j));
    let assigned: usize = counts.iter().sum();
    for &j in order.iter().take(n as usize - assigned) {
        counts[j] += 1;
    }
    counts
}

/// `result[c][j]` rows of class `c` go to part `j`.
pub fn apportion(class_sizes: &[usize], weights: &[u64]) -> Vec<Vec<usize>> {
    let total_w: u64 = weights.iter().sum();
    let parts = weights.len();
    if total_w == 0 || parts == 0 {
        return vec![vec![0; parts]; class_sizes.len()];
    }
    let mut alloc: Vec<Vec<usize>> = Vec::with_capacity(class_sizes.len());
    let mut remainders: Vec<Vec<u64>> = Vec::with_capacity(class_sizes.len());
    for &n in class_sizes {
        let n = n as u64;
        alloc.push(weights.iter().map(|&w| (n * w / total_w) as usize).collect());
        remainders.push(weights.iter().map(|&w| n * w % total_w).collect());
    }
    let leftovers: Vec<usize> = class_sizes
        .iter()
        .zip(&alloc)
        .map(|(&n, a)| n - a.iter().sum::<usize>())
        .collect();
    let floor_totals: Vec<usize> = (0..parts).map(|j| alloc.iter().map(|a| a[j]).sum()).collect();

    let pooled = largest_remainder(class_sizes.iter().sum(), weights);
    let exact_caps: Vec<usize> = (0..parts).map(|j| pooled[j] - floor_totals[j]).collect();
    let extra = match route(&leftovers, &remainders, &exact_caps) {
        Some(flow) => flow,
        None => {
            // Fall back to the ceiling of each pooled quota, which always
            // admits a solution (the fractional quotas are one).
            let n_total: u64 = class_sizes.iter().map(|&n| n as u64).sum();
            let ceil_caps: Vec<usize> = (0..parts)
                .map(|j| (n_total * weights[j]).div_ceil(total_w) as usize - floor_totals[j])
                .collect();
            route(&leftovers, &remainders, &ceil_caps).expect("ceiling apportionment is feasible")
        }
    };
    for (a, e) in alloc.iter_mut().zip(extra) {
        for (x, y) in a.iter_mut().zip(e) {
            *x += y;
        }
    }
    alloc
}

/// Max-flow from classes (supply = leftover) to parts (capacity), one unit
/// per (class, part) pair with a nonzero remainder. Returns the 0/1 routing
/// if every leftover unit is placed.
fn route(leftovers: &[usize], remainders: &[Vec<u64>], caps: &[usize]) -> Option<Vec<Vec<usize>>> {
    let classes = leftovers.len();
    let parts = caps.len();
    let mut flow = vec![vec![0usize; parts]; classes];
    let mut load = vec![0usize; parts];
    let prefs: Vec<Vec<usize>> = remainders
        .iter()
        .map(|r| {
            let mut order: Vec<usize> = (0..parts).filter(|&j| r[j] > 0).collect();
            order.sort_by_key(|&j| (std::cmp::Reverse(r[j]), j));
            order
        })
        .collect();

    // Augmenting path search over the residual graph: class -> part on an
    // unused edge, part -> class on a used edge.
    fn augment(
        c: usize,
        prefs: &[Vec<usize>],
        flow: &mut [Vec<usize>],
        load: &mut [usize],
        caps: &[usize],
        seen: &mut [bool],
    ) -> bool {
        for &j in &prefs[c] {
            if flow[c][j] == 1 || seen[j] {
                continue;
            }
            seen[j] = true;
            if load[j] < caps[j] {
                flow[c][j] = 1;
                load[j] += 1;
                return true;
            }
            for other in 0..flow.len() {
                if other != c && flow[other][j] == 1 {
                    flow[other][j] = 0;
                    if augment(other, prefs, flow, load, caps, seen) {
                        flow[c][j] = 1;
                        return true;
                    }
                    flow[other][j] = 1;
                }
            }
        }
        false
    }

    for c in 0..classes {
        for _ in 0..leftovers[c] {
            let mut seen = vec![false; parts];
            if !augment(c, &prefs, &mut flow, &mut load, caps, &mut seen) {
                return None;
            }
        }
    }
    Some(flow)
}
