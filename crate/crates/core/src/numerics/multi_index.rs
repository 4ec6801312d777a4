//! Multi-indices `α ∈ ℕ₀^d` of bounded total order.

/// All multi-indices of dimension `d` with `|α| ≤ max_order`, ordered by total
/// order and then lexicographically descending (so `(1,0)` precedes `(0,1)`).
pub fn multi_indices(d: usize, max_order: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        let mut current = vec![0u32; d];
        push_with_order(d, 0, order, &mut current, &mut out);
    }
    out
}

fn push_with_order(d: usize, axis: usize, remaining: u32, current: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if axis + 1 == d {
        current[axis] = remaining;
        out.push(current.clone());
        return;
    }
    for k in (0..=remaining).rev() {
        current[axis] = k;
        push_with_order(d, axis + 1, remaining - k, current, out);
    }
    current[axis] = 0;
}

pub fn order(alpha: &[u32]) -> u32 {
    alpha.iter().sum()
}

/// `α! = Π α_k!`
pub fn factorial(alpha: &[u32]) -> f64 {
    alpha.iter().map(|&k| (1..=k).map(f64::from).product::<f64>()).product()
}

/// The index set `{0} ∪ {(d+1)e_ℓ}` used by the ℱL¹ bound.
pub fn fl1_index_set(d: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0; d]];
    for l in 0..d {
        let mut e = vec![0; d];
        e[l] = d as u32 + 1;
        out.push(e);
    }
    out
}
