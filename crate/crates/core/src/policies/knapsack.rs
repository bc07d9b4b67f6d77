//! 0/1 knapsack solvers over integer weights and real values.
//!
//! Both solvers answer the same question for a cache eviction: which items to
//! keep so that the kept weight fits in `budget` and the kept value is
//! maximal. [`keep_within_budget`] is the textbook table over every budget
//! value up to `budget`; its cost grows with the capacity. [`evict_to_cover`]
//! solves the complementary problem (evict the cheapest set whose weight
//! covers the overflow), so its table only spans the overflow.

/// Row-major bit matrix used to record take/skip choices for backtracking.
struct ChoiceBits {
    words: Vec<u64>,
    stride: usize,
}

impl ChoiceBits {
    fn new(rows: usize, cols: usize) -> Self {
        let stride = cols.div_ceil(64);
        ChoiceBits {
            words: vec![0; rows * stride],
            stride,
        }
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize) {
        self.words[row * self.stride + col / 64] |= 1 << (col % 64);
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> bool {
        self.words[row * self.stride + col / 64] & (1 << (col % 64)) != 0
    }
}

/// Maximizes the total value of kept items with total weight `<= budget`.
/// Returns a keep flag per item. Ties prefer dropping the later item.
pub fn keep_within_budget(weights: &[u64], values: &[f64], budget: u64) -> Vec<bool> {
    assert_eq!(weights.len(), values.len());
    let n = weights.len();
    let cols = budget as usize + 1;
    let mut best = vec![0.0f64; cols];
    let mut choice = ChoiceBits::new(n, cols);
    for (i, (&w, &v)) in weights.iter().zip(values).enumerate() {
        let w = w as usize;
        if w >= cols {
            continue;
        }
        for b in (w..cols).rev() {
            let with = best[b - w] + v;
            if with > best[b] {
                best[b] = with;
                choice.set(i, b);
            }
        }
    }
    let mut keep = vec![false; n];
    let mut b = budget as usize;
    for i in (0..n).rev() {
        if choice.get(i, b) {
            keep[i] = true;
            b -= weights[i] as usize;
        }
    }
    keep
}

/// Minimizes the total value of evicted items subject to evicted weight
/// `>= deficit`. Values must be non-negative. Returns a keep flag per item
/// (the complement of the evicted set), or `None` if even evicting every
/// item cannot cover the deficit.
pub fn evict_to_cover(weights: &[u64], values: &[f64], deficit: u64) -> Option<Vec<bool>> {
    assert_eq!(weights.len(), values.len());
    let n = weights.len();
    if deficit == 0 {
        return Some(vec![true; n]);
    }
    if weights.iter().sum::<u64>() < deficit {
        return None;
    }

    // Any feasible eviction bounds the optimum; items dearer than that bound
    // can never be part of an optimal eviction.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut bound = 0.0;
    let mut covered = 0u64;
    for &i in &order {
        if covered >= deficit {
            break;
        }
        covered += weights[i];
        bound += values[i];
    }
    let candidates: Vec<usize> = (0..n).filter(|&i| values[i] <= bound && weights[i] > 0).collect();
    if let Some(keep) = cover_with_two_weights(weights, values, deficit, &candidates) {
        return Some(keep);
    }

    // Some optimal eviction weighs less than deficit + max_w: dropping any
    // item from a heavier cover still covers and costs no more.
    let max_w = candidates.iter().map(|&i| weights[i]).max().unwrap_or(0);
    let span = (deficit + max_w) as usize;
    let mut cost = vec![f64::INFINITY; span];
    cost[0] = 0.0;
    let mut choice = ChoiceBits::new(candidates.len(), span);
    for (row, &i) in candidates.iter().enumerate() {
        let w = weights[i] as usize;
        let v = values[i];
        for d in (0..span - w).rev() {
            let c = cost[d] + v;
            if c < cost[d + w] {
                cost[d + w] = c;
                choice.set(row, d + w);
            }
        }
    }
    let mut end = deficit as usize;
    for d in deficit as usize..span {
        if cost[d] < cost[end] {
            end = d;
        }
    }
    debug_assert!(cost[end].is_finite());
    let mut keep = vec![true; n];
    let mut d = end;
    for (row, &i) in candidates.iter().enumerate().rev() {
        if d > 0 && choice.get(row, d) {
            keep[i] = false;
            d -= weights[i] as usize;
        }
    }
    debug_assert_eq!(d, 0);
    Some(keep)
}

/// Exact shortcut when the candidates come in at most two distinct weights.
/// Among equal-weight items an optimal eviction can always take the cheapest
/// ones, so it is enough to try every count of the first weight class.
fn cover_with_two_weights(weights: &[u64], values: &[f64], deficit: u64, candidates: &[usize]) -> Option<Vec<bool>> {
    let first = weights[*candidates.first()?];
    let second = candidates.iter().map(|&i| weights[i]).find(|&w| w != first);
    if let Some(w2) = second {
        if candidates.iter().any(|&i| weights[i] != first && weights[i] != w2) {
            return None;
        }
    }
    let class = |w: u64| {
        let mut items: Vec<usize> = candidates.iter().copied().filter(|&i| weights[i] == w).collect();
        items.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        let mut prefix = vec![0.0];
        for &i in &items {
            prefix.push(prefix.last().unwrap() + values[i]);
        }
        (items, prefix)
    };
    let (a_items, a_cost) = class(first);
    let (b_items, b_cost, w2) = match second {
        Some(w2) => {
            let (items, cost) = class(w2);
            (items, cost, w2)
        }
        None => (Vec::new(), vec![0.0], 1),
    };
    let mut best: Option<(f64, usize, usize)> = None;
    for ka in 0..=a_items.len() {
        let covered = ka as u64 * first;
        let kb = deficit.saturating_sub(covered).div_ceil(w2) as usize;
        if kb > b_items.len() {
            continue;
        }
        let cost = a_cost[ka] + b_cost[kb];
        if best.is_none_or(|(c, _, _)| cost < c) {
            best = Some((cost, ka, kb));
        }
    }
    let (_, ka, kb) = best?;
    let mut keep = vec![true; weights.len()];
    for &i in a_items[..ka].iter().chain(&b_items[..kb]) {
        keep[i] = false;
    }
    Some(keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exhaustive(weights: &[u64], values: &[f64], budget: u64) -> f64 {
        let n = weights.len();
        (0u32..1 << n)
            .filter_map(|mask| {
                let (w, v) = (0..n).filter(|i| mask & (1 << i) != 0).fold((0u64, 0.0), |acc, i| (acc.0 + weights[i], acc.1 + values[i]));
                (w <= budget).then_some(v)
            })
            .fold(0.0, f64::max)
    }

    fn kept(keep: &[bool], weights: &[u64], values: &[f64]) -> (u64, f64) {
        keep.iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .fold((0, 0.0), |acc, (i, _)| (acc.0 + weights[i], acc.1 + values[i]))
    }

    #[test]
    fn three_equal_items() {
        let keep = keep_within_budget(&[2, 2, 2], &[5.0, 4.0, 3.0], 4);
        assert_eq!(keep, vec![true, true, false]);
        let keep = evict_to_cover(&[2, 2, 2], &[5.0, 4.0, 3.0], 2).unwrap();
        assert_eq!(keep, vec![true, true, false]);
    }

    #[test]
    fn classic_instance() {
        let w = [5, 4, 6, 4];
        let v = [10.0, 40.0, 30.0, 50.0];
        let keep = keep_within_budget(&w, &v, 10);
        assert_eq!(kept(&keep, &w, &v).1, 90.0);
        let keep = evict_to_cover(&w, &v, 19 - 10).unwrap();
        assert_eq!(kept(&keep, &w, &v).1, 90.0);
    }

    #[test]
    fn cover_edge_cases() {
        assert_eq!(evict_to_cover(&[1, 2], &[1.0, 1.0], 0).unwrap(), vec![true, true]);
        assert!(evict_to_cover(&[1, 2], &[1.0, 1.0], 4).is_none());
        assert_eq!(evict_to_cover(&[1, 2], &[1.0, 1.0], 3).unwrap(), vec![false, false]);
        assert_eq!(keep_within_budget(&[], &[], 10), Vec::<bool>::new());
    }

    proptest! {
        #[test]
        fn two_weight_shortcut_matches_exhaustive(
            items in prop::collection::vec((prop::bool::ANY, 0.01f64..10.0), 1..14),
            wa in 1u64..40,
            wb in 1u64..40,
            slack in 0u64..120,
        ) {
            let weights: Vec<u64> = items.iter().map(|x| if x.0 { wa } else { wb }).collect();
            let values: Vec<f64> = items.iter().map(|x| x.1).collect();
            let total: u64 = weights.iter().sum();
            let budget = total.saturating_sub(slack);
            let best = exhaustive(&weights, &values, budget);
            let keep = evict_to_cover(&weights, &values, total - budget).unwrap();
            let (w, v) = kept(&keep, &weights, &values);
            prop_assert!(w <= budget);
            prop_assert!((v - best).abs() <= 1e-9 * best.max(1.0));
        }

        #[test]
        fn both_forms_match_exhaustive(
            items in prop::collection::vec((1u64..40, 0.01f64..10.0), 0..13),
            slack in 0u64..60,
        ) {
            let weights: Vec<u64> = items.iter().map(|x| x.0).collect();
            let values: Vec<f64> = items.iter().map(|x| x.1).collect();
            let total: u64 = weights.iter().sum();
            let budget = total.saturating_sub(slack);
            let best = exhaustive(&weights, &values, budget);

            let keep = keep_within_budget(&weights, &values, budget);
            let (w, v) = kept(&keep, &weights, &values);
            prop_assert!(w <= budget);
            prop_assert!((v - best).abs() <= 1e-9 * best.max(1.0));

            let keep = evict_to_cover(&weights, &values, total - budget).unwrap();
            let (w, v) = kept(&keep, &weights, &values);
            prop_assert!(w <= budget);
            prop_assert!((v - best).abs() <= 1e-9 * best.max(1.0));
        }
    }
}
