//! Maximum spanning arborescence over head scores.
//!
//! `scores[i][h]` is the score of attaching token i+1 to head h, where
//! column 0 is the root. The public decode enforces exactly one root by
//! solving once per candidate root with the root column masked elsewhere
//! and keeping the best total.

/// Per-row argmax, smallest head index on ties. No structural guarantee;
/// callers rely on precedence masking where cycles must be impossible.
pub fn greedy_heads(scores: &[Vec<f64>]) -> Vec<usize> {
    scores.iter().map(|row| argmax(row)).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Total score of a head assignment.
pub fn tree_score(scores: &[Vec<f64>], heads: &[usize]) -> f64 {
    heads
        .iter()
        .enumerate()
        .map(|(i, &h)| scores[i][h])
        .sum()
}

/// Exactly one head of 0 and no cycles.
pub fn is_single_root_tree(heads: &[usize]) -> bool {
    let t = heads.len();
    if heads.iter().filter(|&&h| h == 0).count() != 1 {
        return false;
    }
    if heads.iter().any(|&h| h > t) {
        return false;
    }
    (1..=t).all(|start| {
        let mut cur = start;
        for _ in 0..t {
            cur = heads[cur - 1];
            if cur == 0 {
                return true;
            }
        }
        false
    })
}

pub fn chu_liu_edmonds(scores: &[Vec<f64>]) -> Vec<usize> {
    let t = scores.len();
    assert!(t >= 1, "decode needs at least one token");
    assert!(
        scores.iter().all(|r| r.len() == t + 1),
        "score rows must span root plus every token"
    );
    let mut best: Option<(f64, Vec<usize>)> = None;
    for root in 1..=t {
        // Full square matrix over nodes 0..=t, node 0 the root. Only the
        // forced root keeps its root-column score.
        let mut m = vec![vec![f64::NEG_INFINITY; t + 1]; t + 1];
        for dep in 1..=t {
            for h in 0..=t {
                if h == dep {
                    continue;
                }
                if h == 0 && dep != root {
                    continue;
                }
                m[dep][h] = scores[dep - 1][h];
            }
        }
        let parent = solve(&m);
        let heads: Vec<usize> = (1..=t).map(|v| parent[v]).collect();
        let total = tree_score(scores, &heads);
        if best.as_ref().is_none_or(|(bt, _)| total > *bt) {
            best = Some((total, heads));
        }
    }
    best.unwrap().1
}

/// Greedy in-edges plus cycle contraction; `m[dep][head]`, node 0 the root.
/// Returns the parent of every node 1..n.
fn solve(m: &[Vec<f64>]) -> Vec<usize> {
    let n = m.len();
    let mut parent = vec![0usize; n];
    for v in 1..n {
        parent[v] = best_head(m, v, n);
    }
    let Some(cycle) = find_cycle(&parent) else {
        return parent;
    };

    let in_cycle = vec_membership(n, &cycle);
    // Old index -> contracted index; the cycle becomes node `c`.
    let mut old_of = Vec::with_capacity(n);
    let mut new_of = vec![usize::MAX; n];
    for v in 0..n {
        if !in_cycle[v] {
            new_of[v] = old_of.len();
            old_of.push(v);
        }
    }
    let c = old_of.len();
    let nn = c + 1;

    let mut sub = vec![vec![f64::NEG_INFINITY; nn]; nn];
    // Which cycle node an edge into the supernode actually enters, per
    // outside head; and which cycle node each outside dependent leaves from.
    let mut enter = vec![usize::MAX; n];
    let mut leave = vec![usize::MAX; n];
    for v in 1..n {
        if in_cycle[v] {
            continue;
        }
        for h in 0..n {
            if h == v {
                continue;
            }
            if in_cycle[h] {
                // v <- (cycle): strongest exit point wins.
                if m[v][h] != f64::NEG_INFINITY
                    && (leave[v] == usize::MAX || m[v][h] > m[v][leave[v]])
                {
                    leave[v] = h;
                    sub[new_of[v]][c] = m[v][h];
                }
            } else {
                sub[new_of[v]][new_of[h]] = m[v][h];
            }
        }
    }
    for h in 0..n {
        if in_cycle[h] {
            continue;
        }
        // (cycle) <- h: swapping u's cycle in-edge for the outside edge
        // costs (m[u][h] - m[u][parent[u]]); pick the cheapest swap.
        for &u in &cycle {
            if m[u][h] == f64::NEG_INFINITY {
                continue;
            }
            let gain = m[u][h] - m[u][parent[u]];
            if enter[h] == usize::MAX || gain > sub[c][new_of[h]] {
                enter[h] = u;
                sub[c][new_of[h]] = gain;
            }
        }
    }

    let sub_parent = solve(&sub);
    let mut out = parent;
    for v in 0..n {
        if v == 0 || in_cycle[v] {
            continue;
        }
        let p = sub_parent[new_of[v]];
        out[v] = if p == c { leave[v] } else { old_of[p] };
    }
    // Break the cycle at the node the outside edge enters; the remaining
    // cycle nodes keep their in-cycle parents, already present in `out`.
    let outside_head = old_of[sub_parent[c]];
    let u = enter[outside_head];
    out[u] = outside_head;
    out
}

fn best_head(m: &[Vec<f64>], v: usize, n: usize) -> usize {
    let mut bh = usize::MAX;
    for h in 0..n {
        if h == v {
            continue;
        }
        if bh == usize::MAX || m[v][h] > m[v][bh] {
            bh = h;
        }
    }
    bh
}

fn vec_membership(n: usize, cycle: &[usize]) -> Vec<bool> {
    let mut b = vec![false; n];
    for &v in cycle {
        b[v] = true;
    }
    b
}

fn find_cycle(parent: &[usize]) -> Option<Vec<usize>> {
    let n = parent.len();
    // 0 = unvisited, 1 = on current walk, 2 = done.
    let mut state = vec![0u8; n];
    state[0] = 2;
    for start in 1..n {
        if state[start] != 0 {
            continue;
        }
        let mut path = Vec::new();
        let mut v = start;
        while state[v] == 0 {
            state[v] = 1;
            path.push(v);
            v = parent[v];
        }
        if state[v] == 1 {
            let at = path.iter().position(|&p| p == v).unwrap();
            return Some(path[at..].to_vec());
        }
        for p in path {
            state[p] = 2;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::rng::RngPool;

    /// Exhaustive max over all single-root head vectors.
    fn enumerate_best(scores: &[Vec<f64>]) -> (Vec<usize>, f64) {
        let t = scores.len();
        let mut best: Option<(Vec<usize>, f64)> = None;
        let mut heads = vec![0usize; t];
        fn rec(
            i: usize,
            t: usize,
            scores: &[Vec<f64>],
            heads: &mut Vec<usize>,
            best: &mut Option<(Vec<usize>, f64)>,
        ) {
            if i == t {
                if is_single_root_tree(heads) {
                    let s = tree_score(scores, heads);
                    if best.as_ref().is_none_or(|(_, bs)| s > *bs) {
                        *best = Some((heads.clone(), s));
                    }
                }
                return;
            }
            for h in 0..=t {
                if h == i + 1 {
                    continue;
                }
                heads[i] = h;
                rec(i + 1, t, scores, heads, best);
            }
        }
        rec(0, t, scores, &mut heads, &mut best);
        best.unwrap()
    }

    fn random_scores(rng: &mut rand_chacha::ChaCha20Rng, t: usize) -> Vec<Vec<f64>> {
        (0..t)
            .map(|_| (0..=t).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect()
    }

    #[test]
    fn single_token_attaches_to_root() {
        assert_eq!(chu_liu_edmonds(&[vec![1.0, f64::NEG_INFINITY]]), vec![0]);
    }

    #[test]
    fn two_cycle_is_contracted_optimally() {
        // Tokens 1 and 2 strongly prefer each other; token 3 is neutral.
        let scores = vec![
            vec![1.0, -1.0, 9.0, 0.0],
            vec![0.5, 9.0, -1.0, 0.0],
            vec![0.1, 0.2, 0.3, -1.0],
        ];
        let heads = chu_liu_edmonds(&scores);
        let (oracle, best) = enumerate_best(&scores);
        assert!(is_single_root_tree(&heads));
        assert_eq!(tree_score(&scores, &heads), best, "oracle tree {oracle:?}");
    }

    #[test]
    fn uniform_scores_break_ties_deterministically() {
        let s = 0.7;
        let scores = vec![vec![s; 4]; 3];
        let heads = chu_liu_edmonds(&scores);
        assert!(is_single_root_tree(&heads));
        assert_eq!(tree_score(&scores, &heads), 3.0 * s);
        assert_eq!(heads, chu_liu_edmonds(&scores));
    }

    #[test]
    fn matches_enumeration_up_to_five_tokens() {
        let mut rng = RngPool::new(17).stream("cle-oracle");
        for case in 0..60 {
            let t = 1 + case % 5;
            let scores = random_scores(&mut rng, t);
            let heads = chu_liu_edmonds(&scores);
            let (_, best) = enumerate_best(&scores);
            assert!(is_single_root_tree(&heads), "case {case}");
            let got = tree_score(&scores, &heads);
            assert!(
                (got - best).abs() < 1e-12,
                "case {case}: got {got}, oracle {best}"
            );
        }
    }

    #[test]
    fn always_a_valid_tree_up_to_thirty_tokens() {
        let mut rng = RngPool::new(23).stream("cle-valid");
        for case in 0..1000 {
            let t = 1 + case % 30;
            let scores = random_scores(&mut rng, t);
            let heads = chu_liu_edmonds(&scores);
            assert!(is_single_root_tree(&heads), "case {case}: {heads:?}");
        }
    }

    #[test]
    fn greedy_takes_row_argmax() {
        let scores = vec![vec![0.0, 5.0, 1.0], vec![9.0, 1.0, 2.0]];
        assert_eq!(greedy_heads(&scores), vec![1, 0]);
    }

    #[test]
    fn greedy_single_token() {
        assert_eq!(greedy_heads(&[vec![1.0, 0.5]]), vec![0]);
    }

    #[test]
    fn greedy_with_precedence_mask_yields_valid_structure() {
        // Masking columns > i forces every pick to an earlier position, so
        // the result can never cycle.
        let mut rng = RngPool::new(31).stream("greedy-mask");
        for _ in 0..200 {
            let t = rng.random_range(1..12usize);
            let scores: Vec<Vec<f64>> = (0..t)
                .map(|i| {
                    (0..=t)
                        .map(|h| {
                            if h <= i {
                                rng.random_range(-1.0..1.0)
                            } else {
                                f64::NEG_INFINITY
                            }
                        })
                        .collect()
                })
                .collect();
            let heads = greedy_heads(&scores);
            for (i, &h) in heads.iter().enumerate() {
                assert!(h <= i);
            }
        }
    }

    #[test]
    fn cle_never_scores_below_a_valid_greedy_tree() {
        let mut rng = RngPool::new(37).stream("cle-vs-greedy");
        let mut seen_valid = 0;
        for _ in 0..500 {
            let t = 1 + rng.random_range(0..6usize);
            let scores = random_scores(&mut rng, t);
            let greedy = greedy_heads(&scores);
            if !is_single_root_tree(&greedy) {
                continue;
            }
            seen_valid += 1;
            let cle = chu_liu_edmonds(&scores);
            assert!(tree_score(&scores, &cle) >= tree_score(&scores, &greedy) - 1e-12);
        }
        assert!(seen_valid > 20);
    }
}
