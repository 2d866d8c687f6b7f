//! Slow, obviously-correct reference implementations.

use std::collections::HashMap;

use qsynth_core::tree::Node;

/// Ordered forest edit distance by direct recursion on rightmost roots,
/// memoized on the forests' bracket strings. Unit costs.
pub fn brute_ted(a: &Node<char>, b: &Node<char>) -> usize {
    let mut memo = HashMap::new();
    forest_distance(std::slice::from_ref(a), std::slice::from_ref(b), &mut memo)
}

fn brackets(forest: &[Node<char>]) -> String {
    fn go(n: &Node<char>, out: &mut String) {
        out.push('(');
        out.push(n.label);
        n.children.iter().for_each(|c| go(c, out));
        out.push(')');
    }
    let mut s = String::new();
    forest.iter().for_each(|n| go(n, &mut s));
    s
}

fn size(forest: &[Node<char>]) -> usize {
    forest.iter().map(Node::node_count).sum()
}

fn forest_distance(
    f: &[Node<char>],
    g: &[Node<char>],
    memo: &mut HashMap<(String, String), usize>,
) -> usize {
    if f.is_empty() {
        return size(g);
    }
    if g.is_empty() {
        return size(f);
    }
    let key = (brackets(f), brackets(g));
    if let Some(&d) = memo.get(&key) {
        return d;
    }
    let (v, f_rest) = f.split_last().unwrap();
    let (w, g_rest) = g.split_last().unwrap();
    // Deleting a root splices its children into the forest in its place.
    let f_minus_v: Vec<Node<char>> = f_rest.iter().chain(&v.children).cloned().collect();
    let g_minus_w: Vec<Node<char>> = g_rest.iter().chain(&w.children).cloned().collect();
    let delete = forest_distance(&f_minus_v, g, memo) + 1;
    let insert = forest_distance(f, &g_minus_w, memo) + 1;
    let relabel = forest_distance(f_rest, g_rest, memo)
        + forest_distance(&v.children, &w.children, memo)
        + usize::from(v.label != w.label);
    let d = delete.min(insert).min(relabel);
    memo.insert(key, d);
    d
}

/// Sentence BLEU-4 on whitespace tokens, 0-100, computed with plain loops
/// and a product instead of a log sum. `smooth` adds one to numerator and
/// denominator of an order >= 2 with no match.
pub fn naive_bleu(candidate: &str, references: &[&str], smooth: bool) -> f64 {
    let cand: Vec<String> = candidate
        .to_lowercase()
        .split_whitespace()
        .map(String::from)
        .collect();
    let refs: Vec<Vec<String>> = references
        .iter()
        .map(|r| {
            r.to_lowercase()
                .split_whitespace()
                .map(String::from)
                .collect()
        })
        .collect();
    let mut product = 1.0;
    for n in 1..=4 {
        let grams: Vec<&[String]> = if cand.len() >= n {
            cand.windows(n).collect()
        } else {
            vec![]
        };
        let mut seen: Vec<&[String]> = Vec::new();
        let mut matched = 0;
        for g in &grams {
            if seen.contains(g) {
                continue;
            }
            seen.push(g);
            let in_cand = grams.iter().filter(|x| *x == g).count();
            let mut best_ref = 0;
            for r in &refs {
                let in_ref = if r.len() >= n {
                    r.windows(n).filter(|x| x == g).count()
                } else {
                    0
                };
                best_ref = best_ref.max(in_ref);
            }
            matched += in_cand.min(best_ref);
        }
        let total = grams.len();
        let p = if n >= 2 && smooth && matched == 0 {
            1.0 / (total as f64 + 1.0)
        } else if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
        product *= p;
    }
    let c = cand.len();
    let mut best = refs[0].len();
    for r in &refs {
        let (d_new, d_best) = (r.len().abs_diff(c), best.abs_diff(c));
        if d_new < d_best || (d_new == d_best && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c >= best {
        1.0
    } else {
        (1.0 - best as f64 / c as f64).exp()
    };
    100.0 * bp * product.powf(0.25)
}

/// Random ordered tree with 1..=`max_nodes` nodes over the first
/// `alphabet` lowercase letters. Each new node hangs under a uniformly
/// chosen earlier node, after that node's existing children.
pub fn random_tree(rng: &mut impl rand::Rng, max_nodes: usize, alphabet: u8) -> Node<char> {
    let n = rng.gen_range(1..=max_nodes);
    let labels: Vec<char> = (0..n)
        .map(|_| (b'a' + rng.gen_range(0..alphabet)) as char)
        .collect();
    let parents: Vec<usize> = (1..n).map(|i| rng.gen_range(0..i)).collect();
    fn build(i: usize, labels: &[char], parents: &[usize]) -> Node<char> {
        let children = (1..labels.len())
            .filter(|&j| parents[j - 1] == i)
            .map(|j| build(j, labels, parents))
            .collect();
        Node::new(labels[i], children)
    }
    build(0, &labels, &parents)
}
