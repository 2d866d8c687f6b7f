//! Unit-cost tree edit distance between ordered labeled trees
//! (Zhang-Shasha keyroot dynamic program).
//!
//! Runs in O(n1 * n2 * min(depth1, leaves1) * min(depth2, leaves2)) time and
//! O(n1 * n2) space. For the small algebra trees this crate compares, that is
//! well below a millisecond per pair.

use crate::tree::Node;

/// Postorder view of a tree, computed once and reused when one tree is
/// compared against many candidates.
#[derive(Debug, Clone)]
pub struct PostorderTree<'a, L> {
    labels: Vec<&'a L>,
    /// Postorder index of the leftmost leaf descendant of each node.
    lld: Vec<usize>,
    keyroots: Vec<usize>,
}

impl<'a, L> PostorderTree<'a, L> {
    pub fn new(root: &'a Node<L>) -> Self {
        let mut labels = Vec::new();
        let mut lld = Vec::new();
        Self::walk(root, &mut labels, &mut lld);
        let n = labels.len();
        // A keyroot is the highest-numbered node sharing a given leftmost leaf.
        let mut last_with_lld = vec![usize::MAX; n];
        for (i, &l) in lld.iter().enumerate() {
            last_with_lld[l] = i;
        }
        let mut keyroots: Vec<usize> = last_with_lld
            .into_iter()
            .filter(|&i| i != usize::MAX)
            .collect();
        keyroots.sort_unstable();
        Self {
            labels,
            lld,
            keyroots,
        }
    }

    fn walk(node: &'a Node<L>, labels: &mut Vec<&'a L>, lld: &mut Vec<usize>) -> usize {
        let mut leftmost = None;
        for child in &node.children {
            let l = Self::walk(child, labels, lld);
            leftmost.get_or_insert(l);
        }
        let index = labels.len();
        labels.push(&node.label);
        let l = leftmost.unwrap_or(index);
        lld.push(l);
        l
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Minimum number of unit-cost insertions, deletions, and relabelings that
/// turn `a` into `b`.
pub fn tree_edit_distance<L: PartialEq>(a: &Node<L>, b: &Node<L>) -> usize {
    distance(&PostorderTree::new(a), &PostorderTree::new(b))
}

pub fn distance<L: PartialEq>(a: &PostorderTree<'_, L>, b: &PostorderTree<'_, L>) -> usize {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return n1 + n2;
    }
    let mut td = vec![vec![0usize; n2]; n1];
    let mut fd = vec![vec![0usize; n2 + 1]; n1 + 1];
    for &i in &a.keyroots {
        for &j in &b.keyroots {
            forest_distance(a, b, i, j, &mut td, &mut fd);
        }
    }
    td[n1 - 1][n2 - 1]
}

fn forest_distance<L: PartialEq>(
    a: &PostorderTree<'_, L>,
    b: &PostorderTree<'_, L>,
    i: usize,
    j: usize,
    td: &mut [Vec<usize>],
    fd: &mut [Vec<usize>],
) {
    let (li, lj) = (a.lld[i], b.lld[j]);
    // fd[x][y] is the distance between forests a[li..li+x) and b[lj..lj+y).
    let (rows, cols) = (i - li + 1, j - lj + 1);
    fd[0][0] = 0;
    for x in 1..=rows {
        fd[x][0] = fd[x - 1][0] + 1;
    }
    for y in 1..=cols {
        fd[0][y] = fd[0][y - 1] + 1;
    }
    for x in 1..=rows {
        let ax = li + x - 1;
        for y in 1..=cols {
            let by = lj + y - 1;
            let del = fd[x - 1][y] + 1;
            let ins = fd[x][y - 1] + 1;
            if a.lld[ax] == li && b.lld[by] == lj {
                let relabel = fd[x - 1][y - 1] + usize::from(a.labels[ax] != b.labels[by]);
                let d = del.min(ins).min(relabel);
                fd[x][y] = d;
                td[ax][by] = d;
            } else {
                let px = a.lld[ax] - li;
                let py = b.lld[by] - lj;
                fd[x][y] = del.min(ins).min(fd[px][py] + td[ax][by]);
            }
        }
    }
}
