use serde::{Deserialize, Serialize};

/// A node in an ordered, labeled tree.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Node<L> {
    pub label: L,
    pub children: Vec<Node<L>>,
}

impl<L> Node<L> {
    pub fn leaf(label: L) -> Self {
        Self {
            label,
            children: Vec::new(),
        }
    }

    pub fn new(label: L, children: Vec<Node<L>>) -> Self {
        Self { label, children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Node::node_count).sum::<usize>()
    }

    pub fn map<M>(&self, f: &impl Fn(&L) -> M) -> Node<M> {
        Node {
            label: f(&self.label),
            children: self.children.iter().map(|c| c.map(f)).collect(),
        }
    }

    /// Follows a child-index path from this node.
    pub fn at_path(&self, path: &[usize]) -> Option<&Node<L>> {
        path.iter().try_fold(self, |node, &i| node.children.get(i))
    }

    pub fn at_path_mut(&mut self, path: &[usize]) -> Option<&mut Node<L>> {
        let mut node = self;
        for &i in path {
            node = node.children.get_mut(i)?;
        }
        Some(node)
    }

    /// Pre-order iterator over all nodes.
    pub fn iter(&self) -> impl Iterator<Item = &Node<L>> {
        let mut stack = vec![self];
        std::iter::from_fn(move || {
            let node = stack.pop()?;
            stack.extend(node.children.iter().rev());
            Some(node)
        })
    }
}

impl<L: std::fmt::Display> Node<L> {
    /// S-expression style rendering: `Label(child, child)`.
    pub fn to_sexp(&self) -> String {
        let mut out = self.label.to_string();
        if !self.children.is_empty() {
            out.push('(');
            let parts: Vec<String> = self.children.iter().map(Node::to_sexp).collect();
            out.push_str(&parts.join(", "));
            out.push(')');
        }
        out
    }
}
