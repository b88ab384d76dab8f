//! Binary decision trees shared by the extra-trees and boosting learners.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        samples: usize,
    },
    /// Rows with `x[feature] <= threshold` go left. `gain` is the learner's
    /// split criterion: loss reduction for boosting, Gini decrease for
    /// extra-trees.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRecord {
    pub feature: usize,
    pub gain: f64,
    pub samples: usize,
}

impl Tree {
    pub fn leaf(value: f64, samples: usize) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value, samples }],
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn root_samples(&self) -> usize {
        match self.nodes.first() {
            Some(Node::Leaf { samples, .. }) | Some(Node::Split { samples, .. }) => *samples,
            None => 0,
        }
    }

    pub fn splits(&self) -> impl Iterator<Item = SplitRecord> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split {
                feature, gain, samples, ..
            } => Some(SplitRecord {
                feature: *feature,
                gain: *gain,
                samples: *samples,
            }),
            Node::Leaf { .. } => None,
        })
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
            }
        }
        if self.nodes.is_empty() {
            0
        } else {
            go(self, 0)
        }
    }

    /// Appends a placeholder and returns its index.
    pub(crate) fn reserve(&mut self) -> usize {
        self.nodes.push(Node::Leaf { value: 0.0, samples: 0 });
        self.nodes.len() - 1
    }
}

/// Splits `rows` in place so that rows satisfying `go_left` come first,
/// keeping relative order within each side. Returns the left count.
pub(crate) fn stable_partition(rows: &mut [usize], go_left: impl Fn(usize) -> bool) -> usize {
    let mut right = Vec::new();
    let mut k = 0;
    for i in 0..rows.len() {
        let r = rows[i];
        if go_left(r) {
            rows[k] = r;
            k += 1;
        } else {
            right.push(r);
        }
    }
    rows[k..].copy_from_slice(&right);
    k
}
