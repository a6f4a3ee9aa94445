use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    check_training, check_width, combine_one_vs_rest, from_state, one_vs_rest_targets, parse_config, Classifier,
    ModelError,
};
use crate::stats::{logit_loss, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub min_child_weight: f64,
    /// Initial probability; boosting starts from its logit.
    pub base_score: f64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        Self {
            n_estimators: 100,
            max_depth: 3,
            learning_rate: 0.1,
            reg_lambda: 1.0,
            min_child_weight: 1.0,
            base_score: 0.5,
        }
    }
}

impl GbdtConfig {
    fn validate(&self) -> Result<(), ModelError> {
        let invalid = |path: &str, message: &str| {
            Err(ModelError::InvalidConfig {
                path: path.into(),
                message: message.into(),
            })
        };
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid("learning_rate", "must be a positive number");
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return invalid("reg_lambda", "must be non-negative");
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return invalid("min_child_weight", "must be non-negative");
        }
        if !(self.base_score > 0.0 && self.base_score < 1.0) {
            return invalid("base_score", "must lie strictly between 0 and 1");
        }
        Ok(())
    }

    fn base_margin(&self) -> f64 {
        (self.base_score / (1.0 - self.base_score)).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

/// Regression tree stored as a node arena; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(w) => return w,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub threshold: f64,
    pub gain: f64,
}

fn gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr))
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    // adjacent floats: the midpoint rounds onto an endpoint; `b` still
    // separates the two groups under the `x < threshold` rule
    if m > a && m < b {
        m
    } else {
        b
    }
}

/// Best threshold on one feature by exact greedy scan.
///
/// Candidates are midpoints between consecutive distinct values. Only
/// splits whose children both reach `min_child_weight` hessian mass and
/// whose gain is positive qualify; the smallest threshold wins ties.
pub fn best_split(
    gradients: &[f64],
    hessians: &[f64],
    values: &[f64],
    reg_lambda: f64,
    min_child_weight: f64,
) -> Option<SplitCandidate> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    best_split_sorted(gradients, hessians, values, &order, reg_lambda, min_child_weight)
}

fn best_split_sorted(
    gradients: &[f64],
    hessians: &[f64],
    values: &[f64],
    order: &[usize],
    lambda: f64,
    mcw: f64,
) -> Option<SplitCandidate> {
    let g_total: f64 = order.iter().map(|&i| gradients[i]).sum();
    let h_total: f64 = order.iter().map(|&i| hessians[i]).sum();
    let (mut gl, mut hl) = (0.0, 0.0);
    let mut best: Option<SplitCandidate> = None;
    for w in 0..order.len().saturating_sub(1) {
        let (i, next) = (order[w], order[w + 1]);
        gl += gradients[i];
        hl += hessians[i];
        if values[i] == values[next] {
            continue;
        }
        let (gr, hr) = (g_total - gl, h_total - hl);
        if hl < mcw || hr < mcw {
            continue;
        }
        let g = gain(gl, hl, gr, hr, lambda);
        if g > 0.0 && best.map_or(true, |b| g > b.gain) {
            best = Some(SplitCandidate {
                threshold: midpoint(values[i], values[next]),
                gain: g,
            });
        }
    }
    best
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    hess: &'a [f64],
    columns: Vec<Vec<f64>>,
    config: &'a GbdtConfig,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn leaf(&self, rows: &[usize]) -> Node {
        let g: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h: f64 = rows.iter().map(|&i| self.hess[i]).sum();
        Node::Leaf(-g / (h + self.config.reg_lambda) * self.config.learning_rate)
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let mut best: Option<(usize, SplitCandidate)> = None;
        if depth < self.config.max_depth && rows.len() >= 2 {
            for (f, column) in self.columns.iter().enumerate() {
                let mut order = rows.to_vec();
                order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
                let cand = best_split_sorted(
                    self.grad,
                    self.hess,
                    column,
                    &order,
                    self.config.reg_lambda,
                    self.config.min_child_weight,
                );
                if let Some(c) = cand {
                    if best.map_or(true, |(_, b)| c.gain > b.gain) {
                        best = Some((f, c));
                    }
                }
            }
        }
        self.nodes[at] = match best {
            None => self.leaf(rows),
            Some((feature, c)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| self.x[i][feature] < c.threshold);
                let left = self.grow(&l, depth + 1);
                let right = self.grow(&r, depth + 1);
                Node::Split {
                    feature,
                    threshold: c.threshold,
                    left,
                    right,
                }
            }
        };
        at
    }
}

/// Fits one boosted ensemble on 0/1 targets; returns trees and per-round
/// mean log-loss (entry 0 is the loss of the base score alone).
fn boost(x: &[Vec<f64>], y: &[f64], config: &GbdtConfig) -> (Vec<Tree>, Vec<f64>) {
    let n = x.len();
    let columns: Vec<Vec<f64>> = (0..x[0].len()).map(|f| x.iter().map(|r| r[f]).collect()).collect();
    let mut margin = vec![config.base_margin(); n];
    let mean_loss = |m: &[f64]| m.iter().zip(y).map(|(&z, &t)| logit_loss(z, t)).sum::<f64>() / n as f64;
    let mut losses = vec![mean_loss(&margin)];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let rows: Vec<usize> = (0..n).collect();
    for _ in 0..config.n_estimators {
        let p: Vec<f64> = margin.iter().map(|&z| sigmoid(z)).collect();
        let grad: Vec<f64> = p.iter().zip(y).map(|(p, t)| p - t).collect();
        let hess: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let mut grower = Grower {
            x,
            grad: &grad,
            hess: &hess,
            columns: columns.clone(),
            config,
            nodes: Vec::new(),
        };
        grower.grow(&rows, 0);
        let tree = Tree { nodes: grower.nodes };
        for (m, row) in margin.iter_mut().zip(x) {
            *m += tree.predict(row);
        }
        losses.push(mean_loss(&margin));
        trees.push(tree);
    }
    (trees, losses)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct GbdtState {
    n_features: usize,
    n_classes: usize,
    /// One ensemble per binary sub-problem.
    ensembles: Vec<Vec<Tree>>,
    loss_log: Vec<f64>,
}

/// Second-order gradient-boosted trees on the logistic loss.
#[derive(Debug, Clone)]
pub struct GbdtModel {
    kind: String,
    pub config: GbdtConfig,
    state: GbdtState,
}

impl GbdtModel {
    pub fn new(kind: &str, config: GbdtConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self {
            kind: kind.to_string(),
            config,
            state: GbdtState::default(),
        })
    }

    pub fn from_config(kind: &str, config: &Map<String, Value>) -> Result<Self, ModelError> {
        Self::new(kind, parse_config(config)?)
    }

    pub fn ensembles(&self) -> &[Vec<Tree>] {
        &self.state.ensembles
    }

    fn margin(&self, k: usize, row: &[f64]) -> f64 {
        self.config.base_margin() + self.state.ensembles[k].iter().map(|t| t.predict(row)).sum::<f64>()
    }
}

impl Classifier for GbdtModel {
    fn kind(&self) -> &str {
        &self.kind
    }

    fn config(&self) -> Value {
        serde_json::to_value(&self.config).unwrap_or(Value::Null)
    }

    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<(), ModelError> {
        let f = check_training(x, y, n_classes)?;
        // canonical row order makes the fit independent of input order
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&a, &b| {
            x[a].iter()
                .zip(&x[b])
                .map(|(p, q)| p.total_cmp(q))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .then(y[a].cmp(&y[b]))
        });
        let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<usize> = order.iter().map(|&i| y[i]).collect();

        let mut ensembles = Vec::new();
        let mut loss_log = vec![0.0; self.config.n_estimators + 1];
        let targets = one_vs_rest_targets(&ys, n_classes);
        for t in &targets {
            let (trees, losses) = boost(&xs, t, &self.config);
            for (acc, l) in loss_log.iter_mut().zip(losses) {
                *acc += l / targets.len() as f64;
            }
            ensembles.push(trees);
        }
        self.state = GbdtState {
            n_features: f,
            n_classes,
            ensembles,
            loss_log,
        };
        Ok(())
    }

    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        if self.state.ensembles.is_empty() {
            return Err(ModelError::NotFitted);
        }
        check_width(x, self.state.n_features)?;
        Ok(x.iter()
            .map(|row| {
                let scores: Vec<f64> = (0..self.state.ensembles.len())
                    .map(|k| sigmoid(self.margin(k, row)))
                    .collect();
                combine_one_vs_rest(&scores, self.state.n_classes)
            })
            .collect())
    }

    fn training_loss(&self) -> &[f64] {
        &self.state.loss_log
    }

    fn state(&self) -> Value {
        serde_json::to_value(&self.state).unwrap_or(Value::Null)
    }

    fn restore(&mut self, state: &Value) -> Result<(), ModelError> {
        self.state = from_state(state)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Exhaustive oracle: every midpoint, sums recomputed from scratch.
    fn enumerate(g: &[f64], h: &[f64], x: &[f64], lambda: f64, mcw: f64) -> Option<(f64, f64)> {
        let mut distinct = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let mut best: Option<(f64, f64)> = None;
        for w in distinct.windows(2) {
            let thr = (w[0] + w[1]) / 2.0;
            let sum = |pick: &dyn Fn(f64) -> bool, v: &[f64]| -> f64 {
                x.iter().zip(v).filter(|(xi, _)| pick(**xi)).map(|(_, vi)| vi).sum()
            };
            let (gl, hl) = (sum(&|xi| xi < thr, g), sum(&|xi| xi < thr, h));
            let (gr, hr) = (sum(&|xi| xi >= thr, g), sum(&|xi| xi >= thr, h));
            if hl < mcw || hr < mcw {
                continue;
            }
            let total = (gl + gr) * (gl + gr) / (hl + hr + lambda);
            let value = 0.5 * (gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - total);
            if value > 0.0 && best.map_or(true, |(_, b)| value > b) {
                best = Some((thr, value));
            }
        }
        best
    }

    fn logloss_stats(y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (y.iter().map(|t| 0.5 - t).collect(), vec![0.25; y.len()])
    }

    #[test]
    fn four_point_split() {
        let (g, h) = logloss_stats(&[0.0, 0.0, 1.0, 1.0]);
        let x = [1.0, 2.0, 3.0, 4.0];
        let got = best_split(&g, &h, &x, 1.0, 0.0).unwrap();
        let oracle = enumerate(&g, &h, &x, 1.0, 0.0).unwrap();
        assert_eq!(got.threshold, 2.5);
        assert_eq!((got.threshold, got.gain), oracle);
    }

    #[test]
    fn constant_feature_has_no_split() {
        let (g, h) = logloss_stats(&[0.0, 1.0, 0.0]);
        assert_eq!(best_split(&g, &h, &[3.0; 3], 1.0, 0.0), None);
    }

    #[test]
    fn tie_prefers_smaller_threshold() {
        // symmetric pattern: splitting at 1.5 and at 3.5 isolate one
        // identical-magnitude row each
        let g = [-1.0, 0.0, 0.0, 1.0];
        let h = [1.0; 4];
        let x = [1.0, 2.0, 3.0, 4.0];
        let got = best_split(&g, &h, &x, 1.0, 0.0).unwrap();
        let oracle = enumerate(&g, &h, &x, 1.0, 0.0).unwrap();
        assert_eq!(got.threshold, 1.5);
        assert_eq!((got.threshold, got.gain), oracle);
    }

    #[test]
    fn min_child_weight_blocks_split() {
        let (g, h) = logloss_stats(&[0.0, 0.0, 1.0, 1.0]);
        assert_eq!(best_split(&g, &h, &[1.0, 2.0, 3.0, 4.0], 1.0, 0.75), None);
    }

    #[test]
    fn random_instances_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..300 {
            let n = rng.gen_range(2..=32);
            let g: Vec<f64> = (0..n).map(|_| rng.gen_range(-1024..=1024) as f64 / 1024.0).collect();
            let h: Vec<f64> = (0..n).map(|_| rng.gen_range(1..=256) as f64 / 1024.0).collect();
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..8) as f64).collect();
            let got = best_split(&g, &h, &x, 1.0, 0.1).map(|c| (c.threshold, c.gain));
            assert_eq!(got, enumerate(&g, &h, &x, 1.0, 0.1));
        }
    }

    fn toy() -> (Vec<Vec<f64>>, Vec<usize>) {
        (vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]], vec![0, 0, 1, 1])
    }

    #[test]
    fn single_stump_separates() {
        let (x, y) = toy();
        let config = GbdtConfig {
            n_estimators: 1,
            max_depth: 1,
            min_child_weight: 0.0,
            ..Default::default()
        };
        let mut m = GbdtModel::new("GBDT", config).unwrap();
        m.fit(&x, &y, 2).unwrap();
        let pred = super::super::decide(&m.predict_proba(&x).unwrap(), 0.5);
        assert_eq!(pred, y);
        assert_eq!(m.ensembles()[0][0].depth(), 1);
    }

    #[test]
    fn empty_ensemble_predicts_base_score() {
        let (x, y) = toy();
        let config = GbdtConfig {
            n_estimators: 0,
            base_score: 0.3,
            ..Default::default()
        };
        let mut m = GbdtModel::new("GBDT", config).unwrap();
        m.fit(&x, &y, 2).unwrap();
        for p in m.predict_proba(&x).unwrap() {
            assert!((p[1] - 0.3).abs() < 1e-15);
        }
    }

    #[test]
    fn single_class_refused() {
        let (x, _) = toy();
        let mut m = GbdtModel::new("GBDT", GbdtConfig::default()).unwrap();
        assert_eq!(m.fit(&x, &[1, 1, 1, 1], 2), Err(ModelError::SingleClassTraining));
    }

    #[test]
    fn permutation_invariant_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<Vec<f64>> = (0..60)
            .map(|_| vec![rng.gen_range(0..5) as f64, rng.gen::<f64>(), rng.gen_range(0..3) as f64])
            .collect();
        let y: Vec<usize> = x.iter().map(|r| usize::from(r[0] + r[1] + rng.gen::<f64>() > 3.0)).collect();
        let mut a = GbdtModel::new("GBDT", GbdtConfig::default()).unwrap();
        a.fit(&x, &y, 2).unwrap();
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.shuffle(&mut rng);
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| y[i]).collect();
        let mut b = GbdtModel::new("GBDT", GbdtConfig::default()).unwrap();
        b.fit(&xs, &ys, 2).unwrap();
        assert_eq!(a.ensembles(), b.ensembles());
        for w in a.training_loss().windows(2) {
            assert!(w[1] <= w[0]);
        }
        for tree in &a.ensembles()[0] {
            assert!(tree.depth() <= 3);
        }
    }
}
