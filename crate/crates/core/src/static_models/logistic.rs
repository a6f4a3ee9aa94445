use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    check_training, check_width, combine_one_vs_rest, from_state, one_vs_rest_targets, parse_config, Classifier,
    ModelError,
};
use crate::stats::{logit_loss, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogisticConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 1000,
            l2: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
struct LogisticState {
    n_features: usize,
    n_classes: usize,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
    loss_log: Vec<f64>,
}

/// Gradient-descent logistic regression, one-vs-rest beyond two classes.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    kind: String,
    pub config: LogisticConfig,
    state: LogisticState,
}

/// Mean log-loss plus `(l2 / 2) * |w|^2` (bias unpenalized) and its
/// gradient with respect to `(w, b)`.
pub fn logistic_objective(w: &[f64], b: f64, x: &[Vec<f64>], y: &[f64], l2: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (row, &t) in x.iter().zip(y) {
        let z = b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
        loss += logit_loss(z, t);
        let r = sigmoid(z) - t;
        gb += r;
        for (g, a) in gw.iter_mut().zip(row) {
            *g += r * a;
        }
    }
    loss /= n;
    gb /= n;
    for (g, wj) in gw.iter_mut().zip(w) {
        *g = *g / n + l2 * wj;
    }
    loss += 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    (loss, gw, gb)
}

impl LogisticModel {
    pub fn new(kind: &str, config: LogisticConfig) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            state: LogisticState::default(),
        }
    }

    pub fn from_config(kind: &str, config: &Map<String, Value>) -> Result<Self, ModelError> {
        let config: LogisticConfig = parse_config(config)?;
        let invalid = |path: &str, message: &str| ModelError::InvalidConfig {
            path: path.into(),
            message: message.into(),
        };
        if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be a positive number"));
        }
        if !(config.l2 >= 0.0 && config.l2.is_finite()) {
            return Err(invalid("l2", "must be non-negative"));
        }
        Ok(Self::new(kind, config))
    }

    /// Weights of binary sub-problem `k` (the positive class for two-class
    /// problems).
    pub fn weights(&self, k: usize) -> Option<(&[f64], f64)> {
        Some((self.state.weights.get(k)?.as_slice(), self.state.biases[k]))
    }
}

impl Classifier for LogisticModel {
    fn kind(&self) -> &str {
        &self.kind
    }

    fn config(&self) -> Value {
        serde_json::to_value(&self.config).unwrap_or(Value::Null)
    }

    fn fit(&mut self, x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<(), ModelError> {
        let f = check_training(x, y, n_classes)?;
        let targets = one_vs_rest_targets(y, n_classes);
        let mut weights = vec![vec![0.0; f]; targets.len()];
        let mut biases = vec![0.0; targets.len()];
        let mut loss_log = Vec::with_capacity(self.config.epochs);
        let lr = self.config.learning_rate;
        for epoch in 0..self.config.epochs {
            let mut epoch_loss = 0.0;
            for (k, t) in targets.iter().enumerate() {
                let (loss, gw, gb) = logistic_objective(&weights[k], biases[k], x, t, self.config.l2);
                epoch_loss += loss;
                for (w, g) in weights[k].iter_mut().zip(gw) {
                    *w -= lr * g;
                }
                biases[k] -= lr * gb;
            }
            let epoch_loss = epoch_loss / targets.len() as f64;
            if !epoch_loss.is_finite() || weights.iter().flatten().any(|w| !w.is_finite()) {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            loss_log.push(epoch_loss);
        }
        self.state = LogisticState {
            n_features: f,
            n_classes,
            weights,
            biases,
            loss_log,
        };
        Ok(())
    }

    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ModelError> {
        if self.state.weights.is_empty() {
            return Err(ModelError::NotFitted);
        }
        check_width(x, self.state.n_features)?;
        Ok(x.iter()
            .map(|row| {
                let scores: Vec<f64> = self
                    .state
                    .weights
                    .iter()
                    .zip(&self.state.biases)
                    .map(|(w, b)| sigmoid(b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>()))
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
    use super::*;
    use crate::stats::softplus;

    fn fit(x: &[Vec<f64>], y: &[usize], config: LogisticConfig) -> LogisticModel {
        let mut m = LogisticModel::new("LogisticRegression", config);
        m.fit(x, y, 2).unwrap();
        m
    }

    #[test]
    fn zero_weights_give_half() {
        let m = fit(
            &[vec![1.0], vec![-1.0]],
            &[1, 0],
            LogisticConfig {
                epochs: 0,
                ..Default::default()
            },
        );
        let p = m.predict_proba(&[vec![123.0], vec![-4.0]]).unwrap();
        assert_eq!(p, vec![vec![0.5, 0.5]; 2]);
    }

    #[test]
    fn separable_matches_grid_search() {
        let x = vec![vec![-1.0], vec![1.0]];
        let config = LogisticConfig {
            learning_rate: 0.5,
            epochs: 5000,
            l2: 0.1,
        };
        let m = fit(&x, &[0, 1], config);
        let (w, b) = m.weights(0).unwrap();
        // symmetric data: b = 0 at the optimum, so the objective reduces to
        // softplus(-w) + 0.05 w^2
        let objective = |w: f64| softplus(-w) + 0.05 * w * w;
        let (mut best, mut arg) = (f64::INFINITY, 0.0);
        for k in 0..=100_000 {
            let w = k as f64 * 1e-4;
            if objective(w) < best {
                best = objective(w);
                arg = w;
            }
        }
        assert!((w[0] - arg).abs() < 1e-3, "{} vs {}", w[0], arg);
        assert!(b.abs() < 1e-9);
    }

    #[test]
    fn duplicated_rows_same_weights() {
        let x = vec![vec![0.3, 1.0], vec![-1.2, 0.5], vec![2.0, -0.7]];
        let y = [1, 0, 1];
        let doubled: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let a = fit(&x, &y, LogisticConfig::default());
        let b = fit(&doubled, &[1, 0, 1, 1, 0, 1], LogisticConfig::default());
        let (wa, ba) = a.weights(0).unwrap();
        let (wb, bb) = b.weights(0).unwrap();
        for (p, q) in wa.iter().zip(wb).chain([(&ba, &bb)]) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.3], vec![-0.7, 0.9, 0.1], vec![0.0, -2.0, 1.0]];
        let y = [1.0, 0.0, 1.0, 0.0];
        let w = vec![0.3, -0.2, 0.1];
        let b = 0.05;
        let (_, gw, gb) = logistic_objective(&w, b, &x, &y, 0.2);
        let h = 1e-5;
        let mut params: Vec<f64> = w.iter().copied().chain([b]).collect();
        let analytic: Vec<f64> = gw.into_iter().chain([gb]).collect();
        for i in 0..params.len() {
            let orig = params[i];
            let eval = |p: &[f64]| logistic_objective(&p[..3], p[3], &x, &y, 0.2).0;
            params[i] = orig + h;
            let up = eval(&params);
            params[i] = orig - h;
            let down = eval(&params);
            params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-8);
            assert!(rel < 1e-6, "param {i}: rel err {rel}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let x = vec![vec![1e3], vec![-1e3], vec![2e3], vec![-5e2]];
        let mut m = LogisticModel::new(
            "LogisticRegression",
            LogisticConfig {
                learning_rate: 1e300,
                epochs: 10,
                l2: 1.0,
            },
        );
        assert!(matches!(m.fit(&x, &[1, 0, 0, 1], 2), Err(ModelError::NonFiniteLoss { .. })));
    }

    #[test]
    fn multiclass_rows_sum_to_one() {
        let x: Vec<Vec<f64>> = (0..9).map(|i| vec![(i / 3) as f64]).collect();
        let y: Vec<usize> = (0..9).map(|i| i / 3).collect();
        let mut m = LogisticModel::new("LogisticRegression", LogisticConfig::default());
        m.fit(&x, &y, 3).unwrap();
        for p in m.predict_proba(&x).unwrap() {
            assert_eq!(p.len(), 3);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
