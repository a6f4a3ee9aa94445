use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{Map, Value};

use super::{
    Classifier, GbdtConfig, GbdtModel, LogisticConfig, LogisticModel, ModelError, MODEL_FORMAT, MODEL_FORMAT_VERSION,
};

/// Builds an unfitted model from a fully resolved config. The first
/// argument is the registry name the model is created under.
pub type Constructor = Arc<dyn Fn(&str, &Map<String, Value>) -> Result<Box<dyn Classifier>, ModelError> + Send + Sync>;

#[derive(Clone)]
struct Entry {
    constructor: Constructor,
    defaults: Map<String, Value>,
}

#[derive(Clone, Default)]
pub struct ModelRegistry {
    entries: BTreeMap<String, Entry>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelRegistry").field("names", &self.names()).finish()
    }
}

fn defaults_of<T: serde::Serialize>(config: &T) -> Map<String, Value> {
    match serde_json::to_value(config) {
        Ok(Value::Object(m)) => m,
        _ => Map::new(),
    }
}

impl ModelRegistry {
    /// Registry holding the built-in models: `LogisticRegression`, `GBDT`
    /// and its alias `XGB`.
    pub fn with_builtins() -> Self {
        let mut r = Self::default();
        let logistic: Constructor = Arc::new(|name, cfg| Ok(Box::new(LogisticModel::from_config(name, cfg)?)));
        let gbdt: Constructor = Arc::new(|name, cfg| Ok(Box::new(GbdtModel::from_config(name, cfg)?)));
        let builtin = [
            ("LogisticRegression", logistic, defaults_of(&LogisticConfig::default())),
            ("GBDT", gbdt.clone(), defaults_of(&GbdtConfig::default())),
            ("XGB", gbdt, defaults_of(&GbdtConfig::default())),
        ];
        for (name, ctor, defaults) in builtin {
            r.entries.insert(name.to_string(), Entry { constructor: ctor, defaults });
        }
        r
    }

    /// Adds or replaces a model.
    pub fn register(
        &mut self,
        name: &str,
        constructor: Constructor,
        defaults: Map<String, Value>,
    ) -> Result<(), ModelError> {
        if name.trim().is_empty() {
            return Err(ModelError::EmptyName);
        }
        self.entries.insert(name.to_string(), Entry { constructor, defaults });
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    fn entry(&self, name: &str) -> Result<&Entry, ModelError> {
        self.entries.get(name).ok_or_else(|| ModelError::UnknownModel {
            name: name.to_string(),
            available: self.names(),
        })
    }

    /// Defaults for `name` with `user` keys laid over them.
    pub fn resolve_config(&self, name: &str, user: &Map<String, Value>) -> Result<Map<String, Value>, ModelError> {
        let mut config = self.entry(name)?.defaults.clone();
        config.extend(user.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(config)
    }

    pub fn create(&self, name: &str, user: &Map<String, Value>) -> Result<Box<dyn Classifier>, ModelError> {
        let config = self.resolve_config(name, user)?;
        (self.entry(name)?.constructor)(name, &config)
    }

    /// Rebuilds a fitted model from [`model_to_json`](super::model_to_json)
    /// output.
    pub fn load(&self, doc: &Value) -> Result<Box<dyn Classifier>, ModelError> {
        let bad = |m: &str| ModelError::Persistence(m.to_string());
        if doc.get("format").and_then(Value::as_str) != Some(MODEL_FORMAT) {
            return Err(bad("missing or foreign format tag"));
        }
        match doc.get("version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
            Some(v) => return Err(ModelError::Persistence(format!("unsupported version {v}"))),
            None => return Err(bad("missing version")),
        }
        let kind = doc.get("kind").and_then(Value::as_str).ok_or_else(|| bad("missing kind"))?;
        let config = doc.get("config").and_then(Value::as_object).ok_or_else(|| bad("missing config"))?;
        let state = doc.get("state").ok_or_else(|| bad("missing state"))?;
        let mut model = self.create(kind, config)?;
        model.restore(state)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use serde_json::json;

    use super::super::model_to_json;
    use super::*;

    fn map(v: Value) -> Map<String, Value> {
        v.as_object().cloned().unwrap()
    }

    #[test]
    fn overlay_user_config() {
        let r = ModelRegistry::with_builtins();
        let cfg = r.resolve_config("GBDT", &map(json!({"max_depth": 3, "n_estimators": 7}))).unwrap();
        assert_eq!(cfg["n_estimators"], json!(7));
        assert_eq!(cfg["learning_rate"], json!(0.1));
    }

    #[test]
    fn register_and_overwrite() {
        let mut r = ModelRegistry::default();
        let ctor: Constructor = Arc::new(|name, cfg| Ok(Box::new(GbdtModel::from_config(name, cfg)?)));
        r.register("Boost", ctor.clone(), map(json!({"n_estimators": 100}))).unwrap();
        let cfg = r.resolve_config("Boost", &map(json!({"max_depth": 3}))).unwrap();
        assert_eq!(cfg, map(json!({"n_estimators": 100, "max_depth": 3})));
        r.register("Boost", ctor.clone(), map(json!({"n_estimators": 5}))).unwrap();
        assert_eq!(r.resolve_config("Boost", &Map::new()).unwrap()["n_estimators"], json!(5));
        assert_eq!(r.register(" ", ctor, Map::new()), Err(ModelError::EmptyName));
    }

    #[test]
    fn unknown_lists_names() {
        let r = ModelRegistry::with_builtins();
        match r.create("RandomForest", &Map::new()) {
            Err(ModelError::UnknownModel { available, .. }) => {
                assert_eq!(available, vec!["GBDT", "LogisticRegression", "XGB"]);
            }
            other => panic!("unexpected {:?}", other.map(|m| m.kind().to_string())),
        }
    }

    #[test]
    fn bad_config_field_path() {
        let r = ModelRegistry::with_builtins();
        match r.create("GBDT", &map(json!({"max_depth": "deep"}))) {
            Err(ModelError::InvalidConfig { path, .. }) => assert_eq!(path, "max_depth"),
            other => panic!("unexpected {:?}", other.map(|m| m.kind().to_string())),
        }
    }

    #[test]
    fn persistence_round_trip() {
        let r = ModelRegistry::with_builtins();
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
        let y: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        for name in ["GBDT", "LogisticRegression"] {
            let mut m = r.create(name, &Map::new()).unwrap();
            m.fit(&x, &y, 2).unwrap();
            let doc = model_to_json(m.as_ref());
            let text = serde_json::to_string(&doc).unwrap();
            let back = r.load(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back.predict_proba(&x).unwrap(), m.predict_proba(&x).unwrap());
            let mut future = doc.clone();
            future["version"] = json!(99);
            assert!(matches!(r.load(&future), Err(ModelError::Persistence(_))));
        }
    }
}
