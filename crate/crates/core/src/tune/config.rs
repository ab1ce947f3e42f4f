//! Default-configuration documents: `{"<model>": {"model": {...}, "training": {...}}}`.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::methods::Params;

macro_rules! builtin_configs {
    ($($name:literal),+ $(,)?) => {
        /// Configuration files shipped with the crate, used when no
        /// `configs/` directory is found at run time.
        pub fn builtin_default(model: &str) -> Option<&'static str> {
            match model {
                $($name => Some(include_str!(concat!("../../../../configs/default/", $name, ".json"))),)+
                _ => None,
            }
        }

        pub fn builtin_space(model: &str) -> Option<&'static str> {
            match model {
                $($name => Some(include_str!(concat!("../../../../configs/opt_space/", $name, ".json"))),)+
                _ => None,
            }
        }
    };
}

builtin_configs!(
    "cart",
    "dummy",
    "gbdt",
    "knn",
    "linear_regression",
    "logreg",
    "mlp",
    "naive_bayes",
    "ncm",
    "random_forest",
    "svm",
);

/// Reads `<dir>/<kind>/<model>.json`, falling back to the built-in copy when
/// the file does not exist.
pub fn read_config_text(dir: Option<&Path>, kind: &str, model: &str) -> Result<String> {
    if let Some(dir) = dir {
        let path = dir.join(kind).join(format!("{model}.json"));
        if path.is_file() {
            return fs::read_to_string(&path).map_err(|e| Error::Load {
                path: path.clone(),
                message: e.to_string(),
            });
        }
    }
    let builtin = match kind {
        "default" => builtin_default(model),
        "opt_space" => builtin_space(model),
        _ => None,
    };
    builtin
        .map(str::to_string)
        .ok_or_else(|| Error::Config(format!("no {kind} configuration for model `{model}`")))
}

/// Splits `{"<model>": {groups...}}` into the model name and its groups.
pub(crate) fn unwrap_document(doc: &Value) -> Result<(String, &Map<String, Value>)> {
    let top = doc
        .as_object()
        .filter(|o| o.len() == 1)
        .ok_or_else(|| Error::Config("configuration must be an object with exactly one model key".into()))?;
    let (name, body) = top.iter().next().expect("one key");
    let body = body
        .as_object()
        .ok_or_else(|| Error::Config(format!("`{name}` must map to an object of groups")))?;
    Ok((name.clone(), body))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_name: String,
    pub model: Params,
    pub training: Params,
}

impl ModelConfig {
    pub fn empty(model_name: &str) -> Self {
        Self {
            model_name: model_name.to_string(),
            model: Params::new(),
            training: Params::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_value(&serde_json::from_str(text)?)
    }

    pub fn from_value(doc: &Value) -> Result<Self> {
        let (model_name, body) = unwrap_document(doc)?;
        let group = |key: &str| -> Result<Params> {
            match body.get(key) {
                None => Ok(Params::new()),
                Some(Value::Object(m)) => Ok(m.clone()),
                Some(_) => Err(Error::Config(format!("`{model_name}.{key}` must be an object"))),
            }
        };
        if let Some(k) = body.keys().find(|k| *k != "model" && *k != "training") {
            return Err(Error::Config(format!("unknown group `{model_name}.{k}`")));
        }
        Ok(Self {
            model: group("model")?,
            training: group("training")?,
            model_name,
        })
    }

    pub fn to_value(&self) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), Value::Object(self.model.clone()));
        body.insert("training".into(), Value::Object(self.training.clone()));
        let mut top = Map::new();
        top.insert(self.model_name.clone(), Value::Object(body));
        Value::Object(top)
    }

    pub fn group_mut(&mut self, group: &str) -> Option<&mut Params> {
        match group {
            "model" => Some(&mut self.model),
            "training" => Some(&mut self.training),
            _ => None,
        }
    }

    /// Sets `key` in the group that already holds it, else in `training`.
    pub fn set(&mut self, key: &str, value: Value) {
        if self.model.contains_key(key) {
            self.model.insert(key.to_string(), value);
        } else {
            self.training.insert(key.to_string(), value);
        }
    }

    /// Both groups merged into one flat map; `training` wins on a clash.
    pub fn flatten(&self) -> Params {
        let mut out = self.model.clone();
        out.extend(self.training.clone());
        out
    }
}
