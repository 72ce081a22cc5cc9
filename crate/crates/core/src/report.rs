//! Combined explanation documents shared by the CLI and the HTTP service.
//!
//! Both front ends parse the same [`ExplainRequest`] and serialize the same
//! [`ExplanationReport`], so identical inputs give byte-identical output.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contribution::{forest_contribution, ContributionDoc};
use crate::data::{FeatureKind, Value};
use crate::forest::{Forest, ForestError};
use crate::rules::{explain_rules, RuleConfig, RuleError, RuleExplanationDoc};
use crate::sensitivity::{local_pd, PdCurve, SensitivityError, DEFAULT_GRID_POINTS};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("instance has {got} values, model expects {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("instance names unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("bad value for `{feature}`: {reason}")]
    BadValue { feature: String, reason: String },
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no techniques requested")]
    NoTechniques,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Sensitivity(#[from] SensitivityError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

impl ReportError {
    /// True for errors caused by the request rather than the model.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            ReportError::Config(_) | ReportError::Rules(RuleError::InvalidConfig(_))
        )
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::ArityMismatch { .. } | ReportError::Forest(ForestError::ArityMismatch { .. }) => {
                "ArityMismatch"
            }
            ReportError::UnknownFeature(_) | ReportError::Sensitivity(SensitivityError::UnknownFeature(_)) => {
                "UnknownFeature"
            }
            ReportError::BadValue { .. } | ReportError::Forest(_) => "BadInstance",
            ReportError::Malformed(_) | ReportError::NoTechniques => "BadRequest",
            ReportError::Config(_) | ReportError::Rules(RuleError::InvalidConfig(_)) => "InvalidConfig",
            ReportError::Sensitivity(_) => "Sensitivity",
            ReportError::Rules(_) => "Rules",
        }
    }
}

pub type Result<T, E = ReportError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Technique {
    Contribution,
    Pd,
    Rules,
}

impl std::str::FromStr for Technique {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contribution" => Ok(Technique::Contribution),
            "pd" => Ok(Technique::Pd),
            "rules" => Ok(Technique::Rules),
            other => Err(ReportError::Malformed(format!("unknown technique `{other}`"))),
        }
    }
}

/// An instance as written by users: named values or a positional array.
/// Values are numbers, level names, or `null` for missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceDoc {
    Named {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<String>,
        values: IndexMap<String, serde_json::Value>,
    },
    Positional(Vec<serde_json::Value>),
}

impl InstanceDoc {
    pub fn id(&self) -> Option<&str> {
        match self {
            InstanceDoc::Named { id, .. } => id.as_deref(),
            InstanceDoc::Positional(_) => None,
        }
    }

    /// Encodes the instance in the forest's feature order.
    pub fn resolve(&self, forest: &Forest) -> Result<Vec<Value>> {
        let expected = forest.n_features();
        match self {
            InstanceDoc::Positional(values) => {
                if values.len() != expected {
                    return Err(ReportError::ArityMismatch {
                        expected,
                        got: values.len(),
                    });
                }
                forest
                    .features
                    .iter()
                    .zip(values)
                    .map(|(meta, v)| encode(&meta.name, &meta.kind, v))
                    .collect()
            }
            InstanceDoc::Named { values, .. } => {
                if let Some(name) = values.keys().find(|k| forest.feature_index(k).is_err()) {
                    return Err(ReportError::UnknownFeature(name.clone()));
                }
                if values.len() != expected {
                    return Err(ReportError::ArityMismatch {
                        expected,
                        got: values.len(),
                    });
                }
                forest
                    .features
                    .iter()
                    .map(|meta| encode(&meta.name, &meta.kind, &values[&meta.name]))
                    .collect()
            }
        }
    }
}

fn encode(feature: &str, kind: &FeatureKind, value: &serde_json::Value) -> Result<Value> {
    let bad = |reason: String| ReportError::BadValue {
        feature: feature.to_string(),
        reason,
    };
    match (kind, value) {
        (_, serde_json::Value::Null) => Ok(None),
        (FeatureKind::Continuous { .. }, serde_json::Value::Number(n)) => n
            .as_f64()
            .map(Some)
            .ok_or_else(|| bad(format!("{n} is not a finite number"))),
        (FeatureKind::Continuous { .. }, serde_json::Value::String(s)) => s
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .map(Some)
            .ok_or_else(|| bad(format!("`{s}` is not a number"))),
        (FeatureKind::Categorical { levels }, serde_json::Value::String(s)) => levels
            .iter()
            .position(|l| l == s)
            .map(|i| Some(i as f64))
            .ok_or_else(|| bad(format!("unknown level `{s}`"))),
        (FeatureKind::Categorical { levels }, serde_json::Value::Number(n)) => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            levels
                .iter()
                .position(|l| l.parse::<f64>().is_ok_and(|v| v == x))
                .map(|i| Some(i as f64))
                .ok_or_else(|| bad(format!("unknown level {n}")))
        }
        (_, other) => Err(bad(format!("unsupported value {other}"))),
    }
}

/// Options for the PD section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdOptions {
    /// Features to plot; all features when absent.
    pub features: Option<Vec<String>>,
    pub grid_points: usize,
}

impl Default for PdOptions {
    fn default() -> Self {
        PdOptions {
            features: None,
            grid_points: DEFAULT_GRID_POINTS,
        }
    }
}

/// Body of an explain call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainRequest {
    pub instance: InstanceDoc,
    pub techniques: Vec<Technique>,
    /// Rule configuration; defaults fill missing fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<serde_json::Value>,
}

impl ExplainRequest {
    pub fn rule_config(&self) -> Result<RuleConfig> {
        let config: RuleConfig = match &self.config {
            None | Some(serde_json::Value::Null) => RuleConfig::default(),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| ReportError::Config(e.to_string()))?,
        };
        config.validate().map_err(|e| ReportError::Config(e.to_string()))?;
        Ok(config)
    }

    pub fn pd_options(&self) -> Result<PdOptions> {
        match &self.pd {
            None | Some(serde_json::Value::Null) => Ok(PdOptions::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| ReportError::Config(format!("pd: {e}"))),
        }
    }
}

/// Combined explanation document. The prediction is always present; each
/// requested technique fills its section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub prediction: f64,
    pub predicted_class: u8,
    pub target_class: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contribution: Option<ContributionDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pd: Option<Vec<PdCurve>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rules: Option<RuleExplanationDoc>,
}

impl ExplanationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}

/// Runs every requested technique. All inputs are validated before any
/// computation starts.
pub fn explain(forest: &Forest, request: &ExplainRequest) -> Result<ExplanationReport> {
    if request.techniques.is_empty() {
        return Err(ReportError::NoTechniques);
    }
    let instance = request.instance.resolve(forest)?;
    forest.check_instance(&instance)?;
    let wants = |t| request.techniques.contains(&t);
    let config = if wants(Technique::Rules) {
        Some(request.rule_config()?)
    } else {
        None
    };
    let pd_options = if wants(Technique::Pd) {
        Some(request.pd_options()?)
    } else {
        None
    };
    if let Some(names) = pd_options.as_ref().and_then(|o| o.features.as_ref()) {
        if let Some(name) = names.iter().find(|n| forest.feature_index(n).is_err()) {
            return Err(ReportError::UnknownFeature(name.clone()));
        }
    }

    let instance_id = request.instance.id().map(str::to_string);
    let prediction = forest.predict_proba(&instance)?;
    let contribution = if wants(Technique::Contribution) {
        let mut cv = forest_contribution(forest, &instance)?;
        cv.instance_id = instance_id.clone();
        Some(cv.to_doc())
    } else {
        None
    };
    let pd = match pd_options {
        Some(options) => {
            let names = options.features.unwrap_or_else(|| forest.feature_names());
            let curves = names
                .iter()
                .filter(|name| {
                    let meta = &forest.features[forest.feature_index(name).expect("checked above")];
                    meta.range().is_none_or(|(lo, hi)| hi > lo)
                })
                .map(|name| local_pd(forest, &instance, name, options.grid_points))
                .collect::<Result<Vec<_>, _>>()?;
            Some(curves)
        }
        None => None,
    };
    let rules = match config {
        Some(config) => {
            let mut explanation = explain_rules(forest, &instance, &config)?;
            explanation.instance_id = instance_id.clone();
            Some(explanation.to_doc(&forest.features))
        }
        None => None,
    };
    Ok(ExplanationReport {
        instance_id,
        prediction,
        predicted_class: forest.class_for_score(prediction),
        target_class: forest.target_class,
        contribution,
        pd,
        rules,
    })
}
