//! Zero-shot task definitions (prompt-set files).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::zeroshot::{build_prompt_grid, PromptGrid, ZeroShotError};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("task file is not valid: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unknown built-in task {0:?}")]
    Unknown(String),
    #[error("task {0:?} has no phrasings")]
    NoPhrasings(String),
    #[error(transparent)]
    Grid(#[from] ZeroShotError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskType {
    Binary,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub task: String,
    #[serde(rename = "type")]
    pub kind: TaskType,
    pub phrasings: Vec<String>,
    #[serde(default)]
    pub lo: i64,
    #[serde(default)]
    pub hi: i64,
    #[serde(default)]
    pub unit: String,
}

const BUILTIN: &[(&str, &str)] = &[
    ("lvef", include_str!("../assets/tasks/lvef.json")),
    ("pap", include_str!("../assets/tasks/pap.json")),
    ("pacemaker", include_str!("../assets/tasks/pacemaker.json")),
    ("tavr", include_str!("../assets/tasks/tavr.json")),
    ("mitraclip", include_str!("../assets/tasks/mitraclip.json")),
    ("impella", include_str!("../assets/tasks/impella.json")),
    (
        "severe_lv_dilation",
        include_str!("../assets/tasks/severe_lv_dilation.json"),
    ),
    (
        "severe_rv_dilation",
        include_str!("../assets/tasks/severe_rv_dilation.json"),
    ),
    (
        "severe_la_dilation",
        include_str!("../assets/tasks/severe_la_dilation.json"),
    ),
    (
        "severe_ra_dilation",
        include_str!("../assets/tasks/severe_ra_dilation.json"),
    ),
];

impl TaskDef {
    pub fn from_json(document: &str) -> Result<Self, TaskError> {
        let def: TaskDef = serde_json::from_str(document)?;
        if def.phrasings.is_empty() {
            return Err(TaskError::NoPhrasings(def.task));
        }
        if def.kind == TaskType::Regression {
            // Validates placeholders and range up front.
            def.grid()?;
        }
        Ok(def)
    }

    pub fn builtin(name: &str) -> Result<Self, TaskError> {
        let (_, doc) = BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| TaskError::Unknown(name.to_string()))?;
        Self::from_json(doc)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn grid(&self) -> Result<PromptGrid, ZeroShotError> {
        build_prompt_grid(&self.phrasings, self.lo, self.hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{normalize_text, TemplateVocab};

    #[test]
    fn builtins_load() {
        for name in TaskDef::builtin_names() {
            let t = TaskDef::builtin(name).unwrap();
            assert_eq!(t.task, name);
        }
        assert_eq!(TaskDef::builtin("lvef").unwrap().grid().unwrap().prompts.len(), 202);
        assert!(matches!(TaskDef::builtin("nope"), Err(TaskError::Unknown(_))));
    }

    #[test]
    fn builtin_prompts_tokenize_without_unk() {
        let vocab = TemplateVocab::starter();
        for name in TaskDef::builtin_names() {
            let t = TaskDef::builtin(name).unwrap();
            let texts: Vec<String> = match t.kind {
                TaskType::Binary => t.phrasings.clone(),
                TaskType::Regression => t.grid().unwrap().prompts.into_iter().map(|p| p.text).collect(),
            };
            for text in texts {
                let seq = vocab.tokenize_template(&normalize_text(&text), 77).unwrap();
                assert_eq!(seq.unk_count, 0, "{name}: {text}");
            }
        }
    }

    #[test]
    fn regression_task_needs_placeholder() {
        let doc = r#"{"task":"t","type":"regression","phrasings":["no value"],"lo":0,"hi":3,"unit":""}"#;
        assert!(matches!(TaskDef::from_json(doc), Err(TaskError::Grid(_))));
        let doc = r#"{"task":"t","type":"binary","phrasings":[]}"#;
        assert!(matches!(TaskDef::from_json(doc), Err(TaskError::NoPhrasings(_))));
    }
}
