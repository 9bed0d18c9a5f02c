//! Prompt templates, stored as data files under
//! `prompts/<benchmark>/<detector>/<stage>.txt`.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::PromptError;
use crate::model::Benchmark;

const BUILTIN: &[(&str, &str)] = &[
    ("alfworld/direct/main", include_str!("../prompts/alfworld/direct/main.txt")),
    ("alfworld/feedback/main", include_str!("../prompts/alfworld/feedback/main.txt")),
    ("alfworld/inferact/completion", include_str!("../prompts/alfworld/inferact/completion.txt")),
    ("alfworld/inferact/inference", include_str!("../prompts/alfworld/inferact/inference.txt")),
    ("alfworld/inferact/progress", include_str!("../prompts/alfworld/inferact/progress.txt")),
    ("alfworld/multi_step/main", include_str!("../prompts/alfworld/multi_step/main.txt")),
    ("alfworld/token_prob/completion", include_str!("../prompts/alfworld/token_prob/completion.txt")),
    ("alfworld/token_prob/progress", include_str!("../prompts/alfworld/token_prob/progress.txt")),
    ("common/reflexion/main", include_str!("../prompts/common/reflexion/main.txt")),
    ("hotpotqa/direct/main", include_str!("../prompts/hotpotqa/direct/main.txt")),
    ("hotpotqa/feedback/main", include_str!("../prompts/hotpotqa/feedback/main.txt")),
    ("hotpotqa/inferact/completion", include_str!("../prompts/hotpotqa/inferact/completion.txt")),
    ("hotpotqa/inferact/inference", include_str!("../prompts/hotpotqa/inferact/inference.txt")),
    ("hotpotqa/multi_step/main", include_str!("../prompts/hotpotqa/multi_step/main.txt")),
    ("hotpotqa/token_prob/completion", include_str!("../prompts/hotpotqa/token_prob/completion.txt")),
    ("webshop/direct/main", include_str!("../prompts/webshop/direct/main.txt")),
    ("webshop/feedback/main", include_str!("../prompts/webshop/feedback/main.txt")),
    ("webshop/inferact/completion", include_str!("../prompts/webshop/inferact/completion.txt")),
    ("webshop/inferact/inference", include_str!("../prompts/webshop/inferact/inference.txt")),
    ("webshop/multi_step/main", include_str!("../prompts/webshop/multi_step/main.txt")),
    ("webshop/token_prob/completion", include_str!("../prompts/webshop/token_prob/completion.txt")),
];

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").expect("regex"));

/// Template family, i.e. the `<detector>` path segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    Direct,
    MultiStep,
    TokenProb,
    Inferact,
    Feedback,
}

impl Family {
    pub fn dir(self) -> &'static str {
        match self {
            Family::Direct => "direct",
            Family::MultiStep => "multi_step",
            Family::TokenProb => "token_prob",
            Family::Inferact => "inferact",
            Family::Feedback => "feedback",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    pub body: String,
}

impl PromptTemplate {
    pub fn new(name: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            body: body.into(),
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in PLACEHOLDER.captures_iter(&self.body) {
            if !out.iter().any(|p| p == &c[1]) {
                out.push(c[1].to_string());
            }
        }
        out
    }

    /// Single-pass substitution; substituted values are never re-expanded.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 256);
        let mut last = 0;
        for c in PLACEHOLDER.captures_iter(&self.body) {
            let whole = c.get(0).expect("match");
            let name = &c[1];
            let value = values
                .iter()
                .find(|(k, _)| *k == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| PromptError::Unbound {
                    template: self.name.clone(),
                    placeholder: name.to_string(),
                })?;
            out.push_str(&self.body[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        }
        out.push_str(&self.body[last..]);
        Ok(out)
    }
}

/// Keyed by `<benchmark>/<detector>/<stage>`.
#[derive(Clone, Debug)]
pub struct PromptLibrary {
    templates: BTreeMap<String, String>,
}

impl Default for PromptLibrary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn strip_final_newline(s: &str) -> &str {
    s.strip_suffix('\n').unwrap_or(s)
}

impl PromptLibrary {
    pub fn builtin() -> Self {
        Self {
            templates: BUILTIN
                .iter()
                .map(|(k, v)| (k.to_string(), strip_final_newline(v).to_string()))
                .collect(),
        }
    }

    /// Built-ins overlaid with every `*.txt` found under `dir` using the same
    /// layout.
    pub fn with_overrides(dir: &Path) -> Result<Self, PromptError> {
        let mut lib = Self::builtin();
        lib.load_dir(dir, dir)?;
        Ok(lib)
    }

    fn load_dir(&mut self, root: &Path, dir: &Path) -> Result<(), PromptError> {
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.is_dir() {
                self.load_dir(root, &path)?;
            } else if path.extension().is_some_and(|e| e == "txt") {
                let rel = path.strip_prefix(root).expect("under root").with_extension("");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                let body = std::fs::read_to_string(&path)?;
                self.templates.insert(key, strip_final_newline(&body).to_string());
            }
        }
        Ok(())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }

    pub fn get_key(&self, key: &str) -> Result<PromptTemplate, PromptError> {
        self.templates
            .get(key)
            .map(|body| PromptTemplate::new(key, body.clone()))
            .ok_or_else(|| PromptError::Missing(key.to_string()))
    }

    pub fn get(&self, benchmark: Benchmark, family: Family, stage: &str) -> Result<PromptTemplate, PromptError> {
        self.get_key(&format!("{}/{}/{stage}", benchmark.as_str(), family.dir()))
    }

    pub fn reflexion(&self) -> Result<PromptTemplate, PromptError> {
        self.get_key("common/reflexion/main")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_and_rejects_unbound() {
        let t = PromptTemplate::new("t", "Task: {instruction}\nRun: {trajectory} {x}");
        assert_eq!(t.placeholders(), vec!["instruction", "trajectory", "x"]);
        let err = t.render(&[("instruction", "a"), ("trajectory", "b")]).unwrap_err();
        assert!(matches!(err, PromptError::Unbound { ref placeholder, .. } if placeholder == "x"));
        let ok = t.render(&[("instruction", "{trajectory}"), ("trajectory", "b"), ("x", "")]).unwrap();
        assert_eq!(ok, "Task: {trajectory}\nRun: b ");
    }

    #[test]
    fn builtin_layout_is_complete() {
        let lib = PromptLibrary::builtin();
        for b in [Benchmark::Webshop, Benchmark::Hotpotqa, Benchmark::Alfworld] {
            for (fam, stage) in [
                (Family::Direct, "main"),
                (Family::MultiStep, "main"),
                (Family::TokenProb, "completion"),
                (Family::Inferact, "inference"),
                (Family::Inferact, "completion"),
                (Family::Feedback, "main"),
            ] {
                lib.get(b, fam, stage).unwrap_or_else(|e| panic!("{b} {e}"));
            }
        }
        assert!(lib.get(Benchmark::Alfworld, Family::Inferact, "progress").is_ok());
        assert!(lib.get(Benchmark::Webshop, Family::Inferact, "progress").is_err());
        assert!(lib.get(Benchmark::Custom, Family::Direct, "main").is_err());
    }

    #[test]
    fn overrides_replace_builtins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("custom/direct")).unwrap();
        std::fs::write(dir.path().join("custom/direct/main.txt"), "Judge {instruction}\n").unwrap();
        let lib = PromptLibrary::with_overrides(dir.path()).unwrap();
        assert_eq!(lib.get(Benchmark::Custom, Family::Direct, "main").unwrap().body, "Judge {instruction}");
    }
}
